"""Local HTTP inference service backing the explorer UI.

All state is the immutable loaded checkpoint plus lazily computed (and then
cached) similarity matrices; request handling never mutates it, so
concurrent requests match serial execution. Responses are JSON with CORS
headers for localhost development; volume slices travel as base64-encoded
little-endian float32.
"""
import base64
import json
import logging
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .data import EnsembleData
from .metrics import psnr

log = logging.getLogger("hflow.server")


class RequestError(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status


def _b64(arr):
    return base64.b64encode(np.ascontiguousarray(arr).astype("<f4").tobytes()).decode()


def _slice_volume(vol, axis, index):
    """vol is [Z,Y,X]; returns (2-D slice, width, height) for the axis."""
    z, y, x = vol.shape
    extents = {"x": x, "y": y, "z": z}
    if axis not in extents:
        raise RequestError(400, f"axis must be x, y, or z, got {axis!r}")
    index = int(np.clip(index, 0, extents[axis] - 1))
    if axis == "z":
        cut = vol[index, :, :]
    elif axis == "y":
        cut = vol[:, index, :]
    else:
        cut = vol[:, :, index]
    return cut, cut.shape[1], cut.shape[0], index


class ExplorerService:
    """Holds the trainer and answers the API routes."""

    def __init__(self, trainer):
        self.trainer = trainer
        self.manifest = trainer.manifest
        self.data = EnsembleData(self.manifest)
        self._similarity = None
        self._lock = threading.Lock()

    def meta(self):
        m = self.manifest
        return {"dims": list(m.dims),
                "param_names": m.param_names,
                "param_ranges": {k: list(v) for k, v in m.param_stats.items()},
                "members": [{"id": mm["id"], "params": mm["params"],
                             "timesteps": mm["timesteps"]} for mm in m.members],
                "splits": m.splits,
                "flow_scale": m.flow_scale}

    def similarity(self):
        with self._lock:
            if self._similarity is None:
                from .explore import data_similarity, triplet_correlation, weight_similarity

                ids = [mm["id"] for mm in self.manifest.members]
                w = weight_similarity(self.trainer, ids)
                d = data_similarity(self.data, ids)
                self._similarity = {"member_ids": ids,
                                    "weight": w.values.tolist(),
                                    "data": d.values.tolist(),
                                    "triplet_correlation": triplet_correlation(w, d)}
            return self._similarity

    def infer(self, body, full=False):
        if not isinstance(body, dict):
            raise RequestError(400, "body must be a JSON object")
        for key in ("member_id", "s", "u", "t"):
            if key not in body:
                raise RequestError(400, f"missing field {key!r}")
        try:
            member = self.manifest.member(body["member_id"])
        except KeyError:
            raise RequestError(404, f"unknown member {body['member_id']!r}")
        try:
            s = int(body["s"])
            u = int(body["u"])
            t = float(body["t"])
        except (TypeError, ValueError):
            raise RequestError(400, "s, u must be integers and t a number")
        steps = member["timesteps"]
        if not (0 <= s < u < steps):
            raise RequestError(400, f"need 0 <= s < u < {steps}")
        if not (s < t < u):
            raise RequestError(400, "t must lie strictly between s and u")
        params = body.get("params")
        if params is None:
            raw = self.manifest.params_vector(member)
        else:
            if len(params) != len(self.manifest.param_names):
                raise RequestError(422, f"expected {len(self.manifest.param_names)} "
                                        f"parameters, got {len(params)}")
            try:
                raw = np.array([float(v) for v in params])
            except (TypeError, ValueError):
                raise RequestError(400, "params must be numbers")

        t_norm = (t - s) / (u - s)
        d_hat, f_hat = self.trainer.infer_arrays(self.data.density(body["member_id"], s),
                                                 self.data.density(body["member_id"], u),
                                                 t_norm, self.manifest.normalize_params(raw))
        axis = body.get("axis", "z")
        mid_default = {"x": self.manifest.dims[0], "y": self.manifest.dims[1],
                       "z": self.manifest.dims[2]}[axis if axis in "xyz" else "z"] // 2
        index = body.get("index", mid_default)

        cut, w_, h_, index = _slice_volume(d_hat, axis, index)
        resp = {"member_id": body["member_id"], "s": s, "u": u, "t": t,
                "params": raw.tolist(),
                "density_slice": {"axis": axis, "index": index, "width": w_, "height": h_,
                                  "data": _b64(cut)}}
        fcuts = [_slice_volume(f_hat[c], axis, index)[0] for c in range(3)]
        resp["flow_slice"] = {"axis": axis, "index": index, "width": w_, "height": h_,
                              "components": [_b64(c) for c in fcuts]}
        if float(t).is_integer():
            score = psnr(d_hat, self.data.density(body["member_id"], int(t)))
            resp["psnr_vs_gt"] = None if math.isinf(score) else score
        if full:
            resp["density_volume"] = _b64(d_hat)
            resp["flow_volume"] = [_b64(f_hat[c]) for c in range(3)]
        return resp


def make_handler(service, ui_dir=None):
    ui_root = Path(ui_dir).resolve() if ui_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

        def _send(self, status, payload, content_type="application/json"):
            body = payload if isinstance(payload, bytes) else \
                json.dumps(payload, sort_keys=True).encode()
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def _error(self, status, message):
            self._send(status, {"error": message})

        def do_OPTIONS(self):
            self._send(204, b"")

        def do_GET(self):
            url = urlparse(self.path)
            try:
                if url.path == "/api/meta":
                    self._send(200, service.meta())
                elif url.path == "/api/similarity":
                    self._send(200, service.similarity())
                elif ui_root is not None:
                    self._serve_static(url.path)
                else:
                    self._error(404, f"no route {url.path}")
            except RequestError as e:
                self._error(e.status, str(e))
            except Exception as e:
                log.exception("request failed")
                self._error(500, str(e))

        def do_POST(self):
            url = urlparse(self.path)
            if url.path != "/api/infer":
                self._error(404, f"no route {url.path}")
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length).decode() or "null")
                except json.JSONDecodeError:
                    raise RequestError(400, "malformed JSON body")
                full = parse_qs(url.query).get("full", ["0"])[0] == "1"
                self._send(200, service.infer(body, full=full))
            except RequestError as e:
                self._error(e.status, str(e))
            except Exception as e:
                log.exception("inference failed")
                self._error(500, str(e))

        def _serve_static(self, path):
            rel = path.lstrip("/") or "index.html"
            target = (ui_root / rel).resolve()
            if not str(target).startswith(str(ui_root)) or not target.is_file():
                self._error(404, f"not found: {path}")
                return
            ctype = {".html": "text/html", ".js": "text/javascript",
                     ".css": "text/css", ".json": "application/json",
                     ".map": "application/json"}.get(target.suffix, "application/octet-stream")
            self._send(200, target.read_bytes(), content_type=ctype)

    return Handler


def run_server(trainer, host="127.0.0.1", port=7788, ui_dir=None):
    service = ExplorerService(trainer)
    httpd = ThreadingHTTPServer((host, port), make_handler(service, ui_dir))
    log.info("serving on http://%s:%d", host, port)
    print(f"serving on http://{host}:{port}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
