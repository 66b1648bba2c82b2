"""HTTP service routes, error codes, and response determinism."""
import base64
import json
import threading
import urllib.error
import urllib.request
from http.server import ThreadingHTTPServer

import numpy as np
import pytest

from hflow.data import SyntheticSpec, generate_synthetic
from hflow.model import ModelConfig
from hflow.server import ExplorerService, RequestError, make_handler
from hflow.trainer import TrainConfig, Trainer


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    out = tmp_path_factory.mktemp("srv")
    spec = SyntheticSpec(dims=(8, 8, 8), timesteps=6, seed=13,
                         omegas=(-0.06, 0.06), drifts=(0.0, 0.2), growths=(0.0,))
    man = generate_synthetic(spec, out)
    cfg = TrainConfig(epochs=1, pool_size=4, batch=2, seed=0, n_val_samples=2,
                      model=ModelConfig(n_blocks=2, block_channels=(4, 3), dtype="f32"))
    return ExplorerService(Trainer(cfg, man))


@pytest.fixture(scope="module")
def live_server(service):
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), make_handler(service))
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}"
    httpd.shutdown()


class TestMeta:
    def test_matches_manifest(self, service):
        meta = service.meta()
        assert meta["dims"] == [8, 8, 8]
        assert meta["param_names"] == ["omega", "drift", "growth"]
        assert meta["param_ranges"]["omega"] == [-0.06, 0.06]
        assert len(meta["members"]) == 4


class TestInferService:
    def body(self, **kw):
        base = {"member_id": "m000", "s": 0, "u": 3, "t": 1.5}
        base.update(kw)
        return base

    def test_returns_finite_slices(self, service):
        resp = service.infer(self.body())
        cut = np.frombuffer(base64.b64decode(resp["density_slice"]["data"]), dtype="<f4")
        assert cut.size == resp["density_slice"]["width"] * resp["density_slice"]["height"]
        assert np.all(np.isfinite(cut))
        assert len(resp["flow_slice"]["components"]) == 3

    def test_integer_t_reports_psnr(self, service):
        resp = service.infer(self.body(t=2))
        assert "psnr_vs_gt" in resp
        assert resp["psnr_vs_gt"] > 0

    def test_full_payload_opt_in(self, service):
        resp = service.infer(self.body(), full=True)
        vol = np.frombuffer(base64.b64decode(resp["density_volume"]), dtype="<f4")
        assert vol.size == 8 * 8 * 8

    def test_unknown_member_404(self, service):
        with pytest.raises(RequestError) as e:
            service.infer(self.body(member_id="nope"))
        assert e.value.status == 404

    def test_param_count_mismatch_422(self, service):
        with pytest.raises(RequestError) as e:
            service.infer(self.body(params=[0.1]))
        assert e.value.status == 422

    def test_bad_times_400(self, service):
        for kw in ({"s": 3, "u": 1}, {"t": 0}, {"t": 3}, {"u": 99}):
            with pytest.raises(RequestError) as e:
                service.infer(self.body(**kw))
            assert e.value.status == 400

    def test_custom_params_accepted(self, service):
        resp = service.infer(self.body(params=[0.0, 0.1, 0.0]))
        assert resp["params"] == [0.0, 0.1, 0.0]


class TestSimilarityRoute:
    def test_shapes_and_score(self, service):
        sim = service.similarity()
        n = len(sim["member_ids"])
        assert len(sim["weight"]) == n
        assert len(sim["data"]) == n
        assert 0.0 <= sim["triplet_correlation"] <= 1.0


class TestLiveHTTP:
    def get(self, url):
        with urllib.request.urlopen(url) as r:
            return r.status, r.read()

    def post(self, url, payload):
        req = urllib.request.Request(url, data=json.dumps(payload).encode(),
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req) as r:
            return r.status, r.read()

    def test_meta_route(self, live_server):
        status, body = self.get(live_server + "/api/meta")
        assert status == 200
        assert json.loads(body)["dims"] == [8, 8, 8]

    def test_infer_roundtrip_byte_identical(self, live_server):
        payload = {"member_id": "m000", "s": 0, "u": 3, "t": 1.5}
        _, a = self.post(live_server + "/api/infer", payload)
        _, b = self.post(live_server + "/api/infer", payload)
        assert a == b

    def test_malformed_body_400(self, live_server):
        req = urllib.request.Request(live_server + "/api/infer", data=b"{nope",
                                     headers={"Content-Type": "application/json"})
        with pytest.raises(urllib.error.HTTPError) as e:
            urllib.request.urlopen(req)
        assert e.value.code == 400

    def test_unknown_route_404(self, live_server):
        with pytest.raises(urllib.error.HTTPError) as e:
            urllib.request.urlopen(live_server + "/api/zzz")
        assert e.value.code == 404

    def test_cors_headers_present(self, live_server):
        with urllib.request.urlopen(live_server + "/api/meta") as r:
            assert r.headers["Access-Control-Allow-Origin"] == "*"

    def test_similarity_route(self, live_server):
        status, body = self.get(live_server + "/api/similarity")
        assert status == 200
        sim = json.loads(body)
        assert "weight" in sim and "data" in sim
