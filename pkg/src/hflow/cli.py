"""Command-line entry points: gen | train | eval | infer | explore | serve.

Subcommands read a strict JSON config where applicable: unknown keys are
hard errors so misspelled options never fall back to silent defaults.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("hflow")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _load_json(path, allowed, required=(), label="config"):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{label} not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {sorted(unknown)}")
    missing = set(required) - set(cfg)
    if missing:
        raise ConfigError(f"missing keys in {path}: {sorted(missing)}")
    return cfg


def _load_manifest(data_dir):
    from .data import EnsembleManifest

    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no manifest.json under {data_dir}")
    return EnsembleManifest.load(path)


def _load_trainer(checkpoint, data_dir):
    from .trainer import Trainer

    if not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    return Trainer.load(checkpoint, _load_manifest(data_dir))


GEN_KEYS = ("dims", "timesteps", "n_blobs", "seed", "omegas", "drifts", "growths")
TRAIN_KEYS = ("lr_start", "lr_end", "epochs", "batch", "weight_decay", "patience", "seed",
              "ablation", "pool_size", "window", "n_val_samples", "lambda_flow", "gamma",
              "model")
MODEL_KEYS = ("n_blocks", "block_channels", "kernel", "dtype")


def cmd_gen(args):
    from .data import SyntheticSpec, generate_synthetic

    raw = _load_json(args.spec, GEN_KEYS, label="synthetic spec")
    try:
        spec = SyntheticSpec.from_dict({**SyntheticSpec().to_dict(), **raw})
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    manifest = generate_synthetic(spec, args.out)
    log.info("wrote %d members to %s", len(manifest.members), args.out)
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_train(args):
    from .model import ModelConfig
    from .trainer import TrainConfig, train

    raw = _load_json(args.config, TRAIN_KEYS, label="train config")
    model_raw = raw.pop("model", {})
    unknown = set(model_raw) - set(MODEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys in model config: {sorted(unknown)}")
    try:
        model = ModelConfig.from_dict({**ModelConfig().to_dict(), **model_raw})
        cfg = TrainConfig(model=model, **raw)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    manifest = _load_manifest(args.data)
    result = train(cfg, manifest, args.out)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_eval(args):
    from .data import EnsembleData
    from .metrics import evaluate_run, format_report, write_report

    trainer = _load_trainer(args.checkpoint, args.data)
    rates = tuple(int(r) for r in args.rates.split(","))
    rows = evaluate_run(trainer, EnsembleData(trainer.manifest), rates=rates, split=args.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(rows, out)
    print(format_report(rows))
    print(f"report: {out}")
    return 0


def cmd_infer(args):
    from .data import EnsembleData, save_volume

    trainer = _load_trainer(args.checkpoint, args.data)
    data = EnsembleData(trainer.manifest)
    manifest = trainer.manifest
    member = manifest.member(args.member)  # KeyError -> runtime failure
    if args.params is not None:
        raw = np.array([float(v) for v in args.params.split(",")])
    else:
        raw = manifest.params_vector(member)
    if not (args.s < args.t < args.u):
        raise ConfigError("need s < t < u")
    t_norm = (args.t - args.s) / (args.u - args.s)
    d_hat, f_hat = trainer.infer_arrays(data.density(args.member, args.s),
                                        data.density(args.member, args.u),
                                        t_norm, manifest.normalize_params(raw))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(manifest.denormalize_density(d_hat), out / "density_interp.raw")
    save_volume(np.moveaxis(f_hat * manifest.flow_scale, 0, -1), out / "flow_interp.raw")
    meta = {"member_id": args.member, "s": args.s, "t": args.t, "u": args.u,
            "params": raw.tolist(), "dims": list(manifest.dims),
            "files": ["density_interp.raw", "flow_interp.raw"],
            "flow_units": "voxels"}
    (out / "infer.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    print(f"wrote interpolation to {out}")
    return 0


def cmd_explore(args):
    from .data import EnsembleData, save_volume
    from .explore import (data_similarity, param_sweep_synthesis, parameter_distance,
                          triplet_correlation, weight_similarity)

    trainer = _load_trainer(args.checkpoint, args.data)
    manifest = trainer.manifest
    data = EnsembleData(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = [m["id"] for m in manifest.members]

    w_sim = weight_similarity(trainer, ids)
    d_sim = data_similarity(data, ids)
    w_sim.to_csv(out / "weight_similarity.csv")
    d_sim.to_csv(out / "data_similarity.csv")
    parameter_distance(manifest, ids).to_csv(out / "parameter_distance.csv")
    score = triplet_correlation(w_sim, d_sim)
    (out / "triplet.json").write_text(json.dumps({"triplet_correlation": score}, indent=1))
    print(f"triplet correlation: {score:.4f}")

    # synthesis sweep over the first parameter with fixed inputs
    mid = (manifest.splits["test"] or ids)[0]
    steps = manifest.member(mid)["timesteps"]
    s, u = 0, min(4, steps - 1)
    base = manifest.params_vector(mid)
    name = manifest.param_names[0]
    lo, hi = manifest.param_stats[name]
    sweep_dir = out / "sweep"
    sweep_dir.mkdir(exist_ok=True)
    values = np.linspace(lo, hi, args.sweep_count)
    params_list = []
    for v in values:
        p = base.copy()
        p[0] = v
        params_list.append(p)
    results = param_sweep_synthesis(trainer, data.density(mid, s), data.density(mid, u),
                                    0.5, params_list)
    index = {"member_id": mid, "s": s, "u": u, "t_norm": 0.5, "parameter": name,
             "dims": list(manifest.dims), "entries": []}
    for i, res in enumerate(results):
        fname = f"sweep_{i:02d}_density.raw"
        save_volume(manifest.denormalize_density(res["output"].d_hat.data[0, 0]),
                    sweep_dir / fname)
        index["entries"].append({"value": float(values[i]), "file": fname,
                                 "in_range": res["in_range"]})
    (sweep_dir / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    print(f"explore outputs in {out}")
    return 0


def cmd_serve(args):
    from .server import run_server

    trainer = _load_trainer(args.checkpoint, args.data)
    run_server(trainer, host=args.host, port=args.port, ui_dir=args.ui)
    return 0


def build_parser():
    p = _Parser(prog="hflow", description="Hypernetwork-conditioned volumetric flow "
                                          "estimation and temporal interpolation")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic ensemble")
    g.add_argument("--spec", required=True, help="JSON synthetic spec")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a model on an ensemble")
    t.add_argument("--config", required=True, help="JSON train config")
    t.add_argument("--data", required=True, help="directory with manifest.json")
    t.add_argument("--out", required=True, help="run output directory")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="temporal super-resolution report")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="report CSV path")
    e.add_argument("--rates", default="3,5,8")
    e.add_argument("--split", default="test")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="single interpolation to volume files")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--member", required=True)
    i.add_argument("--s", type=int, required=True)
    i.add_argument("--t", type=float, required=True)
    i.add_argument("--u", type=int, required=True)
    i.add_argument("--params", help="comma-separated raw parameter overrides")
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    x = sub.add_parser("explore", help="similarity matrices, triplet score, sweeps")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--sweep-count", type=int, default=5)
    x.set_defaults(fn=cmd_explore)

    s = sub.add_parser("serve", help="local HTTP inference service")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--port", type=int, default=7788)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--ui", help="static UI directory to serve at /")
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("HFL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:  # runtime failure
        log.debug("traceback", exc_info=True)
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
