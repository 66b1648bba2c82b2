#!/usr/bin/env python3
"""Train the parameter-conditioned interpolator on a miniature ensemble
and compare it against the linear baseline at several interpolation rates.

Takes a couple of minutes on one CPU core; pass --quick for a shorter run.
"""
import argparse
import tempfile

from hflow.data import EnsembleData, SyntheticSpec, generate_synthetic
from hflow.metrics import evaluate_run, format_report
from hflow.model import ModelConfig
from hflow.trainer import TrainConfig, Trainer, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="fewer epochs")
    args = ap.parse_args()

    out = tempfile.mkdtemp(prefix="hflow_demo_")
    spec = SyntheticSpec(dims=(16, 16, 16), timesteps=12, seed=5)
    man = generate_synthetic(spec, out + "/data")
    cfg = TrainConfig(lr_start=5e-4, epochs=2 if args.quick else 8, pool_size=48, batch=4,
                      seed=0, patience=1000, n_val_samples=8,
                      model=ModelConfig(dtype="f32"))
    print(f"training {cfg.epochs} epochs x {cfg.pool_size // cfg.batch} steps at 16^3 ...")
    result = train(cfg, man, out + "/run")
    for row in result.epoch_rows:
        print(f"  epoch {row['epoch']:2d} train {row['train_loss']:.5f} "
              f"val {row['val_loss']:.5f} psnr {row['val_psnr']:.2f} epe {row['val_epe']:.4f}")

    tr = Trainer.load(result.checkpoint_path, man)
    data = EnsembleData(man)
    print("\nmodel on the held-out split:")
    print(format_report(evaluate_run(tr, data, rates=(3, 5), split="test")))
    print("\nlinear baseline:")
    print(format_report(evaluate_run(None, data, rates=(3, 5), split="test",
                                     use_linear=True)))


if __name__ == "__main__":
    main()
