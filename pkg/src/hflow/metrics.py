"""Volume-domain quality metrics and the linear-interpolation baseline."""
import csv
import math

import numpy as np


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for unit data range.

    Inputs are normalized volumes; identical volumes give +inf.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def epe(f, f_gt):
    """Mean Euclidean distance between flow vectors.

    Both fields must be expressed in the same units; component axis first.
    """
    f = np.asarray(f)
    f_gt = np.asarray(f_gt)
    if f.shape != f_gt.shape:
        raise ValueError(f"dim mismatch: {f.shape} vs {f_gt.shape}")
    if f.shape[0] != 3:
        raise ValueError("expected component-first flow fields")
    return float(np.mean(np.sqrt(((f - f_gt) ** 2).sum(axis=0))))


def linear_baseline(d_s, d_u, t_norm):
    """Convex blend of the endpoint volumes at relative time t_norm."""
    d_s = np.asarray(d_s)
    d_u = np.asarray(d_u)
    if d_s.shape != d_u.shape:
        raise ValueError("dim mismatch in linear baseline")
    return (1.0 - t_norm) * d_s + t_norm * d_u


def evaluate_run(model, data, rates=(3, 5, 8), split="test", use_linear=False):
    """Temporal super-resolution sweep: for each rate r, keep one of every
    r timesteps of the split's members, interpolate the held-out frames,
    and report mean/std PSNR and EPE (normalized units).

    model must provide infer_arrays(d_s, d_u, t_norm, params) ->
    (d_hat, f_hat); with use_linear=True the linear blend replaces the
    model (no flow, EPE reported against zero flow).
    """
    manifest = data.manifest
    member_ids = manifest.splits[split]
    if not member_ids:
        raise ValueError(f"empty split {split!r}")
    rows = []
    for rate in rates:
        if rate < 2:
            raise ValueError("rate must be >= 2: nothing to interpolate")
        psnrs, epes = [], []
        for mid in member_ids:
            steps = manifest.member(mid)["timesteps"]
            if rate >= steps:
                raise ValueError(f"rate {rate} exceeds member length {steps}")
            params = data.norm_params(mid)
            for s in range(0, steps - rate, rate):
                u = s + rate
                d_s = data.density(mid, s)
                d_u = data.density(mid, u)
                for t in range(s + 1, u):
                    t_norm = (t - s) / rate
                    if use_linear:
                        d_hat = linear_baseline(d_s, d_u, t_norm)
                        f_hat = np.zeros((3,) + d_s.shape)
                    else:
                        d_hat, f_hat = model.infer_arrays(d_s, d_u, t_norm, params)
                    psnrs.append(psnr(d_hat, data.density(mid, t)))
                    epes.append(epe(f_hat, data.supervision_flow(mid, t, u)))
        finite = [p for p in psnrs if math.isfinite(p)]
        rows.append({"rate": rate,
                     "psnr_mean": float(np.mean(finite if finite else psnrs)),
                     "psnr_std": float(np.std(finite if finite else psnrs)),
                     "epe_mean": float(np.mean(epes)), "epe_std": float(np.std(epes)),
                     "n_frames": len(psnrs)})
    return rows


def write_report(rows, path):
    """CSV report; one row per interpolation rate."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rate", "psnr_mean", "psnr_std", "epe_mean", "epe_std", "n_frames"])
        for r in rows:
            wr.writerow([r["rate"], f"{r['psnr_mean']:.6f}", f"{r['psnr_std']:.6f}",
                         f"{r['epe_mean']:.6f}", f"{r['epe_std']:.6f}", r["n_frames"]])


def format_report(rows):
    lines = [f"{'rate':>5} {'psnr_mean':>10} {'psnr_std':>9} {'epe_mean':>9} {'epe_std':>8} {'n':>4}"]
    for r in rows:
        lines.append(f"{r['rate']:>5} {r['psnr_mean']:>10.3f} {r['psnr_std']:>9.3f} "
                     f"{r['epe_mean']:>9.4f} {r['epe_std']:>8.4f} {r['n_frames']:>4}")
    return "\n".join(lines)
