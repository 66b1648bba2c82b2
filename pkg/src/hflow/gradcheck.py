"""Finite-difference gradient checking.

The numeric side only ever calls the forward function on perturbed copies,
so it stays independent of the tape machinery it validates.
"""
import numpy as np


def finite_diff_grad(f, x, h=1e-5, coords=None):
    """Central-difference gradient of scalar f at array x.

    coords: optional list of flat indices to probe (all entries when None).
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xflat = x.reshape(-1)
    idx_list = range(x.size) if coords is None else coords
    for i in idx_list:
        orig = xflat[i]
        xflat[i] = orig + h
        fp = float(f(x))
        xflat[i] = orig - h
        fm = float(f(x))
        xflat[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic, numeric, coords=None):
    """Max deviation normalized by the gradient's overall scale.

    Entry-wise ratios blow up on true-zero entries from finite-difference
    noise alone, so the denominator is the larger of the two infinity
    norms (floored at 1e-8).
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if coords is not None:
        a = a[list(coords)]
        n = n[list(coords)]
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / denom)
