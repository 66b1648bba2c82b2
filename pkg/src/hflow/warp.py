"""Differentiable backward warping of volumes by flow fields.

Every target voxel samples the source volume at its own position plus a
displacement, with trilinear interpolation between the 8 surrounding
voxels. Out-of-range positions clamp to the boundary, so warped values stay
inside [min(src), max(src)].
"""
import numpy as np

from .tensor import Tensor, _record


def _sample_forward(vol, cz, cy, cx):
    """Trilinear gather. vol is [N,C,D,H,W]; cz/cy/cx are [N,*spatial]."""
    n, c, d, h, w = vol.shape
    cz = np.clip(cz, 0.0, d - 1.0)
    cy = np.clip(cy, 0.0, h - 1.0)
    cx = np.clip(cx, 0.0, w - 1.0)
    z0 = np.minimum(np.floor(cz), d - 2 if d > 1 else 0).astype(np.int64)
    y0 = np.minimum(np.floor(cy), h - 2 if h > 1 else 0).astype(np.int64)
    x0 = np.minimum(np.floor(cx), w - 2 if w > 1 else 0).astype(np.int64)
    fz, fy, fx = cz - z0, cy - y0, cx - x0
    z1 = np.minimum(z0 + 1, d - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    vflat = vol.reshape(n, c, -1)
    nidx = np.arange(n).reshape((n,) + (1,) * (cz.ndim - 1))

    def gather(zi, yi, xi):
        return vflat[nidx, :, (zi * h + yi) * w + xi]  # [N,*spatial,C]

    c000 = gather(z0, y0, x0)
    c001 = gather(z0, y0, x1)
    c010 = gather(z0, y1, x0)
    c011 = gather(z0, y1, x1)
    c100 = gather(z1, y0, x0)
    c101 = gather(z1, y0, x1)
    c110 = gather(z1, y1, x0)
    c111 = gather(z1, y1, x1)

    fzb, fyb, fxb = (a[..., None] for a in (fz, fy, fx))
    # two-weight form stays bit-exact at f=0 and f=1 (lattice coordinates)
    c00 = c000 * (1.0 - fxb) + c001 * fxb
    c01 = c010 * (1.0 - fxb) + c011 * fxb
    c10 = c100 * (1.0 - fxb) + c101 * fxb
    c11 = c110 * (1.0 - fxb) + c111 * fxb
    c0 = c00 * (1.0 - fyb) + c01 * fyb
    c1 = c10 * (1.0 - fyb) + c11 * fyb
    out = c0 * (1.0 - fzb) + c1 * fzb  # [N,*spatial,C]
    cache = (vol.shape, (z0, y0, x0, z1, y1, x1), (fz, fy, fx),
             (c000, c001, c010, c011, c100, c101, c110, c111),
             (cz, cy, cx))
    return np.moveaxis(out, -1, 1), cache


def _sample_backward(cache, g, need_vol, need_coords):
    """Adjoints of the trilinear gather; g is [N,C,*spatial]."""
    (n, c, d, h, w), (z0, y0, x0, z1, y1, x1), (fz, fy, fx), corners, clamped = cache
    g = np.moveaxis(g, 1, -1)  # [N,*spatial,C]
    fzb, fyb, fxb = (a[..., None] for a in (fz, fy, fx))
    wz = (1.0 - fzb, fzb)
    wy = (1.0 - fyb, fyb)
    wx = (1.0 - fxb, fxb)
    zi = (z0, z1)
    yi = (y0, y1)
    xi = (x0, x1)

    gvol = None
    if need_vol:
        gflat = np.zeros(n * d * h * w * c, dtype=g.dtype)
        nbase = (np.arange(n) * (d * h * w)).reshape((n,) + (1,) * (fz.ndim - 1))
        cidx = np.arange(c)
        for a in range(2):
            for b in range(2):
                for e in range(2):
                    wgt = g * (wz[a] * wy[b] * wx[e])
                    idx = ((nbase + (zi[a] * h + yi[b]) * w + xi[e])[..., None] * c + cidx)
                    gflat += np.bincount(idx.ravel(), weights=wgt.ravel(), minlength=gflat.size)
        gvol = gflat.reshape(n, d, h, w, c)
        gvol = np.moveaxis(gvol, -1, 1).astype(g.dtype)

    gcz = gcy = gcx = None
    if need_coords:
        c000, c001, c010, c011, c100, c101, c110, c111 = corners
        cz, cy, cx = clamped
        # derivative of the blend w.r.t. each fractional offset
        dfx = ((c001 - c000) * wy[0] + (c011 - c010) * wy[1]) * wz[0] + \
              ((c101 - c100) * wy[0] + (c111 - c110) * wy[1]) * wz[1]
        dfy = ((c010 - c000) * wx[0] + (c011 - c001) * wx[1]) * wz[0] + \
              ((c110 - c100) * wx[0] + (c111 - c101) * wx[1]) * wz[1]
        dfz = ((c100 - c000) * wx[0] + (c101 - c001) * wx[1]) * wy[0] + \
              ((c110 - c010) * wx[0] + (c111 - c011) * wx[1]) * wy[1]
        # clamped coordinates have zero derivative
        live_z = ((cz > 0.0) & (cz < d - 1.0)) if d > 1 else np.zeros_like(cz, dtype=bool)
        live_y = ((cy > 0.0) & (cy < h - 1.0)) if h > 1 else np.zeros_like(cy, dtype=bool)
        live_x = ((cx > 0.0) & (cx < w - 1.0)) if w > 1 else np.zeros_like(cx, dtype=bool)
        gcz = np.where(live_z, (g * dfz).sum(axis=-1), 0.0)
        gcy = np.where(live_y, (g * dfy).sum(axis=-1), 0.0)
        gcx = np.where(live_x, (g * dfx).sum(axis=-1), 0.0)
    return gvol, gcz, gcy, gcx


def trilinear_sample(vol, coords):
    """Sample vol[N,C,D,H,W] at continuous positions coords[N,3,*spatial].

    Coordinate channels follow array-axis order (z, y, x), in voxel units.
    Differentiable w.r.t. both the volume and the positions.
    """
    if coords.shape[1] != 3:
        raise ValueError("coords must carry 3 position channels")
    if not np.all(np.isfinite(coords.data)):
        raise ValueError("non-finite sampling coordinates")
    out, cache = _sample_forward(vol.data, coords.data[:, 0], coords.data[:, 1], coords.data[:, 2])
    out_t = Tensor(out, dtype=vol.dtype)

    def bwd(g):
        gvol, gcz, gcy, gcx = _sample_backward(cache, g, vol._needs_grad, coords._needs_grad)
        if gvol is not None:
            vol.accumulate_grad(gvol)
        if gcz is not None:
            coords.accumulate_grad(np.stack([gcz, gcy, gcx], axis=1))

    return _record(out_t, (vol, coords), bwd)


def backward_warp(src, flow, scale=1.0):
    """Warp src[N,C,D,H,W] by flow[N,3,D,H,W] scaled to voxel units.

    Flow channels are (fx, fy, fz) displacements; target voxel v reads
    src at v + scale * flow(v). Pass scale = flow_scale to de-normalize
    stored flows, or a negative value to reverse direction.
    """
    if src.shape[0] != flow.shape[0] or src.shape[2:] != flow.shape[2:]:
        raise ValueError(f"dim mismatch: src {src.shape} vs flow {flow.shape}")
    if flow.shape[1] != 3:
        raise ValueError("flow must carry 3 components")
    if not np.all(np.isfinite(flow.data)):
        raise ValueError("non-finite flow values")
    n, _, d, h, w = src.shape
    gz, gy, gx = np.meshgrid(np.arange(d, dtype=src.data.dtype),
                             np.arange(h, dtype=src.data.dtype),
                             np.arange(w, dtype=src.data.dtype), indexing="ij")
    cz = gz[None] + scale * flow.data[:, 2]
    cy = gy[None] + scale * flow.data[:, 1]
    cx = gx[None] + scale * flow.data[:, 0]
    out, cache = _sample_forward(src.data, cz, cy, cx)
    out_t = Tensor(out, dtype=src.dtype)

    def bwd(g):
        gvol, gcz, gcy, gcx = _sample_backward(cache, g, src._needs_grad, flow._needs_grad)
        if gvol is not None:
            src.accumulate_grad(gvol)
        if gcz is not None:
            flow.accumulate_grad(np.stack([gcx, gcy, gcz], axis=1) * scale)

    return _record(out_t, (src, flow), bwd)
