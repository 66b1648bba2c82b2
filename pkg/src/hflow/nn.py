"""Differentiable layer primitives: 3-D/1-D convolution, transposed
convolution, linear, PReLU, dropout, and 2x pyramid resampling.

Convolutions route through one big tensordot over a sliding-window view of
the padded input, so the heavy lifting is a single BLAS GEMM per call; the
input-gradient scatters per kernel offset with vectorized slice adds.
"""
import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _record


def _conv_out_extent(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _offsets3(k):
    return list(itertools.product(range(k), range(k), range(k)))


def _patch_slice(kd, kh, kw, stride, do, ho, wo):
    return (slice(None), slice(None),
            slice(kd, kd + stride * do, stride),
            slice(kh, kh + stride * ho, stride),
            slice(kw, kw + stride * wo, stride))


def _im2col3d(xp, k, stride, out_sp):
    """Gather kernel windows of xp[N,C,*] into a [C*k^3, N*L] matrix.

    Row order is (channel, kd, kh, kw) to line up with a reshaped
    [Co, Ci*k^3] weight matrix; every copy is a strided block move with
    long contiguous runs.
    """
    n, c = xp.shape[:2]
    do, ho, wo = out_sp
    ell = n * do * ho * wo
    cols = np.empty((c, k ** 3, ell), dtype=xp.dtype)
    for j, (kd, kh, kw) in enumerate(_offsets3(k)):
        patch = xp[_patch_slice(kd, kh, kw, stride, do, ho, wo)]
        cols[:, j] = np.moveaxis(patch, 1, 0).reshape(c, ell)
    return cols.reshape(c * k ** 3, ell)


def _col2im3d_add(gxp, gcols, k, stride, out_sp):
    """Scatter-add the adjoint of _im2col3d back onto the padded grid."""
    n, c = gxp.shape[:2]
    do, ho, wo = out_sp
    view = gcols.reshape(c, k ** 3, n, do, ho, wo)
    for j, (kd, kh, kw) in enumerate(_offsets3(k)):
        gxp[_patch_slice(kd, kh, kw, stride, do, ho, wo)] += np.moveaxis(view[:, j], 0, 1)


def conv3d(x, w, b, stride=1, padding=None):
    """Cross-correlation of x[N,Ci,D,H,W] with w[Co,Ci,k,k,k] plus bias."""
    n, ci, d, h, wd = x.shape
    co, ci_w, k = w.shape[0], w.shape[1], w.shape[2]
    if ci != ci_w:
        raise ValueError(f"channel mismatch: input {ci} vs weight {ci_w}")
    if k % 2 == 0:
        raise ValueError("conv3d expects an odd kernel size")
    if padding is None:
        padding = (k - 1) // 2
    do, ho, wo = (_conv_out_extent(e, k, stride, padding) for e in (d, h, wd))
    if min(do, ho, wo) < 1:
        raise ValueError("non-positive output extent")

    xp = np.pad(x.data, ((0, 0), (0, 0)) + ((padding, padding),) * 3) if padding else x.data
    cols = _im2col3d(xp, k, stride, (do, ho, wo))
    w2 = w.data.reshape(co, ci * k ** 3)
    out2 = w2 @ cols  # [Co, N*L]
    out2 += b.data[:, None]
    out = np.ascontiguousarray(np.moveaxis(out2.reshape(co, n, do, ho, wo), 0, 1))
    out_t = Tensor(out, dtype=x.dtype)

    def bwd(g):
        if b._needs_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        g2 = np.moveaxis(g, 1, 0).reshape(co, -1)
        gcols_needed = x._needs_grad
        if w._needs_grad:
            c2 = _im2col3d(xp, k, stride, (do, ho, wo))
            w.accumulate_grad((g2 @ c2.T).reshape(w.shape))
        if gcols_needed:
            gcols = w2.T @ g2
            gxp = np.zeros_like(xp)
            _col2im3d_add(gxp, gcols, k, stride, (do, ho, wo))
            if padding:
                gxp = gxp[:, :, padding:padding + d, padding:padding + h, padding:padding + wd]
            x.accumulate_grad(gxp)

    return _record(out_t, (x, w, b), bwd)


def deconv3d(x, w, b, stride=2, padding=1, output_padding=0):
    """Transposed convolution of x[N,Ci,D,H,W] with w[Ci,Co,k,k,k].

    Forward equals the input-gradient of conv3d with the same stride and
    padding, making the 2x upsampling path exactly dual to the stride-2
    downsampling convs.
    """
    n, ci, d, h, wd = x.shape
    ci_w, co, k = w.shape[0], w.shape[1], w.shape[2]
    if ci != ci_w:
        raise ValueError(f"channel mismatch: input {ci} vs weight {ci_w}")
    ext = [(e - 1) * stride + k for e in (d, h, wd)]
    do, ho, wo = (e - 2 * padding + output_padding for e in ext)
    if min(do, ho, wo) < 1:
        raise ValueError("non-positive output extent")

    w2 = w.data.reshape(ci, co * k ** 3)
    x2 = np.moveaxis(x.data, 1, 0).reshape(ci, -1)
    cols = w2.T @ x2  # [Co*k^3, N*Lin]
    buf = np.zeros((n, co, ext[0], ext[1], ext[2]), dtype=x.data.dtype)
    _col2im3d_add(buf, cols, k, stride, (d, h, wd))
    core = buf[:, :, padding:padding + do, padding:padding + ho, padding:padding + wo]
    out = np.empty((n, co, do, ho, wo), dtype=x.data.dtype)
    out[:] = b.data[None, :, None, None, None]
    out[:, :, :core.shape[2], :core.shape[3], :core.shape[4]] += core
    out_t = Tensor(out, dtype=x.dtype)

    def bwd(g):
        if b._needs_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        gbuf = np.zeros((n, co, ext[0], ext[1], ext[2]), dtype=g.dtype)
        lim = [min(do, ext[0] - padding), min(ho, ext[1] - padding), min(wo, ext[2] - padding)]
        gbuf[:, :, padding:padding + lim[0], padding:padding + lim[1], padding:padding + lim[2]] = \
            g[:, :, :lim[0], :lim[1], :lim[2]]
        gcols = _im2col3d(gbuf, k, stride, (d, h, wd))  # [Co*k^3, N*Lin]
        if w._needs_grad:
            w.accumulate_grad((x2 @ gcols.T).reshape(w.shape))
        if x._needs_grad:
            gx2 = w2 @ gcols
            x.accumulate_grad(np.moveaxis(gx2.reshape(ci, n, d, h, wd), 0, 1))

    return _record(out_t, (x, w, b), bwd)


def conv1d(x, w, b, stride=1, padding=None):
    """1-D analogue of conv3d: x[N,Ci,L], w[Co,Ci,k]."""
    n, ci, length = x.shape
    co, ci_w, k = w.shape
    if ci != ci_w:
        raise ValueError(f"channel mismatch: input {ci} vs weight {ci_w}")
    if padding is None:
        padding = (k - 1) // 2
    lo = _conv_out_extent(length, k, stride, padding)
    if lo < 1:
        raise ValueError("non-positive output extent")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    out = np.tensordot(win, w.data, axes=([1, 3], [1, 2])) + b.data
    out_t = Tensor(np.moveaxis(out, -1, 1), dtype=x.dtype)

    def bwd(g):
        if b._needs_grad:
            b.accumulate_grad(g.sum(axis=(0, 2)))
        if w._needs_grad:
            w.accumulate_grad(np.tensordot(g, win, axes=([0, 2], [0, 2])))
        if x._needs_grad:
            gxp = np.zeros_like(xp)
            gcols = np.tensordot(w.data, g, axes=([0], [1]))  # [Ci,k,N,lo]
            for kk in range(k):
                gxp[:, :, kk:kk + stride * lo:stride] += np.moveaxis(gcols[:, kk], 0, 1)
            x.accumulate_grad(gxp[:, :, padding:padding + length] if padding else gxp)

    return _record(out_t, (x, w, b), bwd)


def linear(x, w, b):
    """Affine map of x[N,Fin] by w[Fout,Fin] plus bias."""
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"feature mismatch: input {x.shape[1]} vs weight {w.shape[1]}")
    out_t = Tensor(x.data @ w.data.T + b.data, dtype=x.dtype)

    def bwd(g):
        if b._needs_grad:
            b.accumulate_grad(g.sum(axis=0))
        if w._needs_grad:
            w.accumulate_grad(g.T @ x.data)
        if x._needs_grad:
            x.accumulate_grad(g @ w.data)

    return _record(out_t, (x, w, b), bwd)


def prelu(x, a):
    """y = x for x >= 0 else a*x, with per-channel slopes on axis 1."""
    c = x.shape[1]
    if a.shape != (c,):
        raise ValueError(f"slope count {a.shape} does not match {c} channels")
    ax = a.data.reshape((1, c) + (1,) * (x.data.ndim - 2))
    pos = x.data >= 0
    out_t = Tensor(np.where(pos, x.data, ax * x.data), dtype=x.dtype)

    def bwd(g):
        if x._needs_grad:
            x.accumulate_grad(np.where(pos, g, ax * g))
        if a._needs_grad:
            neg = np.where(pos, 0.0, g * x.data)
            a.accumulate_grad(neg.sum(axis=tuple(i for i in range(x.data.ndim) if i != 1)))

    return _record(out_t, (x, a), bwd)


def dropout(x, p, training, seed):
    """Inverted dropout with a mask reproducible from the seed."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0.0:
        out_t = Tensor(x.data.copy(), dtype=x.dtype)

        def bwd_id(g):
            if x._needs_grad:
                x.accumulate_grad(g)

        return _record(out_t, (x,), bwd_id)
    gen = np.random.Generator(np.random.PCG64(seed))
    mask = (gen.random(x.shape) >= p) / (1.0 - p)
    out_t = Tensor(x.data * mask, dtype=x.dtype)

    def bwd(g):
        if x._needs_grad:
            x.accumulate_grad(g * mask)

    return _record(out_t, (x,), bwd)


def avgpool2(x):
    """Halve each spatial extent of x[N,C,D,H,W] by 2^3 means."""
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ValueError("avgpool2 requires even spatial extents")
    v = x.data.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
    out_t = Tensor(v.mean(axis=(3, 5, 7)), dtype=x.dtype)

    def bwd(g):
        if x._needs_grad:
            gx = np.empty_like(x.data).reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
            gx[:] = (g / 8.0)[:, :, :, None, :, None, :, None]
            x.accumulate_grad(gx.reshape(x.shape))

    return _record(out_t, (x,), bwd)


def _up2_axis(v, axis):
    # align-corners-false doubling: out 2i maps to in i-0.25, out 2i+1 to i+0.25
    n = v.shape[axis]
    lo = np.concatenate([v.take([0], axis=axis), v.take(range(n - 1), axis=axis)], axis=axis)
    hi = np.concatenate([v.take(range(1, n), axis=axis), v.take([-1], axis=axis)], axis=axis)
    out = np.stack([0.75 * v + 0.25 * lo, 0.75 * v + 0.25 * hi], axis=axis + 1)
    shape = list(v.shape)
    shape[axis] = 2 * n
    return out.reshape(shape)


def _up2_axis_adjoint(g, axis, n):
    g2 = g.reshape(g.shape[:axis] + (n, 2) + g.shape[axis + 1:])
    even = g2.take(0, axis=axis + 1)
    odd = g2.take(1, axis=axis + 1)
    gv = 0.75 * (even + odd)
    # scatter the 0.25 neighbor weights back, with edge clamping
    left = 0.25 * even
    right = 0.25 * odd
    gv_shift = np.zeros_like(gv)
    sl_dst = [slice(None)] * gv.ndim
    sl_src = [slice(None)] * gv.ndim
    sl_dst[axis] = slice(0, n - 1)
    sl_src[axis] = slice(1, n)
    gv_shift[tuple(sl_dst)] += left[tuple(sl_src)]
    sl_edge = [slice(None)] * gv.ndim
    sl_edge[axis] = slice(0, 1)
    gv_shift[tuple(sl_edge)] += left[tuple(sl_edge)]
    sl_dst[axis] = slice(1, n)
    sl_src[axis] = slice(0, n - 1)
    gv_shift[tuple(sl_dst)] += right[tuple(sl_src)]
    sl_edge[axis] = slice(n - 1, n)
    gv_shift[tuple(sl_edge)] += right[tuple(sl_edge)]
    return gv + gv_shift


def trilinear_up2(x):
    """Double each spatial extent of x[N,C,D,H,W] with trilinear weights."""
    v = x.data
    for axis in (2, 3, 4):
        v = _up2_axis(v, axis)
    out_t = Tensor(v, dtype=x.dtype)
    dims = x.shape[2:]

    def bwd(g):
        if x._needs_grad:
            for axis, n in zip((4, 3, 2), (dims[2], dims[1], dims[0])):
                g = _up2_axis_adjoint(g, axis, n)
            x.accumulate_grad(g)

    return _record(out_t, (x,), bwd)


def resample(x, mode):
    """Pyramid step: 'avgpool2' halves extents, 'trilinear_up2' doubles them."""
    if mode == "avgpool2":
        return avgpool2(x)
    if mode == "trilinear_up2":
        return trilinear_up2(x)
    raise ValueError(f"unknown resample mode: {mode}")
