"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tape records every op in execution order; backward() replays the records
in strict reverse order, accumulating adjoints into the .grad of every
tensor that needs one. With no active tape, ops run forward-only, which is
what inference uses.
"""
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float64

# When True, every op asserts its output is finite. Slow; used in tests.
_debug_checks = False


def set_debug_checks(enabled):
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """Dense N-d array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_needs_grad", "tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        # Whether backward should reach this tensor (leaf flag or inherited).
        self._needs_grad = requires_grad
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.asarray(g).astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of executed ops, replayed in reverse for backward."""

    _active = []

    def __init__(self):
        self.records = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    @staticmethod
    def current():
        return Tape._active[-1] if Tape._active else None

    def clear(self):
        """Drop all records, breaking tensor<->tape reference cycles so a
        finished step frees its activations promptly."""
        self.records.clear()


def _record(out, inputs, backward_fn):
    """Register an op on the active tape; marks the output as grad-carrying."""
    if _debug_checks and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values in op output")
    tape = Tape.current()
    if tape is None:
        return out
    if any(t._needs_grad for t in inputs):
        out._needs_grad = True
        out.tape = tape
        tape.records.append((out, backward_fn))
    return out


def backward(loss):
    """Populate .grad of every reachable tensor, starting from a scalar loss.

    Repeated calls without zero_grad accumulate, matching optimizer
    conventions for gradient accumulation.
    """
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    tape = loss.tape
    if tape is None:
        raise ValueError("loss was not recorded on a tape")
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, fn in reversed(tape.records):
        if out.grad is not None:
            fn(out.grad)
            # Intermediate grads are consumed so that later backward calls
            # on the same tape do not re-propagate this subgraph.
            if not out.requires_grad:
                out.grad = None


# ---------------------------------------------------------------------------
# allocation


@dataclass
class Randn:
    """Seeded normal fill: PCG64 stream shaped by Box-Muller, so identical
    seeds give bit-identical tensors on any platform."""

    seed: int
    scale: float = 1.0


def randn_array(shape, seed, scale=1.0, dtype=None):
    n = int(np.prod(shape)) if shape else 1
    gen = np.random.Generator(np.random.PCG64(seed))
    m = (n + 1) // 2
    # 1-u keeps the log argument in (0, 1].
    u1 = 1.0 - gen.random(m)
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])[:n]
    return (scale * z).reshape(shape).astype(dtype or DEFAULT_DTYPE)


def alloc(shape, fill=0.0, requires_grad=False, dtype=None):
    """Tensor with deterministic contents: constant or seeded normal."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError("invalid shape")
    dtype = dtype or DEFAULT_DTYPE
    if isinstance(fill, Randn):
        data = randn_array(shape, fill.seed, fill.scale, dtype)
    else:
        data = np.full(shape, float(fill), dtype=dtype)
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise ops


def _as_scalar_or_match(a, b):
    if isinstance(b, (int, float)):
        return None
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return b


def add(a, b):
    bb = _as_scalar_or_match(a, b)
    if bb is None:
        out = Tensor(a.data + b, dtype=a.dtype)

        def bwd(g):
            if a._needs_grad:
                a.accumulate_grad(g)

        return _record(out, (a,), bwd)
    out = Tensor(a.data + bb.data, dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(g)
        if bb._needs_grad:
            bb.accumulate_grad(g)

    return _record(out, (a, bb), bwd)


def sub(a, b):
    bb = _as_scalar_or_match(a, b)
    if bb is None:
        out = Tensor(a.data - b, dtype=a.dtype)

        def bwd(g):
            if a._needs_grad:
                a.accumulate_grad(g)

        return _record(out, (a,), bwd)
    out = Tensor(a.data - bb.data, dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(g)
        if bb._needs_grad:
            bb.accumulate_grad(-g)

    return _record(out, (a, bb), bwd)


def mul(a, b):
    bb = _as_scalar_or_match(a, b)
    if bb is None:
        return scale(a, float(b))
    out = Tensor(a.data * bb.data, dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(g * bb.data)
        if bb._needs_grad:
            bb.accumulate_grad(g * a.data)

    return _record(out, (a, bb), bwd)


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * c, dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(g * c)

    return _record(out, (a,), bwd)


def sigmoid(a):
    # Split by sign for overflow-free evaluation.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(g * y * (1.0 - y))

    return _record(out, (a,), bwd)


def absolute(a):
    out = Tensor(np.abs(a.data), dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(g * np.sign(a.data))

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a):
    out = Tensor(np.asarray(a.data.sum()), dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _record(out, (a,), bwd)


def tmean(a):
    n = a.data.size
    out = Tensor(np.asarray(a.data.mean()), dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(np.broadcast_to(g / n, a.shape).copy())

    return _record(out, (a,), bwd)


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _record(out, (a,), bwd)


def slice1d(a, start, stop):
    """Contiguous slice of a flat tensor; gradients flow back into the slice."""
    if a.data.ndim != 1:
        raise ValueError("slice1d expects a flat tensor")
    if not (0 <= start <= stop <= a.data.size):
        raise ValueError("slice out of range")
    out = Tensor(a.data[start:stop].copy(), dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:stop] += g

    return _record(out, (a,), bwd)


def narrow(a, axis, start, length):
    """Slice `length` entries from `start` along one axis."""
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ValueError("slice out of range")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx].copy(), dtype=a.dtype)

    def bwd(g):
        if a._needs_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[idx] += g

    return _record(out, (a,), bwd)


def concat(tensors, axis):
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), dtype=tensors[0].dtype)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t._needs_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _record(out, tuple(tensors), bwd)
