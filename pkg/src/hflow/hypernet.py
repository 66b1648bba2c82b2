"""Hypernetwork: maps normalized simulation parameters to the flat weight
vector consumed by the parameter-conditioned conv layers of the main
interpolation network.

Architecture: a 3-layer MLP (PReLU, dropout after the first two layers)
lifts the parameter vector to 256 features, which are reshaped to 8
channels x 32 samples and refined by two 1-D convolutions; a final linear
head emits the full weight vector. The head starts near a structured bias
so the generated kernels initially look like a conventionally initialized
CNN.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .tensor import DEFAULT_DTYPE, Randn, Tensor, alloc, randn_array, reshape, slice1d

MLP_WIDTHS = (64, 128, 256)
CNN_SHAPE = (8, 32)  # channels x length after the MLP
CNN_CHANNELS = 16
DROPOUT_P = 0.1


@dataclass
class SimParams:
    """Ordered simulation parameters with their normalized values."""

    names: list
    raw: np.ndarray
    normalized: np.ndarray
    in_range: bool = True

    @classmethod
    def from_raw(cls, names, raw, stats):
        """Normalize raw values to [0,1] with per-name (min, max) stats.

        Out-of-range values are permitted (parameter-space extrapolation)
        but flagged via in_range=False.
        """
        raw = np.asarray(raw, dtype=np.float64)
        if len(names) != raw.size:
            raise ValueError("parameter name/value count mismatch")
        lo = np.array([stats[n][0] for n in names])
        hi = np.array([stats[n][1] for n in names])
        if np.any(hi <= lo):
            raise ValueError("degenerate parameter range")
        normalized = (raw - lo) / (hi - lo)
        in_range = bool(np.all((normalized >= -1e-9) & (normalized <= 1 + 1e-9)))
        return cls(list(names), raw, normalized, in_range)


@dataclass
class ThetaEntry:
    block: int
    layer: int  # 1-based within the parameter-conditioned stack
    w_shape: tuple
    b_shape: tuple
    w_offset: int
    b_offset: int

    @property
    def end(self):
        return self.b_offset + int(np.prod(self.b_shape))


@dataclass
class ThetaLayout:
    """Slicing map from the flat generated vector onto conv weights/biases.

    Entries are ordered block-major, layer-minor, weight before bias, and
    tile [0, total) exactly.
    """

    entries: list
    total: int


def theta_layout(block_channels, in_channels=10, kernel=3, hyper_layers=5):
    """Deterministic layout for the conditioned conv layers of each block."""
    entries = []
    offset = 0
    for b, c in enumerate(block_channels):
        for layer in range(1, hyper_layers + 1):
            ci = in_channels if layer == 1 else c
            w_shape = (c, ci, kernel, kernel, kernel)
            b_shape = (c,)
            w_off = offset
            offset += int(np.prod(w_shape))
            b_off = offset
            offset += c
            entries.append(ThetaEntry(b, layer, w_shape, b_shape, w_off, b_off))
    return ThetaLayout(entries, offset)


def slice_theta(theta, layout):
    """Shape the flat vector into per-layer (weight, bias) tensor pairs.

    The returned tensors are not independent parameters: their gradients
    flow back into theta.
    """
    if theta.shape != (layout.total,):
        raise ValueError(f"theta length {theta.shape} does not match layout total {layout.total}")
    out = {}
    for e in layout.entries:
        w = reshape(slice1d(theta, e.w_offset, e.b_offset), e.w_shape)
        b = slice1d(theta, e.b_offset, e.end)
        out[(e.block, e.layer)] = (w, b)
    return out


@dataclass
class HyperNetState:
    """All trainable tensors of the hypernetwork plus its wiring info."""

    param_dim: int
    layout: ThetaLayout
    params: dict = field(default_factory=dict)

    def named_params(self, prefix="hyper."):
        return {prefix + k: v for k, v in self.params.items()}


def _feature_rms(params, param_dim):
    """Magnitude of the pre-head features for a nominal parameter vector,
    used to calibrate the head initialization."""
    state = HyperNetState(param_dim=param_dim, layout=ThetaLayout([], 0), params=params)
    x = np.full(param_dim, 0.5)
    feats = _features(state, x, training=False, seed=0)
    return float(np.sqrt(np.mean(feats.data ** 2)))


KERNEL_GAIN = 0.55  # of the fan-in scale sqrt(2/fan_in); see init_hypernet


def init_hypernet(param_dim, layout, seed, dtype=None, modulation=0.25):
    """Build a fresh hypernetwork state.

    The head bias carries fan-in-scaled normal values per weight slice
    (zeros for bias slices), so the generated kernels initially look like
    one conventionally initialized CNN. The head weight rows are scaled so
    the parameter-dependent part contributes `modulation` times each
    slice's scale, calibrated against the measured feature magnitude.

    Both use KERNEL_GAIN times the usual sqrt(2/fan_in): the conditioned
    conv stacks are deep PReLU chains with rectified (positive-mean)
    activations, which amplify by 2-3x per layer at the full fan-in scale
    and blow up the refinement blocks; 0.55x keeps the per-layer gain near
    one while staying within a factor two of the conventional scale.
    """
    dtype = dtype or DEFAULT_DTYPE
    p = {}
    widths = (param_dim,) + MLP_WIDTHS
    for i in range(3):
        fan_in = widths[i]
        p[f"mlp{i + 1}.w"] = alloc((widths[i + 1], fan_in), Randn(seed + i, math.sqrt(2.0 / fan_in)),
                                   requires_grad=True, dtype=dtype)
        p[f"mlp{i + 1}.b"] = alloc((widths[i + 1],), 0.0, requires_grad=True, dtype=dtype)
        p[f"mlp{i + 1}.a"] = alloc((widths[i + 1],), 0.25, requires_grad=True, dtype=dtype)
    cnn_in = (CNN_SHAPE[0], CNN_CHANNELS)
    for i in range(2):
        fan_in = cnn_in[i] * 3
        p[f"cnn{i + 1}.w"] = alloc((CNN_CHANNELS, cnn_in[i], 3), Randn(seed + 10 + i, math.sqrt(2.0 / fan_in)),
                                   requires_grad=True, dtype=dtype)
        p[f"cnn{i + 1}.b"] = alloc((CNN_CHANNELS,), 0.0, requires_grad=True, dtype=dtype)
        p[f"cnn{i + 1}.a"] = alloc((CNN_CHANNELS,), 0.25, requires_grad=True, dtype=dtype)

    head_in = CNN_CHANNELS * CNN_SHAPE[1]
    rms = _feature_rms(p, param_dim)
    head_w = np.empty((layout.total, head_in), dtype=dtype)
    head_b = np.zeros(layout.total, dtype=dtype)
    for j, e in enumerate(layout.entries):
        fan_in = int(np.prod(e.w_shape[1:]))
        k_std = KERNEL_GAIN * math.sqrt(2.0 / fan_in)
        row_std = modulation * k_std / (math.sqrt(head_in) * rms)
        head_w[e.w_offset:e.b_offset] = randn_array(
            ((e.b_offset - e.w_offset), head_in), seed + 200 + j, row_std, dtype)
        # bias slices: small parameter-dependent offsets around zero
        head_w[e.b_offset:e.end] = randn_array(
            ((e.end - e.b_offset), head_in), seed + 400 + j, 0.1 * row_std, dtype)
        head_b[e.w_offset:e.b_offset] = randn_array(
            (e.b_offset - e.w_offset,), seed + 100 + j, k_std, dtype)
    p["head.w"] = Tensor(head_w, requires_grad=True, dtype=dtype)
    p["head.b"] = Tensor(head_b, requires_grad=True, dtype=dtype)
    return HyperNetState(param_dim=param_dim, layout=layout, params=p)


def _features(state, params, training, seed):
    """MLP + 1-D conv stack up to the flattened pre-head features."""
    p = state.params
    dtype = p["mlp1.w"].dtype
    x = Tensor(np.asarray(params, dtype=np.float64).reshape(1, -1), dtype=dtype)
    for i in range(3):
        x = nn.linear(x, p[f"mlp{i + 1}.w"], p[f"mlp{i + 1}.b"])
        x = nn.prelu(x, p[f"mlp{i + 1}.a"])
        if i < 2:
            x = nn.dropout(x, DROPOUT_P, training, seed + i)
    x = reshape(x, (1,) + CNN_SHAPE)
    for i in range(2):
        x = nn.conv1d(x, p[f"cnn{i + 1}.w"], p[f"cnn{i + 1}.b"], stride=1, padding=1)
        x = nn.prelu(x, p[f"cnn{i + 1}.a"])
    return reshape(x, (1, CNN_CHANNELS * CNN_SHAPE[1]))


def hypernet_forward(state, params, training=False, seed=0):
    """Emit the flat weight vector for one normalized parameter vector.

    Deterministic at inference; with training=True the two dropout masks
    are drawn from `seed`, keeping runs reproducible.
    """
    if isinstance(params, SimParams):
        params = params.normalized
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (state.param_dim,):
        raise ValueError(f"expected {state.param_dim} parameters, got {params.shape}")
    x = _features(state, params, training, seed)
    theta = nn.linear(x, state.params["head.w"], state.params["head.b"])
    return reshape(theta, (state.layout.total,))
