"""Coarse-to-fine interpolation network.

Three stacked blocks operate on an average-pooled pyramid of the two input
volumes. Each block consumes the endpoint volumes warped by the previous
block's flows, the interpolation time, and the previous flows and fusion
mask, then refines the flows residually and re-estimates the mask. The
finest block's flows warp the full-resolution endpoints, which a per-voxel
convex mask blends into the interpolant.

Flow tensors are normalized throughout: a value of 1 means flow_scale
voxels at the tensor's own resolution, so warping multiplies by
flow_scale, upsampling between blocks doubles the values (the same
physical displacement spans twice as many voxels at the finer level), and
the finest level's flows compare directly against normalized ground truth.
Keeping every channel O(1) is what makes the residual refinement stable.
"""
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .tensor import Randn, Tensor, alloc, add, concat, mul, narrow, scale, sigmoid
from .warp import backward_warp

STACK_CHANNELS = 10  # two warped volumes + time + two flows + mask
HEAD_CHANNELS = 7  # two flow deltas + mask logit
N_HYPER_LAYERS = 5


@dataclass
class ModelConfig:
    n_blocks: int = 3
    block_channels: tuple = (16, 12, 8)
    kernel: int = 3
    dtype: str = "f64"  # "f64" for gradient-check fidelity, "f32" for speed

    def __post_init__(self):
        self.block_channels = tuple(int(c) for c in self.block_channels)
        if self.n_blocks < 2:
            raise ValueError("need at least two blocks")
        if len(self.block_channels) != self.n_blocks:
            raise ValueError("one channel width per block")
        if any(c <= 0 for c in self.block_channels):
            raise ValueError("channel widths must be positive")
        if any(a < b for a, b in zip(self.block_channels, self.block_channels[1:])):
            raise ValueError("channel widths must be non-increasing")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "f64" else np.float32

    @property
    def min_extent(self):
        return 2 ** (self.n_blocks - 1) * 4

    def to_dict(self):
        return {"n_blocks": self.n_blocks, "block_channels": list(self.block_channels),
                "kernel": self.kernel, "dtype": self.dtype}

    @classmethod
    def from_dict(cls, d):
        return cls(n_blocks=d["n_blocks"], block_channels=tuple(d["block_channels"]),
                   kernel=d["kernel"], dtype=d.get("dtype", "f64"))


@dataclass
class BlockOutput:
    flow_ts: Tensor  # normalized displacement toward the earlier endpoint
    flow_tu: Tensor  # normalized displacement toward the later endpoint
    mask: Tensor  # fusion weight in [0,1]


@dataclass
class ModelOutput:
    d_hat: Tensor  # interpolated volume at full resolution
    flows: list  # per-block later-endpoint flows, full resolution, normalized
    f_hat: Tensor  # final flow estimate == flows[-1]
    mask_final: Tensor
    block_outputs: list = field(default_factory=list)


def init_local_params(cfg, seed, head_weight_scale=1e-3, with_conv_stack=False):
    """Trainable tensors owned by the main network.

    Per block: PReLU slopes for the five conditioned convs, two upsampling
    deconvs with slopes, and the output head. The head weights start small
    so initial flow deltas are near zero and the mask near 0.5. With
    with_conv_stack=True the five conv layers become ordinary trainable
    tensors (hypernetwork ablation).
    """
    dtype = cfg.np_dtype
    k = cfg.kernel
    p = {}
    s = seed
    for b, c in enumerate(cfg.block_channels):
        for layer in range(1, N_HYPER_LAYERS + 1):
            p[f"b{b}.conv{layer}.a"] = alloc((c,), 0.25, requires_grad=True, dtype=dtype)
            if with_conv_stack:
                from .hypernet import KERNEL_GAIN

                ci = STACK_CHANNELS if layer == 1 else c
                fan_in = ci * k ** 3
                p[f"b{b}.conv{layer}.w"] = alloc((c, ci, k, k, k),
                                                 Randn(s + 77, KERNEL_GAIN * np.sqrt(2.0 / fan_in)),
                                                 requires_grad=True, dtype=dtype)
                p[f"b{b}.conv{layer}.b"] = alloc((c,), 0.0, requires_grad=True, dtype=dtype)
            s += 1
        for d in (1, 2):
            fan_in = c * 4 ** 3
            p[f"b{b}.deconv{d}.w"] = alloc((c, c, 4, 4, 4), Randn(s, np.sqrt(2.0 / fan_in)),
                                           requires_grad=True, dtype=dtype)
            p[f"b{b}.deconv{d}.b"] = alloc((c,), 0.0, requires_grad=True, dtype=dtype)
            p[f"b{b}.deconv{d}.a"] = alloc((c,), 0.25, requires_grad=True, dtype=dtype)
            s += 1
        p[f"b{b}.head.w"] = alloc((HEAD_CHANNELS, c, k, k, k), Randn(s, head_weight_scale),
                                  requires_grad=True, dtype=dtype)
        p[f"b{b}.head.b"] = alloc((HEAD_CHANNELS,), 0.0, requires_grad=True, dtype=dtype)
        s += 1
    return p


def fuse(d_from_s, d_from_u, mask):
    """Per-voxel convex blend of the two warped endpoint volumes."""
    if d_from_s.shape != d_from_u.shape or d_from_s.shape != mask.shape:
        raise ValueError("fuse requires equal dims")
    if mask.data.min() < 0.0 or mask.data.max() > 1.0:
        raise ValueError("mask values outside [0,1]")
    return add(mul(d_from_s, mask), mul(d_from_u, add(scale(mask, -1.0), 1.0)))


def block_forward(cfg, i, d_s_i, d_u_i, t_chan, prev, conv_wb, local, flow_scale):
    """One refinement block at pyramid level i.

    The 10-channel input stack runs through the five parameter-conditioned
    convs (the first two at stride 2), two stride-2 deconvs that restore
    the block resolution, and a head conv emitting flow deltas and the
    mask logit. PReLU follows every layer except the head.
    """
    n = d_s_i.shape[0]
    res = d_s_i.shape[2:]
    dtype = cfg.np_dtype
    if prev is None:
        zeros_flow = Tensor(np.zeros((n, 3) + res, dtype=dtype))
        zeros_mask = Tensor(np.zeros((n, 1) + res, dtype=dtype))
        prev = BlockOutput(zeros_flow, zeros_flow, zeros_mask)
        stack = concat([d_s_i, d_u_i, t_chan, prev.flow_ts, prev.flow_tu, prev.mask], axis=1)
    else:
        if prev.flow_ts.shape[2:] != res:
            raise ValueError(f"carried flows at {prev.flow_ts.shape[2:]} do not match level {res}")
        warped_s = backward_warp(d_s_i, prev.flow_ts, flow_scale)
        warped_u = backward_warp(d_u_i, prev.flow_tu, flow_scale)
        stack = concat([warped_s, warped_u, t_chan, prev.flow_ts, prev.flow_tu, prev.mask], axis=1)

    x = stack
    for layer in range(1, N_HYPER_LAYERS + 1):
        w, b = conv_wb[(i, layer)]
        x = nn.conv3d(x, w, b, stride=2 if layer <= 2 else 1, padding=1)
        x = nn.prelu(x, local[f"b{i}.conv{layer}.a"])
    for d in (1, 2):
        x = nn.deconv3d(x, local[f"b{i}.deconv{d}.w"], local[f"b{i}.deconv{d}.b"],
                        stride=2, padding=1)
        x = nn.prelu(x, local[f"b{i}.deconv{d}.a"])
    head = nn.conv3d(x, local[f"b{i}.head.w"], local[f"b{i}.head.b"], stride=1, padding=1)
    if head.shape[2:] != res:
        raise ValueError(f"head resolution {head.shape[2:]} does not match level {res}")

    flow_ts = add(prev.flow_ts, narrow(head, 1, 0, 3))
    flow_tu = add(prev.flow_tu, narrow(head, 1, 3, 3))
    mask = sigmoid(narrow(head, 1, 6, 1))
    return BlockOutput(flow_ts, flow_tu, mask)


def _check_extents(dims, min_extent):
    for e in dims:
        if e < min_extent or (e & (e - 1)) != 0:
            raise ValueError("pyramid construction failed: extents must be "
                             f"powers of two >= {min_extent}, got {dims}")


def model_forward(cfg, d_s, d_u, t, conv_wb, local, flow_scale):
    """Full forward pass.

    d_s, d_u: [N,1,D,H,W] normalized density volumes; t: per-sample scalar
    in (0,1); conv_wb: (block, layer) -> (weight, bias) for the conditioned
    convs, from the hypernetwork or from plain trainable tensors;
    flow_scale: voxels per normalized flow unit at full resolution.
    """
    if d_s.shape != d_u.shape:
        raise ValueError("endpoint volumes must share dims")
    _check_extents(d_s.shape[2:], cfg.min_extent)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ValueError("interpolation time must lie strictly inside (0,1)")
    n = d_s.shape[0]
    if t.size == 1:
        t = np.full(n, t[0])

    pyr_s = [d_s]
    pyr_u = [d_u]
    for _ in range(cfg.n_blocks - 1):
        pyr_s.insert(0, nn.avgpool2(pyr_s[0]))
        pyr_u.insert(0, nn.avgpool2(pyr_u[0]))

    prev = None
    outs = []
    for i in range(cfg.n_blocks):
        res = pyr_s[i].shape[2:]
        t_chan = Tensor(np.broadcast_to(t.reshape(n, 1, 1, 1, 1), (n, 1) + res).astype(cfg.np_dtype).copy())
        out_i = block_forward(cfg, i, pyr_s[i], pyr_u[i], t_chan, prev, conv_wb, local,
                              flow_scale)
        outs.append(out_i)
        if i < cfg.n_blocks - 1:
            prev = BlockOutput(scale(nn.trilinear_up2(out_i.flow_ts), 2.0),
                               scale(nn.trilinear_up2(out_i.flow_tu), 2.0),
                               nn.trilinear_up2(out_i.mask))

    final = outs[-1]
    d_from_s = backward_warp(d_s, final.flow_ts, flow_scale)
    d_from_u = backward_warp(d_u, final.flow_tu, flow_scale)
    d_hat = fuse(d_from_s, d_from_u, final.mask)

    flows = []
    for i, o in enumerate(outs):
        f = o.flow_tu
        for _ in range(cfg.n_blocks - 1 - i):
            f = scale(nn.trilinear_up2(f), 2.0)
        flows.append(f)
    return ModelOutput(d_hat=d_hat, flows=flows, f_hat=flows[-1],
                       mask_final=final.mask, block_outputs=outs)
