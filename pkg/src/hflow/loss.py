"""Training objective: L1 reconstruction plus per-block L1 flow matching
with exponentially increasing weights toward the final block. Both terms
reduce by mean so the flow weight keeps its meaning across resolutions.
The two enable flags express the ablation variants.
"""
from dataclasses import dataclass

from .tensor import absolute, add, scale, sub, tmean


@dataclass
class LossConfig:
    lambda_flow: float = 0.2
    gamma: float = 0.8
    n_blocks: int = 3
    enable_rec: bool = True
    enable_flow: bool = True

    def __post_init__(self):
        if self.lambda_flow < 0:
            raise ValueError("lambda_flow must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0,1]")


def rec_loss(d_hat, d_gt):
    """Mean absolute difference between interpolant and ground truth."""
    if d_hat.shape != d_gt.shape:
        raise ValueError("dim mismatch in reconstruction loss")
    return tmean(absolute(sub(d_hat, d_gt)))


def flow_loss(flows, f_gt, cfg):
    """Weighted per-block flow error: sum_i gamma^(N-i) * mean|f_gt - f_i|,
    1-based i, so the final block always carries weight 1."""
    n = cfg.n_blocks
    if len(flows) != n:
        raise ValueError(f"expected {n} block flows, got {len(flows)}")
    total = None
    for i, f in enumerate(flows, start=1):
        if f.shape != f_gt.shape:
            raise ValueError("dim mismatch in flow loss")
        term = scale(tmean(absolute(sub(f, f_gt))), cfg.gamma ** (n - i))
        total = term if total is None else add(total, term)
    return total


def total_loss(rec, flow, cfg):
    """Linear combination of the enabled terms."""
    parts = []
    if cfg.enable_rec:
        parts.append(rec)
    if cfg.enable_flow:
        parts.append(scale(flow, cfg.lambda_flow))
    if not parts:
        raise ValueError("at least one loss term must be enabled")
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out
