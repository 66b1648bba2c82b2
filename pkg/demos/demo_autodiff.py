#!/usr/bin/env python3
"""Tour of the reverse-mode autodiff core.

Builds a toy volumetric conv net on the tape, backpropagates a scalar
loss, and cross-checks a few gradients against central finite differences.
"""
import numpy as np

from hflow import nn
from hflow import tensor as T
from hflow.gradcheck import finite_diff_grad, rel_error


def main():
    rng = np.random.default_rng(0)

    print("== scalar chain ==")
    x = T.Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
    with T.Tape():
        y = T.tsum(T.sigmoid(T.mul(x, x)))
        T.backward(y)
    print("x:", x.data, "\ngrad of sum(sigmoid(x*x)):", x.grad)

    print("\n== tiny conv net on 8^3 ==")
    vol = T.Tensor(rng.uniform(0, 1, (1, 1, 8, 8, 8)))
    w1 = T.Tensor(rng.normal(0, 0.3, (4, 1, 3, 3, 3)), requires_grad=True)
    b1 = T.Tensor(np.zeros(4), requires_grad=True)
    slopes = T.Tensor(np.full(4, 0.25), requires_grad=True)
    w2 = T.Tensor(rng.normal(0, 0.3, (1, 4, 3, 3, 3)), requires_grad=True)
    b2 = T.Tensor(np.zeros(1), requires_grad=True)

    def forward():
        h = nn.prelu(nn.conv3d(vol, w1, b1, stride=2, padding=1), slopes)
        out = nn.conv3d(h, w2, b2, stride=1, padding=1)
        return T.tmean(T.mul(out, out))

    with T.Tape():
        loss = forward()
        T.backward(loss)
    print("loss:", float(loss.data))
    print("grad norms:", {n: float(np.abs(p.grad).max())
                          for n, p in [("w1", w1), ("b1", b1), ("a", slopes), ("w2", w2)]})

    print("\n== finite-difference check on w2 ==")

    def f(wv):
        old = w2.data
        w2.data = wv
        try:
            return float(forward().data)
        finally:
            w2.data = old

    coords = list(range(0, w2.data.size, 17))
    num = finite_diff_grad(f, w2.data.copy(), h=1e-6, coords=coords)
    err = rel_error(w2.grad, num, coords=coords)
    print(f"max relative error vs finite differences: {err:.2e}")
    assert err < 1e-6


if __name__ == "__main__":
    main()
