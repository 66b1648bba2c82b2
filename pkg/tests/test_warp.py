"""Warping against a nested-loop trilinear oracle and shift fixtures."""
import numpy as np
import pytest

from hflow import tensor as T
from hflow.gradcheck import finite_diff_grad, rel_error
from hflow.warp import backward_warp, trilinear_sample


def trilinear_ref(vol, cz, cy, cx):
    """Per-voxel loop: clamp, floor, blend the 8 surrounding values."""
    d, h, w = vol.shape
    out = np.zeros_like(cz)
    it = np.ndindex(cz.shape)
    for idx in it:
        z = min(max(cz[idx], 0.0), d - 1.0)
        y = min(max(cy[idx], 0.0), h - 1.0)
        x = min(max(cx[idx], 0.0), w - 1.0)
        z0 = min(int(np.floor(z)), d - 2) if d > 1 else 0
        y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
        x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
        fz, fy, fx = z - z0, y - y0, x - x0
        acc = 0.0
        for dz, wz in ((0, 1 - fz), (1, fz)):
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    acc += wz * wy * wx * vol[min(z0 + dz, d - 1), min(y0 + dy, h - 1), min(x0 + dx, w - 1)]
        out[idx] = acc
    return out


class TestTrilinearSample:
    def test_integer_lattice_is_exact(self):
        rng = np.random.default_rng(0)
        vol = rng.normal(size=(1, 1, 4, 5, 6))
        gz, gy, gx = np.meshgrid(np.arange(4.0), np.arange(5.0), np.arange(6.0), indexing="ij")
        coords = T.Tensor(np.stack([gz, gy, gx])[None])
        out = trilinear_sample(T.Tensor(vol), coords)
        assert np.array_equal(out.data, vol)

    def test_midpoint_halves(self):
        vol = np.zeros((1, 1, 1, 1, 2))
        vol[..., 1] = 1.0
        coords = T.Tensor(np.array([0.0, 0.0, 0.5]).reshape(1, 3, 1, 1, 1))
        out = trilinear_sample(T.Tensor(vol), coords)
        assert out.data.reshape(-1).tolist() == [0.5]

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        vol = rng.normal(size=(5, 6, 7))
        cz = rng.uniform(-1, 6, size=(4, 4, 4))
        cy = rng.uniform(-1, 7, size=(4, 4, 4))
        cx = rng.uniform(-1, 8, size=(4, 4, 4))
        coords = T.Tensor(np.stack([cz, cy, cx])[None])
        out = trilinear_sample(T.Tensor(vol[None, None]), coords)
        ref = trilinear_ref(vol, cz, cy, cx)
        assert np.abs(out.data[0, 0] - ref).max() < 1e-12

    def test_nan_coords_rejected(self):
        vol = T.Tensor(np.zeros((1, 1, 2, 2, 2)))
        coords = np.zeros((1, 3, 1, 1, 1))
        coords[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            trilinear_sample(vol, T.Tensor(coords))

    def test_volume_grad_matches_finite_difference(self):
        rng = np.random.default_rng(2)
        vol0 = rng.normal(size=(1, 1, 3, 3, 3))
        coords0 = rng.uniform(0.3, 1.7, size=(1, 3, 2, 2, 2))

        def f(v):
            return float(trilinear_sample(T.Tensor(v), T.Tensor(coords0)).data.sum())

        vol = T.Tensor(vol0, requires_grad=True)
        with T.Tape():
            T.backward(T.tsum(trilinear_sample(vol, T.Tensor(coords0))))
        assert rel_error(vol.grad, finite_diff_grad(f, vol0, h=1e-6)) < 1e-6

    def test_coord_grad_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        vol0 = rng.normal(size=(1, 1, 4, 4, 4))
        coords0 = rng.uniform(0.3, 2.6, size=(1, 3, 3, 3, 3))

        def f(c):
            out = trilinear_sample(T.Tensor(vol0), T.Tensor(c))
            return float((out.data ** 2).sum())

        coords = T.Tensor(coords0, requires_grad=True)
        with T.Tape():
            out = trilinear_sample(T.Tensor(vol0), coords)
            T.backward(T.tsum(T.mul(out, out)))
        assert rel_error(coords.grad, finite_diff_grad(f, coords0, h=1e-6)) < 1e-5


class TestBackwardWarp:
    def test_zero_flow_identity_bitexact(self):
        rng = np.random.default_rng(4)
        src = rng.normal(size=(2, 1, 4, 4, 4))
        flow = np.zeros((2, 3, 4, 4, 4))
        out = backward_warp(T.Tensor(src), T.Tensor(flow), 1.0)
        assert np.array_equal(out.data, src)

    def test_integer_shift_matches_rolled_array(self):
        rng = np.random.default_rng(5)
        src = rng.normal(size=(1, 1, 5, 5, 5))
        flow = np.zeros((1, 3, 5, 5, 5))
        flow[0, 0] = 1.0  # +1 voxel along x
        out = backward_warp(T.Tensor(src), T.Tensor(flow), 1.0)
        # interior target voxels read src one step along the last axis
        assert np.abs(out.data[0, 0, :, :, :4] - src[0, 0, :, :, 1:]).max() < 1e-12
        # boundary clamps to the edge value
        assert np.abs(out.data[0, 0, :, :, 4] - src[0, 0, :, :, 4]).max() < 1e-12

    def test_scale_denormalizes(self):
        rng = np.random.default_rng(6)
        src = rng.normal(size=(1, 1, 5, 5, 5))
        flow = np.full((1, 3, 5, 5, 5), 0.0)
        flow[0, 1] = 0.5
        a = backward_warp(T.Tensor(src), T.Tensor(flow), 2.0)
        flow2 = flow * 2.0
        b = backward_warp(T.Tensor(src), T.Tensor(flow2), 1.0)
        assert np.array_equal(a.data, b.data)

    def test_value_range_preserved(self):
        rng = np.random.default_rng(7)
        src = rng.uniform(0.2, 0.9, size=(1, 1, 6, 6, 6))
        flow = rng.normal(scale=3.0, size=(1, 3, 6, 6, 6))
        out = backward_warp(T.Tensor(src), T.Tensor(flow), 1.0)
        assert out.data.min() >= src.min() - 1e-12
        assert out.data.max() <= src.max() + 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dim mismatch"):
            backward_warp(T.Tensor(np.zeros((1, 1, 4, 4, 4))), T.Tensor(np.zeros((1, 3, 2, 2, 2))), 1.0)

    def test_flow_grad_matches_finite_difference(self):
        rng = np.random.default_rng(8)
        src0 = rng.normal(size=(1, 1, 5, 5, 5))
        flow0 = rng.uniform(0.1, 0.9, size=(1, 3, 5, 5, 5))

        def f(fv):
            return float(backward_warp(T.Tensor(src0), T.Tensor(fv), 1.0).data.sum())

        flow = T.Tensor(flow0, requires_grad=True)
        with T.Tape():
            T.backward(T.tsum(backward_warp(T.Tensor(src0), flow, 1.0)))
        assert rel_error(flow.grad, finite_diff_grad(f, flow0, h=1e-6)) < 1e-4

    def test_src_grad_matches_finite_difference(self):
        rng = np.random.default_rng(9)
        src0 = rng.normal(size=(1, 1, 4, 4, 4))
        flow0 = rng.uniform(-0.4, 0.4, size=(1, 3, 4, 4, 4))

        def f(sv):
            out = backward_warp(T.Tensor(sv), T.Tensor(flow0), 1.0)
            return float((out.data ** 2).sum())

        src = T.Tensor(src0, requires_grad=True)
        with T.Tape():
            out = backward_warp(src, T.Tensor(flow0), 1.0)
            T.backward(T.tsum(T.mul(out, out)))
        assert rel_error(src.grad, finite_diff_grad(f, src0, h=1e-6)) < 1e-5
