"""Hypernetwork: layout tiling, forward determinism, gradients, init scale."""
import numpy as np
import pytest

from hflow import tensor as T
from hflow.gradcheck import finite_diff_grad, rel_error
from hflow.hypernet import (SimParams, hypernet_forward, init_hypernet, slice_theta,
                            theta_layout)


class TestSimParams:
    def test_normalization(self):
        sp = SimParams.from_raw(["a", "b"], [4.0, 0.1], {"a": (2.0, 6.0), "b": (0.0, 0.2)})
        assert sp.normalized.tolist() == [0.5, 0.5]
        assert sp.in_range

    def test_out_of_range_flagged(self):
        sp = SimParams.from_raw(["a"], [7.0], {"a": (2.0, 6.0)})
        assert not sp.in_range

    def test_degenerate_range(self):
        with pytest.raises(ValueError, match="degenerate"):
            SimParams.from_raw(["a"], [1.0], {"a": (2.0, 2.0)})


class TestThetaLayout:
    def test_single_kernel_count(self):
        layout = theta_layout([1], in_channels=1, kernel=3, hyper_layers=1)
        assert layout.total == 27 + 1

    def test_desk_config_total_matches_independent_sum(self):
        widths = (16, 12, 8)
        layout = theta_layout(widths, in_channels=10, kernel=3)
        # independent summation: per block, layer 1 maps 10 channels, the
        # rest map c->c; each layer has c biases
        expected = 0
        for c in widths:
            expected += c * 10 * 27 + c
            expected += 4 * (c * c * 27 + c)
        assert layout.total == expected

    def test_slices_tile_exactly(self):
        layout = theta_layout((4, 2), in_channels=10, kernel=3)
        covered = []
        for e in layout.entries:
            covered.append((e.w_offset, e.b_offset))
            covered.append((e.b_offset, e.end))
        covered.sort()
        assert covered[0][0] == 0
        assert covered[-1][1] == layout.total
        for (a, b), (c, d) in zip(covered, covered[1:]):
            assert b == c  # adjacent, no gaps or overlap

    def test_offsets_strictly_increasing(self):
        layout = theta_layout((4, 2), in_channels=10, kernel=3)
        offsets = [e.w_offset for e in layout.entries]
        assert offsets == sorted(offsets)
        assert len(set(offsets)) == len(offsets)


class TestSliceTheta:
    def test_roundtrip_flatten(self):
        layout = theta_layout((2, 2), in_channels=3, kernel=3)
        theta = T.Tensor(np.arange(layout.total, dtype=np.float64))
        parts = slice_theta(theta, layout)
        flat = np.concatenate([np.concatenate([w.data.reshape(-1), b.data])
                               for (w, b) in parts.values()])
        assert np.array_equal(flat, theta.data)

    def test_single_layer_is_reshape(self):
        layout = theta_layout([2], in_channels=1, kernel=3, hyper_layers=1)
        theta = T.Tensor(np.arange(layout.total, dtype=np.float64))
        (w, b) = slice_theta(theta, layout)[(0, 1)]
        assert w.shape == (2, 1, 3, 3, 3)
        assert np.array_equal(w.data.reshape(-1), theta.data[:54])
        assert np.array_equal(b.data, theta.data[54:])

    def test_length_mismatch(self):
        layout = theta_layout([2], in_channels=1, kernel=3, hyper_layers=1)
        with pytest.raises(ValueError, match="length"):
            slice_theta(T.Tensor(np.zeros(layout.total + 1)), layout)

    def test_grad_flows_into_theta(self):
        layout = theta_layout([1], in_channels=1, kernel=3, hyper_layers=1)
        theta = T.Tensor(np.ones(layout.total), requires_grad=True)
        with T.Tape():
            (w, b) = slice_theta(theta, layout)[(0, 1)]
            T.backward(T.tsum(T.mul(w, w)))
        assert theta.grad is not None
        assert np.allclose(theta.grad[:27], 2.0)
        assert np.allclose(theta.grad[27:], 0.0)


class TestHypernetForward:
    def _setup(self, param_dim=3, seed=0):
        layout = theta_layout((4, 2), in_channels=10, kernel=3)
        return layout, init_hypernet(param_dim, layout, seed=seed)

    def test_inference_deterministic(self):
        layout, state = self._setup()
        p = np.array([0.2, 0.5, 0.8])
        a = hypernet_forward(state, p, training=False)
        b = hypernet_forward(state, p, training=False)
        assert np.array_equal(a.data, b.data)
        assert a.shape == (layout.total,)

    def test_distinct_params_distinct_theta(self):
        _, state = self._setup()
        a = hypernet_forward(state, np.array([0.1, 0.5, 0.5]), training=False)
        b = hypernet_forward(state, np.array([0.9, 0.5, 0.5]), training=False)
        assert not np.array_equal(a.data, b.data)

    def test_param_count_mismatch(self):
        _, state = self._setup()
        with pytest.raises(ValueError, match="parameters"):
            hypernet_forward(state, np.array([0.5, 0.5]))

    def test_dropout_changes_training_output_only(self):
        _, state = self._setup()
        p = np.array([0.2, 0.4, 0.6])
        base = hypernet_forward(state, p, training=False)
        tr1 = hypernet_forward(state, p, training=True, seed=1)
        tr2 = hypernet_forward(state, p, training=True, seed=1)
        tr3 = hypernet_forward(state, p, training=True, seed=2)
        assert np.array_equal(tr1.data, tr2.data)
        assert not np.array_equal(tr1.data, tr3.data)
        assert not np.array_equal(base.data, tr1.data)

    def test_grad_wrt_first_linear_matches_finite_difference(self):
        layout, state = self._setup(param_dim=2, seed=3)
        p = np.array([0.3, 0.7])
        w1 = state.params["mlp1.w"]

        def f(wv):
            old = w1.data
            w1.data = wv
            try:
                return float(hypernet_forward(state, p, training=False).data.sum())
            finally:
                w1.data = old

        with T.Tape():
            theta = hypernet_forward(state, p, training=False)
            T.backward(T.tsum(theta))
        coords = list(range(0, w1.data.size, 7))
        num = finite_diff_grad(f, w1.data.copy(), h=1e-6, coords=coords)
        assert rel_error(w1.grad, num, coords=coords) < 1e-4


class TestHeadInit:
    def test_generated_kernels_near_kaiming_scale(self):
        layout = theta_layout((16, 12, 8), in_channels=10, kernel=3)
        ratios = []
        for seed in range(10):
            state = init_hypernet(3, layout, seed=seed)
            theta = hypernet_forward(state, np.array([0.5, 0.5, 0.5]), training=False)
            for e in layout.entries:
                kern = theta.data[e.w_offset:e.b_offset]
                fan_in = int(np.prod(e.w_shape[1:]))
                ratios.append(kern.std() / np.sqrt(2.0 / fan_in))
        ratios = np.array(ratios)
        assert np.all(ratios > 0.5)
        assert np.all(ratios < 2.0)

    def test_head_bias_dominates_at_zero_weights(self):
        layout = theta_layout((4,), in_channels=10, kernel=3)
        state = init_hypernet(3, layout, seed=0)
        state.params["head.w"].data[:] = 0.0
        theta = hypernet_forward(state, np.array([0.1, 0.2, 0.3]), training=False)
        assert np.array_equal(theta.data, state.params["head.b"].data)
