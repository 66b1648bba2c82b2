"""Main network: block plumbing, fusion, invariances, gradient flow."""
import numpy as np
import pytest

from hflow import tensor as T
from hflow.gradcheck import finite_diff_grad, rel_error
from hflow.hypernet import hypernet_forward, init_hypernet, slice_theta, theta_layout
from hflow.model import (BlockOutput, ModelConfig, block_forward, fuse, init_local_params,
                         model_forward)


def small_setup(dims=16, n_blocks=3, channels=(4, 3, 2), dtype="f64", seed=0,
                with_conv_stack=True):
    cfg = ModelConfig(n_blocks=n_blocks, block_channels=channels[:n_blocks], dtype=dtype)
    local = init_local_params(cfg, seed=seed, with_conv_stack=with_conv_stack)
    wb = {(b, l): (local[f"b{b}.conv{l}.w"], local[f"b{b}.conv{l}.b"])
          for b in range(cfg.n_blocks) for l in range(1, 6)}
    return cfg, local, wb


class TestModelConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.n_blocks == 3
        assert cfg.block_channels == (16, 12, 8)
        assert cfg.min_extent == 16

    def test_rejects_increasing_channels(self):
        with pytest.raises(ValueError, match="non-increasing"):
            ModelConfig(block_channels=(8, 12, 16))

    def test_rejects_single_block(self):
        with pytest.raises(ValueError, match="two blocks"):
            ModelConfig(n_blocks=1, block_channels=(8,))


class TestFuse:
    def test_half_mask_averages(self):
        a = T.Tensor(np.full((1, 1, 2, 2, 2), 1.0))
        b = T.Tensor(np.full((1, 1, 2, 2, 2), 3.0))
        m = T.Tensor(np.full((1, 1, 2, 2, 2), 0.5))
        assert np.allclose(fuse(a, b, m).data, 2.0)

    def test_zero_mask_selects_second(self):
        rng = np.random.default_rng(0)
        a = T.Tensor(rng.normal(size=(1, 1, 2, 2, 2)))
        b = T.Tensor(rng.normal(size=(1, 1, 2, 2, 2)))
        m = T.Tensor(np.zeros((1, 1, 2, 2, 2)))
        assert np.array_equal(fuse(a, b, m).data, b.data)

    def test_convexity_bounds(self):
        rng = np.random.default_rng(1)
        a = T.Tensor(rng.normal(size=(1, 1, 3, 3, 3)))
        b = T.Tensor(rng.normal(size=(1, 1, 3, 3, 3)))
        m = T.Tensor(rng.uniform(0, 1, size=(1, 1, 3, 3, 3)))
        out = fuse(a, b, m).data
        lo = np.minimum(a.data, b.data)
        hi = np.maximum(a.data, b.data)
        assert np.all(out >= lo - 1e-12)
        assert np.all(out <= hi + 1e-12)

    def test_mask_range_enforced(self):
        a = T.Tensor(np.zeros((1, 1, 2, 2, 2)))
        with pytest.raises(ValueError, match="mask"):
            fuse(a, a, T.Tensor(np.full((1, 1, 2, 2, 2), 1.5)))


class TestBlockForward:
    def test_zero_head_gives_zero_flows_and_half_mask(self):
        cfg, local, wb = small_setup()
        local["b0.head.w"].data[:] = 0.0
        local["b0.head.b"].data[:] = 0.0
        d = T.Tensor(np.random.default_rng(0).uniform(0, 1, (1, 1, 4, 4, 4)))
        t = T.Tensor(np.full((1, 1, 4, 4, 4), 0.5))
        out = block_forward(cfg, 0, d, d, t, None, wb, local, flow_scale=4.0)
        assert np.all(out.flow_ts.data == 0.0)
        assert np.all(out.flow_tu.data == 0.0)
        assert np.all(out.mask.data == 0.5)

    def test_output_resolution_matches_level(self):
        cfg, local, wb = small_setup()
        # level 0 of a 16^3 volume sits at 4^3
        d = T.Tensor(np.random.default_rng(1).uniform(0, 1, (2, 1, 4, 4, 4)))
        t = T.Tensor(np.full((2, 1, 4, 4, 4), 0.3))
        out = block_forward(cfg, 0, d, d, t, None, wb, local, flow_scale=4.0)
        assert out.flow_ts.shape == (2, 3, 4, 4, 4)
        assert out.mask.shape == (2, 1, 4, 4, 4)

    def test_resolution_mismatch_rejected(self):
        cfg, local, wb = small_setup()
        d = T.Tensor(np.zeros((1, 1, 8, 8, 8)))
        t = T.Tensor(np.zeros((1, 1, 8, 8, 8)))
        bad_prev = BlockOutput(T.Tensor(np.zeros((1, 3, 4, 4, 4))),
                               T.Tensor(np.zeros((1, 3, 4, 4, 4))),
                               T.Tensor(np.zeros((1, 1, 4, 4, 4))))
        with pytest.raises(ValueError, match="do not match level"):
            block_forward(cfg, 1, d, d, t, bad_prev, wb, local, flow_scale=4.0)


class TestModelForward:
    def test_constant_inputs_give_constant_interpolant(self):
        cfg, local, wb = small_setup()
        c = 0.37
        d = T.Tensor(np.full((1, 1, 16, 16, 16), c))
        out = model_forward(cfg, d, d, 0.5, wb, local, flow_scale=4.0)
        assert np.allclose(out.d_hat.data, c, atol=1e-12)

    def test_output_shapes_and_ranges(self):
        cfg, local, wb = small_setup()
        rng = np.random.default_rng(2)
        d_s = T.Tensor(rng.uniform(0, 1, (2, 1, 16, 16, 16)))
        d_u = T.Tensor(rng.uniform(0, 1, (2, 1, 16, 16, 16)))
        out = model_forward(cfg, d_s, d_u, [0.25, 0.75], wb, local, flow_scale=4.0)
        assert out.d_hat.shape == (2, 1, 16, 16, 16)
        assert out.f_hat.shape == (2, 3, 16, 16, 16)
        assert len(out.flows) == 3
        for f in out.flows:
            assert f.shape == (2, 3, 16, 16, 16)
            assert np.all(np.isfinite(f.data))
        assert out.mask_final.data.min() >= 0.0
        assert out.mask_final.data.max() <= 1.0
        assert np.all(np.isfinite(out.d_hat.data))

    def test_forced_full_mask_returns_warped_source(self):
        from hflow.warp import backward_warp

        cfg, local, wb = small_setup()
        rng = np.random.default_rng(3)
        d_s = T.Tensor(rng.uniform(0, 1, (1, 1, 16, 16, 16)))
        d_u = T.Tensor(rng.uniform(0, 1, (1, 1, 16, 16, 16)))
        out = model_forward(cfg, d_s, d_u, 0.5, wb, local, flow_scale=4.0)
        final = out.block_outputs[-1]
        ones = T.Tensor(np.ones_like(final.mask.data))
        fused = fuse(backward_warp(d_s, final.flow_ts, 4.0),
                     backward_warp(d_u, final.flow_tu, 4.0), ones)
        assert np.array_equal(fused.data, backward_warp(d_s, final.flow_ts, 4.0).data)

    def test_non_power_of_two_rejected(self):
        cfg, local, wb = small_setup()
        d = T.Tensor(np.zeros((1, 1, 12, 12, 12)))
        with pytest.raises(ValueError, match="pyramid construction failed"):
            model_forward(cfg, d, d, 0.5, wb, local, flow_scale=4.0)

    def test_endpoint_times_rejected(self):
        cfg, local, wb = small_setup()
        d = T.Tensor(np.zeros((1, 1, 16, 16, 16)))
        for t in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError, match="strictly inside"):
                model_forward(cfg, d, d, t, wb, local, flow_scale=4.0)

    def test_two_blocks_on_8cube(self):
        cfg, local, wb = small_setup(n_blocks=2, channels=(3, 2))
        rng = np.random.default_rng(4)
        d_s = T.Tensor(rng.uniform(0, 1, (1, 1, 8, 8, 8)))
        d_u = T.Tensor(rng.uniform(0, 1, (1, 1, 8, 8, 8)))
        out = model_forward(cfg, d_s, d_u, 0.5, wb, local, flow_scale=4.0)
        assert out.d_hat.shape == (1, 1, 8, 8, 8)
        assert len(out.flows) == 2


class TestGradientFlow:
    def test_every_parameter_receives_gradient(self):
        cfg = ModelConfig(n_blocks=2, block_channels=(3, 2), dtype="f64")
        local = init_local_params(cfg, seed=5)
        layout = theta_layout(cfg.block_channels)
        hyper = init_hypernet(2, layout, seed=6)
        rng = np.random.default_rng(7)
        # 16^3 keeps the coarsest activations populated enough that every
        # PReLU sees both signs on a generic batch
        d_s = T.Tensor(rng.uniform(0, 1, (1, 1, 16, 16, 16)))
        d_u = T.Tensor(rng.uniform(0, 1, (1, 1, 16, 16, 16)))
        d_gt = T.Tensor(rng.uniform(0, 1, (1, 1, 16, 16, 16)))
        f_gt = T.Tensor(rng.normal(0, 0.1, (1, 3, 16, 16, 16)))

        from hflow.loss import LossConfig, flow_loss, rec_loss, total_loss

        lcfg = LossConfig(n_blocks=2)
        with T.Tape():
            theta = hypernet_forward(hyper, np.array([0.3, 0.6]), training=False)
            wb = slice_theta(theta, layout)
            out = model_forward(cfg, d_s, d_u, 0.4, wb, local, flow_scale=4.0)
            loss = total_loss(rec_loss(out.d_hat, d_gt), flow_loss(out.flows, f_gt, lcfg), lcfg)
            T.backward(loss)
        for name, p in {**local, **hyper.params}.items():
            assert p.grad is not None, f"{name} received no gradient"
            assert np.any(p.grad != 0.0), f"{name} gradient identically zero"

    def test_hyper_weight_gradient_matches_finite_difference(self):
        cfg = ModelConfig(n_blocks=2, block_channels=(3, 2), dtype="f64")
        local = init_local_params(cfg, seed=8, with_conv_stack=True)
        wb = {(b, l): (local[f"b{b}.conv{l}.w"], local[f"b{b}.conv{l}.b"])
              for b in range(2) for l in range(1, 6)}
        rng = np.random.default_rng(9)
        d_s = T.Tensor(rng.uniform(0, 1, (1, 1, 8, 8, 8)))
        d_u = T.Tensor(rng.uniform(0, 1, (1, 1, 8, 8, 8)))
        w = local["b1.conv1.w"]

        def f(wv):
            old = w.data
            w.data = wv
            try:
                out = model_forward(cfg, d_s, d_u, 0.4, wb, local, flow_scale=4.0)
                return float(out.mask_final.data.sum())
            finally:
                w.data = old

        with T.Tape():
            out = model_forward(cfg, d_s, d_u, 0.4, wb, local, flow_scale=4.0)
            T.backward(T.tsum(out.mask_final))
        coords = list(range(0, w.data.size, 53))
        num = finite_diff_grad(f, w.data.copy(), h=1e-6, coords=coords)
        assert rel_error(w.grad, num, coords=coords) < 1e-4
