"""Synthetic generation, raw IO, normalization, and the pair sampler."""
import numpy as np
import pytest

from hflow import tensor as T
from hflow.data import (DEFAULT_WINDOW, EnsembleData, EnsembleManifest, SyntheticSpec,
                        generate_synthetic, load_flow, load_volume, save_volume)
from hflow.metrics import psnr
from hflow.warp import backward_warp


@pytest.fixture(scope="module")
def small_ensemble(tmp_path_factory):
    out = tmp_path_factory.mktemp("ens")
    spec = SyntheticSpec(dims=(16, 16, 16), timesteps=8, seed=11)
    return generate_synthetic(spec, out)


class TestVolumeIO:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        vol = rng.uniform(0, 1, (8, 8, 8)).astype(np.float32).astype(np.float64)
        save_volume(vol, tmp_path / "v.raw")
        back = load_volume(tmp_path / "v.raw", (8, 8, 8))
        assert np.array_equal(back, vol.astype(np.float32))

    def test_wrong_length_rejected(self, tmp_path):
        np.zeros(10, dtype="<f4").tofile(tmp_path / "bad.raw")
        with pytest.raises(ValueError, match="truncated"):
            load_volume(tmp_path / "bad.raw", (8, 8, 8))

    def test_nonfinite_rejected(self, tmp_path):
        arr = np.zeros(8, dtype="<f4")
        arr[3] = np.nan
        arr.tofile(tmp_path / "nan.raw")
        with pytest.raises(ValueError, match="non-finite"):
            load_volume(tmp_path / "nan.raw", (2, 2, 2))

    def test_x_fastest_ordering(self, tmp_path):
        # value at (x=1, y=0, z=0) must be the second float in the file
        x_extent, y_extent, z_extent = 4, 3, 2
        vol = np.zeros((z_extent, y_extent, x_extent))
        vol[0, 0, 1] = 7.0  # [z,y,x] indexing
        save_volume(vol, tmp_path / "o.raw")
        flat = np.fromfile(tmp_path / "o.raw", dtype="<f4")
        assert flat[1] == 7.0
        # and (x=0, y=1, z=0) is the X-th float
        vol2 = np.zeros((z_extent, y_extent, x_extent))
        vol2[0, 1, 0] = 5.0
        save_volume(vol2, tmp_path / "o2.raw")
        flat2 = np.fromfile(tmp_path / "o2.raw", dtype="<f4")
        assert flat2[x_extent] == 5.0


class TestGeneration:
    def test_static_member_is_constant_with_zero_flow(self, tmp_path):
        spec = SyntheticSpec(dims=(16, 16, 16), timesteps=5, seed=1,
                             omegas=(0.0,), drifts=(0.0,), growths=(0.0,))
        man = generate_synthetic(spec, tmp_path)
        assert len(man.members) == 1
        d0 = load_volume(man.root / man.members[0]["density_files"][0], man.dims)
        for t in range(1, 5):
            dt = load_volume(man.root / man.members[0]["density_files"][t], man.dims)
            assert np.array_equal(dt, d0)
            flow = load_flow(man.root / man.members[0]["flow_files"][t], man.dims)
            assert np.all(flow == 0.0)

    def test_uniform_translation_flow(self, tmp_path):
        spec = SyntheticSpec(dims=(16, 16, 16), timesteps=4, seed=1,
                             omegas=(0.0,), drifts=(1.0,), growths=(0.0,))
        man = generate_synthetic(spec, tmp_path)
        flow = load_flow(man.root / man.members[0]["flow_files"][0], man.dims)
        assert np.allclose(flow[0], 1.0)  # fx = 1 voxel everywhere
        assert np.all(flow[1] == 0.0)
        assert np.all(flow[2] == 0.0)

    def test_blob_mass_conserved_without_growth(self, tmp_path):
        spec = SyntheticSpec(dims=(32, 32, 32), timesteps=10, seed=5,
                             omegas=(0.09,), drifts=(0.0,), growths=(0.0,))
        man = generate_synthetic(spec, tmp_path)
        masses = []
        for t in range(10):
            vol = load_volume(man.root / man.members[0]["density_files"][t], man.dims)
            masses.append(vol.sum())
        masses = np.array(masses)
        assert np.abs(masses / masses[0] - 1.0).max() < 0.01

    def test_deterministic_from_seed(self, tmp_path):
        spec = SyntheticSpec(dims=(16, 16, 16), timesteps=4, seed=9,
                             omegas=(0.05,), drifts=(0.1,), growths=(0.0,))
        man_a = generate_synthetic(spec, tmp_path / "a")
        man_b = generate_synthetic(spec, tmp_path / "b")
        for ma, mb in zip(man_a.members, man_b.members):
            for fa, fb in zip(ma["density_files"], mb["density_files"]):
                assert (man_a.root / fa).read_bytes() == (man_b.root / fb).read_bytes()

    def test_gt_flow_warp_consistency(self, small_ensemble):
        """Backward-warping the next frame by the one-step flow recovers
        the current frame on the interior."""
        data = EnsembleData(small_ensemble)
        inner = (slice(2, -2),) * 3
        for mid in small_ensemble.splits["train"]:
            d0 = data.density(mid, 2)
            d1 = data.density(mid, 3)
            flow = data.one_step_flow(mid, 2)
            warped = backward_warp(T.Tensor(d1[None, None]), T.Tensor(flow[None]), 1.0)
            score = psnr(warped.data[0, 0][inner], d0[inner])
            assert score >= 40.0, f"{mid}: {score:.2f} dB"


class TestManifest:
    def test_roundtrip(self, small_ensemble, tmp_path):
        small_ensemble.save(tmp_path / "manifest.json")
        back = EnsembleManifest.load(tmp_path / "manifest.json")
        assert back.dims == small_ensemble.dims
        assert back.splits == small_ensemble.splits
        assert back.normalization == small_ensemble.normalization

    def test_splits_disjoint(self, small_ensemble):
        s = small_ensemble.splits
        assert not (set(s["train"]) & set(s["val"]))
        assert not (set(s["train"]) & set(s["test"]))
        assert not (set(s["val"]) & set(s["test"]))
        assert s["train"] and s["val"] and s["test"]

    def test_normalized_training_densities_span_unit_interval(self, small_ensemble):
        data = EnsembleData(small_ensemble)
        lo, hi = np.inf, -np.inf
        for mid in small_ensemble.splits["train"]:
            m = small_ensemble.member(mid)
            for t in range(m["timesteps"]):
                d = data.density(mid, t)
                lo = min(lo, d.min())
                hi = max(hi, d.max())
        assert abs(lo) < 1e-12
        assert abs(hi - 1.0) < 1e-12

    def test_density_normalization_affine(self, small_ensemble):
        # a value halfway between min and max normalizes to 0.5
        norm = small_ensemble.normalization
        mid_value = (norm["density_min"] + norm["density_max"]) / 2
        assert abs(small_ensemble.normalize_density(mid_value) - 0.5) < 1e-12

    def test_flow_scale_covers_supervision(self, small_ensemble):
        data = EnsembleData(small_ensemble)
        window = small_ensemble.normalization["window"]
        worst = 0.0
        for mid in small_ensemble.splits["train"]:
            steps = small_ensemble.member(mid)["timesteps"]
            for t in range(steps - 1):
                u = min(steps - 1, t + window - 1)
                sup = data.supervision_flow(mid, t, u)
                worst = max(worst, np.abs(sup).max())
        assert worst <= 1.0 + 1e-9


class TestSampler:
    def test_forced_triple_on_three_steps(self, tmp_path):
        spec = SyntheticSpec(dims=(8, 8, 8), timesteps=3, seed=2,
                             omegas=(0.05,), drifts=(0.0,), growths=(0.0,))
        man = generate_synthetic(spec, tmp_path)
        data = EnsembleData(man)
        rng = np.random.default_rng(0)
        s = data.sample_training_pair("m000", rng)
        assert (s.s, s.t, s.u) == (0, 1, 2)
        assert s.t_norm == 0.5

    def test_gap_and_interiority_over_many_draws(self, small_ensemble):
        data = EnsembleData(small_ensemble)
        rng = np.random.default_rng(1)
        for _ in range(2000):
            s = data.sample_training_pair("m000", rng, window=DEFAULT_WINDOW)
            assert s.s < s.t < s.u
            assert 2 <= s.u - s.s <= DEFAULT_WINDOW
            assert 0.0 < s.t_norm < 1.0

    def test_too_short_member_rejected(self, small_ensemble):
        data = EnsembleData(small_ensemble)
        data.manifest.member("m000")["timesteps"] = 2
        try:
            with pytest.raises(ValueError, match="too short"):
                data.sample_training_pair("m000", np.random.default_rng(0))
        finally:
            data.manifest.member("m000")["timesteps"] = 8
