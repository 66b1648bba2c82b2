"""Synthetic parametric ensembles with analytic ground-truth flow, raw
volume IO, normalization statistics, and the windowed training sampler.

The synthetic family is a sum of Gaussian blobs advected by a global linear
map per step: rotation about the domain center (rate omega), uniform drift
along x (drift), and isotropic expansion about the center (growth). Under
the map x' = (1+growth) * R(omega) * (x-c) + c + u the blob centers move,
widths scale by (1+growth), and the density field is carried exactly, so
the per-voxel displacement field f(x) = x' - x is the exact ground truth.

Files are raw little-endian float32, x-fastest (index = (z*Y + y)*X + x);
arrays in memory are indexed [z, y, x]. Flow files interleave fx, fy, fz
per voxel.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PARAM_NAMES = ["omega", "drift", "growth"]
DEFAULT_WINDOW = 12


@dataclass
class SyntheticSpec:
    dims: tuple = (32, 32, 32)  # (X, Y, Z)
    timesteps: int = 20
    n_blobs: int = 4
    seed: int = 0
    omegas: tuple = (-0.22, 0.0, 0.22)  # rotation rate, rad/step
    drifts: tuple = (-0.35, 0.0, 0.35)  # drift along x, voxels/step
    growths: tuple = (0.0,)  # relative width growth per step

    def __post_init__(self):
        if any(d & (d - 1) or d < 4 for d in self.dims):
            raise ValueError("dims must be powers of two >= 4")
        if self.timesteps < 3:
            raise ValueError("need at least 3 timesteps")
        for axis in (self.omegas, self.drifts, self.growths):
            if len(axis) == 0:
                raise ValueError("parameter grid axis is empty")

    def to_dict(self):
        return {"dims": list(self.dims), "timesteps": self.timesteps, "n_blobs": self.n_blobs,
                "seed": self.seed, "omegas": list(self.omegas), "drifts": list(self.drifts),
                "growths": list(self.growths)}

    @classmethod
    def from_dict(cls, d):
        return cls(dims=tuple(d["dims"]), timesteps=d["timesteps"], n_blobs=d["n_blobs"],
                   seed=d["seed"], omegas=tuple(d["omegas"]), drifts=tuple(d["drifts"]),
                   growths=tuple(d["growths"]))


@dataclass
class EnsembleManifest:
    """On-disk description of an ensemble: members, dims, parameter values,
    normalization statistics, and member-disjoint train/val/test splits."""

    dims: tuple
    members: list
    param_names: list
    param_stats: dict
    normalization: dict
    splits: dict
    seed: int
    root: Path = field(default=None, repr=False)

    def save(self, path):
        payload = {"dims": list(self.dims), "members": self.members,
                   "param_names": self.param_names,
                   "param_stats": {k: list(v) for k, v in self.param_stats.items()},
                   "normalization": self.normalization, "splits": self.splits, "seed": self.seed}
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        d = json.loads(path.read_text())
        m = cls(dims=tuple(d["dims"]), members=d["members"], param_names=d["param_names"],
                param_stats={k: tuple(v) for k, v in d["param_stats"].items()},
                normalization=d["normalization"], splits=d["splits"], seed=d["seed"],
                root=path.parent)
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            if set(m.splits[a]) & set(m.splits[b]):
                raise ValueError("splits share members")
        return m

    def member(self, member_id):
        for m in self.members:
            if m["id"] == member_id:
                return m
        raise KeyError(f"unknown member {member_id}")

    def params_vector(self, member):
        if isinstance(member, str):
            member = self.member(member)
        return np.array([member["params"][n] for n in self.param_names])

    def normalize_params(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        lo = np.array([self.param_stats[n][0] for n in self.param_names])
        hi = np.array([self.param_stats[n][1] for n in self.param_names])
        return (raw - lo) / (hi - lo)

    @property
    def flow_scale(self):
        return self.normalization["flow_scale"]

    def normalize_density(self, vol):
        lo = self.normalization["density_min"]
        hi = self.normalization["density_max"]
        return (vol - lo) / (hi - lo)

    def denormalize_density(self, vol):
        lo = self.normalization["density_min"]
        hi = self.normalization["density_max"]
        return vol * (hi - lo) + lo


def save_volume(vol, path):
    """Write [Z,Y,X] (or [Z,Y,X,3] for flow) as little-endian f32, x-fastest."""
    np.ascontiguousarray(vol).astype("<f4").tofile(path)


def load_volume(path, dims):
    """Read one scalar volume; dims is (X,Y,Z); returns [Z,Y,X]."""
    x, y, z = dims
    data = np.fromfile(path, dtype="<f4")
    if data.size != x * y * z:
        raise ValueError(f"truncated volume {path}: {data.size} values, expected {x * y * z}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"non-finite values in {path}")
    return data.reshape(z, y, x)


def load_flow(path, dims):
    """Read one flow volume (fx,fy,fz interleaved); returns [3,Z,Y,X]."""
    x, y, z = dims
    data = np.fromfile(path, dtype="<f4")
    if data.size != x * y * z * 3:
        raise ValueError(f"truncated flow volume {path}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"non-finite values in {path}")
    return np.moveaxis(data.reshape(z, y, x, 3), -1, 0)


def _coordinate_grids(dims):
    x, y, z = dims
    gz, gy, gx = np.meshgrid(np.arange(z, dtype=np.float64), np.arange(y, dtype=np.float64),
                             np.arange(x, dtype=np.float64), indexing="ij")
    return gz, gy, gx


def _blob_config(spec):
    """Shared initial blob placement, identical for every member.

    Widths are fixed in voxels (not domain fractions) so interpolation
    error of the analytic advection stays resolution-independent.
    """
    gen = np.random.Generator(np.random.PCG64(spec.seed))
    x, y, z = spec.dims
    c = np.array([(x - 1) / 2.0, (y - 1) / 2.0, (z - 1) / 2.0])
    radius = 0.14 * x
    blobs = []
    for k in range(spec.n_blobs):
        ang = gen.uniform(0, 2 * np.pi)
        r = radius * gen.uniform(0.7, 1.0)
        pos = c + np.array([r * np.cos(ang), r * np.sin(ang), gen.uniform(-0.08, 0.08) * z])
        sigma = gen.uniform(1.7, 2.1)
        amp = gen.uniform(0.7, 1.0)
        blobs.append({"pos": pos, "sigma": sigma, "amp": amp})
    return c, blobs


def _density_field(dims, blobs):
    gz, gy, gx = _coordinate_grids(dims)
    out = np.zeros_like(gz)
    for blob in blobs:
        px, py, pz = blob["pos"]
        r2 = (gx - px) ** 2 + (gy - py) ** 2 + (gz - pz) ** 2
        out += blob["amp"] * np.exp(-r2 / (2.0 * blob["sigma"] ** 2))
    return out


def _flow_field(dims, center, omega, drift, growth):
    """Per-voxel displacement of the global linear map, components (fx,fy,fz)."""
    gz, gy, gx = _coordinate_grids(dims)
    cx, cy, cz = center
    s = 1.0 + growth
    rx = gx - cx
    ry = gy - cy
    rz = gz - cz
    fx = (s * np.cos(omega) - 1.0) * rx - s * np.sin(omega) * ry + drift
    fy = s * np.sin(omega) * rx + (s * np.cos(omega) - 1.0) * ry
    fz = (s - 1.0) * rz
    return np.stack([fx, fy, fz])


def _advance(blobs, center, omega, drift, growth):
    s = 1.0 + growth
    cosw, sinw = np.cos(omega), np.sin(omega)
    out = []
    for blob in blobs:
        rx, ry, rz = blob["pos"] - center
        pos = center + np.array([s * (cosw * rx - sinw * ry) + drift,
                                 s * (sinw * rx + cosw * ry),
                                 s * rz])
        out.append({"pos": pos, "sigma": s * blob["sigma"], "amp": blob["amp"]})
    return out


def _assign_splits(member_ids):
    if len(member_ids) < 3:
        return {"train": list(member_ids), "val": [], "test": []}
    splits = {"train": [], "val": [], "test": []}
    cadence = ["train", "val", "train", "test"]
    for i, mid in enumerate(member_ids):
        splits[cadence[i % 4]].append(mid)
    return splits


def generate_synthetic(spec, out_dir):
    """Write density and flow volumes for every parameter combination plus
    a manifest with train-split normalization statistics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    center, blobs0 = _blob_config(spec)

    members = []
    combos = [(o, d, g) for o in spec.omegas for d in spec.drifts for g in spec.growths]
    if not combos:
        raise ValueError("parameter grid is empty")
    for idx, (omega, drift, growth) in enumerate(combos):
        mid = f"m{idx:03d}"
        mdir = out_dir / mid
        mdir.mkdir(exist_ok=True)
        density_files = []
        flow_files = []
        blobs = blobs0
        flow = _flow_field(spec.dims, center, omega, drift, growth).astype(np.float32)
        for t in range(spec.timesteps):
            dpath = f"{mid}/density_{t:04d}.raw"
            fpath = f"{mid}/flow_{t:04d}.raw"
            save_volume(_density_field(spec.dims, blobs), out_dir / dpath)
            # the map is time-invariant, so the flow is too; files stay per-step
            save_volume(np.moveaxis(flow, 0, -1), out_dir / fpath)
            density_files.append(dpath)
            flow_files.append(fpath)
            blobs = _advance(blobs, center, omega, drift, growth)
        members.append({"id": mid,
                        "params": {"omega": omega, "drift": drift, "growth": growth},
                        "timesteps": spec.timesteps,
                        "density_files": density_files, "flow_files": flow_files})

    param_stats = {}
    for name, axis in zip(PARAM_NAMES, (spec.omegas, spec.drifts, spec.growths)):
        lo, hi = min(axis), max(axis)
        if lo == hi:  # constant axis still needs a non-degenerate range
            lo, hi = lo - 0.5, hi + 0.5
        param_stats[name] = (float(lo), float(hi))

    splits = _assign_splits([m["id"] for m in members])
    manifest = EnsembleManifest(dims=spec.dims, members=members, param_names=PARAM_NAMES,
                                param_stats=param_stats, normalization={}, splits=splits,
                                seed=spec.seed, root=out_dir)
    manifest.normalization = compute_normalization(manifest, splits["train"])
    manifest.save(out_dir / "manifest.json")
    return manifest


def compute_normalization(manifest, train_ids, window=DEFAULT_WINDOW):
    """Density min/max and flow scale over the training split only.

    flow_scale bounds the supervision targets (gap * one-step flow), so the
    stored one-step maximum is multiplied by the largest gap inside the
    training window.
    """
    lo, hi = np.inf, -np.inf
    fmax = 0.0
    for mid in train_ids:
        m = manifest.member(mid)
        for dpath in m["density_files"]:
            vol = load_volume(manifest.root / dpath, manifest.dims)
            lo = min(lo, float(vol.min()))
            hi = max(hi, float(vol.max()))
        for fpath in m["flow_files"]:
            flow = load_flow(manifest.root / fpath, manifest.dims)
            fmax = max(fmax, float(np.abs(flow).max()))
    if not train_ids:
        raise ValueError("empty training split")
    if lo >= hi:
        raise ValueError("degenerate normalization: constant density")
    if fmax == 0.0:
        fmax = 1.0  # static ensemble: any positive scale works
    return {"density_min": lo, "density_max": hi,
            "flow_scale": float(fmax * (window - 1)), "window": window}


@dataclass
class Sample:
    d_s: np.ndarray
    d_u: np.ndarray
    d_t_gt: np.ndarray
    f_t_gt: np.ndarray  # supervision flow, normalized, [3,Z,Y,X]
    t_norm: float
    params: np.ndarray  # normalized parameter vector
    member_id: str
    s: int
    t: int
    u: int


class EnsembleData:
    """Manifest plus lazily cached normalized volumes."""

    def __init__(self, manifest):
        self.manifest = manifest
        self._density = {}
        self._flow = {}

    def density(self, member_id, t):
        key = (member_id, t)
        if key not in self._density:
            m = self.manifest.member(member_id)
            vol = load_volume(self.manifest.root / m["density_files"][t], self.manifest.dims)
            self._density[key] = self.manifest.normalize_density(vol.astype(np.float64))
        return self._density[key]

    def one_step_flow(self, member_id, t):
        key = (member_id, t)
        if key not in self._flow:
            m = self.manifest.member(member_id)
            self._flow[key] = load_flow(self.manifest.root / m["flow_files"][t],
                                        self.manifest.dims).astype(np.float64)
        return self._flow[key]

    def supervision_flow(self, member_id, t, u):
        """Displacement from t to u in normalized units."""
        return (u - t) * self.one_step_flow(member_id, t) / self.manifest.flow_scale

    def norm_params(self, member_id):
        return self.manifest.normalize_params(self.manifest.params_vector(member_id))

    def sample_training_pair(self, member_id, rng, window=DEFAULT_WINDOW):
        """Draw (s, t, u) with 2 <= u-s <= window and s < t < u."""
        m = self.manifest.member(member_id)
        steps = m["timesteps"]
        if steps < 3:
            raise ValueError(f"member {member_id} too short to sample")
        s = int(rng.integers(0, steps - 2))
        max_gap = min(window, steps - 1 - s)
        g = int(rng.integers(2, max_gap + 1))
        u = s + g
        t = int(rng.integers(s + 1, u))
        return Sample(d_s=self.density(member_id, s), d_u=self.density(member_id, u),
                      d_t_gt=self.density(member_id, t),
                      f_t_gt=self.supervision_flow(member_id, t, u),
                      t_norm=(t - s) / g, params=self.norm_params(member_id),
                      member_id=member_id, s=s, t=t, u=u)
