"""Parameter-space tooling: similarity matrices over generated weights vs
data, the triplet agreement score between the two, and parameter-driven
synthesis sweeps with fixed input volumes."""
import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class SimilarityMatrix:
    member_ids: list
    values: np.ndarray  # square, symmetric, unit diagonal

    def __post_init__(self):
        m = self.values
        if m.shape != (len(self.member_ids), len(self.member_ids)):
            raise ValueError("matrix does not match member list")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["member"] + self.member_ids)
            for mid, row in zip(self.member_ids, self.values):
                wr.writerow([mid] + [f"{v:.10f}" for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        ids = rows[0][1:]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(ids, values)


def _cosine(a, b):
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm vector in cosine similarity")
    return float(np.dot(a, b) / (na * nb))


def weight_similarity(trainer, member_ids):
    """Pairwise cosine similarity of the hypernetwork outputs per member."""
    thetas = [np.asarray(trainer.generated_theta(trainer.data.norm_params(mid)),
                         dtype=np.float64) for mid in member_ids]
    n = len(member_ids)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = _cosine(thetas[i], thetas[j])
    return SimilarityMatrix(list(member_ids), out)


def data_similarity(data, member_ids, n_timesteps=8):
    """Mean Pearson correlation of density volumes over shared timesteps."""
    manifest = data.manifest
    steps = min(manifest.member(mid)["timesteps"] for mid in member_ids)
    picks = np.unique(np.linspace(0, steps - 1, n_timesteps).astype(int))
    series = {}
    for mid in member_ids:
        vols = []
        for t in picks:
            v = data.density(mid, int(t)).reshape(-1)
            if v.std() == 0.0:
                raise ValueError(f"constant volume for {mid} at t={t}: correlation undefined")
            vols.append(v)
        series[mid] = vols
    n = len(member_ids)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            cs = [float(np.corrcoef(series[member_ids[i]][k], series[member_ids[j]][k])[0, 1])
                  for k in range(len(picks))]
            out[i, j] = out[j, i] = float(np.mean(cs))
    return SimilarityMatrix(list(member_ids), out)


def parameter_distance(manifest, member_ids):
    """Euclidean distance between normalized parameter vectors; exported as
    an extra, clearly distinct from the volume-based similarity."""
    vecs = [manifest.normalize_params(manifest.params_vector(mid)) for mid in member_ids]
    n = len(member_ids)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = float(np.linalg.norm(vecs[i] - vecs[j]))
    return SimilarityMatrix(list(member_ids), out)


def triplet_correlation(w_sim, d_sim):
    """Fraction of ordered (anchor, closer, farther) triplets whose data-
    space ordering is preserved in weight space; ties in data skipped."""
    if w_sim.member_ids != d_sim.member_ids:
        raise ValueError("matrices must share member ordering")
    n = len(w_sim.member_ids)
    if n < 3:
        raise ValueError("need at least 3 members for triplets")
    w = w_sim.values
    d = d_sim.values
    agree = 0
    total = 0
    for a in range(n):
        for p in range(n):
            if p == a:
                continue
            for q in range(n):
                if q == a or q == p:
                    continue
                if d[a, p] > d[a, q]:
                    total += 1
                    if w[a, p] > w[a, q]:
                        agree += 1
    if total == 0:
        raise ValueError("all data similarities tied; no triplets")
    return agree / total


def param_sweep_synthesis(trainer, d_s, d_u, t_norm, params_list):
    """One inference per raw parameter vector with the inputs held fixed.

    Returns a list of dicts with the raw vector, an in-range flag (the
    sweep may extrapolate beyond the training grid), and the model output.
    """
    manifest = trainer.manifest
    results = []
    for raw in params_list:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (len(manifest.param_names),):
            raise ValueError(f"expected {len(manifest.param_names)} parameters")
        norm = manifest.normalize_params(raw)
        in_range = bool(np.all((norm >= -1e-9) & (norm <= 1 + 1e-9)))
        out = trainer.infer(d_s[None, None], d_u[None, None], t_norm, norm)
        results.append({"params": raw, "normalized": norm, "in_range": in_range,
                        "output": out})
    return results
