"""Joint optimization of the hypernetwork and the main network's own
parameters with AdamW and cosine learning-rate annealing, plus binary
checkpointing that resumes bit-exactly.

Batches are member-homogeneous (all samples in a batch share one ensemble
member), so the hypernetwork runs once per batch. An epoch is one shuffled
pass over a fixed pool of pre-sampled (s,t,u) triples.
"""
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .data import DEFAULT_WINDOW, EnsembleData
from .hypernet import hypernet_forward, init_hypernet, slice_theta, theta_layout
from .loss import LossConfig, flow_loss, rec_loss, total_loss
from .model import ModelConfig, STACK_CHANNELS, init_local_params, model_forward
from .tensor import Tape, Tensor, backward

CHECKPOINT_MAGIC = b"HFLN"
CHECKPOINT_VERSION = 1
ABLATIONS = ("full", "no_flow", "no_rec", "no_hyper")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    epochs: int = 200
    batch: int = 4
    weight_decay: float = 1e-2
    patience: int = 20
    seed: int = 0
    ablation: str = "full"
    pool_size: int = 512
    window: int = DEFAULT_WINDOW
    n_val_samples: int = 16
    lambda_flow: float = 0.2
    gamma: float = 0.8
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr_end >= self.lr_start:
            raise ValueError("lr_end must be below lr_start")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")

    def loss_config(self):
        return LossConfig(lambda_flow=self.lambda_flow, gamma=self.gamma,
                          n_blocks=self.model.n_blocks,
                          enable_rec=self.ablation != "no_rec",
                          enable_flow=self.ablation != "no_flow")

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("lr_start", "lr_end", "epochs", "batch",
                                           "weight_decay", "patience", "seed", "ablation",
                                           "pool_size", "window", "n_val_samples",
                                           "lambda_flow", "gamma")}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


def cosine_lr(step, total_steps, lr_start, lr_end):
    """Annealed learning rate; lr_start at step 0, lr_end at the last step."""
    if total_steps <= 0:
        return lr_end
    step = min(max(step, 0), total_steps)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(params, m, v, lr, step, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
               scratch=None):
    """Decoupled-weight-decay Adam update, in place.

    params: name -> Tensor with populated .grad (missing grads count as 0);
    m, v: name -> moment arrays; step is 1-based for bias correction. All
    arithmetic runs through preallocated scratch buffers: the largest
    parameter here is the hypernetwork head, where temporaries would cost
    more than the GEMMs.
    """
    b1, b2 = betas
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    if scratch is None:
        scratch = {}
    for name, p in params.items():
        g = p.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"diverged: non-finite gradient for {name}")
        mk, vk = m[name], v[name]
        s = scratch.get(name)
        if s is None:
            s = scratch[name] = np.empty_like(p.data)
        np.multiply(mk, b1, out=mk)
        np.multiply(vk, b2, out=vk)
        if g is not None:
            np.multiply(g, 1.0 - b1, out=s)
            np.add(mk, s, out=mk)
            np.multiply(g, g, out=s)
            np.multiply(s, 1.0 - b2, out=s)
            np.add(vk, s, out=vk)
        np.multiply(vk, 1.0 / c2, out=s)
        np.sqrt(s, out=s)
        np.add(s, eps, out=s)
        np.divide(mk, s, out=s)
        if weight_decay:
            np.multiply(p.data, 1.0 - lr * weight_decay, out=p.data)
        np.multiply(s, lr / c1, out=s)
        np.subtract(p.data, s, out=p.data)


def manifest_digest(manifest):
    path = Path(manifest.root) / "manifest.json"
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_checkpoint(path, header, tensors):
    """Binary: magic, version, JSON header, then length-prefixed named
    tensors as little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        hb = json.dumps(header, sort_keys=True).encode()
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(struct.pack("<Q", arr.nbytes))
            fh.write(arr.tobytes())


def load_checkpoint_file(path):
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        hlen = struct.unpack("<Q", fh.read(8))[0]
        header = json.loads(fh.read(hlen).decode())
        count = struct.unpack("<Q", fh.read(8))[0]
        tensors = {}
        for _ in range(count):
            nlen = struct.unpack("<Q", fh.read(8))[0]
            name = fh.read(nlen).decode()
            ndim = struct.unpack("<Q", fh.read(8))[0]
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            nbytes = struct.unpack("<Q", fh.read(8))[0]
            tensors[name] = np.frombuffer(fh.read(nbytes), dtype="<f8").reshape(shape).copy()
        return header, tensors


class Trainer:
    """Holds parameters, optimizer moments, the sample pool, and counters."""

    def __init__(self, cfg, manifest):
        self.cfg = cfg
        self.manifest = manifest
        self.data = EnsembleData(manifest)
        self.loss_cfg = cfg.loss_config()
        self.flow_scale = manifest.flow_scale
        self.dtype = cfg.model.np_dtype
        self.layout = theta_layout(cfg.model.block_channels, in_channels=STACK_CHANNELS,
                                   kernel=cfg.model.kernel)
        param_dim = len(manifest.param_names)

        no_hyper = cfg.ablation == "no_hyper"
        self.local = init_local_params(cfg.model, seed=cfg.seed * 1000 + 1,
                                       with_conv_stack=no_hyper)
        self.hyper = None if no_hyper else init_hypernet(param_dim, self.layout,
                                                         seed=cfg.seed * 1000 + 2,
                                                         dtype=self.dtype)
        for t in self.local.values():
            t.data = t.data.astype(self.dtype)
        self.params = {f"local.{k}": v for k, v in self.local.items()}
        if self.hyper is not None:
            self.params.update(self.hyper.named_params())
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._scratch = {}

        self.pool = self._build_pool()
        self.val_entries = self._build_val_entries()
        self.steps_per_epoch = len(self.pool)
        self.total_steps = cfg.epochs * self.steps_per_epoch
        self.global_step = 0

    # ------------------------------------------------------------------
    # sampling

    def _train_members(self):
        ids = self.manifest.splits["train"]
        if not ids:
            raise ValueError("empty training split")
        return ids

    def _build_pool(self):
        """Fixed pool of member-homogeneous batches, one pass per epoch."""
        cfg = self.cfg
        rng = np.random.Generator(np.random.PCG64(cfg.seed * 1000 + 3))
        members = self._train_members()
        n_batches = max(1, cfg.pool_size // cfg.batch)
        pool = []
        for j in range(n_batches):
            mid = members[j % len(members)]
            triples = [self.data.sample_training_pair(mid, rng, cfg.window)
                       for _ in range(cfg.batch)]
            pool.append((mid, [(s.s, s.t, s.u) for s in triples]))
        return pool

    def _build_val_entries(self):
        cfg = self.cfg
        rng = np.random.Generator(np.random.PCG64(cfg.seed * 1000 + 4))
        members = self.manifest.splits["val"] or self._train_members()
        entries = []
        for j in range(cfg.n_val_samples):
            mid = members[j % len(members)]
            s = self.data.sample_training_pair(mid, rng, cfg.window)
            entries.append((mid, s.s, s.t, s.u))
        return entries

    def _assemble(self, mid, triples):
        d_s = np.stack([self.data.density(mid, s) for s, _, _ in triples])[:, None]
        d_u = np.stack([self.data.density(mid, u) for _, _, u in triples])[:, None]
        d_gt = np.stack([self.data.density(mid, t) for _, t, _ in triples])[:, None]
        f_gt = np.stack([self.data.supervision_flow(mid, t, u) for _, t, u in triples])
        t_norm = np.array([(t - s) / (u - s) for s, t, u in triples])
        params = self.data.norm_params(mid)
        cast = lambda a: a.astype(self.dtype)
        return cast(d_s), cast(d_u), cast(d_gt), cast(f_gt), t_norm, params

    # ------------------------------------------------------------------
    # forward/backward

    def _conv_wb(self, params_np, training):
        if self.hyper is None:
            return {(b, l): (self.local[f"b{b}.conv{l}.w"], self.local[f"b{b}.conv{l}.b"])
                    for b in range(self.cfg.model.n_blocks)
                    for l in range(1, 6)}, None
        theta = hypernet_forward(self.hyper, params_np, training=training,
                                 seed=self.cfg.seed * 1_000_000 + self.global_step)
        return slice_theta(theta, self.layout), theta

    def step_once(self, batch_index_in_epoch, epoch):
        """One optimizer step; returns the scalar loss value."""
        cfg = self.cfg
        order_rng = np.random.Generator(np.random.PCG64(cfg.seed * 1000 + 10 + epoch))
        order = order_rng.permutation(self.steps_per_epoch)
        mid, triples = self.pool[order[batch_index_in_epoch]]
        d_s, d_u, d_gt, f_gt, t_norm, params_np = self._assemble(mid, triples)

        lr = cosine_lr(self.global_step, self.total_steps, cfg.lr_start, cfg.lr_end)
        tape = Tape()
        with tape:
            wb, _ = self._conv_wb(params_np, training=True)
            out = model_forward(cfg.model, Tensor(d_s, dtype=self.dtype),
                                Tensor(d_u, dtype=self.dtype), t_norm, wb, self.local,
                                self.flow_scale)
            rec = rec_loss(out.d_hat, Tensor(d_gt, dtype=self.dtype))
            if self.loss_cfg.enable_flow:
                flow = flow_loss(out.flows, Tensor(f_gt, dtype=self.dtype), self.loss_cfg)
            else:
                flow = Tensor(np.asarray(0.0), dtype=self.dtype)
            loss = total_loss(rec, flow, self.loss_cfg)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise TrainingDiverged("diverged: non-finite loss")
            backward(loss)
        tape.clear()

        adamw_step(self.params, self.m, self.v, lr, self.global_step + 1,
                   weight_decay=cfg.weight_decay, scratch=self._scratch)
        for p in self.params.values():
            p.zero_grad()
        self.global_step += 1
        return loss_val

    def validate(self):
        """Mean total loss / PSNR / EPE over the fixed validation draws."""
        n = self.cfg.model.n_blocks
        losses, psnrs, epes = [], [], []
        for mid, s, t, u in self.val_entries:
            out = self.infer(self.data.density(mid, s)[None, None],
                             self.data.density(mid, u)[None, None],
                             (t - s) / (u - s), self.data.norm_params(mid))
            d_hat = out.d_hat.data[0, 0]
            f_hat = out.f_hat.data[0]
            d_gt = self.data.density(mid, t)
            f_gt = self.data.supervision_flow(mid, t, u)
            rec = float(np.abs(d_hat - d_gt).mean())
            fl = sum(self.loss_cfg.gamma ** (n - i) * float(np.abs(out.flows[i - 1].data[0] - f_gt).mean())
                     for i in range(1, n + 1))
            val = (rec if self.loss_cfg.enable_rec else 0.0) + \
                  (self.loss_cfg.lambda_flow * fl if self.loss_cfg.enable_flow else 0.0)
            losses.append(val)
            psnrs.append(metrics.psnr(d_hat, d_gt))
            epes.append(metrics.epe(f_hat, f_gt))
        finite = [p for p in psnrs if math.isfinite(p)]
        return (float(np.mean(losses)), float(np.mean(finite if finite else psnrs)),
                float(np.mean(epes)))

    # ------------------------------------------------------------------
    # inference

    def infer_arrays(self, d_s, d_u, t_norm, params_norm):
        """Deterministic single-volume inference; returns normalized
        (d_hat [Z,Y,X], f_hat [3,Z,Y,X])."""
        out = self.infer(d_s[None, None], d_u[None, None], t_norm, params_norm)
        return out.d_hat.data[0, 0], out.f_hat.data[0]

    def infer(self, d_s, d_u, t, params_norm):
        wb, _ = self._conv_wb(np.asarray(params_norm), training=False)
        return model_forward(self.cfg.model, Tensor(np.asarray(d_s, dtype=self.dtype)),
                             Tensor(np.asarray(d_u, dtype=self.dtype)), t, wb, self.local,
                             self.flow_scale)

    def generated_theta(self, params_norm, training=False):
        if self.hyper is None:
            raise ValueError("hypernetwork disabled in this configuration")
        return hypernet_forward(self.hyper, np.asarray(params_norm), training=training,
                                seed=0).data

    # ------------------------------------------------------------------
    # persistence

    def save(self, path):
        header = {"train_config": self.cfg.to_dict(),
                  "global_step": self.global_step,
                  "total_steps": self.total_steps,
                  "param_names": self.manifest.param_names,
                  "flow_scale": self.flow_scale,
                  "manifest_digest": manifest_digest(self.manifest),
                  "rng": {"seed": self.cfg.seed}}
        tensors = {}
        for name, p in self.params.items():
            tensors[f"p.{name}"] = p.data
            tensors[f"m.{name}"] = self.m[name]
            tensors[f"v.{name}"] = self.v[name]
        save_checkpoint(path, header, tensors)

    @classmethod
    def load(cls, path, manifest, check_digest=True):
        header, tensors = load_checkpoint_file(path)
        cfg = TrainConfig.from_dict(header["train_config"])
        if check_digest and header["manifest_digest"] != manifest_digest(manifest):
            raise ValueError("checkpoint does not match this manifest")
        tr = cls(cfg, manifest)
        for name, p in tr.params.items():
            p.data = tensors[f"p.{name}"].astype(tr.dtype)
            tr.m[name] = tensors[f"m.{name}"].astype(tr.dtype)
            tr.v[name] = tensors[f"v.{name}"].astype(tr.dtype)
        tr.global_step = header["global_step"]
        return tr


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    step_losses: list
    epoch_rows: list
    stopped_early: bool


def train(cfg, manifest, out_dir):
    """Full optimization run: early stopping on validation loss, the best
    checkpoint retained, and a per-epoch metrics CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.bin"
    metrics_path = out_dir / "metrics.csv"

    tr = Trainer(cfg, manifest)
    best_val = math.inf
    stall = 0
    step_losses = []
    rows = []
    stopped = False
    try:
        for epoch in range(cfg.epochs):
            epoch_losses = [tr.step_once(i, epoch) for i in range(tr.steps_per_epoch)]
            step_losses.extend(epoch_losses)
            val_loss, val_psnr, val_epe = tr.validate()
            lr = cosine_lr(tr.global_step, tr.total_steps, cfg.lr_start, cfg.lr_end)
            rows.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                         "val_loss": val_loss, "val_psnr": val_psnr, "val_epe": val_epe,
                         "lr": lr})
            if val_loss < best_val:
                best_val = val_loss
                stall = 0
                tr.save(ckpt_path)
            else:
                stall += 1
                if stall >= cfg.patience:
                    stopped = True
                    break
    except TrainingDiverged:
        tr.save(out_dir / "diverged.bin")
        raise
    if not ckpt_path.exists():
        tr.save(ckpt_path)

    with open(metrics_path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,val_psnr,val_epe,lr\n")
        for r in rows:
            fh.write(f"{r['epoch']},{r['train_loss']:.8f},{r['val_loss']:.8f},"
                     f"{r['val_psnr']:.5f},{r['val_epe']:.8f},{r['lr']:.3e}\n")
    return TrainResult(ckpt_path, metrics_path, step_losses, rows, stopped)
