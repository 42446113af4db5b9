"""
Sequence classifier used by all four detectors: a stack of same-length
1-D convolutions with ReLU and dropout, plus a per-position linear head.

Everything is plain numpy in float64: forward, backward, and a decoupled
weight-decay Adam optimizer, so training is bit-reproducible for a fixed
seed and iteration order, and gradients can be checked against finite
differences. Checkpoints taken at a fixed step interval are ranked by
validation error-class recall and the top five are parameter-averaged
into the returned model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import seeded_rng
from .types import ValidationError

CHECKPOINT_FORMAT_VERSION = 1

# regression guard: parameter averaging may cost at most this much
# validation error recall relative to the best single checkpoint
AVERAGING_REGRESSION_TOLERANCE = 0.05


@dataclass
class CnnConfig:
    layers: int = 5
    kernel: int = 5
    hidden: int = 640
    dropout: float = 0.2
    classes: int = 2
    in_dim: int = 640
    class_weighting: str = "inverse"  # none | inverse | sqrt_inverse

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValidationError("kernel must be odd for same-length padding")
        if self.layers < 1:
            raise ValidationError("need at least one layer")
        if self.classes not in (2, 6):
            raise ValidationError("classes must be 2 or 6")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 0.01
    epochs: int = 40
    batch_size: int = 192
    checkpoint_interval: int = 500  # optimizer steps between validation snapshots
    top_k_average: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "weight_decay", "epochs", "batch_size", "checkpoint_interval"):
            if getattr(self, name) <= 0 and name != "weight_decay":
                raise ValidationError(f"{name} must be positive")


def init_params(cfg: CnnConfig, seed: int) -> list[np.ndarray]:
    """He-initialized weights: [W1, b1, ..., WL, bL, Whead, bhead].

    Conv weights have shape (out, in, kernel); the head is (hidden, classes).
    """
    rng = seeded_rng(seed, "init", cfg.layers, cfg.kernel, cfg.hidden, cfg.in_dim, cfg.classes)
    params: list[np.ndarray] = []
    c_in = cfg.in_dim
    for _ in range(cfg.layers):
        scale = np.sqrt(2.0 / (c_in * cfg.kernel))
        params.append(rng.standard_normal((cfg.hidden, c_in, cfg.kernel)) * scale)
        params.append(np.zeros(cfg.hidden))
        c_in = cfg.hidden
    params.append(rng.standard_normal((cfg.hidden, cfg.classes)) * np.sqrt(1.0 / cfg.hidden))
    params.append(np.zeros(cfg.classes))
    return params


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """(N, L, C) -> (N, L, k*C) windows with zero padding at the edges."""
    n, length, _ = x.shape
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    return np.concatenate([xp[:, j : j + length, :] for j in range(kernel)], axis=2)


def _col2im(dcols: np.ndarray, kernel: int, length: int) -> np.ndarray:
    """Adjoint of _im2col."""
    n, _, kc = dcols.shape
    c = kc // kernel
    pad = kernel // 2
    dxp = np.zeros((n, length + 2 * pad, c))
    for j in range(kernel):
        dxp[:, j : j + length, :] += dcols[:, :, j * c : (j + 1) * c]
    return dxp[:, pad : pad + length, :]


def _conv_flat(w: np.ndarray) -> np.ndarray:
    """(out, in, k) -> (k*in, out) to match the im2col window order."""
    return w.transpose(2, 1, 0).reshape(-1, w.shape[0])


def forward_pass(
    params: list[np.ndarray],
    cfg: CnnConfig,
    x: np.ndarray,
    mask: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
):
    """Run the network; returns (logits, cache for backward).

    Positions outside `mask` are zeroed after every layer, which makes a
    padded batch bit-identical to processing each sequence alone.
    """
    h = x * mask[:, :, None]
    cache = []
    for layer in range(cfg.layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        cols = _im2col(h, cfg.kernel)
        z = cols @ _conv_flat(w) + b
        relu_mask = z > 0
        a = np.where(relu_mask, z, 0.0)
        if dropout_rng is not None and cfg.dropout > 0:
            keep = dropout_rng.uniform(size=a.shape) >= cfg.dropout
            a = a * keep / (1.0 - cfg.dropout)
        else:
            keep = None
        a = a * mask[:, :, None]
        cache.append((cols, relu_mask, keep))
        h = a
    w_head, b_head = params[-2], params[-1]
    logits = h @ w_head + b_head
    return logits, (cache, h)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(
    params: list[np.ndarray],
    cfg: CnnConfig,
    x: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray,
    class_weights: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
):
    """Weighted cross-entropy over valid positions and its gradients."""
    logits, (cache, h_last) = forward_pass(params, cfg, x, mask, dropout_rng)
    probs = softmax(logits)
    n, length, _ = logits.shape
    flat_mask = mask.reshape(-1)
    yy = y.reshape(-1)
    pw = np.where(flat_mask, class_weights[yy], 0.0)
    denom = pw.sum()
    if denom <= 0:
        raise ValidationError("batch has no valid positions")
    p_flat = probs.reshape(-1, cfg.classes)
    logp = -np.log(np.clip(p_flat[np.arange(yy.size), yy], 1e-300, None))
    loss = float((pw * logp).sum() / denom)
    if not np.isfinite(loss):
        raise ValidationError("non-finite training loss")

    dlogits = p_flat.copy()
    dlogits[np.arange(yy.size), yy] -= 1.0
    dlogits *= (pw / denom)[:, None]
    dlogits = dlogits.reshape(n, length, cfg.classes)

    grads: list[np.ndarray] = [np.zeros_like(p) for p in params]
    grads[-2] = h_last.reshape(-1, cfg.hidden).T @ dlogits.reshape(-1, cfg.classes)
    grads[-1] = dlogits.sum(axis=(0, 1))
    dh = dlogits @ params[-2].T

    for layer in range(cfg.layers - 1, -1, -1):
        cols, relu_mask, keep = cache[layer]
        da = dh * mask[:, :, None]
        if keep is not None:
            da = da * keep / (1.0 - cfg.dropout)
        dz = da * relu_mask
        w = params[2 * layer]
        kc = w.shape[1] * cfg.kernel
        dz_flat = dz.reshape(-1, cfg.hidden)
        dw_flat = cols.reshape(-1, kc).T @ dz_flat
        grads[2 * layer] = dw_flat.reshape(cfg.kernel, w.shape[1], cfg.hidden).transpose(2, 1, 0)
        grads[2 * layer + 1] = dz.sum(axis=(0, 1))
        dcols = dz @ _conv_flat(w).T
        dh = _col2im(dcols, cfg.kernel, cols.shape[1])
    return loss, grads


class AdamW:
    """Decoupled weight-decay Adam with bias correction."""

    def __init__(self, params: list[np.ndarray], tcfg: TrainConfig):
        self.tcfg = tcfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.tcfg
        self.t += 1
        b1t = 1.0 - c.adam_beta1**self.t
        b2t = 1.0 - c.adam_beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = c.adam_beta1 * self.m[i] + (1 - c.adam_beta1) * g
            self.v[i] = c.adam_beta2 * self.v[i] + (1 - c.adam_beta2) * g * g
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p -= c.lr * (m_hat / (np.sqrt(v_hat) + c.adam_eps) + c.weight_decay * p)


@dataclass
class DetectorModel:
    """Trained classifier with enough metadata to reproduce it."""

    cfg: CnnConfig
    params: list[np.ndarray]
    class_weights: np.ndarray
    fingerprint: dict = field(default_factory=dict)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """(L, in_dim) -> (L, classes) row-stochastic probabilities."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.cfg.in_dim:
            raise ValidationError(f"expected (L, {self.cfg.in_dim}) input, got {x.shape}")
        if x.shape[0] == 0:
            return np.zeros((0, self.cfg.classes))
        mask = np.ones((1, x.shape[0]), dtype=bool)
        logits, _ = forward_pass(self.params, self.cfg, x[None], mask, dropout_rng=None)
        return softmax(logits[0])

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Argmax class per position; ties resolve to the lowest index."""
        return np.argmax(self.forward(x), axis=-1)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        base = path.with_suffix("") if path.suffix == ".json" else path
        header = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "cfg": self.cfg.__dict__,
            "class_weights": self.class_weights.tolist(),
            "fingerprint": self.fingerprint,
            "shapes": [list(p.shape) for p in self.params],
        }
        blob = np.concatenate([p.ravel() for p in self.params]).astype("<f8")
        base.with_suffix(".f64").write_bytes(blob.tobytes())
        base.with_suffix(".json").write_text(json.dumps(header, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DetectorModel":
        path = Path(path)
        base = path.with_suffix("") if path.suffix in (".json", ".f64") else path
        header = json.loads(base.with_suffix(".json").read_text())
        cfg = CnnConfig(**header["cfg"])
        blob = np.frombuffer(base.with_suffix(".f64").read_bytes(), dtype="<f8")
        params = []
        off = 0
        for shape in header["shapes"]:
            size = int(np.prod(shape))
            params.append(blob[off : off + size].reshape(shape).copy())
            off += size
        if off != blob.size:
            raise ValidationError("checkpoint sidecar length mismatch")
        return cls(
            cfg=cfg,
            params=params,
            class_weights=np.asarray(header["class_weights"]),
            fingerprint=header["fingerprint"],
        )


def compute_class_weights(labels: list[np.ndarray], cfg: CnnConfig) -> np.ndarray:
    counts = np.zeros(cfg.classes)
    for y in labels:
        counts += np.bincount(y, minlength=cfg.classes)
    if cfg.class_weighting == "none":
        return np.ones(cfg.classes)
    present = counts > 0
    w = np.ones(cfg.classes)
    w[present] = counts[present].sum() / (present.sum() * counts[present])
    if cfg.class_weighting == "sqrt_inverse":
        w = np.sqrt(w)
    return w / w[present].mean()


def _pad_batch(seqs: list[np.ndarray], labels: list[np.ndarray]):
    n = len(seqs)
    lmax = max(s.shape[0] for s in seqs)
    d = seqs[0].shape[1]
    x = np.zeros((n, lmax, d))
    y = np.zeros((n, lmax), dtype=np.int64)
    mask = np.zeros((n, lmax), dtype=bool)
    for i, (s, lab) in enumerate(zip(seqs, labels)):
        x[i, : s.shape[0]] = s
        y[i, : s.shape[0]] = lab
        mask[i, : s.shape[0]] = True
    return x, y, mask


def _error_class_recall(model_params, cfg, seqs, labels) -> float:
    """Recall of the positive class (binary) or macro recall (multiclass)."""
    per_class_tp = np.zeros(cfg.classes)
    per_class_n = np.zeros(cfg.classes)
    for s, y in zip(seqs, labels):
        if s.shape[0] == 0:
            continue
        mask = np.ones((1, s.shape[0]), dtype=bool)
        logits, _ = forward_pass(model_params, cfg, s[None], mask, dropout_rng=None)
        pred = np.argmax(logits[0], axis=-1)
        for c in range(cfg.classes):
            sel = y == c
            per_class_n[c] += sel.sum()
            per_class_tp[c] += (pred[sel] == c).sum()
    if cfg.classes == 2:
        return float(per_class_tp[1] / per_class_n[1]) if per_class_n[1] else 0.0
    present = per_class_n > 0
    return float(np.mean(per_class_tp[present] / per_class_n[present])) if present.any() else 0.0


def dataset_fingerprint(seqs: list[np.ndarray], labels: list[np.ndarray]) -> str:
    h = hashlib.sha256()
    h.update(str(len(seqs)).encode())
    for s, y in zip(seqs, labels):
        h.update(np.ascontiguousarray(s, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(y, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def train(
    train_seqs: list[np.ndarray],
    train_labels: list[np.ndarray],
    valid_seqs: list[np.ndarray],
    valid_labels: list[np.ndarray],
    cfg: CnnConfig,
    tcfg: TrainConfig,
    log=None,
) -> DetectorModel:
    """Cross-entropy training with class-balanced weights and top-k
    checkpoint averaging by validation error-class recall."""
    if not train_seqs:
        raise ValidationError("empty training set")
    all_classes = np.unique(np.concatenate([np.unique(y) for y in train_labels]))
    if all_classes.size < 2:
        raise ValidationError("training set must contain at least two classes")

    seqs = [np.asarray(s, dtype=np.float64) for s in train_seqs]
    labels = [np.asarray(y, dtype=np.int64) for y in train_labels]
    vseqs = [np.asarray(s, dtype=np.float64) for s in valid_seqs]
    vlabels = [np.asarray(y, dtype=np.int64) for y in valid_labels]

    class_weights = compute_class_weights(labels, cfg)
    params = init_params(cfg, tcfg.seed)
    opt = AdamW(params, tcfg)
    shuffle_rng = seeded_rng(tcfg.seed, "shuffle")
    dropout_rng = seeded_rng(tcfg.seed, "dropout")

    checkpoints: list[tuple[float, int, list[np.ndarray]]] = []
    step = 0
    for epoch in range(tcfg.epochs):
        order = shuffle_rng.permutation(len(seqs))
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            x, y, mask = _pad_batch([seqs[i] for i in idx], [labels[i] for i in idx])
            loss, grads = loss_and_grads(params, cfg, x, y, mask, class_weights, dropout_rng)
            opt.step(params, grads)
            step += 1
            if step % tcfg.checkpoint_interval == 0:
                recall = _error_class_recall(params, cfg, vseqs, vlabels)
                checkpoints.append((recall, step, [p.copy() for p in params]))
                if log:
                    log(f"step {step}: loss {loss:.4f} valid error recall {recall:.4f}")
    final_recall = _error_class_recall(params, cfg, vseqs, vlabels)
    checkpoints.append((final_recall, step, [p.copy() for p in params]))

    checkpoints.sort(key=lambda c: (-c[0], c[1]))
    top = checkpoints[: tcfg.top_k_average]
    averaged = [np.mean([ck[2][i] for ck in top], axis=0) for i in range(len(params))]

    return DetectorModel(
        cfg=cfg,
        params=averaged,
        class_weights=class_weights,
        fingerprint={
            "seed": tcfg.seed,
            "data_hash": dataset_fingerprint(seqs, labels),
            "steps": step,
            "averaged_checkpoints": len(top),
            "best_valid_recall": top[0][0],
        },
    )
