"""
Classifier-architecture ablation at toy scale.

Re-runs the detector head family on one task and reports per-class and
macro F1, the comparison that motivated fixing the shipped architecture
to the kernel-5 CNN: non-contextual variants (kernel 1) see single
positions only, while the convolutional variants pool neighboring
tokens, which is what separates real errors from per-position noise.
"""

from __future__ import annotations

import numpy as np

from .cnn import CnnConfig, TrainConfig, train
from .metrics import confusion_matrix, macro_f1

# name -> (layers, kernel); kernel 1 removes temporal context
DEFAULT_VARIANTS = {
    "linear_probe": (1, 1),
    "mlp_2layer": (2, 1),
    "cnn_k5_l2": (2, 5),
    "cnn_k5_l5": (5, 5),
}


def per_class_f1(mat: np.ndarray) -> list[float]:
    out = []
    for c in range(mat.shape[0]):
        tp = mat[c, c]
        fp = mat[:, c].sum() - tp
        fn = mat[c].sum() - tp
        prec = tp / (tp + fp) if (tp + fp) else 0.0
        rec = tp / (tp + fn) if (tp + fn) else 0.0
        out.append(2 * prec * rec / (prec + rec) if (prec + rec) else 0.0)
    return out


def architecture_ablation(
    train_seqs,
    train_labels,
    valid_seqs,
    valid_labels,
    test_seqs,
    test_labels,
    in_dim: int,
    hidden: int = 48,
    variants: dict | None = None,
    tcfg: TrainConfig | None = None,
) -> dict[str, dict]:
    """Train every variant on the same data; returns per-variant F1 rows."""
    variants = variants or DEFAULT_VARIANTS
    tcfg = tcfg or TrainConfig(lr=1e-3, epochs=15, batch_size=32, checkpoint_interval=200, seed=2)
    table = {}
    for name, (layers, kernel) in variants.items():
        cfg = CnnConfig(
            layers=layers, kernel=kernel, hidden=hidden, dropout=0.2, classes=2, in_dim=in_dim
        )
        model = train(train_seqs, train_labels, valid_seqs, valid_labels, cfg, tcfg)
        pred = np.concatenate([model.predict(s) for s in test_seqs])
        gold = np.concatenate([np.asarray(y) for y in test_labels])
        mat = confusion_matrix(pred, gold, 2)
        clean_f1, error_f1 = per_class_f1(mat)
        table[name] = {
            "layers": layers,
            "kernel": kernel,
            "clean_f1": clean_f1,
            "error_f1": error_f1,
            "macro_f1": macro_f1(mat),
        }
    return table
