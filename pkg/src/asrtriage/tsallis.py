"""
Training-free confidence baseline: Tsallis-entropy token confidence,
word-level mean aggregation, and FPR-capped threshold calibration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import DecodeResult, PROB_SUM_TOL, ValidationError


@dataclass
class ConfidenceConfig:
    alpha: float = 0.33  # entropic index, in (0, 1)
    beta: float = 0.05  # FPR cap for calibration

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError("alpha must lie in (0, 1)")
        if not (0.0 <= self.beta <= 1.0):
            raise ValidationError("beta must lie in [0, 1]")


@dataclass
class Threshold:
    """Flagging rule is `confidence < tau`."""

    tau: float
    achieved_fpr: float
    achieved_recall: float
    calibration_set_id: str = ""


def tsallis_confidence(probs: np.ndarray, alpha: float = 0.33) -> float:
    """Confidence in [0, 1]: 1 for a one-hot distribution, 0 for uniform.

    Exact zeros contribute nothing to the power sum, so one-hot inputs map
    to exactly 1 without any probability clamping.
    """
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValidationError("probs must be a distribution over at least 2 entries")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValidationError("probs entries must be finite and nonnegative")
    if abs(float(p.sum()) - 1.0) > max(PROB_SUM_TOL, 1e-6 * p.size):
        raise ValidationError("probs not normalized")
    v = p.size
    one_minus = 1.0 - alpha
    power_sum = float(np.power(p, alpha).sum())
    num = np.expm1((v**one_minus - power_sum) / one_minus)
    den = np.expm1((v**one_minus - 1.0) / one_minus)
    return float(np.clip(num / den, 0.0, 1.0))


def word_confidence(token_confidences: list[float] | np.ndarray) -> float:
    """Arithmetic mean of the constituent token confidences."""
    vals = np.asarray(token_confidences, dtype=np.float64)
    if vals.size == 0:
        raise ValidationError("word has no token confidences")
    return float(vals.mean())


def decode_word_confidences(decode: DecodeResult, alpha: float = 0.33) -> np.ndarray:
    """Per-word confidence of a decode under the token-mean rule."""
    token_conf = [tsallis_confidence(t.probs, alpha) for t in decode.tokens]
    return np.array(
        [word_confidence(token_conf[s.token_start : s.token_end]) for s in decode.hypothesis_words],
        dtype=np.float64,
    )


def calibrate_threshold(
    confidences: np.ndarray,
    gold_error: np.ndarray,
    beta: float,
    calibration_set_id: str = "",
) -> Threshold:
    """Largest cutoff whose false-positive rate stays within `beta`.

    Candidate cutoffs are midpoints between adjacent sorted unique
    confidences plus the sentinels 0 and 1 + eps; recall is nondecreasing
    in the cutoff, so the largest feasible one maximizes recall.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    gold = np.asarray(gold_error, dtype=bool)
    if conf.shape != gold.shape or conf.ndim != 1:
        raise ValidationError("confidences and labels must be equal-length vectors")
    n_err = int(gold.sum())
    n_ok = int((~gold).sum())
    if n_err == 0 or n_ok == 0:
        raise ValidationError("calibration set must contain both classes")

    uniq = np.unique(conf)
    candidates = np.concatenate(([0.0], (uniq[:-1] + uniq[1:]) / 2.0, [1.0 + 1e-9]))
    best = None
    for tau in candidates:
        flags = conf < tau
        fpr = float((flags & ~gold).sum()) / n_ok
        recall = float((flags & gold).sum()) / n_err
        if fpr <= beta and (best is None or tau > best.tau):
            best = Threshold(float(tau), fpr, recall, calibration_set_id)
    # tau = 0 flags nothing, so FPR 0 <= beta always yields a candidate
    assert best is not None
    return best


def flag_words(decode: DecodeResult, threshold: Threshold, alpha: float = 0.33) -> np.ndarray:
    """Per-word error flags: word confidence below the calibrated cutoff."""
    return decode_word_confidences(decode, alpha) < threshold.tau
