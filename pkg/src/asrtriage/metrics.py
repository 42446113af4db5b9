"""
Evaluation metrics: WER and its relative reduction, detection
recall/FPR/F1, multi-class confusion matrices, per-round clarification
statistics, and the model-as-judge scoring hook.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aligner import align_words
from .types import ValidationError


@dataclass
class DetectionReport:
    level: str  # "token" or "word"
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if (self.fp + self.tn) else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0


@dataclass
class RoundStats:
    wer_per_round: list[float]  # index 0 = initial pass
    werr_per_round: list[float]  # relative reduction vs the initial pass
    improved_rate: float
    final_rate: list[float]  # cumulative clean-confirmed fraction per round
    degradation_fpr: float
    n_sessions: int
    n_zero_baseline: int = 0  # sessions excluded from WERR (initial WER == 0)


def wer(ref: list[str], hyp: list[str], normalize: bool = False) -> float:
    """(S + D + I) / N from the minimum-edit alignment."""
    if not ref:
        raise ValidationError("empty reference")
    s, d, i = align_words(ref, hyp, normalize=normalize).counts()
    return (s + d + i) / len(ref)


def detection_report(pred: np.ndarray, gold: np.ndarray, level: str = "word") -> DetectionReport:
    """Binary error-detection counts; the positive class is an error."""
    pred = np.asarray(pred, dtype=bool)
    gold = np.asarray(gold, dtype=bool)
    if pred.shape != gold.shape:
        raise ValidationError("prediction/gold length mismatch")
    return DetectionReport(
        level=level,
        tp=int((pred & gold).sum()),
        fp=int((pred & ~gold).sum()),
        fn=int((~pred & gold).sum()),
        tn=int((~pred & ~gold).sum()),
    )


def confusion_matrix(pred: np.ndarray, gold: np.ndarray, n_classes: int) -> np.ndarray:
    """Raw counts, rows = true class, columns = predicted class."""
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValidationError("prediction/gold length mismatch")
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (gold, pred), 1)
    return mat


def row_normalized_percent(mat: np.ndarray) -> np.ndarray:
    """Rows scaled to percentages; all-zero rows stay zero."""
    mat = np.asarray(mat, dtype=np.float64)
    sums = mat.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, 100.0 * mat / sums, 0.0)
    return out


def macro_f1(mat: np.ndarray) -> float:
    """Mean per-class F1 over classes that occur in the gold labels."""
    mat = np.asarray(mat, dtype=np.float64)
    scores = []
    for c in range(mat.shape[0]):
        support = mat[c].sum()
        if support == 0:
            continue
        tp = mat[c, c]
        fp = mat[:, c].sum() - tp
        fn = support - tp
        prec = tp / (tp + fp) if (tp + fp) else 0.0
        rec = tp / (tp + fn) if (tp + fn) else 0.0
        scores.append(2 * prec * rec / (prec + rec) if (prec + rec) else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def werr(wer_initial: float, wer_final: float) -> float:
    """Relative WER reduction; defined only for a nonzero initial WER."""
    if wer_initial <= 0:
        raise ValidationError("WERR undefined for zero initial WER")
    return (wer_initial - wer_final) / wer_initial


def round_stats(session_wers: list[list[float]], clean_round: list[int | None], k: int) -> RoundStats:
    """Aggregate per-session WER trajectories into corpus-level round statistics.

    `session_wers[s]` holds WER after rounds 0..r for session s (round 0 =
    initial pass; trajectories shorter than k are carried forward).
    `clean_round[s]` is the 1-based round where the detectors confirmed a
    clean transcript, or None.
    """
    n = len(session_wers)
    if n == 0:
        raise ValidationError("no sessions")
    trajs = []
    for ws in session_wers:
        t = list(ws) + [ws[-1]] * (k + 1 - len(ws))
        trajs.append(t[: k + 1])
    arr = np.asarray(trajs, dtype=np.float64)
    wer_rounds = arr.mean(axis=0).tolist()
    init, final = arr[:, 0], arr[:, -1]
    improved = float((final < init).sum()) / n
    degraded = float((final > init).sum()) / n
    nonzero = init > 0
    n_zero = int((~nonzero).sum())
    werr_rounds = []
    for r in range(k + 1):
        if nonzero.any():
            werr_rounds.append(float(((init[nonzero] - arr[nonzero, r]) / init[nonzero]).mean()))
        else:
            werr_rounds.append(0.0)
    final_rate = []
    for r in range(1, k + 1):
        done = sum(1 for c in clean_round if c is not None and c <= r)
        final_rate.append(done / n)
    return RoundStats(
        wer_per_round=wer_rounds,
        werr_per_round=werr_rounds,
        improved_rate=improved,
        final_rate=final_rate,
        degradation_fpr=degraded,
        n_sessions=n,
        n_zero_baseline=n_zero,
    )


JUDGE_PROMPT_VERSION = 1
JUDGE_PROMPT_TEMPLATE = """You are grading an assistant's answer to a spoken instruction.

[Instruction]
{instruction}

[Reference Answer]
{reference}

[Predicted Answer]
{predicted}

Rate how well the predicted answer matches the reference in meaning and
completeness on a scale of 0 to 100. Reply with the integer only."""


def mock_judge_score(reference: str, predicted: str) -> int:
    """Hermetic stand-in for the judge: bag-of-words overlap scaled to 0-100."""
    ref = reference.split()
    pred = predicted.split()
    if not ref or not pred:
        return 0
    ref_bag: dict[str, int] = {}
    for w in ref:
        ref_bag[w] = ref_bag.get(w, 0) + 1
    overlap = 0
    for w in pred:
        if ref_bag.get(w, 0) > 0:
            ref_bag[w] -= 1
            overlap += 1
    return int(round(100.0 * overlap / max(len(ref), len(pred))))


def maj_score(instruction: str, reference: str, predicted: str, judge=None, max_retries: int = 2) -> int:
    """Judge-scored answer quality in [0, 100].

    `judge` is a callable(prompt) -> str; when None the mock judge runs.
    Unparseable judge replies are retried up to `max_retries` times.
    """
    if judge is None:
        return mock_judge_score(reference, predicted)
    prompt = JUDGE_PROMPT_TEMPLATE.format(instruction=instruction, reference=reference, predicted=predicted)
    last = ""
    for _ in range(max_retries + 1):
        last = judge(prompt)
        digits = "".join(ch for ch in last.strip().split("\n")[0] if ch.isdigit())
        if digits:
            return max(0, min(100, int(digits)))
    raise ValidationError(f"judge reply unparseable after retries: {last!r}")
