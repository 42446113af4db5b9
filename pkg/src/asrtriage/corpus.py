"""
Synthetic corpus construction: utterance sampling over the lexicon,
speech-like carrier waveforms on the decoder's frame grid, and the nine
distortion condition subsets (each drawing the standard 1/6 of the clean
pool, with overlap across conditions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distort import AssetBank, DistortionSpec, sample_spec
from .oracle import Lexicon, Timeline
from .rng import seeded_rng
from .types import AudioClip, FRAME_SECONDS, UtteranceRef, ValidationError

CONDITION_SAMPLING_RATIO = 1.0 / 6.0


@dataclass
class CorpusParams:
    n_utterances: int = 96
    words_min: int = 6
    words_max: int = 10
    hard_word_rate: float = 0.2  # expected fraction of hard words per utterance
    sample_rate: int = 16000
    splits: dict = field(default_factory=lambda: {"train": 0.7, "valid": 0.15, "test": 0.15})

    def __post_init__(self):
        if self.n_utterances < 1:
            raise ValidationError("n_utterances must be positive")
        if not (1 <= self.words_min <= self.words_max):
            raise ValidationError("need 1 <= words_min <= words_max")
        if abs(sum(self.splits.values()) - 1.0) > 1e-9:
            raise ValidationError("split fractions must sum to 1")


def sample_utterance(lexicon: Lexicon, uid: str, params: CorpusParams, seed: int) -> UtteranceRef:
    """Draw distinct words, mixing in hard words at the configured rate."""
    rng = seeded_rng(seed, "utterance", uid)
    n_words = int(rng.integers(params.words_min, params.words_max + 1))
    hard_pool = sorted(lexicon.hard_words)
    normal_pool = sorted(set(lexicon.words) - lexicon.hard_words)
    n_hard = int(np.clip(rng.binomial(n_words, params.hard_word_rate), 0, len(hard_pool)))
    n_hard = min(n_hard, n_words)
    words = [str(w) for w in rng.choice(normal_pool, size=n_words - n_hard, replace=False)]
    words += [str(w) for w in rng.choice(hard_pool, size=n_hard, replace=False)]
    rng.shuffle(words)
    return UtteranceRef(id=uid, words=words, hard_flags=[w in lexicon.hard_words for w in words])


def synthesize_waveform(timeline: Timeline, seed: int, sample_rate: int = 16000) -> AudioClip:
    """Speech-like carrier for the distortion stage.

    Each token span carries a small stack of harmonics keyed to its piece
    id with a syllabic amplitude envelope; gap frames are silent. The
    decoder never reads this audio (it reads the event track), so the
    carrier only needs realistic energy structure.
    """
    frame_len = int(round(FRAME_SECONDS * sample_rate))
    n_samples = timeline.n_frames * frame_len
    rng = seeded_rng(seed, "waveform", timeline.n_frames)
    out = np.zeros(n_samples)
    for tok in timeline.tokens:
        start = tok.start_frame * frame_len
        length = tok.duration * frame_len
        t = np.arange(length) / sample_rate
        f0 = 120.0 + 11.0 * (tok.piece_id % 64)
        seg = np.zeros(length)
        for h, amp in ((1, 1.0), (2, 0.5), (3, 0.25)):
            seg += amp * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
        envelope = 0.6 + 0.4 * np.sin(np.pi * np.arange(length) / max(length, 1))
        out[start : start + length] = seg * envelope
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak * 0.6
    return AudioClip(out.astype(np.float32), sample_rate)


@dataclass
class CorpusItem:
    """One utterance instance inside a condition subset."""

    utterance: UtteranceRef
    condition: str  # "Clean" or a distortion kind
    split: str
    spec: DistortionSpec | None = None

    @property
    def instance_id(self) -> str:
        return f"{self.utterance.id}__{self.condition}"


def assign_splits(utt_ids: list[str], params: CorpusParams, seed: int) -> dict[str, str]:
    """Deterministic split assignment by shuffled quota."""
    rng = seeded_rng(seed, "splits")
    order = list(utt_ids)
    rng.shuffle(order)
    n = len(order)
    n_train = int(round(params.splits.get("train", 0.7) * n))
    n_valid = int(round(params.splits.get("valid", 0.15) * n))
    assignment = {}
    for i, uid in enumerate(order):
        if i < n_train:
            assignment[uid] = "train"
        elif i < n_train + n_valid:
            assignment[uid] = "valid"
        else:
            assignment[uid] = "test"
    return assignment


def build_corpus(
    lexicon: Lexicon,
    params: CorpusParams,
    conditions: list[str],
    seed: int,
    bank: AssetBank,
    timeline_of,
) -> list[CorpusItem]:
    """Clean pool plus one 1/6 subset per distortion condition.

    `timeline_of(utt)` supplies the frame grid so specs can size their
    segments; sampling is deterministic in (seed, condition, utterance).
    """
    utts = [
        sample_utterance(lexicon, f"utt{i:05d}", params, seed) for i in range(params.n_utterances)
    ]
    split_of = assign_splits([u.id for u in utts], params, seed)
    items = [CorpusItem(utterance=u, condition="Clean", split=split_of[u.id]) for u in utts]

    n_subset = max(1, int(round(CONDITION_SAMPLING_RATIO * params.n_utterances)))
    for condition in conditions:
        rng = seeded_rng(seed, "condition", condition)
        chosen = rng.choice(len(utts), size=min(n_subset, len(utts)), replace=False)
        for ci in sorted(int(c) for c in chosen):
            utt = utts[ci]
            duration_s = timeline_of(utt).n_frames * FRAME_SECONDS
            spec = sample_spec(
                condition, seed=int(seeded_rng(seed, condition, utt.id).integers(2**31)),
                duration_s=duration_s, bank=bank,
            )
            items.append(
                CorpusItem(utterance=utt, condition=condition, split=split_of[utt.id], spec=spec)
            )
    return items
