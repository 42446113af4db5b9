"""
Shared data types for the whole pipeline.

Audio is mono float32 in [-1, 1]. The decoder frame grid is 80 ms per
frame; a clip of d seconds spans ceil(d / 0.080) frames. Tokens carry a
full probability vector over the vocabulary plus the joiner-input
embedding; frame embeddings come from the encoder side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FRAME_SECONDS = 0.080
DEFAULT_SAMPLE_RATE = 16000
DEFAULT_VOCAB_SIZE = 1024
DEFAULT_D_MODEL = 640

DURATION_CHOICES = (0, 1, 2, 3, 4)
PROB_SUM_TOL = 1e-6

WORD_BOUNDARY_MARK = "▁"  # "▁": a token starts a new word iff its piece begins with this

# Environmental state of a frame, ordered so that index 0 is the benign class.
EVENT_CLASSES = ("Clean", "Interference", "Noise", "RIR", "PacketLoss", "Missing")
EVENT_INDEX = {name: i for i, name in enumerate(EVENT_CLASSES)}

# Token-label codes (LabelSet.token_labels).
LABEL_CORRECT = 0
LABEL_COMP = 1
LABEL_PERC = 2


class ValidationError(ValueError):
    """Raised when a value violates a structural invariant; names the field."""


def n_frames_for_duration(duration_s: float) -> int:
    """Frame count of a clip on the 80 ms grid."""
    return int(math.ceil(duration_s / FRAME_SECONDS - 1e-9))


@dataclass
class AudioClip:
    """Mono waveform, float32 samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValidationError("samples must be a nonempty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("samples contain non-finite values")

    @property
    def duration_s(self) -> float:
        return self.samples.size / float(self.sample_rate)

    @property
    def n_frames(self) -> int:
        return n_frames_for_duration(self.duration_s)


@dataclass
class UtteranceRef:
    """Reference transcript with per-word difficulty flags."""

    id: str
    words: list[str]
    hard_flags: list[bool]

    def __post_init__(self):
        if not self.id:
            raise ValidationError("utterance id is empty")
        if not self.words:
            raise ValidationError("empty reference")
        if len(self.hard_flags) != len(self.words):
            raise ValidationError("hard_flags length differs from words")


@dataclass
class TokenRecord:
    """One emitted subword token with its distribution and joiner embedding."""

    token_id: int
    piece: str
    emit_frame: int
    duration: int
    probs: np.ndarray
    joint_embedding: np.ndarray

    def validate(self, vocab_size: int, d_model: int, n_frames: int) -> None:
        if not (0 <= self.token_id < vocab_size):
            raise ValidationError(f"token_id {self.token_id} outside vocabulary")
        if self.duration not in DURATION_CHOICES:
            raise ValidationError(f"duration outside {{0..4}}: {self.duration}")
        if not (0 <= self.emit_frame < n_frames):
            raise ValidationError(f"emit_frame {self.emit_frame} outside [0, {n_frames})")
        probs = np.asarray(self.probs, dtype=np.float32)
        if probs.shape != (vocab_size,):
            raise ValidationError("probs length differs from vocab_size")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValidationError("probs entries must be finite and nonnegative")
        if abs(float(probs.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValidationError("probs not normalized")
        joint = np.asarray(self.joint_embedding, dtype=np.float32)
        if joint.shape != (d_model,):
            raise ValidationError("joint_embedding length differs from d_model")
        if not np.all(np.isfinite(joint)):
            raise ValidationError("non-finite value in joint_embedding")


@dataclass
class WordSpan:
    """A hypothesis word and the half-open token index range it covers."""

    word: str
    token_start: int
    token_end: int


@dataclass
class DecodeResult:
    """Decoder output for one utterance: tokens, words, and embeddings."""

    utterance_id: str
    frame_embeddings: np.ndarray  # (n_frames, d_model) float32
    tokens: list[TokenRecord]
    hypothesis_words: list[WordSpan]
    vocab_size: int = DEFAULT_VOCAB_SIZE

    @property
    def n_frames(self) -> int:
        return int(self.frame_embeddings.shape[0])

    @property
    def d_model(self) -> int:
        return int(self.frame_embeddings.shape[1])

    @property
    def hypothesis_text(self) -> str:
        return " ".join(w.word for w in self.hypothesis_words)

    def emission_frames(self) -> np.ndarray:
        """Boolean mask of frames consumed by emitted tokens."""
        mask = np.zeros(self.n_frames, dtype=bool)
        for tok in self.tokens:
            span = max(tok.duration, 1)
            mask[tok.emit_frame : min(tok.emit_frame + span, self.n_frames)] = True
        return mask

    def word_of_token(self) -> list[int]:
        """Word index of every token."""
        owner = [-1] * len(self.tokens)
        for wi, span in enumerate(self.hypothesis_words):
            for ti in range(span.token_start, span.token_end):
                owner[ti] = wi
        return owner

    def validate(self) -> None:
        if not self.utterance_id:
            raise ValidationError("utterance_id is empty")
        emb = np.asarray(self.frame_embeddings)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ValidationError("frame_embeddings must be (n_frames, d_model)")
        if not np.all(np.isfinite(emb)):
            raise ValidationError("non-finite value in frame_embeddings")
        last = -1
        for tok in self.tokens:
            tok.validate(self.vocab_size, self.d_model, self.n_frames)
            if tok.emit_frame <= last:
                raise ValidationError("token emit_frames must strictly increase")
            last = tok.emit_frame
        owner = self.word_of_token()
        if any(o < 0 for o in owner):
            raise ValidationError("a token maps to no hypothesis word")
        covered = sum(s.token_end - s.token_start for s in self.hypothesis_words)
        if covered != len(self.tokens):
            raise ValidationError("hypothesis word spans do not partition tokens")


@dataclass
class FrameEventTrack:
    """Per-frame ground-truth environmental class."""

    classes: np.ndarray  # (n_frames,) int, values index EVENT_CLASSES

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int64)
        if self.classes.ndim != 1:
            raise ValidationError("event classes must be 1-D")
        if np.any(self.classes < 0) or np.any(self.classes >= len(EVENT_CLASSES)):
            raise ValidationError("event class index out of range")

    def __len__(self) -> int:
        return int(self.classes.size)

    @classmethod
    def all_clean(cls, n_frames: int) -> "FrameEventTrack":
        return cls(np.zeros(n_frames, dtype=np.int64))


@dataclass
class LabelSet:
    """Oracle labels: per-token cause codes, frame deletion flags, word flags."""

    token_labels: list[int]  # LABEL_CORRECT / LABEL_COMP / LABEL_PERC per token
    deletion_frame_flags: np.ndarray  # (n_frames,) bool
    word_labels: list[int]  # 0 correct / 1 error per hypothesis word
    gt_deleted_words: int = 0  # reference words with no hypothesis token to flag

    def __post_init__(self):
        self.deletion_frame_flags = np.asarray(self.deletion_frame_flags, dtype=bool)

    def validate(self, decode: DecodeResult) -> None:
        if len(self.token_labels) != len(decode.tokens):
            raise ValidationError("token_labels length differs from tokens")
        if len(self.word_labels) != len(decode.hypothesis_words):
            raise ValidationError("word_labels length differs from hypothesis words")
        if self.deletion_frame_flags.size != decode.n_frames:
            raise ValidationError("deletion_frame_flags length differs from n_frames")
        if np.any(self.deletion_frame_flags & decode.emission_frames()):
            raise ValidationError("deletion flag on a frame with a token emission")
        if self.word_labels != word_labels_from_tokens(self.token_labels, decode.hypothesis_words):
            raise ValidationError("word_labels violate the any-token rule")


def word_labels_from_tokens(token_labels: list[int], spans: list[WordSpan]) -> list[int]:
    """A word is an error iff any of its tokens carries an error label."""
    out = []
    for span in spans:
        flag = any(token_labels[t] != LABEL_CORRECT for t in range(span.token_start, span.token_end))
        out.append(1 if flag else 0)
    return out


@dataclass
class ManifestRecord:
    utterance_id: str
    audio_path: Optional[str]
    distortion_spec: Optional[dict]
    decode_path: str
    label_path: str


@dataclass
class CorpusManifest:
    """One JSON-lines manifest per corpus split."""

    records: list[ManifestRecord]
    split: str = "train"
    seed: int = 0
    vocab_size: int = DEFAULT_VOCAB_SIZE
    d_model: int = DEFAULT_D_MODEL
    extra: dict = field(default_factory=dict)
