"""
The four failure detectors on top of the shared CNN classifier.

Comprehension and perception heads classify the per-token joiner-input
embeddings; the deletion head classifies raw per-frame encoder
embeddings, masked so that frames consumed by an emission can never be
flagged; the event head classifies per-token mean-pooled encoder frames
into the six environmental classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnn import DetectorModel
from .types import (
    DecodeResult,
    EVENT_CLASSES,
    FrameEventTrack,
    LABEL_COMP,
    LABEL_PERC,
    LabelSet,
    ValidationError,
)

_SEVERITY = {"Missing": 5, "PacketLoss": 4, "Interference": 3, "Noise": 2, "RIR": 1, "Clean": 0}


@dataclass
class DeletionEvents:
    """Disjoint, ordered half-open frame spans of detected deletions."""

    spans: list[tuple[int, int]]

    def __post_init__(self):
        prev_end = -1
        for start, end in self.spans:
            if end <= start or start < prev_end:
                raise ValidationError("deletion spans must be ordered, disjoint, nonempty")
            prev_end = end

    def __len__(self) -> int:
        return len(self.spans)


def events_from_flags(flags: np.ndarray) -> DeletionEvents:
    """Aggregate consecutive positive frame flags into single events."""
    flags = np.asarray(flags, dtype=bool)
    spans = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, flags.size))
    return DeletionEvents(spans)


def token_joint_matrix(decode: DecodeResult) -> np.ndarray:
    if not decode.tokens:
        return np.zeros((0, decode.d_model))
    return np.stack([t.joint_embedding for t in decode.tokens]).astype(np.float64)


def token_pooled_frames(decode: DecodeResult) -> np.ndarray:
    """Per-token mean of encoder frames over [emit, emit + max(duration, 1))."""
    if not decode.tokens:
        return np.zeros((0, decode.d_model))
    rows = []
    emb = decode.frame_embeddings.astype(np.float64)
    for tok in decode.tokens:
        end = min(tok.emit_frame + max(tok.duration, 1), decode.n_frames)
        rows.append(emb[tok.emit_frame : end].mean(axis=0))
    return np.stack(rows)


def predict_token_errors(model: DetectorModel, decode: DecodeResult, which: str) -> np.ndarray:
    """Per-token error flags from the binary head on joint embeddings."""
    if which not in ("comprehension", "perception"):
        raise ValidationError(f"unknown detector kind: {which}")
    if model.cfg.classes != 2:
        raise ValidationError("token-error detection needs a binary head")
    x = token_joint_matrix(decode)
    if x.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return model.predict(x) == 1


def predict_deletions(model: DetectorModel, decode: DecodeResult) -> DeletionEvents:
    """Frame-level deletion events, masked by token emissions."""
    if model.cfg.classes != 2:
        raise ValidationError("deletion detection needs a binary head")
    flags = model.predict(decode.frame_embeddings.astype(np.float64)) == 1
    flags &= ~decode.emission_frames()
    return events_from_flags(flags)


def predict_events(model: DetectorModel, decode: DecodeResult) -> np.ndarray:
    """Per-token environmental class from pooled encoder embeddings."""
    if model.cfg.classes != len(EVENT_CLASSES):
        raise ValidationError("event detection needs a 6-class head")
    x = token_pooled_frames(decode)
    if x.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return model.predict(x)


def token_event_labels(decode: DecodeResult, track: FrameEventTrack) -> np.ndarray:
    """Gold per-token class: majority over the token span, severe class on ties."""
    labels = []
    for tok in decode.tokens:
        end = min(tok.emit_frame + max(tok.duration, 1), len(track))
        counts = np.bincount(track.classes[tok.emit_frame : end], minlength=len(EVENT_CLASSES))
        best = np.flatnonzero(counts == counts.max())
        if best.size == 1:
            labels.append(int(best[0]))
        else:
            labels.append(int(max(best, key=lambda c: _SEVERITY[EVENT_CLASSES[c]])))
    return np.asarray(labels, dtype=np.int64)


@dataclass
class Detections:
    """Raw outputs of the four detectors for one decode."""

    comp_flags: np.ndarray  # per token
    perc_flags: np.ndarray  # per token
    deletion_events: DeletionEvents
    event_classes: np.ndarray  # per token


class TrainedDetectorBank:
    """The four trained models bundled behind one detection call."""

    def __init__(self, comprehension, perception, deletion, events):
        self.comprehension = comprehension
        self.perception = perception
        self.deletion = deletion
        self.events = events

    def detect(self, decode: DecodeResult) -> Detections:
        return Detections(
            comp_flags=predict_token_errors(self.comprehension, decode, "comprehension"),
            perc_flags=predict_token_errors(self.perception, decode, "perception"),
            deletion_events=predict_deletions(self.deletion, decode),
            event_classes=predict_events(self.events, decode),
        )


class OracleDetectorBank:
    """Perfect detectors backed by the synthesis-time labels.

    Used to exercise the clarification loop independently of detector
    quality; requires the bundle's LabelSet and FrameEventTrack.
    """

    def __init__(self, labels_by_id: dict[str, LabelSet], tracks_by_id: dict[str, FrameEventTrack]):
        self.labels_by_id = labels_by_id
        self.tracks_by_id = tracks_by_id

    def detect(self, decode: DecodeResult) -> Detections:
        labels = self.labels_by_id[decode.utterance_id]
        track = self.tracks_by_id[decode.utterance_id]
        token_labels = np.asarray(labels.token_labels)
        return Detections(
            comp_flags=token_labels == LABEL_COMP,
            perc_flags=token_labels == LABEL_PERC,
            deletion_events=events_from_flags(labels.deletion_frame_flags),
            event_classes=token_event_labels(decode, track),
        )
