"""
Rule-based fusion of detector outputs into a per-token cause profile and
a cause-tagged transcript.

The priority rule is Comprehension > Perception > Deletion: linguistic
mismatches win because acoustic recovery strategies cannot fix them, and
a deletion event overlapping a flagged token's span yields to the
token-level cause. Tags wrap flagged word spans (<noise>, <unknown>, ...)
and deletion sites appear as <del/> markers; stripping all tags recovers
the raw hypothesis text exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .aligner import word_frame_span
from .detectors import DeletionEvents, Detections
from .types import DecodeResult, EVENT_CLASSES, ValidationError

TAG_VOCAB_VERSION = 1
CAUSE_NONE, CAUSE_COMP, CAUSE_PERC = "None", "Comprehension", "Perception"

# event class -> tag for perception-caused words; Clean and Missing fall
# back to the generic tag
EVENT_TAG = {
    "Noise": "noise",
    "Interference": "interference",
    "RIR": "rir",
    "PacketLoss": "packetloss",
    "Clean": "unknown",
    "Missing": "unknown",
}

STRATEGIES = (
    "Repeat",
    "QuieterRoom",
    "WaitForOtherSpeaker",
    "CheckConnection",
    "SpellOrParaphrase",
    "AskMissingContent",
)

_TAG_RE = re.compile(r"</?[a-z]+/?>")


@dataclass
class ErrorProfile:
    """Structured failure description of one decode."""

    token_causes: list[str]  # CAUSE_* per token
    deletion_events: DeletionEvents
    token_events: np.ndarray  # event class index per token
    word_flags: list[bool]  # any-token rule over causes

    def is_clean(self) -> bool:
        return not any(self.word_flags) and len(self.deletion_events) == 0


def fuse(decode: DecodeResult, det: Detections) -> ErrorProfile:
    """Resolve overlapping detector flags into exactly one cause per token."""
    n = len(decode.tokens)
    for name, flags in (("comprehension", det.comp_flags), ("perception", det.perc_flags)):
        if len(flags) != n:
            raise ValidationError(f"{name} flags length differs from token count")
    causes = []
    for i in range(n):
        if det.comp_flags[i]:
            causes.append(CAUSE_COMP)
        elif det.perc_flags[i]:
            causes.append(CAUSE_PERC)
        else:
            causes.append(CAUSE_NONE)

    # a deletion event overlapping any flagged token's span is suppressed:
    # the token-level cause wins
    flagged_frames = np.zeros(decode.n_frames, dtype=bool)
    for tok, cause in zip(decode.tokens, causes):
        if cause != CAUSE_NONE:
            end = min(tok.emit_frame + max(tok.duration, 1), decode.n_frames)
            flagged_frames[tok.emit_frame : end] = True
    kept = [
        (s, e) for s, e in det.deletion_events.spans if not flagged_frames[s:e].any()
    ]

    word_flags = [
        any(causes[t] != CAUSE_NONE for t in range(span.token_start, span.token_end))
        for span in decode.hypothesis_words
    ]
    return ErrorProfile(
        token_causes=causes,
        deletion_events=DeletionEvents(kept),
        token_events=np.asarray(det.event_classes, dtype=np.int64),
        word_flags=word_flags,
    )


@dataclass
class TaggedSpan:
    """One query target: a run of flagged words or a deletion site."""

    kind: str  # "words" or "deletion"
    tag: str
    word_start: int = 0  # word index range for kind == "words"
    word_end: int = 0
    boundary: int = 0  # insertion point (word index) for kind == "deletion"
    frame_span: tuple[int, int] = (0, 0)

    @property
    def strategy(self) -> str:
        if self.kind == "deletion":
            return "AskMissingContent"
        return _TAG_STRATEGY[self.tag]


_TAG_STRATEGY = {
    "noise": "QuieterRoom",
    "rir": "QuieterRoom",
    "interference": "WaitForOtherSpeaker",
    "packetloss": "CheckConnection",
    "unknown": "SpellOrParaphrase",
    "repeat": "Repeat",
}


@dataclass
class TaggedTranscript:
    text: str
    spans: list[TaggedSpan] = field(default_factory=list)


def strategy_hint(cause: str, event_class: str) -> str:
    """Recovery strategy for one (cause, environment) pair."""
    if cause == CAUSE_COMP:
        return "SpellOrParaphrase"
    if cause == CAUSE_PERC:
        if event_class in ("Noise", "RIR"):
            return "QuieterRoom"
        if event_class == "Interference":
            return "WaitForOtherSpeaker"
        if event_class == "PacketLoss":
            return "CheckConnection"
        return "Repeat"  # Clean or Missing majority: generic fallback
    if cause == "Deletion":
        return "AskMissingContent"
    raise ValidationError(f"no strategy for cause {cause}")


def _word_tag(decode: DecodeResult, profile: ErrorProfile, word_index: int) -> str:
    """Tag for a flagged word: majority event class of its tokens, with the
    comprehension cause and clean/missing majorities falling back to the
    generic unknown tag."""
    span = decode.hypothesis_words[word_index]
    causes = profile.token_causes[span.token_start : span.token_end]
    if CAUSE_COMP in causes:
        return "unknown"
    events = profile.token_events[span.token_start : span.token_end]
    counts = np.bincount(events, minlength=len(EVENT_CLASSES))
    majority = EVENT_CLASSES[int(np.argmax(counts))]
    return EVENT_TAG[majority]


def tag_transcript(decode: DecodeResult, profile: ErrorProfile) -> TaggedTranscript:
    """Wrap flagged words in cause tags and mark deletion sites.

    Adjacent flagged words with the same tag merge into one span.
    Deletion markers go to the word boundary nearest the event's start
    frame, ties to the left.
    """
    n_words = len(decode.hypothesis_words)
    tags = [None] * n_words
    for wi in range(n_words):
        if profile.word_flags[wi]:
            tags[wi] = _word_tag(decode, profile, wi)

    # boundary b sits before word b; boundary n_words is the end
    boundary_frames = [word_frame_span(decode, wi)[0] for wi in range(n_words)]
    if n_words:
        boundary_frames.append(word_frame_span(decode, n_words - 1)[1])
    deletions = []
    for start, end in profile.deletion_events.spans:
        dists = [abs(start - bf) for bf in boundary_frames]
        boundary = int(np.argmin(dists))  # argmin takes the leftmost tie
        deletions.append((boundary, (start, end)))

    spans: list[TaggedSpan] = []
    wi = 0
    while wi < n_words:
        if tags[wi] is None:
            wi += 1
            continue
        wj = wi
        while wj + 1 < n_words and tags[wj + 1] == tags[wi]:
            wj += 1
        spans.append(
            TaggedSpan(
                kind="words",
                tag=tags[wi],
                word_start=wi,
                word_end=wj + 1,
                frame_span=(word_frame_span(decode, wi)[0], word_frame_span(decode, wj)[1]),
            )
        )
        wi = wj + 1
    for boundary, fspan in deletions:
        spans.append(TaggedSpan(kind="deletion", tag="del", boundary=boundary, frame_span=fspan))

    words = [w.word for w in decode.hypothesis_words]
    parts: list[str] = []
    del_at = {}
    for s in spans:
        if s.kind == "deletion":
            del_at.setdefault(s.boundary, 0)
            del_at[s.boundary] += 1
    open_at = {s.word_start: s for s in spans if s.kind == "words"}
    close_after = {s.word_end - 1: s for s in spans if s.kind == "words"}
    for wi, word in enumerate(words):
        for _ in range(del_at.get(wi, 0)):
            parts.append("<del/>")
        if wi in open_at:
            parts.append(f"<{open_at[wi].tag}>")
        parts.append(word)
        if wi in close_after:
            parts.append(f"</{close_after[wi].tag}>")
    for _ in range(del_at.get(n_words, 0)):
        parts.append("<del/>")
    return TaggedTranscript(text=" ".join(parts), spans=spans)


def strip_tags(tagged_text: str) -> str:
    """Inverse of tagging: recover the raw hypothesis text."""
    out = _TAG_RE.sub("", tagged_text)
    return " ".join(out.split())
