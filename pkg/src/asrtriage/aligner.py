"""
Word alignment and label construction.

Two labeling routes share this module: comprehension labels come from
aligning the clean hypothesis against the reference transcript, while
perception/deletion labels come from a differential pass that treats the
clean hypothesis as a pseudo-reference for the distorted one. The
differential pass anchors words on their frame spans (both decodes share
one frame grid), which keeps labels unambiguous when a substitution sits
next to a deletion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .types import (
    DecodeResult,
    LABEL_COMP,
    LABEL_CORRECT,
    LABEL_PERC,
    LabelSet,
    UtteranceRef,
    ValidationError,
    WordSpan,
    word_labels_from_tokens,
)

MATCH, SUB, DEL, INS = "match", "substitute", "delete", "insert"


@dataclass
class AlignOp:
    kind: str
    ref_index: Optional[int] = None
    hyp_index: Optional[int] = None


@dataclass
class Alignment:
    ops: list[AlignOp]

    def counts(self) -> tuple[int, int, int]:
        """(substitutions, deletions, insertions)."""
        s = sum(1 for op in self.ops if op.kind == SUB)
        d = sum(1 for op in self.ops if op.kind == DEL)
        i = sum(1 for op in self.ops if op.kind == INS)
        return s, d, i


def normalize_word(word: str) -> str:
    """Lowercase and strip terminal punctuation before alignment."""
    return word.lower().rstrip(".,;:!?")


def align_words(ref: list[str], hyp: list[str], normalize: bool = False) -> Alignment:
    """Minimum-edit alignment with unit costs.

    Ties in the backtrace resolve in the fixed order
    match > substitute > delete > insert, so the result is deterministic.
    """
    r = [normalize_word(w) for w in ref] if normalize else list(ref)
    h = [normalize_word(w) for w in hyp] if normalize else list(hyp)
    n, m = len(r), len(h)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (0 if r[i - 1] == h[j - 1] else 1)
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)

    ops: list[AlignOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and r[i - 1] == h[j - 1] and cost[i, j] == cost[i - 1, j - 1]:
            ops.append(AlignOp(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + 1:
            ops.append(AlignOp(SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            ops.append(AlignOp(DEL, ref_index=i - 1))
            i -= 1
        else:
            ops.append(AlignOp(INS, hyp_index=j - 1))
            j -= 1
    ops.reverse()
    return Alignment(ops)


def word_frame_span(decode: DecodeResult, word_index: int) -> tuple[int, int]:
    """Half-open frame range covered by a hypothesis word's tokens."""
    span = decode.hypothesis_words[word_index]
    first = decode.tokens[span.token_start]
    last = decode.tokens[span.token_end - 1]
    return first.emit_frame, last.emit_frame + max(last.duration, 1)


def label_comprehension(gt: UtteranceRef, h_clean: DecodeResult) -> LabelSet:
    """Label clean-hypothesis tokens against the reference transcript.

    Substituted or inserted hypothesis words mark all their tokens as
    comprehension errors. Reference words with no hypothesis counterpart
    have no token to flag; they are tallied in `gt_deleted_words`.
    """
    hyp_words = [w.word for w in h_clean.hypothesis_words]
    alignment = align_words(gt.words, hyp_words)
    token_labels = [LABEL_CORRECT] * len(h_clean.tokens)
    gt_deleted = 0
    for op in alignment.ops:
        if op.kind in (SUB, INS):
            span = h_clean.hypothesis_words[op.hyp_index]
            for t in range(span.token_start, span.token_end):
                token_labels[t] = LABEL_COMP
        elif op.kind == DEL:
            gt_deleted += 1
    return LabelSet(
        token_labels=token_labels,
        deletion_frame_flags=np.zeros(h_clean.n_frames, dtype=bool),
        word_labels=word_labels_from_tokens(token_labels, h_clean.hypothesis_words),
        gt_deleted_words=gt_deleted,
    )


def align_decodes_by_span(h_clean: DecodeResult, h_dist: DecodeResult) -> Alignment:
    """Align two decodes of the same utterance by word frame spans.

    Words whose spans overlap pair up (match or substitute); clean words
    with no overlapping partner are deletions, distorted words with no
    partner are insertions. ref side = clean, hyp side = distorted.
    """
    ops: list[AlignOp] = []
    ci = di = 0
    n_c, n_d = len(h_clean.hypothesis_words), len(h_dist.hypothesis_words)
    while ci < n_c and di < n_d:
        cs, ce = word_frame_span(h_clean, ci)
        ds, de = word_frame_span(h_dist, di)
        if max(cs, ds) < min(ce, de):
            same = h_clean.hypothesis_words[ci].word == h_dist.hypothesis_words[di].word
            ops.append(AlignOp(MATCH if same else SUB, ci, di))
            ci, di = ci + 1, di + 1
        elif de <= cs:
            ops.append(AlignOp(INS, hyp_index=di))
            di += 1
        else:
            ops.append(AlignOp(DEL, ref_index=ci))
            ci += 1
    for k in range(ci, n_c):
        ops.append(AlignOp(DEL, ref_index=k))
    for k in range(di, n_d):
        ops.append(AlignOp(INS, hyp_index=k))
    return Alignment(ops)


def label_perception_deletion(h_clean: DecodeResult, h_dist: DecodeResult) -> LabelSet:
    """Differential labels for the distorted decode against the clean one.

    Differing or inserted distorted words mark their tokens as perception
    errors; clean words absent from the distorted decode flag their frame
    spans as deletions (both decodes share one frame grid).
    """
    if h_clean.n_frames != h_dist.n_frames:
        raise ValidationError("frame-grid length mismatch between decodes")
    alignment = align_decodes_by_span(h_clean, h_dist)
    token_labels = [LABEL_CORRECT] * len(h_dist.tokens)
    del_flags = np.zeros(h_dist.n_frames, dtype=bool)
    for op in alignment.ops:
        if op.kind in (SUB, INS):
            span = h_dist.hypothesis_words[op.hyp_index]
            for t in range(span.token_start, span.token_end):
                token_labels[t] = LABEL_PERC
        elif op.kind == DEL:
            start, end = word_frame_span(h_clean, op.ref_index)
            del_flags[start:end] = True
    return LabelSet(
        token_labels=token_labels,
        deletion_frame_flags=del_flags,
        word_labels=word_labels_from_tokens(token_labels, h_dist.hypothesis_words),
    )


def word_flags_from_tokens(token_flags: list[bool], word_spans: list[WordSpan]) -> list[bool]:
    """Any-token rule: a word is flagged iff any constituent token is."""
    n_tokens = len(token_flags)
    covered = [0] * n_tokens
    for span in word_spans:
        for t in range(span.token_start, span.token_end):
            if t < 0 or t >= n_tokens:
                raise ValidationError("word span outside token range")
            covered[t] += 1
    if any(c != 1 for c in covered):
        raise ValidationError("word spans must partition tokens (gap or overlap found)")
    return [any(token_flags[t] for t in range(s.token_start, s.token_end)) for s in word_spans]
