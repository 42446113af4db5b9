"""
Writers for the shared bundle/manifest contract.

One utterance per bundle: `<id>.json` holds a single JSON object with
token metadata and element offsets into the raw little-endian float32
sidecar `<id>.f32`, laid out as frame embeddings first, then per token
its probability vector followed by its joint embedding. The manifest is
JSON lines with a header record carrying vocab_size/d_model.

This module deliberately re-implements the format from its
documentation instead of importing the consumer package: the file
layout is the interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BOUNDARY_MARK = "▁"
PROB_SUM_SLACK = 1e-4  # raw model slack tolerated before renormalizing


class BundleError(ValueError):
    pass


@dataclass
class DecodedToken:
    token_id: int
    piece: str
    emit_frame: int
    duration: int


@dataclass
class DecodedUtterance:
    """Everything the extractor captures for one clip."""

    utterance_id: str
    frame_embeddings: np.ndarray  # (n_frames, d_model) float32
    tokens: list[DecodedToken]
    probs: np.ndarray  # (n_tokens, vocab_size)
    joints: np.ndarray  # (n_tokens, d_model)
    vocab_size: int

    @property
    def n_frames(self) -> int:
        return int(self.frame_embeddings.shape[0])

    @property
    def d_model(self) -> int:
        return int(self.frame_embeddings.shape[1])


def word_spans(pieces: list[str]) -> list[dict]:
    """Group pieces into words by the boundary-mark convention."""
    spans = []
    start = 0
    for i, piece in enumerate(pieces):
        if piece.startswith(BOUNDARY_MARK) and i > start:
            spans.append((start, i))
            start = i
    if pieces:
        spans.append((start, len(pieces)))
    out = []
    for s, e in spans:
        word = "".join(p.lstrip(BOUNDARY_MARK) for p in pieces[s:e])
        out.append({"word": word, "token_start": s, "token_end": e})
    return out


def normalize_probs(probs: np.ndarray) -> np.ndarray:
    """Check the raw sums are plausibly distributions, then renormalize
    exactly so the consumer's 1e-6 invariant holds."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        return probs.astype("<f4")
    if np.any(probs < -1e-7) or not np.all(np.isfinite(probs)):
        raise BundleError("probability vectors must be finite and nonnegative")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_SLACK):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise BundleError(f"probability sums deviate by {worst:.2e} (> {PROB_SUM_SLACK})")
    probs = np.clip(probs, 0.0, None)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return probs.astype("<f4")


def write_bundle(decoded: DecodedUtterance, out_dir: str | Path) -> Path:
    """Emit `<id>.json` + `<id>.f32`; returns the json path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = np.ascontiguousarray(decoded.frame_embeddings, dtype="<f4")
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise BundleError("frame embeddings must be a (n_frames, d_model) matrix")
    if not np.all(np.isfinite(frames)):
        raise BundleError("non-finite value in frame embeddings")
    probs = normalize_probs(decoded.probs)
    joints = np.ascontiguousarray(decoded.joints, dtype="<f4")
    n_tokens = len(decoded.tokens)
    if probs.shape[:1] != (n_tokens,) and n_tokens > 0:
        raise BundleError("probability rows must match token count")

    chunks = [frames.ravel()]
    offset = frames.size
    token_meta = []
    for i, tok in enumerate(decoded.tokens):
        if tok.duration not in (0, 1, 2, 3, 4):
            raise BundleError(f"duration outside {{0..4}}: {tok.duration}")
        if not (0 <= tok.emit_frame < decoded.n_frames):
            raise BundleError(f"emit_frame {tok.emit_frame} outside [0, {decoded.n_frames})")
        token_meta.append(
            {
                "token_id": int(tok.token_id),
                "piece": tok.piece,
                "emit_frame": int(tok.emit_frame),
                "duration": int(tok.duration),
                "probs_offset": offset,
                "joint_offset": offset + decoded.vocab_size,
            }
        )
        chunks.extend([probs[i], joints[i]])
        offset += decoded.vocab_size + decoded.d_model

    meta = {
        "format_version": 1,
        "utterance_id": decoded.utterance_id,
        "n_frames": decoded.n_frames,
        "d_model": decoded.d_model,
        "vocab_size": decoded.vocab_size,
        "tokens": token_meta,
        "frame_embeddings_offset": 0,
        "event_classes": [0] * decoded.n_frames,  # environment unknown: Clean
        "token_labels": [0] * n_tokens,  # labels are the pipeline's job
        "deletion_frame_flags": [0] * decoded.n_frames,
        "word_labels": [0] * len(word_spans([t.piece for t in decoded.tokens])),
        "gt_deleted_words": 0,
        "hypothesis_words": word_spans([t.piece for t in decoded.tokens]),
    }
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    base = out_dir / decoded.utterance_id
    base.with_suffix(".f32").write_bytes(blob.astype("<f4").tobytes())
    base.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return base.with_suffix(".json")


def write_manifest(
    records: list[dict], out_path: str | Path, vocab_size: int, d_model: int, seed: int = 0
) -> Path:
    out_path = Path(out_path)
    header = {
        "kind": "manifest_header",
        "split": "test",
        "seed": seed,
        "vocab_size": vocab_size,
        "d_model": d_model,
        "extra": {"source": "bridge-extract"},
    }
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return out_path
