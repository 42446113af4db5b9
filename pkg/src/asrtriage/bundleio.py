"""
On-disk bundle and manifest formats.

A bundle is one JSON line of metadata (`<id>.json`) plus a raw
little-endian float32 sidecar (`<id>.f32`). Offsets in the metadata count
float32 elements into the sidecar, laid out as: frame embeddings first,
then per token its probability vector followed by its joint embedding.
Writing the same objects twice produces byte-identical files; reading is
the exact inverse of writing. Manifests are JSON lines, one record per
utterance, with paths resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .types import (
    CorpusManifest,
    DecodeResult,
    FrameEventTrack,
    LabelSet,
    ManifestRecord,
    TokenRecord,
    ValidationError,
    WordSpan,
)

BUNDLE_FORMAT_VERSION = 1


def write_bundle(result: DecodeResult, track: FrameEventTrack, labels: LabelSet, path: str | Path) -> None:
    """Write a validated (decode, track, labels) triple to `path`(.json/.f32)."""
    result.validate()
    if len(track) != result.n_frames:
        raise ValidationError("event track length differs from n_frames")
    labels.validate(result)

    path = Path(path)
    base = path.with_suffix("") if path.suffix == ".json" else path
    sidecar: list[np.ndarray] = [np.asarray(result.frame_embeddings, dtype="<f4").ravel()]
    offset = sidecar[0].size

    token_meta = []
    for tok in result.tokens:
        probs = np.asarray(tok.probs, dtype="<f4")
        joint = np.asarray(tok.joint_embedding, dtype="<f4")
        token_meta.append(
            {
                "token_id": int(tok.token_id),
                "piece": tok.piece,
                "emit_frame": int(tok.emit_frame),
                "duration": int(tok.duration),
                "probs_offset": offset,
                "joint_offset": offset + probs.size,
            }
        )
        sidecar.extend([probs, joint])
        offset += probs.size + joint.size

    meta = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "utterance_id": result.utterance_id,
        "n_frames": result.n_frames,
        "d_model": result.d_model,
        "vocab_size": result.vocab_size,
        "tokens": token_meta,
        "frame_embeddings_offset": 0,
        "event_classes": [int(c) for c in track.classes],
        "token_labels": [int(x) for x in labels.token_labels],
        "deletion_frame_flags": [int(b) for b in labels.deletion_frame_flags],
        "word_labels": [int(x) for x in labels.word_labels],
        "gt_deleted_words": int(labels.gt_deleted_words),
        "hypothesis_words": [
            {"word": w.word, "token_start": w.token_start, "token_end": w.token_end}
            for w in result.hypothesis_words
        ],
    }
    blob = np.concatenate(sidecar) if sidecar else np.zeros(0, dtype="<f4")
    with open(base.with_suffix(".f32"), "wb") as f:
        f.write(blob.tobytes())
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(meta, sort_keys=True) + "\n")


def read_bundle(path: str | Path) -> tuple[DecodeResult, FrameEventTrack, LabelSet]:
    """Exact inverse of write_bundle."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".json", ".f32") else path
    json_path, f32_path = base.with_suffix(".json"), base.with_suffix(".f32")
    if not json_path.exists():
        raise FileNotFoundError(f"missing bundle metadata: {json_path}")
    if not f32_path.exists():
        raise ValidationError(f"missing sidecar: {f32_path}")

    meta = json.loads(json_path.read_text(encoding="utf-8"))
    blob = np.frombuffer(f32_path.read_bytes(), dtype="<f4")

    n_frames, d_model, vocab = meta["n_frames"], meta["d_model"], meta["vocab_size"]
    expected = n_frames * d_model + len(meta["tokens"]) * (vocab + d_model)
    if blob.size != expected:
        raise ValidationError(f"sidecar length mismatch: expected {expected} floats, found {blob.size}")
    if not np.all(np.isfinite(blob)):
        raise ValidationError("non-finite value in sidecar")

    off = meta["frame_embeddings_offset"]
    frames = blob[off : off + n_frames * d_model].reshape(n_frames, d_model).copy()
    tokens = []
    for tm in meta["tokens"]:
        probs = blob[tm["probs_offset"] : tm["probs_offset"] + vocab].copy()
        joint = blob[tm["joint_offset"] : tm["joint_offset"] + d_model].copy()
        tokens.append(
            TokenRecord(
                token_id=tm["token_id"],
                piece=tm["piece"],
                emit_frame=tm["emit_frame"],
                duration=tm["duration"],
                probs=probs,
                joint_embedding=joint,
            )
        )
    words = [WordSpan(w["word"], w["token_start"], w["token_end"]) for w in meta["hypothesis_words"]]
    result = DecodeResult(
        utterance_id=meta["utterance_id"],
        frame_embeddings=frames,
        tokens=tokens,
        hypothesis_words=words,
        vocab_size=vocab,
    )
    result.validate()
    track = FrameEventTrack(np.asarray(meta["event_classes"], dtype=np.int64))
    labels = LabelSet(
        token_labels=list(meta["token_labels"]),
        deletion_frame_flags=np.asarray(meta["deletion_frame_flags"], dtype=bool),
        word_labels=list(meta["word_labels"]),
        gt_deleted_words=int(meta.get("gt_deleted_words", 0)),
    )
    if len(track) != n_frames:
        raise ValidationError("event track length differs from n_frames")
    labels.validate(result)
    return result, track, labels


def write_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    path = Path(path)
    header = {
        "kind": "manifest_header",
        "split": manifest.split,
        "seed": manifest.seed,
        "vocab_size": manifest.vocab_size,
        "d_model": manifest.d_model,
        "extra": manifest.extra,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in manifest.records:
            f.write(
                json.dumps(
                    {
                        "utterance_id": rec.utterance_id,
                        "audio_path": rec.audio_path,
                        "distortion_spec": rec.distortion_spec,
                        "decode_path": rec.decode_path,
                        "label_path": rec.label_path,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    records = []
    header: dict = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("kind") == "manifest_header":
                header = obj
                continue
            records.append(
                ManifestRecord(
                    utterance_id=obj["utterance_id"],
                    audio_path=obj.get("audio_path"),
                    distortion_spec=obj.get("distortion_spec"),
                    decode_path=obj["decode_path"],
                    label_path=obj["label_path"],
                )
            )
    return CorpusManifest(
        records=records,
        split=header.get("split", "train"),
        seed=header.get("seed", 0),
        vocab_size=header.get("vocab_size", 1024),
        d_model=header.get("d_model", 640),
        extra=header.get("extra", {}),
    )


def validate_manifest(manifest: CorpusManifest, base_dir: str | Path = ".") -> list[str]:
    """Return a list of violations; empty iff the manifest is consistent."""
    base = Path(base_dir)
    violations = []
    seen: set[str] = set()
    for rec in manifest.records:
        if rec.utterance_id in seen:
            violations.append(f"duplicate utterance_id: {rec.utterance_id}")
        seen.add(rec.utterance_id)
        for label, p in (("decode_path", rec.decode_path), ("label_path", rec.label_path), ("audio_path", rec.audio_path)):
            if p is None:
                continue
            if not (base / p).exists():
                violations.append(f"{rec.utterance_id}: unresolvable {label}: {p}")
    return violations


def validate_manifest_file(path: str | Path) -> list[str]:
    path = Path(path)
    manifest = read_manifest(path)
    violations = validate_manifest(manifest, base_dir=path.parent)
    for rec in manifest.records:
        bundle_path = path.parent / rec.decode_path
        if not bundle_path.exists():
            continue
        try:
            read_bundle(bundle_path)
        except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
            violations.append(f"{rec.utterance_id}: bundle invalid: {exc}")
    return violations
