"""Extraction job: run a backend over an audio list and write bundles."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .backends import BackendError, load_backend
from .bundles import BundleError, DecodedUtterance, write_bundle, write_manifest


@dataclass
class ExtractionJob:
    model_id: str
    audio_paths: list[Path]
    out_dir: Path
    device: str = "cpu"
    batch_size: int = 8  # halved once on out-of-memory errors

    @classmethod
    def from_list_file(cls, model_id: str, list_path: str | Path, out_dir: str | Path, **kw):
        paths = [
            Path(line.strip())
            for line in Path(list_path).read_text().splitlines()
            if line.strip() and not line.startswith("#")
        ]
        return cls(model_id=model_id, audio_paths=paths, out_dir=Path(out_dir), **kw)


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data, int(rate)


def extract(job: ExtractionJob, log=print) -> Path:
    """Decode every clip, write bundles and a manifest; returns manifest path.

    Per-file failures are logged and skipped; the job continues.
    """
    backend = load_backend(job.model_id, device=job.device)
    out_dir = Path(job.out_dir)
    bundles_dir = out_dir / "bundles"
    records = []
    failures = 0
    for path in job.audio_paths:
        utt_id = path.stem
        try:
            samples, rate = read_wav(path)
            raw = _decode_with_retry(backend, samples, rate, job, log)
            decoded = DecodedUtterance(
                utterance_id=utt_id,
                frame_embeddings=raw.frame_embeddings,
                tokens=raw.tokens,
                probs=raw.probs,
                joints=raw.joints,
                vocab_size=backend.vocab_size,
            )
            write_bundle(decoded, bundles_dir)
            records.append(
                {
                    "utterance_id": utt_id,
                    "audio_path": str(path),
                    "distortion_spec": None,
                    "decode_path": f"bundles/{utt_id}.json",
                    "label_path": f"bundles/{utt_id}.json",
                }
            )
        except (OSError, ValueError, BundleError, BackendError) as exc:
            failures += 1
            log(f"skipping {path}: {exc}")
    if not records:
        raise BackendError("extraction produced no bundles")
    manifest_path = write_manifest(
        records, out_dir / "manifest.jsonl", vocab_size=backend.vocab_size, d_model=backend.d_model
    )
    summary = {
        "model_id": job.model_id,
        "n_clips": len(job.audio_paths),
        "n_bundles": len(records),
        "n_failures": failures,
        "vocab_size": backend.vocab_size,
        "d_model": backend.d_model,
        "joint_embedding_path": "reconstructed: enc_projection + pred_projection",
    }
    (out_dir / "extract_summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    log(f"wrote {len(records)} bundles to {out_dir} ({failures} failures)")
    return manifest_path


def _decode_with_retry(backend, samples, rate, job, log):
    try:
        return backend.decode(samples, rate)
    except MemoryError:
        job.batch_size = max(1, job.batch_size // 2)
        log(f"out of memory; retrying once with batch_size={job.batch_size}")
        return backend.decode(samples, rate)
