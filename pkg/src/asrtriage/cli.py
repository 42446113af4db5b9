"""
Command-line entry point.

Subcommands mirror the pipeline stages (synth, decode, label, train,
calibrate, detect, fuse, clarify, eval, report), plus `pipeline` to run
everything, `distort` for one-off waveform distortion, and `validate`
for manifest/run-directory checks.

Exit codes: 0 success, 2 config error, 3 stage failure, 4 validation
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .runcfg import load_config, resolve_config
from .types import ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_VALIDATION = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asrtriage",
        description="Cause-aware ASR error detection and clarification, desk scale.",
    )
    parser.add_argument("--config", type=Path, help="JSON config overriding the defaults")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, help="within-stage parallelism bound")
    parser.add_argument("--text-bypass", action="store_true", help="feed replies as text")
    parser.add_argument("--acoustic", action="store_true", help="re-decode replies acoustically")
    parser.add_argument("--external-codec", action="store_true", help="use ffmpeg for packet loss")
    parser.add_argument("--llm-endpoint", help="OpenAI-compatible chat endpoint URL")
    parser.add_argument("--llm-model", help="model name for the chat endpoint")

    sub = parser.add_subparsers(dest="command", required=True)
    from .pipeline import STAGES

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("run_dir", type=Path)
        p.add_argument("--force", action="store_true", help="rerun even if marked done")
    p = sub.add_parser("pipeline", help="run all stages in order")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("distort", help="distort one WAV file")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--kind", required=True)
    p.add_argument("--distort-seed", type=int, default=0)

    p = sub.add_parser("validate", help="validate a run directory or manifest")
    p.add_argument("target", type=Path)
    return parser


def _apply_cli_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    if args.text_bypass:
        cfg["text_bypass"] = True
    if args.acoustic:
        cfg["text_bypass"] = False
    if args.external_codec:
        cfg["external_codec"] = True
    if args.llm_endpoint:
        cfg.setdefault("llm", {})["endpoint"] = args.llm_endpoint
    if args.llm_model:
        cfg.setdefault("llm", {})["model"] = args.llm_model
    return resolve_config(cfg)


def _cmd_distort(args) -> int:
    import numpy as np
    from scipy.io import wavfile

    from .distort import AssetBank, apply_spec, sample_spec
    from .types import AudioClip

    rate, data = wavfile.read(args.input)
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    clip = AudioClip(np.asarray(data, dtype=np.float32).reshape(-1), rate)
    bank = AssetBank(seed=args.distort_seed)
    spec = sample_spec(args.kind, args.distort_seed, clip.duration_s, bank)
    out, track = apply_spec(clip, spec, bank)
    wavfile.write(args.output, out.sample_rate, out.samples)
    print(json.dumps({"spec": spec.to_json(), "event_classes": track.classes.tolist()}))
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .bundleio import validate_manifest_file
    from .pipeline import validate_run_dir

    target = args.target
    violations = (
        validate_manifest_file(target) if target.is_file() else validate_run_dir(target)
    )
    for v in violations:
        print(f"violation: {v}")
    print(f"{len(violations)} violations")
    return EXIT_OK if not violations else EXIT_VALIDATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_cli_overrides(cfg, args)
    except (ValidationError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "distort":
        return _cmd_distort(args)
    if args.command == "validate":
        return _cmd_validate(args)

    from .pipeline import STAGES, StageError, run_pipeline, run_stage

    try:
        if args.command == "pipeline":
            ran = run_pipeline(cfg, args.run_dir, force=args.force)
            print(f"ran stages: {', '.join(ran) if ran else '(all up to date)'}")
        elif args.command in STAGES:
            ran = run_stage(args.command, cfg, args.run_dir, force=args.force)
            print(f"{args.command}: {'ran' if ran else 'up to date'}")
        else:
            print(f"unknown command {args.command}", file=sys.stderr)
            return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc} (run dir: {args.run_dir})", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
