"""`bridge-extract --model ID --audio-list FILE --out DIR`"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backends import BackendError
from .bundles import BundleError
from .extract import ExtractionJob, extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bridge-extract",
        description="Extract a pretrained token-and-duration transducer's decodes into bundle files.",
    )
    parser.add_argument("--model", required=True, help="NeMo model name, .nemo path, or fake:<seed>")
    parser.add_argument("--audio-list", required=True, type=Path, help="file with one WAV path per line")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=8)
    args = parser.parse_args(argv)
    try:
        job = ExtractionJob.from_list_file(
            args.model, args.audio_list, args.out, device=args.device, batch_size=args.batch_size
        )
        manifest = extract(job)
    except (BackendError, BundleError, OSError) as exc:
        print(f"bridge-extract failed: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
