"""Command line entry point: mir-extract.

Dumps per-layer activation records for a pairs list and prints the manifest
path, ready for the mir scorer:

    mir-extract --model toy:2x32 --pairs pairs.jsonl --out run/
    mir compute --manifest run/manifest.json
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ExtractionError
from .extract import TEMPLATE_DEFAULT, TEMPLATE_NONE, ExtractionConfig, extract_run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mir-extract",
        description="Dump per-layer vision/text activation records from a "
        "vision-language model.",
    )
    p.add_argument("--model", required=True, help="model id, e.g. toy:2x32 or an HF id")
    p.add_argument(
        "--pairs",
        required=True,
        help='JSONL file of {"image": path, "text": string} records',
    )
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument(
        "--template",
        choices=[TEMPLATE_NONE, TEMPLATE_DEFAULT],
        default=TEMPLATE_NONE,
        help="prompt template around the pair text (default: none)",
    )
    p.add_argument(
        "--include-embedding",
        action="store_true",
        help="record the embedding output as layer 1, shifting blocks up",
    )
    p.add_argument(
        "--include-system",
        action="store_true",
        help="count system-prompt positions as text rows",
    )
    p.add_argument(
        "--calibration",
        help="per-layer affine parameters (mir calibrate output) applied to "
        "the recorded vision rows",
    )
    p.add_argument("--seed", type=int, default=0, help="toy model weight seed")
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    args = build_parser().parse_args(argv)
    cfg = ExtractionConfig(
        model=args.model,
        pairs_file=args.pairs,
        out_dir=args.out,
        template=args.template,
        include_embedding=args.include_embedding,
        include_system=args.include_system,
        calibration=args.calibration,
        seed=args.seed,
    )
    try:
        manifest = extract_run(cfg)
    except ExtractionError as e:
        print(f"mir-extract: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"mir-extract: {e}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
