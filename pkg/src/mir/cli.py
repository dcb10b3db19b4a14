"""Command-line front end.

Subcommands:

    mir compute    score a run manifest; prints the final value on stdout
    mir profile    write the per-layer distance table as CSV
    mir synth      generate a seeded synthetic fixture run
    mir calibrate  fit per-layer calibration maps and report their effect

stdout carries results only (compute prints exactly one number); everything
else goes to stderr. Exit codes: 0 success, 1 malformed or missing input,
2 numerical failure, 64 bad command-line usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from ._jsonout import dumps
from .core import GapProfile, MirOptions, compute_mir, per_layer_report
from .errors import (
    IoFailure,
    LayerComputationError,
    ManifestError,
    NonConvergence,
    NumericsError,
    TensorFormatError,
)
from .gapstats import SIDE_BOTH, SIDE_HIGH, PrepOptions
from .matsqrt import METHOD_EXACT, METHOD_NEWTON_SCHULZ, SqrtConfig
from .moca import calibration_gap_report, fit_gradient, fit_moment_matching
from .synth import (
    PRESET_NAMES,
    LayerGapSpec,
    SynthSpec,
    generate_run,
    preset_schedule,
)
from .tensor_io import load_layer, read_manifest

log = logging.getLogger("mir")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse parser that exits 64 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(low: int, high: int | None = None):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
        if value < low or (high is not None and value > high):
            bound = f">= {low}" if high is None else f"in [{low}, {high}]"
            raise argparse.ArgumentTypeError(f"must be {bound}: {value}")
        return value

    return parse


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive: {value}")
    return value


def _nonneg_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {value}")
    return value


def _layer_range(text: str) -> tuple[int, int]:
    """Accepts "a..b" or a single index."""
    parts = text.split("..")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a layer index or a range like 2..30, got {text!r}"
        )
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid layer range {text!r}")
    return lo, hi


def _token_counts(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        counts = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected counts like 800,1200: {text!r}")
    if len(counts) == 1:
        counts = counts * 2
    if len(counts) != 2 or any(c < 2 for c in counts):
        raise argparse.ArgumentTypeError(f"expected two counts of >= 2: {text!r}")
    return counts[0], counts[1]


def _add_prep_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--no-normalize",
        action="store_true",
        help="skip the per-layer text-norm rescaling",
    )
    parser.add_argument(
        "--no-outlier-removal",
        action="store_true",
        help="keep every token row regardless of norm",
    )
    parser.add_argument(
        "--outlier-side",
        choices=[SIDE_BOTH, SIDE_HIGH],
        default=SIDE_BOTH,
        help="trim both norm tails or only the high tail (default: both)",
    )


def _add_sqrt_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--sqrt",
        choices=[METHOD_EXACT, METHOD_NEWTON_SCHULZ],
        default=METHOD_NEWTON_SCHULZ,
        help="matrix square-root route (default: newton-schulz, which falls "
        "back to exact per layer if it does not converge)",
    )
    parser.add_argument(
        "--ns-iters",
        type=_positive_int(1, 1000),
        default=20,
        metavar="N",
        help="Newton-Schulz iteration cap (default: 20)",
    )
    parser.add_argument(
        "--jitter",
        type=_nonneg_float,
        default=1e-10,
        metavar="X",
        help="relative diagonal jitter added before square roots (default: 1e-10)",
    )


def _add_compute_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="path to manifest.json")
    _add_sqrt_flags(parser)
    _add_prep_flags(parser)
    parser.add_argument(
        "--epsilon",
        type=_positive_float,
        default=1e-12,
        metavar="X",
        help="floor inside the log so an exact-zero sum stays finite",
    )
    parser.add_argument(
        "--layers",
        type=_layer_range,
        default=None,
        metavar="A..B",
        help="restrict to an inclusive range of layer indices",
    )
    parser.add_argument(
        "--threads",
        type=_positive_int(1),
        default=None,
        metavar="N",
        help="layer-level worker threads (default: MIR_THREADS or 1)",
    )


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("MIR_THREADS")
    if env is None:
        return 1
    try:
        value = int(env)
        if value < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"MIR_THREADS must be a positive integer, got {env!r}")
    return value


class UsageError(Exception):
    pass


def _options_from(args) -> MirOptions:
    return MirOptions(
        sqrt=SqrtConfig(
            method=args.sqrt, iterations=args.ns_iters, jitter=args.jitter
        ),
        prep=PrepOptions(
            normalize=not args.no_normalize,
            outlier_removal=not args.no_outlier_removal,
            outlier_side=args.outlier_side,
        ),
        epsilon_floor=args.epsilon,
        layer_range=args.layers,
        threads=_threads(args),
    )


def _profile_csv(profile: GapProfile) -> str:
    lines = ["layer,fid"]
    for index, fid in per_layer_report(profile):
        lines.append("%d,%.17g" % (index, fid))
    return "\n".join(lines) + "\n"


def _result_document(profile: GapProfile, manifest_path: str, options, timings) -> dict:
    config = dict(profile.config_fingerprint)
    config["threads"] = options.threads
    return {
        "mir": profile.mir,
        "per_layer_fid": profile.per_layer_fid,
        "layer_indices": profile.layer_indices,
        "config": config,
        "manifest_path": manifest_path,
        "timings": {k.replace("_s", "_ms"): v * 1000.0 for k, v in timings.items()},
    }


def _cmd_compute(args) -> int:
    options = _options_from(args)
    if args.format == "csv" and not args.out:
        raise UsageError("--format csv requires --out")
    manifest = read_manifest(args.manifest)
    timings: dict = {}
    t0 = time.perf_counter()
    profile = compute_mir(manifest, options, timings)
    timings["total_s"] = time.perf_counter() - t0
    if args.out:
        out = Path(args.out)
        if args.format == "csv":
            out.write_text(_profile_csv(profile), encoding="utf-8")
        else:
            doc = _result_document(profile, str(args.manifest), options, timings)
            out.write_text(dumps(doc), encoding="utf-8")
        log.info("wrote %s", out)
    print("%.4f" % profile.mir)
    return EXIT_OK


def _cmd_profile(args) -> int:
    options = _options_from(args)
    manifest = read_manifest(args.manifest)
    profile = compute_mir(manifest, options)
    Path(args.out).write_text(_profile_csv(profile), encoding="utf-8")
    log.info("wrote %s", args.out)
    return EXIT_OK


def _load_schedule(args) -> list[LayerGapSpec]:
    name = args.schedule
    if name in PRESET_NAMES:
        return preset_schedule(name, args.layers, args.dim)
    path = Path(name)
    if not path.is_file():
        raise UsageError(
            f"--schedule must be one of {', '.join(PRESET_NAMES)} or a JSON file, "
            f"got {name!r}"
        )
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"schedule file {path}: {e}") from e
    if not isinstance(raw, list):
        raise ValueError(f"schedule file {path} must hold a JSON list")
    schedule = []
    for pos, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ValueError(f"schedule entry {pos} must be an object")
        known = {"mean_offset", "vision_cov", "text_cov", "scale", "stream_key"}
        unknown = set(item) - known
        if unknown:
            raise ValueError(f"schedule entry {pos}: unknown keys {sorted(unknown)}")
        schedule.append(LayerGapSpec(**item))
    return schedule


def _cmd_synth(args) -> int:
    schedule = _load_schedule(args)
    spec = SynthSpec(
        num_layers=args.layers,
        hidden_dim=args.dim,
        tokens=args.tokens,
        seed=args.seed,
        schedule=schedule,
    )
    manifest, oracle = generate_run(spec, args.out)
    log.info(
        "wrote %d layer(s), dim %d, tokens %d/%d under %s",
        manifest.num_layers,
        manifest.hidden_dim,
        args.tokens[0],
        args.tokens[1],
        args.out,
    )
    log.info("oracle sum %.6g", sum(oracle))
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    manifest = read_manifest(args.manifest)
    entries = manifest.layers
    if args.layers is not None:
        lo, hi = args.layers
        entries = [e for e in entries if lo <= e.index <= hi]
    sqrt_config = SqrtConfig(
        method=args.sqrt, iterations=args.ns_iters, jitter=args.jitter
    )
    prep = PrepOptions(
        normalize=not args.no_normalize,
        outlier_removal=not args.no_outlier_removal,
        outlier_side=args.outlier_side,
    )

    params_docs = []
    report_rows = ["layer,fid_before,fid_after"]
    for entry in entries:
        layer = load_layer(entry, manifest.hidden_dim)
        if args.method == "moment":
            params = fit_moment_matching(
                layer.vision, layer.text, layer_index=entry.index
            )
        else:
            params, trajectory = fit_gradient(
                layer.vision,
                layer.text,
                steps=args.steps,
                learning_rate=args.lr,
                layer_index=entry.index,
            )
            log.info(
                "layer %d: loss %.6g -> %.6g over %d steps",
                entry.index,
                trajectory[0],
                trajectory[-1],
                args.steps,
            )
        try:
            before, after = calibration_gap_report(
                layer.vision, layer.text, params, sqrt_config, prep
            )
        except NonConvergence as e:
            log.warning(
                "layer %d: %s; falling back to exact square root", entry.index, e
            )
            exact = SqrtConfig(method=METHOD_EXACT, jitter=args.jitter)
            before, after = calibration_gap_report(
                layer.vision, layer.text, params, exact, prep
            )
        log.info("layer %d: fid %.6g -> %.6g", entry.index, before, after)
        params_docs.append(
            {
                "layer": entry.index,
                "u": [float(x) for x in params.u],
                "v": [float(x) for x in params.v],
            }
        )
        report_rows.append("%d,%.17g,%.17g" % (entry.index, before, after))

    Path(args.out).write_text(dumps(params_docs), encoding="utf-8")
    log.info("wrote %s", args.out)
    if args.report:
        Path(args.report).write_text("\n".join(report_rows) + "\n", encoding="utf-8")
        log.info("wrote %s", args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mir", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p_compute = sub.add_parser("compute", help="score a run manifest")
    _add_compute_flags(p_compute)
    p_compute.add_argument("--out", help="write the result document here")
    p_compute.add_argument(
        "--format",
        choices=["json", "csv"],
        default="json",
        help="result document format (default: json)",
    )
    p_compute.set_defaults(handler=_cmd_compute)

    p_profile = sub.add_parser("profile", help="write per-layer distances as CSV")
    _add_compute_flags(p_profile)
    p_profile.add_argument("--out", required=True, help="CSV output path")
    p_profile.set_defaults(handler=_cmd_profile)

    p_synth = sub.add_parser("synth", help="generate a synthetic fixture run")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument(
        "--layers", type=_positive_int(1), required=True, metavar="K"
    )
    p_synth.add_argument("--dim", type=_positive_int(1), required=True, metavar="D")
    p_synth.add_argument(
        "--tokens",
        type=_token_counts,
        required=True,
        metavar="R[,S]",
        help="rows per modality, vision first",
    )
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument(
        "--schedule",
        default="decreasing",
        help=f"preset name ({', '.join(PRESET_NAMES)}) or JSON file "
        "(default: decreasing)",
    )
    p_synth.set_defaults(handler=_cmd_synth)

    p_cal = sub.add_parser("calibrate", help="fit per-layer calibration maps")
    p_cal.add_argument("--manifest", required=True)
    p_cal.add_argument(
        "--method",
        choices=["moment", "grad"],
        default="moment",
        help="closed-form moment matching or gradient descent",
    )
    p_cal.add_argument("--out", required=True, help="parameters JSON path")
    p_cal.add_argument("--report", help="optional before/after CSV path")
    p_cal.add_argument(
        "--steps", type=_positive_int(1), default=500, help="gradient steps"
    )
    p_cal.add_argument(
        "--lr", type=_positive_float, default=0.05, help="gradient step size"
    )
    p_cal.add_argument(
        "--layers",
        type=_layer_range,
        default=None,
        metavar="A..B",
        help="restrict to an inclusive range of layer indices",
    )
    _add_sqrt_flags(p_cal)
    _add_prep_flags(p_cal)
    p_cal.set_defaults(handler=_cmd_calibrate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)
    except UsageError as e:
        print(f"mir: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except LayerComputationError as e:
        print(f"mir: {e}", file=sys.stderr)
        if isinstance(e.cause, NumericsError):
            return EXIT_NUMERIC
        return EXIT_INPUT
    except NumericsError as e:
        print(f"mir: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ManifestError, TensorFormatError, IoFailure, OSError, ValueError) as e:
        print(f"mir: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
