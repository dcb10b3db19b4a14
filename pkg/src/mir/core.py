"""Layer-wise Frechet distances between modalities and their log-sum score.

For one layer with vision moments (mu_v, S_v) and text moments (mu_t, S_t):

    fid = ||mu_v - mu_t||^2 + Tr(S_v) + Tr(S_t) - 2 Tr((S_v S_t)^(1/2))

The run-level score is the natural log of the per-layer sum, floored so a
perfectly aligned run stays finite:

    mir = ln(max(sum_k fid_k, epsilon_floor))

Lower is better; the floor puts an exact-zero run at ln(epsilon_floor).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InternalConsistencyError,
    LayerComputationError,
    MirError,
    NonConvergence,
)
from .gapstats import ModalityMoments, PrepOptions, prepare_layer
from .matsqrt import METHOD_EXACT, SqrtConfig, trace_sqrt_product
from .tensor_io import RunManifest, load_layer

log = logging.getLogger(__name__)

DEFAULT_EPSILON_FLOOR = 1e-12


@dataclass
class MirOptions:
    sqrt: SqrtConfig = field(default_factory=SqrtConfig)
    prep: PrepOptions = field(default_factory=PrepOptions)
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR
    layer_range: tuple[int, int] | None = None
    threads: int = 1
    fallback_to_exact: bool = True

    def __post_init__(self):
        if self.epsilon_floor <= 0:
            raise ValueError("epsilon_floor must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.layer_range is not None:
            lo, hi = self.layer_range
            if lo > hi:
                raise ValueError(f"empty layer range {lo}..{hi}")


@dataclass
class GapProfile:
    layer_indices: list[int]
    per_layer_fid: list[float]
    mir: float
    config_fingerprint: dict


def fid_layer(
    vision: ModalityMoments,
    text: ModalityMoments,
    config: SqrtConfig | None = None,
) -> float:
    """Frechet distance between two Gaussians given by their moments.

    Tiny negative results from float cancellation are clamped to 0; a result
    clearly below zero relative to the magnitudes involved indicates a broken
    square root and raises InternalConsistencyError.
    """
    if vision.mean.shape != text.mean.shape:
        raise DimensionMismatch(
            f"vision dim {vision.mean.shape[0]} != text dim {text.mean.shape[0]}"
        )
    delta = vision.mean - text.mean
    mean_term = float(delta @ delta)
    trace_v = float(np.trace(vision.covariance))
    trace_t = float(np.trace(text.covariance))
    cross = trace_sqrt_product(vision.covariance, text.covariance, config)
    fid = mean_term + trace_v + trace_t - 2.0 * cross
    if fid < -1e-8 * max(1.0, mean_term + trace_v + trace_t):
        raise InternalConsistencyError(
            f"distance came out negative ({fid:.6e}); square root is unreliable"
        )
    return max(fid, 0.0)


def aggregate_mir(per_layer_fid, epsilon_floor: float = DEFAULT_EPSILON_FLOOR) -> float:
    """ln(max(sum of per-layer distances, epsilon_floor))."""
    total = 0.0
    for value in per_layer_fid:
        total += float(value)
    return math.log(max(total, epsilon_floor))


def _fingerprint(options: MirOptions) -> dict:
    return {
        "normalize": options.prep.normalize,
        "outlier_removal": options.prep.outlier_removal,
        "outlier_side": options.prep.outlier_side,
        "sqrt_method": options.sqrt.method,
        "ns_iterations": options.sqrt.iterations,
        "ns_tolerance": options.sqrt.tolerance,
        "jitter": options.sqrt.jitter,
        "epsilon_floor": options.epsilon_floor,
        "layer_range": list(options.layer_range) if options.layer_range else None,
        "fallback_to_exact": options.fallback_to_exact,
    }


def _layer_fid(entry, options: MirOptions) -> tuple[float, tuple[float, float, float]]:
    t0 = time.perf_counter()
    layer = load_layer(entry)
    t1 = time.perf_counter()
    vision, text = prepare_layer(layer, options.prep)
    t2 = time.perf_counter()
    try:
        fid = fid_layer(vision, text, options.sqrt)
    except NonConvergence as e:
        if not (options.fallback_to_exact and options.sqrt.method != METHOD_EXACT):
            raise
        log.warning(
            "layer %d: %s; falling back to exact square root", entry.index, e
        )
        exact = SqrtConfig(
            method=METHOD_EXACT,
            iterations=options.sqrt.iterations,
            tolerance=options.sqrt.tolerance,
            jitter=options.sqrt.jitter,
        )
        fid = fid_layer(vision, text, exact)
    t3 = time.perf_counter()
    return fid, (t1 - t0, t2 - t1, t3 - t2)


def compute_mir(
    manifest: RunManifest,
    options: MirOptions | None = None,
    timings: dict | None = None,
) -> GapProfile:
    """Run the full per-layer pipeline over a manifest and aggregate.

    Layers are processed in index order; with threads > 1 they run on a
    thread pool but results are still summed in index order, so the value is
    independent of scheduling. Any per-layer failure is re-raised as
    LayerComputationError carrying the layer index. When the iterative
    square root fails to converge and fallback is enabled (the default), the
    layer is recomputed with the exact route and a warning is logged.

    ``timings``, when provided, accumulates per-stage wall-clock seconds
    under keys load_s / prepare_s / fid_s (summed across layers, so with
    threads they can exceed elapsed time).
    """
    options = options or MirOptions()
    entries = manifest.layers
    if options.layer_range is not None:
        lo, hi = options.layer_range
        entries = [e for e in entries if lo <= e.index <= hi]

    def run_one(entry):
        try:
            return _layer_fid(entry, options)
        except MirError as e:
            raise LayerComputationError(entry.index, e) from e

    if options.threads <= 1 or len(entries) <= 1:
        results = [run_one(e) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            results = list(pool.map(run_one, entries))

    fids = [fid for fid, _ in results]
    if timings is not None:
        for key, pos in (("load_s", 0), ("prepare_s", 1), ("fid_s", 2)):
            timings[key] = timings.get(key, 0.0) + sum(t[pos] for _, t in results)

    return GapProfile(
        layer_indices=[e.index for e in entries],
        per_layer_fid=fids,
        mir=aggregate_mir(fids, options.epsilon_floor),
        config_fingerprint=_fingerprint(options),
    )


def per_layer_report(profile: GapProfile) -> list[tuple[int, float]]:
    """(layer index, distance) rows in ascending index order."""
    return list(zip(profile.layer_indices, profile.per_layer_fid))
