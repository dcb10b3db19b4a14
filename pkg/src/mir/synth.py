"""Seeded Gaussian fixtures with known per-layer distances.

Each layer draws vision tokens from N(scale * mu, scale^2 * S_v) and text
tokens from N(0, scale^2 * S_t), writes both as tensor files, and records the
closed-form distance between the two generating distributions in an
oracle.json next to the manifest. Everything is a pure function of the spec:
per-layer streams are spawned from the seed with fixed spawn keys, so the
same spec always produces byte-identical output.

The oracle values describe the raw generating distributions. A pipeline run
with normalization enabled rescales both modalities per layer, so compare
against the oracle either with normalization off or after multiplying each
oracle entry by the realized scaling factor squared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from ._jsonout import dumps
from .matsqrt import METHOD_EXACT, SqrtConfig, sqrt_psd_exact, trace_sqrt_product
from .tensor_io import LayerEntry, RunManifest, write_manifest, write_tensor

CovDescriptor = Union[str, Sequence[float], dict]

ORACLE_NOTE = "raw-distribution FIDs, pre-normalization"


@dataclass
class LayerGapSpec:
    """Distribution pair for one layer.

    mean_offset is the vision mean: a scalar x becomes the constant vector
    x/sqrt(d) in every dimension (so its norm is |x|), a sequence is used
    as-is. Covariances accept "identity", a length-d diagonal, or
    {"spd_condition": c} for a random rotation-mixed SPD matrix with that
    exact condition number. scale multiplies the drawn tokens of both
    modalities. Layers sharing a stream_key reuse identical base draws,
    which isolates pure magnitude effects across layers.
    """

    mean_offset: Union[float, Sequence[float]] = 0.0
    vision_cov: CovDescriptor = "identity"
    text_cov: CovDescriptor = "identity"
    scale: float = 1.0
    stream_key: int | None = None


@dataclass
class SynthSpec:
    num_layers: int
    hidden_dim: int
    tokens: tuple[int, int]  # (vision rows, text rows)
    seed: int
    schedule: list[LayerGapSpec] = field(default_factory=list)
    model_id: str = ""

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be at least 1")
        if len(self.tokens) != 2 or any(t < 2 for t in self.tokens):
            raise ValueError("tokens must be two counts of at least 2")
        if len(self.schedule) != self.num_layers:
            raise ValueError(
                f"schedule has {len(self.schedule)} entries for "
                f"{self.num_layers} layers"
            )
        if not self.model_id:
            self.model_id = f"synthetic:seed={self.seed}"


def random_spd(dim: int, condition: float, rng: np.random.Generator) -> np.ndarray:
    """Random SPD matrix with condition number exactly ``condition``.

    Eigenvalues run geometrically from 1/sqrt(c) to sqrt(c) (shuffled), in a
    uniformly random orthogonal basis, so the determinant-scale stays near 1.
    """
    if condition < 1.0:
        raise ValueError("condition must be >= 1")
    if dim == 1:
        return np.array([[1.0]])
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.where(np.diag(r) < 0.0, -1.0, 1.0)
    eigs = np.geomspace(1.0 / math.sqrt(condition), math.sqrt(condition), dim)
    eigs = rng.permutation(eigs)
    return (q * eigs) @ q.T


def _build_cov(desc: CovDescriptor, dim: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(desc, str):
        if desc == "identity":
            return np.eye(dim)
        raise ValueError(f"unknown covariance descriptor {desc!r}")
    if isinstance(desc, dict):
        if set(desc) == {"spd_condition"}:
            return random_spd(dim, float(desc["spd_condition"]), rng)
        raise ValueError(f"unknown covariance descriptor keys {sorted(desc)}")
    diag = np.asarray(desc, dtype=np.float64)
    if diag.shape != (dim,):
        raise ValueError(
            f"diagonal covariance has length {diag.shape}, expected ({dim},)"
        )
    if np.any(diag < 0):
        raise ValueError("diagonal covariance entries must be non-negative")
    return np.diag(diag)


def _mean_vector(offset, dim: int) -> np.ndarray:
    if np.isscalar(offset):
        return np.full(dim, float(offset) / math.sqrt(dim))
    vec = np.asarray(offset, dtype=np.float64)
    if vec.shape != (dim,):
        raise ValueError(f"mean offset has shape {vec.shape}, expected ({dim},)")
    return vec


def analytic_gaussian_fid(mean_a, cov_a, mean_b, cov_b) -> float:
    """Closed-form Frechet distance between two Gaussians.

    ||mu_a - mu_b||^2 + Tr(A) + Tr(B) - 2 Tr((A B)^(1/2)), evaluated with the
    exact square root and no jitter.
    """
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    cov_a = np.asarray(cov_a, dtype=np.float64)
    cov_b = np.asarray(cov_b, dtype=np.float64)
    delta = mean_a - mean_b
    cross = trace_sqrt_product(
        cov_a, cov_b, SqrtConfig(method=METHOD_EXACT, jitter=0.0)
    )
    fid = float(delta @ delta) + float(np.trace(cov_a) + np.trace(cov_b))
    fid -= 2.0 * cross
    return max(fid, 0.0)


def _layer_streams(seed: int, stream: int) -> tuple[np.random.Generator, np.random.Generator]:
    vision = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, 0)))
    text = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, 1)))
    return vision, text


def generate_run(spec: SynthSpec, out_dir) -> tuple[RunManifest, list[float]]:
    """Materialize a fixture run directory and return (manifest, oracle fids).

    Writes layer_XX_{vision,text}.npy files, manifest.json, and oracle.json
    under out_dir. num_pairs is recorded as 1: the fixture is one synthetic
    batch per modality, not a collection of per-pair dumps.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = spec.hidden_dim
    rows_v, rows_t = spec.tokens

    entries: list[LayerEntry] = []
    oracle: list[float] = []
    for pos, layer_spec in enumerate(spec.schedule):
        index = pos + 1
        stream = layer_spec.stream_key if layer_spec.stream_key is not None else index
        rng_v, rng_t = _layer_streams(spec.seed, stream)

        mean = _mean_vector(layer_spec.mean_offset, d)
        cov_v = _build_cov(layer_spec.vision_cov, d, rng_v)
        cov_t = _build_cov(layer_spec.text_cov, d, rng_t)
        root_v = sqrt_psd_exact(cov_v)
        root_t = sqrt_psd_exact(cov_t)

        scale = float(layer_spec.scale)
        vision = (mean + rng_v.standard_normal((rows_v, d)) @ root_v) * scale
        text = (rng_t.standard_normal((rows_t, d)) @ root_t) * scale

        vision_path = out_dir / f"layer_{index:02d}_vision.npy"
        text_path = out_dir / f"layer_{index:02d}_text.npy"
        write_tensor(vision.astype(np.float32), vision_path)
        write_tensor(text.astype(np.float32), text_path)
        entries.append(LayerEntry(index=index, vision_path=vision_path, text_path=text_path))

        oracle.append(
            analytic_gaussian_fid(
                mean * scale,
                cov_v * scale * scale,
                np.zeros(d),
                cov_t * scale * scale,
            )
        )

    manifest = RunManifest(
        model_id=spec.model_id,
        hidden_dim=d,
        num_layers=spec.num_layers,
        num_pairs=1,
        layers=entries,
        extra={
            # pins the sampling recipe so fixtures regenerate identically
            "generator": {
                "prng": "numpy.random.PCG64",
                "normal_sampler": "numpy.random.Generator.standard_normal (ziggurat)",
                "streams": "SeedSequence(seed, spawn_key=(stream, modality)); "
                "modality 0 is vision, 1 is text; stream defaults to the layer index",
                "seed": spec.seed,
            }
        },
        source_dir=out_dir,
    )
    write_manifest(manifest, out_dir / "manifest.json")
    (out_dir / "oracle.json").write_text(
        dumps({"per_layer_fid": oracle, "note": ORACLE_NOTE}),
        encoding="utf-8",
    )
    return manifest, oracle


# ---------------------------------------------------------------------------
# preset schedules


def preset_schedule(name: str, num_layers: int, hidden_dim: int) -> list[LayerGapSpec]:
    """Built-in schedules for common fixture shapes.

    zero-gap          identical distributions every layer, oracle all zeros
    decreasing        mean gap halves per layer, oracle strictly decreasing
    magnitude-growth  same base draws, scale 10^(k-1); relative geometry is
                      constant, absolute magnitude explodes with depth
    diag-affine       vision is an elementwise affine image of the text
                      distribution, so diagonal calibration can close the
                      gap almost completely
    rotated           dense SPD covariances with different rotations, so
                      diagonal calibration helps but cannot finish the job
    """
    d = hidden_dim
    if name == "zero-gap":
        return [LayerGapSpec() for _ in range(num_layers)]
    if name == "decreasing":
        return [
            LayerGapSpec(mean_offset=2.0 * 0.5**k) for k in range(num_layers)
        ]
    if name == "magnitude-growth":
        return [
            LayerGapSpec(mean_offset=1.0, scale=10.0**k, stream_key=0)
            for k in range(num_layers)
        ]
    if name == "diag-affine":
        # gains stay mild so the gradient fitter is stable at its default
        # step size; shifts carry most of the gap
        base_var = np.linspace(0.6, 1.2, d)
        schedule = []
        for k in range(num_layers):
            gain = np.roll(np.linspace(0.7, 1.25, d), k)
            shift = np.roll(np.linspace(-1.0, 1.0, d), k)
            schedule.append(
                LayerGapSpec(
                    mean_offset=shift,
                    vision_cov=gain * gain * base_var,
                    text_cov=base_var,
                )
            )
        return schedule
    if name == "rotated":
        return [
            LayerGapSpec(
                mean_offset=1.0,
                vision_cov={"spd_condition": 10.0},
                text_cov={"spd_condition": 4.0},
            )
            for _ in range(num_layers)
        ]
    raise ValueError(f"unknown schedule preset {name!r}")


PRESET_NAMES = ("zero-gap", "decreasing", "magnitude-growth", "diag-affine", "rotated")
