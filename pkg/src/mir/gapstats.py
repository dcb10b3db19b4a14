"""Per-layer token statistics: scaling, outlier removal, means, covariances.

All statistics are computed in float64 regardless of input dtype. The
normalization convention is text-centric: one scalar per layer, chosen so the
mean L2 norm of the text rows becomes exactly 1, applied to both modalities.
Relative geometry within a layer is untouched; only the layer's overall scale
moves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InsufficientSamples
from .tensor_io import LayerActivations

SIDE_BOTH = "both"
SIDE_HIGH = "high"


class OutlierFallbackWarning(UserWarning):
    """Filtering would leave fewer than two rows; input kept unchanged."""


@dataclass
class ModalityMoments:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int


@dataclass
class PrepOptions:
    normalize: bool = True
    outlier_removal: bool = True
    outlier_side: str = SIDE_BOTH

    def __post_init__(self):
        if self.outlier_side not in (SIDE_BOTH, SIDE_HIGH):
            raise ValueError(f"unknown outlier side {self.outlier_side!r}")


def scaling_factor(text: np.ndarray) -> float:
    """Scalar that rescales the layer so mean text row norm equals 1.

    Equals rows / sum(row norms). All-zero text rows make the layer scale
    undefined and raise DegenerateInput.
    """
    text = np.asarray(text, dtype=np.float64)
    if text.ndim != 2 or text.shape[0] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {text.shape}")
    total = float(np.linalg.norm(text, axis=1).sum())
    if total == 0.0:
        raise DegenerateInput("all text rows are zero; scaling is undefined")
    return text.shape[0] / total


def remove_outliers(tokens: np.ndarray, side: str = SIDE_BOTH) -> np.ndarray:
    """Drop rows whose L2 norm falls outside mean +- 3 std of the norms.

    The spread is the population standard deviation and the filter runs once
    (no re-filtering on the survivors). side="high" keeps the low tail and
    trims only norms above mean + 3 std. If fewer than two rows would
    survive, the input is returned unchanged and OutlierFallbackWarning is
    emitted.
    """
    if side not in (SIDE_BOTH, SIDE_HIGH):
        raise ValueError(f"unknown outlier side {side!r}")
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {tokens.shape}")
    norms = np.linalg.norm(tokens.astype(np.float64, copy=False), axis=1)
    center = norms.mean()
    spread = norms.std()
    upper = center + 3.0 * spread
    if side == SIDE_BOTH:
        keep = (norms >= center - 3.0 * spread) & (norms <= upper)
    else:
        keep = norms <= upper
    if int(keep.sum()) < 2:
        warnings.warn(
            "outlier filter would leave fewer than 2 rows; keeping all "
            f"{tokens.shape[0]} rows",
            OutlierFallbackWarning,
            stacklevel=2,
        )
        return tokens
    return tokens[keep]


def moments(tokens: np.ndarray) -> ModalityMoments:
    """Row mean and unbiased covariance (divisor n-1), computed in float64."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {tokens.shape}")
    n = tokens.shape[0]
    if n < 2:
        raise InsufficientSamples(f"need at least 2 rows for covariance, got {n}")
    x = tokens.astype(np.float64, copy=False)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return ModalityMoments(mean=mean, covariance=cov, sample_count=n)


def prepare_layer(
    layer: LayerActivations, options: PrepOptions | None = None
) -> tuple[ModalityMoments, ModalityMoments]:
    """Scale, filter, and reduce one layer to (vision, text) moments.

    Order of operations: the text-derived scaling factor multiplies both
    modalities first, then each modality is outlier-filtered on its own
    norms, then moments are taken over the survivors.
    """
    options = options or PrepOptions()
    vision = layer.vision.astype(np.float64, copy=False)
    text = layer.text.astype(np.float64, copy=False)
    if options.normalize:
        alpha = scaling_factor(text)
        vision = vision * alpha
        text = text * alpha
    if options.outlier_removal:
        vision = remove_outliers(vision, options.outlier_side)
        text = remove_outliers(text, options.outlier_side)
    return moments(vision), moments(text)
