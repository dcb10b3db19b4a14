"""Per-layer elementwise affine calibration of vision tokens toward text.

The map is psi(x) = u * x + v with one scale and one shift per hidden
dimension, initialized to the identity (u all ones, v all zeros). Fitting
targets the diagonal moments only: per-dimension means and variances of the
calibrated vision tokens should match the text tokens. Two fitters are
provided, a closed-form moment match and plain gradient descent on

    L(u, v) = sum_i (u_i m_v,i + v_i - m_t,i)^2
            + sum_i (u_i^2 s_v,i - s_t,i)^2

where m are per-dimension means and s per-dimension variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, Divergence, InsufficientSamples
from .gapstats import PrepOptions, prepare_layer
from .matsqrt import SqrtConfig
from .tensor_io import LayerActivations

VARIANCE_FLOOR = 1e-12


@dataclass
class CalibrationParams:
    layer_index: int
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.ndim != 1 or self.v.ndim != 1 or self.u.shape != self.v.shape:
            raise ValueError(
                f"u and v must be 1-D of equal length, got {self.u.shape} "
                f"and {self.v.shape}"
            )

    @classmethod
    def identity(cls, dim: int, layer_index: int = 0) -> "CalibrationParams":
        return cls(layer_index=layer_index, u=np.ones(dim), v=np.zeros(dim))


def apply_calibration(tokens: np.ndarray, params: CalibrationParams) -> np.ndarray:
    """u * tokens + v rowwise, preserving the input dtype."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {tokens.shape}")
    if tokens.shape[1] != params.u.shape[0]:
        raise DimensionMismatch(
            f"tokens have {tokens.shape[1]} columns, params expect "
            f"{params.u.shape[0]}"
        )
    out = tokens.astype(np.float64, copy=False) * params.u + params.v
    return out.astype(tokens.dtype, copy=False)


def _diag_stats(tokens: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {tokens.shape}")
    if tokens.shape[0] < 2:
        raise InsufficientSamples(
            f"{name} needs at least 2 rows, got {tokens.shape[0]}"
        )
    return tokens.mean(axis=0), tokens.var(axis=0, ddof=1)


def fit_moment_matching(
    vision: np.ndarray, text: np.ndarray, layer_index: int = 0
) -> CalibrationParams:
    """Closed-form fit matching per-dimension mean and variance exactly.

    u_i = std_t,i / std_v,i and v_i = m_t,i - u_i m_v,i. Dimensions where the
    vision variance is below the floor keep u_i = 1 and match the mean only.
    """
    mean_v, var_v = _diag_stats(vision, "vision")
    mean_t, var_t = _diag_stats(text, "text")
    if mean_v.shape != mean_t.shape:
        raise DimensionMismatch(
            f"vision dim {mean_v.shape[0]} != text dim {mean_t.shape[0]}"
        )
    safe = var_v > VARIANCE_FLOOR
    u = np.ones_like(mean_v)
    u[safe] = np.sqrt(var_t[safe] / var_v[safe])
    v = mean_t - u * mean_v
    return CalibrationParams(layer_index=layer_index, u=u, v=v)


def diagonal_moment_loss(
    u: np.ndarray,
    v: np.ndarray,
    mean_v: np.ndarray,
    var_v: np.ndarray,
    mean_t: np.ndarray,
    var_t: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus its analytic gradients with respect to u and v."""
    mean_residual = u * mean_v + v - mean_t
    var_residual = u * u * var_v - var_t
    loss = float(mean_residual @ mean_residual + var_residual @ var_residual)
    grad_v = 2.0 * mean_residual
    grad_u = 2.0 * mean_residual * mean_v + 4.0 * u * var_v * var_residual
    return loss, grad_u, grad_v


def fit_gradient(
    vision: np.ndarray,
    text: np.ndarray,
    steps: int = 500,
    learning_rate: float = 0.05,
    layer_index: int = 0,
) -> tuple[CalibrationParams, list[float]]:
    """Gradient descent from the identity on the diagonal-moment loss.

    Returns the best parameters seen plus the loss recorded before each step
    and once after the last, so the trajectory has steps+1 entries and its
    final value never exceeds the first. A loss exceeding 10x its starting
    value aborts with Divergence (the step size is too large for the data's
    scale).
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    mean_v, var_v = _diag_stats(vision, "vision")
    mean_t, var_t = _diag_stats(text, "text")
    if mean_v.shape != mean_t.shape:
        raise DimensionMismatch(
            f"vision dim {mean_v.shape[0]} != text dim {mean_t.shape[0]}"
        )

    u = np.ones_like(mean_v)
    v = np.zeros_like(mean_v)
    trajectory: list[float] = []
    best_loss = np.inf
    best = (u.copy(), v.copy())

    loss, grad_u, grad_v = diagonal_moment_loss(u, v, mean_v, var_v, mean_t, var_t)
    initial = loss
    for _ in range(steps):
        trajectory.append(loss)
        if loss < best_loss:
            best_loss = loss
            best = (u.copy(), v.copy())
        u = u - learning_rate * grad_u
        v = v - learning_rate * grad_v
        loss, grad_u, grad_v = diagonal_moment_loss(
            u, v, mean_v, var_v, mean_t, var_t
        )
        if not np.isfinite(loss) or loss > 10.0 * initial + 1e-30:
            raise Divergence(
                f"loss grew from {initial:.6e} to {loss:.6e}; "
                "reduce the learning rate"
            )
    trajectory.append(loss)
    if loss < best_loss:
        best_loss = loss
        best = (u.copy(), v.copy())
    params = CalibrationParams(layer_index=layer_index, u=best[0], v=best[1])
    return params, trajectory


def calibration_gap_report(
    vision: np.ndarray,
    text: np.ndarray,
    params: CalibrationParams,
    sqrt_config: SqrtConfig | None = None,
    prep: PrepOptions | None = None,
) -> tuple[float, float]:
    """Per-layer distance before and after applying the calibration.

    Both measurements run through the identical preparation options, so the
    comparison isolates the effect of the map itself.
    """
    from .core import fid_layer

    def measure(vision_tokens) -> float:
        layer = LayerActivations(
            layer_index=params.layer_index, vision=vision_tokens, text=text
        )
        mv, mt = prepare_layer(layer, prep)
        return fid_layer(mv, mt, sqrt_config)

    before = measure(vision)
    after = measure(apply_calibration(vision, params))
    return before, after
