"""Symmetric-PSD matrix square roots and the trace term of the Frechet distance.

Two interchangeable routes are provided. The exact route eigendecomposes and
clamps small negative eigenvalues. The iterative route is the coupled
Newton-Schulz scheme: normalize A by its Frobenius norm, then repeat

    T = (3I - Z Y) / 2,   Y <- Y T,   Z <- T Z

which drives Y toward sqrt(A / ||A||_F) and Z toward its inverse. Iteration
stops once the relative Frobenius update of Y is at or below the tolerance;
hitting the cap first raises NonConvergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EigenFailure, NonConvergence, NotSymmetric

METHOD_EXACT = "exact"
METHOD_NEWTON_SCHULZ = "newton-schulz"


@dataclass
class SqrtConfig:
    method: str = METHOD_NEWTON_SCHULZ
    iterations: int = 20
    tolerance: float = 1e-7
    jitter: float = 1e-10

    def __post_init__(self):
        if self.method not in (METHOD_EXACT, METHOD_NEWTON_SCHULZ):
            raise ValueError(f"unknown sqrt method {self.method!r}")
        if not 1 <= self.iterations <= 1000:
            raise ValueError(
                f"iterations must be in [1, 1000], got {self.iterations}"
            )
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


def _check_square(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def _check_symmetric(a: np.ndarray, name: str) -> np.ndarray:
    # tolerance scales with magnitude so raw-scale covariances (entries far
    # above 1) are not rejected for pure float roundoff
    limit = 1e-6 * max(1.0, float(np.abs(a).max(initial=0.0)))
    skew = float(np.abs(a - a.T).max(initial=0.0))
    if skew > limit:
        raise NotSymmetric(f"{name} is not symmetric: max|A - A^T| = {skew:.3e}")
    return (a + a.T) / 2.0


def sqrt_psd_exact(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below zero are clamped to zero; an eigenvalue more negative
    than -1e-8 * mean(trace) means the input was not PSD and raises
    ValueError.
    """
    a = _check_symmetric(_check_square(a, "matrix"), "matrix")
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as e:
        raise EigenFailure(f"eigendecomposition failed: {e}") from e
    d = a.shape[0]
    floor = -1e-8 * max(float(np.trace(a)) / d, 0.0)
    if w[0] < floor:
        raise ValueError(
            f"matrix is not positive semidefinite: min eigenvalue {w[0]:.3e}"
        )
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    return (root + root.T) / 2.0


def sqrt_newton_schulz(a: np.ndarray, config: SqrtConfig | None = None) -> np.ndarray:
    """Approximate square root of a square matrix with non-negative spectrum.

    Returns sqrt(c) * Y_k with c = ||A||_F. Raises NonConvergence when the
    final relative update exceeds config.tolerance.
    """
    config = config or SqrtConfig()
    a = _check_square(a, "matrix")
    d = a.shape[0]
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return np.zeros_like(a)

    y = a / norm
    z = np.eye(d)
    eye3 = 3.0 * np.eye(d)
    residual = np.inf
    # divergence shows up as overflow before the finiteness check fires;
    # the check is the error path, so the transient warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.iterations):
            t = 0.5 * (eye3 - z @ y)
            y_next = y @ t
            step = float(np.linalg.norm(y_next - y))
            scale = float(np.linalg.norm(y))
            residual = step / scale if scale > 0 else step
            z = t @ z
            y = y_next
            if not np.isfinite(residual):
                raise NonConvergence(
                    "iteration produced non-finite values; "
                    "input likely has negative eigenvalues"
                )
            if residual <= config.tolerance:
                break
    if residual > config.tolerance:
        raise NonConvergence(
            f"residual {residual:.3e} above tolerance {config.tolerance:.1e} "
            f"after {config.iterations} iterations"
        )
    return np.sqrt(norm) * y


def _jittered(a: np.ndarray, jitter: float) -> np.ndarray:
    if jitter == 0.0:
        return a
    d = a.shape[0]
    scale = max(float(np.trace(a)) / d, 0.0)
    if scale == 0.0:
        return a
    return a + (jitter * scale) * np.eye(d)


def trace_sqrt_product(
    cov_a: np.ndarray, cov_b: np.ndarray, config: SqrtConfig | None = None
) -> float:
    """Tr((cov_a cov_b)^(1/2)) for symmetric PSD inputs of equal dimension.

    Both inputs get a relative diagonal jitter before the square root. The
    exact route computes eigenvalues of B^(1/2) A B^(1/2), which is
    symmetric PSD with the same spectrum as A B; the iterative route runs
    Newton-Schulz directly on the (non-symmetric) product A B.
    """
    config = config or SqrtConfig()
    a = _check_symmetric(_check_square(cov_a, "cov_a"), "cov_a")
    b = _check_symmetric(_check_square(cov_b, "cov_b"), "cov_b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    a = _jittered(a, config.jitter)
    b = _jittered(b, config.jitter)

    if config.method == METHOD_EXACT:
        rb = sqrt_psd_exact(b)
        inner = rb @ a @ rb
        inner = (inner + inner.T) / 2.0
        try:
            w = np.linalg.eigvalsh(inner)
        except np.linalg.LinAlgError as e:
            raise EigenFailure(f"eigendecomposition failed: {e}") from e
        return float(np.sqrt(np.clip(w, 0.0, None)).sum())

    root = sqrt_newton_schulz(a @ b, config)
    return max(float(np.trace(root)), 0.0)
