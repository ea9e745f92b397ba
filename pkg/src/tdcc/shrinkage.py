"""Linear shrinkage of a second-moment covariance toward a scaled identity.

Used to stabilise the correlation-targeting intercepts when the effective
sample count is small relative to the matrix order.  The sample covariance is
the uncentered second-moment form (1/M) sum_j x_j x_j'; the target is
mu * I with mu = tr(S)/n, and the intensity is the classic optimal-MSE plug-in
estimate clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import symmetrize

__all__ = ["ShrinkResult", "linear_shrink"]


@dataclass
class ShrinkResult:
    matrix: np.ndarray = field(repr=False)
    intensity: float
    target_scale: float


def linear_shrink(samples: np.ndarray) -> ShrinkResult:
    """Shrink the second-moment covariance of ``samples`` (M rows of dim n).

    Returns ``rho * mu * I + (1 - rho) * S`` where ``S`` is the uncentered
    sample covariance, ``mu = tr(S)/n``, and ``rho`` is the estimated optimal
    intensity.  ``rho`` is exactly 0 in the infinite-sample limit and exactly
    1 when the per-sample dispersion dominates the signal.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ShapeError(f"expected an (M, n) sample matrix, got shape {samples.shape}")
    m_count, n = samples.shape
    if m_count < 2:
        raise ShapeError(f"need at least 2 samples, got {m_count}")

    s = symmetrize(samples.T @ samples / m_count)
    mu = float(np.trace(s) / n)
    # Normalised Frobenius distances: d2 = ||S - mu I||^2, b2 = E||x x' - S||^2 / M
    d2 = float(((s - mu * np.eye(n)) ** 2).sum() / n)
    sq = samples**2
    fourth = float((sq.sum(axis=1) ** 2).sum())
    b2_bar = (fourth / m_count - float((s**2).sum())) / (n * m_count)
    b2 = min(max(b2_bar, 0.0), d2)

    rho = 0.0 if d2 <= 0.0 else b2 / d2
    matrix = rho * mu * np.eye(n) + (1.0 - rho) * s
    return ShrinkResult(matrix=symmetrize(matrix), intensity=float(rho), target_scale=mu)
