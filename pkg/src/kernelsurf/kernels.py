"""Squared-exponential kernel evaluation, Gram matrices, and bandwidth selection.

All distribution-space geometry in this package is accessed exclusively
through kernel evaluations; nothing else ever touches the embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError

DEFAULT_MEDIAN_SUBSET = 100


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth of the squared-exponential kernel.

    ``fallback_lengthscale`` is what the median heuristic substitutes when
    identical-value data would otherwise drive the lengthscale to zero.
    """

    lengthscale: float
    fallback_lengthscale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0.0:
            raise InputError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.fallback_lengthscale <= 0.0:
            raise InputError("fallback_lengthscale must be positive")

    @property
    def gamma(self) -> float:
        """Exponent scale 1 / (2 sigma^2)."""
        return 1.0 / (2.0 * self.lengthscale * self.lengthscale)


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to a finite float64 (n, D) array; 1-D input becomes scalars in D=1."""
    pts = getattr(x, "points", x)
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 1-D or 2-D array, got ndim={arr.ndim}")
    if arr.shape[0] == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite coordinates")
    return arr


def squared_exponential(y, z, config: KernelConfig) -> float:
    """k(y, z) = exp(-||y - z||^2 / (2 sigma^2)); always in (0, 1]."""
    ya = np.asarray(y, dtype=np.float64).ravel()
    za = np.asarray(z, dtype=np.float64).ravel()
    if ya.shape != za.shape:
        raise InputError(f"dimension mismatch: {ya.shape[0]} vs {za.shape[0]}")
    if not (np.all(np.isfinite(ya)) and np.all(np.isfinite(za))):
        raise InputError("non-finite coordinates")
    d = ya - za
    return float(np.exp(-config.gamma * np.dot(d, d)))


def gram(A, B, config: KernelConfig) -> np.ndarray:
    """Kernel matrix K[i, j] = k(A[i], B[j]).

    ``gram(A, A)`` is exactly symmetric with unit diagonal: pairwise distances
    are evaluated coordinatewise, so self-distances are exactly zero.
    """
    a = as_points(A, "A")
    b = as_points(B, "B")
    if a.shape[1] != b.shape[1]:
        raise InputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d2 = cdist(a, b, "sqeuclidean")
    return np.exp(-config.gamma * d2)


@lru_cache(maxsize=64)
def _triu_flat(n: int) -> np.ndarray:
    """Flat indices of the strict upper triangle of an (n, n) row-major array."""
    iu, ju = np.triu_indices(n, k=1)
    return iu * n + ju


def pairwise_sq_dists(points: np.ndarray) -> np.ndarray:
    """Condensed vector of squared distances over distinct pairs i < j."""
    pts = as_points(points)
    d2 = cdist(pts, pts, "sqeuclidean")
    return d2.ravel()[_triu_flat(pts.shape[0])]


def median_heuristic(
    samples,
    subset_size: int = DEFAULT_MEDIAN_SUBSET,
    fallback_lengthscale: float = 1.0,
) -> KernelConfig:
    """Bandwidth rule sigma^2 = 0.5 * median of pairwise squared distances.

    The median runs over distinct pairs within the first ``subset_size``
    samples (the input order is assumed already randomized upstream; zero
    self-distances are excluded so they cannot bias sigma downward).  The
    even-count median is the mean of the two central values.  When every
    subset sample is identical the median is zero and ``fallback_lengthscale``
    is returned instead.
    """
    pts = as_points(samples, "samples")
    if pts.shape[0] < 2:
        raise InputError("median heuristic needs at least 2 samples")
    if subset_size < 2:
        raise InputError("subset_size must be at least 2")
    sub = pts[: min(subset_size, pts.shape[0])]
    med = float(np.median(pairwise_sq_dists(sub)))
    return config_from_median(med, fallback_lengthscale)


def config_from_median(median_sq_dist: float, fallback_lengthscale: float = 1.0) -> KernelConfig:
    """Build a KernelConfig from a precomputed median squared distance."""
    sigma2 = 0.5 * median_sq_dist
    if sigma2 <= 0.0:
        return KernelConfig(fallback_lengthscale, fallback_lengthscale)
    return KernelConfig(float(np.sqrt(sigma2)), fallback_lengthscale)
