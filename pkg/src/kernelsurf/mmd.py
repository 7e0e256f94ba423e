"""Biased squared-MMD estimation, repetition averaging, and the two-sample test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InputError
from .kernels import (
    DEFAULT_MEDIAN_SUBSET,
    KernelConfig,
    as_points,
    median_heuristic,
)

DEFAULT_SHUFFLES = 1000
MIN_SHUFFLES = 100

_DOMAIN_TAGS = ("", "spatial", "temporal", "spectral")


@dataclass
class SampleSet:
    """An ordered set of fixed-dimension points extracted from one data stream."""

    points: np.ndarray
    source_id: str = ""
    domain_tag: str = ""

    def __post_init__(self):
        self.points = as_points(self.points, "points")
        if self.domain_tag not in _DOMAIN_TAGS:
            raise InputError(f"unknown domain_tag {self.domain_tag!r}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class TestResult:
    """Outcome of one two-sample test at significance level alpha."""

    mmd2: float
    threshold: float
    alpha: float
    reject_null: bool

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InputError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.reject_null != (self.mmd2 > self.threshold):
            raise InputError("reject_null inconsistent with mmd2 vs threshold")


def _paired(Y, Z) -> tuple[np.ndarray, np.ndarray]:
    y = as_points(Y, "Y")
    z = as_points(Z, "Z")
    if y.shape[1] != z.shape[1]:
        raise InputError(f"dimension mismatch: {y.shape[1]} vs {z.shape[1]}")
    return y, z


def mmd2_biased(Y, Z, config: KernelConfig) -> float:
    """Biased squared-MMD estimate between two sample sets.

    Kernel sums are accumulated with exact (correctly rounded) summation, so
    the result is invariant under argument order and is exactly zero for
    bit-equal sample sets.  Tiny negative rounding residues are clamped to
    zero; the estimator is analytically nonnegative.
    """
    y, z = _paired(Y, Z)
    n, m = y.shape[0], z.shape[0]
    g = config.gamma
    s_yy = math.fsum(np.exp(-g * cdist(y, y, "sqeuclidean")).ravel().tolist())
    s_zz = math.fsum(np.exp(-g * cdist(z, z, "sqeuclidean")).ravel().tolist())
    s_yz = math.fsum(np.exp(-g * cdist(y, z, "sqeuclidean")).ravel().tolist())
    v = s_yy / (n * n) + s_zz / (m * m) - 2.0 * s_yz / (n * m)
    return v if v > 0.0 else 0.0


def _mmd2_fast(y: np.ndarray, z: np.ndarray, gamma: float) -> float:
    """Vectorized estimator for the pipeline hot path.

    Bit-equal inputs short-circuit to exactly zero (the analytic value); the
    general case agrees with :func:`mmd2_biased` to float accumulation order.
    """
    n, m = y.shape[0], z.shape[0]
    if n == m and np.array_equal(y, z):
        return 0.0
    s_yy = float(np.exp(-gamma * cdist(y, y, "sqeuclidean")).sum())
    s_zz = float(np.exp(-gamma * cdist(z, z, "sqeuclidean")).sum())
    s_yz = float(np.exp(-gamma * cdist(y, z, "sqeuclidean")).sum())
    v = s_yy / (n * n) + s_zz / (m * m) - 2.0 * s_yz / (n * m)
    return v if v > 0.0 else 0.0


@lru_cache(maxsize=64)
def _condensed_subset(m: int, k: int) -> np.ndarray:
    """Condensed-distance indices of all pairs within the first k of m samples."""
    idx = []
    for i in range(k - 1):
        start = i * m - i * (i + 1) // 2
        idx.append(np.arange(start, start + (k - i - 1)))
    return np.concatenate(idx)


def _pair_median(condensed: np.ndarray) -> float:
    """Median of a condensed distance vector via a single partition pass."""
    c = condensed.shape[0]
    half = c // 2
    if c % 2:
        return float(np.partition(condensed, half)[half])
    part = np.partition(condensed, [half - 1, half])
    return 0.5 * (float(part[half - 1]) + float(part[half]))


def _kernel_mass(d: np.ndarray, gamma: float) -> float:
    """Sum of exp(-gamma * d), destroying d."""
    d *= -gamma
    np.exp(d, out=d)
    return float(np.add.reduce(d, axis=None))


def _rep_mmd(y: np.ndarray, z: np.ndarray, config: KernelConfig | None,
             median_subset: int, fallback_lengthscale: float) -> float:
    """One repetition: bandwidth from the test-side draw, then the estimate.

    Within-set kernel sums run on condensed (triangle) distances; the
    bandwidth median reuses the test-side condensed distances directly.
    """
    n, m = y.shape[0], z.shape[0]
    if n == m and y[0, 0] == z[0, 0] and np.array_equal(y, z):
        return 0.0
    d_zz = pdist(z, "sqeuclidean") if m > 1 else np.zeros(0)
    if config is None:
        k = min(median_subset, m)
        med = _pair_median(d_zz[_condensed_subset(m, k)]) if k >= 2 else 0.0
        sigma2 = 0.5 * med
        if sigma2 > 0.0:
            g = 1.0 / (2.0 * sigma2)
        else:
            g = 1.0 / (2.0 * fallback_lengthscale * fallback_lengthscale)
    else:
        g = config.gamma
    d_yy = pdist(y, "sqeuclidean") if n > 1 else np.zeros(0)
    s_yy = 2.0 * _kernel_mass(d_yy, g) + n
    s_zz = 2.0 * _kernel_mass(d_zz, g) + m
    s_yz = _kernel_mass(cdist(y, z, "sqeuclidean"), g)
    v = s_yy / (n * n) + s_zz / (m * m) - 2.0 * s_yz / (n * m)
    return v if v > 0.0 else 0.0


def averaged_mmd(
    stream_y,
    stream_z,
    sampler,
    repetitions: int,
    rng: np.random.Generator,
    *,
    config: KernelConfig | None = None,
    cross_user: bool = False,
    median_subset: int = DEFAULT_MEDIAN_SUBSET,
    fallback_lengthscale: float = 1.0,
) -> float:
    """Mean of ``repetitions`` independent squared-MMD estimates between two streams.

    Each repetition draws a fresh sample-set pair per the sampling spec
    (fresh start position or frequency draw), optionally applies the
    cross-user mean shift to the test-side draw, and recomputes the
    median-heuristic bandwidth from that draw unless ``config`` pins one.
    """
    from . import sampling  # deferred: sampling depends on SampleSet above

    if repetitions < 1:
        raise InputError("repetitions must be >= 1")
    prep_y = sampling.prepare_stream(stream_y, sampler)
    prep_z = sampling.prepare_stream(stream_z, sampler)
    total = 0.0
    for _ in range(repetitions):
        y, z = sampling.draw_pair(prep_y, prep_z, sampler, rng)
        if cross_user:
            z = z - z.mean(axis=0) + y.mean(axis=0)
        if sampler.channel_mode == "split":
            vals = [
                _rep_mmd(y[:, [c]], z[:, [c]], config, median_subset, fallback_lengthscale)
                for c in range(y.shape[1])
            ]
            total += float(np.mean(vals))
        else:
            total += _rep_mmd(y, z, config, median_subset, fallback_lengthscale)
    return total / repetitions


def bootstrap_threshold(
    Y,
    Z,
    config: KernelConfig,
    alpha: float,
    shuffles: int = DEFAULT_SHUFFLES,
    rng: np.random.Generator | None = None,
) -> float:
    """Permutation-null significance threshold for the biased squared MMD.

    Pools both sample sets, repeatedly re-partitions the pool into sizes
    (n, m) uniformly at random, recomputes the estimator per shuffle, and
    returns the (1 - alpha) quantile of the null statistics.  Exchangeability
    of the pooled sample under the null makes this the exact reference
    distribution for the test.
    """
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must be in (0, 1), got {alpha}")
    if shuffles < MIN_SHUFFLES:
        raise InputError(f"need at least {MIN_SHUFFLES} shuffles for a usable quantile")
    if rng is None:
        rng = np.random.default_rng()
    y, z = _paired(Y, Z)
    n, m = y.shape[0], z.shape[0]
    pool = np.vstack([y, z])
    G = np.exp(-config.gamma * cdist(pool, pool, "sqeuclidean"))
    s_tot = float(G.sum())

    perms = rng.permuted(np.tile(np.arange(n + m), (shuffles, 1)), axis=1)
    stats = np.empty(shuffles)
    block = max(1, min(shuffles, 8_000_000 // ((n + m) * (n + m))))
    for i0 in range(0, shuffles, block):
        a = perms[i0:i0 + block, :n]
        b = perms[i0:i0 + block, n:]
        s_yy = G[a[:, :, None], a[:, None, :]].sum(axis=(1, 2))
        s_zz = G[b[:, :, None], b[:, None, :]].sum(axis=(1, 2))
        s_yz = (s_tot - s_yy - s_zz) / 2.0
        stats[i0:i0 + block] = s_yy / (n * n) + s_zz / (m * m) - 2.0 * s_yz / (n * m)
    np.maximum(stats, 0.0, out=stats)
    return float(np.quantile(stats, 1.0 - alpha))


def two_sample_test(
    Y,
    Z,
    alpha: float = 0.05,
    shuffles: int = DEFAULT_SHUFFLES,
    rng: np.random.Generator | None = None,
    *,
    config: KernelConfig | None = None,
    median_subset: int = DEFAULT_MEDIAN_SUBSET,
    fallback_lengthscale: float = 1.0,
) -> TestResult:
    """Kernel two-sample test: reject "same distribution" when MMD^2 exceeds
    the permutation threshold.

    The bandwidth defaults to the median heuristic computed on the test-side
    (second) sample set.
    """
    y, z = _paired(Y, Z)
    if config is None:
        config = median_heuristic(z, median_subset, fallback_lengthscale)
    value = mmd2_biased(y, z, config)
    threshold = bootstrap_threshold(y, z, config, alpha, shuffles, rng)
    return TestResult(mmd2=value, threshold=threshold, alpha=alpha,
                      reject_null=value > threshold)
