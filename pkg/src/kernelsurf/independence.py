"""HSIC dependence estimation and the minimum-gap search for independent
time-series samples.

The gap search drives the temporal spacing question: how far apart must two
extractions from the same recording be before they stop carrying information
about each other.  The answer doubles as a mixing-speed readout for the
underlying process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantStreamError, InputError
from .kernels import KernelConfig, as_points, gram, median_heuristic
from .mmd import MIN_SHUFFLES

DEFAULT_SEARCH_SHUFFLES = 200


@dataclass
class RealizationSet:
    """Q independent recordings of one (surface, source, channel) process."""

    realizations: np.ndarray   # (Q, length)
    rate: float

    def __post_init__(self):
        self.realizations = np.asarray(self.realizations, dtype=np.float64)
        if self.realizations.ndim != 2:
            raise InputError("realizations must be a (Q, length) array")
        if self.realizations.shape[0] < 2:
            raise InputError("need at least 2 realizations")
        if not np.all(np.isfinite(self.realizations)):
            raise InputError("realizations contain non-finite values")
        if self.rate <= 0:
            raise InputError("rate must be positive")

    @property
    def count(self) -> int:
        return self.realizations.shape[0]

    @property
    def length(self) -> int:
        return self.realizations.shape[1]


@dataclass(frozen=True)
class MixingSearchConfig:
    """Controls for the minimum-gap search."""

    repetitions: int = 50
    t1_max: int = 100              # samples; start index drawn from the first t1_max
    alpha: float = 0.05
    max_gap: int | None = None     # derived from stream length when None
    shuffles: int = DEFAULT_SEARCH_SHUFFLES
    stride_growth: float = 1.0     # >1 switches to geometric gap strides

    def __post_init__(self):
        if self.repetitions < 1:
            raise InputError("repetitions must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must be in (0, 1)")
        if self.t1_max < 1:
            raise InputError("t1_max must be >= 1 sample")
        if self.shuffles < MIN_SHUFFLES:
            raise InputError(f"shuffles must be >= {MIN_SHUFFLES}")
        if self.stride_growth < 1.0:
            raise InputError("stride_growth must be >= 1")
        if self.max_gap is not None and self.max_gap < 1:
            raise InputError("max_gap must be >= 1")


@dataclass(frozen=True)
class GapStats:
    """One row of the search trace."""

    gap: int
    cb_plus: float      # upper quantile of the R dependence statistics
    kappa_bar: float    # mean of the R bootstrap thresholds


@dataclass
class MixingResult:
    """Outcome of the gap search: T* plus the trace that produced it."""

    t_star: int | None
    trace: list[GapStats]
    converged: bool

    def __post_init__(self):
        gaps = [row.gap for row in self.trace]
        if any(b <= a for a, b in zip(gaps, gaps[1:])):
            raise InputError("trace gaps must be strictly increasing")
        if self.converged:
            if not self.trace or self.t_star != self.trace[-1].gap:
                raise InputError("converged result must end its trace at t_star")


def hsic_b(Y, Z, config_y: KernelConfig, config_z: KernelConfig) -> float:
    """Biased HSIC estimate (1/n^2) tr(K H L H) for paired samples.

    H is the centering matrix I - n^-1 e e^T.  Nonnegative up to rounding;
    tiny negative residues are clamped.
    """
    y = as_points(Y, "Y")
    z = as_points(Z, "Z")
    n = y.shape[0]
    if z.shape[0] != n:
        raise InputError(f"paired sample sets must match in size: {n} vs {z.shape[0]}")
    if n < 3:
        raise InputError("hsic_b needs at least 3 paired observations")
    K = gram(y, y, config_y)
    L = gram(z, z, config_z)
    Lc = L - L.mean(axis=0) - L.mean(axis=1)[:, None] + L.mean()
    v = float((K * Lc).sum()) / (n * n)
    return v if v > 0.0 else 0.0


def _centered(K: np.ndarray) -> np.ndarray:
    return K - K.mean(axis=0) - K.mean(axis=1)[:, None] + K.mean()


def hsic_threshold(
    Y,
    Z,
    alpha: float,
    shuffles: int = DEFAULT_SEARCH_SHUFFLES,
    rng: np.random.Generator | None = None,
    *,
    config_y: KernelConfig | None = None,
    config_z: KernelConfig | None = None,
) -> float:
    """Permutation threshold for hsic_b: shuffle Z's pairing against Y.

    Rows and columns of L are permuted jointly per shuffle; the threshold is
    the (1 - alpha) quantile of the shuffled statistics.  Kernel bandwidths
    default to the median heuristic on each sample set.
    """
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must be in (0, 1), got {alpha}")
    if shuffles < MIN_SHUFFLES:
        raise InputError(f"need at least {MIN_SHUFFLES} shuffles for a usable quantile")
    if rng is None:
        rng = np.random.default_rng()
    y = as_points(Y, "Y")
    z = as_points(Z, "Z")
    n = y.shape[0]
    if z.shape[0] != n:
        raise InputError(f"paired sample sets must match in size: {n} vs {z.shape[0]}")
    if config_y is None:
        config_y = median_heuristic(y)
    if config_z is None:
        config_z = median_heuristic(z)
    K = gram(y, y, config_y)
    L = gram(z, z, config_z)
    return _permutation_quantile(_centered(K), L, alpha, shuffles, rng, n)


def _permutation_quantile(Kc, L, alpha, shuffles, rng, n) -> float:
    perms = rng.permuted(np.tile(np.arange(n), (shuffles, 1)), axis=1)
    stats = np.empty(shuffles)
    block = max(1, min(shuffles, 8_000_000 // (n * n)))
    for i0 in range(0, shuffles, block):
        p = perms[i0:i0 + block]
        Lp = L[p[:, :, None], p[:, None, :]]
        stats[i0:i0 + block] = np.einsum("ij,bij->b", Kc, Lp) / (n * n)
    np.maximum(stats, 0.0, out=stats)
    return float(np.quantile(stats, 1.0 - alpha))


def minimum_independent_gap(
    data: RealizationSet,
    cfg: MixingSearchConfig,
    rng: np.random.Generator | None = None,
) -> MixingResult:
    """Search for the smallest gap T* at which t-spaced extractions test
    independent.

    For each candidate gap t (starting at 1), R repetitions each draw a start
    index t1 uniformly from the first t1_max samples, split the Q realizations
    into the paired sets Y = {x_q(t1)} and Z = {x_q(t1 + t)}, and compute the
    dependence statistic and its bootstrap threshold.  The search stops at the
    first t where the (1 - alpha) quantile of the R statistics falls to or
    below the mean of the R thresholds; if max_gap is reached first the result
    carries the full trace and converged=False.
    """
    if rng is None:
        rng = np.random.default_rng()
    x = data.realizations
    q, length = x.shape
    if q < 3:
        raise InputError(f"gap search needs at least 3 realizations, got {q}")
    if length < cfg.t1_max + 1:
        raise InputError(
            f"realizations too short: need more than t1_max={cfg.t1_max} samples, have {length}"
        )
    if np.all(np.ptp(x, axis=1) == 0.0):
        raise ConstantStreamError(
            "all realizations are constant-valued: unsuitable for HSIC"
        )
    gap_cap = length - cfg.t1_max
    max_gap = gap_cap if cfg.max_gap is None else min(cfg.max_gap, gap_cap)
    if max_gap < 1:
        raise InputError("stream too short for any gap given t1_max")

    trace: list[GapStats] = []
    t = 1
    while t <= max_gap:
        hs = np.empty(cfg.repetitions)
        ks = np.empty(cfg.repetitions)
        for r in range(cfg.repetitions):
            t1 = int(rng.integers(0, cfg.t1_max))
            y = x[:, t1][:, None]
            z = x[:, t1 + t][:, None]
            config_y = median_heuristic(y)
            config_z = median_heuristic(z)
            K = gram(y, y, config_y)
            L = gram(z, z, config_z)
            Kc = _centered(K)
            v = float((Kc * L).sum()) / (q * q)
            hs[r] = v if v > 0.0 else 0.0
            ks[r] = _permutation_quantile(Kc, L, cfg.alpha, cfg.shuffles, rng, q)
        cb_plus = float(np.quantile(hs, 1.0 - cfg.alpha))
        kappa_bar = float(ks.mean())
        trace.append(GapStats(t, cb_plus, kappa_bar))
        if cb_plus <= kappa_bar:
            return MixingResult(t_star=t, trace=trace, converged=True)
        t = max(t + 1, int(np.ceil(t * cfg.stride_growth)))
    return MixingResult(t_star=None, trace=trace, converged=False)


def mixing_report(results: dict[str, MixingResult], rate) -> dict:
    """Tabulate gap-search outcomes per source, in samples and milliseconds.

    ``rate`` is a single Hz value or a mapping source -> Hz.  Rows are
    ordered by source name; unconverged sources are flagged with the last
    trace row so the remaining statistic/threshold gap is visible.
    """
    if not results:
        raise InputError("results map is empty")
    rows = []
    for source in sorted(results):
        res = results[source]
        src_rate = float(rate[source]) if isinstance(rate, dict) else float(rate)
        row = {
            "source": source,
            "converged": res.converged,
            "t_star_samples": res.t_star,
            "t_star_ms": None if res.t_star is None else 1000.0 * res.t_star / src_rate,
            "trace": [
                {"gap": g.gap, "cb_plus": g.cb_plus, "kappa_bar": g.kappa_bar}
                for g in res.trace
            ],
        }
        if not res.converged and res.trace:
            last = res.trace[-1]
            row["max_gap_reached"] = last.gap
            row["final_excess"] = last.cb_plus - last.kappa_bar
        rows.append(row)
    return {"sources": rows}
