"""Generic MLMC driver: level statistics, sample allocation, rate fits."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
import logging
import math
from typing import Protocol

import numpy as np

from .errors import (InsufficientDataError, InvalidInputError, MaxLevelsExceeded,
                     UndefinedKurtosisError)
from .randomness import StreamKey

log = logging.getLogger(__name__)

_SCALE_BITS = 1074  # 2**-1074 is the smallest subnormal, so every double is an integer multiple


def exact_sum(x):
    """Exact sum of a float64 vector, as an integer multiple of 2**-1074."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x = x[x != 0.0]
    if x.size == 0:
        return 0
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite sample value")
    mant, expo = np.frexp(x)
    ints = np.ldexp(mant, 53).astype(np.int64)
    total = 0
    for e in np.unique(expo):
        sel = ints[expo == e]
        hi = int(np.sum(sel >> 26))
        lo = int(np.sum(sel & ((1 << 26) - 1)))
        s = (hi << 26) + lo
        shift = int(e) - 53 + _SCALE_BITS
        total += s << shift if shift >= 0 else s >> -shift
    return total


@dataclass(frozen=True)
class LevelMoments:
    """Power sums of level-correction samples, held exactly.

    ``sums[p-1][j]`` is the exact value of sum(Y_j**p) scaled by 2**1074, so
    merging is integer addition: commutative, associative and independent of
    how samples were batched.
    """

    n: int = 0
    sums: tuple = ((0,), (0,), (0,), (0,))
    cost_sum: int = 0

    @classmethod
    def from_samples(cls, values, costs):
        y = np.asarray(values, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        sums = tuple(tuple(exact_sum(y[:, j] ** p) for j in range(y.shape[1])) for p in (1, 2, 3, 4))
        costs = np.broadcast_to(np.asarray(costs, dtype=np.float64), (y.shape[0],))
        return cls(int(y.shape[0]), sums, exact_sum(costs))

    @property
    def dim(self):
        return len(self.sums[0])

    def merge(self, other):
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        if self.dim != other.dim:
            raise InvalidInputError("cannot merge moments of different dimension")
        sums = tuple(tuple(a + b for a, b in zip(sa, sb)) for sa, sb in zip(self.sums, other.sums))
        return LevelMoments(self.n + other.n, sums, self.cost_sum + other.cost_sum)

    __add__ = merge

    def _raw(self, p, j):
        return Fraction(self.sums[p - 1][j], self.n << _SCALE_BITS)

    def _central(self, j):
        m1, m2, m3, m4 = (self._raw(p, j) for p in (1, 2, 3, 4))
        # Powers are rounded before summation (relative error 2**-53 each), so
        # a variance within a few ulps of m2 is indistinguishable from zero.
        var = m2 - m1 * m1
        if var <= m2 * Fraction(1, 1 << 50):
            return m1, Fraction(0), Fraction(0)
        c4 = max(m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 ** 4, Fraction(0))
        return m1, var, c4

    @property
    def mean(self):
        if self.n == 0:
            return np.full(self.dim, np.nan)
        return np.array([float(self._raw(1, j)) for j in range(self.dim)])

    @property
    def variance(self):
        """Population variance ``s2/n - (s1/n)**2``; never negative."""
        if self.n == 0:
            return np.full(self.dim, np.nan)
        return np.array([float(self._central(j)[1]) for j in range(self.dim)])

    @property
    def cost(self):
        """Mean cost per sample."""
        return math.nan if self.n == 0 else float(Fraction(self.cost_sum, self.n << _SCALE_BITS))

    @property
    def total_cost(self):
        return float(Fraction(self.cost_sum, 1 << _SCALE_BITS))


def kurtosis(m, component=0):
    """Non-excess kurtosis: central fourth moment over squared variance."""
    if m.n < 4:
        raise UndefinedKurtosisError("kurtosis needs at least 4 samples")
    _, var, c4 = m._central(component)
    if var <= 0:
        raise UndefinedKurtosisError("kurtosis undefined for zero variance")
    return float(c4 / (var * var))


def optimal_allocation(variances, costs, epsilon, n_min=0):
    """Sample counts minimising total cost subject to sum V/N <= eps**2 / 2."""
    v = np.asarray(variances, dtype=np.float64)
    c = np.asarray(costs, dtype=np.float64)
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    if v.shape != c.shape or np.any(v < 0) or np.any(~np.isfinite(v)):
        raise InvalidInputError("variances must be finite and non-negative")
    if np.any(c <= 0) or np.any(~np.isfinite(c)):
        raise InvalidInputError("costs must be positive")
    total = np.sum(np.sqrt(v * c))
    n = np.ceil(2.0 / epsilon ** 2 * np.sqrt(v / c) * total)
    return [max(int(k), int(n_min)) for k in n]


@dataclass(frozen=True)
class Rates:
    alpha: float
    beta: float
    gamma: float
    warnings: tuple = ()


def _slope(levels, values):
    levels = np.asarray(levels, dtype=np.float64)
    return float(np.polyfit(levels, np.log2(values), 1)[0])


def fit_rates(level_means, level_variances, level_costs, l_min=2, levels=None):
    """Least-squares slopes of log2|mean|, log2 V and log2 C against level.

    Returns alpha and beta as negated slopes and gamma as the plain slope.
    Levels with zero variance are skipped (with a warning), as are zero
    means for alpha.
    """
    means = np.abs(np.asarray(level_means, dtype=np.float64))
    var = np.asarray(level_variances, dtype=np.float64)
    cost = np.asarray(level_costs, dtype=np.float64)
    ells = np.arange(len(var)) if levels is None else np.asarray(levels)
    use = ells >= l_min
    warnings = []
    zero_v = use & (var <= 0)
    for ell in ells[zero_v]:
        warnings.append(f"level {int(ell)} has zero variance; excluded from fit")
    ok_v = use & (var > 0)
    ok_m = ok_v & (means > 0)
    if ok_v.sum() < 3 or ok_m.sum() < 3:
        raise InsufficientDataError(f"need at least 3 usable levels >= {l_min}")
    for w in warnings:
        log.warning(w)
    return Rates(
        alpha=-_slope(ells[ok_m], means[ok_m]),
        beta=-_slope(ells[ok_v], var[ok_v]),
        gamma=_slope(ells[use], cost[use]),
        warnings=tuple(warnings),
    )


class LevelEstimator(Protocol):
    def sample(self, level: int, key: StreamKey, lanes: np.ndarray):
        """Return ``(values, costs)`` for the given sample indices of one level."""


@dataclass(frozen=True)
class MlmcConfig:
    seed: int = 0
    l_min_fit: int = 2
    l_max: int = 12
    n_warm: int = 1000
    n_min: int = 32
    l_start: int = 2
    block_size: int = 1 << 14
    threads: int = 1
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    kurtosis_warn: float = 100.0


@dataclass(frozen=True)
class LevelSummary:
    level: int
    n: int
    mean: float
    variance: float
    cost: float
    kurtosis: float


@dataclass
class MlmcResult:
    estimate: object
    levels: list
    rates: tuple
    epsilon: float
    total_cost: float
    moments: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)

    @property
    def n_levels(self):
        return len(self.levels)


def sample_level(estimator, level, key, start, count, block_size=1 << 14, threads=1):
    """Moments for global sample indices ``start .. start+count-1`` of one level."""
    if count <= 0:
        return None
    edges = list(range(start, start + count, block_size)) + [start + count]
    blocks = list(zip(edges[:-1], edges[1:]))

    def run(block):
        lanes = np.arange(block[0], block[1], dtype=np.uint64)
        values, costs = estimator.sample(level, key, lanes)
        return LevelMoments.from_samples(values, costs)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    total = LevelMoments()
    for part in parts:
        total = total.merge(part)
    return total


def _regress(ells, values):
    """Slope of log2(values) against level over positive entries, or None."""
    ells = np.asarray(ells)
    values = np.asarray(values, dtype=np.float64)
    ok = values > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(ells[ok], np.log2(values[ok]), 1)[0])


def _rate(fixed, slope, sign):
    if fixed is not None:
        return fixed
    return 0.5 if slope is None else max(0.5, sign * slope)


def _kurt_or_nan(m, component=0):
    try:
        return kurtosis(m, component)
    except UndefinedKurtosisError:
        return math.nan


def run_mlmc(estimator, epsilon, config=MlmcConfig(), key=None):
    """Adaptive MLMC: warm-up, optimal allocation, and level extension by a bias test.

    The variance budget is eps**2/2 and the remaining eps**2/2 goes to bias,
    tested with the tail bound max(|m_L|, |m_{L-1}| / 2**alpha) / (2**alpha - 1).
    Level ``l`` draws lanes ``0, 1, 2, ...`` under ``key.derive(l)``, so the
    result is identical for any block size or thread count.
    """
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    if key is None:
        key = StreamKey(config.seed)
    cfg = config
    L = min(cfg.l_start, cfg.l_max)
    moments = [LevelMoments() for _ in range(L + 1)]
    d_n = [cfg.n_warm] * (L + 1)
    warnings = []
    converged = False

    def stats():
        n = np.array([m.n for m in moments])
        mean = np.array([np.max(np.abs(m.mean)) if m.n else 0.0 for m in moments])
        var = np.array([np.max(m.variance) if m.n else 0.0 for m in moments])
        cost = np.array([m.cost if m.n else math.nan for m in moments])
        return n, mean, var, cost

    while True:
        for ell, dn in enumerate(d_n):
            if dn > 0:
                part = sample_level(estimator, ell, key.derive(ell), moments[ell].n, dn,
                                    cfg.block_size, cfg.threads)
                moments[ell] = moments[ell].merge(part)
        n, mean, var, cost = stats()
        ells = np.arange(L + 1)
        alpha = _rate(cfg.alpha, _regress(ells[1:], mean[1:]), -1.0)
        beta = _rate(cfg.beta, _regress(ells[1:], var[1:]), -1.0)
        gamma = _rate(cfg.gamma, _regress(ells[1:], cost[1:]), 1.0)
        # Extrapolate variance at levels where too few samples exist to trust it.
        var_used = var.copy()
        for ell in range(2, L + 1):
            var_used[ell] = max(var[ell], 0.5 * var_used[ell - 1] / 2.0 ** beta)
        alloc = optimal_allocation(var_used, cost, epsilon, cfg.n_min)
        d_n = [max(0, a - k) for a, k in zip(alloc, n)]
        if all(dn <= 0.01 * k for dn, k in zip(d_n, n)):
            bias = max(mean[L], mean[L - 1] / 2.0 ** alpha if L > 0 else 0.0) / (2.0 ** alpha - 1.0)
            if bias <= epsilon / math.sqrt(2.0):
                converged = True
                break
            if L == cfg.l_max:
                break
            L += 1
            moments.append(LevelMoments())
            var_used = np.append(var_used, var_used[-1] / 2.0 ** beta)
            cost = np.append(cost, cost[-1] * 2.0 ** gamma)
            alloc = optimal_allocation(var_used, cost, epsilon, cfg.n_min)
            n = np.append(n, 0)
            d_n = [max(0, a - k) for a, k in zip(alloc, n)]

    result = _summarise(moments, epsilon, cfg, warnings)
    if not converged:
        raise MaxLevelsExceeded(f"bias test still failing at l_max={cfg.l_max}", partial=result)
    return result


def _summarise(moments, epsilon, cfg, warnings):
    rows = []
    for ell, m in enumerate(moments):
        # vector outputs are summarised by their highest-variance component
        j = int(np.argmax(m.variance))
        k = _kurt_or_nan(m, j)
        if k > cfg.kurtosis_warn:
            msg = f"level {ell}: kurtosis {k:.1f} exceeds {cfg.kurtosis_warn:g}; variance estimate unreliable"
            log.warning(msg)
            warnings.append(msg)
        rows.append(LevelSummary(ell, m.n, float(m.mean[j]), float(m.variance[j]), m.cost, k))
    means = [m.mean for m in moments]
    estimate = np.sum(means, axis=0)
    if moments[0].dim == 1:
        estimate = float(estimate[0])
    try:
        rates = fit_rates([r.mean for r in rows], [r.variance for r in rows], [r.cost for r in rows],
                          l_min=min(cfg.l_min_fit, max(0, len(rows) - 3)))
        rates_t = (rates.alpha, rates.beta, rates.gamma)
        warnings.extend(rates.warnings)
    except InsufficientDataError:
        rates_t = (math.nan, math.nan, math.nan)
    total = sum(m.total_cost for m in moments)
    return MlmcResult(estimate, rows, rates_t, epsilon, total, moments, warnings)
