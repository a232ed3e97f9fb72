"""Distribution function of S_T from MLMC estimates at a set of spline points.

Two routes:

* ``smooth``: estimate ``E[H_delta(x_j - S_T)]`` at each point and spline it;
* ``parity``: estimate the Lipschitz ``E[max(0, x_j - S_T)]``, spline it and
  differentiate, since its derivative in ``x`` is ``P(S_T <= x)``.

One path evaluates every point, so a single vector-valued MLMC run covers the
whole grid.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.interpolate import CubicSpline

from .core import MlmcConfig, run_mlmc
from .errors import InsufficientPointsError, InvalidGridError
from .estimators import PathEstimator

log = logging.getLogger(__name__)

CDF_METHODS = ("smooth", "parity")


def _check_points(points):
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 1 or x.size < 4:
        raise InsufficientPointsError(f"cubic spline needs at least 4 points, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(np.diff(x) <= 0):
        raise InvalidGridError("spline points must be finite and strictly increasing")
    return x


@dataclass(frozen=True)
class SplineGrid:
    points: np.ndarray
    values: np.ndarray
    stderr: np.ndarray = None

    def __post_init__(self):
        x = _check_points(self.points)
        y = np.asarray(self.values, dtype=np.float64)
        if y.shape != x.shape:
            raise InvalidGridError("values must match points")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "values", y)
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=np.float64))


def cubic_spline(grid):
    """Natural cubic spline through the grid; call ``.derivative()`` for C'."""
    return CubicSpline(grid.points, grid.values, bc_type="natural")


def equispaced(lo, hi, n):
    if n < 4:
        raise InsufficientPointsError(f"need at least 4 points, got {n}")
    if not hi > lo:
        raise InvalidGridError("range must have hi > lo")
    return np.linspace(lo, hi, n)


@dataclass
class CdfEstimate:
    """Spline CDF with the point estimates it was built from.

    ``stderr`` is the MLMC standard error at each point of the smoothed CDF
    (``smooth``) or of the put-value divided differences (``parity``).
    """

    method: str
    grid: SplineGrid
    cdf: object
    mlmc: object = field(repr=False, default=None)
    warnings: list = field(default_factory=list)

    def __call__(self, x):
        return self.cdf(x)

    @property
    def points(self):
        return self.grid.points

    def cdf_at_points(self):
        return np.asarray(self.cdf(self.grid.points))


def point_stderr(result):
    """Per-component standard error ``sqrt(sum_l V_l / N_l)`` of an MLMC result."""
    var = sum(np.asarray(m.variance) / m.n for m in result.moments)
    return np.sqrt(var)


def _monotonicity_warnings(cdf, lo, hi, n=512):
    x = np.linspace(lo, hi, n)
    y = np.asarray(cdf(x))
    drops = np.flatnonzero(np.diff(y) < 0)
    if drops.size == 0:
        return []
    worst = float(-np.min(np.diff(y)))
    msg = (f"CDF spline decreases on {drops.size} of {n - 1} sub-intervals of [{lo:g}, {hi:g}]"
           f" (largest drop {worst:.3g})")
    log.warning(msg)
    return [msg]


def estimate_cdf_smoothed(model, points, kernel, epsilon, config=MlmcConfig(), key=None, scheme="milstein",
                          n0_steps=1):
    """Spline of smoothed MLMC estimates ``E[H_delta(x_j - S_T)]``."""
    x = _check_points(points)

    def payoff(s):
        return kernel(x[None, :] - np.asarray(s)[:, None])

    est = PathEstimator(model, payoff, "standard", scheme, n0_steps)
    result = run_mlmc(est, epsilon, config, key)
    grid = SplineGrid(x, np.asarray(result.estimate), point_stderr(result))
    spline = cubic_spline(grid)
    warnings = list(result.warnings) + _monotonicity_warnings(spline, x[0], x[-1])
    return CdfEstimate("smooth", grid, spline, result, warnings)


def _difference_stencil(x):
    """Index pairs and spacings for divided differences: central in the
    interior, one-sided at the two ends."""
    j = np.arange(x.size)
    lo = np.maximum(j - 1, 0)
    hi = np.minimum(j + 1, x.size - 1)
    return lo, hi, x[hi] - x[lo]


def estimate_cdf_parity(model, points, epsilon, config=MlmcConfig(), key=None, scheme="euler", n0_steps=1):
    """Derivative of the spline through MLMC put values ``E[max(0, x_j - S_T)]``.

    Each sample also carries the divided differences of its put values, and
    the accuracy target applies to those too, because differentiation
    amplifies noise that is harmless in the put values themselves. The
    reported ``stderr`` is that of the divided differences, a CDF-scale
    noise measure at each point.
    """
    x = _check_points(points)
    n = x.size
    lo, hi, span = _difference_stencil(x)

    def payoff(s):
        put = np.maximum(x[None, :] - np.asarray(s)[:, None], 0.0)
        return np.hstack([put, (put[:, hi] - put[:, lo]) / span])

    est = PathEstimator(model, payoff, "standard", scheme, n0_steps)
    result = run_mlmc(est, epsilon, config, key)
    values = np.asarray(result.estimate)
    grid = SplineGrid(x, values[:n], point_stderr(result)[n:])
    deriv = cubic_spline(grid).derivative()
    warnings = list(result.warnings) + _monotonicity_warnings(deriv, x[0], x[-1])
    return CdfEstimate("parity", grid, deriv, result, warnings)


def sup_error(estimate, exact, lo=None, hi=None, n=401):
    """Max ``|C_hat - C|`` on a dense grid; ``exact`` is a vectorised callable."""
    x = estimate.points
    lo = x[0] if lo is None else lo
    hi = x[-1] if hi is None else hi
    xs = np.linspace(lo, hi, n)
    return float(np.max(np.abs(np.asarray(estimate(xs)) - exact(xs))))


def interior(points):
    """Range between the second and second-to-last points."""
    x = np.asarray(points)
    return float(x[1]), float(x[-2])


def noise_floor(estimate):
    return float(np.max(estimate.grid.stderr)) if estimate.grid.stderr is not None else math.nan
