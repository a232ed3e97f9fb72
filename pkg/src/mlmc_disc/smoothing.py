"""Mollified Heaviside functions ``H_delta(x) = g(x / delta)`` and their moments.

``g`` is either a mixture of scaled Gaussian CDFs, ``sum_i c_i Phi(s_i x)``, or
the one-sided ramp ``clip(x, 0, 1)``. The bias of replacing ``H`` by
``H_delta`` in an expectation against a smooth density ``rho`` expands as

    sum_k a_k rho^(k-1)(K) delta^k / (k-1)!,   a_k = int x^(k-1) (g(x) - H(x)) dx,

so kernels with vanishing low moments give higher order bias.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import AccuracyError, DivergentMomentError, InvalidInputError, NoSolutionError

KERNELS = ("ramp", "phi", "phi_a2zero")
DELTA_RULES = ("fixed", "eps_quarter")
QUAD_TOL = 1e-11


@dataclass(frozen=True)
class SmoothingKernel:
    """``g`` plus a width. ``basis`` is a tuple of ``(weight, scale)`` pairs;
    an empty basis with ``ramp=True`` selects the piecewise-linear ramp."""

    basis: tuple = ((1.0, 1.0),)
    delta: float = 1.0
    ramp: bool = False

    def __post_init__(self):
        if not self.delta > 0.0:
            raise InvalidInputError("delta must be positive")
        if not self.ramp:
            if not self.basis:
                raise InvalidInputError("basis must be nonempty")
            total = sum(c for c, _ in self.basis)
            if abs(total - 1.0) > 1e-12:
                raise InvalidInputError(f"basis weights must sum to 1, got {total}")
            if any(s <= 0.0 for _, s in self.basis):
                raise InvalidInputError("basis scales must be positive")

    def g(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.ramp:
            return np.clip(x, 0.0, 1.0)
        out = np.zeros_like(x)
        for c, s in self.basis:
            out = out + c * ndtr(s * x)
        return out

    def __call__(self, x):
        return self.g(np.asarray(x, dtype=np.float64) / self.delta)

    def with_delta(self, delta):
        return SmoothingKernel(self.basis, float(delta), self.ramp)

    @property
    def bias_order(self):
        """Power of delta in the leading bias term for a generic density."""
        for k in range(1, 5):
            if abs(moment_coefficient(self, k)) > 1e-7:
                return k
        return 5


def eval_hdelta(kernel, x):
    return kernel(x)


def phi_kernel(delta=1.0, scale=1.0):
    return SmoothingKernel(((1.0, float(scale)),), float(delta))


def ramp_kernel(delta=1.0):
    return SmoothingKernel((), float(delta), ramp=True)


def _integrand(kernel, k):
    def f(x):
        h = 1.0 if x >= 0.0 else 0.0
        return x ** (k - 1) * (float(kernel.g(x)) - h)
    return f


def _quad_half_lines(f, split=0.0):
    total = 0.0
    err = 0.0
    for lo, hi in ((-np.inf, split), (split, np.inf)):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, e = integrate.quad(f, lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
            except integrate.IntegrationWarning as exc:
                raise AccuracyError(f"quadrature did not converge: {exc}") from None
        total += val
        err += e
    return total, err


def moment_coefficient(kernel, k):
    """``a_k`` of ``g`` (the width is irrelevant) by quadrature on both half lines."""
    if k not in (1, 2, 3, 4):
        raise InvalidInputError("k must be in 1..4")
    if kernel.ramp:
        # g - H is supported on [0, 1], so a finite interval suffices.
        val, _ = integrate.quad(lambda x: x ** (k - 1) * (x - 1.0), 0.0, 1.0, epsabs=QUAD_TOL)
        return val
    f = _integrand(kernel, k)
    try:
        val, err = _quad_half_lines(f)
    except AccuracyError as exc:
        raise DivergentMomentError(f"a_{k} does not converge: {exc}") from None
    if not math.isfinite(val) or err > 1e-8:
        raise DivergentMomentError(f"a_{k} does not converge (error estimate {err:.2e})")
    return val


def solve_a2_cancellation(scales):
    """Weights on ``Phi(s_i x)`` summing to one with ``a_2`` cancelled.

    ``a_1`` and ``a_3`` vanish for every such mixture by antisymmetry. With
    more than two scales the minimum-norm weights are returned.
    """
    scales = [float(s) for s in scales]
    if len(scales) < 2:
        raise NoSolutionError("need at least two scales")
    a2 = [moment_coefficient(phi_kernel(1.0, s), 2) for s in scales]
    A = np.vstack([np.ones(len(scales)), a2])
    if np.linalg.matrix_rank(A, tol=1e-10) < 2:
        raise NoSolutionError("scales must contain at least two distinct values")
    return tuple(float(c) for c in np.linalg.pinv(A) @ np.array([1.0, 0.0]))


def phi_a2zero_kernel(delta=1.0, scales=(1.0, 2.0)):
    weights = solve_a2_cancellation(scales)
    return SmoothingKernel(tuple(zip(weights, (float(s) for s in scales))), float(delta))


def make_kernel(name, delta=1.0):
    if name == "ramp":
        return ramp_kernel(delta)
    if name == "phi":
        return phi_kernel(delta)
    if name == "phi_a2zero":
        return phi_a2zero_kernel(delta)
    raise InvalidInputError(f"unknown kernel {name!r}; expected one of {KERNELS}")


def smoothing_delta(kernel, epsilon, rule="eps_quarter", scale=1.0, delta=None):
    """Width for a target accuracy.

    ``fixed`` returns ``delta`` unchanged. ``eps_quarter`` balances the
    smoothing bias against ``epsilon``: ``scale * epsilon**(1/p)`` where ``p``
    is the kernel's bias order (4 for the a2-cancelled mixture, 1 for the ramp).
    """
    if rule == "fixed":
        if delta is None:
            raise InvalidInputError("fixed delta rule needs delta")
        return float(delta)
    if rule != "eps_quarter":
        raise InvalidInputError(f"unknown delta rule {rule!r}; expected one of {DELTA_RULES}")
    if not epsilon > 0.0:
        raise InvalidInputError("epsilon must be positive")
    return float(scale) * epsilon ** (1.0 / kernel.bias_order)


def bias_oracle(kernel, density, strike):
    """Exact ``int (H_delta(s - K) - H(s - K)) rho(s) ds`` by quadrature.

    ``density`` maps a float to a float. The integral is written in the kernel
    variable ``u = (s - K) / delta`` so the quadrature sees an O(1) width.
    """
    d = kernel.delta

    def f(u):
        h = 1.0 if u >= 0.0 else 0.0
        return (float(kernel.g(u)) - h) * density(strike + d * u)

    if kernel.ramp:
        val, err = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    else:
        val, err = _quad_half_lines(f)
    if err > 1e-9:
        raise AccuracyError(f"bias quadrature error estimate {err:.2e} exceeds 1e-9")
    return d * val
