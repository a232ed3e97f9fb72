"""Closed-form values for geometric Brownian motion, used as test oracles.

All prices are undiscounted expectations under the simulated measure.
"""

import math

import numpy as np
from scipy.special import ndtr


def _log_moments(s0, r, sigma, maturity):
    return math.log(s0) + (r - 0.5 * sigma * sigma) * maturity, sigma * math.sqrt(maturity)


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def gbm_digital(strike, s0=1.0, r=0.05, sigma=0.2, maturity=1.0):
    """P(S_T >= K)."""
    m, s = _log_moments(s0, r, sigma, maturity)
    return _out(ndtr((m - np.log(strike)) / s))


def gbm_cdf(x, s0=1.0, r=0.05, sigma=0.2, maturity=1.0):
    """P(S_T <= x), vectorised over ``x``; zero for ``x <= 0``."""
    x = np.asarray(x, dtype=np.float64)
    m, s = _log_moments(s0, r, sigma, maturity)
    with np.errstate(divide="ignore"):
        return np.where(x > 0, ndtr((np.log(np.maximum(x, 1e-300)) - m) / s), 0.0)


def gbm_density(x, s0=1.0, r=0.05, sigma=0.2, maturity=1.0):
    x = np.asarray(x, dtype=np.float64)
    m, s = _log_moments(s0, r, sigma, maturity)
    safe = np.maximum(x, 1e-300)
    pdf = np.exp(-0.5 * ((np.log(safe) - m) / s) ** 2) / (safe * s * math.sqrt(2.0 * math.pi))
    return np.where(x > 0, pdf, 0.0)


def gbm_call(strike, s0=1.0, r=0.05, sigma=0.2, maturity=1.0):
    """E[max(S_T - K, 0)] (Black-Scholes without discounting)."""
    m, s = _log_moments(s0, r, sigma, maturity)
    strike = np.asarray(strike, dtype=np.float64)
    d2 = (m - np.log(strike)) / s
    forward = s0 * math.exp(r * maturity)
    return _out(forward * ndtr(d2 + s) - strike * ndtr(d2))


def gbm_put(strike, s0=1.0, r=0.05, sigma=0.2, maturity=1.0):
    """E[max(K - S_T, 0)], from put-call parity."""
    return _out(gbm_call(strike, s0, r, sigma, maturity) - s0 * math.exp(r * maturity) + np.asarray(strike))
