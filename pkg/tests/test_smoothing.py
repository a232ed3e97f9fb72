import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ndtr
from scipy.stats import norm

from mlmc_disc.errors import DivergentMomentError, InvalidInputError, NoSolutionError
from mlmc_disc.smoothing import (SmoothingKernel, bias_oracle, eval_hdelta, make_kernel, moment_coefficient,
                                 phi_a2zero_kernel, phi_kernel, ramp_kernel, smoothing_delta, solve_a2_cancellation)

# E|X|^k for a standard normal
ABS_MOMENT = {2: 1.0, 4: 3.0}


def phi_moment(k, s=1.0):
    """Closed form of a_k for g(x) = Phi(s x): zero for odd k, -E|X|^k / (k s^k) for even k."""
    return 0.0 if k % 2 else -ABS_MOMENT[k] / (k * s ** k)


def gaussian_bias(strike, delta):
    """E[Phi((X - K)/delta)] - P(X >= K) for X ~ N(0, 1), i.e. P(X - delta Z >= K) - P(X >= K)."""
    return float(ndtr(-strike / math.sqrt(1.0 + delta * delta)) - ndtr(-strike))


def test_eval_examples():
    assert eval_hdelta(phi_kernel(0.3), 0.0) == 0.5
    assert eval_hdelta(ramp_kernel(0.2), 0.2) == 1.0
    assert eval_hdelta(ramp_kernel(0.2), 0.0) == 0.0
    assert eval_hdelta(phi_kernel(1.0), 0.15) == pytest.approx(0.55962, abs=5e-6)


def test_kernel_validation():
    with pytest.raises(InvalidInputError):
        SmoothingKernel(delta=0.0)
    with pytest.raises(InvalidInputError):
        SmoothingKernel(((0.5, 1.0),))
    with pytest.raises(InvalidInputError):
        SmoothingKernel(((1.0, -1.0),))
    with pytest.raises(InvalidInputError):
        make_kernel("tophat")
    with pytest.raises(InvalidInputError):
        moment_coefficient(phi_kernel(), 5)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("s", [1.0, 2.0, 4.0])
def test_phi_moments_closed_form(k, s):
    assert moment_coefficient(phi_kernel(1.0, s), k) == pytest.approx(phi_moment(k, s), abs=1e-8)


def test_phi_low_moments_vanish():
    assert abs(moment_coefficient(phi_kernel(), 1)) < 1e-7
    assert abs(moment_coefficient(phi_kernel(), 3)) < 1e-7
    assert moment_coefficient(phi_kernel(), 2) == pytest.approx(-0.5, abs=1e-6)
    assert moment_coefficient(phi_kernel(1.0, 2.0), 2) == pytest.approx(-0.125, abs=1e-8)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_ramp_moments(k):
    # int_0^1 x^(k-1) (x - 1) dx
    assert moment_coefficient(ramp_kernel(), k) == pytest.approx(-1.0 / (k * (k + 1)), abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("s", [2.0, 4.0])
def test_scaling_identity(k, s):
    base = SmoothingKernel(((-1 / 3, 1.0), (4 / 3, 2.0)))
    scaled = SmoothingKernel(((-1 / 3, s), (4 / 3, 2.0 * s)))
    assert moment_coefficient(scaled, k) == pytest.approx(moment_coefficient(base, k) / s ** k, abs=1e-9)


def test_non_integrable_kernel():
    class Cauchy(SmoothingKernel):
        def g(self, x):
            return 0.5 + np.arctan(x) / np.pi

    with pytest.raises(DivergentMomentError):
        moment_coefficient(Cauchy(), 2)


def test_a2_cancellation_weights():
    w = solve_a2_cancellation([1, 2])
    assert w == pytest.approx((-1 / 3, 4 / 3), abs=1e-9)
    k = phi_a2zero_kernel()
    for j in (1, 2, 3):
        assert abs(moment_coefficient(k, j)) < 1e-7
    # fourth moment survives: -3/4 (c1 + c2 / 16)
    a4 = moment_coefficient(k, 4)
    assert a4 == pytest.approx(-0.75 * (-1 / 3 + 4 / 3 / 16), abs=1e-8)
    assert abs(a4) > 0.1


def test_literal_weights_do_not_cancel_a2():
    # (4/3) Phi(x) - (1/3) Phi(2x): a2 = -(4/3)/2 + (1/3)/8
    k = SmoothingKernel(((4 / 3, 1.0), (-1 / 3, 2.0)))
    assert moment_coefficient(k, 2) == pytest.approx(-2 / 3 + 1 / 24, abs=1e-8)
    # the rescaled form (4/3) Phi(x) - (1/3) Phi(x/2) does cancel it
    assert abs(moment_coefficient(SmoothingKernel(((4 / 3, 1.0), (-1 / 3, 0.5))), 2)) < 1e-7


def test_a2_cancellation_errors():
    with pytest.raises(NoSolutionError):
        solve_a2_cancellation([1, 1])
    with pytest.raises(NoSolutionError):
        solve_a2_cancellation([2])


@given(st.lists(st.floats(0.5, 4.0), min_size=3, max_size=4, unique=True))
def test_a2_cancellation_least_norm(scales):
    if max(scales) - min(scales) < 0.05:
        return
    w = np.array(solve_a2_cancellation(scales))
    a2 = np.array([phi_moment(2, s) for s in scales])
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    assert w @ a2 == pytest.approx(0.0, abs=1e-9)
    # minimum norm: orthogonal to the null space of [1; a2]
    null = np.linalg.svd(np.vstack([np.ones(len(scales)), a2]))[2][2:]
    assert np.allclose(null @ w, 0.0, atol=1e-7)


def test_bias_oracle_symmetric_zero():
    assert abs(bias_oracle(phi_kernel(0.1), norm.pdf, 0.0)) < 1e-12


@pytest.mark.parametrize("strike", [0.5, -0.3, 1.2])
@pytest.mark.parametrize("delta", [0.05, 0.2, 0.7])
def test_bias_oracle_matches_closed_form(strike, delta):
    assert bias_oracle(phi_kernel(delta), norm.pdf, strike) == pytest.approx(gaussian_bias(strike, delta), abs=1e-10)


def test_bias_expansion_leading_term():
    oracle = bias_oracle(phi_kernel(0.1), norm.pdf, 0.5)
    expansion = -0.5 * (-0.5 * norm.pdf(0.5)) * 0.1 ** 2
    assert expansion == pytest.approx(8.802e-4, abs=1e-7)
    assert oracle == pytest.approx(expansion, rel=0.1)


def test_a2zero_bias_fourth_order():
    deltas = [0.4, 0.2, 0.1]
    bias = [abs(bias_oracle(phi_a2zero_kernel(d), norm.pdf, 0.5)) for d in deltas]
    slope = np.polyfit(np.log2(deltas), np.log2(bias), 1)[0]
    assert abs(slope - 4.0) < 0.3


def test_ramp_bias_monotone_to_zero():
    bias = [abs(bias_oracle(ramp_kernel(d), norm.pdf, 0.5)) for d in (0.4, 0.2, 0.1, 0.05, 0.025)]
    assert all(a > b for a, b in zip(bias, bias[1:]))
    assert bias[-1] < 0.01


def test_bias_order_and_delta_rules():
    assert phi_a2zero_kernel().bias_order == 4
    assert phi_kernel().bias_order == 2
    assert ramp_kernel().bias_order == 1
    assert smoothing_delta(phi_a2zero_kernel(), 1e-4, scale=2.0) == pytest.approx(0.2)
    assert smoothing_delta(ramp_kernel(), 1e-3) == pytest.approx(1e-3)
    assert smoothing_delta(phi_kernel(), 1e-2, "fixed", delta=0.3) == 0.3
    with pytest.raises(InvalidInputError):
        smoothing_delta(phi_kernel(), 1e-2, "fixed")
    with pytest.raises(InvalidInputError):
        smoothing_delta(phi_kernel(), 1e-2, "eps_half")
    with pytest.raises(InvalidInputError):
        smoothing_delta(phi_kernel(), 0.0)


def test_make_kernel_names():
    assert make_kernel("phi", 0.2) == phi_kernel(0.2)
    assert make_kernel("ramp", 0.2).ramp
    assert make_kernel("phi_a2zero", 0.2).basis == phi_a2zero_kernel(0.2).basis
    assert make_kernel("phi").with_delta(0.4).delta == 0.4
