import math

import numpy as np
import pytest

from mlmc_disc import _backend
from mlmc_disc._backend import njit
from mlmc_disc.core import MlmcConfig, run_mlmc, sample_level
from mlmc_disc.errors import InvalidInputError
from mlmc_disc.nested import (NestedEstimator, NestedProblem, gaussian_inner, gaussian_nested, gaussian_outer,
                              heaviside, y_nested_adaptive, y_nested_plain)
from mlmc_disc.randomness import StreamKey, draw_index, normals


@njit
def identity(x):
    return x


@njit
def constant_inner(x, z):
    return 0.0


def py_inner(x, z):
    return x + z


def py_outer(z):
    return z


def py_heaviside(x):
    return (np.asarray(x) >= 0.0).astype(np.float64)


def reference_side(z, x, threshold, m_start, m_cap, c):
    """Doubling rule for one side, written directly from its definition."""
    m = m_start
    while True:
        draws = x + z[:m]
        mean = draws.mean()
        tol = c * math.sqrt(draws.var(ddof=1) / m) if m > 1 else math.inf
        if m >= m_cap or abs(mean - threshold) > tol:
            return (1.0 if mean - threshold >= 0 else 0.0), m
        m *= 2


def reference_adaptive(key, lane, level, m0, threshold, c=3.0):
    x = float(normals(key.words, lane, 0))
    z = normals(key.words, lane, np.array([draw_index(1, j) for j in range(m0 << (2 * level))], dtype=np.uint64))
    fine, mf = reference_side(z, x, threshold, m0 << level, m0 << (2 * level), c)
    if level == 0:
        return fine, mf
    coarse, mc = reference_side(z, x, threshold, m0 << (level - 1), m0 << (2 * level - 2), c)
    return fine - coarse, max(mf, mc)


def test_problem_validation():
    with pytest.raises(InvalidInputError):
        NestedProblem(m0=0)
    with pytest.raises(InvalidInputError):
        NestedEstimator(gaussian_nested(), "antithetic")
    with pytest.raises(InvalidInputError):
        y_nested_plain(gaussian_nested(), -1, StreamKey(1), np.arange(2))
    assert gaussian_nested(0.0, 8).inner_count(3) == 64


def test_plain_cost_and_level_zero(backend):
    p = gaussian_nested(0.0, 4)
    v, c = y_nested_plain(p, 0, StreamKey(1), np.arange(100))
    assert c == 4 and set(np.unique(v)) <= {0.0, 1.0}
    v, c = y_nested_plain(p, 3, StreamKey(1), np.arange(100))
    assert c == 32 + 16 and set(np.unique(v)) <= {-1.0, 0.0, 1.0}


def test_plain_level_zero_by_hand():
    key = StreamKey(2)
    lanes = np.arange(50)
    v, _ = y_nested_plain(gaussian_nested(0.3, 4), 0, key, lanes)
    x = normals(key.words, lanes, 0)
    zbar = np.mean([x + normals(key.words, lanes, draw_index(1, j)) for j in range(4)], axis=0)
    np.testing.assert_array_equal(v, (zbar - 0.3 >= 0).astype(float))


@pytest.mark.parametrize("method", ["plain", "adaptive"])
@pytest.mark.parametrize("level", [0, 1, 3])
def test_backends_and_python_samplers_agree(method, level):
    key = StreamKey(3).derive(level)
    lanes = np.arange(1500)
    compiled = NestedEstimator(gaussian_nested(0.2, 4), method)
    plain_py = NestedEstimator(NestedProblem(py_outer, py_inner, 0.2, 4, py_heaviside), method)
    results = []
    for name in ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else []):
        prev = _backend.set_backend(name)
        try:
            results.append(compiled.sample(level, key, lanes))
        finally:
            _backend.set_backend(prev)
    results.append(plain_py.sample(level, key, lanes))
    for v, c in results[1:]:
        np.testing.assert_allclose(v, results[0][0], atol=1e-12)
        np.testing.assert_array_equal(np.broadcast_to(c, (1500,)), np.broadcast_to(results[0][1], (1500,)))


def test_plain_identity_f_zero_mean(backend):
    p = NestedProblem(gaussian_outer, gaussian_inner, 0.0, 8, identity)
    for level in (1, 3):
        m = sample_level(NestedEstimator(p), level, StreamKey(4).derive(level), 0, 50_000)
        assert abs(m.mean[0]) < 3 * math.sqrt(m.variance[0] / m.n)


def test_plain_lipschitz_variance_rate():
    # f(x) = x: V_l = Var[Z | X] (1/M_l + 1/M_(l-1)), i.e. beta = 1
    p = NestedProblem(gaussian_outer, gaussian_inner, 0.0, 4, identity)
    v = [sample_level(NestedEstimator(p), ell, StreamKey(5).derive(ell), 0, 20_000).variance[0]
         for ell in range(2, 7)]
    beta = -np.polyfit(np.arange(2, 7), np.log2(v), 1)[0]
    assert abs(beta - 1.0) < 0.15
    for ell, vl in zip(range(2, 7), v):
        assert vl == pytest.approx(1 / (4 << ell) + 1 / (4 << (ell - 1)), rel=0.05)


def test_adaptive_matches_reference():
    key = StreamKey(6)
    for level in (0, 1, 3):
        v, c = y_nested_adaptive(gaussian_nested(0.1, 4), level, key, np.arange(300))
        for lane in range(300):
            ref_v, ref_c = reference_adaptive(key, lane, level, 4, 0.1)
            assert v[lane] == ref_v and c[lane] == ref_c


def test_adaptive_far_from_threshold_minimum_work(backend):
    for level in (1, 3):
        _, c = y_nested_adaptive(gaussian_nested(-100.0, 8), level, StreamKey(7), np.arange(200))
        assert np.all(c == 8 << level)


def test_adaptive_tie_reaches_cap(backend):
    p = NestedProblem(gaussian_outer, constant_inner, 0.0, 4, heaviside)
    for level in (1, 2, 3):
        v, c = y_nested_adaptive(p, level, StreamKey(8), np.arange(20))
        assert np.all(c == 4 << (2 * level))
        assert np.all(v == 0.0)


def test_adaptive_telescoping():
    # E[Y_l] = E[F_l] - E[F_(l-1)] where F_l is the fine side alone at level l
    key = StreamKey(9)
    level, n, m0 = 3, 4000, 4
    y = y_nested_adaptive(gaussian_nested(0.0, m0), level, key.derive(0), np.arange(n))[0]

    def fine_only(lvl, k):
        out = np.empty(n)
        for lane in range(n):
            x = float(normals(k.words, lane, 0))
            z = normals(k.words, lane, np.array([draw_index(1, j) for j in range(m0 << (2 * lvl))],
                                                dtype=np.uint64))
            out[lane] = reference_side(z, x, 0.0, m0 << lvl, m0 << (2 * lvl), 3.0)[0]
        return out

    f1 = fine_only(level, key.derive(1))
    f0 = fine_only(level - 1, key.derive(2))
    se = math.sqrt((y.var() + f1.var() + f0.var()) / n)
    assert abs(y.mean() - (f1.mean() - f0.mean())) < 3 * se


def test_adaptive_cost_constant():
    costs = []
    for level in range(1, 6):
        _, c = y_nested_adaptive(gaussian_nested(0.0, 16), level, StreamKey(10), np.arange(20_000))
        costs.append(c.mean() / (16 << level))
    assert all(1.0 <= r < 3.0 for r in costs), costs


def test_plain_mlmc_estimate():
    res = run_mlmc(NestedEstimator(gaussian_nested(0.0, 16)), 0.01, MlmcConfig(seed=11))
    assert abs(res.estimate - 0.5) < 0.03
