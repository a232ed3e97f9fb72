"""MLMC for nested expectations ``E[f(E[Z | X])]`` with inner sampling.

Random numbers for one outer sample (one lane) are laid out as

* draw 0: the outer normal driving ``X``;
* ``draw_index(1, j)``: the j-th inner normal of the shared sequence;
* ``draw_index(2, j)``: the j-th inner normal of the independent coarse set
  used by the plain estimator.

Samplers are transforms of standard normals: ``outer(z) -> x`` and
``inner(x, z) -> draw``. When they (and ``f``) are numba dispatchers the
compiled kernel is used; otherwise a vectorised numpy path runs.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import _backend
from ._backend import njit
from .errors import InvalidInputError
from .randomness import draw_index, normal_nb, normals

_INNER = 1
_INNER_COARSE = 2


@njit
def heaviside(x):
    return 1.0 if x >= 0.0 else 0.0


@njit
def gaussian_outer(z):
    return z


@njit
def gaussian_inner(x, z):
    return x + z


@dataclass(frozen=True)
class NestedProblem:
    """Outer/inner samplers, outer function and the base inner count ``m0``.

    The quantity estimated is ``E[f(E[Z | X] - threshold)]``; ``f`` defaults
    to the Heaviside step, giving ``P(E[Z | X] >= threshold)``.
    """

    outer: object = gaussian_outer
    inner: object = gaussian_inner
    threshold: float = 0.0
    m0: int = 16
    f: object = heaviside

    def __post_init__(self):
        if int(self.m0) < 1:
            raise InvalidInputError("m0 must be at least 1")

    @property
    def compiled(self):
        return all(hasattr(fn, "py_func") for fn in (self.outer, self.inner, self.f))

    def inner_count(self, level):
        return self.m0 << level


def gaussian_nested(k_threshold=0.0, m0=16):
    """X ~ N(0, 1), Z | X ~ N(X, 1)."""
    return NestedProblem(gaussian_outer, gaussian_inner, float(k_threshold), int(m0), heaviside)


def _vector(fn):
    """Elementwise wrapper so scalar numba functions also work on arrays."""
    if hasattr(fn, "py_func"):
        return np.vectorize(fn, otypes=[np.float64])
    return fn


# -- plain estimator ------------------------------------------------------------


@njit(cache=False)
def _inner_mean_nb(inner, x, k0, k1, segment, m, lane):
    acc = 0.0
    for j in range(m):
        acc += inner(x, normal_nb(k0, k1, np.uint64((segment << 32) | j), lane))
    return acc / m


@njit(cache=False)
def _plain_nb(outer, inner, f, threshold, m_fine, m_coarse, k0, k1, lanes, out):
    for i in range(lanes.shape[0]):
        lane = np.uint64(lanes[i])
        x = outer(normal_nb(k0, k1, np.uint64(0), lane))
        value = f(_inner_mean_nb(inner, x, k0, k1, 1, m_fine, lane) - threshold)
        if m_coarse > 0:
            value -= f(_inner_mean_nb(inner, x, k0, k1, 2, m_coarse, lane) - threshold)
        out[i] = value


def _inner_mean_np(problem, x, words, lanes, segment, m):
    inner = _vector(problem.inner)
    acc = np.zeros(lanes.shape[0])
    for j in range(m):
        acc += inner(x, normals(words, lanes, draw_index(segment, j)))
    return acc / m


def _plain_np(problem, m_fine, m_coarse, words, lanes):
    f = _vector(problem.f)
    x = _vector(problem.outer)(normals(words, lanes, 0))
    value = f(_inner_mean_np(problem, x, words, lanes, _INNER, m_fine) - problem.threshold)
    if m_coarse > 0:
        value = value - f(_inner_mean_np(problem, x, words, lanes, _INNER_COARSE, m_coarse) - problem.threshold)
    return value


def y_nested_plain(problem, level, key, lanes):
    """``f(mean of M_l draws) - f(mean of an independent M_{l-1} draws)`` given one X.

    ``M_l = 2^l m0``; cost counts inner draws.
    """
    if level < 0:
        raise InvalidInputError("level must be non-negative")
    lanes = np.atleast_1d(np.asarray(lanes, dtype=np.uint64))
    m_fine = problem.inner_count(level)
    m_coarse = problem.inner_count(level - 1) if level > 0 else 0
    words = key.words
    if _backend.use_numba() and problem.compiled:
        out = np.empty(lanes.shape[0])
        _plain_nb(problem.outer, problem.inner, problem.f, float(problem.threshold), m_fine, m_coarse,
                  np.uint64(words[0]), np.uint64(words[1]), lanes, out)
    else:
        out = _plain_np(problem, m_fine, m_coarse, words, lanes)
    return out, float(m_fine + m_coarse)


# -- adaptive estimator ---------------------------------------------------------


@njit(cache=False)
def _adaptive_nb(outer, inner, f, threshold, c_adapt, ladder, starts, caps, k0, k1, lanes, out, cost_out):
    n_sides = starts.shape[0]
    for i in range(lanes.shape[0]):
        lane = np.uint64(lanes[i])
        x = outer(normal_nb(k0, k1, np.uint64(0), lane))
        total = 0.0
        total_sq = 0.0
        n = 0
        value = 0.0
        n_done = 0
        done = np.zeros(n_sides, dtype=np.bool_)
        for stage in ladder:
            while n < stage:
                z = inner(x, normal_nb(k0, k1, np.uint64((1 << 32) | n), lane))
                total += z
                total_sq += z * z
                n += 1
            mean = total / n
            tol = np.inf
            if n > 1:
                tol = c_adapt * math.sqrt(max(total_sq - n * mean * mean, 0.0) / (n - 1) / n)
            for k in range(n_sides):
                if done[k] or n < starts[k]:
                    continue
                if n >= caps[k] or abs(mean - threshold) > tol:
                    v = f(mean - threshold)
                    value += v if k == 0 else -v
                    done[k] = True
                    n_done += 1
            if n_done == n_sides:
                break
        out[i] = value
        cost_out[i] = n


def _ladder(m0, level):
    """Sorted distinct inner counts at which either side may stop."""
    fine = [(m0 << level) << s for s in range(level + 1)]
    coarse = [(m0 << (level - 1)) << s for s in range(level)] if level > 0 else []
    return sorted(set(fine) | set(coarse))


def _sides(m0, level):
    """(minimum, cap) inner counts for the fine side and, above level 0, the coarse side."""
    sides = [(m0 << level, m0 << (2 * level))]
    if level > 0:
        sides.append((m0 << (level - 1), m0 << (2 * (level - 1))))
    return sides


def _adaptive_np(problem, level, c_adapt, words, lanes):
    n = lanes.shape[0]
    m0 = problem.m0
    ladder = _ladder(m0, level)
    f = _vector(problem.f)
    inner = _vector(problem.inner)
    x = _vector(problem.outer)(normals(words, lanes, 0))
    t = problem.threshold
    sides = _sides(m0, level)
    done = [np.zeros(n, dtype=bool) for _ in sides]
    vals = [np.zeros(n) for _ in sides]
    used = [np.zeros(n, dtype=np.int64) for _ in sides]
    total = np.zeros(n)
    total_sq = np.zeros(n)
    drawn = 0
    for stage in ladder:
        live = ~np.logical_and.reduce(done)
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        for j in range(drawn, stage):
            z = inner(x[idx], normals(words, lanes[idx], draw_index(_INNER, j)))
            total[idx] += z
            total_sq[idx] += z * z
        drawn = stage
        mean = total[idx] / stage
        if stage > 1:
            var = np.maximum(total_sq[idx] - stage * mean * mean, 0.0) / (stage - 1)
            tol = c_adapt * np.sqrt(var / stage)
        else:
            tol = np.full(idx.size, np.inf)
        for k, (m_start, m_cap) in enumerate(sides):
            if stage < m_start or stage > m_cap:
                continue
            sel = ~done[k][idx]
            stop = sel & ((stage >= m_cap) | (np.abs(mean - t) > tol))
            hit = idx[stop]
            vals[k][hit] = f(mean[stop] - t)
            used[k][hit] = stage
            done[k][hit] = True
    value = vals[0] - vals[1] if level > 0 else vals[0]
    cost = np.maximum.reduce(used).astype(np.float64)
    return value, cost


def y_nested_adaptive(problem, level, key, lanes, c_adapt=3.0):
    """Adaptive inner sampling on a shared inner sequence.

    Each side starts at its minimum count (``2^l m0`` fine, ``2^(l-1) m0``
    coarse) and doubles while ``|Zbar - K| <= c_adapt sqrt(var / M)``, up to
    ``4^l m0`` (resp. ``4^(l-1) m0``). The coarse side reads a prefix of the
    fine side's draws. Cost is the number of inner draws made.
    """
    if level < 0:
        raise InvalidInputError("level must be non-negative")
    lanes = np.atleast_1d(np.asarray(lanes, dtype=np.uint64))
    words = key.words
    if _backend.use_numba() and problem.compiled:
        out = np.empty(lanes.shape[0])
        cost = np.empty(lanes.shape[0])
        ladder = np.array(_ladder(problem.m0, level), dtype=np.int64)
        sides = _sides(problem.m0, level)
        starts = np.array([a for a, _ in sides], dtype=np.int64)
        caps = np.array([b for _, b in sides], dtype=np.int64)
        _adaptive_nb(problem.outer, problem.inner, problem.f, float(problem.threshold), float(c_adapt), ladder,
                     starts, caps, np.uint64(words[0]), np.uint64(words[1]), lanes, out, cost)
        return out, cost
    return _adaptive_np(problem, level, float(c_adapt), words, lanes)


NESTED_METHODS = ("plain", "adaptive")


@dataclass(frozen=True)
class NestedEstimator:
    """``LevelEstimator`` over a ``NestedProblem``."""

    problem: NestedProblem
    method: str = "plain"
    c_adapt: float = 3.0

    def __post_init__(self):
        if self.method not in NESTED_METHODS:
            raise InvalidInputError(f"unknown nested method {self.method!r}; expected one of {NESTED_METHODS}")

    def sample(self, level, key, lanes):
        if self.method == "plain":
            return y_nested_plain(self.problem, level, key, lanes)
        return y_nested_adaptive(self.problem, level, key, lanes, self.c_adapt)
