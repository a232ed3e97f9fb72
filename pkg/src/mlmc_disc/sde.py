"""Scalar SDE models and coupled fine/coarse path simulation."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import _backend
from ._backend import njit
from .errors import InvalidInputError, InvalidRefinementError
from .randomness import GaussianStream, brownian_bridge_midpoint, draw_index, normal_nb, normals

SCHEMES = ("euler", "milstein")


def gbm_drift(s, p):
    return p[0] * s


def gbm_diffusion(s, p):
    return p[1] * s


def gbm_diffusion_deriv(s, p):
    return p[1] + 0.0 * s


_jit_cache = {}


def _jitted(fn):
    if hasattr(fn, "py_func"):
        return fn
    if fn not in _jit_cache:
        _jit_cache[fn] = _backend.numba.njit(nogil=True)(fn)
    return _jit_cache[fn]


def _plain(fn):
    return getattr(fn, "py_func", fn)


@dataclass(frozen=True)
class SdeModel:
    """dS = a(S) dt + b(S) dW on [0, T].

    Coefficients are plain functions ``f(s, params)`` written with array
    arithmetic, so the same source runs vectorised under numpy and compiled
    under numba.
    """

    drift: object
    diffusion: object
    diffusion_deriv: object
    s0: float
    maturity: float = 1.0
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not self.maturity > 0:
            raise InvalidInputError("maturity must be positive")
        object.__setattr__(self, "params", np.ascontiguousarray(self.params, dtype=np.float64))

    def a(self, s):
        return _plain(self.drift)(np.asarray(s, dtype=np.float64), self.params)

    def b(self, s):
        return _plain(self.diffusion)(np.asarray(s, dtype=np.float64), self.params)

    def db(self, s):
        return _plain(self.diffusion_deriv)(np.asarray(s, dtype=np.float64), self.params)

    def kernel_functions(self):
        return _jitted(self.drift), _jitted(self.diffusion), _jitted(self.diffusion_deriv)


def gbm(r=0.05, sigma=0.2, s0=1.0, maturity=1.0):
    """Geometric Brownian motion: a = rS, b = sigma S, b' = sigma."""
    return SdeModel(gbm_drift, gbm_diffusion, gbm_diffusion_deriv, s0, maturity, np.array([r, sigma]))


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise InvalidInputError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    return scheme == "milstein"


def step(model, s, dw, h, scheme="euler"):
    """One Euler-Maruyama or Milstein step; vectorised over ``s`` and ``dw``."""
    milstein = _check_scheme(scheme)
    if not h > 0:
        raise InvalidInputError("h must be positive")
    s = np.asarray(s, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    b = model.b(s)
    out = s + model.a(s) * h + b * dw
    if milstein:
        out = out + 0.5 * b * model.db(s) * (dw * dw - h)
    return out


@njit(cache=False)
def step_nb(drift, diff, ddiff, p, s, dw, h, milstein):
    b = diff(s, p)
    out = s + drift(s, p) * h + b * dw
    if milstein:
        out += 0.5 * b * ddiff(s, p) * (dw * dw - h)
    return out


def _step_np(model, s, dw, h, milstein):
    b = model.b(s)
    out = s + model.a(s) * h + b * dw
    if milstein:
        out = out + 0.5 * b * model.db(s) * (dw * dw - h)
    return out


@dataclass
class CoupledPathState:
    """Batch of coupled fine/coarse paths; every array field has one entry per sample.

    Coarse fields are NaN on level 0.
    """

    level: int
    fine_terminal: np.ndarray
    coarse_terminal: np.ndarray
    fine_penultimate: np.ndarray
    coarse_penultimate: np.ndarray
    dw_last: np.ndarray
    dw_second_last: np.ndarray
    h_fine: float
    h_coarse: float
    cost: np.ndarray

    def __len__(self):
        return len(self.fine_terminal)


@njit(cache=False)
def _coupled_nb(drift, diff, ddiff, p, s0, h, nf, coarse, milstein, k0, k1, lanes, out):
    sq = math.sqrt(h)
    for i in range(lanes.shape[0]):
        lane = np.uint64(lanes[i])
        sf = s0
        sc = s0
        fpen = s0
        cpen = s0
        dw_prev = 0.0
        dwl = 0.0
        dwsl = 0.0
        for n in range(nf):
            dw = sq * normal_nb(k0, k1, np.uint64(n), lane)
            fpen = sf
            sf = step_nb(drift, diff, ddiff, p, sf, dw, h, milstein)
            if coarse:
                if n % 2 == 0:
                    dw_prev = dw
                else:
                    cpen = sc
                    sc = step_nb(drift, diff, ddiff, p, sc, dw_prev + dw, 2.0 * h, milstein)
            dwsl = dwl
            dwl = dw
        out[0, i] = sf
        out[1, i] = sc
        out[2, i] = fpen
        out[3, i] = cpen
        out[4, i] = dwl
        out[5, i] = dwsl


def _coupled_np(model, h, nf, coarse, milstein, words, lanes):
    n = lanes.shape[0]
    sq = math.sqrt(h)
    sf = np.full(n, model.s0)
    sc = sf.copy()
    fpen = sf.copy()
    cpen = sf.copy()
    dw_prev = np.zeros(n)
    dwl = np.zeros(n)
    dwsl = np.zeros(n)
    for k in range(nf):
        dw = sq * normals(words, lanes, k)
        fpen = sf
        sf = _step_np(model, sf, dw, h, milstein)
        if coarse:
            if k % 2 == 0:
                dw_prev = dw
            else:
                cpen = sc
                sc = _step_np(model, sc, dw_prev + dw, 2.0 * h, milstein)
        dwsl, dwl = dwl, dw
    return np.stack([sf, sc, fpen, cpen, dwl, dwsl])


def fine_steps(level, n0_steps=1):
    if level < 0 or n0_steps < 1:
        raise InvalidInputError("need level >= 0 and n0_steps >= 1")
    return n0_steps << level


def simulate_coupled(model, level, key, lanes, scheme="euler", n0_steps=1):
    """Simulate one coupled pair per lane, driven by draws ``0..N-1`` of each lane.

    ``key`` is a ``StreamKey``; lane ``i`` uses the same numbers as
    ``GaussianStream(key, lane=i)``.
    """
    milstein = _check_scheme(scheme)
    nf = fine_steps(level, n0_steps)
    h = model.maturity / nf
    lanes = np.ascontiguousarray(np.atleast_1d(lanes), dtype=np.uint64)
    words = key.words
    coarse = level > 0
    if _backend.use_numba():
        out = np.empty((6, lanes.shape[0]))
        a, b, db = model.kernel_functions()
        _coupled_nb(a, b, db, model.params, float(model.s0), h, nf, coarse, milstein,
                    np.uint64(words[0]), np.uint64(words[1]), lanes, out)
    else:
        out = _coupled_np(model, h, nf, coarse, milstein, words, lanes)
    if not coarse:
        out[1] = np.nan
        out[3] = np.nan
        if nf < 2:
            out[5] = np.nan
    return CoupledPathState(
        level=level,
        fine_terminal=out[0],
        coarse_terminal=out[1],
        fine_penultimate=out[2],
        coarse_penultimate=out[3],
        dw_last=out[4],
        dw_second_last=out[5],
        h_fine=h,
        h_coarse=2.0 * h if coarse else math.nan,
        cost=np.full(lanes.shape[0], float(nf)),
    )


@dataclass(frozen=True)
class StoredPath:
    """A single path that keeps its Brownian values so it can be refined.

    ``w[i]`` is W at ``i * h``; ``depth`` counts bridge refinements since the
    path was created, and selects the counter segment for the next one.
    """

    w: np.ndarray
    states: np.ndarray
    maturity: float
    depth: int
    cost: int

    @property
    def n_steps(self):
        return len(self.w) - 1

    @property
    def h(self):
        return self.maturity / self.n_steps

    @property
    def terminal(self):
        return float(self.states[-1])


def _integrate(model, w, h, scheme):
    states = np.empty(len(w))
    states[0] = model.s0
    dws = np.diff(w)
    for i, dw in enumerate(dws):
        states[i + 1] = step(model, states[i], dw, h, scheme)
    return states


def simulate_stored(model, n_steps, scheme, stream):
    """Path on a uniform grid whose increment ``i`` is draw ``i`` of ``stream``."""
    if n_steps < 1:
        raise InvalidInputError("n_steps must be >= 1")
    h = model.maturity / n_steps
    z = normals(stream.key.words, stream.lane, np.arange(n_steps))
    w = np.concatenate([[0.0], np.cumsum(math.sqrt(h) * z)])
    return StoredPath(w, _integrate(model, w, h, scheme), model.maturity, 0, n_steps)


def refine_path(model, scheme, path, target_h, stream):
    """Halve the timestep until it equals ``target_h`` using Brownian bridges.

    Midpoint ``i`` inserted at refinement depth ``d`` uses counter
    ``draw_index(d, i)`` of ``stream``, so refinements are reproducible and
    never disturb the existing grid values.
    """
    ratio = path.h / target_h
    halvings = int(round(math.log2(ratio))) if ratio > 0 else -1
    if halvings < 0 or not math.isclose(2.0 ** halvings, ratio, rel_tol=1e-12):
        raise InvalidRefinementError(f"target_h={target_h} is not a power-of-two refinement of h={path.h}")
    w = path.w
    depth = path.depth
    cost = path.cost
    h = path.h
    for _ in range(halvings):
        depth += 1
        idx = np.arange(len(w) - 1)
        z = normals(stream.key.words, stream.lane, (np.uint64(depth) << np.uint64(32)) | idx.astype(np.uint64))
        fine = np.empty(2 * len(w) - 1)
        fine[0::2] = w
        fine[1::2] = [brownian_bridge_midpoint(w[i], w[i + 1], i * h, (i + 1) * h, z[i]) for i in idx]
        w = fine
        h *= 0.5
        cost += len(w) - 1
    if halvings == 0:
        return path
    return StoredPath(w, _integrate(model, w, h, scheme), path.maturity, depth, cost)
