"""Level estimators for digital (and Lipschitz baseline) payoffs of scalar SDEs."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import ndtr

from . import _backend
from ._backend import njit
from .errors import DegenerateDiffusionError, InvalidInputError
from .randomness import normal_nb, normals
from .sde import _check_scheme, _step_np, fine_steps, simulate_coupled, step_nb

PAYOFF_KINDS = ("digital_call", "call", "put", "custom")


@dataclass(frozen=True)
class Payoff:
    """Terminal payoff; ``digital_call`` is H(x - K) with H(0) = 1."""

    kind: str
    strike: float = 1.0
    fn: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise InvalidInputError(f"payoff kind must be one of {PAYOFF_KINDS}")
        if self.kind == "custom" and self.fn is None:
            raise InvalidInputError("custom payoff needs fn")

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "digital_call":
            return (s >= self.strike).astype(np.float64)
        if self.kind == "call":
            return np.maximum(s - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - s, 0.0)
        return np.asarray(self.fn(s), dtype=np.float64)


def digital(strike=1.0):
    return Payoff("digital_call", strike)


@dataclass(frozen=True)
class CommonMeasure:
    mu: np.ndarray
    sigma: np.ndarray


def midpoint_max_measure(mu_f, sd_f, mu_c, sd_c):
    """Default common Gaussian: mean halfway between, widest of the two spreads."""
    return CommonMeasure(0.5 * (mu_f + mu_c), np.maximum(sd_f, sd_c))


def _diffusion_checked(model, s):
    b = model.b(s)
    if np.any(b == 0.0):
        raise DegenerateDiffusionError("diffusion vanishes at the conditioning state")
    return b


def _conditional_laws(state, model):
    """Gaussian laws of the fine and coarse terminal values given the path data."""
    h = state.h_fine
    sf = state.fine_penultimate
    b_f = _diffusion_checked(model, sf)
    mu_f = sf + model.a(sf) * h
    sd_f = b_f * math.sqrt(h)
    if state.level == 0:
        return mu_f, sd_f, None, None
    sc = state.coarse_penultimate
    b_c = _diffusion_checked(model, sc)
    mu_c = sc + model.a(sc) * state.h_coarse + b_c * state.dw_second_last
    sd_c = b_c * math.sqrt(h)
    return mu_f, sd_f, mu_c, sd_c


def _pair(payoff, state):
    fine = payoff(state.fine_terminal)
    if state.level == 0:
        return fine
    return fine - payoff(state.coarse_terminal)


def y_standard(state, payoff):
    """f(S_fine) - f(S_coarse), or f(S_fine) on level 0."""
    return _pair(payoff, state), state.cost


def y_smoothed(state, payoff, kernel):
    """Standard correction with the digital replaced by ``H_delta(x - K)``."""
    return y_standard(state, lambda s: kernel(np.asarray(s) - payoff.strike))


def y_conditional_expectation(state, model, payoff):
    """Analytic expectation over the last fine increment (Euler final step).

    The coarse side conditions on the second-to-last fine increment, so its
    standard deviation is ``b * sqrt(h_fine)``.
    """
    mu_f, sd_f, mu_c, sd_c = _conditional_laws(state, model)
    k = payoff.strike
    p_f = ndtr((mu_f - k) / sd_f)
    if state.level == 0:
        return p_f, state.cost
    return p_f - ndtr((mu_c - k) / sd_c), state.cost


def radon_nikodym(x, mu_path, sd_path, measure):
    """Density ratio N(mu_path, sd_path^2) / N(mu, sigma^2) evaluated at ``x``."""
    return (measure.sigma / sd_path) * np.exp(
        -((x - mu_path) ** 2) / (2.0 * sd_path ** 2) + ((x - measure.mu) ** 2) / (2.0 * measure.sigma ** 2))


def y_change_of_measure(state, model, payoff, z, measure_rule=midpoint_max_measure):
    """(f(S) - f(mu)) (R_fine - R_coarse) with S drawn once from a common Gaussian.

    ``z`` holds one standard normal per sample. Level 0 samples the fine
    conditional law directly, which makes the weight identically 1.
    """
    mu_f, sd_f, mu_c, sd_c = _conditional_laws(state, model)
    if state.level == 0:
        return payoff(mu_f + sd_f * z), state.cost
    measure = measure_rule(mu_f, sd_f, mu_c, sd_c)
    s = measure.mu + measure.sigma * z
    r_f = radon_nikodym(s, mu_f, sd_f, measure)
    r_c = radon_nikodym(s, mu_c, sd_c, measure)
    return (payoff(s) - payoff(measure.mu)) * (r_f - r_c), state.cost


# -- final-timestep splitting -------------------------------------------------


@njit(cache=False)
def _split_nb(drift, diff, ddiff, p, s0, h, nf, coarse, milstein, m, strike, k0, k1, lanes, out):
    sq = math.sqrt(h)
    n_common = nf - 2 if coarse else nf - 1
    for i in range(lanes.shape[0]):
        lane = np.uint64(lanes[i])
        sf = s0
        sc = s0
        dw_prev = 0.0
        for n in range(n_common):
            dw = sq * normal_nb(k0, k1, np.uint64(n), lane)
            sf = step_nb(drift, diff, ddiff, p, sf, dw, h, milstein)
            if coarse:
                if n % 2 == 0:
                    dw_prev = dw
                else:
                    sc = step_nb(drift, diff, ddiff, p, sc, dw_prev + dw, 2.0 * h, milstein)
        dw1 = 0.0
        if coarse:
            dw1 = sq * normal_nb(k0, k1, np.uint64(nf - 2), lane)
            sf = step_nb(drift, diff, ddiff, p, sf, dw1, h, milstein)
        acc_f = 0.0
        acc_c = 0.0
        for j in range(m):
            dw2 = sq * normal_nb(k0, k1, np.uint64(nf - 1 + j), lane)
            if step_nb(drift, diff, ddiff, p, sf, dw2, h, milstein) >= strike:
                acc_f += 1.0
            if coarse and step_nb(drift, diff, ddiff, p, sc, dw1 + dw2, 2.0 * h, milstein) >= strike:
                acc_c += 1.0
        out[0, i] = acc_f / m
        out[1, i] = acc_c / m


def _split_np(model, h, nf, coarse, milstein, m, strike, words, lanes):
    n = lanes.shape[0]
    sq = math.sqrt(h)
    sf = np.full(n, float(model.s0))
    sc = sf.copy()
    dw_prev = np.zeros(n)
    for k in range(nf - 2 if coarse else nf - 1):
        dw = sq * normals(words, lanes, k)
        sf = _step_np(model, sf, dw, h, milstein)
        if coarse:
            if k % 2 == 0:
                dw_prev = dw
            else:
                sc = _step_np(model, sc, dw_prev + dw, 2.0 * h, milstein)
    dw1 = np.zeros(n)
    if coarse:
        dw1 = sq * normals(words, lanes, nf - 2)
        sf = _step_np(model, sf, dw1, h, milstein)
    acc_f = np.zeros(n)
    acc_c = np.zeros(n)
    for j in range(m):
        dw2 = sq * normals(words, lanes, nf - 1 + j)
        acc_f += _step_np(model, sf, dw2, h, milstein) >= strike
        if coarse:
            acc_c += _step_np(model, sc, dw1 + dw2, 2.0 * h, milstein) >= strike
    return np.stack([acc_f / m, acc_c / m])


def y_split_final(model, payoff, level, key, lanes, m_splits, scheme="milstein", n0_steps=1):
    """Average the digital over ``m_splits`` independent final fine increments.

    Fine and coarse share the path up to T - h_coarse and the increment
    dW_{N-1}; split ``i`` of both sides uses the same dW_N^(i). Draw ``N-1+i``
    feeds split ``i``, so ``m_splits=1`` reproduces ``y_standard`` exactly.
    """
    if m_splits < 1:
        raise InvalidInputError("m_splits must be >= 1")
    milstein = _check_scheme(scheme)
    nf = fine_steps(level, n0_steps)
    h = model.maturity / nf
    coarse = level > 0
    lanes = np.ascontiguousarray(np.atleast_1d(lanes), dtype=np.uint64)
    words = key.words
    if _backend.use_numba():
        out = np.empty((2, lanes.shape[0]))
        a, b, db = model.kernel_functions()
        _split_nb(a, b, db, model.params, float(model.s0), h, nf, coarse, milstein, int(m_splits),
                  float(payoff.strike), np.uint64(words[0]), np.uint64(words[1]), lanes, out)
    else:
        out = _split_np(model, h, nf, coarse, milstein, int(m_splits), float(payoff.strike), words, lanes)
    value = out[0] - out[1] if coarse else out[0]
    cost = np.full(lanes.shape[0], float(nf - 1 + m_splits))
    return value, cost


def m_splits_for(level, rule="sqrt", n0_steps=1, maturity=1.0):
    """``ceil(h^-1/2)`` for ``sqrt``, ``h^-1`` for ``linear``."""
    inv_h = fine_steps(level, n0_steps) / maturity
    if rule == "sqrt":
        return max(1, math.ceil(math.sqrt(inv_h) - 1e-12))
    if rule == "linear":
        return max(1, math.ceil(inv_h - 1e-12))
    raise InvalidInputError(f"unknown m_splits rule {rule!r}")


# -- branching (repeated) splitting ------------------------------------------------


def branching_splits(nf, min_left=2):
    """Number of binary splits: at T/2, 3T/4, ... while >= ``min_left`` fine steps remain after."""
    k = 0
    while nf % (2 << k) == 0 and (nf >> (k + 1)) >= min_left:
        k += 1
    return k


def branching_cost(nf, n_splits):
    cost = 0
    for stage in range(n_splits + 1):
        start = 0 if stage == 0 else nf - (nf >> stage)
        end = nf if stage == n_splits else nf - (nf >> (stage + 1))
        cost += (end - start) << stage
    return cost


@njit(cache=False)
def _branch_nb(drift, diff, ddiff, p, s0, h, nf, coarse, milstein, n_splits, strike, k0, k1, lanes, out):
    sq = math.sqrt(h)
    n_leaves = 1 << n_splits
    sf = np.empty(n_leaves)
    sc = np.empty(n_leaves)
    dwp = np.empty(n_leaves)
    for i in range(lanes.shape[0]):
        lane = np.uint64(lanes[i])
        sf[0] = s0
        sc[0] = s0
        for stage in range(n_splits + 1):
            start = 0 if stage == 0 else nf - (nf >> stage)
            end = nf if stage == n_splits else nf - (nf >> (stage + 1))
            nodes = 1 << stage
            if stage > 0:
                for j in range(nodes - 1, -1, -1):
                    sf[j] = sf[j >> 1]
                    sc[j] = sc[j >> 1]
            for j in range(nodes):
                seg = np.uint64(nodes + j) << np.uint64(32)
                x = sf[j]
                y = sc[j]
                for n in range(start, end):
                    dw = sq * normal_nb(k0, k1, seg | np.uint64(n - start), lane)
                    x = step_nb(drift, diff, ddiff, p, x, dw, h, milstein)
                    if coarse:
                        if n % 2 == 0:
                            dwp[j] = dw
                        else:
                            y = step_nb(drift, diff, ddiff, p, y, dwp[j] + dw, 2.0 * h, milstein)
                sf[j] = x
                sc[j] = y
        acc = 0.0
        for j in range(n_leaves):
            if sf[j] >= strike:
                acc += 1.0
            if coarse and sc[j] >= strike:
                acc -= 1.0
        out[i] = acc / n_leaves


def _branch_np(model, h, nf, coarse, milstein, n_splits, strike, words, lanes):
    sq = math.sqrt(h)
    n = lanes.shape[0]
    sf = np.full((n, 1), float(model.s0))
    sc = sf.copy()
    dwp = np.zeros((n, 1))
    lane_col = lanes[:, None]
    for stage in range(n_splits + 1):
        start = 0 if stage == 0 else nf - (nf >> stage)
        end = nf if stage == n_splits else nf - (nf >> (stage + 1))
        nodes = 1 << stage
        if stage > 0:
            sf = np.repeat(sf, 2, axis=1)
            sc = np.repeat(sc, 2, axis=1)
            dwp = np.repeat(dwp, 2, axis=1)
        seg = (np.arange(nodes, 2 * nodes, dtype=np.uint64) << np.uint64(32))[None, :]
        for k in range(start, end):
            dw = sq * normals(words, lane_col, seg | np.uint64(k - start))
            sf = _step_np(model, sf, dw, h, milstein)
            if coarse:
                if k % 2 == 0:
                    dwp = dw
                else:
                    sc = _step_np(model, sc, dwp + dw, 2.0 * h, milstein)
    val = (sf >= strike).astype(np.float64)
    if coarse:
        val -= sc >= strike
    return val.mean(axis=1)


def y_branching_split(model, payoff, level, key, lanes, scheme="euler", n0_steps=1, min_left=2):
    """Repeated binary splitting at T(1 - 2^-k) down to ``min_left`` fine steps.

    Tree node ``v`` (root 1, children 2v and 2v+1) draws its increments from
    counter segment ``v`` of the sample's lane, so every branch is an
    independent continuation of its parent. Returns the mean fine-minus-coarse
    digital over the leaves.
    """
    milstein = _check_scheme(scheme)
    nf = fine_steps(level, n0_steps)
    h = model.maturity / nf
    coarse = level > 0
    n_splits = branching_splits(nf, min_left) if coarse else 0
    lanes = np.ascontiguousarray(np.atleast_1d(lanes), dtype=np.uint64)
    words = key.words
    if _backend.use_numba():
        out = np.empty(lanes.shape[0])
        a, b, db = model.kernel_functions()
        _branch_nb(a, b, db, model.params, float(model.s0), h, nf, coarse, milstein, n_splits,
                   float(payoff.strike), np.uint64(words[0]), np.uint64(words[1]), lanes, out)
    else:
        out = _branch_np(model, h, nf, coarse, milstein, n_splits, float(payoff.strike), words, lanes)
    return out, np.full(lanes.shape[0], float(branching_cost(nf, n_splits)))


# -- adaptive timestep --------------------------------------------------------------


@njit
def _refine_buffer(w, n_cur, h_cur, depth, k0, k1, lane):
    # In-place Brownian-bridge doubling of w[0..n_cur]; writes run from the end
    # so every old value is read before its slot is reused.
    seg = np.uint64(depth) << np.uint64(32)
    half = math.sqrt(0.25 * h_cur)
    for i in range(n_cur - 1, -1, -1):
        a = w[i]
        b = w[i + 1]
        z = normal_nb(k0, k1, seg | np.uint64(i), lane)
        w[2 * i + 2] = b
        w[2 * i + 1] = 0.5 * (a + b) + half * z
    return 2 * n_cur


@njit(cache=False)
def _euler_on(drift, diff, ddiff, p, s0, w, stride, n_steps, h, milstein):
    s = s0
    for n in range(n_steps):
        s = step_nb(drift, diff, ddiff, p, s, w[(n + 1) * stride] - w[n * stride], h, milstein)
    return s


@njit(cache=False)
def _adaptive_nb(drift, diff, ddiff, p, s0, T, n0, level, milstein, strike, c_adapt, scaled, k0, k1, lanes,
                 out, cost_out):
    n_base = n0 << level
    h_base = T / n_base
    w = np.empty((n0 << (2 * level)) + 1)
    sq = math.sqrt(h_base)
    for i in range(lanes.shape[0]):
        lane = np.uint64(lanes[i])
        w[0] = 0.0
        for n in range(n_base):
            w[n + 1] = w[n] + sq * normal_nb(k0, k1, np.uint64(n), lane)
        res = level
        cost = 0.0
        value = 0.0
        n_sides = 2 if level > 0 else 1
        for side in range(n_sides):
            r = level - side
            r_max = 2 * r
            while True:
                while res < r:
                    _refine_buffer(w, n0 << res, T / (n0 << res), res + 1 - level, k0, k1, lane)
                    res += 1
                n_steps = n0 << r
                h = T / n_steps
                s = _euler_on(drift, diff, ddiff, p, s0, w, 1 << (res - r), n_steps, h, milstein)
                if side == 0 or r > level - 1:
                    cost += n_steps
                tol = c_adapt * math.sqrt(h)
                if scaled:
                    tol *= abs(diff(s, p) * ddiff(s, p)) * math.sqrt(0.5 * T)
                if r < r_max and abs(s - strike) <= tol:
                    r += 1
                else:
                    break
            if s >= strike:
                value += 1.0 if side == 0 else -1.0
        out[i] = value
        cost_out[i] = cost


def _adaptive_np(model, T, n0, level, milstein, strike, c_adapt, scaled, words, lanes):
    n = lanes.shape[0]
    n_base = n0 << level
    h_base = T / n_base
    z = normals(words, lanes[:, None], np.arange(n_base, dtype=np.uint64)[None, :])
    grids = {level: np.concatenate([np.zeros((n, 1)), np.cumsum(math.sqrt(h_base) * z, axis=1)], axis=1)}

    def grid(r, rows):
        # Brownian values at resolution r for the given sample rows, bridged lazily.
        if r <= level:
            return grids[level][rows][:, :: 1 << (level - r)]
        g = grids.setdefault(r, np.full((n, (n0 << r) + 1), np.nan))
        missing = rows[np.isnan(g[rows, -1])]
        if missing.size:
            coarse = grid(r - 1, missing)
            n_prev = n0 << (r - 1)
            seg = np.uint64(r - level) << np.uint64(32)
            zz = normals(words, lanes[missing][:, None], seg | np.arange(n_prev, dtype=np.uint64)[None, :])
            fine = np.empty((missing.size, 2 * n_prev + 1))
            fine[:, 0::2] = coarse
            fine[:, 1::2] = 0.5 * (coarse[:, :-1] + coarse[:, 1:]) + math.sqrt(0.25 * T / n_prev) * zz
            g[missing] = fine
        return g[rows]

    value = np.zeros(n)
    cost = np.zeros(n)
    for side in range(2 if level > 0 else 1):
        r0 = level - side
        active = np.arange(n)
        final = np.empty(n)
        for r in range(r0, 2 * r0 + 1):
            g = grid(r, active)
            n_steps = n0 << r
            h = T / n_steps
            s = np.full(active.size, float(model.s0))
            dws = np.diff(g, axis=1)
            for k in range(n_steps):
                s = _step_np(model, s, dws[:, k], h, milstein)
            if side == 0 or r > r0:
                cost[active] += n_steps
            final[active] = s
            if r == 2 * r0:
                break
            tol = c_adapt * math.sqrt(h)
            if scaled:
                tol = tol * np.abs(model.b(s) * model.db(s)) * math.sqrt(0.5 * T)
            active = active[np.abs(s - strike) <= tol]
            if active.size == 0:
                break
        value += (final >= strike) * (1.0 if side == 0 else -1.0)
    return value, cost


ADAPT_PROXIES = ("euler_strong", "sqrt_h")


def y_adaptive_timestep(model, payoff, level, key, lanes, c_adapt=3.0, scheme="euler", n0_steps=1,
                        proxy="euler_strong"):
    """Digital correction with per-path timestep refinement.

    Each side starts from its own level's grid, n0 2^l steps for the fine
    side and n0 2^(l-1) for the coarse side, and halves h by Brownian-bridge
    refinement while ``|S_T - K| <= c_adapt * err(h)``, stopping at n0 4^l
    (respectively 4^(l-1)) steps. Both sides read one shared Brownian path,
    so the coarse side has exactly the law of the fine side one level down.
    Cost counts every simulated step except the coarse side's first pass,
    which (as in the standard estimator) is free given the fine increments;
    a path that is never refined therefore costs ``n0 2^l``.

    ``err(h)`` is the strong-error proxy: ``euler_strong`` uses the leading
    Euler error scale ``|b b'|(S_T) sqrt(h T / 2)``, ``sqrt_h`` uses the bare
    ``sqrt(h)``.
    """
    milstein = _check_scheme(scheme)
    if proxy not in ADAPT_PROXIES:
        raise InvalidInputError(f"proxy must be one of {ADAPT_PROXIES}")
    scaled = proxy == "euler_strong"
    if level < 0 or n0_steps < 1:
        raise InvalidInputError("need level >= 0 and n0_steps >= 1")
    lanes = np.ascontiguousarray(np.atleast_1d(lanes), dtype=np.uint64)
    words = key.words
    if _backend.use_numba():
        out = np.empty(lanes.shape[0])
        cost = np.empty(lanes.shape[0])
        a, b, db = model.kernel_functions()
        _adaptive_nb(a, b, db, model.params, float(model.s0), float(model.maturity), n0_steps, level, milstein,
                     float(payoff.strike), float(c_adapt), scaled, np.uint64(words[0]), np.uint64(words[1]), lanes,
                     out, cost)
        return out, cost
    return _adaptive_np(model, float(model.maturity), n0_steps, level, milstein, float(payoff.strike),
                        float(c_adapt), scaled, words, lanes)


METHODS = ("standard", "smoothed", "cond_exp", "com", "split", "branch", "adaptive_h")


@dataclass
class PathEstimator:
    """``LevelEstimator`` for an SDE payoff using one of the correction methods.

    ``method`` is one of ``METHODS``; ``payoff`` may also be any callable
    returning one column per output (used for multi-point CDF estimates)
    when ``method`` is ``standard`` or ``smoothed``.
    """

    model: object
    payoff: object
    method: str = "standard"
    scheme: str = "euler"
    n0_steps: int = 1
    m_splits_rule: str = "sqrt"
    kernel: object = None
    c_adapt: float = 3.0
    adapt_proxy: str = "euler_strong"
    min_left: int = 2
    measure_rule: object = midpoint_max_measure

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown estimator {self.method!r}; expected one of {METHODS}")
        _check_scheme(self.scheme)
        if self.method == "smoothed" and self.kernel is None:
            raise InvalidInputError("smoothed estimator needs a kernel")

    def sample(self, level, key, lanes):
        m = self.method
        if m == "split":
            k = m_splits_for(level, self.m_splits_rule, self.n0_steps, self.model.maturity)
            return y_split_final(self.model, self.payoff, level, key, lanes, k, self.scheme, self.n0_steps)
        if m == "branch":
            return y_branching_split(self.model, self.payoff, level, key, lanes, self.scheme, self.n0_steps,
                                     self.min_left)
        if m == "adaptive_h":
            return y_adaptive_timestep(self.model, self.payoff, level, key, lanes, self.c_adapt, self.scheme,
                                       self.n0_steps, self.adapt_proxy)
        state = simulate_coupled(self.model, level, key, lanes, self.scheme, self.n0_steps)
        if m == "standard":
            return y_standard(state, self.payoff)
        if m == "smoothed":
            return y_smoothed(state, self.payoff, self.kernel)
        if m == "cond_exp":
            return y_conditional_expectation(state, self.model, self.payoff)
        z = normals(key.words, np.atleast_1d(lanes), fine_steps(level, self.n0_steps))
        return y_change_of_measure(state, self.model, self.payoff, z, self.measure_rule)
