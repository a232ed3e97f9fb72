"""Counter-based random streams.

Every normal draw is a pure function of ``(key, lane, counter)``: the key is a
64-bit hash of a ``StreamKey`` (seed plus derivation path), the lane is the
sample index inside a level, and the counter indexes draws along that sample.
The block cipher is Philox4x32-10 (Salmon et al., SC'11); uniforms are mapped
to normals through Wichura's AS241 inverse CDF.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._backend import njit
from .errors import InvalidIntervalError

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_LO32 = np.uint64(MASK32)
_SH32 = np.uint64(32)
_SH5 = np.uint64(5)
_SH6 = np.uint64(6)
_TWO26 = np.uint64(1 << 26)
_INV53 = 1.0 / 9007199254740992.0


def splitmix64(x):
    """SplitMix64 output function on Python ints."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class StreamKey:
    seed: int
    path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & MASK64)
        object.__setattr__(self, "path", tuple(int(p) & MASK64 for p in self.path))

    def derive(self, child_index):
        return StreamKey(self.seed, self.path + (int(child_index),))

    @property
    def words(self):
        """The two 32-bit Philox key words."""
        h = splitmix64(self.seed)
        for p in self.path:
            h = splitmix64(h ^ splitmix64(p ^ 0xD1B54A32D192ED03))
        return h & MASK32, h >> 32


def derive(parent, child_index):
    return parent.derive(child_index)


def _philox4x32(c0, c1, c2, c3, k0, k1):
    # Works on uint64 scalars (numba) and uint64 arrays (numpy) alike.
    for _ in range(10):
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = ((p1 >> _SH32) ^ c1 ^ k0), (p1 & _LO32), ((p0 >> _SH32) ^ c3 ^ k1), (p0 & _LO32)
        k0 = (k0 + _PHILOX_W0) & _LO32
        k1 = (k1 + _PHILOX_W1) & _LO32
    return c0, c1, c2, c3


philox4x32_nb = njit(_philox4x32)


def philox4x32(counter, key):
    """Philox4x32-10 on Python ints; ``counter`` is 4 words, ``key`` is 2 words."""
    words = [np.uint64(w & MASK32) for w in tuple(counter) + tuple(key)]
    with np.errstate(over="ignore"):
        out = _philox4x32(*words)
    return tuple(int(w) for w in out)


# Wichura (1988) AS241 PPND16 coefficients.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(c, x):
    return ((((((c[7] * x + c[6]) * x + c[5]) * x + c[4]) * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0]


_poly_nb = njit(_poly)


@njit
def norm_ppf_scalar(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly_nb(_A, r) / _poly_nb(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        x = _poly_nb(_C, r) / _poly_nb(_D, r)
    else:
        r -= 5.0
        x = _poly_nb(_E, r) / _poly_nb(_F, r)
    return -x if q < 0.0 else x


def norm_ppf(p):
    """Vectorised AS241 inverse normal CDF for ``p`` in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    central = np.abs(q) <= 0.425
    r_c = 0.180625 - q * q
    x_c = q * _poly(_A, r_c) / _poly(_B, r_c)
    tail_p = np.where(q < 0.0, p, 1.0 - p)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(-np.log(np.where(central, 0.5, tail_p)))
    near = r <= 5.0
    r_n = r - 1.6
    r_f = r - 5.0
    x_t = np.where(near, _poly(_C, r_n) / _poly(_D, r_n), _poly(_E, r_f) / _poly(_F, r_f))
    x_t = np.where(q < 0.0, -x_t, x_t)
    return np.where(central, x_c, x_t)


@njit
def normal_nb(k0, k1, draw, lane):
    """Standard normal for 64-bit ``draw`` and ``lane`` (both uint64)."""
    x0, x1, _, _ = philox4x32_nb(draw & _LO32, draw >> _SH32, lane & _LO32, lane >> _SH32, k0, k1)
    u = (np.float64((x0 >> _SH5) * _TWO26 + (x1 >> _SH6)) + 0.5) * _INV53
    return norm_ppf_scalar(u)


def uniforms(key_words, lanes, draws):
    """Open-interval uniforms, numpy path; ``lanes`` and ``draws`` broadcast."""
    lanes = np.asarray(lanes, dtype=np.uint64)
    draws = np.asarray(draws, dtype=np.uint64)
    lanes, draws = np.broadcast_arrays(lanes, draws)
    k0 = np.uint64(key_words[0])
    k1 = np.uint64(key_words[1])
    with np.errstate(over="ignore"):
        x0, x1, _, _ = _philox4x32(draws & _LO32, draws >> _SH32, lanes & _LO32, lanes >> _SH32, k0, k1)
    return ((x0 >> _SH5) * _TWO26 + (x1 >> _SH6)).astype(np.float64) * _INV53 + 0.5 * _INV53


def normals(key_words, lanes, draws):
    """Standard normals at every broadcast ``(lane, draw)`` pair."""
    return norm_ppf(uniforms(key_words, lanes, draws))


def draw_index(segment, step):
    """Counter for ``step`` within a numbered segment (tree node, bridge depth)."""
    return (int(segment) << 32) | int(step)


@dataclass(frozen=True)
class GaussianStream:
    key: StreamKey
    lane: int = 0
    counter: int = 0
    _words: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._words is None:
            object.__setattr__(self, "_words", self.key.words)

    def at(self, counter):
        return GaussianStream(self.key, self.lane, counter, self._words)

    def peek(self, counter=None):
        c = self.counter if counter is None else counter
        return float(normals(self._words, self.lane, c))


def next_normal(stream):
    """Return ``(z, advanced_stream)``; the stream itself is never mutated."""
    return stream.peek(), stream.at(stream.counter + 1)


def brownian_bridge_midpoint(w_left, w_right, t_left, t_right, z):
    if not t_left < t_right:
        raise InvalidIntervalError(f"need t_left < t_right, got [{t_left}, {t_right}]")
    return 0.5 * (w_left + w_right) + z * math.sqrt(0.25 * (t_right - t_left))
