"""Kernel backend selection.

Hot loops exist twice: a numba ``@njit`` version and a vectorised numpy
version. ``MLMC_DISC_BACKEND=numpy`` (or a missing numba install) selects the
fallback; ``set_backend`` switches at runtime, which the benchmarks use.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_VALID = ("numba", "numpy")


def _initial_backend():
    requested = os.environ.get("MLMC_DISC_BACKEND", "numba").strip().lower()
    if requested not in _VALID:
        raise ValueError(f"MLMC_DISC_BACKEND must be one of {_VALID}, got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        return "numpy"
    return requested


_backend = _initial_backend()


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous choice."""
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def use_numba():
    return _backend == "numba"


def njit(*args, **kwargs):
    """``numba.njit(nogil=True, cache=True)`` when numba is importable, identity otherwise.

    Kernels that take compiled functions as arguments must pass
    ``cache=False``: numba cannot pickle signatures containing dispatcher
    types, and the on-disk cache then fails intermittently.
    """
    kwargs.setdefault("nogil", True)
    kwargs.setdefault("cache", True)

    def wrap(fn):
        if not HAVE_NUMBA:
            return fn
        return numba.njit(**kwargs)(fn)

    if args and callable(args[0]):
        return wrap(args[0])
    return wrap
