"""Time the numba and numpy kernels on the same lanes and check they agree.

Usage: ``python3 benchmarks/bench_kernels.py [--lanes N] [--level L] [--repeat R]``

Prints one row per kernel: best-of-R wall time per backend, the speedup, and
the largest absolute difference between the two outputs. The Philox row is a
shared numpy routine in both modes and serves as a baseline. The numba column is
measured after a warm-up call, so compilation time is excluded (it is reported
separately).
"""

import argparse
import time

import numpy as np

from mlmc_disc import PathEstimator, StreamKey, digital, gaussian_nested, gbm, set_backend
from mlmc_disc._backend import HAVE_NUMBA
from mlmc_disc.nested import NestedEstimator
from mlmc_disc.randomness import normals
from mlmc_disc.sde import simulate_coupled


def kernels(level):
    model, pay = gbm(), digital(1.0)
    problem = gaussian_nested()
    out = {
        "philox normals (shared)": lambda key, lanes: normals(key.words, lanes[:, None], np.arange(64)),
        "coupled path (milstein)": lambda key, lanes: simulate_coupled(model, level, key, lanes, "milstein").fine_terminal,
    }
    for method in ("standard", "split", "branch", "adaptive_h"):
        est = PathEstimator(model, pay, method=method, scheme="milstein" if method == "split" else "euler")
        out[f"digital {method}"] = lambda key, lanes, est=est: est.sample(level, key, lanes)
    for method in ("plain", "adaptive"):
        est = NestedEstimator(problem, method)
        out[f"nested {method}"] = lambda key, lanes, est=est: est.sample(level, key, lanes)
    return out


def _values(result):
    # estimators return (values, cost); compare the values
    while isinstance(result, tuple):
        result = result[0]
    return np.asarray(result, dtype=float)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return min(times), result


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lanes", type=int, default=20000)
    p.add_argument("--level", type=int, default=6)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    key, lanes = StreamKey(2024), np.arange(args.lanes, dtype=np.uint64)
    print(f"lanes={args.lanes} level={args.level} best of {args.repeat}")
    print(f"{'kernel':26s} {'compile s':>9s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s} {'max |diff|':>10s}")
    for name, fn in kernels(args.level).items():
        set_backend("numba")
        start = time.perf_counter()
        fn(key, lanes[:8])
        compile_s = time.perf_counter() - start
        t_nb, r_nb = best_of(lambda: fn(key, lanes), args.repeat)
        set_backend("numpy")
        t_np, r_np = best_of(lambda: fn(key, lanes), args.repeat)
        diff = float(np.max(np.abs(_values(r_nb) - _values(r_np))))
        print(f"{name:26s} {compile_s:9.2f} {t_nb:9.4f} {t_np:9.4f} {t_np / t_nb:8.1f} {diff:10.1e}")
    set_backend("numba")


if __name__ == "__main__":
    main()
