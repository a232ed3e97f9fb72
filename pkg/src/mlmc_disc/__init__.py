"""Multilevel Monte Carlo estimators for discontinuous functionals.

Digital options of scalar SDEs and nested expectations, with the
corrections that restore fast variance decay (smoothing, conditional
expectation, change of measure, splitting, adaptive refinement), plus a
reproducible experiment harness. Kernels run under numba when available;
set ``MLMC_DISC_BACKEND=numpy`` to use the pure numpy versions.
"""

from ._backend import get_backend, set_backend
from .core import (LevelMoments, MlmcConfig, MlmcResult, fit_rates, kurtosis, optimal_allocation, run_mlmc,
                   sample_level)
from .errors import MlmcError
from .estimators import PathEstimator, Payoff, digital
from .nested import NestedEstimator, NestedProblem, gaussian_nested
from .randomness import StreamKey
from .sde import SdeModel, gbm
from .smoothing import SmoothingKernel, make_kernel

__version__ = "0.1.0"

__all__ = [
    "LevelMoments", "MlmcConfig", "MlmcError", "MlmcResult", "NestedEstimator", "NestedProblem", "PathEstimator",
    "Payoff", "SdeModel", "SmoothingKernel", "StreamKey", "digital", "fit_rates", "gaussian_nested", "gbm",
    "get_backend", "kurtosis", "make_kernel", "optimal_allocation", "run_mlmc", "sample_level", "set_backend",
]
