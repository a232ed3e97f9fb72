"""Convergence, complexity and CDF experiments driven by ``ExperimentSpec``.

Outputs are CSV files plus a generated matplotlib script; nothing written
depends on wall-clock time, so equal specs and seeds give equal bytes.
"""

from dataclasses import dataclass, field
import csv
import io
import logging
import math
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .cdf import equispaced, estimate_cdf_parity, estimate_cdf_smoothed, interior, sup_error
from .core import LevelSummary, MlmcConfig, fit_rates, kurtosis, run_mlmc, sample_level
from .errors import InsufficientDataError, InvalidInputError, UndefinedKurtosisError
from .estimators import PathEstimator, Payoff
from .nested import NestedEstimator, gaussian_nested
from .oracles import gbm_call, gbm_cdf, gbm_digital, gbm_put
from .randomness import StreamKey
from .sde import gbm
from .smoothing import make_kernel, smoothing_delta

log = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ("level", "n", "mean", "variance", "cost", "kurtosis")
COMPLEXITY_COLUMNS = ("epsilon", "estimate", "total_cost", "oracle", "abs_error")
LEVELS_COLUMNS = ("epsilon", "repeat", "level", "n")
CDF_COLUMNS = ("x", "cdf", "stderr")

# Predicted rates: (estimator, scheme, payoff class) -> name -> (value, tolerance).
# "kurtosis" is the slope of log2 kurtosis against level, "cost_slope" the
# slope of log total cost against log epsilon.
EXPECTED = {
    ("standard", "euler", "lipschitz"): {"beta": (1.0, 0.2)},
    ("standard", "milstein", "lipschitz"): {"beta": (2.0, 0.25)},
    ("standard", "euler", "digital"): {"beta": (0.5, 0.15), "cost_slope": (-2.5, 0.3)},
    ("standard", "milstein", "digital"): {"beta": (1.0, 0.2), "kurtosis": (1.0, 0.3)},
    ("cond_exp", "milstein", "digital"): {"beta": (1.5, 0.2), "kurtosis": (0.5, 0.3), "cost_slope": (-2.0, 0.3)},
    ("com", "milstein", "digital"): {"beta": (1.5, 0.25)},
    ("split", "milstein", "digital"): {"beta": (1.5, 0.25)},
    ("branch", "euler", "digital"): {"beta": (1.0, 0.15)},
    ("adaptive_h", "euler", "digital"): {"beta": (1.0, 0.2), "gamma": (1.0, 0.2)},
    ("nested_plain", None, None): {"beta": (0.5, 0.15)},
    ("nested_adaptive", None, None): {"beta": (1.0, 0.2), "gamma": (1.0, 0.2), "kurtosis": (1.0, 0.4),
                                      "cost_slope": (-2.0, 0.3)},
}


def _table_key(spec):
    if spec.nested:
        return spec.estimator, None, None
    kind = "digital" if spec.payoff == "digital_call" else "lipschitz"
    return spec.estimator, spec.scheme, kind


def expected_rates(spec):
    """Spec overrides on top of the built-in table."""
    out = dict(EXPECTED.get(_table_key(spec), {}))
    out.update(spec.expect)
    return out


# -- builders -------------------------------------------------------------------


def build_model(spec):
    return gbm(spec.r, spec.sigma, spec.s0, spec.maturity)


def build_kernel(spec, epsilon=None):
    kernel = make_kernel(spec.kernel)
    if spec.delta_rule == "fixed" or epsilon is None:
        return kernel.with_delta(spec.delta)
    return kernel.with_delta(smoothing_delta(kernel, epsilon, spec.delta_rule, spec.delta_scale))


def build_estimator(spec, epsilon=None):
    if spec.nested:
        problem = gaussian_nested(spec.k_threshold, spec.m0)
        method = "plain" if spec.estimator == "nested_plain" else "adaptive"
        return NestedEstimator(problem, method, spec.c_adapt)
    kernel = build_kernel(spec, epsilon) if spec.estimator == "smoothed" else None
    return PathEstimator(build_model(spec), Payoff(spec.payoff, spec.strike), spec.estimator, spec.scheme,
                         spec.n0_steps, spec.m_splits_rule, kernel, spec.c_adapt, spec.adapt_proxy, spec.min_left)


def oracle_value(spec):
    """Exact target value, or None when no closed form is known."""
    if spec.nested:
        # E[Z | X] = X ~ N(0, 1), and f is the Heaviside step
        return float(ndtr(-spec.k_threshold))
    args = (spec.strike, spec.s0, spec.r, spec.sigma, spec.maturity)
    if spec.payoff == "digital_call":
        return gbm_digital(*args)
    if spec.payoff == "call":
        return gbm_call(*args)
    if spec.payoff == "put":
        return gbm_put(*args)
    return None


def mlmc_config(spec, threads=None, rates=(None, None, None)):
    alpha, beta, gamma = rates
    return MlmcConfig(seed=spec.seed, l_max=spec.l_max, n_warm=spec.n_warm, n_min=spec.n_min,
                      block_size=spec.block_size, threads=threads or spec.threads,
                      alpha=alpha, beta=beta, gamma=gamma)


# -- reports --------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    expected: float
    tolerance: float
    # "abs": |measured - expected| <= tolerance; "max": measured <= expected
    mode: str = "abs"

    @property
    def passed(self):
        if not math.isfinite(self.measured):
            return False
        if self.mode == "max":
            return self.measured <= self.expected
        return abs(self.measured - self.expected) <= self.tolerance

    def describe(self):
        status = "PASS" if self.passed else "FAIL"
        if self.mode == "max":
            return f"{status} {self.name} = {self.measured:.4g} (limit {self.expected:.4g})"
        return f"{status} {self.name} = {self.measured:.3f} (expected {self.expected:g} +- {self.tolerance:g})"


def _rate_checks(measured, expected):
    return [Check(k, measured.get(k, math.nan), v, tol) for k, (v, tol) in expected.items() if k in measured]


@dataclass
class ConvergenceReport:
    name: str
    rows: list
    alpha: float
    beta: float
    gamma: float
    kurtosis_slope: float
    expected: dict
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def rates(self):
        return self.alpha, self.beta, self.gamma

    def measured(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "kurtosis": self.kurtosis_slope}

    def summary(self):
        lines = [f"[{self.name}] convergence",
                 f"  alpha={self.alpha:.3f} beta={self.beta:.3f} gamma={self.gamma:.3f}"
                 f" kurtosis_slope={self.kurtosis_slope:.3f}"]
        lines += ["  " + c.describe() for c in self.checks]
        return "\n".join(lines)


def kurtosis_slope(levels, kurt):
    ells = np.asarray(levels, dtype=np.float64)
    k = np.asarray(kurt, dtype=np.float64)
    ok = np.isfinite(k) & (k > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(ells[ok], np.log2(k[ok]), 1)[0])


def report_from_rows(name, rows, expected):
    """Fit rates to per-level rows and evaluate ``expected`` against them."""
    levels = [r.level for r in rows]
    try:
        rates = fit_rates([r.mean for r in rows], [r.variance for r in rows], [r.cost for r in rows],
                          l_min=min(levels) if levels else 0, levels=levels)
        alpha, beta, gamma = rates.alpha, rates.beta, rates.gamma
    except InsufficientDataError:
        alpha = beta = gamma = math.nan
    ks = kurtosis_slope(levels, [r.kurtosis for r in rows])
    report = ConvergenceReport(name, list(rows), alpha, beta, gamma, ks, dict(expected))
    report.checks = _rate_checks(report.measured(), {k: v for k, v in expected.items() if k != "cost_slope"})
    return report


def run_convergence(spec, threads=None):
    """Fixed ``spec.samples`` per level over ``spec.levels``; level l uses key ``(seed, l)``."""
    est = build_estimator(spec)
    key = StreamKey(spec.seed)
    rows = []
    for ell in spec.level_range:
        m = sample_level(est, ell, key.derive(ell), 0, spec.samples, spec.block_size, threads or spec.threads)
        try:
            k = kurtosis(m)
        except UndefinedKurtosisError:
            k = math.nan
        rows.append(LevelSummary(ell, m.n, float(m.mean[0]), float(m.variance[0]), m.cost, k))
    report = report_from_rows(spec.name, rows, expected_rates(spec))
    log.info(report.summary())
    return report


@dataclass(frozen=True)
class ComplexityRow:
    epsilon: float
    repeat: int
    estimate: float
    total_cost: float
    oracle: float
    level_n: tuple

    @property
    def abs_error(self):
        return abs(self.estimate - self.oracle) if self.oracle is not None else math.nan


@dataclass
class ComplexityReport:
    name: str
    rows: list
    cost_slope: float
    rates_used: tuple
    expected: dict
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def mean_costs(self):
        eps = sorted({r.epsilon for r in self.rows}, reverse=True)
        return eps, [float(np.mean([r.total_cost for r in self.rows if r.epsilon == e])) for e in eps]

    def summary(self):
        lines = [f"[{self.name}] complexity  cost_slope={self.cost_slope:.3f}"
                 f"  rates used alpha={self.rates_used[0]} beta={self.rates_used[1]} gamma={self.rates_used[2]}"]
        for e, c in zip(*self.mean_costs()):
            lines.append(f"  eps={e:g} mean cost={c:.4g}")
        lines += ["  " + c.describe() for c in self.checks]
        return "\n".join(lines)


def cost_slope(epsilons, costs):
    return float(np.polyfit(np.log(epsilons), np.log(costs), 1)[0])


def _fixed_rates(report):
    """Rates handed to the MLMC driver: alpha is floored at 0.5 as in ``run_mlmc``."""
    return max(0.5, report.alpha), report.beta, report.gamma


def run_complexity(spec, calibration=None, threads=None):
    """``run_mlmc`` at each epsilon, ``spec.repeats`` independent runs each.

    With ``rates = fitted`` the alpha, beta, gamma of the convergence study
    of the same spec (run here unless ``calibration`` is given) are passed to
    every run, so that the level count is not driven by noisy per-run fits.
    The reported slope fits the mean cost per epsilon.
    """
    rates = (None, None, None)
    if spec.rates == "fitted":
        if calibration is None:
            calibration = run_convergence(spec, threads)
        rates = _fixed_rates(calibration)
    cfg = mlmc_config(spec, threads, rates)
    oracle = oracle_value(spec)
    rows = []
    for eps in spec.epsilons:
        est = build_estimator(spec, eps)
        for rep in range(spec.repeats):
            res = run_mlmc(est, eps, cfg, StreamKey(spec.seed).derive(rep))
            rows.append(ComplexityRow(eps, rep, float(res.estimate), res.total_cost, oracle,
                                      tuple(r.n for r in res.levels)))
    report = ComplexityReport(spec.name, rows, math.nan, rates, expected_rates(spec))
    eps, costs = report.mean_costs()
    report.cost_slope = cost_slope(eps, costs)
    if spec.check_cost_slope and "cost_slope" in report.expected:
        v, tol = report.expected["cost_slope"]
        report.checks.append(Check("cost_slope", report.cost_slope, v, tol))
    if oracle is not None:
        worst = max(r.abs_error / r.epsilon for r in rows)
        report.checks.append(Check("max abs_error/epsilon", worst, 3.0, 0.0, mode="max"))
    log.info(report.summary())
    return report


@dataclass
class CdfReport:
    name: str
    estimate: object
    sup_error: float
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def summary(self):
        lines = [f"[{self.name}] cdf ({self.estimate.method})  sup error vs lognormal = {self.sup_error:.4g}"]
        lines += ["  " + c.describe() for c in self.checks]
        lines += ["  warning: " + w for w in self.estimate.warnings]
        return "\n".join(lines)


def run_cdf(spec, threads=None):
    """CDF of S_T on ``spec.points`` equispaced points over ``spec.range``.

    The error against the lognormal CDF is measured between the second and
    second-to-last points for ``parity`` (differentiation is least accurate
    at the ends) and over the whole range for ``smooth``.
    """
    if spec.nested:
        raise InvalidInputError("cdf experiments need an SDE model")
    model = build_model(spec)
    x = equispaced(spec.range[0], spec.range[1], spec.points)
    cfg = mlmc_config(spec, threads)
    key = StreamKey(spec.seed)
    if spec.cdf_method == "smooth":
        est = estimate_cdf_smoothed(model, x, build_kernel(spec, spec.epsilon), spec.epsilon, cfg, key,
                                    spec.scheme, spec.n0_steps)
        lo, hi = x[0], x[-1]
    elif spec.cdf_method == "parity":
        est = estimate_cdf_parity(model, x, spec.epsilon, cfg, key, spec.scheme, spec.n0_steps)
        lo, hi = interior(x)
    else:
        raise InvalidInputError(f"unknown cdf method {spec.cdf_method!r}")

    def exact(xs):
        return gbm_cdf(xs, spec.s0, spec.r, spec.sigma, spec.maturity)

    err = sup_error(est, exact, lo, hi)
    report = CdfReport(spec.name, est, err)
    if spec.cdf_tol is not None:
        report.checks.append(Check("sup error", err, spec.cdf_tol, 0.0, mode="max"))
    log.info(report.summary())
    return report


# -- CSV and plot emission ------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_convergence_csv(report, path):
    return _write_csv(path, CONVERGENCE_COLUMNS,
                      [(r.level, r.n, r.mean, r.variance, r.cost, r.kurtosis) for r in report.rows])


def read_convergence_csv(path):
    """Rows of a convergence CSV as ``LevelSummary`` objects."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CONVERGENCE_COLUMNS:
            raise InvalidInputError(f"{path}: expected columns {','.join(CONVERGENCE_COLUMNS)}")
        return [LevelSummary(int(r["level"]), int(r["n"]), float(r["mean"]), float(r["variance"]),
                             float(r["cost"]), float(r["kurtosis"])) for r in reader]


def write_complexity_csv(report, path):
    return _write_csv(path, COMPLEXITY_COLUMNS,
                      [(r.epsilon, r.estimate, r.total_cost, r.oracle,
                        None if r.oracle is None else r.abs_error) for r in report.rows])


def write_levels_csv(report, path):
    return _write_csv(path, LEVELS_COLUMNS,
                      [(r.epsilon, r.repeat, ell, n) for r in report.rows for ell, n in enumerate(r.level_n)])


def write_cdf_csv(report, path):
    est = report.estimate
    return _write_csv(path, CDF_COLUMNS, zip(est.points, est.cdf_at_points(), est.grid.stderr))


_PLOT_TEMPLATE = '''"""Diagnostic plots for experiment {name!r}; run with python."""
import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent


def read(name):
    path = HERE / name
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [{{k: float(v) if v else math.nan for k, v in row.items()}} for row in csv.DictReader(fh)]


conv = read({convergence!r})
comp = read({complexity!r})
lev = read({levels!r})
fig, ax = plt.subplots(2, 2, figsize=(10, 8))
if conv:
    ell = [r["level"] for r in conv]
    ax[0, 0].plot(ell, [math.log2(r["variance"]) if r["variance"] > 0 else math.nan for r in conv], "o-")
    ax[0, 0].set_xlabel("level")
    ax[0, 0].set_ylabel("log2 variance")
    ax[0, 1].plot(ell, [math.log2(abs(r["mean"])) if r["mean"] else math.nan for r in conv], "o-")
    ax[0, 1].set_xlabel("level")
    ax[0, 1].set_ylabel("log2 |mean|")
if lev:
    for eps in sorted({{r["epsilon"] for r in lev}}, reverse=True):
        rows = [r for r in lev if r["epsilon"] == eps and r["repeat"] == 0]
        ax[1, 0].semilogy([r["level"] for r in rows], [r["n"] for r in rows], "o-", label=f"eps={{eps:g}}")
    ax[1, 0].set_xlabel("level")
    ax[1, 0].set_ylabel("N_l")
    ax[1, 0].legend()
if comp:
    eps = sorted({{r["epsilon"] for r in comp}})
    cost = [sum(r["total_cost"] for r in comp if r["epsilon"] == e) / sum(1 for r in comp if r["epsilon"] == e)
            for e in eps]
    ax[1, 1].loglog(eps, [e * e * c for e, c in zip(eps, cost)], "o-")
    ax[1, 1].set_xlabel("epsilon")
    ax[1, 1].set_ylabel("epsilon^2 x cost")
fig.tight_layout()
fig.savefig(HERE / {png!r})
'''


def plot_script(name):
    return _PLOT_TEMPLATE.format(name=name, convergence=f"{name}_convergence.csv",
                                 complexity=f"{name}_complexity.csv", levels=f"{name}_levels.csv",
                                 png=f"{name}.png")


def emit_outputs(report, out_dir):
    """Write the CSVs for ``report`` (plus the plot script for convergence and
    complexity reports); returns the paths written."""
    writers = {
        ConvergenceReport: [(write_convergence_csv, "convergence.csv")],
        ComplexityReport: [(write_complexity_csv, "complexity.csv"), (write_levels_csv, "levels.csv")],
        CdfReport: [(write_cdf_csv, "cdf.csv")],
    }
    if type(report) not in writers:
        raise InvalidInputError(f"cannot emit {type(report).__name__}")
    out = Path(out_dir)
    name = report.name
    paths = [write(report, out / f"{name}_{suffix}") for write, suffix in writers[type(report)]]
    if not isinstance(report, CdfReport):
        script = out / f"{name}_plot.py"
        script.write_text(plot_script(name), encoding="utf-8")
        paths.append(script)
    return paths
