import csv
import math

import numpy as np
import pytest
from scipy.special import ndtr

from mlmc_disc import harness
from mlmc_disc.config import ExperimentSpec
from mlmc_disc.core import LevelSummary
from mlmc_disc.errors import InvalidInputError

SMALL = dict(levels=(1, 4), samples=2000, out="unused")


def test_expected_table_and_overrides():
    spec = ExperimentSpec("x", estimator="cond_exp", scheme="milstein")
    assert harness.expected_rates(spec)["beta"] == (1.5, 0.2)
    spec = ExperimentSpec("x", estimator="cond_exp", scheme="milstein", expect={"beta": (1.4, 0.1)})
    assert harness.expected_rates(spec)["beta"] == (1.4, 0.1)
    assert harness.expected_rates(ExperimentSpec("x", estimator="smoothed")) == {}
    assert harness.expected_rates(ExperimentSpec("x", payoff="call"))["beta"] == (1.0, 0.2)
    assert harness.expected_rates(ExperimentSpec("x", estimator="nested_plain"))["beta"] == (0.5, 0.15)


def test_oracle_values():
    assert harness.oracle_value(ExperimentSpec("x")) == pytest.approx(float(ndtr(0.15)), abs=1e-15)
    assert harness.oracle_value(ExperimentSpec("x", estimator="nested_plain", k_threshold=0.3)) == pytest.approx(
        float(ndtr(-0.3)))
    assert harness.oracle_value(ExperimentSpec("x", payoff="custom")) is None


def test_check_modes():
    assert harness.Check("beta", 1.1, 1.0, 0.15).passed
    assert not harness.Check("beta", 1.2, 1.0, 0.15).passed
    assert not harness.Check("beta", math.nan, 1.0, 0.15).passed
    assert harness.Check("err", 2.0, 3.0, 0.0, mode="max").passed
    assert "FAIL" in harness.Check("err", 4.0, 3.0, 0.0, mode="max").describe()


def test_report_from_exact_rows():
    rows = [LevelSummary(ell, 100, 2.0 ** -ell, 2.0 ** (-1.5 * ell), 2.0 ** ell, 2.0 ** (0.5 * ell))
            for ell in range(2, 7)]
    r = harness.report_from_rows("x", rows, {"beta": (1.5, 0.01), "kurtosis": (0.5, 0.01), "gamma": (2.0, 0.1)})
    assert r.alpha == pytest.approx(1.0) and r.beta == pytest.approx(1.5) and r.gamma == pytest.approx(1.0)
    assert r.kurtosis_slope == pytest.approx(0.5)
    assert [c.passed for c in r.checks] == [True, True, False]
    assert not r.passed


def test_kurtosis_slope_ignores_nan():
    assert harness.kurtosis_slope([1, 2, 3], [2.0, math.nan, 8.0]) == pytest.approx(1.0)
    assert math.isnan(harness.kurtosis_slope([1, 2], [math.nan, 1.0]))


@pytest.mark.parametrize("estimator, scheme", [
    ("standard", "euler"), ("smoothed", "milstein"), ("cond_exp", "milstein"), ("com", "milstein"),
    ("split", "milstein"), ("branch", "euler"), ("adaptive_h", "euler"), ("nested_plain", "euler"),
    ("nested_adaptive", "euler"),
])
def test_run_convergence_every_estimator(estimator, scheme):
    spec = ExperimentSpec("x", estimator=estimator, scheme=scheme, m0=4, **SMALL)
    r = harness.run_convergence(spec)
    assert [row.level for row in r.rows] == [1, 2, 3, 4]
    assert all(row.n == 2000 for row in r.rows)
    assert math.isfinite(r.beta)


def test_convergence_deterministic_and_thread_invariant():
    spec = ExperimentSpec("x", estimator="cond_exp", scheme="milstein", block_size=300, **SMALL)
    a = harness.run_convergence(spec)
    b = harness.run_convergence(spec, threads=3)
    assert a.rows == b.rows
    c = harness.run_convergence(spec.with_overrides(seed=2))
    assert a.rows != c.rows


def test_csv_round_trip(tmp_path):
    spec = ExperimentSpec("x", estimator="standard", **SMALL)
    r = harness.run_convergence(spec)
    path = harness.write_convergence_csv(r, tmp_path / "c.csv")
    back = harness.read_convergence_csv(path)
    assert back == r.rows
    r2 = harness.report_from_rows("x", back, r.expected)
    assert r2.rates == r.rates
    assert len(path.read_text().splitlines()) == 1 + len(r.rows)


def test_empty_report_header_only(tmp_path):
    empty = harness.report_from_rows("e", [], {})
    path = harness.write_convergence_csv(empty, tmp_path / "e.csv")
    assert path.read_text() == ",".join(harness.CONVERGENCE_COLUMNS) + "\n"
    assert harness.read_convergence_csv(path) == []
    comp = harness.ComplexityReport("e", [], math.nan, (None, None, None), {})
    p2 = harness.write_complexity_csv(comp, tmp_path / "ce.csv")
    assert p2.read_text() == ",".join(harness.COMPLEXITY_COLUMNS) + "\n"


def test_read_rejects_wrong_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInputError):
        harness.read_convergence_csv(p)


def test_run_complexity_adaptive_rates():
    spec = ExperimentSpec("x", kind="complexity", estimator="cond_exp", scheme="milstein", n0_steps=4,
                          epsilons=(0.04, 0.02, 0.01), rates="adaptive", repeats=2, n_warm=200, n_min=8)
    r = harness.run_complexity(spec)
    assert len(r.rows) == 6
    assert {row.repeat for row in r.rows} == {0, 1}
    eps, costs = r.mean_costs()
    assert eps == [0.04, 0.02, 0.01] and costs[0] < costs[-1]
    assert r.cost_slope == pytest.approx(harness.cost_slope(eps, costs))
    names = [c.name for c in r.checks]
    assert "cost_slope" in names and "max abs_error/epsilon" in names
    assert all(row.abs_error <= 3 * row.epsilon for row in r.rows)
    spec2 = spec.with_overrides(check_cost_slope=False)
    assert "cost_slope" not in [c.name for c in harness.run_complexity(spec2).checks]


def test_run_complexity_fitted_rates_use_calibration():
    spec = ExperimentSpec("x", kind="complexity", estimator="standard", epsilons=(0.04, 0.02, 0.01),
                          levels=(1, 5), samples=4000, n_warm=200)
    cal = harness.run_convergence(spec)
    r = harness.run_complexity(spec, cal)
    assert r.rates_used == (max(0.5, cal.alpha), cal.beta, cal.gamma)


def test_run_cdf_both_methods():
    for method, tol in (("parity", 0.05), ("smooth", None)):
        spec = ExperimentSpec("x", kind="cdf", cdf_method=method, points=9, epsilon=0.02, cdf_tol=tol,
                              kernel="phi_a2zero", delta_rule="eps_quarter", delta_scale=0.25, scheme="euler")
        r = harness.run_cdf(spec)
        assert r.sup_error < 0.1
        assert r.passed
        assert len(r.checks) == (1 if tol else 0)


def test_run_cdf_rejects_nested():
    with pytest.raises(InvalidInputError):
        harness.run_cdf(ExperimentSpec("x", kind="cdf", estimator="nested_plain"))


def test_emit_outputs(tmp_path):
    spec = ExperimentSpec("demo", estimator="standard", **SMALL)
    paths = harness.emit_outputs(harness.run_convergence(spec), tmp_path)
    assert [p.name for p in paths] == ["demo_convergence.csv", "demo_plot.py"]
    comp_spec = ExperimentSpec("demo", kind="complexity", estimator="standard", epsilons=(0.04, 0.02, 0.01),
                               rates="adaptive", n_warm=200)
    paths += harness.emit_outputs(harness.run_complexity(comp_spec), tmp_path)
    with open(tmp_path / "demo_levels.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) == set(harness.LEVELS_COLUMNS)
    compile((tmp_path / "demo_plot.py").read_text(), "demo_plot.py", "exec")
    with pytest.raises(InvalidInputError):
        harness.emit_outputs(object(), tmp_path)


def test_plot_script_runs(tmp_path):
    pytest.importorskip("matplotlib")
    import runpy
    spec = ExperimentSpec("demo", estimator="standard", **SMALL)
    harness.emit_outputs(harness.run_convergence(spec), tmp_path)
    runpy.run_path(str(tmp_path / "demo_plot.py"))
    assert (tmp_path / "demo.png").stat().st_size > 0


def test_write_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    spec = ExperimentSpec("x", estimator="standard", **SMALL)
    with pytest.raises(OSError, match="cannot write"):
        harness.emit_outputs(harness.run_convergence(spec), blocker / "sub")
