"""Experiment specification files.

A file holds one or more sections; each section is one experiment::

    # comment
    [digital_std_euler]
    kind = convergence
    estimator = standard
    scheme = euler
    levels = 2:7
    samples = 100000
    expect_beta = 0.5 +- 0.15

Errors carry the file path and line number of the offending entry.
"""

from dataclasses import dataclass, field, fields, replace
import re

from .errors import ConfigError

KINDS = ("convergence", "complexity", "cdf")
PATH_ESTIMATORS = ("standard", "smoothed", "cond_exp", "com", "split", "branch", "adaptive_h")
NESTED_ESTIMATORS = ("nested_plain", "nested_adaptive")
ESTIMATORS = PATH_ESTIMATORS + NESTED_ESTIMATORS
EXPECT_KEYS = ("alpha", "beta", "gamma", "kurtosis", "cost_slope")

_SECTION = re.compile(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]$")
_EXPECT = re.compile(r"^(\S+)\s*\+-\s*(\S+)$")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    kind: str = "convergence"
    estimator: str = "standard"
    scheme: str = "euler"
    payoff: str = "digital_call"
    strike: float = 1.0
    r: float = 0.05
    sigma: float = 0.2
    s0: float = 1.0
    maturity: float = 1.0
    n0_steps: int = 1
    levels: tuple = (2, 7)
    samples: int = 100_000
    epsilons: tuple = ()
    repeats: int = 1
    rates: str = "fitted"
    seed: int = 1
    threads: int = 1
    out: str = "results"
    n_warm: int = 1000
    n_min: int = 32
    l_max: int = 12
    block_size: int = 1 << 14
    # digital estimators
    m_splits_rule: str = "sqrt"
    c_adapt: float = 3.0
    adapt_proxy: str = "euler_strong"
    min_left: int = 2
    kernel: str = "phi"
    delta: float = 0.05
    delta_rule: str = "fixed"
    delta_scale: float = 1.0
    # nested
    k_threshold: float = 0.0
    m0: int = 16
    # cdf
    cdf_method: str = "parity"
    points: int = 17
    range: tuple = (0.6, 1.6)
    epsilon: float = 0.01
    cdf_tol: float | None = None
    # complexity: set false for accuracy-only sweeps too short to fit a cost slope
    check_cost_slope: bool = True
    # expectations: name -> (value, tolerance); empty means the built-in table
    expect: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = []
        if self.kind not in KINDS:
            problems.append(f"kind must be one of {KINDS}")
        if self.estimator not in ESTIMATORS:
            problems.append(f"estimator must be one of {ESTIMATORS}")
        lo, hi = self.levels
        if not 0 <= lo <= hi:
            problems.append("levels must be a nonempty range lo:hi with 0 <= lo <= hi")
        if self.kind == "convergence" and self.samples < 100:
            problems.append("samples must be at least 100 for convergence studies")
        if self.kind == "complexity" and len(self.epsilons) < 3:
            problems.append("complexity studies need at least 3 epsilons")
        if self.repeats < 1:
            problems.append("repeats must be at least 1")
        if self.rates not in ("fitted", "adaptive"):
            problems.append("rates must be 'fitted' or 'adaptive'")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def level_range(self):
        return range(self.levels[0], self.levels[1] + 1)

    @property
    def nested(self):
        return self.estimator in NESTED_ESTIMATORS

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _int(text):
    return int(text.replace("_", ""))


def _float_or_none(text):
    return None if text.lower() in ("none", "") else float(text)


def _pair(conv):
    def parse(text):
        parts = text.split(":")
        if len(parts) != 2:
            raise ValueError(f"expected lo:hi, got {text!r}")
        return conv(parts[0].strip()), conv(parts[1].strip())
    return parse


def _bool(text):
    v = text.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _float_list(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _expect(text):
    m = _EXPECT.match(text.strip())
    if not m:
        raise ValueError(f"expected 'value +- tolerance', got {text!r}")
    return float(m.group(1)), float(m.group(2))


_CONVERTERS = {
    "levels": _pair(_int),
    "range": _pair(float),
    "epsilons": _float_list,
    "cdf_tol": _float_or_none,
}


def _converter(f):
    if f.name in _CONVERTERS:
        return _CONVERTERS[f.name]
    if f.type in (bool, "bool"):
        return _bool
    if f.type in (int, "int"):
        return _int
    if f.type in (float, "float"):
        return float
    return str


_FIELDS = {f.name: f for f in fields(ExperimentSpec) if f.name not in ("name", "expect")}


def parse_specs(text, path="<string>"):
    """All experiment sections of a spec file, in file order."""
    sections = []
    current = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            name = m.group(1)
            if name in seen:
                raise ConfigError(f"duplicate section [{name}]", lineno, path)
            seen.add(name)
            current = {"name": name, "expect": {}, "_line": lineno}
            sections.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' or '[section]', got {line!r}", lineno, path)
        if current is None:
            raise ConfigError("entry before the first [section]", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("expect_"):
            what = key[len("expect_"):]
            if what not in EXPECT_KEYS:
                raise ConfigError(f"unknown expectation {key!r}; expected expect_<{'|'.join(EXPECT_KEYS)}>",
                                  lineno, path)
            try:
                current["expect"][what] = _expect(value)
            except ValueError as exc:
                raise ConfigError(str(exc), lineno, path) from None
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", lineno, path)
        try:
            current[key] = _converter(_FIELDS[key])(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, path) from None
    specs = []
    for sec in sections:
        line = sec.pop("_line")
        try:
            specs.append(ExperimentSpec(**sec))
        except ConfigError as exc:
            raise ConfigError(f"[{sec['name']}]: {exc.args[0]}", line, path) from None
    if not specs:
        raise ConfigError("no [section] found", None, path)
    return specs


def load_specs(path):
    with open(path, encoding="utf-8") as fh:
        return parse_specs(fh.read(), str(path))


def format_spec(spec):
    """Spec file text for ``spec`` listing every field; parses back to an equal spec."""
    lines = [f"[{spec.name}]"]
    for f in fields(spec):
        if f.name in ("name", "expect"):
            continue
        v = getattr(spec, f.name)
        if f.name in ("levels", "range"):
            v = f"{v[0]}:{v[1]}"
        elif f.name == "epsilons":
            v = ", ".join(repr(e) for e in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    for k, (v, tol) in spec.expect.items():
        lines.append(f"expect_{k} = {v!r} +- {tol!r}")
    return "\n".join(lines) + "\n"
