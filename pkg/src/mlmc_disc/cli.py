"""``mlmc-disc`` command line: convergence, complexity, cdf and rates.

Exit status is 0 when every check passes, 2 when a measured quantity is out
of tolerance, and 1 on any error.
"""

import argparse
import logging
import sys

from . import harness
from .config import EXPECT_KEYS, load_specs
from .errors import ConfigError, MlmcError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TOLERANCE = 2


def _range(text):
    lo, _, hi = text.partition(":")
    return float(lo), float(hi)


def _expectation(text):
    name, _, rest = text.partition("=")
    value, _, tol = rest.partition(":")
    if name not in EXPECT_KEYS or not tol:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE:TOL with NAME in {EXPECT_KEYS}, got {text!r}")
    return name, (float(value), float(tol))


def build_parser():
    p = argparse.ArgumentParser(prog="mlmc-disc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="experiment spec file")
        sp.add_argument("--seed", type=int, help="override the file's seed")
        sp.add_argument("--threads", type=int, help="worker threads for sampling")
        sp.add_argument("--out", help="output directory (default: the file's 'out')")
        sp.add_argument("--only", action="append", metavar="NAME", help="run only these sections")

    common(sub.add_parser("convergence", help="per-level mean/variance/cost/kurtosis and fitted rates"))
    common(sub.add_parser("complexity", help="MLMC cost against epsilon"))
    cdf = sub.add_parser("cdf", help="CDF of S_T from MLMC values at spline points")
    common(cdf)
    cdf.add_argument("--method", choices=("smooth", "parity"))
    cdf.add_argument("--points", type=int)
    cdf.add_argument("--range", type=_range, metavar="LO:HI")
    rates = sub.add_parser("rates", help="fit alpha, beta, gamma to a convergence CSV")
    rates.add_argument("csv")
    rates.add_argument("--check", type=_expectation, action="append", default=[], metavar="NAME=VALUE:TOL",
                       help="e.g. beta=0.5:0.15; may be repeated")
    return p


def _specs(args, kind):
    specs = [s for s in load_specs(args.spec) if s.kind == kind]
    if args.only:
        specs = [s for s in specs if s.name in args.only]
    if not specs:
        raise ConfigError(f"no [{kind}] sections selected", None, args.spec)
    overrides = {"seed": args.seed, "threads": args.threads, "out": args.out}
    if kind == "cdf":
        overrides.update(cdf_method=args.method, points=args.points, range=args.range)
    return [s.with_overrides(**overrides) for s in specs]


def _run(args):
    reports = []
    if args.command == "rates":
        rows = harness.read_convergence_csv(args.csv)
        report = harness.report_from_rows(args.csv, rows, dict(args.check))
        print(report.summary())
        return report.passed
    for spec in _specs(args, args.command):
        if args.command == "convergence":
            new = [harness.run_convergence(spec)]
        elif args.command == "complexity":
            new = [harness.run_convergence(spec)] if spec.rates == "fitted" else []
            new.append(harness.run_complexity(spec, new[0] if new else None))
        else:
            new = [harness.run_cdf(spec)]
        for report in new:
            for path in harness.emit_outputs(report, spec.out):
                print(f"wrote {path}")
            print(report.summary())
        reports += new
    return all(r.passed for r in reports)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ok = _run(args)
    except (MlmcError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if ok else EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
