"""Diagnostic plots for experiment 'digital_std_milstein'; run with python."""
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
        return [{k: float(v) if v else math.nan for k, v in row.items()} for row in csv.DictReader(fh)]


conv = read('digital_std_milstein_convergence.csv')
comp = read('digital_std_milstein_complexity.csv')
lev = read('digital_std_milstein_levels.csv')
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
    for eps in sorted({r["epsilon"] for r in lev}, reverse=True):
        rows = [r for r in lev if r["epsilon"] == eps and r["repeat"] == 0]
        ax[1, 0].semilogy([r["level"] for r in rows], [r["n"] for r in rows], "o-", label=f"eps={eps:g}")
    ax[1, 0].set_xlabel("level")
    ax[1, 0].set_ylabel("N_l")
    ax[1, 0].legend()
if comp:
    eps = sorted({r["epsilon"] for r in comp})
    cost = [sum(r["total_cost"] for r in comp if r["epsilon"] == e) / sum(1 for r in comp if r["epsilon"] == e)
            for e in eps]
    ax[1, 1].loglog(eps, [e * e * c for e, c in zip(eps, cost)], "o-")
    ax[1, 1].set_xlabel("epsilon")
    ax[1, 1].set_ylabel("epsilon^2 x cost")
fig.tight_layout()
fig.savefig(HERE / 'digital_std_milstein.png')
