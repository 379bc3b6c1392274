"""Regenerate the CLI fixture: a small grouped design and its alpha = 0 oracle fit.

Run from the repository root: ``python tests/fixtures/make_fixture.py``.
"""

import csv
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))
from oracles import group_lasso_fista  # noqa: E402

LAMBDA = 0.1

rng = np.random.default_rng(2024)
n = 30
names = ["a1", "b1", "a2", "c1", "b2", "c2", "c3"]
groups = ["A", "B", "A", "C", "B", "C", "C"]
X = rng.standard_normal((n, len(names)))
truth = np.array([1.5, 0.0, -1.0, 0.5, 0.0, 0.8, 0.0])
y = X @ truth + 0.5 * rng.standard_normal(n)

with open(HERE / "design.csv", "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(names + ["y"])
    for row, target in zip(X, y):
        w.writerow([f"{v:.12g}" for v in row] + [f"{target:.12g}"])
with open(HERE / "groups.csv", "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["column", "group"])
    w.writerows(zip(names, groups))

# the oracle works on the values as written, in grouped column order
X = np.loadtxt(HERE / "design.csv", delimiter=",", skiprows=1)
y = X[:, -1]
order = [0, 2, 1, 4, 3, 5, 6]
sizes = [2, 2, 3]
beta = group_lasso_fista(X[:, order], y, sizes, np.sqrt(sizes), LAMBDA)
coef = np.empty(len(names))
coef[order] = beta
with open(HERE / "alpha0_lambda0.1.csv", "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["column", "group", "coefficient"])
    for name, grp, c in zip(names, groups, coef):
        w.writerow([name, grp, f"{c:.12g}"])
