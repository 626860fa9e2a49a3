"""Smoothed cross-seed series for external plotting.

Each seed's per-episode values are smoothed with a trailing moving average
over the last ``window`` episodes (read at the end of every iteration), and
only then aggregated across seeds into mean and standard error.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import UsageError


def read_series(path, column):
    """(iterations, values) from an episodes or metrics CSV.

    Rows of a metrics CSV count as one value each.
    """
    with Path(path).open(newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise UsageError(f"{path}: no rows")
    if column not in rows[0]:
        raise UsageError(f"{path}: no column {column!r}; have {list(rows[0])}")
    its = np.array([int(r["iteration"]) for r in rows])
    vals = np.array([float(r[column]) for r in rows])
    return its, vals


def trailing_smooth(iterations, values, window=100):
    """Mean of the last ``window`` values up to the end of each iteration."""
    if window < 1:
        raise UsageError("window must be positive")
    csum = np.concatenate([[0.0], np.cumsum(values)])
    out = {}
    for it in np.unique(iterations):
        end = int(np.searchsorted(iterations, it, side="right"))
        start = max(0, end - window)
        out[int(it)] = (csum[end] - csum[start]) / (end - start)
    return out


def aggregate(paths, column="reward", window=100):
    """Rows ``(iteration, mean, se, n)`` over the iterations present in every run.

    ``se`` is the sample standard deviation over seeds divided by sqrt(n)
    (0 for a single run). The result does not depend on the order of ``paths``.
    """
    if not paths:
        raise UsageError("no input CSVs")
    smoothed = [trailing_smooth(*read_series(p, column), window) for p in sorted(map(str, paths))]
    common = sorted(set.intersection(*(set(s) for s in smoothed)))
    rows = []
    for it in common:
        v = np.array(sorted(s[it] for s in smoothed))
        n = len(v)
        se = float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        rows.append({"iteration": it, "mean": float(v.mean()), "se": se, "n": n})
    return rows


def write_rows(rows, path):
    path = Path(path)
    if path.suffix == ".json":
        import json

        path.write_text(json.dumps(rows, indent=1) + "\n")
        return
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, ["iteration", "mean", "se", "n"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
