"""Sobol indices read directly off gPC coefficients."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import UndefinedOnWindow, ZeroVariance
from .uq import StochasticSolution

VARIANCE_THRESHOLD = 1e-12


@dataclass
class SobolReport:
    """First-order and total indices per quantity on the solution grid.

    ``first[name]`` and ``total[name]`` have shape ``(N, len(grid))``; they
    are NaN where the variance is below the threshold (``defined`` False).
    """
    grid: np.ndarray
    grid_name: str
    variables: list
    first: Dict[str, np.ndarray]
    total: Dict[str, np.ndarray]
    variance: Dict[str, np.ndarray]
    defined: Dict[str, np.ndarray]

    def require_defined(self, name):
        if not np.all(self.defined[name]):
            bad = self.grid[~self.defined[name]]
            raise ZeroVariance(f"{name}: variance below threshold at {bad.size} grid points")

    def to_csv(self, path, names=None):
        """Columns ``<grid>, S<i>_<q>, ..., S<i>T_<q>, ...``."""
        names = list(self.first) if names is None else list(names)
        n = len(self.variables)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            header = [self.grid_name]
            for q in names:
                header += [f"S{i + 1}_{q}" for i in range(n)]
                header += [f"S{i + 1}T_{q}" for i in range(n)]
            wr.writerow(header)
            for j, g in enumerate(self.grid):
                row = [repr(float(g))]
                for q in names:
                    row += [_cell(self.first[q][i, j]) for i in range(n)]
                    row += [_cell(self.total[q][i, j]) for i in range(n)]
                wr.writerow(row)

    def summary(self, windows=None):
        """Windowed rankings per quantity as a JSON-ready dict."""
        out = {}
        for q in self.first:
            win = (windows or {}).get(q)
            try:
                out[q] = [{"variable": v, "mean_first_order": s}
                          for v, s in dominant_variable(self, q, win)]
            except UndefinedOnWindow as exc:
                out[q] = {"undefined": str(exc)}
        return out

    def to_json(self, windows=None):
        return json.dumps(self.summary(windows), indent=1, sort_keys=True)


def _cell(v):
    return "" if not np.isfinite(v) else repr(float(v))


def sobol_from_gpc(sol: StochasticSolution, threshold=VARIANCE_THRESHOLD) -> SobolReport:
    """Sobol indices from the squared coefficients of each basis term.

    Points whose variance is below ``threshold`` times the squared mean
    magnitude (at least ``threshold``) are flagged undefined instead of
    divided.
    """
    idx = sol.basis.indices
    n = idx.shape[1]
    nonconst = idx.sum(axis=1) > 0
    only = [nonconst & (idx[:, i] > 0) & (idx.sum(axis=1) == idx[:, i]) for i in range(n)]
    involves = [idx[:, i] > 0 for i in range(n)]
    first, total, variance, defined = {}, {}, {}, {}
    for name, c in sol.coefficients.items():
        c2 = c ** 2
        var = c2[nonconst].sum(axis=0)
        scale = np.maximum(1.0, np.abs(c[0]) ** 2)
        ok = var > threshold * scale
        safe = np.where(ok, var, 1.0)
        s1 = np.array([c2[m].sum(axis=0) / safe for m in only])
        st = np.array([c2[m].sum(axis=0) / safe for m in involves])
        s1[:, ~ok] = np.nan
        st[:, ~ok] = np.nan
        first[name], total[name], variance[name], defined[name] = s1, st, var, ok
    return SobolReport(sol.grid, sol.grid_name, [v.id for v in sol.basis.variables],
                       first, total, variance, defined)


def dominant_variable(report: SobolReport, quantity, window=None):
    """Variables ranked by their first-order index averaged over ``window``.

    The average is the trapezoidal mean over the grid points inside
    ``window = (lo, hi)`` (the whole grid by default).  Returns a list of
    ``(variable_id, mean_index)`` in descending order.
    """
    g = report.grid
    lo, hi = (g.min(), g.max()) if window is None else window
    inside = (g >= lo) & (g <= hi)
    if not np.any(inside):
        raise UndefinedOnWindow(f"no grid points of {quantity} inside {window}")
    if not np.all(report.defined[quantity][inside]):
        raise UndefinedOnWindow(f"{quantity}: indices undefined somewhere in {window}")
    s = report.first[quantity][:, inside]
    gi = g[inside]
    if gi.size == 1 or gi[-1] == gi[0]:
        avg = s.mean(axis=1)
    else:
        avg = np.trapezoid(s, gi, axis=1) / (gi[-1] - gi[0])
    order = sorted(range(len(avg)), key=lambda i: (-avg[i], i))
    return [(report.variables[i], float(avg[i])) for i in order]
