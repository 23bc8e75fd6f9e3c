"""Nonlinear programming backend: problem contract, solvers and diagnostics."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from ..errors import LayoutMismatch
from .auglag import solve_auglag
from .ipm import solve_ipm
from .problem import (FEASIBLE, INFEASIBLE, MAX_ITER, NUMERICAL_FAILURE, OPTIMAL,
                      STATUSES, NlpProblem, SolveOptions, SolveResult, compose_blocks)

__all__ = [
    "NlpProblem", "SolveOptions", "SolveResult", "KktReport", "compose_blocks",
    "solve", "check_kkt", "dump_problem", "read_dump", "OPTIMAL", "FEASIBLE",
    "MAX_ITER", "INFEASIBLE", "NUMERICAL_FAILURE", "STATUSES",
]

_RANK = {OPTIMAL: 0, FEASIBLE: 1, MAX_ITER: 2, INFEASIBLE: 3, NUMERICAL_FAILURE: 4}


def _warm_parts(p, ws):
    if ws is None:
        return None, None, None
    if isinstance(ws, SolveResult):
        x, y, z = ws.x, ws.multipliers, ws.bound_multipliers
    else:
        x, y, z = ws, None, None
    x = np.asarray(x, float)
    if x.shape != (p.n,):
        raise LayoutMismatch(f"warm start has shape {x.shape}, expected ({p.n},)")
    if y is not None and np.shape(y) != (p.m,):
        raise LayoutMismatch("warm-start multipliers do not match the constraint count")
    return x, y, z


def _split_warm(ws, v, c):
    if ws is None:
        return None
    if isinstance(ws, SolveResult):
        return replace(ws, x=ws.x[v], multipliers=ws.multipliers[c],
                       bound_multipliers=ws.bound_multipliers[v], block_results=None)
    return np.asarray(ws)[v]


def solve(p: NlpProblem, opts: SolveOptions | None = None) -> SolveResult:
    """Solve ``p``; block-separable problems are solved one block at a time.

    Blocks run on a pool of ``opts.workers`` threads and are merged in block
    order, so the result does not depend on the worker count.
    """
    opts = opts or SolveOptions()
    if p.blocks:
        return _solve_blocks(p, opts)
    x, y, z = _warm_parts(p, opts.warm_start)
    if opts.method == "ipm":
        if p.hessian is None:
            raise LayoutMismatch("the interior point method needs a hessian callback")
        return solve_ipm(p, opts, x, y, z)
    return solve_auglag(p, opts, x, y)


def _solve_blocks(p, opts):
    t0 = time.perf_counter()
    if opts.warm_start is not None:
        _warm_parts(p, opts.warm_start)
    jobs = []
    for prob, v, c, _ in p.blocks:
        jobs.append((prob, replace(opts, warm_start=_split_warm(opts.warm_start, v, c))))
    if opts.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            results = list(pool.map(lambda j: solve(*j), jobs))
    else:
        results = [solve(*j) for j in jobs]
    x = np.concatenate([r.x for r in results])
    status = max((r.status for r in results), key=_RANK.get)
    return SolveResult(
        status=status, x=x, objective=float(p.objective(x)),
        constraint_violation=max((r.constraint_violation for r in results), default=0.0),
        dual_infeasibility=max((r.dual_infeasibility for r in results), default=0.0),
        iterations=max((r.iterations for r in results), default=0),
        wall_time=time.perf_counter() - t0,
        multipliers=np.concatenate([r.multipliers for r in results]),
        bound_multipliers=np.concatenate([r.bound_multipliers for r in results]),
        block_results=results)


@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float
    tol: float

    @property
    def ok(self):
        return max(self.stationarity, self.primal, self.dual, self.complementarity) <= self.tol


def check_kkt(p: NlpProblem, point, multipliers=None, tol=1e-8) -> KktReport:
    """First-order optimality residuals at ``point``.

    Parameters
    ----------
    multipliers : tuple (y, z), optional
        Constraint multipliers ``y`` and bound multipliers ``z`` with the
        convention ``grad f + J^T y - z = 0``; ``y_i < 0`` marks an active
        lower bound on row ``i`` and ``z_j > 0`` an active lower bound on
        variable ``j``.  Defaults to zeros.
    """
    x = p.check_point(point)
    if multipliers is None:
        y, z = np.zeros(p.m), np.zeros(p.n)
    else:
        y, z = multipliers
        y = np.zeros(p.m) if y is None else np.asarray(y, float)
        z = np.zeros(p.n) if z is None else np.asarray(z, float)
    if y.shape != (p.m,) or z.shape != (p.n,):
        raise LayoutMismatch("multiplier dimensions do not match the problem")
    g = np.asarray(p.gradient(x), float)
    c = np.asarray(p.constraints(x), float)
    r = g - z
    if p.m:
        r = r + sparse.csr_matrix(p.jacobian(x)).T @ y
    stat = float(np.max(np.abs(r), initial=0.0))
    primal = p.violation(x, c)

    def sided(mult, val, lo, hi):
        # sign feasibility and complementarity for one family of multipliers
        neg = np.maximum(-mult, 0.0)  # active lower side
        pos = np.maximum(mult, 0.0)   # active upper side
        dual = max(float(np.max(np.where(np.isfinite(lo), 0.0, neg), initial=0.0)),
                   float(np.max(np.where(np.isfinite(hi), 0.0, pos), initial=0.0)))
        gl = np.where(np.isfinite(lo), np.abs(val - lo), 0.0)
        gu = np.where(np.isfinite(hi), np.abs(hi - val), 0.0)
        comp = max(float(np.max(neg * gl, initial=0.0)), float(np.max(pos * gu, initial=0.0)))
        return dual, comp

    d1, c1 = sided(y, c, p.c_lb, p.c_ub)
    d2, c2 = sided(-z, x, p.x_lb, p.x_ub)
    return KktReport(stat, primal, max(d1, d2), max(c1, c2), tol)


def dump_problem(p: NlpProblem, path, x=None):
    """Write the sparsity structure and bounds of ``p`` as plain text.

    Format::

        NLPDUMP 1
        n <n> m <m> jac_nnz <k>
        [x_bounds]        n lines "lb ub"
        [c_bounds]        m lines "lb ub"
        [jacobian_coo]    k lines "row col value" (evaluated at x or x0)
    """
    x = p.x0 if x is None else np.asarray(x, float)
    if x is None:
        x = np.clip(np.zeros(p.n), p.x_lb, p.x_ub)
    J = sparse.coo_matrix(p.jacobian(x)) if p.m else sparse.coo_matrix((0, p.n))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("NLPDUMP 1\n")
        fh.write(f"n {p.n} m {p.m} jac_nnz {J.nnz}\n")
        fh.write("[x_bounds]\n")
        for lo, hi in zip(p.x_lb, p.x_ub):
            fh.write(f"{float(lo)!r} {float(hi)!r}\n")
        fh.write("[c_bounds]\n")
        for lo, hi in zip(p.c_lb, p.c_ub):
            fh.write(f"{float(lo)!r} {float(hi)!r}\n")
        fh.write("[jacobian_coo]\n")
        for i, j, v in zip(J.row, J.col, J.data):
            fh.write(f"{i} {j} {float(v)!r}\n")


def read_dump(path):
    """Parse a file written by :func:`dump_problem`."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if lines[0] != "NLPDUMP 1":
        raise ValueError("not an NLP dump")
    tok = lines[1].split()
    n, m, nnz = int(tok[1]), int(tok[3]), int(tok[5])
    xb = np.array([list(map(float, s.split())) for s in lines[3:3 + n]]).reshape(n, 2)
    cb = np.array([list(map(float, s.split())) for s in lines[4 + n:4 + n + m]]).reshape(m, 2)
    rows = [s.split() for s in lines[5 + n + m:5 + n + m + nnz]]
    coo = sparse.coo_matrix(
        ([float(r[2]) for r in rows], ([int(r[0]) for r in rows], [int(r[1]) for r in rows])),
        shape=(m, n))
    return {"n": n, "m": m, "x_bounds": xb, "c_bounds": cb, "jacobian": coo}
