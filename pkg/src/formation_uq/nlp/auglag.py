"""Bound-constrained augmented Lagrangian method with an L-BFGS-B inner solve.

General constraints ``c_lb <= c(x) <= c_ub`` are handled through the
projected residual ``r = c + y/rho - P(c + y/rho)``, where ``P`` projects onto
the constraint box.  Equality rows are the special case of a degenerate box.
"""
from __future__ import annotations

import time

import numpy as np
from scipy import optimize, sparse

from .problem import FEASIBLE, MAX_ITER, NUMERICAL_FAILURE, OPTIMAL, SolveResult


def _projected_gradient_norm(x, g, lb, ub):
    xp = np.clip(x - g, lb, ub)
    return float(np.max(np.abs(x - xp), initial=0.0))


def _complementarity(y, c, lo, hi):
    gl = np.where(np.isfinite(lo), c - lo, 0.0)
    gu = np.where(np.isfinite(hi), hi - c, 0.0)
    return float(np.max(np.maximum(-y, 0) * np.abs(gl) + np.maximum(y, 0) * np.abs(gu), initial=0.0))


def solve_auglag(p, opts, x_start=None, y_start=None):
    t0 = time.perf_counter()
    x = p.x0.copy() if p.x0 is not None else np.zeros(p.n)
    if x_start is not None:
        x = np.asarray(x_start, float).copy()
    x = np.clip(x, p.x_lb, p.x_ub)
    p.evaluate(x)
    m = p.m
    y = np.zeros(m) if y_start is None else np.asarray(y_start, float).copy()
    rho = opts.penalty_init
    bounds = list(zip(np.where(np.isfinite(p.x_lb), p.x_lb, None),
                      np.where(np.isfinite(p.x_ub), p.x_ub, None)))
    omega, eta = 1.0 / rho, 1.0 / rho ** 0.1
    history = []
    status = MAX_ITER
    outer = 0
    total_inner = 0

    def shifted(x_, y_, rho_):
        c = np.asarray(p.constraints(x_), float)
        v = c + y_ / rho_
        return c, v - np.clip(v, p.c_lb, p.c_ub)

    def lagrangian(x_, y_, rho_):
        f = float(p.objective(x_))
        g = np.asarray(p.gradient(x_), float)
        if m:
            _, resid = shifted(x_, y_, rho_)
            f += 0.5 * rho_ * resid @ resid - 0.5 * (y_ @ y_) / rho_
            g = g + sparse.csr_matrix(p.jacobian(x_)).T @ (rho_ * resid)
        return f, g

    while outer < opts.max_iter:
        outer += 1
        res = optimize.minimize(
            lagrangian, x, args=(y, rho), jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 5000, "gtol": max(omega, 0.1 * opts.optimality_tol),
                     "ftol": 1e-16, "maxcor": 20})
        total_inner += res.nit
        if not np.all(np.isfinite(res.x)):
            status = NUMERICAL_FAILURE
            break
        x = res.x
        c, resid = shifted(x, y, rho)
        feas = p.violation(x, c)
        history.append(float(res.fun))
        if feas <= max(eta, opts.feasibility_tol):
            y = rho * resid if m else y
            omega = max(omega / rho, 0.1 * opts.optimality_tol)
            eta = max(eta / rho ** 0.9, 0.1 * opts.feasibility_tol)
        else:
            rho = min(rho * opts.penalty_growth, opts.penalty_max)
            omega = max(1.0 / rho, 0.1 * opts.optimality_tol)
            eta = max(1.0 / rho ** 0.1, 0.1 * opts.feasibility_tol)
        g = np.asarray(p.gradient(x), float)
        if m:
            g = g + sparse.csr_matrix(p.jacobian(x)).T @ y
        dual = _projected_gradient_norm(x, g, p.x_lb, p.x_ub)
        comp = _complementarity(y, c, p.c_lb, p.c_ub)
        if feas <= opts.feasibility_tol and max(dual, comp) <= opts.optimality_tol:
            status = OPTIMAL
            break
        if rho >= opts.penalty_max and feas > opts.feasibility_tol:
            status = NUMERICAL_FAILURE
            break
    c = np.asarray(p.constraints(x), float)
    feas = p.violation(x, c)
    g = np.asarray(p.gradient(x), float)
    if m:
        g = g + sparse.csr_matrix(p.jacobian(x)).T @ y
    dual = _projected_gradient_norm(x, g, p.x_lb, p.x_ub)
    if status == MAX_ITER and feas <= opts.feasibility_tol:
        status = FEASIBLE
    # bound multipliers recovered from stationarity on the active set
    z = np.where((x <= p.x_lb) | (x >= p.x_ub), g, 0.0)
    return SolveResult(
        status=status, x=x, objective=float(p.objective(x)), constraint_violation=feas,
        dual_infeasibility=dual, iterations=total_inner, wall_time=time.perf_counter() - t0,
        multipliers=y, bound_multipliers=z, merit_history=history)
