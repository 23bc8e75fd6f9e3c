"""Sparse primal-dual interior point method.

Inequality rows get slack variables, bounds are handled with a logarithmic
barrier, and each iteration solves the symmetric KKT system with a sparse
LU factorisation.  Globalisation uses an exact-penalty merit function with
Armijo backtracking and one second-order correction.  Negative curvature is
detected with an inertia-free test on the computed step and cured by
diagonal regularisation.
"""
from __future__ import annotations

import logging
import time

import numpy as np
from scipy import sparse
from scipy.linalg import lapack
from scipy.sparse import linalg as splinalg

from ..errors import NonFiniteEvaluation
from .problem import (FEASIBLE, INFEASIBLE, MAX_ITER, NUMERICAL_FAILURE,
                      OPTIMAL, SolveResult)

log = logging.getLogger(__name__)

_TAU_MIN = 0.99
_KAPPA_EPS = 10.0
_KAPPA_SIGMA = 1e10
_ARMIJO = 1e-4
_CURV = 1e-10
_SMAX = 100.0


class _Reduced:
    """Problem in the variables ``w = (free x, inequality slacks)``."""

    def __init__(self, p):
        self.p = p
        self.fixed = p.x_lb == p.x_ub
        self.free = np.flatnonzero(~self.fixed)
        eq = p.c_lb == p.c_ub
        self.eq = np.flatnonzero(eq)
        self.ineq = np.flatnonzero(~eq)
        self.order = np.concatenate([self.eq, self.ineq]).astype(int)
        self.nx = self.free.size
        self.ns = self.ineq.size
        self.nw = self.nx + self.ns
        self.m = p.m
        self.lb = np.concatenate([p.x_lb[self.free], p.c_lb[self.ineq]])
        self.ub = np.concatenate([p.x_ub[self.free], p.c_ub[self.ineq]])
        self.has_lb = np.isfinite(self.lb)
        self.has_ub = np.isfinite(self.ub)
        self.x_base = np.where(self.fixed, p.x_lb, 0.0)
        self.c_eq = p.c_lb[self.eq]
        self.slack_block = sparse.vstack([
            sparse.csr_matrix((self.eq.size, self.ns)),
            -sparse.identity(self.ns, format="csr"),
        ]).tocsr() if self.m else sparse.csr_matrix((0, 0))

    def x_of(self, w):
        x = self.x_base.copy()
        x[self.free] = w[:self.nx]
        return x

    def residual(self, w, c):
        c = c[self.order]
        g = c.copy()
        g[:self.eq.size] -= self.c_eq
        g[self.eq.size:] -= w[self.nx:]
        return g

    def jac(self, x):
        J = sparse.csr_matrix(self.p.jacobian(x))[self.order][:, self.free]
        if self.ns:
            J = sparse.hstack([J, self.slack_block]).tocsr()
        return J

    def grad(self, x):
        g = np.asarray(self.p.gradient(x), float)
        return np.concatenate([g[self.free], np.zeros(self.ns)]), g

    def hess(self, x, y):
        yy = np.empty(self.m)
        yy[self.order] = y
        H = sparse.csr_matrix(self.p.hessian(x, yy, 1.0))[self.free][:, self.free]
        if self.ns:
            H = sparse.block_diag([H, sparse.csr_matrix((self.ns, self.ns))])
        return sparse.csr_matrix(H)

    def y_full(self, y):
        yy = np.empty(self.m)
        yy[self.order] = y
        return yy

    def push_interior(self, w, k1):
        lb, ub = self.lb, self.ub
        w = w.copy()
        both = self.has_lb & self.has_ub
        pl = np.where(self.has_lb, k1 * np.maximum(1.0, np.abs(np.where(self.has_lb, lb, 0))), 0.0)
        pu = np.where(self.has_ub, k1 * np.maximum(1.0, np.abs(np.where(self.has_ub, ub, 0))), 0.0)
        width = np.where(both, ub - lb, np.inf)
        pl = np.where(both, np.minimum(pl, k1 * width), pl)
        pu = np.where(both, np.minimum(pu, k1 * width), pu)
        w = np.where(self.has_lb, np.maximum(w, lb + pl), w)
        w = np.where(self.has_ub, np.minimum(w, ub - pu), w)
        mid = 0.5 * (np.where(both, lb, 0.0) + np.where(both, ub, 0.0))
        w = np.where(both & (lb + pl >= ub - pu), mid, w)
        return w


def _fraction_to_boundary(v, dv, tau):
    """Largest step in (0, 1] keeping ``v + a dv >= (1 - tau) v`` for v > 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def solve_ipm(p, opts, x_start=None, y_start=None, z_start=None):
    t0 = time.perf_counter()
    r = _Reduced(p)
    warm = x_start is not None
    x = p.x0.copy() if p.x0 is not None else np.zeros(p.n)
    if warm:
        x = np.asarray(x_start, float).copy()
    x = np.clip(x, p.x_lb, p.x_ub)
    mu = opts.warm_mu if warm else opts.mu_init
    k1 = 1e-10 if warm else 1e-2

    f, c = p.evaluate(x)
    s0 = c[r.ineq] if r.ns else np.zeros(0)
    w = r.push_interior(np.concatenate([x[r.free], s0]), k1)
    x = r.x_of(w)
    f, c = p.evaluate(x)
    gw, gx = r.grad(x)
    J = r.jac(x)
    lb, ub, hl, hu = r.lb, r.ub, r.has_lb, r.has_ub

    def gaps(w):
        return np.where(hl, w - lb, 1.0), np.where(hu, ub - w, 1.0)

    dl, du = gaps(w)
    zl = np.where(hl, mu / dl, 0.0)
    zu = np.where(hu, mu / du, 0.0)
    if warm and z_start is not None:
        z = np.asarray(z_start, float)[r.free]
        zl[:r.nx] = np.where(hl[:r.nx], np.maximum(np.maximum(z, 0.0), zl[:r.nx]), 0.0)
        zu[:r.nx] = np.where(hu[:r.nx], np.maximum(np.maximum(-z, 0.0), zu[:r.nx]), 0.0)
    if not warm:
        zl = np.where(hl, 1.0, 0.0)
        zu = np.where(hu, 1.0, 0.0)

    if warm and y_start is not None and r.m:
        y = np.asarray(y_start, float)[r.order]
        if r.ns:
            # slack stationarity fixes the inequality multipliers' sign part
            zl[r.nx:] = np.where(hl[r.nx:], np.maximum(zl[r.nx:], np.maximum(-y[r.eq.size:], 0)), 0)
            zu[r.nx:] = np.where(hu[r.nx:], np.maximum(zu[r.nx:], np.maximum(y[r.eq.size:], 0)), 0)
    else:
        y = _ls_multipliers(gw - zl + zu, J, r.nw, r.m)

    nu = 1.0
    delta_w_last = 0.0
    # proximal term on the primal block, raised after heavily truncated
    # steps and relaxed after full ones (a Levenberg-Marquardt style safeguard)
    prox = 0.0
    history = []
    status = MAX_ITER
    it = 0
    fails = 0

    def measures(mu_):
        dual = gw + (J.T @ y if r.m else 0.0) - zl + zu
        g = r.residual(w, c)
        sd = max(_SMAX, (np.abs(y).sum() + zl.sum() + zu.sum()) / max(1, r.m + 2 * r.nw)) / _SMAX
        sc = max(_SMAX, (zl.sum() + zu.sum()) / max(1, 2 * r.nw)) / _SMAX
        comp = 0.0
        if r.nw:
            comp = max(np.max(np.where(hl, np.abs(dl * zl - mu_), 0.0), initial=0.0),
                       np.max(np.where(hu, np.abs(du * zu - mu_), 0.0), initial=0.0))
        primal = float(np.max(np.abs(g), initial=0.0))
        return float(np.max(np.abs(dual), initial=0.0)) / sd, primal, comp / sc, g

    def barrier(w_, f_):
        dl_, du_ = gaps(w_)
        # a zero gap gives an infinite merit, which rejects the trial point
        with np.errstate(divide="ignore"):
            return f_ - mu * (np.sum(np.log(dl_[hl])) + np.sum(np.log(du_[hu])))

    while True:
        dual_err, primal_err, comp_err, g = measures(0.0)
        if primal_err <= opts.feasibility_tol and dual_err <= opts.optimality_tol \
                and comp_err <= opts.optimality_tol:
            status = OPTIMAL
            break
        if it >= opts.max_iter:
            status = FEASIBLE if primal_err <= opts.feasibility_tol else MAX_ITER
            break
        # barrier subproblem converged -> decrease mu
        while True:
            de, pe, ce, _ = measures(mu)
            if max(de, pe, ce) > _KAPPA_EPS * mu:
                break
            tol = min(opts.feasibility_tol, opts.optimality_tol)
            new_mu = max(tol / 10.0, min(opts.mu_decrease * mu, mu ** opts.mu_superlinear))
            if new_mu >= mu:
                break
            mu = new_mu
            nu = 1.0

        H = r.hess(x, y)
        if not np.all(np.isfinite(H.data)):
            raise NonFiniteEvaluation("Hessian not finite")
        sig = np.where(hl, zl / dl, 0.0) + np.where(hu, zu / du, 0.0)
        gphi = gw - np.where(hl, mu / dl, 0.0) + np.where(hu, mu / du, 0.0)
        rhs = -np.concatenate([gphi, g])

        delta_w = prox
        delta_c = 0.0
        sol = None
        dense = r.nw + r.m <= opts.dense_kkt_limit
        for _ in range(60):
            try:
                if dense:
                    lu, inertia = _factor_dense(H, sig, delta_w, J, delta_c, r.nw, r.m)
                    if inertia[2] > 0 and r.m and delta_c == 0.0:
                        raise RuntimeError("singular KKT matrix")
                    sol = lu.solve(rhs)
                    ok = inertia[0] == r.nw and inertia[1] == r.m
                else:
                    lu = _factor(H, sig, delta_w, J, delta_c, r.nw, r.m)
                    sol = lu.solve(rhs)
                    dw = sol[:r.nw]
                    curv = dw @ (H @ dw) + dw @ ((sig + delta_w) * dw)
                    ok = curv >= _CURV * (dw @ dw) or dw @ dw < 1e-30
                if not np.all(np.isfinite(sol)):
                    raise RuntimeError("non-finite KKT solution")
                if ok:
                    break
            except RuntimeError:
                # structurally singular: regularise the constraint block too
                delta_c = max(delta_c, 1e-8 * mu ** 0.25)
                if dense:
                    continue
            if delta_w <= prox:
                delta_w = max(10.0 * prox, 1e-4 if delta_w_last == 0.0 else max(1e-20, delta_w_last / 3.0))
            else:
                delta_w *= 100.0 if delta_w_last == 0.0 else 8.0
        else:
            status = NUMERICAL_FAILURE
            break
        if delta_w > prox:
            delta_w_last = delta_w
        dw = sol[:r.nw]
        y_new = sol[r.nw:]
        dy = y_new - y
        dzl = np.where(hl, mu / dl - zl - (zl / dl) * dw, 0.0)
        dzu = np.where(hu, mu / du - zu + (zu / du) * dw, 0.0)

        tau = max(_TAU_MIN, 1.0 - mu)
        a_max = min(_fraction_to_boundary(dl[hl], dw[hl], tau),
                    _fraction_to_boundary(du[hu], -dw[hu], tau))
        a_z = min(_fraction_to_boundary(zl[hl], dzl[hl], tau),
                  _fraction_to_boundary(zu[hu], dzu[hu], tau))

        if r.m:
            nu = max(nu, 1.01 * np.max(np.abs(y_new), initial=0.0) + 1e-8)
        phi0 = barrier(w, f)
        theta0 = np.abs(g).sum()
        merit0 = phi0 + nu * theta0
        dmerit = gphi @ dw - nu * theta0
        if dmerit > 0:
            dmerit = -abs(dmerit)

        alpha = a_max
        accepted = False
        tried_soc = False
        for _ in range(40):
            wt = w + alpha * dw
            trial = _try_point(p, r, wt)
            if trial is not None:
                ft, ct = trial
                mt = barrier(wt, ft) + nu * np.abs(r.residual(wt, ct)).sum()
                if mt <= merit0 + _ARMIJO * alpha * dmerit + 1e-14 * abs(merit0):
                    accepted = True
                    break
                if not tried_soc and alpha == a_max and r.m:
                    tried_soc = True
                    soc_point = _correction_sequence(p, r, lu, gphi, alpha * g, r.residual(wt, ct),
                                                     w, dl, du, tau, barrier, nu,
                                                     merit0 + _ARMIJO * alpha * dmerit, theta0)
                    if soc_point is not None:
                        wt, ft, ct, mt, dw, alpha = soc_point
                        accepted = True
                        break
            alpha *= 0.5
            if alpha * np.max(np.abs(dw), initial=0.0) < 1e-16 * (1 + np.max(np.abs(w), initial=0.0)):
                break
        it += 1
        log.debug("it %3d mu %.1e f %.6e primal %.2e dual %.2e comp %.2e alpha %.2e amax %.2e dw %.1e%s",
                  it, mu, f, primal_err, dual_err, comp_err, alpha if accepted else 0.0, a_max,
                  delta_w, "" if accepted else " rejected")
        if not accepted:
            prox = min(1e6, max(1e-4, 10.0 * prox))
            fails += 1
            delta_w_last = max(10.0 * delta_w_last, 1e-4)
            if fails > 8:
                status = INFEASIBLE if primal_err > opts.feasibility_tol * 1e3 else NUMERICAL_FAILURE
                break
            continue
        fails = 0
        if alpha < 0.1 * a_max:
            prox = min(1e6, max(1e-4, 10.0 * prox))
        elif alpha >= a_max:
            prox = prox / 10.0 if prox > 1e-8 else 0.0
        if opts.debug:
            # compared at the current penalty weight, which may grow between steps
            assert mt <= merit0 + 1e-10 * (1 + abs(merit0)), \
                "merit function increased on an accepted step"
        history.append(float(mt))

        w = wt
        f, c = ft, ct
        y = y + alpha * dy
        zl = zl + a_z * dzl
        zu = zu + a_z * dzu
        x = r.x_of(w)
        dl, du = gaps(w)
        # keep the bound multipliers near the central path
        zl = np.where(hl, np.clip(zl, mu / (_KAPPA_SIGMA * dl), _KAPPA_SIGMA * mu / dl), 0.0)
        zu = np.where(hu, np.clip(zu, mu / (_KAPPA_SIGMA * du), _KAPPA_SIGMA * mu / du), 0.0)
        gw, gx = r.grad(x)
        J = r.jac(x)

    dual_err, primal_err, comp_err, _ = measures(0.0)
    yy = r.y_full(y) if r.m else np.zeros(0)
    z = np.zeros(p.n)
    z[r.free] = zl[:r.nx] - zu[:r.nx]
    if np.any(r.fixed):
        jt = sparse.csr_matrix(p.jacobian(x)).T @ yy if r.m else 0.0
        z[r.fixed] = (gx + jt)[r.fixed]
    return SolveResult(
        status=status, x=x, objective=float(f),
        constraint_violation=p.violation(x, c), dual_infeasibility=dual_err,
        iterations=it, wall_time=time.perf_counter() - t0,
        multipliers=yy, bound_multipliers=z, merit_history=history)


def _factor(H, sig, delta_w, J, delta_c, nw, m):
    top = H + sparse.diags(sig + delta_w)
    if not m:
        return splinalg.splu(sparse.csc_matrix(top))
    corner = -delta_c * sparse.identity(m) if delta_c else sparse.csr_matrix((m, m))
    return splinalg.splu(sparse.bmat([[top, J.T], [J, corner]], format="csc"))


class _DenseLdl:
    def __init__(self, lu, piv):
        self.lu, self.piv = lu, piv

    def solve(self, b):
        x, info = lapack.dsytrs(self.lu, self.piv, b, lower=1)
        if info != 0:
            raise RuntimeError("LDL solve failed")
        return x


def _factor_dense(H, sig, delta_w, J, delta_c, nw, m):
    """Bunch-Kaufman factorisation of the KKT matrix and its inertia.

    Returns the solver and ``(n_positive, n_negative, n_zero)``.
    """
    top = (H + sparse.diags(sig + delta_w)).toarray()
    K = np.zeros((nw + m, nw + m))
    K[:nw, :nw] = top
    if m:
        Jd = J.toarray()
        K[nw:, :nw] = Jd
        K[:nw, nw:] = Jd.T
        K[nw:, nw:] = -delta_c * np.eye(m)
    lu, piv, info = lapack.dsytrf(K, lower=1)
    if info < 0:
        raise RuntimeError("LDL factorisation failed")
    # pivots below this size count as zero; the scale excludes the
    # regularisation so a large delta_w cannot hide a rank-deficient J
    scale = max(1.0, abs(H).max() if H.nnz else 0.0, abs(J).max() if m and J.nnz else 0.0)
    zero_tol = 0.0 if delta_c > 0 else 1e-13 * scale
    pos = neg = zero = 0
    k = 0
    n = nw + m
    while k < n:
        if piv[k] > 0:
            d = np.array([lu[k, k]])
            k += 1
        else:
            d = np.linalg.eigvalsh(np.array([[lu[k, k], lu[k + 1, k]], [lu[k + 1, k], lu[k + 1, k + 1]]]))
            k += 2
        pos += int(np.sum(d > zero_tol))
        neg += int(np.sum(d < -zero_tol))
        zero += int(np.sum(np.abs(d) <= zero_tol))
    return _DenseLdl(lu, piv), (pos, neg, zero)


def _correction_sequence(p, r, lu, gphi, g_scaled, g_trial, w, dl, du, tau, barrier, nu,
                         target, theta0, max_corrections=4):
    """Repeated second-order corrections for a rejected full step.

    Returns ``(w, f, c, merit, direction, alpha)`` for the first corrected
    point whose merit is below ``target``, else ``None``.
    """
    hl, hu = r.has_lb, r.has_ub
    theta_prev = np.abs(g_trial).sum()
    if theta_prev < theta0:
        return None
    c_soc = g_scaled + g_trial
    for _ in range(max_corrections):
        soc = lu.solve(-np.concatenate([gphi, c_soc]))[:r.nw]
        a_soc = min(_fraction_to_boundary(dl[hl], soc[hl], tau),
                    _fraction_to_boundary(du[hu], -soc[hu], tau))
        ws = w + a_soc * soc
        trial = _try_point(p, r, ws)
        if trial is None:
            return None
        fs, cs = trial
        gs = r.residual(ws, cs)
        theta = np.abs(gs).sum()
        ms = barrier(ws, fs) + nu * theta
        if ms <= target:
            return ws, fs, cs, ms, soc, a_soc
        if theta > 0.99 * theta_prev:
            return None
        theta_prev = theta
        c_soc = a_soc * c_soc + gs
    return None


def _try_point(p, r, w):
    x = r.x_of(w)
    try:
        f = float(p.objective(x))
        c = np.asarray(p.constraints(x), float)
    except (FloatingPointError, ValueError, ZeroDivisionError):
        return None
    if not np.isfinite(f) or not np.all(np.isfinite(c)):
        return None
    return f, c


def _ls_multipliers(grad, J, nw, m):
    """Least-squares multiplier estimate ``argmin ||grad + J^T y||``."""
    if m == 0:
        return np.zeros(0)
    K = sparse.bmat([[sparse.identity(nw), J.T], [J, -1e-10 * sparse.identity(m)]], format="csc")
    try:
        sol = splinalg.splu(K).solve(np.concatenate([-grad, np.zeros(m)]))
    except RuntimeError:
        return np.zeros(m)
    y = sol[nw:]
    if not np.all(np.isfinite(y)) or np.max(np.abs(y), initial=0.0) > 1e3:
        return np.zeros(m)
    return y
