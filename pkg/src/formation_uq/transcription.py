"""Multiphase Legendre-Gauss-Radau transcription of switched optimal control.

Each vehicle's trajectory is split into phases joined at knot times.  Interior
knots are shared by all vehicles, so formation phases are flown over the same
time window and the collocation nodes of partners coincide in time.  States
are stored at the ``n`` Radau nodes plus the phase end point; controls at the
Radau nodes only.

Constraint rows are affine in the decision vector except for "node groups":
small vectorised functions of a few variables evaluated at many nodes.  Their
analytic Jacobians are supplied and second derivatives are obtained by
complex-step differentiation of those Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre
from scipy import sparse

from .errors import DegenerateGrid, InconsistentInstanceTemplates
from .mission import MissionSpec, encode_logical_constraints
from .model import (GRAVITY, WindField, chord_squared, cruise_dynamics_jacobian,
                    great_circle_points, lift_balance, orthodromic_distance)
from .nlp import NlpProblem, compose_blocks

_CSTEP = 1e-30


# --------------------------------------------------------------------------
# LGR grid
# --------------------------------------------------------------------------
def lgr_nodes(n):
    """Radau nodes on [-1, 1) including -1 and their quadrature weights."""
    if n < 1:
        raise DegenerateGrid("need at least one node")
    if n == 1:
        return np.array([-1.0]), np.array([2.0])
    c = np.zeros(n + 1)
    c[n - 1] = 1.0
    c[n] = 1.0
    x = np.sort(np.real(legendre.legroots(c)))
    x[0] = -1.0
    # polish the interior roots with Newton on P_{n-1} + P_n
    dc = legendre.legder(c)
    for _ in range(3):
        x[1:] -= legendre.legval(x[1:], c) / legendre.legval(x[1:], dc)
    pn1 = legendre.legval(x, np.eye(n)[n - 1])
    w = (1.0 - x) / (n * pn1) ** 2
    w[0] = 2.0 / n ** 2
    return x, w


def lagrange_derivative_matrix(points):
    """``D[i, j] = l_j'(points[i])`` for the Lagrange basis on ``points``."""
    x = np.asarray(points, float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / diff.prod(axis=1)
    D = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@dataclass(frozen=True)
class PhaseSpec:
    n_nodes: int = 25
    min_duration: float = 60.0


@dataclass(frozen=True)
class PhaseGrid:
    phases: tuple
    nodes: tuple
    weights: tuple
    diff: tuple

    def tau(self, k):
        """Radau nodes of phase ``k`` plus the closing point ``+1``."""
        return np.append(self.nodes[k], 1.0)


def build_grid(phase_cfg) -> PhaseGrid:
    """LGR nodes, weights and differentiation matrices per phase.

    Parameters
    ----------
    phase_cfg : sequence of int, dict or PhaseSpec
        Node count per phase, optionally with ``min_duration`` [s].
    """
    specs = []
    for cfg in phase_cfg:
        if isinstance(cfg, PhaseSpec):
            spec = cfg
        elif isinstance(cfg, dict):
            spec = PhaseSpec(**cfg)
        else:
            spec = PhaseSpec(int(cfg))
        if spec.n_nodes < 3:
            raise DegenerateGrid(f"phase needs at least 3 nodes, got {spec.n_nodes}")
        if not spec.min_duration > 0:
            raise DegenerateGrid("phase minimum duration must be positive")
        specs.append(spec)
    if not specs:
        raise DegenerateGrid("no phases")
    nodes, weights, diff = [], [], []
    for s in specs:
        x, w = lgr_nodes(s.n_nodes)
        nodes.append(x)
        weights.append(w)
        diff.append(lagrange_derivative_matrix(np.append(x, 1.0))[:-1])
    return PhaseGrid(tuple(specs), tuple(nodes), tuple(weights), tuple(diff))


# --------------------------------------------------------------------------
# sparse NLP assembly
# --------------------------------------------------------------------------
@dataclass
class NodeGroup:
    """Rows ``rows[k, :]`` receive ``fn(x[idx[k, :]])`` for every node ``k``.

    ``fn(z)`` maps ``(K, p)`` inputs to ``(K, r)`` values and ``(K, r, p)``
    Jacobians and must accept complex input.
    """

    idx: np.ndarray
    rows: np.ndarray
    fn: Callable


class ProblemBuilder:
    def __init__(self):
        self.lb, self.ub, self.guess = [], [], []
        self.n = 0
        self.m = 0
        self.c_lb, self.c_ub = [], []
        self.lin_r, self.lin_c, self.lin_v = [], [], []
        self.groups = []
        self.obj = {}
        self.obj_const = 0.0
        self.quad = []

    def var(self, shape, lb, ub, guess=0.0):
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.lb.append(np.broadcast_to(np.asarray(lb, float), shape).ravel())
        self.ub.append(np.broadcast_to(np.asarray(ub, float), shape).ravel())
        self.guess.append(np.broadcast_to(np.asarray(guess, float), shape).ravel())
        return idx

    def rows(self, shape, lb, ub):
        size = int(np.prod(shape))
        idx = np.arange(self.m, self.m + size).reshape(shape)
        self.m += size
        self.c_lb.append(np.broadcast_to(np.asarray(lb, float), shape).ravel())
        self.c_ub.append(np.broadcast_to(np.asarray(ub, float), shape).ravel())
        return idx

    def linear(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols),
                                               np.asarray(vals, float))
        self.lin_r.append(rows.ravel())
        self.lin_c.append(cols.ravel())
        self.lin_v.append(vals.ravel())

    def group(self, idx, rows, fn):
        self.groups.append(NodeGroup(np.atleast_2d(idx), np.atleast_2d(rows), fn))

    def cost(self, index, coeff):
        self.obj[int(index)] = self.obj.get(int(index), 0.0) + float(coeff)

    def smoothing(self, idx, weight):
        """Add ``weight * sum((x[idx[i+1]] - x[idx[i]])**2)`` to the objective."""
        idx = np.asarray(idx).ravel()
        self.quad.append((idx, float(weight)))

    def build(self, name="ocp", layout=None):
        n, m = self.n, self.m
        x_lb = np.concatenate(self.lb) if self.lb else np.zeros(0)
        x_ub = np.concatenate(self.ub) if self.ub else np.zeros(0)
        x0 = np.concatenate(self.guess) if self.guess else np.zeros(0)
        c_lb = np.concatenate(self.c_lb) if self.c_lb else np.zeros(0)
        c_ub = np.concatenate(self.c_ub) if self.c_ub else np.zeros(0)
        A = sparse.csr_matrix(
            (np.concatenate(self.lin_v) if self.lin_v else np.zeros(0),
             (np.concatenate(self.lin_r) if self.lin_r else np.zeros(0, int),
              np.concatenate(self.lin_c) if self.lin_c else np.zeros(0, int))),
            shape=(m, n))
        g = np.zeros(n)
        for i, v in self.obj.items():
            g[i] += v
        const = self.obj_const
        groups = list(self.groups)
        Q = sparse.csr_matrix((n, n))
        for idx, wgt in self.quad:
            k = idx.size - 1
            Dm = sparse.csr_matrix((np.concatenate([-np.ones(k), np.ones(k)]),
                                    (np.concatenate([np.arange(k), np.arange(k)]),
                                     np.concatenate([idx[:-1], idx[1:]]))), shape=(k, n))
            Q = Q + 2.0 * wgt * (Dm.T @ Dm)
        Q = Q.tocsr()

        jr = [A.tocoo().row]
        jc = [A.tocoo().col]
        hr, hc = [], []
        for G in groups:
            K, p = G.idx.shape
            r = G.rows.shape[1]
            jr.append(np.repeat(G.rows[:, :, None], p, axis=2).ravel())
            jc.append(np.repeat(G.idx[:, None, :], r, axis=1).ravel())
            hr.append(np.repeat(G.idx[:, :, None], p, axis=2).ravel())
            hc.append(np.repeat(G.idx[:, None, :], p, axis=1).ravel())
        jr = np.concatenate(jr)
        jc = np.concatenate(jc)
        hr = np.concatenate(hr) if hr else np.zeros(0, int)
        hc = np.concatenate(hc) if hc else np.zeros(0, int)
        a_data = A.tocoo().data

        def constraints(x):
            c = A @ x
            for G in groups:
                val, _ = G.fn(x[G.idx])
                np.add.at(c, G.rows, val)
            return c

        def jacobian(x):
            data = [a_data]
            for G in groups:
                _, jac = G.fn(x[G.idx])
                data.append(np.real(jac).ravel())
            return sparse.csr_matrix((np.concatenate(data), (jr, jc)), shape=(m, n))

        def hessian(x, y, obj_factor=1.0):
            data = []
            for G in groups:
                z = x[G.idx]
                K, p = z.shape
                yk = y[G.rows]  # (K, r)
                H = np.empty((K, p, p))
                for j in range(p):
                    zc = z.astype(complex)
                    zc[:, j] += 1j * _CSTEP
                    _, jac = G.fn(zc)
                    # d/dz_j of sum_r y_r dF_r/dz_i
                    H[:, :, j] = np.einsum("kr,kri->ki", yk, jac.imag) / _CSTEP
                data.append((0.5 * (H + H.transpose(0, 2, 1))).ravel())
            d = np.concatenate(data) if data else np.zeros(0)
            return sparse.csr_matrix((d, (hr, hc)), shape=(n, n)) + obj_factor * Q

        return NlpProblem(
            n=n, objective=lambda x: float(g @ x + 0.5 * x @ (Q @ x) + const),
            gradient=lambda x: g + Q @ x,
            x_lb=x_lb, x_ub=x_ub, constraints=constraints, jacobian=jacobian,
            hessian=hessian, c_lb=c_lb, c_ub=c_ub, x0=np.clip(x0, x_lb, x_ub),
            layout=layout or {}, name=name)


# --------------------------------------------------------------------------
# generic multiphase vehicle
# --------------------------------------------------------------------------
@dataclass
class PhaseVars:
    X: np.ndarray  # (n + 1, nx) variable indices
    U: np.ndarray  # (n, nu)
    mode: int      # index of the mode variable (possibly a fixed zero)
    t0: int
    t1: int


def _phase_time_vars(b, grid, t_start, t_end, knot_vars):
    """Start/end time variable index of every phase for one vehicle."""
    K = len(grid.phases)
    bounds = []
    for k in range(K):
        a = t_start if k == 0 else knot_vars[k - 1]
        e = t_end if k == K - 1 else knot_vars[k]
        bounds.append((int(a), int(e)))
    return bounds


def add_vehicle(b, grid, nx, nu, rhs, x_lb, x_ub, u_lb, u_ub, time_vars, mode_vars,
                min_durations, guess_x=None, guess_u=None, path=None):
    """Add collocated phases of one vehicle.

    Parameters
    ----------
    rhs : callable
        ``rhs(x, u, v)`` returning normalised ``(F, Fx, Fu, Fv)`` with shapes
        ``(K, nx)``, ``(K, nx, nx)``, ``(K, nx, nu)`` and ``(K, nx)``.
    time_vars : list of (start, end) variable indices per phase
    mode_vars : list of mode-variable indices per phase
    min_durations : list of minimum phase durations (normalised time)
    path : list of (fn, n_rows, lb, ub, picks), optional
        Algebraic path constraints; ``picks`` selects inputs from
        ``(x, u)`` concatenated at each collocation node.
    """
    phases = []
    for k, spec in enumerate(grid.phases):
        n = spec.n_nodes
        gx = 0.0 if guess_x is None else guess_x[k]
        gu = 0.0 if guess_u is None else guess_u[k]
        X = b.var((n + 1, nx), x_lb, x_ub, gx)
        U = b.var((n, nu), u_lb, u_ub, gu)
        t0, t1 = time_vars[k]
        v = mode_vars[k]
        D = grid.diff[k]
        rows = b.rows((n, nx), 0.0, 0.0)
        # linear part D @ X
        for s in range(nx):
            b.linear(rows[:, s][:, None], X[:, s][None, :], D)

        def fn(z, nx=nx, nu=nu):
            x = z[:, :nx]
            u = z[:, nx:nx + nu]
            v_ = z[:, nx + nu]
            ta = z[:, nx + nu + 1]
            tb = z[:, nx + nu + 2]
            F, Fx, Fu, Fv = rhs(x, u, v_)
            h = 0.5 * (tb - ta)
            val = -h[:, None] * F
            jac = np.concatenate([
                -h[:, None, None] * Fx,
                -h[:, None, None] * Fu,
                (-h[:, None] * Fv)[:, :, None],
                (0.5 * F)[:, :, None],
                (-0.5 * F)[:, :, None],
            ], axis=2)
            return val, jac

        idx = np.column_stack([X[:n], U, np.full(n, v), np.full(n, t0), np.full(n, t1)])
        b.group(idx, rows, fn)
        if path:
            for pfn, nr, lo, hi, picks in path:
                prow = b.rows((n, nr), lo, hi)
                xu = np.column_stack([X[:n], U])
                b.group(xu[:, picks], prow, pfn)
        # minimum phase duration
        r = b.rows((1,), min_durations[k], np.inf)
        b.linear(r, [t1, t0], [1.0, -1.0])
        phases.append(PhaseVars(X, U, v, t0, t1))
    # continuity across knots
    for k in range(len(phases) - 1):
        r = b.rows((nx,), 0.0, 0.0)
        b.linear(r, phases[k].X[-1], 1.0)
        b.linear(r, phases[k + 1].X[0], -1.0)
    return phases


# --------------------------------------------------------------------------
# formation mission
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class InstanceParams:
    """Realisation of the random parameters for one collocation node.

    ``departure_delays`` are in seconds, one per aircraft.
    """

    r_fuel: float
    departure_delays: tuple = ()

    def delays(self, n):
        d = tuple(self.departure_delays) or (0.0,) * n
        if len(d) != n:
            raise InconsistentInstanceTemplates(f"{len(d)} delays for {n} aircraft")
        return np.asarray(d, float)


@dataclass
class AircraftTrajectory:
    """Decoded trajectory of one aircraft in SI units."""

    times: list        # per phase: (n + 1,) node times [s]
    states: list       # per phase: (n + 1, 5)
    controls: list     # per phase: (n, 3)
    taus: list         # per phase: (n + 1,) normalised node positions

    @property
    def t_start(self):
        return float(self.times[0][0])

    @property
    def t_end(self):
        return float(self.times[-1][-1])

    @property
    def flight_time(self):
        return self.t_end - self.t_start

    @property
    def fuel(self):
        return float(self.states[0][0, 4] - self.states[-1][-1, 4])

    def stacked(self):
        """Node times and states of all phases (duplicated knot points removed)."""
        t = [self.times[0]] + [tt[1:] for tt in self.times[1:]]
        x = [self.states[0]] + [xx[1:] for xx in self.states[1:]]
        return np.concatenate(t), np.concatenate(x)

    def sample(self, t_grid):
        """Evaluate the state polynomials on ``t_grid``; outside the flight the
        endpoint states are held."""
        t_grid = np.asarray(t_grid, float)
        out = np.empty((t_grid.size, 5))
        for i, t in enumerate(t_grid):
            if t <= self.t_start:
                out[i] = self.states[0][0]
                continue
            if t >= self.t_end:
                out[i] = self.states[-1][-1]
                continue
            for tt, xx, tau in zip(self.times, self.states, self.taus):
                if tt[0] <= t <= tt[-1]:
                    s = -1.0 + 2.0 * (t - tt[0]) / max(tt[-1] - tt[0], 1e-300)
                    out[i] = _lagrange_eval(tau, xx, s)
                    break
        return out


def _lagrange_eval(nodes, values, s):
    diff = s - nodes
    hit = np.flatnonzero(np.abs(diff) < 1e-14)
    if hit.size:
        return values[hit[0]]
    d = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(d, 1.0)
    bary = 1.0 / d.prod(axis=1)
    w = bary / diff
    return (w @ values) / w.sum()


@dataclass
class InstanceSolution:
    aircraft: list
    knot_times: np.ndarray
    mode_values: np.ndarray   # (K, A); NaN where no mode variable exists
    objective: float

    @property
    def mode_trace(self):
        from .mission import ModeTrace
        t0 = min(a.t_start for a in self.aircraft)
        t1 = max(a.t_end for a in self.aircraft)
        return ModeTrace(self.mode_values, np.concatenate([[t0], self.knot_times, [t1]]))


@dataclass
class MissionLayout:
    spec: MissionSpec
    grid: PhaseGrid
    phases: list           # per aircraft: list of PhaseVars
    knots: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    modes: dict            # (aircraft, phase) -> variable index
    x_scale: np.ndarray
    u_scale: np.ndarray
    t_ref: float

    @property
    def mode_indices(self):
        return np.array([self.modes[s] for s in sorted(self.modes)], dtype=int)

    def decode(self, x):
        x = np.asarray(x, float)
        ac = []
        for pv in self.phases:
            times, states, controls, taus = [], [], [], []
            for k, ph in enumerate(pv):
                tau = self.grid.tau(k)
                a, b = x[ph.t0] * self.t_ref, x[ph.t1] * self.t_ref
                times.append(a + 0.5 * (tau + 1.0) * (b - a))
                states.append(x[ph.X] * self.x_scale)
                controls.append(x[ph.U] * self.u_scale)
                taus.append(tau)
            ac.append(AircraftTrajectory(times, states, controls, taus))
        K, A = self.spec.n_phases, self.spec.n_aircraft
        mv = np.full((K, A), np.nan)
        for (p, k), i in self.modes.items():
            mv[k, p] = x[i]
        return InstanceSolution(ac, x[self.knots] * self.t_ref, mv, float("nan"))


def _mission_bbox(spec):
    if spec.wind is not None:
        return spec.wind.valid_bbox
    lat = [a.boundary.phi_i for a in spec.aircraft] + [a.boundary.phi_f for a in spec.aircraft]
    lon = [a.boundary.lam_i for a in spec.aircraft] + [a.boundary.lam_f for a in spec.aircraft]
    pad = 0.2
    return (min(lat) - pad, max(lat) + pad, min(lon) - pad, max(lon) + pad)


def _aircraft_rhs(params, wind, r_fuel, sx, su, tref):
    def rhs(xh, uh, v):
        x = xh * sx
        u = uh * su
        f, fx, fu, fb = cruise_dynamics_jacobian(x, u, v * r_fuel, params, wind)
        F = tref * f / sx
        Fx = tref * fx * sx[None, None, :] / sx[None, :, None]
        Fu = tref * fu * su[None, None, :] / sx[None, :, None]
        Fv = tref * fb * r_fuel / sx
        return F, Fx, Fu, Fv
    return rhs


def _lift_group(params, vref, mref):
    def fn(z):
        val, grad = lift_balance(z[:, 0] * vref, z[:, 1] * mref, z[:, 2], z[:, 3], params)
        grad = grad * np.array([vref, mref, 1.0, 1.0])
        return val[:, None], grad[:, None, :]
    return fn


def _proximity_group(chord_max, chord_ref=1e-2):
    # rows are scaled by a typical route separation rather than by the window
    # itself, which keeps far-apart starting points well conditioned
    cm2 = chord_max ** 2
    ref2 = chord_ref ** 2

    def fn(z):
        pa, la, pb, lb, v = (z[:, i] for i in range(5))
        ca, sa, cb, sb = np.cos(pa), np.sin(pa), np.cos(pb), np.sin(pb)
        dl = la - lb
        cd, sd = np.cos(dl), np.sin(dl)
        c2 = chord_squared(pa, la, pb, lb)
        g = (c2 - cm2) / ref2
        dc = np.stack([
            -2.0 * (ca * sb - sa * cb * cd),
            2.0 * ca * cb * sd,
            -2.0 * (sa * cb - ca * sb * cd),
            -2.0 * ca * cb * sd,
        ], axis=1) / ref2
        jac = np.concatenate([v[:, None] * dc, g[:, None]], axis=1)
        return (v * g)[:, None], jac[:, None, :]
    return fn


def _unit(lat, lon):
    return np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def _knot_waypoints(spec, knots, t_start, durations, links):
    """Planned positions at the phase knots with formation partners co-located.

    Each aircraft's nominal position at a knot is its great-circle point at
    that time.  Aircraft that share a formation in the phase before or after
    a knot are merged and placed at the normalised mean of their nominal
    positions, so partners fly a common path through the formation phase.
    """
    A, K = spec.n_aircraft, len(knots) + 1
    way = np.zeros((A, K + 1, 2))
    for p, a in enumerate(spec.aircraft):
        b = a.boundary
        frac = np.clip((knots - t_start[p]) / durations[p], 0.0, 1.0)
        lat, lon, _ = great_circle_points((b.phi_i, b.lam_i), (b.phi_f, b.lam_f), frac)
        way[p, 0] = b.phi_i, b.lam_i
        way[p, 1:K] = np.column_stack([lat, lon])
        way[p, K] = b.phi_f, b.lam_f
    for j in range(1, K):
        parent = list(range(A))

        def root(i):
            while parent[i] != i:
                i = parent[i]
            return i
        for k, p, q in links:
            if k in (j - 1, j):
                parent[root(p)] = root(q)
        groups = {}
        for p in range(A):
            groups.setdefault(root(p), []).append(p)
        for members in groups.values():
            if len(members) > 1:
                u = sum(_unit(*way[p, j]) for p in members)
                lat = np.arctan2(u[2], np.hypot(u[0], u[1]))
                lon = np.arctan2(u[1], u[0])
                for p in members:
                    way[p, j] = lat, lon
    return way


def _guess(spec, grid, t_start, links=()):
    """State/control guess and knot times (SI seconds).

    Aircraft fly great circles between knot waypoints at a constant speed
    per phase; ``links`` lists ``(phase, aircraft, leader)`` formation pairs
    whose members are routed through shared waypoints.
    """
    K = spec.n_phases
    durations = []
    for a in spec.aircraft:
        b = a.boundary
        d = orthodromic_distance((b.phi_i, b.lam_i), (b.phi_f, b.lam_f), a.params.radius)
        durations.append(d / (0.5 * (b.v_i + b.v_f)))
    durations = np.array(durations)
    t_end = t_start + durations
    dmin = max(p.min_duration for p in grid.phases)
    lo = t_start.max() + dmin
    hi = t_end.min() - dmin
    if hi - lo < (K - 1) * dmin:
        hi = lo + K * dmin
    knots = np.linspace(lo, hi, K + 1)[1:-1] if K > 1 else np.zeros(0)
    way = _knot_waypoints(spec, knots, t_start, durations, links)
    gx, gu = [], []
    for p, a in enumerate(spec.aircraft):
        b, prm = a.boundary, a.params
        env = prm.envelope
        bounds = [t_start[p]] + list(knots) + [t_end[p]]
        xs, us = [], []
        m_k = b.m_i
        for k in range(K):
            tau = grid.tau(k)
            ta, tb = bounds[k], bounds[k + 1]
            span = max(tb - ta, 1.0)
            t = ta + 0.5 * (tau + 1.0) * (tb - ta)
            frac = (t - ta) / span
            lat, lon, course = great_circle_points(tuple(way[p, k]), tuple(way[p, k + 1]), frac)
            dist = orthodromic_distance(tuple(way[p, k]), tuple(way[p, k + 1]), prm.radius)
            v = np.clip(np.full_like(t, dist / span), env.v_min, env.v_max)
            cl = np.clip(prm.level_flight_cl(v, m_k), env.cl_min, env.cl_max)
            ff = prm.tsfc(v) * prm.drag(v, cl)
            m = np.clip(m_k - ff * (t - ta), env.m_min, env.m_max)
            m_k = m[-1]
            X = np.column_stack([lat, lon, course, v, m])
            if k == 0:
                X[0] = [b.phi_i, b.lam_i, b.chi_i, b.v_i, b.m_i]
            if k == K - 1:
                X[-1, [0, 1, 3]] = [b.phi_f, b.lam_f, b.v_f]
            cl = np.clip(prm.level_flight_cl(X[:-1, 3], X[:-1, 4]), env.cl_min, env.cl_max)
            thrust = np.clip(prm.drag(X[:-1, 3], cl), env.thrust_min, env.thrust_max)
            U = np.column_stack([thrust, cl, np.zeros_like(cl)])
            xs.append(X)
            us.append(U)
        gx.append(xs)
        gu.append(us)
    return gx, gu, knots, t_end, durations


def mission_problem(spec: MissionSpec, grid: PhaseGrid, inst: InstanceParams,
                    mode_fix=None, guess=None, control_smoothing=1e-4):
    """Single-instance NLP of the switched mission and its layout.

    Parameters
    ----------
    mode_fix : float, optional
        Pin every mode variable to this value (used for the first solve stage).
    guess : ndarray, optional
        Decision vector used as the stored starting point instead of the
        great-circle guess.
    control_smoothing : float
        Weight of the penalty on squared control jumps between neighbouring
        nodes.  Thrust enters the dynamics and the cost linearly, so without
        it the control is only weakly determined along cruise arcs.
    """
    if len(grid.phases) != spec.n_phases:
        raise InconsistentInstanceTemplates(
            f"grid has {len(grid.phases)} phases, template has {spec.n_phases}")
    A, K = spec.n_aircraft, spec.n_phases
    sc = spec.scales
    radius = spec.aircraft[0].params.radius
    tref = radius / sc.speed
    sx = np.array([1.0, 1.0, 1.0, sc.speed, sc.mass])
    su = np.array([sc.thrust, 1.0, 1.0])
    wind = spec.wind if spec.wind is not None else WindField.zero(_mission_bbox(spec))
    la0, la1, lo0, lo1 = _mission_bbox(spec)

    delays = inst.delays(A)
    t_start = np.array([a.boundary.t_i for a in spec.aircraft]) + delays
    logic = encode_logical_constraints(spec, grid)
    links = [(g.slot[1], g.slot[0], g.leader) for g in logic.gates]
    gx, gu, gknots, gend, dur = _guess(spec, grid, t_start, links)
    dmin = np.array([p.min_duration for p in grid.phases]) / tref

    b = ProblemBuilder()
    horizon = (t_start.max() + 3.0 * dur.max() + K * 60.0) / tref
    knots = b.var((K - 1,), t_start.min() / tref, horizon, gknots / tref)
    ts = b.var((A,), t_start / tref, t_start / tref, t_start / tref)
    te = b.var((A,), t_start / tref, horizon, gend / tref)
    zero = b.var((1,), 0.0, 0.0, 0.0)[0]

    modes = {}
    for p, k in spec.mode_slots():
        lo_v, hi_v = (0.0, 1.0) if mode_fix is None else (mode_fix, mode_fix)
        modes[(p, k)] = int(b.var((1,), lo_v, hi_v, 0.0 if mode_fix is None else mode_fix)[0])

    phases = []
    for p, a in enumerate(spec.aircraft):
        prm, bc = a.params, a.boundary
        env = prm.envelope
        x_lb = np.array([la0, lo0, -2.0 * np.pi, env.v_min, env.m_min]) / sx
        x_ub = np.array([la1, lo1, 2.0 * np.pi, env.v_max, env.m_max]) / sx
        u_lb, u_ub = env.control_bounds()
        rhs = _aircraft_rhs(prm, wind, spec.r_fuel if inst.r_fuel is None else inst.r_fuel,
                            sx, su, tref)
        tv = _phase_time_vars(b, grid, ts[p], te[p], knots)
        mv = [modes.get((p, k), zero) for k in range(K)]
        path = [(_lift_group(prm, sc.speed, sc.mass), 1, 0.0, 0.0, [3, 4, 6, 7])]
        pv = add_vehicle(b, grid, 5, 3, rhs, x_lb, x_ub, u_lb / su, u_ub / su, tv, mv, dmin,
                         [g / sx for g in gx[p]], [g / su for g in gu[p]], path)
        # boundary conditions through bounds
        first, last = pv[0].X[0], pv[-1].X[-1]
        x_init = np.array([bc.phi_i, bc.lam_i, bc.chi_i, bc.v_i, bc.m_i]) / sx
        _pin(b, first, x_init)
        _pin(b, last[[0, 1, 3]], np.array([bc.phi_f, bc.lam_f, bc.v_f]) / sx[[0, 1, 3]])
        at, af = spec.objective_weights
        b.cost(te[p], at)
        b.cost(ts[p], -at)
        b.cost(last[4], -af)
        b.obj_const += af * bc.m_i / sc.mass
        if control_smoothing > 0:
            for ph in pv:
                for j in range(ph.U.shape[1]):
                    b.smoothing(ph.U[:, j], control_smoothing)
        phases.append(pv)

    # proximity gates
    for gate in logic.gates:
        p, k = gate.slot
        Xb, Xl = phases[p][k].X, phases[gate.leader][k].X
        if (phases[p][k].t0, phases[p][k].t1) != (phases[gate.leader][k].t0, phases[gate.leader][k].t1):
            raise InconsistentInstanceTemplates(
                f"formation phase {k} does not share its time window between partners")
        n1 = Xb.shape[0]
        idx = np.column_stack([Xb[:, 0], Xb[:, 1], Xl[:, 0], Xl[:, 1], np.full(n1, modes[(p, k)])])
        rows = b.rows((n1, 1), -np.inf, 0.0)
        b.group(idx, rows, _proximity_group(gate.chord_max))
    # logical cuts
    for cut in logic.cuts:
        r = b.rows((1,), -np.inf, cut.rhs)
        b.linear(np.full(len(cut.slots), r[0]), [modes[s] for s in cut.slots], cut.coeffs)
    # ordering of knots (each shared phase at least its minimum duration)
    for k in range(1, K - 1):
        r = b.rows((1,), dmin[k], np.inf)
        b.linear(r, [knots[k], knots[k - 1]], [1.0, -1.0])

    layout = MissionLayout(spec, grid, phases, knots, ts, te, modes, sx, su, tref)
    prob = b.build(name=spec.name, layout={"mission": layout})
    if guess is not None:
        prob.x0 = np.clip(np.asarray(guess, float), prob.x_lb, prob.x_ub)
    return prob, layout


def _pin(b, idx, values):
    """Fix variables through equal bounds."""
    lb = np.concatenate(b.lb)
    ub = np.concatenate(b.ub)
    g = np.concatenate(b.guess)
    lb[idx] = values
    ub[idx] = values
    g[idx] = values
    b.lb, b.ub, b.guess = [lb], [ub], [g]


def transcribe(spec: MissionSpec, grid: PhaseGrid, instances, weights=None, mode_fix=None,
               guesses=None):
    """Augmented NLP stacking one mission instance per parameter realisation.

    The objective is the weighted sum of the instance objectives (the
    quadrature approximation of the expected cost).  Instances share the
    phase and mode template, so every block has the same layout.

    Returns
    -------
    problem : NlpProblem
        Block-structured problem; ``problem.layout["instances"]`` holds the
        per-instance :class:`MissionLayout`.
    """
    instances = list(instances)
    if not instances:
        raise InconsistentInstanceTemplates("no instances")
    if weights is None:
        weights = np.full(len(instances), 1.0 / len(instances))
    probs, layouts = [], []
    for j, inst in enumerate(instances):
        g = None if guesses is None else guesses[j]
        p, lay = mission_problem(spec, grid, inst, mode_fix=mode_fix, guess=g)
        if probs and (p.n != probs[0].n or p.m != probs[0].m):
            raise InconsistentInstanceTemplates("instances produced different layouts")
        probs.append(p)
        layouts.append(lay)
    prob = compose_blocks(probs, weights, name=f"{spec.name}-augmented")
    prob.layout["instances"] = layouts
    return prob


def initial_guess(spec: MissionSpec, grid: Optional[PhaseGrid] = None,
                  inst: Optional[InstanceParams] = None):
    """Great-circle initial decision vector with every aircraft flying solo."""
    if grid is None:
        grid = build_grid([PhaseSpec()] * spec.n_phases)
    if inst is None:
        inst = InstanceParams(spec.r_fuel)
    prob, _ = mission_problem(spec, grid, inst)
    return prob.x0.copy()


# --------------------------------------------------------------------------
# benchmark: minimum-time double integrator
# --------------------------------------------------------------------------
def double_integrator_problem(n_nodes=25, distance=1.0, smoothing=1e-2):
    """Rest-to-rest minimum-time transfer of ``x'' = u``, ``|u| <= 1``.

    Two phases joined at a free knot; the analytic optimum switches from
    ``u = 1`` to ``u = -1`` at ``t = sqrt(distance)`` and arrives at
    ``2 sqrt(distance)``.

    Returns
    -------
    problem : NlpProblem
    decode : callable mapping a solution vector to (knot, t_final, phases)
    """
    grid = build_grid([PhaseSpec(n_nodes, 1e-3), PhaseSpec(n_nodes, 1e-3)])
    b = ProblemBuilder()
    t0 = b.var((1,), 0.0, 0.0, 0.0)[0]
    knot = b.var((1,), 0.0, 10.0, 0.8)[0]
    tf = b.var((1,), 0.0, 10.0, 2.5)[0]
    zero = b.var((1,), 0.0, 0.0, 0.0)[0]

    def rhs(x, u, v):
        K = x.shape[0]
        F = np.stack([x[:, 1], u[:, 0]], axis=1)
        Fx = np.zeros((K, 2, 2), dtype=F.dtype)
        Fx[:, 0, 1] = 1.0
        Fu = np.zeros((K, 2, 1), dtype=F.dtype)
        Fu[:, 1, 0] = 1.0
        return F, Fx, Fu, np.zeros((K, 2), dtype=F.dtype)

    gx = []
    for k in range(2):
        tau = grid.tau(k)
        s = 0.5 * (tau + 1.0)
        gx.append(np.column_stack([distance * (k + s) / 2.0, np.full_like(s, 0.5)]))
    # accelerate-then-brake structure of the phase template
    gu = [np.ones((n_nodes, 1)), -np.ones((n_nodes, 1))]
    phases = add_vehicle(b, grid, 2, 1, rhs, -np.inf, np.inf, -1.0, 1.0,
                         [(t0, knot), (knot, tf)], [zero, zero], [1e-3, 1e-3],
                         guess_x=gx, guess_u=gu)
    _pin(b, phases[0].X[0], np.zeros(2))
    _pin(b, phases[-1].X[-1], np.array([distance, 0.0]))
    b.cost(tf, 1.0)
    # a tiny penalty on control jumps inside a phase moves the switch onto the knot
    for ph in phases:
        b.smoothing(ph.U[:, 0], smoothing)
    prob = b.build(name="double_integrator")

    def decode(x):
        out = []
        for k, ph in enumerate(phases):
            tau = grid.tau(k)
            a, e = x[ph.t0], x[ph.t1]
            out.append((a + 0.5 * (tau + 1.0) * (e - a), x[ph.X], x[ph.U]))
        return float(x[knot]), float(x[tf]), out

    return prob, decode
