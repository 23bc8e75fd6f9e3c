"""Problem, options and result containers for the NLP backend."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from ..errors import LayoutMismatch, NonFiniteEvaluation

OPTIMAL = "Optimal"
FEASIBLE = "Feasible"
MAX_ITER = "MaxIter"
INFEASIBLE = "Infeasible"
NUMERICAL_FAILURE = "NumericalFailure"
STATUSES = (OPTIMAL, FEASIBLE, MAX_ITER, INFEASIBLE, NUMERICAL_FAILURE)


def _empty_constraints(x):
    return np.zeros(0)


@dataclass
class NlpProblem:
    """Smooth NLP ``min f(x)  s.t.  c_lb <= c(x) <= c_ub,  x_lb <= x <= x_ub``.

    Equality rows have ``c_lb == c_ub``.  ``jacobian`` returns a sparse
    ``(m, n)`` matrix and ``hessian(x, y, obj_factor)`` the sparse symmetric
    Hessian of ``obj_factor * f + y @ c``.

    ``blocks`` optionally lists independent subproblems; see
    :func:`compose_blocks`.
    """

    n: int
    objective: Callable
    gradient: Callable
    x_lb: np.ndarray
    x_ub: np.ndarray
    constraints: Callable = _empty_constraints
    jacobian: Optional[Callable] = None
    hessian: Optional[Callable] = None
    c_lb: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c_ub: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x0: Optional[np.ndarray] = None
    layout: dict = field(default_factory=dict)
    blocks: Optional[list] = None
    name: str = "nlp"

    def __post_init__(self):
        self.x_lb = np.broadcast_to(np.asarray(self.x_lb, float), (self.n,)).copy()
        self.x_ub = np.broadcast_to(np.asarray(self.x_ub, float), (self.n,)).copy()
        self.c_lb = np.asarray(self.c_lb, float).ravel()
        self.c_ub = np.asarray(self.c_ub, float).ravel()
        if self.c_lb.shape != self.c_ub.shape:
            raise LayoutMismatch("c_lb and c_ub differ in length")
        if np.any(self.x_lb > self.x_ub):
            raise LayoutMismatch("variable bounds have lower > upper")
        if np.any(self.c_lb > self.c_ub):
            raise LayoutMismatch("constraint bounds have lower > upper")
        if self.jacobian is None:
            if self.m:
                raise LayoutMismatch("constrained problem needs a jacobian callback")
            self.jacobian = lambda x: sparse.csr_matrix((0, self.n))
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, float)
            if self.x0.shape != (self.n,):
                raise LayoutMismatch(f"x0 has shape {self.x0.shape}, expected ({self.n},)")

    @property
    def m(self):
        return self.c_lb.size

    def check_point(self, x):
        x = np.asarray(x, float)
        if x.shape != (self.n,):
            raise LayoutMismatch(f"point has shape {x.shape}, expected ({self.n},)")
        return x

    def evaluate(self, x):
        """Objective and constraints, raising on non-finite values."""
        f = float(self.objective(x))
        c = np.asarray(self.constraints(x), float)
        if c.shape != (self.m,):
            raise LayoutMismatch(f"constraints returned {c.shape}, expected ({self.m},)")
        if not np.isfinite(f) or not np.all(np.isfinite(c)):
            raise NonFiniteEvaluation("objective or constraints not finite")
        return f, c

    def violation(self, x, c=None):
        """Infinity norm of bound and constraint violation."""
        if c is None:
            c = np.asarray(self.constraints(x), float)
        v = 0.0
        if c.size:
            v = max(v, float(np.max(np.maximum(self.c_lb - c, 0.0), initial=0.0)),
                    float(np.max(np.maximum(c - self.c_ub, 0.0), initial=0.0)))
        v = max(v, float(np.max(np.maximum(self.x_lb - x, 0.0), initial=0.0)),
                float(np.max(np.maximum(x - self.x_ub, 0.0), initial=0.0)))
        return v


@dataclass
class SolveOptions:
    feasibility_tol: float = 1e-8
    optimality_tol: float = 1e-8
    max_iter: int = 500
    method: str = "ipm"
    # interior point schedule
    mu_init: float = 0.1
    mu_decrease: float = 0.2
    mu_superlinear: float = 1.5
    warm_mu: float = 1e-9
    # KKT systems up to this order use a dense LDL factorisation with
    # inertia control; larger ones use sparse LU with a curvature test
    dense_kkt_limit: int = 4000
    # augmented Lagrangian schedule
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e12
    warm_start: Optional[object] = None
    workers: int = 1
    debug: bool = False

    def __post_init__(self):
        if not (self.feasibility_tol > 0 and self.optimality_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.method not in ("ipm", "auglag"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SolveResult:
    status: str
    x: np.ndarray
    objective: float
    constraint_violation: float
    dual_infeasibility: float
    iterations: int
    wall_time: float
    multipliers: np.ndarray
    bound_multipliers: np.ndarray
    merit_history: list = field(default_factory=list)
    block_results: Optional[list] = None

    @property
    def success(self):
        return self.status in (OPTIMAL, FEASIBLE)


def compose_blocks(problems, weights=None, name="augmented"):
    """Stack independent problems into one block-diagonal NLP.

    The objective is the weighted sum of the block objectives; variables and
    constraints are concatenated in block order.  Each entry of ``blocks`` on
    the result is ``(problem, var_slice, con_slice, weight)``.
    """
    problems = list(problems)
    if weights is None:
        weights = np.ones(len(problems))
    weights = np.asarray(weights, float)
    if weights.shape != (len(problems),):
        raise LayoutMismatch("one weight per block is required")
    vs, cs, blocks = [], [], []
    nv = nc = 0
    for prob, w in zip(problems, weights):
        vsl = slice(nv, nv + prob.n)
        csl = slice(nc, nc + prob.m)
        blocks.append((prob, vsl, csl, float(w)))
        vs.append(vsl)
        cs.append(csl)
        nv += prob.n
        nc += prob.m

    def objective(x):
        return sum(w * p.objective(x[v]) for p, v, _, w in blocks)

    def gradient(x):
        return np.concatenate([w * p.gradient(x[v]) for p, v, _, w in blocks])

    def constraints(x):
        return np.concatenate([p.constraints(x[v]) for p, v, _, _ in blocks] or [np.zeros(0)])

    def jacobian(x):
        return sparse.block_diag([p.jacobian(x[v]) for p, v, _, _ in blocks], format="csr")

    def hessian(x, y, obj_factor=1.0):
        return sparse.block_diag(
            [p.hessian(x[v], y[c], obj_factor * w) for p, v, c, w in blocks], format="csr")

    has_h = all(p.hessian is not None for p in problems)
    x0 = None
    if all(p.x0 is not None for p in problems):
        x0 = np.concatenate([p.x0 for p in problems])
    return NlpProblem(
        n=nv, objective=objective, gradient=gradient,
        x_lb=np.concatenate([p.x_lb for p in problems]),
        x_ub=np.concatenate([p.x_ub for p in problems]),
        constraints=constraints, jacobian=jacobian,
        hessian=hessian if has_h else None,
        c_lb=np.concatenate([p.c_lb for p in problems]),
        c_ub=np.concatenate([p.c_ub for p in problems]),
        x0=x0, blocks=blocks, name=name,
        layout={"blocks": [(v.start, v.stop) for v in vs]},
    )
