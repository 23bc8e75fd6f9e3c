"""Non-intrusive generalised polynomial chaos.

Every univariate family is described by the three-term recurrence of its
orthonormal polynomials in a standardised coordinate.  Gaussian variables
use Hermite polynomials, uniform variables Legendre polynomials and
Gaussian mixtures either polynomials built by a discretised Stieltjes
procedure against the mixture density or Hermite polynomials of a standard
normal variable mapped through the mixture's inverse CDF.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import interpolate, linalg, special, stats
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import (EigSolverFailure, GridMismatch, InconsistentModeSequences,
                     MomentComputationFailure)

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
MIXTURE = "mixture"
ENVELOPE_Z = 1.96


# --------------------------------------------------------------------------
# random variables
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class RandomVariableSpec:
    """Distribution of one independent random parameter.

    ``params`` holds ``(mean, std)`` for Gaussian variables, ``(a, b)`` for
    uniform ones and ``(weights, means, stds)`` tuples for mixtures.
    """
    id: str
    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == GAUSSIAN:
            mean, std = self.params
            if not std > 0:
                raise ValueError(f"{self.id}: std must be positive")
        elif self.kind == UNIFORM:
            a, b = self.params
            if not b > a:
                raise ValueError(f"{self.id}: uniform bounds must satisfy a < b")
        elif self.kind == MIXTURE:
            w, m, s = (np.asarray(v, float) for v in self.params)
            if not (w.shape == m.shape == s.shape and w.ndim == 1 and w.size >= 1):
                raise ValueError(f"{self.id}: mixture arrays must have equal length")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"{self.id}: mixture weights must be positive and sum to 1")
            if np.any(s <= 0):
                raise ValueError(f"{self.id}: mixture stds must be positive")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def gaussian(cls, id, mean, std):
        return cls(id, GAUSSIAN, (float(mean), float(std)))

    @classmethod
    def uniform(cls, id, a, b):
        return cls(id, UNIFORM, (float(a), float(b)))

    @classmethod
    def mixture(cls, id, weights, means, stds):
        w = np.asarray(weights, float)
        # tolerate rounding in tabulated weights
        if np.all(w > 0) and abs(w.sum() - 1.0) < 1e-6:
            w = w / w.sum()
        return cls(id, MIXTURE, (tuple(w), tuple(float(v) for v in means),
                                 tuple(float(v) for v in stds)))

    @property
    def mean(self):
        if self.kind == GAUSSIAN:
            return self.params[0]
        if self.kind == UNIFORM:
            return 0.5 * (self.params[0] + self.params[1])
        w, m, _ = (np.asarray(v) for v in self.params)
        return float(w @ m)

    @property
    def std(self):
        if self.kind == GAUSSIAN:
            return self.params[1]
        if self.kind == UNIFORM:
            return (self.params[1] - self.params[0]) / math.sqrt(12.0)
        w, m, s = (np.asarray(v) for v in self.params)
        mu = w @ m
        return float(math.sqrt(w @ (s ** 2 + m ** 2) - mu ** 2))

    @property
    def support(self):
        if self.kind == UNIFORM:
            return self.params
        return (-np.inf, np.inf)

    def pdf(self, x):
        x = np.asarray(x, float)
        if self.kind == GAUSSIAN:
            return stats.norm.pdf(x, *self.params)
        if self.kind == UNIFORM:
            return stats.uniform.pdf(x, self.params[0], self.params[1] - self.params[0])
        w, m, s = self.params
        return sum(wi * stats.norm.pdf(x, mi, si) for wi, mi, si in zip(w, m, s))

    def cdf(self, x):
        x = np.asarray(x, float)
        if self.kind == GAUSSIAN:
            return stats.norm.cdf(x, *self.params)
        if self.kind == UNIFORM:
            return stats.uniform.cdf(x, self.params[0], self.params[1] - self.params[0])
        w, m, s = self.params
        return sum(wi * stats.norm.cdf(x, mi, si) for wi, mi, si in zip(w, m, s))

    def ppf(self, u):
        """Inverse CDF; mixtures are inverted by bracketed bisection."""
        u = np.asarray(u, float)
        if self.kind == GAUSSIAN:
            return stats.norm.ppf(u, *self.params)
        if self.kind == UNIFORM:
            return stats.uniform.ppf(u, self.params[0], self.params[1] - self.params[0])
        w, m, s = (np.asarray(v) for v in self.params)
        lo = np.full(u.shape, float(np.min(m - 40 * s)))
        hi = np.full(u.shape, float(np.max(m + 40 * s)))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo, initial=0.0) < 1e-13 * (1.0 + np.max(np.abs(mid), initial=0.0)):
                break
        return 0.5 * (lo + hi)

    def sample(self, n, rng):
        if self.kind == GAUSSIAN:
            return rng.normal(self.params[0], self.params[1], n)
        if self.kind == UNIFORM:
            return rng.uniform(self.params[0], self.params[1], n)
        w, m, s = (np.asarray(v) for v in self.params)
        comp = rng.choice(w.size, size=n, p=w)
        return rng.normal(m[comp], s[comp])

    def to_dict(self):
        return {"id": self.id, "kind": self.kind,
                "params": [list(p) if isinstance(p, tuple) else p for p in self.params]}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == MIXTURE:
            return cls.mixture(d["id"], *d["params"])
        return cls(d["id"], d["kind"], tuple(float(v) for v in d["params"]))


# --------------------------------------------------------------------------
# univariate orthonormal families
# --------------------------------------------------------------------------
def _stieltjes(x, w, n):
    """Recurrence coefficients of the discrete measure ``sum w_i delta(x_i)``.

    Returns ``alpha[0..n-1]`` and ``beta[0..n-1]`` (``beta[0]`` is the total
    mass) of the orthonormal polynomials, computed with the normalised
    Stieltjes procedure.
    """
    alpha = np.zeros(n)
    beta = np.zeros(n)
    mass = w.sum()
    beta[0] = mass
    q_prev = np.zeros_like(x)
    q = np.full_like(x, 1.0 / math.sqrt(mass))
    for k in range(n):
        alpha[k] = np.sum(w * x * q * q)
        if k + 1 == n:
            break
        r = (x - alpha[k]) * q - (math.sqrt(beta[k]) if k else 0.0) * q_prev
        b2 = float(np.sum(w * r * r))
        if not np.isfinite(b2) or b2 <= 0:
            raise MomentComputationFailure("Stieltjes recurrence lost positivity")
        beta[k + 1] = b2
        q_prev, q = q, r / math.sqrt(b2)
    return alpha, beta


def _mixture_measure(var, segments):
    """Composite 64-node Gauss-Legendre discretisation of a standardised mixture."""
    w, m, s = (np.asarray(v) for v in var.params)
    mu, sd = var.mean, var.std
    gx, gw = np.polynomial.legendre.leggauss(64)
    xs, ws = [], []
    for wi, mi, si in zip(w, m, s):
        edges = np.linspace(mi - 12.0 * si, mi + 12.0 * si, segments + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            xp = 0.5 * (b - a) * gx + 0.5 * (a + b)
            wp = 0.5 * (b - a) * gw * wi * stats.norm.pdf(xp, mi, si)
            xs.append((xp - mu) / sd)
            ws.append(wp)
    x = np.concatenate(xs)
    wt = np.concatenate(ws)
    return x, wt / wt.sum()


@dataclass
class UnivariateFamily:
    """Orthonormal polynomials of one variable in a standardised coordinate.

    Attributes
    ----------
    alpha, beta : ndarray
        Recurrence ``sqrt(beta[k+1]) p_{k+1} = (x - alpha[k]) p_k - sqrt(beta[k]) p_{k-1}``.
    name : str
        ``hermite``, ``legendre``, ``stieltjes`` or ``hermite-transform``.
    """
    var: RandomVariableSpec
    name: str
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def max_terms(self):
        return self.alpha.size

    def to_standard(self, x):
        x = np.asarray(x, float)
        v = self.var
        if self.name == "legendre":
            a, b = v.params
            return (2.0 * x - (a + b)) / (b - a)
        if self.name == "hermite-transform":
            u = np.clip(v.cdf(x), 1e-300, 1.0 - 1e-16)
            return stats.norm.ppf(u)
        return (x - v.mean) / v.std

    def to_physical(self, xh):
        xh = np.asarray(xh, float)
        v = self.var
        if self.name == "legendre":
            a, b = v.params
            return 0.5 * (a + b) + 0.5 * (b - a) * xh
        if self.name == "hermite-transform":
            return v.ppf(stats.norm.cdf(xh))
        return v.mean + v.std * xh

    def values(self, xh, degree):
        """Orthonormal polynomial values, shape ``(len(xh), degree + 1)``."""
        if degree + 1 > self.max_terms:
            raise ValueError(f"family holds {self.max_terms} recurrence terms, need {degree + 1}")
        xh = np.atleast_1d(np.asarray(xh, float))
        out = np.zeros((xh.size, degree + 1))
        out[:, 0] = 1.0
        if degree >= 1:
            out[:, 1] = (xh - self.alpha[0]) / math.sqrt(self.beta[1])
        for k in range(1, degree):
            out[:, k + 1] = ((xh - self.alpha[k]) * out[:, k]
                             - math.sqrt(self.beta[k]) * out[:, k - 1]) / math.sqrt(self.beta[k + 1])
        return out

    def gauss(self, q):
        """Golub-Welsch nodes and weights (standardised coordinate)."""
        if q > self.max_terms:
            raise ValueError(f"family holds {self.max_terms} recurrence terms, need {q}")
        try:
            nodes, vecs = linalg.eigh_tridiagonal(self.alpha[:q], np.sqrt(self.beta[1:q]))
        except (linalg.LinAlgError, ValueError) as exc:
            raise EigSolverFailure(f"Golub-Welsch eigenproblem failed: {exc}") from exc
        weights = vecs[0] ** 2
        if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))):
            raise EigSolverFailure("Golub-Welsch produced non-finite nodes or weights")
        return nodes, weights / weights.sum()


def univariate_family(var: RandomVariableSpec, n_terms, mixture="stieltjes",
                      tol=1e-13, max_refinements=8):
    """Recurrence for ``var`` with at least ``n_terms`` coefficients.

    Parameters
    ----------
    mixture : {"stieltjes", "transform"}
        Treatment of Gaussian mixtures: polynomials orthonormal under the
        mixture density itself, or Hermite polynomials of the standard normal
        variable that the mixture's inverse CDF maps onto the parameter.
    """
    k = np.arange(n_terms, dtype=float)
    if var.kind == GAUSSIAN or (var.kind == MIXTURE and mixture == "transform"):
        beta = k.copy()
        beta[0] = 1.0
        name = "hermite" if var.kind == GAUSSIAN else "hermite-transform"
        return UnivariateFamily(var, name, np.zeros(n_terms), beta)
    if var.kind == UNIFORM:
        beta = np.where(k > 0, k ** 2 / np.maximum(4.0 * k ** 2 - 1.0, 1.0), 1.0)
        return UnivariateFamily(var, "legendre", np.zeros(n_terms), beta)
    if mixture != "stieltjes":
        raise ValueError(f"unknown mixture treatment {mixture!r}")
    segments = 2
    prev = None
    for _ in range(max_refinements):
        x, w = _mixture_measure(var, segments)
        alpha, beta = _stieltjes(x, w, n_terms)
        if prev is not None:
            change = max(np.max(np.abs(alpha - prev[0])), np.max(np.abs(beta - prev[1])))
            if change < tol:
                return UnivariateFamily(var, "stieltjes", alpha, beta)
        prev = (alpha, beta)
        segments *= 2
    raise MomentComputationFailure(
        f"mixture recurrence for {var.id} did not converge after {max_refinements} refinements")


# --------------------------------------------------------------------------
# multivariate basis and quadrature
# --------------------------------------------------------------------------
def total_degree_indices(n_vars, degree):
    """Multi-indices with total degree <= ``degree``, graded then lexicographic."""
    out = []
    for d in range(degree + 1):
        level = [idx for idx in itertools.product(range(d + 1), repeat=n_vars) if sum(idx) == d]
        out.extend(sorted(level, reverse=True))
    return np.array(out, dtype=int).reshape(-1, n_vars)


@dataclass
class GpcBasis:
    """Tensor-product orthonormal basis on a total-degree index set."""
    variables: list
    degree: int
    families: list
    indices: np.ndarray
    mixture: str = "stieltjes"

    @property
    def n_vars(self):
        return len(self.variables)

    @property
    def size(self):
        return self.indices.shape[0]

    def standardize(self, theta):
        theta = np.atleast_2d(np.asarray(theta, float))
        if theta.shape[1] != self.n_vars:
            raise ValueError(f"expected {self.n_vars} columns, got {theta.shape[1]}")
        return np.column_stack([f.to_standard(theta[:, i]) for i, f in enumerate(self.families)])

    def evaluate_standard(self, xh):
        xh = np.atleast_2d(np.asarray(xh, float))
        vals = [f.values(xh[:, i], self.degree) for i, f in enumerate(self.families)]
        out = np.ones((xh.shape[0], self.size))
        for i in range(self.n_vars):
            out *= vals[i][:, self.indices[:, i]]
        return out

    def evaluate(self, theta):
        """Basis values ``Phi_m(theta)``, shape ``(n_points, M)``."""
        return self.evaluate_standard(self.standardize(theta))

    def to_dict(self):
        return {"degree": self.degree, "mixture": self.mixture,
                "variables": [v.to_dict() for v in self.variables],
                "families": [f.name for f in self.families],
                "indices": self.indices.tolist()}


def build_basis(variables: Sequence[RandomVariableSpec], degree: int,
                mixture="stieltjes", extra_terms=0) -> GpcBasis:
    """Orthonormal gPC basis of total degree ``degree``.

    ``extra_terms`` stores additional recurrence coefficients so the same
    families can later generate higher-order quadrature.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    variables = list(variables)
    if not variables:
        raise ValueError("at least one random variable is required")
    families = [univariate_family(v, degree + 1 + max(0, extra_terms), mixture) for v in variables]
    return GpcBasis(variables, degree, families, total_degree_indices(len(variables), degree), mixture)


@dataclass
class QuadratureRule:
    """Nodes in physical coordinates with probability weights."""
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str
    std_nodes: np.ndarray = field(repr=False, default=None)
    families: tuple = ()

    @property
    def size(self):
        return self.weights.size

    def integrate(self, values):
        values = np.asarray(values, float)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def to_dict(self):
        return {"scheme": self.scheme, "nodes": self.nodes.tolist(), "weights": self.weights.tolist()}


def _families_for(variables, q_max, mixture, families=None):
    if families is not None and all(f.max_terms >= q_max for f in families):
        return families
    return [univariate_family(v, q_max + 1, mixture) for v in variables]


def build_quadrature(variables: Sequence[RandomVariableSpec], q_per_var, scheme="tensor",
                     mixture="stieltjes", families=None) -> QuadratureRule:
    """Gaussian quadrature for independent variables.

    Parameters
    ----------
    q_per_var : int or sequence of int
        Points per variable (tensor scheme) or Smolyak level (sparse scheme).
    scheme : {"tensor", "sparse"}
        Full tensor product, or the Smolyak combination of tensor rules
        (only offered for four or more variables).
    """
    variables = list(variables)
    n = len(variables)
    if isinstance(q_per_var, (int, np.integer)):
        qs = [int(q_per_var)] * n
    else:
        qs = [int(q) for q in q_per_var]
    if len(qs) != n or min(qs) < 2:
        raise ValueError("need at least two points per variable")
    fams = _families_for(variables, max(qs), mixture, families)
    if scheme == "tensor":
        rules = [f.gauss(q) for f, q in zip(fams, qs)]
        xh = np.array(list(itertools.product(*[r[0] for r in rules]))).reshape(-1, n)
        w = np.prod(np.array(list(itertools.product(*[r[1] for r in rules]))).reshape(-1, n), axis=1)
    elif scheme == "sparse":
        if n < 4:
            raise ValueError("the sparse scheme is reserved for four or more variables")
        xh, w = _smolyak(fams, max(qs))
    else:
        raise ValueError(f"unknown quadrature scheme {scheme!r}")
    w = w / w.sum()
    nodes = np.column_stack([f.to_physical(xh[:, i]) for i, f in enumerate(fams)])
    if not np.all(np.isfinite(nodes)):
        raise EigSolverFailure("quadrature produced non-finite nodes")
    return QuadratureRule(nodes, w, scheme, xh, tuple(f.name for f in fams))


def _smolyak(families, level):
    """Smolyak combination of Gauss rules with ``l`` points at level ``l``.

    ``level`` is the largest one-dimensional rule used, so the sparse rule
    is exact for the same univariate degree as a tensor rule of that size.
    """
    n = len(families)
    level = level + n - 1
    pts = {}
    for total in range(max(n, level - n + 1), level + 1):
        coeff = (-1) ** (level - total) * special.comb(n - 1, level - total, exact=True)
        for lv in itertools.product(range(1, level - n + 2), repeat=n):
            if sum(lv) != total:
                continue
            rules = [f.gauss(l) for f, l in zip(families, lv)]
            for combo in itertools.product(*[range(l) for l in lv]):
                x = tuple(round(float(rules[i][0][c]), 14) for i, c in enumerate(combo))
                wt = coeff * np.prod([rules[i][1][c] for i, c in enumerate(combo)])
                pts[x] = pts.get(x, 0.0) + wt
    keys = sorted(pts)
    xh = np.array(keys, float).reshape(-1, n)
    w = np.array([pts[k] for k in keys])
    keep = np.abs(w) > 1e-15
    return xh[keep], w[keep]


# --------------------------------------------------------------------------
# stochastic solutions
# --------------------------------------------------------------------------
@dataclass
class StochasticSolution:
    """gPC coefficients of one or more quantities on a common grid.

    ``coefficients[name]`` has shape ``(M, len(grid))``; ``grid_name`` is the
    column label of the grid (``t`` for time, ``d_km`` for distance).
    """
    basis: GpcBasis
    grid: np.ndarray
    coefficients: Dict[str, np.ndarray]
    grid_name: str = "t"
    raw: Optional[Dict[str, np.ndarray]] = field(default=None, repr=False)
    sequence: Optional[tuple] = None

    def quantity(self, name=None):
        if name is None:
            if len(self.coefficients) != 1:
                raise ValueError("several quantities present; name one")
            name = next(iter(self.coefficients))
        return self.coefficients[name]

    def mean(self, name=None):
        return self.quantity(name)[0].copy()

    def variance(self, name=None):
        c = self.quantity(name)
        return np.sum(c[1:] ** 2, axis=0)

    def std(self, name=None):
        return np.sqrt(self.variance(name))

    def envelope(self, name=None):
        m, s = self.mean(name), self.std(name)
        return m - ENVELOPE_Z * s, m + ENVELOPE_Z * s

    def to_dict(self):
        return {"grid_name": self.grid_name, "grid": self.grid.tolist(),
                "basis": self.basis.to_dict(),
                "sequence": list(self.sequence) if self.sequence is not None else None,
                "coefficients": {k: v.tolist() for k, v in self.coefficients.items()}}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        variables = [RandomVariableSpec.from_dict(v) for v in d["basis"]["variables"]]
        basis = build_basis(variables, d["basis"]["degree"], d["basis"]["mixture"])
        return cls(basis, np.asarray(d["grid"], float),
                   {k: np.asarray(v, float) for k, v in d["coefficients"].items()},
                   d["grid_name"], sequence=tuple(d["sequence"]) if d.get("sequence") else None)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_csv(self, path, names=None):
        """Write ``<grid>, mean_<q>, std_<q>`` columns for each quantity."""
        names = list(self.coefficients) if names is None else list(names)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            header = [self.grid_name]
            for n in names:
                header += [f"mean_{n}", f"std_{n}"]
            wr.writerow(header)
            cols = [(self.mean(n), self.std(n)) for n in names]
            for i, g in enumerate(self.grid):
                row = [_fmt(g)]
                for m, s in cols:
                    row += [_fmt(m[i]), _fmt(s[i])]
                wr.writerow(row)


def _fmt(v):
    return repr(float(v))


def check_mode_sequences(sequences):
    """Raise unless every quadrature node produced the same state sequence."""
    seqs = [tuple(s) for s in sequences]
    if not seqs:
        return None
    distinct = sorted(set(seqs))
    if len(distinct) > 1:
        groups = {s: [j for j, t in enumerate(seqs) if t == s] for s in distinct}
        detail = "; ".join(f"{list(s)} at nodes {groups[s]}" for s in distinct)
        raise InconsistentModeSequences(
            f"quadrature nodes disagree on the discrete-state sequence: {detail}", groups)
    return seqs[0]


def estimate_coefficients(raw, basis: GpcBasis, rule: QuadratureRule, grid=None,
                          sequences=None, grid_name="t") -> StochasticSolution:
    """Project node solutions onto the basis by quadrature.

    Parameters
    ----------
    raw : ndarray or dict of name -> ndarray
        Values per node, shape ``(Q,)`` or ``(Q, T)``.
    sequences : sequence of tuples, optional
        Discrete-state sequence per node; all must agree.
    """
    seq = check_mode_sequences(sequences) if sequences is not None else None
    if not isinstance(raw, dict):
        raw = {"z": raw}
    Q = rule.size
    same = rule.std_nodes is not None and rule.families == tuple(f.name for f in basis.families)
    Phi = basis.evaluate_standard(rule.std_nodes) if same else basis.evaluate(rule.nodes)
    weighted = Phi * rule.weights[:, None]
    coeffs, arrays = {}, {}
    n_grid = None
    for name, z in raw.items():
        z = np.asarray(z, float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != Q:
            raise GridMismatch(f"{name}: {z.shape[0]} node solutions for {Q} quadrature nodes")
        if n_grid is None:
            n_grid = z.shape[1]
        elif z.shape[1] != n_grid:
            raise GridMismatch(f"{name}: grid length {z.shape[1]} differs from {n_grid}")
        if not np.all(np.isfinite(z)):
            raise GridMismatch(f"{name}: node solutions contain non-finite values")
        coeffs[name] = weighted.T @ z
        arrays[name] = z
    if grid is None:
        grid = np.arange(n_grid, dtype=float)
    grid = np.asarray(grid, float)
    if grid.size != n_grid:
        raise GridMismatch(f"grid has {grid.size} points, node solutions have {n_grid}")
    return StochasticSolution(basis, grid, coeffs, grid_name, arrays, seq)


def moments(sol: StochasticSolution, name=None):
    """Mean and variance trajectories from the expansion coefficients."""
    return sol.mean(name), sol.variance(name)


def evaluate_expansion(sol: StochasticSolution, theta, name=None, extrapolate=False):
    """Evaluate ``sum_m C_m Phi_m(theta)``; rows of ``theta`` are parameter vectors."""
    theta = np.atleast_2d(np.asarray(theta, float))
    if not extrapolate:
        for i, v in enumerate(sol.basis.variables):
            lo, hi = v.support
            if np.any(theta[:, i] < lo) or np.any(theta[:, i] > hi):
                raise ValueError(f"theta outside the support of {v.id}; pass extrapolate=True")
    Phi = sol.basis.evaluate(theta)
    out = Phi @ sol.quantity(name)
    return out


# --------------------------------------------------------------------------
# distance parameterisation
# --------------------------------------------------------------------------
def cumulative_distance(lat, lon, radius):
    """Cumulative great-circle distance along a sampled path (same units as radius)."""
    lat, lon = np.asarray(lat, float), np.asarray(lon, float)
    a = (np.sin(np.diff(lat) / 2) ** 2
         + np.cos(lat[:-1]) * np.cos(lat[1:]) * np.sin(np.diff(lon) / 2) ** 2)
    seg = 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return np.concatenate([[0.0], np.cumsum(seg)])


def time_at_distance(times, lat, lon, d_grid, radius):
    """Time at which a path reaches each distance in ``d_grid``.

    The cumulative distance is non-decreasing in time, so the inverse is
    taken with monotone (PCHIP) interpolation after dropping repeated
    distances.  Distances beyond the path length are clamped to its end.
    """
    times = np.asarray(times, float)
    d = cumulative_distance(lat, lon, radius)
    d = np.maximum.accumulate(d)
    keep = np.concatenate([[True], np.diff(d) > 1e-9 * max(1.0, d[-1])])
    d, t = d[keep], times[keep]
    if d.size < 2:
        return np.full(np.shape(d_grid), t[0])
    f = interpolate.PchipInterpolator(d, t, extrapolate=False)
    dg = np.clip(np.asarray(d_grid, float), d[0], d[-1])
    return f(dg)


# --------------------------------------------------------------------------
# estimator
# --------------------------------------------------------------------------
class PolynomialChaosExpansion(BaseEstimator, RegressorMixin):
    """Non-intrusive gPC surrogate with the estimator interface.

    ``fit(X, y)`` projects by quadrature when ``X`` are this estimator's
    quadrature nodes (see :meth:`quadrature_nodes`) and falls back to least
    squares on the basis otherwise.  ``y`` may be ``(n,)`` or ``(n, T)``.

    Parameters
    ----------
    variables : list of RandomVariableSpec
    degree : int
        Total polynomial degree.
    n_points : int, optional
        Quadrature points per variable; defaults to ``degree + 2``.
    scheme : {"tensor", "sparse"}
    mixture : {"stieltjes", "transform"}
    """

    def __init__(self, variables=None, degree=4, n_points=None, scheme="tensor",
                 mixture="stieltjes"):
        self.variables = variables
        self.degree = degree
        self.n_points = n_points
        self.scheme = scheme
        self.mixture = mixture

    def _setup(self):
        if not self.variables:
            raise ValueError("variables must be given")
        q = self.n_points if self.n_points is not None else self.degree + 2
        basis = build_basis(self.variables, self.degree, self.mixture, extra_terms=q)
        rule = build_quadrature(self.variables, q, self.scheme, self.mixture, basis.families)
        return basis, rule

    def quadrature_nodes(self):
        return self._setup()[1].nodes

    def fit(self, X, y, sample_weight=None):
        basis, rule = self._setup()
        X = np.atleast_2d(np.asarray(X, float))
        y = np.asarray(y, float)
        self._single_output = y.ndim == 1
        if sample_weight is None and X.shape == rule.nodes.shape \
                and np.allclose(X, rule.nodes, rtol=1e-12, atol=1e-12):
            sol = estimate_coefficients(y, basis, rule)
        else:
            Phi = basis.evaluate(X)
            Y = y[:, None] if y.ndim == 1 else y
            if sample_weight is not None:
                sw = np.sqrt(np.asarray(sample_weight, float))[:, None]
                coef = np.linalg.lstsq(Phi * sw, Y * sw, rcond=None)[0]
            else:
                coef = np.linalg.lstsq(Phi, Y, rcond=None)[0]
            sol = StochasticSolution(basis, np.arange(Y.shape[1], dtype=float), {"z": coef})
        self.basis_ = basis
        self.rule_ = rule
        self.solution_ = sol
        self.coef_ = sol.quantity("z")
        return self

    def predict(self, X):
        out = self.basis_.evaluate(np.atleast_2d(np.asarray(X, float))) @ self.coef_
        return out[:, 0] if self._single_output else out

    @property
    def mean_(self):
        m = self.coef_[0]
        return float(m[0]) if self._single_output else m

    @property
    def variance_(self):
        v = np.sum(self.coef_[1:] ** 2, axis=0)
        return float(v[0]) if self._single_output else v
