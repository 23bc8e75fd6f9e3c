"""Gaussian-mixture models of departure delays (minutes)."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin

from .errors import DegenerateComponent, TooFewSamples
from .uq import RandomVariableSpec

STD_FLOOR_MIN = 0.1
DEFAULT_CLIP = (-60.0, 240.0)


@dataclass
class DelaySample:
    """Finite delay records in minutes, clipped to ``clip``."""
    delays: np.ndarray
    clip: tuple = DEFAULT_CLIP

    def __post_init__(self):
        d = np.asarray(self.delays, float).ravel()
        if not np.all(np.isfinite(d)):
            raise ValueError("delay records must be finite")
        lo, hi = self.clip
        self.delays = np.clip(d, lo, hi)


@dataclass
class GmmModel:
    """One-dimensional Gaussian mixture with fit metadata."""
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    log_likelihood: float = float("nan")
    iterations: int = 0
    seed: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        self.means = np.asarray(self.means, float)
        self.stds = np.asarray(self.stds, float)
        if not (self.weights.shape == self.means.shape == self.stds.shape):
            raise ValueError("weights, means and stds must have equal length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(self.stds <= 0):
            raise ValueError("stds must be positive")

    @property
    def n_components(self):
        return self.weights.size

    def log_pdf(self, x):
        x = np.asarray(x, float)[..., None]
        comp = (np.log(np.where(self.weights > 0, self.weights, 1.0))
                - np.log(self.stds) - 0.5 * math.log(2 * math.pi)
                - 0.5 * ((x - self.means) / self.stds) ** 2)
        comp = np.where(self.weights > 0, comp, -np.inf)
        return logsumexp(comp, axis=-1)

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "stds": self.stds.tolist(), "log_likelihood": self.log_likelihood,
                "iterations": self.iterations, "seed": self.seed}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        w = np.asarray(d["weights"], float)
        if abs(w.sum() - 1.0) < 1e-6:
            w = w / w.sum()
        return cls(w, d["means"], d["stds"], d.get("log_likelihood", float("nan")),
                   d.get("iterations", 0), d.get("seed", 0))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_variable(self, id):
        """Random-variable description for the gPC machinery."""
        keep = self.weights > 0
        return RandomVariableSpec.mixture(id, self.weights[keep], self.means[keep], self.stds[keep])


def mixture_stats(m: GmmModel):
    """Mean and standard deviation of the mixture."""
    mean = float(m.weights @ m.means)
    var = float(m.weights @ (m.stds ** 2 + m.means ** 2)) - mean ** 2
    return mean, math.sqrt(max(var, 0.0))


def sample(m: GmmModel, n, seed):
    """``n`` i.i.d. draws using a generator seeded with ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(m.n_components, size=n, p=m.weights)
    return rng.normal(m.means[comp], m.stds[comp])


@dataclass(frozen=True)
class EmConfig:
    """EM settings: restarts with k-means++ seeding, tolerance and floor."""
    n_restarts: int = 8
    max_iter: int = 500
    tol: float = 1e-8
    std_floor: float = STD_FLOOR_MIN
    seed: int = 0
    workers: int = 1


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(x[rng.choice(x.size, p=d2 / total)])
    return np.array(centers)


def _init_params(x, k, rng, floor):
    centers = _kmeanspp(x, k, rng)
    label = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    w = np.array([np.mean(label == j) for j in range(k)])
    mu = centers.copy()
    sd = np.full(k, x.std())
    for j in range(k):
        pts = x[label == j]
        if pts.size >= 2:
            mu[j] = pts.mean()
            sd[j] = pts.std()
    w = np.maximum(w, 1.0 / x.size)
    return w / w.sum(), mu, np.maximum(sd, floor)


def _log_components(x, w, mu, sd):
    return (np.log(w) - np.log(sd) - 0.5 * math.log(2 * math.pi)
            - 0.5 * ((x[:, None] - mu) / sd) ** 2)


def _em_run(x, k, cfg, seed):
    rng = np.random.default_rng(seed)
    w, mu, sd = _init_params(x, k, rng, cfg.std_floor)
    n = x.size
    history = []
    ll_prev = -np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        lc = _log_components(x, w, mu, sd)
        lse = logsumexp(lc, axis=1)
        ll = float(lse.sum())
        # EM never decreases the likelihood (the floor is a constrained M-step)
        assert ll >= ll_prev - 1e-9 * max(1.0, abs(ll)), "EM log-likelihood decreased"
        history.append(ll)
        if ll - ll_prev < cfg.tol * max(1.0, abs(ll)) and it > 1:
            converged = True
            break
        ll_prev = ll
        resp = np.exp(lc - lse[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-8 * n):
            raise DegenerateComponent(f"component {int(np.argmin(nk))} lost all support")
        w = nk / n
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk
        sd = np.maximum(np.sqrt(var), cfg.std_floor)
    lc = _log_components(x, w, mu, sd)
    ll = float(logsumexp(lc, axis=1).sum())
    order = np.argsort(mu, kind="stable")
    w = w[order] / w.sum()
    return GmmModel(w, mu[order], sd[order], ll, it, seed, converged, history)


def em_fit(samples, k, cfg: EmConfig | None = None) -> GmmModel:
    """Fit a ``k``-component mixture by EM with restarts; best likelihood wins.

    Restarts run on ``cfg.workers`` threads; the winner is the highest
    log-likelihood with ties broken by restart index, so the result does
    not depend on the worker count.
    """
    cfg = cfg or EmConfig()
    x = np.asarray(samples.delays if isinstance(samples, DelaySample) else samples, float).ravel()
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.size < 10 * k:
        raise TooFewSamples(f"{x.size} samples for {k} components (need {10 * k})")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)]

    def run(seed):
        try:
            return _em_run(x, k, cfg, seed)
        except DegenerateComponent as exc:
            return exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    good = [r for r in results if isinstance(r, GmmModel)]
    if not good:
        raise DegenerateComponent(f"every restart collapsed a component: {results[0]}")
    best = good[0]
    for r in good[1:]:
        if r.log_likelihood > best.log_likelihood:
            best = r
    return best


def bic(model: GmmModel, samples):
    x = np.asarray(samples, float).ravel()
    ll = float(model.log_pdf(x).sum())
    n_params = 3 * model.n_components - 1
    return n_params * math.log(x.size) - 2.0 * ll


class GaussianMixtureDelays(BaseEstimator, DensityMixin):
    """Estimator wrapper around :func:`em_fit`.

    Parameters
    ----------
    n_components : int
        Number of components (4 by default).
    select_k : bool
        Choose the component count in ``1..n_components`` by BIC instead.
    """

    def __init__(self, n_components=4, n_restarts=8, max_iter=500, tol=1e-8,
                 std_floor=STD_FLOOR_MIN, random_state=0, select_k=False, n_jobs=1):
        self.n_components = n_components
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.tol = tol
        self.std_floor = std_floor
        self.random_state = random_state
        self.select_k = select_k
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        x = np.asarray(X, float).ravel()
        cfg = EmConfig(self.n_restarts, self.max_iter, self.tol, self.std_floor,
                       self.random_state, self.n_jobs)
        if self.select_k:
            fits = []
            for k in range(1, self.n_components + 1):
                if x.size < 10 * k:
                    break
                m = em_fit(x, k, cfg)
                fits.append((bic(m, x), k, m))
            self.model_ = min(fits, key=lambda t: (t[0], t[1]))[2]
        else:
            self.model_ = em_fit(x, self.n_components, cfg)
        m = self.model_
        self.weights_, self.means_, self.stds_ = m.weights, m.means, m.stds
        self.log_likelihood_ = m.log_likelihood
        self.n_iter_ = m.iterations
        self.converged_ = m.converged
        return self

    def score_samples(self, X):
        return self.model_.log_pdf(np.asarray(X, float).ravel())

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n, seed=0):
        return sample(self.model_, n, seed)

    def mixture_stats(self):
        return mixture_stats(self.model_)

    def to_variable(self, id):
        return self.model_.to_variable(id)
