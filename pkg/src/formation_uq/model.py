"""Point-mass cruise dynamics over a spherical Earth with wind.

All quantities are SI and all angles are radians.  The vectorised kernels
(:func:`cruise_dynamics`, :func:`cruise_dynamics_jacobian`,
:func:`lift_balance`) avoid ``abs``/``maximum``-style branching so they stay
valid under complex-step differentiation, which the transcription uses for
second derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from .errors import (
    EmptyGrid,
    NearPoleSingularity,
    OutOfEnvelope,
    OutsideWindDomain,
    SingularInterpolationMatrix,
)

GRAVITY = 9.80665
#: latitude guard for the 1/cos(phi) term of the longitude rate (85 deg)
POLE_CAP = 1.4835298641951802

STATE_NAMES = ("phi", "lam", "chi", "v", "m")
CONTROL_NAMES = ("thrust", "cl", "mu")


@dataclass(frozen=True)
class AircraftState:
    phi: float
    lam: float
    chi: float
    v: float
    m: float

    def __post_init__(self):
        # wrap heading to (-pi, pi]
        chi = float(self.chi)
        wrapped = np.pi - np.mod(np.pi - chi, 2.0 * np.pi)
        object.__setattr__(self, "chi", wrapped)

    def as_array(self):
        return np.array([self.phi, self.lam, self.chi, self.v, self.m], dtype=float)

    @classmethod
    def from_array(cls, x):
        return cls(*map(float, x[:5]))


@dataclass(frozen=True)
class ControlInput:
    thrust: float
    cl: float
    mu: float

    def as_array(self):
        return np.array([self.thrust, self.cl, self.mu], dtype=float)

    @classmethod
    def from_array(cls, u):
        return cls(*map(float, u[:3]))


@dataclass(frozen=True)
class Envelope:
    v_min: float
    v_max: float
    m_min: float
    m_max: float
    thrust_min: float
    thrust_max: float
    cl_min: float
    cl_max: float
    mu_max: float

    def __post_init__(self):
        for lo, hi in (("v_min", "v_max"), ("m_min", "m_max"),
                       ("thrust_min", "thrust_max"), ("cl_min", "cl_max")):
            if not getattr(self, lo) < getattr(self, hi):
                raise ValueError(f"envelope requires {lo} < {hi}")
        if self.mu_max <= 0:
            raise ValueError("envelope requires mu_max > 0")

    def state_bounds(self):
        """Lower/upper bounds on (v, m)."""
        return np.array([self.v_min, self.m_min]), np.array([self.v_max, self.m_max])

    def control_bounds(self):
        lo = np.array([self.thrust_min, self.cl_min, -self.mu_max])
        hi = np.array([self.thrust_max, self.cl_max, self.mu_max])
        return lo, hi


@dataclass(frozen=True)
class AircraftParams:
    """Performance surrogate for one aircraft type.

    The drag polar is parabolic, ``C_D = cd0 + induced_factor * C_L**2``, and
    the thrust specific fuel consumption is a polynomial in true airspeed,
    ``eta(v) = sum(tsfc_coeffs[i] * v**i)`` in kg/(N s).
    """

    name: str
    wing_area: float
    wingspan: float
    cd0: float
    induced_factor: float
    tsfc_coeffs: tuple
    cruise_altitude: float
    air_density: float
    envelope: Envelope
    earth_radius: float = 6371000.0
    pole_cap: float = POLE_CAP

    def __post_init__(self):
        object.__setattr__(self, "tsfc_coeffs", tuple(float(c) for c in self.tsfc_coeffs))
        for name in ("wing_area", "wingspan", "cd0", "induced_factor",
                     "cruise_altitude", "air_density", "earth_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.tsfc_coeffs:
            raise ValueError("tsfc_coeffs must not be empty")

    @property
    def radius(self):
        """Distance from the Earth's centre at cruise altitude."""
        return self.earth_radius + self.cruise_altitude

    def tsfc(self, v):
        return np.polynomial.polynomial.polyval(v, self.tsfc_coeffs)

    def tsfc_derivative(self, v):
        d = np.polynomial.polynomial.polyder(self.tsfc_coeffs)
        if d.size == 0:
            return np.zeros_like(v)
        return np.polynomial.polynomial.polyval(v, d)

    def drag(self, v, cl):
        q = 0.5 * self.air_density * v ** 2
        return q * self.wing_area * (self.cd0 + self.induced_factor * cl ** 2)

    def level_flight_cl(self, v, m, mu=0.0):
        q = 0.5 * self.air_density * v ** 2
        return m * GRAVITY / (q * self.wing_area * np.cos(mu))


@dataclass(frozen=True)
class FlightMode:
    """Mass-flow mode of one aircraft.

    ``beneficiary`` aircraft (trailing or intermediate) burn
    ``(1 - r_fuel)`` times the solo fuel flow.
    """

    beneficiary: bool = False
    r_fuel: float = 0.0

    @property
    def benefit(self):
        return self.r_fuel if self.beneficiary else 0.0


SOLO_OR_LEADER = FlightMode()


def beneficiary(r_fuel):
    return FlightMode(True, float(r_fuel))


# --------------------------------------------------------------------------
# wind
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class GridWindData:
    """Rectangular grid of wind samples (row-major, latitude outer)."""

    lat: np.ndarray
    lon: np.ndarray
    u_east: np.ndarray
    v_north: np.ndarray

    @property
    def bbox(self):
        return (float(self.lat.min()), float(self.lat.max()),
                float(self.lon.min()), float(self.lon.max()))

    def points(self):
        la, lo = np.meshgrid(self.lat, self.lon, indexing="ij")
        return np.column_stack([la.ravel(), lo.ravel()])


def _kernel(kind, r2, eps):
    """Kernel value and derivative with respect to the squared distance."""
    if kind == "gaussian":
        k = np.exp(-r2 / eps ** 2)
        return k, -k / eps ** 2
    if kind == "thin_plate":
        safe = np.where(np.real(r2) > 0.0, r2, 1.0)
        logr2 = np.log(safe)
        k = np.where(np.real(r2) > 0.0, 0.5 * r2 * logr2, 0.0)
        dk = np.where(np.real(r2) > 0.0, 0.5 * (logr2 + 1.0), 0.0)
        return k, dk
    raise ValueError(f"unknown kernel {kind!r}")


@dataclass(frozen=True)
class WindField:
    """Interpolatory RBF fit of gridded east/north wind components.

    The interpolant is a radial kernel expansion plus a linear polynomial
    tail in (lat, lon), so constant and linear fields are reproduced exactly.
    """

    centers: np.ndarray
    weights_east: np.ndarray
    weights_north: np.ndarray
    poly_east: np.ndarray
    poly_north: np.ndarray
    kernel: str
    epsilon: float
    valid_bbox: tuple
    shift: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @classmethod
    def zero(cls, bbox):
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(3),
                   np.zeros(3), "gaussian", 1.0, tuple(bbox))

    def contains(self, lat, lon):
        la0, la1, lo0, lo1 = self.valid_bbox
        lat = np.real(lat)
        lon = np.real(lon)
        return (lat >= la0) & (lat <= la1) & (lon >= lo0) & (lon <= lo1)

    def shifted(self, dlon):
        """The same field translated eastwards by ``dlon``."""
        c = self.centers.copy()
        c[:, 1] += dlon
        la0, la1, lo0, lo1 = self.valid_bbox
        return replace(self, centers=c, valid_bbox=(la0, la1, lo0 + dlon, lo1 + dlon),
                       shift=self.shift + np.array([0.0, dlon]))

    def _poly(self, lat, lon):
        return np.stack([np.ones_like(lat), lat - self.shift[0], lon - self.shift[1]], axis=-1)

    def evaluate(self, lat, lon):
        """Return ``(u_east, v_north)`` at the given points."""
        u, v, _ = self.evaluate_with_gradient(lat, lon)
        return u, v

    __call__ = evaluate

    def evaluate_with_gradient(self, lat, lon):
        """Wind components and their gradient.

        Returns
        -------
        u, v : ndarray
            East and north components, shape of ``lat``.
        grad : ndarray
            Shape ``lat.shape + (2, 2)``; ``grad[..., i, j]`` is the derivative
            of component ``i`` (east, north) with respect to ``j`` (lat, lon).
        """
        lat = np.asarray(lat)
        lon = np.asarray(lon)
        dtype = np.result_type(lat, lon, float)
        shape = np.broadcast(lat, lon).shape
        lat = np.broadcast_to(lat, shape).astype(dtype)
        lon = np.broadcast_to(lon, shape).astype(dtype)
        P = self._poly(lat, lon)
        u = P @ self.poly_east
        v = P @ self.poly_north
        grad = np.zeros(shape + (2, 2), dtype=dtype)
        grad[..., 0, 0] = self.poly_east[1]
        grad[..., 0, 1] = self.poly_east[2]
        grad[..., 1, 0] = self.poly_north[1]
        grad[..., 1, 1] = self.poly_north[2]
        if len(self.centers):
            dla = lat[..., None] - self.centers[:, 0]
            dlo = lon[..., None] - self.centers[:, 1]
            k, dk = _kernel(self.kernel, dla ** 2 + dlo ** 2, self.epsilon)
            u = u + k @ self.weights_east
            v = v + k @ self.weights_north
            g_la = 2.0 * dk * dla
            g_lo = 2.0 * dk * dlo
            grad[..., 0, 0] += g_la @ self.weights_east
            grad[..., 0, 1] += g_lo @ self.weights_east
            grad[..., 1, 0] += g_la @ self.weights_north
            grad[..., 1, 1] += g_lo @ self.weights_north
        return u, v, grad


def wind_fit(grid, kernel="gaussian", epsilon=None):
    """Fit an interpolatory RBF wind field to grid samples.

    Parameters
    ----------
    grid : GridWindData
    kernel : {"gaussian", "thin_plate"}
    epsilon : float, optional
        Gaussian shape parameter in radians.  Defaults to the median
        nearest-neighbour spacing of the nodes.
    """
    pts = grid.points()
    ue = np.asarray(grid.u_east, dtype=float).ravel()
    vn = np.asarray(grid.v_north, dtype=float).ravel()
    if pts.shape[0] == 0:
        raise EmptyGrid("wind grid has no nodes")
    if pts.shape[0] < 4:
        raise EmptyGrid(f"wind grid needs at least 4 nodes, got {pts.shape[0]}")
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2)
    nn = dist[:, 1]
    scale = float(np.ptp(pts, axis=0).max()) or 1.0
    if nn.min() <= 1e-10 * scale:
        raise SingularInterpolationMatrix("duplicate or near-duplicate wind nodes")
    if epsilon is None:
        epsilon = float(np.median(nn))
    shift = pts.mean(axis=0)

    la0, la1, lo0, lo1 = grid.bbox
    proto = WindField(pts, np.zeros(len(pts)), np.zeros(len(pts)), np.zeros(3),
                      np.zeros(3), kernel, float(epsilon), (la0, la1, lo0, lo1), shift)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    K, _ = _kernel(kernel, d2, epsilon)
    P = proto._poly(pts[:, 0], pts[:, 1])
    n = len(pts)
    A = np.zeros((n + 3, n + 3))
    A[:n, :n] = K
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n, 0] = ue
    rhs[:n, 1] = vn
    try:
        sol = linalg.solve(A, rhs)
    except linalg.LinAlgError as exc:
        raise SingularInterpolationMatrix(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularInterpolationMatrix("non-finite RBF weights")
    fitted = replace(proto, weights_east=sol[:n, 0], weights_north=sol[:n, 1],
                     poly_east=sol[n:, 0], poly_north=sol[n:, 1])
    u, v = fitted.evaluate(pts[:, 0], pts[:, 1])
    resid = max(np.abs(u - ue).max(), np.abs(v - vn).max())
    if resid > 1e-6:
        raise SingularInterpolationMatrix(
            f"interpolation matrix too ill-conditioned (node residual {resid:.2e} m/s)")
    return fitted


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------
def cruise_dynamics(x, u, benefit, params, wind):
    """Vectorised right-hand side of the cruise equations of motion.

    ``x[..., :]`` is (phi, lam, chi, v, m), ``u[..., :]`` is (thrust, cl, mu)
    and ``benefit`` is the fractional fuel-flow reduction in effect.
    """
    phi, lam, chi, v, m = (x[..., i] for i in range(5))
    thrust, cl, mu = (u[..., i] for i in range(3))
    R = params.radius
    we, wn, _ = wind.evaluate_with_gradient(phi, lam)
    qS = 0.5 * params.air_density * v ** 2 * params.wing_area
    lift = qS * cl
    drag = qS * (params.cd0 + params.induced_factor * cl ** 2)
    out = np.empty(np.broadcast(phi, thrust).shape + (5,), dtype=np.result_type(x, u, float))
    out[..., 0] = (v * np.cos(chi) + wn) / R
    out[..., 1] = (v * np.sin(chi) + we) / (R * np.cos(phi))
    out[..., 2] = lift * np.sin(mu) / (v * m)
    out[..., 3] = (thrust - drag) / m
    out[..., 4] = -(1.0 - benefit) * thrust * params.tsfc(v)
    return out


def cruise_dynamics_jacobian(x, u, benefit, params, wind):
    """Analytic Jacobian of :func:`cruise_dynamics`.

    Returns ``(f, dfdx, dfdu, dfdb)`` with shapes ``(..., 5)``,
    ``(..., 5, 5)``, ``(..., 5, 3)`` and ``(..., 5)``.
    """
    phi, lam, chi, v, m = (x[..., i] for i in range(5))
    thrust, cl, mu = (u[..., i] for i in range(3))
    R = params.radius
    rho, S = params.air_density, params.wing_area
    cd0, k = params.cd0, params.induced_factor
    we, wn, g = wind.evaluate_with_gradient(phi, lam)
    shape = np.broadcast(phi, thrust).shape
    dtype = np.result_type(x, u, float)
    cphi, sphi = np.cos(phi), np.sin(phi)
    cchi, schi = np.cos(chi), np.sin(chi)
    cmu, smu = np.cos(mu), np.sin(mu)
    eta = params.tsfc(v)
    deta = params.tsfc_derivative(v)
    qS = 0.5 * rho * v ** 2 * S
    cd = cd0 + k * cl ** 2
    drag = qS * cd
    A = v * schi + we

    f = np.empty(shape + (5,), dtype=dtype)
    f[..., 0] = (v * cchi + wn) / R
    f[..., 1] = A / (R * cphi)
    f[..., 2] = 0.5 * rho * v * S * cl * smu / m
    f[..., 3] = (thrust - drag) / m
    f[..., 4] = -(1.0 - benefit) * thrust * eta

    fx = np.zeros(shape + (5, 5), dtype=dtype)
    fx[..., 0, 0] = g[..., 1, 0] / R
    fx[..., 0, 1] = g[..., 1, 1] / R
    fx[..., 0, 2] = -v * schi / R
    fx[..., 0, 3] = cchi / R
    fx[..., 1, 0] = g[..., 0, 0] / (R * cphi) + A * sphi / (R * cphi ** 2)
    fx[..., 1, 1] = g[..., 0, 1] / (R * cphi)
    fx[..., 1, 2] = v * cchi / (R * cphi)
    fx[..., 1, 3] = schi / (R * cphi)
    fx[..., 2, 3] = 0.5 * rho * S * cl * smu / m
    fx[..., 2, 4] = -f[..., 2] / m
    fx[..., 3, 3] = -rho * v * S * cd / m
    fx[..., 3, 4] = -f[..., 3] / m
    fx[..., 4, 3] = -(1.0 - benefit) * thrust * deta

    fu = np.zeros(shape + (5, 3), dtype=dtype)
    fu[..., 2, 1] = 0.5 * rho * v * S * smu / m
    fu[..., 2, 2] = 0.5 * rho * v * S * cl * cmu / m
    fu[..., 3, 0] = 1.0 / m
    fu[..., 3, 1] = -qS * 2.0 * k * cl / m
    fu[..., 4, 0] = -(1.0 - benefit) * eta

    fb = np.zeros(shape + (5,), dtype=dtype)
    fb[..., 4] = thrust * eta
    return f, fx, fu, fb


def lift_balance(v, m, cl, mu, params):
    """Vertical equilibrium residual ``L cos(mu) / (m g) - 1`` and its gradient.

    The gradient is with respect to (v, m, cl, mu).
    """
    c = 0.5 * params.air_density * params.wing_area / GRAVITY
    cmu = np.cos(mu)
    val = c * v ** 2 * cl * cmu / m - 1.0
    grad = np.stack([
        2.0 * c * v * cl * cmu / m,
        -c * v ** 2 * cl * cmu / m ** 2,
        c * v ** 2 * cmu / m,
        -c * v ** 2 * cl * np.sin(mu) / m,
    ], axis=-1)
    return val, grad


def state_derivative(s, u, p, w, mode=SOLO_OR_LEADER):
    """Time derivative of an :class:`AircraftState`.

    Checks the envelope, the wind domain and the pole guard before
    evaluating the equations of motion.

    Returns
    -------
    ndarray of shape (5,)
        (phi_dot, lam_dot, chi_dot, v_dot, m_dot).
    """
    if abs(s.phi) > p.pole_cap:
        raise NearPoleSingularity(f"|phi|={abs(s.phi):.4f} rad exceeds the pole cap")
    env = p.envelope
    checks = [
        (env.v_min <= s.v <= env.v_max, "v"),
        (env.m_min <= s.m <= env.m_max, "m"),
        (env.thrust_min <= u.thrust <= env.thrust_max, "thrust"),
        (env.cl_min <= u.cl <= env.cl_max, "cl"),
        (abs(u.mu) <= env.mu_max, "mu"),
    ]
    for ok, name in checks:
        if not ok:
            raise OutOfEnvelope(f"{name} outside the flight envelope")
    if not w.contains(s.phi, s.lam):
        raise OutsideWindDomain("position outside the wind field bounding box")
    return cruise_dynamics(s.as_array(), u.as_array(), mode.benefit, p, w)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------
def orthodromic_distance(a, b, radius):
    """Great-circle distance between ``a = (lat, lon)`` and ``b`` (haversine)."""
    la1, lo1 = np.asarray(a[0]), np.asarray(a[1])
    la2, lo2 = np.asarray(b[0]), np.asarray(b[1])
    h = np.sin(0.5 * (la2 - la1)) ** 2 + np.cos(la1) * np.cos(la2) * np.sin(0.5 * (lo2 - lo1)) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def initial_course(a, b):
    """Initial heading of the great circle from ``a`` to ``b`` (clockwise from north)."""
    la1, lo1 = a
    la2, lo2 = b
    dlo = lo2 - lo1
    return np.arctan2(np.sin(dlo) * np.cos(la2),
                      np.cos(la1) * np.sin(la2) - np.sin(la1) * np.cos(la2) * np.cos(dlo))


def _unit(lat, lon):
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def great_circle_points(a, b, fractions):
    """Points at the given fractions of the way along the great circle a -> b.

    Returns ``(lat, lon, course)`` arrays; ``course`` is the local heading.
    """
    fractions = np.asarray(fractions, dtype=float)
    pa, pb = _unit(*a), _unit(*b)
    omega = np.arccos(np.clip(pa @ pb, -1.0, 1.0))
    if omega < 1e-15:
        lat = np.full_like(fractions, a[0])
        lon = np.full_like(fractions, a[1])
        return lat, lon, np.zeros_like(fractions)
    s = np.sin(omega)
    p = (np.sin((1 - fractions) * omega)[:, None] * pa + np.sin(fractions * omega)[:, None] * pb) / s
    lat = np.arcsin(np.clip(p[:, 2], -1.0, 1.0))
    lon = np.arctan2(p[:, 1], p[:, 0])
    lon = a[1] + np.mod(lon - a[1] + np.pi, 2 * np.pi) - np.pi
    course = np.array([initial_course((la, lo), b) for la, lo in zip(lat, lon)])
    if fractions.size:
        # the final point has no forward course; continue the previous one
        at_end = fractions >= 1.0 - 1e-12
        if at_end.any():
            pre = great_circle_points(a, b, [1.0 - 1e-6])[2][0]
            course[at_end] = pre
    return lat, lon, course


def chord_squared(lat_a, lon_a, lat_b, lon_b):
    """Squared chord length on the unit sphere (smooth proxy of separation)."""
    return 2.0 - 2.0 * (np.sin(lat_a) * np.sin(lat_b)
                        + np.cos(lat_a) * np.cos(lat_b) * np.cos(lon_a - lon_b))


def formation_gate(distance_along_stream, wingspan):
    """True when the stream-wise separation is short enough for a benefit."""
    if distance_along_stream < 0:
        raise ValueError("distance must be non-negative")
    return bool(distance_along_stream < 20.0 * wingspan)
