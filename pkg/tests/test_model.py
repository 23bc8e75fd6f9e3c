import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formation_uq.errors import (EmptyGrid, NearPoleSingularity, OutOfEnvelope, OutsideWindDomain,
                                 SingularInterpolationMatrix)
from formation_uq.model import (SOLO_OR_LEADER, AircraftState, ControlInput, GridWindData,
                                WindField, beneficiary, chord_squared, cruise_dynamics,
                                cruise_dynamics_jacobian, formation_gate, great_circle_points,
                                initial_course, lift_balance, orthodromic_distance,
                                state_derivative, wind_fit)

JFK = (math.radians(40.64), math.radians(-73.78))
CDG = (math.radians(48.85), math.radians(2.35))
BBOX = (0.5, 1.0, -1.5, 0.2)


def cruise_point(params, v=240.0, m=200000.0, chi=0.9):
    cl = float(params.level_flight_cl(v, m))
    thrust = float(params.drag(v, cl))
    return AircraftState(0.75, -1.2, chi, v, m), ControlInput(thrust, cl, 0.0)


def test_force_balance_gives_steady_heading_and_speed(a330):
    s, u = cruise_point(a330)
    d = state_derivative(s, u, a330, WindField.zero(BBOX))
    assert d[2] == 0.0
    assert abs(d[3]) < 1e-12


def test_beneficiary_without_reduction_matches_solo(a330):
    s, u = cruise_point(a330)
    w = WindField.zero(BBOX)
    solo = state_derivative(s, u, a330, w, SOLO_OR_LEADER)
    ben = state_derivative(s, u, a330, w, beneficiary(0.0))
    np.testing.assert_array_equal(solo, ben)


@pytest.mark.parametrize("r", [0.05, 0.1, 0.2])
def test_beneficiary_fuel_flow_is_scaled(a330, r):
    s, u = cruise_point(a330)
    w = WindField.zero(BBOX)
    solo = state_derivative(s, u, a330, w)[4]
    ben = state_derivative(s, u, a330, w, beneficiary(r))[4]
    assert ben == pytest.approx((1 - r) * solo, rel=1e-14)


def _great_circle_lat_rate(lat, lon, chi, v, radius, h=1e-3):
    """Latitude rate from a point moved along its great circle by rotation."""
    p = np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])
    east = np.array([-math.sin(lon), math.cos(lon), 0.0])
    north = np.cross(p, east)
    t = math.cos(chi) * north + math.sin(chi) * east
    ang = v * h / radius
    lat_of = [math.asin((math.cos(s * ang) * p + math.sin(s * ang) * t)[2]) for s in (-1, 1)]
    return (lat_of[1] - lat_of[0]) / (2 * h)


def test_latitude_rate_matches_rotation_oracle(a330):
    chi = math.radians(54.26)
    s = AircraftState(JFK[0], JFK[1], chi, 240.0, 215000.0)
    u = ControlInput(1e5, 0.5, 0.0)
    d = state_derivative(s, u, a330, WindField.zero((0.0, 1.2, -2.0, 0.5)))
    oracle = _great_circle_lat_rate(JFK[0], JFK[1], chi, 240.0, a330.radius)
    assert d[0] == pytest.approx(oracle, rel=1e-8)


def test_envelope_and_domain_errors(a330):
    s, u = cruise_point(a330)
    w = WindField.zero(BBOX)
    with pytest.raises(OutOfEnvelope):
        state_derivative(AircraftState(s.phi, s.lam, s.chi, 400.0, s.m), u, a330, w)
    with pytest.raises(OutOfEnvelope):
        state_derivative(s, ControlInput(u.thrust, u.cl, 1.0), a330, w)
    with pytest.raises(OutsideWindDomain):
        state_derivative(AircraftState(0.2, s.lam, s.chi, s.v, s.m), u, a330, w)
    with pytest.raises(NearPoleSingularity):
        state_derivative(AircraftState(math.radians(86), s.lam, s.chi, s.v, s.m), u, a330, w)


def test_heading_is_wrapped():
    assert AircraftState(0, 0, 3 * math.pi / 2, 200, 1e5).chi == pytest.approx(-math.pi / 2)
    assert AircraftState(0, 0, -math.pi, 200, 1e5).chi == pytest.approx(math.pi)


def _jet_grid():
    lat = np.radians(np.arange(38.0, 50.1, 1.0))
    lon = np.radians(np.arange(-76.0, -55.9, 2.0))
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    u = 5 + 40 * np.exp(-((np.degrees(la) - 44) / 3) ** 2) + 2 * np.sin(3 * lo)
    v = 3 * np.cos(2 * la) * np.sin(lo)
    return GridWindData(lat, lon, u, v)


@pytest.fixture(scope="module")
def jet():
    return wind_fit(_jet_grid())


def test_wind_fit_reproduces_nodes(jet):
    g = _jet_grid()
    pts = g.points()
    u, v = jet.evaluate(pts[:, 0], pts[:, 1])
    assert np.abs(u - g.u_east.ravel()).max() < 1e-6
    assert np.abs(v - g.v_north.ravel()).max() < 1e-6


@pytest.mark.parametrize("kernel", ["gaussian", "thin_plate"])
def test_constant_wind_reproduced_everywhere(kernel):
    lat = np.radians([40.0, 42.0, 44.0])
    lon = np.radians([-70.0, -65.0, -60.0])
    g = GridWindData(lat, lon, np.full((3, 3), 10.0), np.zeros((3, 3)))
    w = wind_fit(g, kernel)
    q = np.random.default_rng(1).uniform([lat[0], lon[0]], [lat[-1], lon[-1]], (50, 2))
    u, v = w.evaluate(q[:, 0], q[:, 1])
    assert np.abs(u - 10.0).max() < 1e-6
    assert np.abs(v).max() < 1e-6


def test_four_node_grid_interpolates():
    g = GridWindData(np.array([0.7, 0.8]), np.array([-1.2, -1.1]),
                     np.array([[1.0, 2.0], [3.0, 5.0]]), np.array([[0.0, -1.0], [2.0, 0.5]]))
    w = wind_fit(g)
    u, v = w.evaluate(g.points()[:, 0], g.points()[:, 1])
    np.testing.assert_allclose(u, [1, 2, 3, 5], atol=1e-9)
    np.testing.assert_allclose(v, [0, -1, 2, 0.5], atol=1e-9)


def test_linear_in_longitude_field_midpoint():
    lat = np.radians(np.arange(40.0, 46.1, 1.0))
    lon = np.radians(np.arange(-70.0, -59.9, 1.0))
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    slope = 30.0
    g = GridWindData(lat, lon, 5 + slope * (lo - lon[0]), np.zeros_like(la))
    w = wind_fit(g)
    mid = (0.5 * (lat[2] + lat[3]), 0.5 * (lon[4] + lon[5]))
    u, _ = w.evaluate(*mid)
    assert abs(u - (5 + slope * (mid[1] - lon[0]))) < 1e-3


def test_wind_fit_errors():
    with pytest.raises(EmptyGrid):
        wind_fit(GridWindData(np.array([]), np.array([]), np.zeros((0, 0)), np.zeros((0, 0))))
    dup = GridWindData(np.array([0.7, 0.7]), np.array([-1.2, -1.1]), np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(SingularInterpolationMatrix):
        wind_fit(dup)


def test_wind_gradient_matches_finite_differences(jet):
    rng = np.random.default_rng(3)
    la0, la1, lo0, lo1 = jet.valid_bbox
    pts = rng.uniform([la0, lo0], [la1, lo1], (20, 2))
    _, _, g = jet.evaluate_with_gradient(pts[:, 0], pts[:, 1])
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        up = np.array(jet.evaluate(pts[:, 0] + e[0], pts[:, 1] + e[1]))
        dn = np.array(jet.evaluate(pts[:, 0] - e[0], pts[:, 1] - e[1]))
        fd = (up - dn) / (2 * h)
        np.testing.assert_allclose(g[:, :, j].T, fd, rtol=1e-5, atol=1e-4)


def test_jacobian_matches_central_differences(a330, jet):
    rng = np.random.default_rng(11)
    la0, la1, lo0, lo1 = jet.valid_bbox
    n = 100
    x = np.column_stack([rng.uniform(la0 + 0.01, la1 - 0.01, n), rng.uniform(lo0 + 0.01, lo1 - 0.01, n),
                         rng.uniform(-np.pi, np.pi, n), rng.uniform(190, 250, n),
                         rng.uniform(1.6e5, 2.2e5, n)])
    u = np.column_stack([rng.uniform(5e4, 2.5e5, n), rng.uniform(0.2, 0.8, n), rng.uniform(-0.3, 0.3, n)])
    b = 0.1
    f, fx, fu, fb = cruise_dynamics_jacobian(x, u, b, a330, jet)
    np.testing.assert_allclose(f, cruise_dynamics(x, u, b, a330, jet), rtol=1e-14)
    for arr, jac, scale in ((x, fx, np.abs(x) * 1e-7 + 1e-9), (u, fu, np.abs(u) * 1e-7 + 1e-9)):
        for j in range(arr.shape[1]):
            e = np.zeros_like(arr)
            e[:, j] = scale[:, j]
            args = (x + e, u) if arr is x else (x, u + e)
            argm = (x - e, u) if arr is x else (x, u - e)
            fd = (cruise_dynamics(*args, b, a330, jet) - cruise_dynamics(*argm, b, a330, jet)) / (2 * scale[:, j, None])
            ref = np.maximum(np.abs(fd), np.abs(f) * 1e-3 + 1e-12)
            assert np.all(np.abs(jac[:, :, j] - fd) <= 1e-6 * ref + 1e-10)
    fd_b = (cruise_dynamics(x, u, b + 1e-6, a330, jet) - cruise_dynamics(x, u, b - 1e-6, a330, jet)) / 2e-6
    np.testing.assert_allclose(fb, fd_b, rtol=1e-6)


def test_lift_balance_zero_at_level_flight(a330):
    cl = a330.level_flight_cl(230.0, 2e5, 0.2)
    val, grad = lift_balance(230.0, 2e5, cl, 0.2, a330)
    assert abs(val) < 1e-13
    h = 1e-6
    for j in range(4):
        a = np.array([230.0, 2e5, cl, 0.2])
        e = np.zeros(4)
        e[j] = h * max(1.0, abs(a[j]))
        fd = (lift_balance(*(a + e), a330)[0] - lift_balance(*(a - e), a330)[0]) / (2 * e[j])
        assert grad[j] == pytest.approx(fd, rel=1e-6, abs=1e-12)


def _vincenty_sphere(a, b, r):
    la1, lo1 = a
    la2, lo2 = b
    d = lo2 - lo1
    num = math.hypot(math.cos(la2) * math.sin(d),
                     math.cos(la1) * math.sin(la2) - math.sin(la1) * math.cos(la2) * math.cos(d))
    den = math.sin(la1) * math.sin(la2) + math.cos(la1) * math.cos(la2) * math.cos(d)
    return r * math.atan2(num, den)


def test_orthodromic_distance_oracles(a330):
    r = a330.radius
    assert orthodromic_distance(JFK, JFK, r) == 0.0
    assert orthodromic_distance((0.3, 0.1), (-0.3, 0.1 + math.pi), r) == pytest.approx(math.pi * r)
    assert abs(orthodromic_distance(JFK, CDG, r) - _vincenty_sphere(JFK, CDG, r)) < 1.0


coord = st.tuples(st.floats(-1.4, 1.4), st.floats(-3.1, 3.1))


@given(coord, coord)
@settings(max_examples=60, deadline=None)
def test_distance_symmetric_and_nonnegative(a, b):
    d1 = orthodromic_distance(a, b, 1.0)
    d2 = orthodromic_distance(b, a, 1.0)
    assert d1 >= 0.0
    assert d1 == pytest.approx(d2, abs=1e-12)
    assert d1 <= math.pi + 1e-12


@given(coord, coord, coord)
@settings(max_examples=60, deadline=None)
def test_distance_triangle_inequality(a, b, c):
    assert orthodromic_distance(a, c, 1.0) <= (orthodromic_distance(a, b, 1.0)
                                               + orthodromic_distance(b, c, 1.0) + 1e-9)


def test_great_circle_points_lie_on_the_arc(a330):
    lat, lon, course = great_circle_points(JFK, CDG, np.linspace(0, 1, 11))
    total = orthodromic_distance(JFK, CDG, 1.0)
    for f, la, lo in zip(np.linspace(0, 1, 11), lat, lon):
        assert orthodromic_distance(JFK, (la, lo), 1.0) == pytest.approx(f * total, abs=1e-12)
    assert course[0] == pytest.approx(initial_course(JFK, CDG))


def test_chord_squared_matches_distance():
    d = orthodromic_distance(JFK, CDG, 1.0)
    assert chord_squared(*JFK, *CDG) == pytest.approx((2 * math.sin(d / 2)) ** 2)


def test_formation_gate():
    assert formation_gate(0.0, 60.3)
    assert not formation_gate(20 * 60.3, 60.3)
    assert formation_gate(1000.0, 60.3)
    with pytest.raises(ValueError):
        formation_gate(-1.0, 60.3)


@given(st.floats(180, 260), st.floats(1.5e5, 2.3e5), st.floats(0, 3e5), st.floats(0.1, 0.9),
       st.floats(0, 0.3))
@settings(max_examples=50, deadline=None)
def test_mass_never_increases(a330, v, m, thrust, cl, r):
    s = AircraftState(0.75, -1.2, 1.0, v, m)
    u = ControlInput(thrust, cl, 0.0)
    w = WindField.zero(BBOX)
    assert state_derivative(s, u, a330, w, beneficiary(r))[4] <= 0.0


@given(st.floats(-0.3, 0.3))
@settings(max_examples=30, deadline=None)
def test_longitude_shift_invariance(a330, shift):
    w = wind_fit(_jet_grid())
    s, u = cruise_point(a330, chi=0.7)
    s = AircraftState(0.75, -1.2, s.chi, s.v, s.m)
    d0 = state_derivative(s, u, a330, w)
    s2 = AircraftState(s.phi, s.lam + shift, s.chi, s.v, s.m)
    d1 = state_derivative(s2, u, a330, w.shifted(shift))
    np.testing.assert_allclose(d0, d1, rtol=1e-10, atol=1e-14)

