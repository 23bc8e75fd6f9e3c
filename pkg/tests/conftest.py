"""Shared fixtures: the bundled aircraft surrogate and small missions."""
import math

import numpy as np
import pytest

from formation_uq.ingestion import data_path, load_aircraft_params
from formation_uq.mission import AircraftEntry, BoundaryConditions, DiscreteState, MissionSpec
from formation_uq.model import initial_course

DESK_CENTER = (43.0, -72.0)


def desk_point(lat_deg, lon_deg, factor=0.2):
    c = DESK_CENTER
    return math.radians(c[0] + factor * (lat_deg - c[0])), math.radians(c[1] + factor * (lon_deg - c[1]))


def boundary(origin_deg, dest_deg, m_i, t_i, desk=True):
    if desk:
        a, b = desk_point(*origin_deg), desk_point(*dest_deg)
    else:
        a = tuple(math.radians(v) for v in origin_deg)
        b = tuple(math.radians(v) for v in dest_deg)
    return BoundaryConditions(a[0], a[1], float(initial_course(a, b)), 240.0, m_i, b[0], b[1], 220.0, t_i)


@pytest.fixture(scope="session")
def a330():
    return load_aircraft_params(data_path("a330_surrogate.toml"))


def two_aircraft_spec(params, r_fuel=0.1, **kw):
    a1 = AircraftEntry("F1", params, boundary((40.64, -73.78), (48.85, 2.35), 215000.0, 0.0))
    a2 = AircraftEntry("F2", params, boundary((42.36, -71.06), (40.48, -3.57), 210000.0, 180.0))
    states = [DiscreteState(1, "solo", (None, None)), DiscreteState(2, "F1 trails F2", (1, None)),
              DiscreteState(3, "solo", (None, None))]
    return MissionSpec([a1, a2], states, [(1, 2), (2, 3)], (1, 2, 3), r_fuel=r_fuel, **kw)


@pytest.fixture(scope="session")
def two_spec(a330):
    return two_aircraft_spec(a330)


def rng(seed=0):
    return np.random.default_rng(seed)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record the one-line verdict of an acceptance criterion."""
    def record(number, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
