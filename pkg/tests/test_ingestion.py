import math
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from formation_uq.errors import NonFiniteEntry, RaggedGrid, SchemaError, UnitRangeError
from formation_uq.ingestion import (data_path, format_clock, jet_stream_grid, load_fixtures,
                                    load_gmm, load_mission, load_wind_grid, mission_from_dict,
                                    mission_to_dict, parse_clock, read_document, write_wind_grid)
from formation_uq.model import wind_fit

PKG = Path(__file__).resolve().parents[1] / "src" / "formation_uq"


@pytest.fixture(scope="module")
def reference_mission():
    return load_mission(data_path("transatlantic_mission.toml"))


def test_reference_mission_flight1(reference_mission):
    b = reference_mission.aircraft[0].boundary
    assert math.degrees(b.phi_i) == pytest.approx(40.64, abs=1e-9)
    assert math.degrees(b.lam_i) == pytest.approx(-73.78, abs=1e-9)
    assert b.m_i == 215000.0
    assert math.degrees(b.chi_i) == pytest.approx(54.26, abs=1e-9)


def test_departure_offsets(reference_mission):
    assert [a.boundary.t_i for a in reference_mission.aircraft] == [0.0, 900.0, 2100.0]
    assert reference_mission.phase_template == (1, 2, 3, 4, 5)


def test_clock_parsing():
    assert parse_clock("10:15") == 36900.0
    assert parse_clock("00:00:59") == 59.0
    assert format_clock(36930.0) == "10:15:30"
    for bad in ("10", "1a:00", 5):
        with pytest.raises(SchemaError):
            parse_clock(bad)
    with pytest.raises(UnitRangeError):
        parse_clock("10:75")


def _doc():
    return read_document(data_path("desk_experiment_b.toml"))


def test_missing_heading_names_field():
    d = _doc()
    del d["aircraft"][1]["chi_i_deg"]
    with pytest.raises(SchemaError) as exc:
        mission_from_dict(d, base=data_path(""))
    assert exc.value.field == "aircraft[1].chi_i_deg"
    assert "chi_i_deg" in str(exc.value)


@pytest.mark.parametrize("edit, err", [
    (lambda d: d["aircraft"][0].__setitem__("phi_i_deg", 95.0), UnitRangeError),
    (lambda d: d["aircraft"][0].__setitem__("m_i", "heavy"), SchemaError),
    (lambda d: d["aircraft"][0].__setitem__("v_i", -1.0), UnitRangeError),
    (lambda d: d.__setitem__("r_fuel", 1.5), UnitRangeError),
    (lambda d: d["aircraft"][1].__setitem__("id", "F1"), SchemaError),
    (lambda d: d["states"][1].__setitem__("follows", {"F1": "F9"}), SchemaError),
    (lambda d: d.__setitem__("transitions", [[1, 2, 3]]), SchemaError),
    (lambda d: d.__setitem__("aircraft", []), SchemaError),
])
def test_schema_errors(edit, err):
    d = _doc()
    edit(d)
    with pytest.raises(err):
        mission_from_dict(d, base=data_path(""))


def test_unparsable_file(tmp_path):
    p = tmp_path / "m.toml"
    p.write_text("name = [")
    with pytest.raises(SchemaError):
        load_mission(p)
    with pytest.raises(SchemaError):
        load_mission(tmp_path / "absent.toml")


def test_mission_round_trip(reference_mission):
    d = mission_to_dict(reference_mission, origin_clock="10:15")
    back = mission_from_dict(d)
    for a, b in zip(reference_mission.aircraft, back.aircraft):
        assert a.id == b.id and a.delay_variable == b.delay_variable
        assert a.params.envelope.mu_max == pytest.approx(b.params.envelope.mu_max, abs=1e-15)
        same_mu = replace(b.params.envelope, mu_max=a.params.envelope.mu_max)
        assert replace(b.params, envelope=same_mu) == a.params
        for f in ("phi_i", "lam_i", "chi_i", "v_i", "m_i", "phi_f", "lam_f", "v_f", "t_i"):
            assert getattr(a.boundary, f) == pytest.approx(getattr(b.boundary, f), abs=1e-12)
    assert back.discrete_states == reference_mission.discrete_states
    assert back.transition_rules == reference_mission.transition_rules
    assert back.phase_template == reference_mission.phase_template
    assert back.doc_costs == reference_mission.doc_costs
    assert mission_to_dict(back, origin_clock="10:15") == d


# ----------------------------------------------------------------------- wind
def _write(tmp_path, text):
    p = tmp_path / "w.csv"
    p.write_text("lat_deg,lon_deg,u_east_mps,v_north_mps\n" + text)
    return p


def test_two_by_two_bbox(tmp_path):
    g = load_wind_grid(_write(tmp_path, "40,-70,1,0\n40,-60,2,0\n45,-70,3,0\n45,-60,4,0\n"))
    np.testing.assert_allclose(g.bbox, np.radians([40, 45, -70, -60]))
    assert g.u_east.tolist() == [[1, 2], [3, 4]]


def test_nan_cell_reports_row(tmp_path):
    p = _write(tmp_path, "40,-70,1,0\n40,-60,nan,0\n45,-70,3,0\n45,-60,4,0\n")
    with pytest.raises(NonFiniteEntry) as exc:
        load_wind_grid(p)
    assert exc.value.row == 2
    with pytest.raises(NonFiniteEntry):
        load_wind_grid(_write(tmp_path, "40,-70,x,0\n"))


def test_ragged_grid(tmp_path):
    with pytest.raises(RaggedGrid):
        load_wind_grid(_write(tmp_path, "40,-70,1,0\n40,-60,2,0\n45,-70,3,0\n"))
    with pytest.raises(RaggedGrid):
        load_wind_grid(_write(tmp_path, "40,-70,1,0\n40,-70,2,0\n45,-60,3,0\n45,-60,4,0\n"))
    with pytest.raises(RaggedGrid):
        load_wind_grid(_write(tmp_path, ""))
    p = tmp_path / "c.csv"
    p.write_text("lat,lon\n1,2\n")
    with pytest.raises(SchemaError):
        load_wind_grid(p)


def test_jet_fixture_fits():
    g = load_wind_grid(data_path("jetstream_wind.csv"))
    assert 45.0 <= np.max(g.u_east) <= 60.0
    w = wind_fit(g)
    i, j = np.unravel_index(np.argmax(g.u_east), g.u_east.shape)
    ue, vn = w.evaluate(g.lat[i], g.lon[j])
    assert ue == pytest.approx(g.u_east[i, j], abs=1e-6)
    assert load_wind_grid(data_path("desk_jetstream_wind.csv")).u_east.max() > 40.0


def test_wind_write_read_round_trip(tmp_path):
    g = jet_stream_grid(np.arange(40, 51, 2.5), np.arange(-70, -49, 5.0))
    write_wind_grid(tmp_path / "j.csv", g)
    back = load_wind_grid(tmp_path / "j.csv")
    np.testing.assert_allclose(back.u_east, g.u_east, atol=1e-6)
    np.testing.assert_allclose(back.lat, g.lat, atol=1e-7)


# ------------------------------------------------------------------- fixtures
def test_fixtures_load():
    f = load_fixtures()
    assert f.transatlantic_mission.n_aircraft == 3
    assert set(f.airport_delay_gmm) == {"JFK", "BOS"}
    assert f.airport_delay_gmm["JFK"].weights.tolist() == [0.39, 0.17, 0.27, 0.17]
    assert f.aircraft_params.wingspan == pytest.approx(60.3)


def test_gmm_loader_errors(tmp_path):
    with pytest.raises(SchemaError):
        load_gmm(data_path("airport_delay_gmm.json"), "LGA")
    p = tmp_path / "g.json"
    p.write_text('{"weights": [1.0], "means": [0.0]}')
    with pytest.raises(SchemaError) as exc:
        load_gmm(p)
    assert "stds" in str(exc.value)


def test_no_degree_conversion_outside_adapters():
    pattern = re.compile(r"np\.(degrees|radians|deg2rad|rad2deg)|math\.(degrees|radians)"
                         r"|pi\s*/\s*180|180\s*/\s*(np\.|math\.)?pi")
    offenders = []
    for path in PKG.rglob("*.py"):
        if path.name == "ingestion.py":
            continue
        for n, line in enumerate(path.read_text().splitlines(), 1):
            if pattern.search(line):
                offenders.append(f"{path.name}:{n}")
    assert offenders == []
