"""Input adapters: mission files, wind grids, aircraft data, delay records.

These loaders are the only place where file units (degrees, clock times,
minutes) are converted to the internal SI/radian representation.
"""
from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .delays import DEFAULT_CLIP, DelaySample, GmmModel
from .errors import NonFiniteEntry, RaggedGrid, SchemaError, UnitRangeError
from .mission import (DEFAULT_DOC_COSTS, AircraftEntry, BoundaryConditions, DiscreteState,
                      MissionSpec, ReferenceScales)
from .model import AircraftParams, Envelope, GridWindData, wind_fit

WIND_COLUMNS = ("lat_deg", "lon_deg", "u_east_mps", "v_north_mps")
TRANSTATS_DELAY = "DEP_DELAY"


# --------------------------------------------------------------------------
# generic helpers
# --------------------------------------------------------------------------
def read_document(path) -> dict:
    """Parse a TOML or JSON file into a dict (by extension)."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise SchemaError(f"cannot parse {path.name}: {exc}") from exc


def _get(d, key, where, kind=float):
    if key not in d:
        raise SchemaError("missing required field", f"{where}.{key}")
    return _as(d[key], kind, f"{where}.{key}")


def _opt(d, key, where, default, kind=float):
    return _as(d[key], kind, f"{where}.{key}") if key in d else default


def _as(value, kind, field):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"expected a number, got {value!r}", field)
        v = float(value)
        if not math.isfinite(v):
            raise UnitRangeError(f"non-finite value {value!r}", field)
        return v
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"expected an integer, got {value!r}", field)
        return value
    if kind is str:
        if not isinstance(value, str):
            raise SchemaError(f"expected a string, got {value!r}", field)
        return value
    if kind is list:
        if not isinstance(value, list):
            raise SchemaError(f"expected a list, got {value!r}", field)
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise SchemaError(f"expected a table, got {value!r}", field)
        return value
    raise TypeError(kind)


def _in_range(v, lo, hi, field, unit):
    if not lo <= v <= hi:
        raise UnitRangeError(f"{v} {unit} outside [{lo}, {hi}]", field)
    return v


def _positive(v, field):
    if not v > 0:
        raise UnitRangeError(f"{v} must be positive", field)
    return v


def _angle(d, key, where, bound):
    return math.radians(_in_range(_get(d, key, where), -bound, bound, f"{where}.{key}", "deg"))


def parse_clock(text, field="departure"):
    """``"HH:MM"`` or ``"HH:MM:SS"`` to seconds after midnight."""
    if not isinstance(text, str):
        raise SchemaError(f"expected a clock time string, got {text!r}", field)
    parts = text.strip().split(":")
    if len(parts) not in (2, 3) or not all(p.isdigit() for p in parts):
        raise SchemaError(f"clock time {text!r} is not HH:MM[:SS]", field)
    h, m = int(parts[0]), int(parts[1])
    s = int(parts[2]) if len(parts) == 3 else 0
    if h > 47 or m > 59 or s > 59:
        raise UnitRangeError(f"clock time {text!r} out of range", field)
    return 3600.0 * h + 60.0 * m + s


def format_clock(seconds):
    s = int(round(seconds))
    return f"{s // 3600:02d}:{s % 3600 // 60:02d}:{s % 60:02d}"


def output_degrees(angles):
    """Radians to degrees for reporting; the output-side unit adapter."""
    return np.degrees(angles)


def resolve(path, base=None) -> Path:
    """Resolve ``path`` against ``base``; ``pkg:`` prefixes name bundled data."""
    text = str(path)
    if text.startswith("pkg:"):
        return data_path(text[4:])
    p = Path(text)
    if not p.is_absolute() and base is not None:
        p = Path(base) / p
    return p


def data_path(name) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("formation_uq") / "data" / name))


# --------------------------------------------------------------------------
# aircraft parameters
# --------------------------------------------------------------------------
def aircraft_params_from_dict(d, where="aircraft_params") -> AircraftParams:
    env = _get(d, "envelope", where, dict)
    ew = f"{where}.envelope"
    envelope = Envelope(
        v_min=_positive(_get(env, "v_min", ew), f"{ew}.v_min"),
        v_max=_get(env, "v_max", ew),
        m_min=_positive(_get(env, "m_min", ew), f"{ew}.m_min"),
        m_max=_get(env, "m_max", ew),
        thrust_min=_get(env, "thrust_min", ew),
        thrust_max=_get(env, "thrust_max", ew),
        cl_min=_get(env, "cl_min", ew),
        cl_max=_get(env, "cl_max", ew),
        mu_max=_angle(env, "mu_max_deg", ew, 90.0),
    )
    coeffs = _get(d, "tsfc_coeffs", where, list)
    tsfc = tuple(_as(c, float, f"{where}.tsfc_coeffs") for c in coeffs)
    fields = {}
    for key in ("wing_area", "wingspan", "cd0", "induced_factor", "cruise_altitude", "air_density"):
        fields[key] = _positive(_get(d, key, where), f"{where}.{key}")
    try:
        return AircraftParams(name=_opt(d, "name", where, "aircraft", str), tsfc_coeffs=tsfc,
                              envelope=envelope,
                              earth_radius=_opt(d, "earth_radius", where, 6371000.0), **fields)
    except ValueError as exc:
        raise SchemaError(str(exc), where) from exc


def aircraft_params_to_dict(p: AircraftParams) -> dict:
    e = p.envelope
    return {"name": p.name, "wing_area": p.wing_area, "wingspan": p.wingspan, "cd0": p.cd0,
            "induced_factor": p.induced_factor, "tsfc_coeffs": list(p.tsfc_coeffs),
            "cruise_altitude": p.cruise_altitude, "air_density": p.air_density,
            "earth_radius": p.earth_radius,
            "envelope": {"v_min": e.v_min, "v_max": e.v_max, "m_min": e.m_min, "m_max": e.m_max,
                         "thrust_min": e.thrust_min, "thrust_max": e.thrust_max,
                         "cl_min": e.cl_min, "cl_max": e.cl_max,
                         "mu_max_deg": math.degrees(e.mu_max)}}


def load_aircraft_params(path) -> AircraftParams:
    """Aircraft performance surrogate from a TOML or JSON file."""
    return aircraft_params_from_dict(read_document(path), Path(path).name)


# --------------------------------------------------------------------------
# wind grid
# --------------------------------------------------------------------------
def load_wind_grid(path) -> GridWindData:
    """Wind samples from a ``lat_deg,lon_deg,u_east_mps,v_north_mps`` CSV.

    Rows must enumerate a full rectangular grid (any order); coordinates
    are converted to radians.
    """
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in WIND_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"missing columns {missing}", path.name)
        rows = []
        for i, row in enumerate(reader, start=1):
            try:
                vals = [float(row[c]) for c in WIND_COLUMNS]
            except (TypeError, ValueError) as exc:
                raise NonFiniteEntry(f"row {i}: unparsable value ({exc})", row=i) from exc
            if not all(math.isfinite(v) for v in vals):
                raise NonFiniteEntry(f"row {i}: non-finite value", row=i)
            rows.append(vals)
    if not rows:
        raise RaggedGrid("wind file has no rows")
    return grid_from_rows(np.array(rows))


def grid_from_rows(a) -> GridWindData:
    """Rectangular :class:`GridWindData` from ``(lat_deg, lon_deg, u, v)`` rows."""
    lat = np.unique(a[:, 0])
    lon = np.unique(a[:, 1])
    if lat.size * lon.size != a.shape[0]:
        raise RaggedGrid(f"{a.shape[0]} rows do not form a {lat.size}x{lon.size} grid")
    i = np.searchsorted(lat, a[:, 0])
    j = np.searchsorted(lon, a[:, 1])
    u = np.full((lat.size, lon.size), np.nan)
    v = np.full_like(u, np.nan)
    u[i, j] = a[:, 2]
    v[i, j] = a[:, 3]
    if np.isnan(u).any():
        raise RaggedGrid("duplicate grid coordinates leave holes in the grid")
    return GridWindData(np.radians(lat), np.radians(lon), u, v)


def write_wind_grid(path, grid: GridWindData):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(WIND_COLUMNS)
        for i, la in enumerate(grid.lat):
            for j, lo in enumerate(grid.lon):
                wr.writerow([f"{math.degrees(la):.6f}", f"{math.degrees(lo):.6f}",
                             f"{grid.u_east[i, j]:.6f}", f"{grid.v_north[i, j]:.6f}"])


def jet_stream_grid(lat_deg, lon_deg, core_lat_deg=47.0, core_speed=50.0, width_deg=4.0,
                    meander_deg=1.5, wavelength_deg=40.0, background=5.0) -> GridWindData:
    """Parametric eastbound jet: Gaussian speed profile about a meandering core.

    ``u = background + core_speed * exp(-(d / width)^2)`` with ``d`` the
    latitude offset from ``core(lon) = core_lat + meander * sin(2 pi lon /
    wavelength)``; the north component follows the core direction.
    """
    la, lo = np.meshgrid(np.asarray(lat_deg, float), np.asarray(lon_deg, float), indexing="ij")
    k = 2.0 * np.pi / wavelength_deg
    core = core_lat_deg + meander_deg * np.sin(k * lo)
    jet = core_speed * np.exp(-((la - core) / width_deg) ** 2)
    slope = meander_deg * k * np.cos(k * lo) * np.cos(np.radians(la))
    u = background + jet
    v = jet * slope
    return GridWindData(np.radians(np.asarray(lat_deg, float)),
                        np.radians(np.asarray(lon_deg, float)), u, v)


# --------------------------------------------------------------------------
# mission files
# --------------------------------------------------------------------------
def load_mission(path) -> MissionSpec:
    """Mission description from TOML or JSON (see :func:`mission_from_dict`)."""
    path = Path(path)
    return mission_from_dict(read_document(path), base=path.parent)


def mission_from_dict(d, base=None) -> MissionSpec:
    """Validated :class:`MissionSpec` from a mission document.

    Angles are given in degrees (``*_deg``), departures as clock times;
    the mission origin is the earliest scheduled departure.
    """
    where = "mission"
    params_src = d.get("aircraft_params")
    default_params = None if params_src is None else _params(params_src, base, "aircraft_params")
    raw_ac = _get(d, "aircraft", where, list)
    if not raw_ac:
        raise SchemaError("at least one aircraft is required", "aircraft")
    clocks = []
    for i, a in enumerate(raw_ac):
        aw = f"aircraft[{i}]"
        _as(a, dict, aw)
        clocks.append(parse_clock(_get(a, "departure", aw, str), f"{aw}.departure"))
    origin = min(clocks)
    ids = []
    entries = []
    for i, a in enumerate(raw_ac):
        aw = f"aircraft[{i}]"
        aid = _get(a, "id", aw, str)
        if aid in ids:
            raise SchemaError(f"duplicate aircraft id {aid!r}", f"{aw}.id")
        ids.append(aid)
        if "params" in a:
            prm = _params(a["params"], base, f"{aw}.params")
        elif default_params is not None:
            prm = default_params
        else:
            raise SchemaError("no aircraft parameters given", f"{aw}.params")
        bc = BoundaryConditions(
            phi_i=_angle(a, "phi_i_deg", aw, 90.0), lam_i=_angle(a, "lam_i_deg", aw, 180.0),
            chi_i=_angle(a, "chi_i_deg", aw, 360.0),
            v_i=_positive(_get(a, "v_i", aw), f"{aw}.v_i"),
            m_i=_positive(_get(a, "m_i", aw), f"{aw}.m_i"),
            phi_f=_angle(a, "phi_f_deg", aw, 90.0), lam_f=_angle(a, "lam_f_deg", aw, 180.0),
            v_f=_positive(_get(a, "v_f", aw), f"{aw}.v_f"),
            t_i=clocks[i] - origin)
        entries.append(AircraftEntry(aid, prm, bc, _opt(a, "delay_variable", aw, None, str)))

    states = []
    for i, s in enumerate(_get(d, "states", where, list)):
        sw = f"states[{i}]"
        _as(s, dict, sw)
        follows = [None] * len(ids)
        for ben, lead in _opt(s, "follows", sw, {}, dict).items():
            if ben not in ids or not isinstance(lead, str) or lead not in ids:
                raise SchemaError(f"unknown aircraft in {ben!r} -> {lead!r}", f"{sw}.follows")
            follows[ids.index(ben)] = ids.index(lead)
        states.append(DiscreteState(_get(s, "id", sw, int), _opt(s, "label", sw, "", str),
                                    tuple(follows)))
    transitions = []
    for i, t in enumerate(_get(d, "transitions", where, list)):
        if not (isinstance(t, list) and len(t) == 2):
            raise SchemaError("each transition is a [from, to] pair", f"transitions[{i}]")
        transitions.append((_as(t[0], int, f"transitions[{i}]"), _as(t[1], int, f"transitions[{i}]")))
    template = [_as(s, int, "phase_template") for s in _get(d, "phase_template", where, list)]

    weights = _opt(d, "objective_weights", where, [0.3, 0.7], list)
    costs = _opt(d, "doc_costs", where, list(DEFAULT_DOC_COSTS), list)
    if len(weights) != 2 or len(costs) != 2:
        raise SchemaError("objective_weights and doc_costs hold two numbers each", where)
    sc = _opt(d, "scales", where, {}, dict)
    scales = ReferenceScales(_opt(sc, "speed", "scales", 240.0), _opt(sc, "mass", "scales", 26_600.0),
                             _opt(sc, "thrust", "scales", 1.0e5))
    wind = None
    if "wind" in d:
        wind = wind_fit(load_wind_grid(resolve(_as(d["wind"], str, "wind"), base)),
                        kernel=_opt(d, "wind_kernel", where, "gaussian", str))
    try:
        return MissionSpec(
            aircraft=entries, discrete_states=states, transition_rules=transitions,
            phase_template=template,
            objective_weights=tuple(_as(w, float, "objective_weights") for w in weights),
            r_fuel=_in_range(_opt(d, "r_fuel", where, 0.1), 0.0, 1.0, "r_fuel", ""),
            r_fuel_variable=_opt(d, "r_fuel_variable", where, None, str),
            formation_window_s=_opt(d, "formation_window_s", where, 5.0),
            doc_costs=tuple(_as(c, float, "doc_costs") for c in costs),
            scales=scales, wind=wind, name=_opt(d, "name", where, "mission", str))
    except SchemaError:
        raise
    except ValueError as exc:
        raise SchemaError(str(exc), where) from exc


def _params(src, base, field):
    if isinstance(src, str):
        return load_aircraft_params(resolve(src, base))
    return aircraft_params_from_dict(_as(src, dict, field), field)


def mission_to_dict(spec: MissionSpec, origin_clock="00:00:00", wind_path=None) -> dict:
    """Inverse of :func:`mission_from_dict` (parameters inlined per aircraft)."""
    t0 = parse_clock(origin_clock)
    ids = [a.id for a in spec.aircraft]
    out = {"name": spec.name, "objective_weights": list(spec.objective_weights),
           "r_fuel": spec.r_fuel, "formation_window_s": spec.formation_window_s,
           "doc_costs": list(spec.doc_costs),
           "scales": {"speed": spec.scales.speed, "mass": spec.scales.mass,
                      "thrust": spec.scales.thrust},
           "phase_template": list(spec.phase_template),
           "transitions": [list(t) for t in spec.transition_rules]}
    if spec.r_fuel_variable is not None:
        out["r_fuel_variable"] = spec.r_fuel_variable
    if wind_path is not None:
        out["wind"] = str(wind_path)
    ac = []
    for a in spec.aircraft:
        b = a.boundary
        e = {"id": a.id, "params": aircraft_params_to_dict(a.params),
             "departure": format_clock(t0 + b.t_i),
             "phi_i_deg": math.degrees(b.phi_i), "lam_i_deg": math.degrees(b.lam_i),
             "chi_i_deg": math.degrees(b.chi_i), "v_i": b.v_i, "m_i": b.m_i,
             "phi_f_deg": math.degrees(b.phi_f), "lam_f_deg": math.degrees(b.lam_f),
             "v_f": b.v_f}
        if a.delay_variable is not None:
            e["delay_variable"] = a.delay_variable
        ac.append(e)
    out["aircraft"] = ac
    out["states"] = [{"id": s.id, "label": s.label,
                      "follows": {ids[p]: ids[q] for p, q in enumerate(s.follows) if q is not None}}
                     for s in spec.discrete_states]
    return out


# --------------------------------------------------------------------------
# delay records
# --------------------------------------------------------------------------
def load_delays(path, clip=DEFAULT_CLIP, drop_cancelled=True, drop_diverted=True) -> DelaySample:
    """Departure delays in minutes from a CSV file.

    Accepts a ``delay_min`` column or a Transtats export with ``DEP_DELAY``
    (rows with an empty delay, typically cancellations, are skipped; rows
    flagged ``CANCELLED``/``DIVERTED`` are dropped when requested).
    """
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "delay_min" in cols:
            col = "delay_min"
        elif TRANSTATS_DELAY in cols:
            col = TRANSTATS_DELAY
        else:
            raise SchemaError(f"need a delay_min or {TRANSTATS_DELAY} column", path.name)
        out = []
        for i, row in enumerate(reader, start=1):
            if drop_cancelled and _flag(row.get("CANCELLED")):
                continue
            if drop_diverted and _flag(row.get("DIVERTED")):
                continue
            cell = (row.get(col) or "").strip()
            if not cell:
                continue
            try:
                v = float(cell)
            except ValueError as exc:
                raise NonFiniteEntry(f"row {i}: unparsable delay {cell!r}", row=i) from exc
            if not math.isfinite(v):
                raise NonFiniteEntry(f"row {i}: non-finite delay", row=i)
            out.append(v)
    return DelaySample(np.array(out), tuple(clip))


def _flag(cell):
    if cell is None or not cell.strip():
        return False
    try:
        return float(cell) != 0.0
    except ValueError:
        return cell.strip().lower() in ("true", "yes")


def load_gmm(path, key=None) -> GmmModel:
    """Mixture parameters from JSON; ``key`` selects one entry of a collection."""
    d = read_document(path)
    if key is not None:
        if key not in d:
            raise SchemaError(f"no mixture named {key!r}", Path(path).name)
        d = d[key]
    for f in ("weights", "means", "stds"):
        if f not in d:
            raise SchemaError("missing required field", f"{key or 'gmm'}.{f}")
    try:
        return GmmModel.from_dict(d)
    except ValueError as exc:
        raise SchemaError(str(exc), key) from exc


# --------------------------------------------------------------------------
# bundled fixtures
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Fixtures:
    """Bundled datasets loaded through the public adapters."""
    transatlantic_mission: MissionSpec
    airport_delay_gmm: dict
    aircraft_params: AircraftParams
    wind_grid: GridWindData
    desk_wind_grid: GridWindData


def load_fixtures() -> Fixtures:
    gmm = {k: load_gmm(data_path("airport_delay_gmm.json"), k) for k in ("JFK", "BOS")}
    return Fixtures(
        transatlantic_mission=load_mission(data_path("transatlantic_mission.toml")),
        airport_delay_gmm=gmm,
        aircraft_params=load_aircraft_params(data_path("a330_surrogate.toml")),
        wind_grid=load_wind_grid(data_path("jetstream_wind.csv")),
        desk_wind_grid=load_wind_grid(data_path("desk_jetstream_wind.csv")))


def fixture_path(name) -> Optional[Path]:
    p = data_path(name)
    return p if p.is_file() else None
