"""Regenerate the bundled fixture files in ``src/formation_uq/data``.

Desk-scale scenarios shrink the transatlantic routes towards (43 N, 72 W)
by ``DESK_FACTOR`` in latitude/longitude and in schedule offsets.
"""
import json
import math
from pathlib import Path

import numpy as np

from formation_uq.ingestion import jet_stream_grid, write_wind_grid
from formation_uq.model import initial_course

DATA = Path(__file__).resolve().parents[1] / "src" / "formation_uq" / "data"
DESK_FACTOR = 0.2
DESK_CENTER = (43.0, -72.0)

# (id, origin, destination, heading_deg, m_i, departure)
TRANSATLANTIC = [
    ("F1", (40.64, -73.78), (48.85, 2.35), 54.26, 215000, "10:15"),
    ("F2", (42.36, -71.06), (40.48, -3.57), 69.25, 210000, "10:30"),
    ("F3", (45.47, -73.74), (51.47, -0.12), 55.53, 220000, "10:50"),
]

A330 = """\
# Point-mass cruise surrogate of a wide-body twin (A330-class).
# tsfc(v) = c0 + c1 v  [kg/(N s)], parabolic drag polar.
name = "a330_surrogate"
wing_area = 361.6
wingspan = 60.3
cd0 = 0.019
induced_factor = 0.044
tsfc_coeffs = [1.2e-5, 1.714e-8]
cruise_altitude = 11000.0
air_density = 0.3639

[envelope]
v_min = 180.0
v_max = 260.0
m_min = 150000.0
m_max = 230000.0
thrust_min = 0.0
thrust_max = 300000.0
cl_min = 0.1
cl_max = 0.9
mu_max_deg = 22.918311805232928
"""

STATES_A = """
[[states]]
id = 1
label = "all solo"

[[states]]
id = 2
label = "F1 trails F2"
follows = { F1 = "F2" }

[[states]]
id = 3
label = "F2 leads, F3 intermediate, F1 trails"
follows = { F1 = "F3", F3 = "F2" }

[[states]]
id = 4
label = "F1 trails F3, F2 solo"
follows = { F1 = "F3" }

[[states]]
id = 5
label = "all solo (after splitting)"
"""


def desk(p):
    c = DESK_CENTER
    return (c[0] + DESK_FACTOR * (p[0] - c[0]), c[1] + DESK_FACTOR * (p[1] - c[1]))


def clock(t):
    h, m = map(int, t.split(":"))
    return 3600 * h + 60 * m


def aircraft_block(fid, o, dst, chi, m, dep, delay=None):
    lines = ["[[aircraft]]", f'id = "{fid}"', f'departure = "{dep}"',
             f"phi_i_deg = {o[0]:.6f}", f"lam_i_deg = {o[1]:.6f}", f"chi_i_deg = {chi:.4f}",
             "v_i = 240.0", f"m_i = {float(m)}", f"phi_f_deg = {dst[0]:.6f}",
             f"lam_f_deg = {dst[1]:.6f}", "v_f = 220.0"]
    if delay:
        lines.append(f'delay_variable = "{delay}"')
    return "\n".join(lines) + "\n"


def mission(name, rows, states, transitions, template, wind, desk_scale, delays=None):
    out = [f'name = "{name}"', 'aircraft_params = "a330_surrogate.toml"', f'wind = "{wind}"',
           "objective_weights = [0.3, 0.7]", "r_fuel = 0.1",
           f"phase_template = {list(template)}", f"transitions = {[list(t) for t in transitions]}", ""]
    t0 = min(clock(r[5]) for r in rows)
    for i, (fid, o, dst, chi, m, dep) in enumerate(rows):
        if desk_scale:
            o, dst = desk(o), desk(dst)
            r = math.radians
            chi = math.degrees(initial_course((r(o[0]), r(o[1])), (r(dst[0]), r(dst[1]))))
            off = round(DESK_FACTOR * (clock(dep) - t0))
            dep = f"{(t0 + off) // 3600:02d}:{(t0 + off) % 3600 // 60:02d}:{(t0 + off) % 60:02d}"
        out.append(aircraft_block(fid, o, dst, chi, m, dep, None if delays is None else delays[i]))
    return "\n".join(out) + states


def main():
    (DATA / "a330_surrogate.toml").write_text(A330)
    tr_a = [(1, 2), (2, 3), (3, 4), (4, 5)]
    (DATA / "transatlantic_mission.toml").write_text(
        "# Transatlantic three-flight mission (long-running).\n"
        + mission("transatlantic", TRANSATLANTIC, STATES_A, tr_a, (1, 2, 3, 4, 5),
                  "jetstream_wind.csv", False))
    (DATA / "desk_experiment_a.toml").write_text(
        "# Desk-scale three-flight mission with a fixed formation sequence.\n"
        + mission("desk_experiment_a", TRANSATLANTIC, STATES_A, tr_a, (1, 2, 3, 4, 5),
                  "desk_jetstream_wind.csv", True))
    states_b = """
[[states]]
id = 1
label = "solo"

[[states]]
id = 2
label = "F1 trails F2"
follows = { F1 = "F2" }

[[states]]
id = 3
label = "solo (after splitting)"
"""
    (DATA / "desk_experiment_b.toml").write_text(
        "# Desk-scale two-flight mission with uncertain departure delays.\n"
        + mission("desk_experiment_b", TRANSATLANTIC[:2], states_b, [(1, 2), (2, 3)], (1, 2, 3),
                  "desk_jetstream_wind.csv", True, delays=("theta1", "theta2")))

    full = jet_stream_grid(np.arange(30.0, 62.51, 2.5), np.arange(-80.0, 10.01, 5.0),
                           core_lat_deg=47.0, core_speed=50.0, width_deg=5.0,
                           meander_deg=3.0, wavelength_deg=60.0)
    write_wind_grid(DATA / "jetstream_wind.csv", full)
    # the same jet seen through the desk-scale map
    lat = np.arange(40.5, 46.51, 0.5)
    lon = np.arange(-74.0, -55.0 + 0.01, 1.0)
    c = DESK_CENTER
    deskw = jet_stream_grid(c[0] + (lat - c[0]) / DESK_FACTOR, c[1] + (lon - c[1]) / DESK_FACTOR,
                            core_lat_deg=47.0, core_speed=50.0, width_deg=5.0,
                            meander_deg=3.0, wavelength_deg=60.0)
    deskw = type(deskw)(np.radians(lat), np.radians(lon), deskw.u_east, deskw.v_north)
    write_wind_grid(DATA / "desk_jetstream_wind.csv", deskw)

    gmm = {
        "JFK": {"airport": "JFK", "weights": [0.39, 0.17, 0.27, 0.17],
                "means": [-4.94, 11.94, -0.99, -8.91], "stds": [2.20, 7.17, 2.93, 2.89]},
        "BOS": {"airport": "BOS", "weights": [0.24, 0.56, 0.06, 0.14],
                "means": [-1.76, -6.61, 28.67, 10.92], "stds": [3.39, 3.70, 5.68, 5.78]},
    }
    (DATA / "airport_delay_gmm.json").write_text(json.dumps(gmm, indent=1) + "\n")


if __name__ == "__main__":
    main()
