"""End-to-end stochastic formation mission planning.

The stochastic run follows six steps: build the quadrature, solve the
deterministic mission at every node (one block of an augmented NLP per
node), check that all nodes share the discrete-state sequence, project
the node solutions onto the gPC basis, read off moments, and compute
Sobol indices.  Node solutions are persisted so the reporting stage can be
replayed without solving.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import qmc
from sklearn.base import BaseEstimator

from .errors import AmbiguousMode, InconsistentModeSequences, SchemaError, SolveFailure
from .ingestion import load_gmm, load_mission, output_degrees, read_document, resolve
from .mission import (AircraftEntry, DiscreteState, DocReport, MissionSpec, mode_sequence_of,
                      rounding_gap, sequence_ids)
from .nlp import SolveOptions, SolveResult, solve
from .sensitivity import SobolReport, sobol_from_gpc
from .transcription import (InstanceParams, InstanceSolution, PhaseSpec, build_grid,
                            mission_problem, transcribe)
from .uq import (ENVELOPE_Z, GAUSSIAN, MIXTURE, UNIFORM, RandomVariableSpec,
                 StochasticSolution, build_basis, build_quadrature, check_mode_sequences,
                 cumulative_distance, estimate_coefficients, time_at_distance)

log = logging.getLogger(__name__)

R_FUEL = "r_fuel"
DEPARTURE = "departure:"
STATE_NAMES = ("lat", "lon", "chi", "v", "m")
REPORT_VERSION = 1


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class RandomBinding:
    """A random variable and the scalar mission field it drives.

    ``target`` is ``"r_fuel"`` or ``"departure:<aircraft id>"``; departure
    variables are multiplied by ``scale`` to obtain a delay in seconds.
    """
    variable: RandomVariableSpec
    target: str
    scale: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run and report one scenario."""
    mission: MissionSpec
    bindings: tuple
    name: str = "scenario"
    degree: int = 4
    points: int = 6
    scheme: str = "tensor"
    mixture: str = "stieltjes"
    nodes_per_phase: int = 10
    min_phase_duration: float = 60.0
    feasibility_tol: float = 1e-8
    optimality_tol: float = 1e-6
    max_iter: int = 500
    workers: int = 1
    time_grid: Optional[tuple] = None
    time_grid_points: int = 101
    distance_grid: Optional[tuple] = None
    distance_grid_points: int = 51
    mc_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bindings", tuple(self.bindings))
        ids = [a.id for a in self.mission.aircraft]
        seen = set()
        for b in self.bindings:
            if b.target in seen:
                raise SchemaError("two random variables bind the same field", b.target)
            seen.add(b.target)
            if b.target != R_FUEL and not (b.target.startswith(DEPARTURE)
                                           and b.target[len(DEPARTURE):] in ids):
                raise SchemaError(f"unknown binding target {b.target!r}", b.variable.id)
        vids = [b.variable.id for b in self.bindings]
        if len(set(vids)) != len(vids):
            raise SchemaError("duplicate random variable ids", "random")
        for name, g in (("time_grid", self.time_grid), ("distance_grid", self.distance_grid)):
            if g is not None and (len(g) < 2 or np.any(np.diff(g) <= 0)):
                raise SchemaError("reporting grid must be strictly increasing", name)
        if self.degree < 1 or self.points < 2:
            raise SchemaError("gpc degree >= 1 and points >= 2 required", "gpc")
        if self.workers < 1:
            raise SchemaError("workers must be >= 1", "solver.workers")

    @property
    def variables(self):
        return [b.variable for b in self.bindings]

    def solve_options(self, **kw):
        return SolveOptions(feasibility_tol=self.feasibility_tol,
                            optimality_tol=self.optimality_tol, max_iter=self.max_iter, **kw)

    def grid(self):
        return build_grid([PhaseSpec(self.nodes_per_phase, self.min_phase_duration)]
                          * self.mission.n_phases)

    def instance(self, theta) -> InstanceParams:
        """Instance parameters for one realisation ``theta`` of the variables."""
        r = self.mission.r_fuel
        delays = [0.0] * self.mission.n_aircraft
        ids = [a.id for a in self.mission.aircraft]
        for b, th in zip(self.bindings, np.atleast_1d(theta)):
            if b.target == R_FUEL:
                r = float(th)
            else:
                delays[ids.index(b.target[len(DEPARTURE):])] = float(th) * b.scale
        return InstanceParams(r, tuple(delays))

    def expected_theta(self):
        return np.array([v.mean for v in self.variables])


def load_scenario(path, **overrides) -> ScenarioConfig:
    """Scenario from TOML/JSON; relative paths resolve against its folder."""
    path = Path(path)
    d = read_document(path)
    return scenario_from_dict(d, base=path.parent, **overrides)


def scenario_from_dict(d, base=None, **overrides) -> ScenarioConfig:
    if "mission" not in d:
        raise SchemaError("missing required field", "mission")
    mission = load_mission(resolve(d["mission"], base))
    bindings = []
    for i, r in enumerate(d.get("random", [])):
        bindings.append(_binding(r, f"random[{i}]", base))
    mission = _attach_variables(mission, bindings)
    gpc = d.get("gpc", {})
    sol = d.get("solver", {})
    rep = d.get("reporting", {})
    mc = d.get("monte_carlo", {})
    kw = dict(
        name=d.get("name", mission.name),
        degree=gpc.get("degree", 4), points=gpc.get("points", 6),
        scheme=gpc.get("scheme", "tensor"), mixture=gpc.get("mixture", "stieltjes"),
        nodes_per_phase=sol.get("nodes_per_phase", 10),
        min_phase_duration=float(sol.get("min_phase_duration_s", 60.0)),
        feasibility_tol=float(sol.get("feasibility_tol", 1e-8)),
        optimality_tol=float(sol.get("optimality_tol", 1e-6)),
        max_iter=sol.get("max_iter", 500), workers=sol.get("workers", 1),
        time_grid=tuple(rep["time_grid_s"]) if "time_grid_s" in rep else None,
        time_grid_points=rep.get("time_grid_points", 101),
        distance_grid=tuple(rep["distance_grid_km"]) if "distance_grid_km" in rep else None,
        distance_grid_points=rep.get("distance_grid_points", 51),
        mc_samples=mc.get("samples", 0), seed=d.get("seed", 0))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ScenarioConfig(mission=mission, bindings=tuple(bindings), **kw)
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), "scenario") from exc


_UNITS = {"s": 1.0, "min": 60.0, "h": 3600.0}


def _binding(r, where, base):
    for key in ("id", "target", "distribution"):
        if key not in r:
            raise SchemaError("missing required field", f"{where}.{key}")
    kind = r["distribution"]
    try:
        if kind == GAUSSIAN:
            var = RandomVariableSpec.gaussian(r["id"], r["mean"], r["std"])
        elif kind == UNIFORM:
            var = RandomVariableSpec.uniform(r["id"], r["low"], r["high"])
        elif kind == MIXTURE:
            if "gmm" in r:
                g = load_gmm(resolve(r["gmm"], base), r.get("gmm_key"))
                var = g.to_variable(r["id"])
            else:
                var = RandomVariableSpec.mixture(r["id"], r["weights"], r["means"], r["stds"])
        else:
            raise SchemaError(f"unknown distribution {kind!r}", f"{where}.distribution")
    except KeyError as exc:
        raise SchemaError("missing required field", f"{where}.{exc.args[0]}") from exc
    except ValueError as exc:
        raise SchemaError(str(exc), where) from exc
    units = r.get("units", "s")
    if units not in _UNITS:
        raise SchemaError(f"unknown unit {units!r}", f"{where}.units")
    scale = _UNITS[units] * float(r.get("time_scale", 1.0))
    return RandomBinding(var, r["target"], scale)


def _attach_variables(mission, bindings):
    ac = list(mission.aircraft)
    rvar = mission.r_fuel_variable
    for b in bindings:
        if b.target == R_FUEL:
            rvar = b.variable.id
        elif b.target.startswith(DEPARTURE):
            for i, a in enumerate(ac):
                if a.id == b.target[len(DEPARTURE):]:
                    ac[i] = replace(a, delay_variable=b.variable.id)
    return replace(mission, aircraft=tuple(ac), r_fuel_variable=rvar)


# --------------------------------------------------------------------------
# node solves
# --------------------------------------------------------------------------
@dataclass
class NodeRecord:
    """Decoded solution of the mission at one parameter realisation."""
    index: int
    theta: list
    status: str
    iterations: int
    objective: float
    sequence: list
    segments: list            # [state id, entry time, exit time]
    rounding_gap: float
    knot_times: list
    mode_values: list
    aircraft: list            # per aircraft: {"id", "times", "states", "taus"}
    x: list = field(repr=False, default_factory=list)

    def trajectory(self, p):
        from .transcription import AircraftTrajectory
        a = self.aircraft[p]
        return AircraftTrajectory([np.asarray(t) for t in a["times"]],
                                  [np.asarray(s) for s in a["states"]], [],
                                  [np.asarray(t) for t in a["taus"]])

    def flight_time(self, p):
        a = self.aircraft[p]
        return a["times"][-1][-1] - a["times"][0][0]

    def fuel(self, p):
        a = self.aircraft[p]
        return a["states"][0][0][4] - a["states"][-1][-1][4]

    def to_dict(self):
        return {"index": self.index, "theta": self.theta, "status": self.status,
                "iterations": self.iterations, "objective": self.objective,
                "sequence": self.sequence, "segments": self.segments,
                "rounding_gap": self.rounding_gap, "knot_times": self.knot_times,
                "mode_values": self.mode_values, "aircraft": self.aircraft, "x": self.x}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _nan_to_none(a):
    return [[None if not np.isfinite(v) else float(v) for v in row] for row in np.asarray(a)]


def node_record(index, theta, spec, result: SolveResult, sol: InstanceSolution) -> NodeRecord:
    """Decode a solve into a record; unresolvable mode patterns give an empty sequence."""
    try:
        segs = mode_sequence_of(sol, spec)
        seq = list(sequence_ids(segs))
        seg_list = [[s.state.id, s.entry_time, s.exit_time] for s in segs]
    except AmbiguousMode as exc:
        log.warning("node %d: %s", index, exc)
        seq, seg_list = [], []
    ac = []
    for a, tr in zip(spec.aircraft, sol.aircraft):
        ac.append({"id": a.id, "times": [t.tolist() for t in tr.times],
                   "states": [s.tolist() for s in tr.states],
                   "taus": [t.tolist() for t in tr.taus]})
    return NodeRecord(index, [float(v) for v in np.atleast_1d(theta)], result.status,
                      int(result.iterations), float(result.objective), seq, seg_list,
                      rounding_gap(sol), [float(k) for k in sol.knot_times],
                      _nan_to_none(sol.mode_values), ac, [float(v) for v in result.x])


def solve_instance(cfg: ScenarioConfig, inst: InstanceParams, spec=None, warm=None):
    """Two-stage solve of one mission instance.

    Stage one pins every template mode on; stage two relaxes the modes to
    [0, 1] from the stage-one point.  With ``warm`` (a previous relaxed
    solution of the same layout) only the relaxed stage is run, and the
    cold two-stage path is the fallback.

    Returns
    -------
    result : SolveResult
    solution : InstanceSolution
    """
    spec = cfg.mission if spec is None else spec
    grid = cfg.grid()
    if warm is not None:
        prob, lay = mission_problem(spec, grid, inst, guess=_x_of(warm))
        res = solve(prob, cfg.solve_options(warm_start=warm))
        if res.success:
            return res, _decode(lay, res)
        log.info("warm-started solve returned %s; retrying cold", res.status)
    prob1, _ = mission_problem(spec, grid, inst, mode_fix=1.0)
    r1 = solve(prob1, cfg.solve_options())
    if not r1.success:
        raise SolveFailure(f"fixed-mode stage ended with status {r1.status}")
    prob2, lay = mission_problem(spec, grid, inst, guess=r1.x)
    r2 = solve(prob2, cfg.solve_options(warm_start=r1.x))
    if not r2.success:
        raise SolveFailure(f"relaxed stage ended with status {r2.status}")
    return r2, _decode(lay, r2)


def _x_of(warm):
    return warm.x if isinstance(warm, SolveResult) else np.asarray(warm, float)


def _decode(layout, res):
    sol = layout.decode(res.x)
    sol.objective = float(res.objective)
    return sol


def solve_nodes(cfg: ScenarioConfig, thetas, nominal: SolveResult) -> List[NodeRecord]:
    """Solve all realisations as blocks of one augmented NLP.

    Every block is warm-started from the nominal solution, so the outcome
    does not depend on the worker count; blocks that fail are re-solved
    cold through :func:`solve_instance`.
    """
    spec, grid = cfg.mission, cfg.grid()
    thetas = np.atleast_2d(np.asarray(thetas, float))
    insts = [cfg.instance(t) for t in thetas]
    prob = transcribe(spec, grid, insts, guesses=[nominal.x] * len(insts))
    warm = SolveResult(nominal.status, np.tile(nominal.x, len(insts)), nominal.objective,
                       0.0, 0.0, 0, 0.0, np.tile(nominal.multipliers, len(insts)),
                       np.tile(nominal.bound_multipliers, len(insts)))
    res = solve(prob, cfg.solve_options(warm_start=warm, workers=cfg.workers))
    records = []
    for j, (inst, lay, r) in enumerate(zip(insts, prob.layout["instances"], res.block_results)):
        if r.success:
            sol = _decode(lay, r)
        else:
            log.info("node %d: block solve returned %s; re-solving cold", j, r.status)
            r, sol = solve_instance(cfg, inst)
        records.append(node_record(j, thetas[j], spec, r, sol))
    return records


# --------------------------------------------------------------------------
# deterministic baselines
# --------------------------------------------------------------------------
def _solo_spec(spec: MissionSpec, p: int) -> MissionSpec:
    """Aircraft ``p`` alone on the same phase layout as the formation template.

    Every phase gets its own all-solo state so the knot times stay free and
    the mesh matches the formation problem.
    """
    a = spec.aircraft[p]
    b = replace(a.boundary, t_i=0.0)
    k = spec.n_phases
    states = tuple(DiscreteState(i + 1, "solo", (None,)) for i in range(k))
    return replace(spec, aircraft=(AircraftEntry(a.id, a.params, b),), discrete_states=states,
                   transition_rules=tuple((i, i + 1) for i in range(1, k)),
                   phase_template=tuple(range(1, k + 1)), r_fuel_variable=None,
                   name=f"{spec.name}-solo-{a.id}")


def run_solo_baseline(cfg: ScenarioConfig) -> DocReport:
    """Per-flight solo optimum under the same wind, boundary data and mesh."""
    hours, tonnes = [], []
    for p in range(cfg.mission.n_aircraft):
        solo_cfg = replace(cfg, mission=_solo_spec(cfg.mission, p), bindings=())
        res, sol = solve_instance(solo_cfg, InstanceParams(cfg.mission.r_fuel))
        hours.append(sol.aircraft[0].flight_time / 3600.0)
        tonnes.append(sol.aircraft[0].fuel / 1000.0)
    return DocReport.from_outcomes([a.id for a in cfg.mission.aircraft], hours, tonnes,
                                   cfg.mission.doc_costs, label="solo")


def run_deterministic_mission(cfg: ScenarioConfig, solo: Optional[DocReport] = None):
    """Formation optimum with every random parameter at its expected value.

    Returns
    -------
    doc : DocReport
    result : SolveResult
    record : NodeRecord
    """
    theta = cfg.expected_theta()
    res, sol = solve_instance(cfg, cfg.instance(theta))
    rec = node_record(-1, theta, cfg.mission, res, sol)
    doc = _doc_of([rec], np.ones(1), cfg, solo, "deterministic formation")
    return doc, res, rec


def _doc_of(records, weights, cfg, solo, label):
    A = cfg.mission.n_aircraft
    hours = [float(weights @ [r.flight_time(p) for r in records]) / 3600.0 for p in range(A)]
    tonnes = [float(weights @ [r.fuel(p) for r in records]) / 1000.0 for p in range(A)]
    return DocReport.from_outcomes([a.id for a in cfg.mission.aircraft], hours, tonnes,
                                   cfg.mission.doc_costs, baseline=solo, label=label)


# --------------------------------------------------------------------------
# stochastic run
# --------------------------------------------------------------------------
@dataclass
class MissionReport:
    """Post-processed outcome of a stochastic run."""
    config: ScenarioConfig
    nodes: list
    weights: np.ndarray
    sequence: tuple
    trajectory: StochasticSolution
    timing: StochasticSolution
    scalars: StochasticSolution
    sobol: SobolReport
    stochastic_doc: DocReport
    deterministic_doc: DocReport
    solo_doc: DocReport
    monte_carlo: Optional[dict] = None

    def events(self):
        """Rendezvous/splitting times: mean and 95% interval per boundary."""
        out = []
        seq = self.sequence
        for i in range(1, len(seq)):
            name = f"event_{i}"
            m = float(self.scalars.mean(name)[0])
            s = float(self.scalars.std(name)[0])
            kind = _event_kind(self.config.mission, seq[i - 1], seq[i])
            out.append({"from_state": seq[i - 1], "to_state": seq[i], "kind": kind,
                        "mean_s": m, "std_s": s,
                        "interval_s": [m - ENVELOPE_Z * s, m + ENVELOPE_Z * s]})
        return out

    def flights(self):
        out = []
        for a in self.config.mission.aircraft:
            row = {"id": a.id}
            for q, unit in (("flight_time", "s"), ("fuel", "kg")):
                name = f"{a.id}_{q}"
                m = float(self.scalars.mean(name)[0])
                s = float(self.scalars.std(name)[0])
                row[q] = {"mean": m, "std": s, "interval": [m - ENVELOPE_Z * s, m + ENVELOPE_Z * s],
                          "unit": unit}
            out.append(row)
        return out

    def sobol_summary(self):
        out = {}
        rep = self.sobol
        for q in rep.first:
            ok = rep.defined[q]
            if not ok.any():
                out[q] = {"undefined": "variance below threshold everywhere"}
                continue
            idx = np.flatnonzero(ok)
            window = (float(rep.grid[idx[0]]), float(rep.grid[idx[-1]]))
            out[q] = {"window": list(window), "ranking": rep.summary({q: window})[q]}
        return out

    def to_dict(self):
        cfg = self.config
        sto = self.stochastic_doc
        return {
            "version": REPORT_VERSION,
            "scenario": cfg.name,
            "variables": [dict(b.variable.to_dict(), target=b.target, scale=b.scale)
                          for b in cfg.bindings],
            "gpc": {"degree": cfg.degree, "points": cfg.points, "scheme": cfg.scheme,
                    "mixture": cfg.mixture, "basis_size": self.trajectory.basis.size,
                    "quadrature_nodes": len(self.nodes)},
            "sequence": {"states": list(self.sequence),
                         "labels": [cfg.mission.state(s).label for s in self.sequence],
                         "max_rounding_gap": max(r.rounding_gap for r in self.nodes)},
            "events": self.events(),
            "flights": self.flights(),
            "doc": {"stochastic_formation": sto.to_dict(),
                    "deterministic_formation": self.deterministic_doc.to_dict(),
                    "solo": self.solo_doc.to_dict(),
                    "uncertainty_increment_pct": 100.0 * (sto.total_doc - self.deterministic_doc.total_doc)
                    / self.deterministic_doc.total_doc},
            "sobol": self.sobol_summary(),
            "monte_carlo": self.monte_carlo,
            "files": {"trajectory": "trajectory_stats.csv", "timing": "timing_stats.csv",
                      "sobol": "sobol.csv", "raw_nodes": "raw_nodes"},
        }

    def to_json(self):
        return json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True) + "\n"

    def write(self, out_dir):
        """Write CSV tables and ``report.json`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.trajectory.to_csv(out / "trajectory_stats.csv")
        self.timing.to_csv(out / "timing_stats.csv")
        self.sobol.to_csv(out / "sobol.csv")
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")


def _event_kind(spec, a, b):
    na = len(spec.state(a).beneficiaries)
    nb = len(spec.state(b).beneficiaries)
    return "rendezvous" if nb > na else "splitting" if nb < na else "reconfiguration"


def _clean(obj):
    """JSON-safe copy: NaN/inf become None, numpy scalars become floats."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def quadrature_for(cfg: ScenarioConfig):
    basis = build_basis(cfg.variables, cfg.degree, cfg.mixture,
                        extra_terms=max(0, cfg.points - cfg.degree - 1))
    rule = build_quadrature(cfg.variables, cfg.points, cfg.scheme, cfg.mixture,
                            families=basis.families)
    return basis, rule


def build_report(cfg: ScenarioConfig, nodes: Sequence[NodeRecord], det_doc: DocReport,
                 solo_doc: DocReport, monte_carlo=None) -> MissionReport:
    """Reporting stage: pure post-processing of persisted node solutions."""
    basis, rule = quadrature_for(cfg)
    nodes = sorted(nodes, key=lambda r: r.index)
    if len(nodes) != rule.size:
        raise SolveFailure(f"{len(nodes)} node solutions for {rule.size} quadrature nodes")
    bad = [r.index for r in nodes if not r.sequence]
    if bad:
        raise InconsistentModeSequences(f"nodes {bad} have no unambiguous mode sequence",
                                        {(): bad})
    seq = check_mode_sequences([tuple(r.sequence) for r in nodes])
    A = cfg.mission.n_aircraft
    ids = [a.id for a in cfg.mission.aircraft]

    # time-parameterised trajectories
    if cfg.time_grid is not None:
        tgrid = np.asarray(cfg.time_grid, float)
    else:
        t_end = max(max(r.aircraft[p]["times"][-1][-1] for p in range(A)) for r in nodes)
        t_beg = min(min(r.aircraft[p]["times"][0][0] for p in range(A)) for r in nodes)
        tgrid = np.linspace(t_beg, t_end, cfg.time_grid_points)
    raw = {}
    for p, aid in enumerate(ids):
        samples = np.array([r.trajectory(p).sample(tgrid) for r in nodes])
        for k, nm in enumerate(STATE_NAMES):
            vals = samples[:, :, k]
            if nm in ("lat", "lon", "chi"):
                vals = output_degrees(vals)
                nm = f"{nm}_deg"
            raw[f"{aid}_{nm}"] = vals
    trajectory = estimate_coefficients(raw, basis, rule, tgrid, grid_name="t")
    trajectory.sequence = seq

    # distance-parameterised timing
    radius = cfg.mission.aircraft[0].params.radius
    paths = [[_stacked(r, p) for p in range(A)] for r in nodes]
    if cfg.distance_grid is not None:
        dgrid = np.asarray(cfg.distance_grid, float)
    else:
        d_max = min(cumulative_distance(x[:, 0], x[:, 1], radius)[-1]
                    for row in paths for _, x in row) / 1000.0
        dgrid = np.linspace(0.0, d_max, cfg.distance_grid_points)
    traw = {}
    for p, aid in enumerate(ids):
        traw[f"{aid}_t"] = np.array([time_at_distance(t, x[:, 0], x[:, 1], dgrid * 1000.0, radius)
                                     for t, x in (row[p] for row in paths)])
    timing = estimate_coefficients(traw, basis, rule, dgrid, grid_name="d_km")
    timing.sequence = seq

    # scalar outcomes
    sraw = {}
    for p, aid in enumerate(ids):
        sraw[f"{aid}_flight_time"] = np.array([r.flight_time(p) for r in nodes])
        sraw[f"{aid}_fuel"] = np.array([r.fuel(p) for r in nodes])
        sraw[f"{aid}_doc"] = np.array([
            float(np.dot(cfg.mission.doc_costs, [r.flight_time(p) / 3600.0, r.fuel(p) / 1000.0]))
            for r in nodes])
    for i in range(1, len(seq)):
        sraw[f"event_{i}"] = np.array([r.segments[i][1] for r in nodes])
    scalars = estimate_coefficients(sraw, basis, rule, np.zeros(1), grid_name="scalar")

    sobol = sobol_from_gpc(trajectory)
    sto = _doc_of(nodes, rule.weights, cfg, solo_doc, "stochastic formation (expected)")
    det = replace(det_doc, baseline_doc=solo_doc.doc)
    return MissionReport(cfg, list(nodes), rule.weights, seq, trajectory, timing, scalars,
                         sobol, sto, det, solo_doc, monte_carlo)


def _stacked(rec: NodeRecord, p):
    return rec.trajectory(p).stacked()


def run_stochastic_mission(cfg: ScenarioConfig, out_dir=None, nominal=None,
                           det=None, solo=None) -> MissionReport:
    """Full stochastic run; writes every artifact when ``out_dir`` is given.

    Raises
    ------
    InconsistentModeSequences
        Nodes disagree on the discrete-state sequence (the per-node
        sequences are written to ``raw_nodes`` first).
    SolveFailure
    """
    basis, rule = quadrature_for(cfg)
    if solo is None:
        solo = run_solo_baseline(cfg)
    if det is None or nominal is None:
        det, nominal, det_rec = run_deterministic_mission(cfg, solo)
    else:
        det_rec = None
    nodes = solve_nodes(cfg, rule.nodes, nominal)
    mc = None
    if cfg.mc_samples > 0:
        mc = run_monte_carlo(cfg, cfg.mc_samples, cfg.seed, nominal)
    if out_dir is not None:
        persist_raw(out_dir, nodes, det, solo, det_rec, mc)
    report = build_report(cfg, nodes, det, solo, _mc_summary(mc, cfg) if mc else None)
    if out_dir is not None:
        report.write(out_dir)
    return report


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------
def persist_raw(out_dir, nodes, det, solo, det_rec=None, mc=None):
    raw = Path(out_dir) / "raw_nodes"
    raw.mkdir(parents=True, exist_ok=True)
    for r in nodes:
        _dump(raw / f"node_{r.index:04d}.json", r.to_dict())
    _dump(raw / "baselines.json", {"deterministic": _doc_dict(det), "solo": _doc_dict(solo),
                                   "deterministic_node": det_rec.to_dict() if det_rec else None})
    if mc is not None:
        _dump(raw / "monte_carlo.json", mc)


def _dump(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), sort_keys=True) + "\n", encoding="utf-8")


def _doc_dict(d: DocReport):
    return {"flight_ids": list(d.flight_ids), "flight_time_h": list(d.flight_time_h),
            "fuel_t": list(d.fuel_t), "costs": list(d.costs), "label": d.label}


def _doc_from(d, baseline=None):
    return DocReport.from_outcomes(d["flight_ids"], d["flight_time_h"], d["fuel_t"], d["costs"],
                                   baseline=baseline, label=d["label"])


def report_from_raw(cfg: ScenarioConfig, out_dir) -> MissionReport:
    """Rebuild the report from ``out_dir/raw_nodes`` without solving."""
    raw = Path(out_dir) / "raw_nodes"
    nodes = [NodeRecord.from_dict(json.loads(p.read_text(encoding="utf-8")))
             for p in sorted(raw.glob("node_*.json"))]
    base = json.loads((raw / "baselines.json").read_text(encoding="utf-8"))
    solo = _doc_from(base["solo"])
    det = _doc_from(base["deterministic"], solo)
    mc_path = raw / "monte_carlo.json"
    mc = json.loads(mc_path.read_text(encoding="utf-8")) if mc_path.is_file() else None
    return build_report(cfg, nodes, det, solo, _mc_summary(mc, cfg) if mc else None)


# --------------------------------------------------------------------------
# Monte Carlo reference
# --------------------------------------------------------------------------
def latin_hypercube(cfg: ScenarioConfig, n, seed):
    """``n`` Latin-hypercube draws mapped through each variable's inverse CDF."""
    u = qmc.LatinHypercube(d=len(cfg.variables), seed=seed).random(n)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return np.column_stack([v.ppf(u[:, i]) for i, v in enumerate(cfg.variables)])


def run_monte_carlo(cfg: ScenarioConfig, n, seed, nominal: SolveResult):
    """Deterministic solves at Latin-hypercube samples (warm-started from the nominal)."""
    thetas = latin_hypercube(cfg, n, seed)
    recs = solve_nodes(cfg, thetas, nominal)
    A = cfg.mission.n_aircraft
    return {"seed": seed, "theta": thetas.tolist(),
            "fuel": [[r.fuel(p) for p in range(A)] for r in recs],
            "flight_time": [[r.flight_time(p) for p in range(A)] for r in recs],
            "sequences": [r.sequence for r in recs]}


def _mc_summary(mc, cfg):
    ids = [a.id for a in cfg.mission.aircraft]
    fuel = np.asarray(mc["fuel"], float)
    ft = np.asarray(mc["flight_time"], float)
    seqs = sorted({tuple(s) for s in mc["sequences"]})
    return {"samples": int(fuel.shape[0]), "seed": mc["seed"],
            "distinct_sequences": [list(s) for s in seqs],
            "flights": [{"id": aid,
                         "fuel_mean": float(fuel[:, p].mean()),
                         "fuel_std": float(fuel[:, p].std(ddof=1)),
                         "flight_time_mean": float(ft[:, p].mean()),
                         "flight_time_std": float(ft[:, p].std(ddof=1))}
                        for p, aid in enumerate(ids)]}


# --------------------------------------------------------------------------
# estimator facade
# --------------------------------------------------------------------------
class FormationMissionPlanner(BaseEstimator):
    """Estimator-style wrapper around :func:`run_stochastic_mission`.

    ``fit`` takes no training data (the input distributions live in the
    scenario); ``predict`` evaluates the fitted expansions of the per-flight
    scalar outcomes at parameter realisations.

    Parameters
    ----------
    scenario : ScenarioConfig
    quantities : sequence of str, optional
        Scalar outcomes returned by ``predict`` (default: final fuel of
        every flight).
    """

    def __init__(self, scenario=None, quantities=None, out_dir=None):
        self.scenario = scenario
        self.quantities = quantities
        self.out_dir = out_dir

    def fit(self, X=None, y=None):
        if self.scenario is None:
            raise ValueError("scenario is required")
        self.report_ = run_stochastic_mission(self.scenario, self.out_dir)
        ids = [a.id for a in self.scenario.mission.aircraft]
        self.quantities_ = list(self.quantities or [f"{i}_fuel" for i in ids])
        self.sequence_ = self.report_.sequence
        self.mean_ = np.array([self.report_.scalars.mean(q)[0] for q in self.quantities_])
        self.std_ = np.array([self.report_.scalars.std(q)[0] for q in self.quantities_])
        return self

    def predict(self, X):
        from .uq import evaluate_expansion
        X = np.atleast_2d(np.asarray(X, float))
        return np.column_stack([evaluate_expansion(self.report_.scalars, X, q, extrapolate=True)[:, 0]
                                for q in self.quantities_])
