"""Switched-system mission model: discrete states, logic, objective and DOC."""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (AmbiguousMode, InfeasibleTransitionGraph, MismatchedAircraftCount,
                     OutOfEnvelope)
from .model import AircraftParams, FlightMode, WindField, chord_squared

ROLES = ("solo", "leader", "intermediate", "trailer")

#: reference solo outcomes (hours, tonnes, cost) that fix the default unit costs
REFERENCE_SOLO_COSTS = ((7.06, 45.73, 39635.79), (7.32, 45.44, 39713.60))


@dataclass(frozen=True)
class BoundaryConditions:
    """Endpoint data of one flight (radians, m/s, kg, seconds).

    ``t_i`` is the scheduled departure measured from the mission origin.
    """

    phi_i: float
    lam_i: float
    chi_i: float
    v_i: float
    m_i: float
    phi_f: float
    lam_f: float
    v_f: float
    t_i: float = 0.0


@dataclass(frozen=True)
class AircraftEntry:
    id: str
    params: AircraftParams
    boundary: BoundaryConditions
    delay_variable: Optional[str] = None


@dataclass(frozen=True)
class DiscreteState:
    """One combination of per-aircraft flight modes.

    ``follows[p]`` is the index of the aircraft whose wake aircraft ``p``
    rides, or ``None`` for solo and leading aircraft.
    """

    id: int
    label: str
    follows: tuple

    def __post_init__(self):
        object.__setattr__(self, "follows", tuple(self.follows))
        n = len(self.follows)
        for p, q in enumerate(self.follows):
            if q is None:
                continue
            if not 0 <= q < n or q == p:
                raise InfeasibleTransitionGraph(f"state {self.id}: aircraft {p} follows invalid index {q}")
            seen = {p}
            while q is not None:
                if q in seen:
                    raise InfeasibleTransitionGraph(f"state {self.id}: cyclic formation chain")
                seen.add(q)
                q = self.follows[q]

    @property
    def beneficiaries(self):
        return frozenset(p for p, q in enumerate(self.follows) if q is not None)

    @property
    def is_all_solo(self):
        return not self.beneficiaries

    def modes(self, r_fuel):
        return tuple(FlightMode(q is not None, r_fuel if q is not None else 0.0) for q in self.follows)

    def role(self, p):
        led = any(q == p for q in self.follows)
        if self.follows[p] is None:
            return "leader" if led else "solo"
        return "intermediate" if led else "trailer"

    def signature(self):
        """Pairs (beneficiary, leader) that identify the state."""
        return frozenset((p, q) for p, q in enumerate(self.follows) if q is not None)


@dataclass(frozen=True)
class ReferenceScales:
    speed: float = 240.0
    mass: float = 26_600.0
    thrust: float = 1.0e5


@dataclass(frozen=True)
class MissionSpec:
    aircraft: tuple
    discrete_states: tuple
    transition_rules: tuple
    phase_template: tuple
    objective_weights: tuple = (0.3, 0.7)
    r_fuel: float = 0.1
    r_fuel_variable: Optional[str] = None
    formation_window_s: float = 5.0
    doc_costs: tuple = field(default_factory=lambda: DEFAULT_DOC_COSTS)
    scales: ReferenceScales = field(default_factory=ReferenceScales)
    wind: Optional[WindField] = None
    name: str = "mission"

    def __post_init__(self):
        object.__setattr__(self, "aircraft", tuple(self.aircraft))
        object.__setattr__(self, "discrete_states", tuple(self.discrete_states))
        object.__setattr__(self, "transition_rules", tuple(tuple(e) for e in self.transition_rules))
        object.__setattr__(self, "phase_template", tuple(self.phase_template))
        at, af = self.objective_weights
        if at < 0 or af < 0 or at + af <= 0:
            raise ValueError("objective weights must be nonnegative with a positive sum")
        if not self.aircraft:
            raise MismatchedAircraftCount("mission has no aircraft")
        na = len(self.aircraft)
        for s in self.discrete_states:
            if len(s.follows) != na:
                raise MismatchedAircraftCount(
                    f"state {s.id} lists {len(s.follows)} aircraft, mission has {na}")
        if self.formation_window_s <= 0:
            raise ValueError("formation_window_s must be positive")
        for a in self.aircraft:
            env = a.params.envelope
            b = a.boundary
            for name, val, lo, hi in (("v_i", b.v_i, env.v_min, env.v_max),
                                      ("v_f", b.v_f, env.v_min, env.v_max),
                                      ("m_i", b.m_i, env.m_min, env.m_max)):
                if not lo <= val <= hi:
                    raise OutOfEnvelope(f"aircraft {a.id}: {name}={val} outside the envelope")
        self.validate_logic()

    @property
    def n_aircraft(self):
        return len(self.aircraft)

    @property
    def n_phases(self):
        return len(self.phase_template)

    def state(self, sid):
        for s in self.discrete_states:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def allowed(self, a, b):
        """Whether state ``a`` may be followed by ``b`` (equal wake pairs always may)."""
        if a == b or (a, b) in self.transition_rules:
            return True
        return self.state(a).signature() == self.state(b).signature()

    def validate_logic(self):
        ids = [s.id for s in self.discrete_states]
        if len(set(ids)) != len(ids):
            raise InfeasibleTransitionGraph("duplicate discrete-state ids")
        sigs = [s.signature() for s in self.discrete_states if not s.is_all_solo]
        if len(set(sigs)) != len(sigs):
            raise InfeasibleTransitionGraph("two formation states share the same wake pairs")
        for a, b in self.transition_rules:
            if a not in ids or b not in ids:
                raise InfeasibleTransitionGraph(f"transition ({a}, {b}) references an unknown state")
        solo = [s.id for s in self.discrete_states if s.is_all_solo]
        if not solo:
            raise InfeasibleTransitionGraph("the catalog has no all-solo state")
        # every state must be reachable from an all-solo state
        adj = {i: set() for i in ids}
        for a, b in self.transition_rules:
            adj[a].add(b)
        seen = set(solo)
        todo = deque(solo)
        while todo:
            for b in adj[todo.popleft()]:
                if b not in seen:
                    seen.add(b)
                    todo.append(b)
        if seen != set(ids):
            raise InfeasibleTransitionGraph(
                f"states {sorted(set(ids) - seen)} unreachable from the all-solo state")
        tpl = self.phase_template
        if not tpl:
            raise InfeasibleTransitionGraph("empty phase template")
        for sid in tpl:
            if sid not in ids:
                raise InfeasibleTransitionGraph(f"phase template references unknown state {sid}")
        if not self.state(tpl[0]).is_all_solo or not self.state(tpl[-1]).is_all_solo:
            raise InfeasibleTransitionGraph("the phase template must start and end all-solo")
        for a, b in zip(tpl[:-1], tpl[1:]):
            if not self.allowed(a, b):
                raise InfeasibleTransitionGraph(f"phase template uses forbidden transition {a} -> {b}")

    def effective_state(self, phase, beneficiaries):
        """Catalog state reached in ``phase`` when exactly ``beneficiaries`` benefit.

        Leaders are those of the template state of the phase.  Returns
        ``None`` when the combination is not in the catalog.
        """
        tpl = self.state(self.phase_template[phase])
        sig = frozenset((p, tpl.follows[p]) for p in beneficiaries)
        if tpl.signature() == sig:
            return tpl
        for s in self.discrete_states:
            if s.signature() == sig:
                return s
        return None

    def mode_slots(self):
        """(aircraft, phase) pairs that carry a relaxed mode variable."""
        return [(p, k) for k, sid in enumerate(self.phase_template)
                for p in sorted(self.state(sid).beneficiaries)]

    def with_r_fuel(self, r):
        return replace(self, r_fuel=float(r))


# --------------------------------------------------------------------------
# logic
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class LinearCut:
    """``coeffs @ v <= rhs`` over the relaxed mode variables."""

    slots: tuple
    coeffs: tuple
    rhs: float
    reason: str

    def evaluate(self, values):
        """Violation (positive when infeasible) for a slot -> value mapping."""
        return float(sum(c * values[s] for s, c in zip(self.slots, self.coeffs)) - self.rhs)


@dataclass(frozen=True)
class ProximityGate:
    """Beneficiary may only benefit while close to its leader.

    Encoded per node as ``v * (chord^2 / chord_max^2 - 1) <= 0``.
    """

    slot: tuple
    leader: int
    chord_max: float

    def evaluate(self, v, lat_b, lon_b, lat_l, lon_l):
        c2 = chord_squared(lat_b, lon_b, lat_l, lon_l)
        return v * (c2 / self.chord_max ** 2 - 1.0)


@dataclass(frozen=True)
class LogicalConstraints:
    cuts: tuple
    gates: tuple

    def __len__(self):
        return len(self.cuts) + len(self.gates)


def _no_good(on, off, reason):
    slots = tuple(on) + tuple(off)
    coeffs = (1.0,) * len(on) + (-1.0,) * len(off)
    return LinearCut(slots, coeffs, float(len(on) - 1), reason)


def encode_logical_constraints(spec: MissionSpec, grid=None) -> LogicalConstraints:
    """Algebraic form of the mode logic over relaxed per-phase mode variables.

    Returns linear no-good cuts that exclude benefit patterns outside the
    catalog and forbidden transitions between consecutive phases, together
    with the proximity gates that tie each benefit to its leader.  Mode
    variables are bounded to [0, 1] by the transcription.
    """
    if grid is not None and len(grid.phases) != spec.n_phases:
        raise InfeasibleTransitionGraph(
            f"grid has {len(grid.phases)} phases, template has {spec.n_phases}")
    slots_by_phase = {}
    for p, k in spec.mode_slots():
        slots_by_phase.setdefault(k, []).append(p)
    patterns = {}
    cuts = []
    for k in range(spec.n_phases):
        ben = slots_by_phase.get(k, [])
        valid = []
        for r in range(len(ben) + 1):
            for on in itertools.combinations(ben, r):
                st = spec.effective_state(k, on)
                off = [p for p in ben if p not in on]
                if st is None:
                    cuts.append(_no_good([(p, k) for p in on], [(p, k) for p in off],
                                         f"phase {k}: benefit pattern {on} not in catalog"))
                else:
                    valid.append((on, off, st.id))
        patterns[k] = valid
    for k in range(spec.n_phases - 1):
        for (on_a, off_a, sa), (on_b, off_b, sb) in itertools.product(patterns[k], patterns[k + 1]):
            if spec.allowed(sa, sb):
                continue
            on = [(p, k) for p in on_a] + [(p, k + 1) for p in on_b]
            off = [(p, k) for p in off_a] + [(p, k + 1) for p in off_b]
            if not on and not off:
                raise InfeasibleTransitionGraph(
                    f"fixed phases {k} -> {k + 1} use forbidden transition {sa} -> {sb}")
            cuts.append(_no_good(on, off, f"phases {k}->{k + 1}: transition {sa} -> {sb} forbidden"))
    gates = []
    for p, k in spec.mode_slots():
        leader = spec.state(spec.phase_template[k]).follows[p]
        ac = spec.aircraft[p].params
        chord_max = spec.formation_window_s * spec.scales.speed / ac.radius
        gates.append(ProximityGate((p, k), leader, chord_max))
    return LogicalConstraints(tuple(cuts), tuple(gates))


# --------------------------------------------------------------------------
# objective and cost
# --------------------------------------------------------------------------
def objective(traj, weights=(0.3, 0.7), n_aircraft=None):
    """Weighted sum of flight times and fuel burns (normalised units).

    Parameters
    ----------
    traj : sequence of (flight_time, fuel) pairs, one per aircraft
    weights : (alpha_t, alpha_f)
    n_aircraft : int, optional
        Expected number of aircraft.
    """
    traj = np.asarray(traj, float).reshape(-1, 2) if len(traj) else np.zeros((0, 2))
    if n_aircraft is not None and traj.shape[0] != n_aircraft:
        raise MismatchedAircraftCount(f"got {traj.shape[0]} trajectories for {n_aircraft} aircraft")
    at, af = weights
    return float(at * traj[:, 0].sum() + af * traj[:, 1].sum())


def doc(flight_time_h, fuel_t, costs):
    """Direct operating cost ``c_time * hours + c_fuel * tonnes``."""
    c_time, c_fuel = costs
    return c_time * np.asarray(flight_time_h, float) + c_fuel * np.asarray(fuel_t, float)


def calibrate_doc_costs(rows):
    """Unit costs from two (hours, tonnes, doc) observations."""
    rows = np.asarray(rows, float)
    if rows.shape != (2, 3):
        raise ValueError("calibration needs exactly two (hours, tonnes, doc) rows")
    return tuple(float(c) for c in np.linalg.solve(rows[:, :2], rows[:, 2]))


DEFAULT_DOC_COSTS = calibrate_doc_costs(REFERENCE_SOLO_COSTS)


@dataclass(frozen=True)
class DocReport:
    flight_ids: tuple
    flight_time_h: tuple
    fuel_t: tuple
    doc: tuple
    costs: tuple
    baseline_doc: Optional[tuple] = None
    label: str = ""

    @classmethod
    def from_outcomes(cls, ids, hours, tonnes, costs, baseline=None, label=""):
        hours = tuple(float(h) for h in hours)
        tonnes = tuple(float(t) for t in tonnes)
        docs = tuple(float(d) for d in doc(np.array(hours), np.array(tonnes), costs))
        base = None if baseline is None else tuple(float(b) for b in baseline.doc)
        return cls(tuple(ids), hours, tonnes, docs, tuple(costs), base, label)

    @property
    def total_doc(self):
        return float(sum(self.doc))

    @property
    def total_time_h(self):
        return float(sum(self.flight_time_h))

    @property
    def total_fuel_t(self):
        return float(sum(self.fuel_t))

    def deltas_pct(self):
        """Per-flight and total DOC change versus the baseline [%]."""
        if self.baseline_doc is None:
            return None
        per = [100.0 * (d - b) / b for d, b in zip(self.doc, self.baseline_doc)]
        tot = 100.0 * (self.total_doc - sum(self.baseline_doc)) / sum(self.baseline_doc)
        return per, tot

    def to_dict(self):
        out = {
            "label": self.label,
            "flights": [
                {"id": i, "flight_time_h": h, "fuel_t": f, "doc": d}
                for i, h, f, d in zip(self.flight_ids, self.flight_time_h, self.fuel_t, self.doc)
            ],
            "total": {"flight_time_h": self.total_time_h, "fuel_t": self.total_fuel_t,
                      "doc": self.total_doc},
            "costs": {"c_time_per_h": self.costs[0], "c_fuel_per_t": self.costs[1]},
        }
        d = self.deltas_pct()
        if d is not None:
            out["delta_vs_solo_pct"] = {"flights": d[0], "total": d[1]}
            out["baseline_doc"] = list(self.baseline_doc)
        return out


# --------------------------------------------------------------------------
# mode recovery
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class ModeTrace:
    """Relaxed mode values per phase and aircraft plus phase boundary times.

    ``values[k, p]`` is NaN where aircraft ``p`` has no mode variable in
    phase ``k`` (it cannot benefit there).
    """

    values: np.ndarray
    times: np.ndarray


@dataclass(frozen=True)
class Segment:
    state: DiscreteState
    entry_time: float
    exit_time: float


def mode_sequence_of(solution, spec: MissionSpec, ambiguous=(0.4, 0.6)):
    """Round relaxed modes and merge consecutive phases into state segments.

    Parameters
    ----------
    solution : ModeTrace or object with a ``mode_trace`` attribute
    spec : MissionSpec

    Returns
    -------
    list of Segment
    """
    trace = getattr(solution, "mode_trace", solution)
    vals = np.asarray(trace.values, float)
    times = np.asarray(trace.times, float)
    if vals.shape[0] + 1 != times.size:
        raise ValueError("need one more boundary time than phases")
    lo, hi = ambiguous
    bad = np.isfinite(vals) & (vals >= lo) & (vals <= hi)
    if bad.any():
        k, p = map(int, np.argwhere(bad)[0])
        raise AmbiguousMode(f"mode of aircraft {p} in phase {k} is {vals[k, p]:.3f}")
    segs = []
    for k in range(vals.shape[0]):
        on = tuple(p for p in range(vals.shape[1]) if np.isfinite(vals[k, p]) and vals[k, p] > 0.5)
        st = spec.effective_state(k, on)
        if st is None:
            raise AmbiguousMode(f"phase {k}: benefit pattern {on} is not a catalog state")
        if segs and segs[-1].state.signature() == st.signature():
            segs[-1] = Segment(st, segs[-1].entry_time, float(times[k + 1]))
        else:
            segs.append(Segment(st, float(times[k]), float(times[k + 1])))
    return segs


def rounding_gap(trace):
    """Largest distance of a relaxed mode value from {0, 1}."""
    v = np.asarray(getattr(trace, "mode_trace", trace).values, float)
    v = v[np.isfinite(v)]
    return float(np.max(np.abs(v - np.round(v)), initial=0.0))


def sequence_ids(segments: Sequence[Segment]):
    return tuple(s.state.id for s in segments)
