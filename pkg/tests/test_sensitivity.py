import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formation_uq.errors import UndefinedOnWindow, ZeroVariance
from formation_uq.sensitivity import SobolReport, dominant_variable, sobol_from_gpc
from formation_uq.uq import (RandomVariableSpec, StochasticSolution, build_basis,
                             build_quadrature, estimate_coefficients)


def project(vs, degree, q, f, grid=None):
    b = build_basis(vs, degree, extra_terms=q)
    r = build_quadrature(vs, q, families=b.families)
    return estimate_coefficients(f(r.nodes), b, r, grid=grid)


def ishigami_oracle(a=7.0, b=0.1):
    v1 = 0.5 * (1 + b * math.pi ** 4 / 5) ** 2
    v2 = a ** 2 / 8
    v13 = b ** 2 * math.pi ** 8 * (1 / 18 - 1 / 50)
    total = v1 + v2 + v13
    return np.array([v1, v2, 0.0]) / total


def test_ishigami():
    t0 = time.perf_counter()
    vs = [RandomVariableSpec.uniform(f"x{i}", -math.pi, math.pi) for i in range(3)]
    f = lambda X: np.sin(X[:, 0]) + 7 * np.sin(X[:, 1]) ** 2 + 0.1 * X[:, 2] ** 4 * np.sin(X[:, 0])
    rep = sobol_from_gpc(project(vs, 9, 12, f))
    s = rep.first["z"][:, 0]
    np.testing.assert_allclose(s, ishigami_oracle(), atol=2e-2)
    assert np.all(rep.total["z"][:, 0] >= s - 1e-12)
    assert time.perf_counter() - t0 < 30


def test_single_variable_dependence():
    vs = [RandomVariableSpec.gaussian("a", 0, 1), RandomVariableSpec.gaussian("b", 0, 1)]
    rep = sobol_from_gpc(project(vs, 3, 4, lambda X: 2 * X[:, 0] + X[:, 0] ** 2))
    assert abs(rep.first["z"][0, 0] - 1.0) < 1e-10
    assert abs(rep.first["z"][1, 0]) < 1e-10


def test_symmetric_additive_split():
    vs = [RandomVariableSpec.gaussian("a", 0, 1), RandomVariableSpec.gaussian("b", 0, 1)]
    rep = sobol_from_gpc(project(vs, 2, 3, lambda X: X[:, 0] + X[:, 1]))
    np.testing.assert_allclose(rep.first["z"][:, 0], 0.5, atol=1e-10)
    np.testing.assert_allclose(rep.total["z"][:, 0], 0.5, atol=1e-10)


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
@settings(max_examples=30, deadline=None)
def test_additive_indices_exact(c):
    vs = [RandomVariableSpec.gaussian("a", 1, 2), RandomVariableSpec.uniform("b", 0, 1),
          RandomVariableSpec.gaussian("d", -1, 0.5)]
    sd = np.array([2.0, 1 / math.sqrt(12), 0.5])
    c = np.array(c)
    if np.sum((c * sd) ** 2) < 1e-6:
        return
    rep = sobol_from_gpc(project(vs, 2, 3, lambda X: X @ c))
    expected = (c * sd) ** 2 / np.sum((c * sd) ** 2)
    np.testing.assert_allclose(rep.first["z"][:, 0], expected, atol=1e-10)
    assert abs(rep.first["z"][:, 0].sum() - 1.0) < 1e-10


def test_interaction_only_total():
    vs = [RandomVariableSpec.gaussian("a", 0, 1), RandomVariableSpec.gaussian("b", 0, 1)]
    rep = sobol_from_gpc(project(vs, 2, 3, lambda X: X[:, 0] * X[:, 1]))
    assert np.abs(rep.first["z"][:, 0]).max() < 1e-10
    np.testing.assert_allclose(rep.total["z"][:, 0], 1.0, atol=1e-10)


def test_zero_variance_flagged():
    vs = [RandomVariableSpec.gaussian("a", 0, 1)]
    sol = project(vs, 2, 3, lambda X: np.column_stack([np.full(len(X), 4.0), X[:, 0]]),
                  grid=[0.0, 1.0])
    rep = sobol_from_gpc(sol)
    assert rep.defined["z"].tolist() == [False, True]
    assert np.isnan(rep.first["z"][0, 0])
    with pytest.raises(ZeroVariance):
        rep.require_defined("z")
    with pytest.raises(UndefinedOnWindow):
        dominant_variable(rep, "z")
    assert dominant_variable(rep, "z", (0.5, 1.0))[0][0] == "a"


def _report(s1, s2, grid):
    s = np.vstack([s1, s2])
    ok = np.ones(grid.size, bool)
    return SobolReport(grid, "t", ["theta1", "theta2"], {"q": s}, {"q": s},
                       {"q": np.ones(grid.size)}, {"q": ok})


def test_constant_profile_ranking():
    g = np.linspace(0, 10, 11)
    rank = dominant_variable(_report(np.full(11, 0.9), np.full(11, 0.1), g), "q")
    assert [v for v, _ in rank] == ["theta1", "theta2"]
    assert rank[0][1] == pytest.approx(0.9)


def test_crossing_profiles_window_dependence():
    # s1 rises 0 -> 1 and s2 falls 1 -> 0 linearly on [0, 10]
    g = np.linspace(0, 10, 101)
    rep = _report(g / 10, 1 - g / 10, g)
    early = dominant_variable(rep, "q", (0, 4))
    late = dominant_variable(rep, "q", (6, 10))
    assert early[0] == ("theta2", pytest.approx(0.8))
    assert late[0] == ("theta1", pytest.approx(0.8))
    full = dominant_variable(rep, "q")
    assert [s for _, s in full] == [pytest.approx(0.5), pytest.approx(0.5)]
    with pytest.raises(UndefinedOnWindow):
        dominant_variable(rep, "q", (20, 30))


def test_report_outputs(tmp_path):
    vs = [RandomVariableSpec.gaussian("a", 0, 1), RandomVariableSpec.gaussian("b", 0, 1)]
    sol = project(vs, 2, 3, lambda X: np.column_stack([X[:, 0], X[:, 0] + 3 * X[:, 1]]),
                  grid=[0.0, 1.0])
    sol = StochasticSolution(sol.basis, sol.grid, {"lon": sol.quantity()}, "t")
    rep = sobol_from_gpc(sol)
    rep.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,S1_lon,S2_lon,S1T_lon,S2T_lon"
    assert len(lines) == 3
    summ = rep.summary()
    assert summ["lon"][0]["variable"] == "a"
