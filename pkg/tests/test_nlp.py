import numpy as np
import pytest
from scipy import sparse

from formation_uq.errors import LayoutMismatch, NonFiniteEvaluation
from formation_uq.nlp import (FEASIBLE, OPTIMAL, NlpProblem, SolveOptions, check_kkt,
                              compose_blocks, dump_problem, read_dump, solve)
from nlp_smoke import SMOKE_SET, bound_square, equality_qp, hs071, rosenbrock


@pytest.mark.parametrize("make", SMOKE_SET, ids=lambda f: f.__name__)
def test_interior_point_smoke_set(make):
    p, xs, fs = make()
    r = solve(p, SolveOptions(debug=True))
    assert r.status == OPTIMAL
    assert np.abs(r.x - xs).max() < 1e-6
    assert abs(r.objective - fs) < 1e-6
    assert r.constraint_violation <= 1e-8
    assert r.dual_infeasibility <= 1e-8


@pytest.mark.parametrize("make", SMOKE_SET, ids=lambda f: f.__name__)
def test_augmented_lagrangian_smoke_set(make):
    p, xs, fs = make()
    r = solve(p, SolveOptions(method="auglag", debug=True))
    assert r.status in (OPTIMAL, FEASIBLE)
    assert np.abs(r.x - xs).max() < 1e-6
    assert abs(r.objective - fs) < 1e-6


def test_bound_square_exact():
    p, _, _ = bound_square()
    r = solve(p)
    assert r.x[0] == pytest.approx(1.0, abs=1e-8)
    assert r.objective == pytest.approx(1.0, abs=1e-8)


def test_rosenbrock_optimum():
    p, _, _ = rosenbrock()
    assert np.abs(solve(p).x - 1.0).max() < 1e-6


def test_equality_qp_matches_closed_form():
    p, xs, fs = equality_qp()
    r = solve(p)
    assert np.abs(r.x - xs).max() < 1e-8
    assert abs(r.objective - fs) < 1e-8


@pytest.mark.parametrize("make", SMOKE_SET, ids=lambda f: f.__name__)
def test_warm_start_terminates_quickly(make):
    p, _, _ = make()
    r = solve(p)
    again = solve(p, SolveOptions(warm_start=r))
    assert again.success and again.iterations <= 5


def test_debug_mode_checks_merit_descent():
    p, _, _ = hs071()
    r = solve(p, SolveOptions(debug=True))
    assert r.success
    assert len(r.merit_history) > 0


def test_deterministic():
    p, _, _ = hs071()
    a, b = solve(p), solve(p)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.iterations == b.iterations


# ------------------------------------------------------------------- KKT
def test_kkt_at_qp_optimum():
    p, xs, _ = equality_qp()
    rep = check_kkt(p, xs, (p.kkt_multipliers, None), tol=1e-8)
    assert rep.ok, rep


def test_kkt_from_solver_multipliers():
    p, _, _ = hs071()
    r = solve(p)
    rep = check_kkt(p, r.x, (r.multipliers, r.bound_multipliers), tol=1e-6)
    assert rep.ok, rep


def test_kkt_infeasible_point():
    p, _, _ = hs071()
    rep = check_kkt(p, np.full(4, 1.0), tol=1e-8)
    assert rep.primal > 1e-8
    assert not rep.ok


def test_kkt_unconstrained_stationary_point():
    p, _, _ = rosenbrock()
    rep = check_kkt(p, np.ones(2), tol=1e-8)
    assert rep.stationarity <= 1e-8 and rep.ok


def test_kkt_dimension_errors():
    p, _, _ = hs071()
    with pytest.raises(LayoutMismatch):
        check_kkt(p, np.ones(3))
    with pytest.raises(LayoutMismatch):
        check_kkt(p, np.ones(4), (np.ones(5), None))


# --------------------------------------------------------------- contract
def test_layout_guards():
    with pytest.raises(LayoutMismatch):
        NlpProblem(n=2, objective=sum, gradient=np.ones_like, x_lb=[1, 1], x_ub=[0, 0])
    with pytest.raises(LayoutMismatch):
        NlpProblem(n=1, objective=sum, gradient=np.ones_like, x_lb=0, x_ub=1,
                   constraints=lambda x: x, c_lb=[0.0], c_ub=[1.0])
    p, _, _ = hs071()
    with pytest.raises(LayoutMismatch):
        solve(p, SolveOptions(warm_start=np.ones(3)))


def test_non_finite_evaluation():
    p = NlpProblem(n=1, objective=lambda x: np.log(x[0]), gradient=lambda x: 1 / x,
                   hessian=lambda x, y, s: sparse.csr_matrix([[-s / x[0] ** 2]]),
                   x_lb=-np.inf, x_ub=np.inf, x0=np.array([-1.0]))
    with pytest.raises(NonFiniteEvaluation):
        with np.errstate(invalid="ignore", divide="ignore"):
            solve(p)


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(feasibility_tol=0.0)
    with pytest.raises(ValueError):
        SolveOptions(max_iter=0)


def test_dump_round_trip(tmp_path):
    p, _, _ = hs071()
    path = tmp_path / "p.txt"
    dump_problem(p, path)
    d = read_dump(path)
    assert (d["n"], d["m"]) == (4, 2)
    np.testing.assert_array_equal(d["x_bounds"][:, 0], p.x_lb)
    np.testing.assert_allclose(d["jacobian"].toarray(), p.jacobian(p.x0).toarray())


# ------------------------------------------------------------------ blocks
def test_blocks_solved_independently_and_worker_invariant():
    parts = [hs071()[0], equality_qp()[0], rosenbrock()[0]]
    w = np.array([0.2, 0.3, 0.5])
    aug = compose_blocks(parts, w)
    singles = [solve(q) for q in parts]
    r1 = solve(aug, SolveOptions(workers=1))
    r4 = solve(aug, SolveOptions(workers=4))
    np.testing.assert_array_equal(r1.x, r4.x)
    np.testing.assert_allclose(r1.x, np.concatenate([s.x for s in singles]))
    assert r1.objective == pytest.approx(w @ [s.objective for s in singles])
    assert len(r1.block_results) == 3
