import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from guardforce import oracles as orc
from guardforce.qp import QpProblem, halfspace_projection, solve, solve_with_slack, verify_kkt


def test_feasible_nominal_untouched():
    p = QpProblem(np.array([0.1, -0.2]), np.array([[1.0, 0.0]]), np.array([1.0]))
    s = solve(p)
    np.testing.assert_array_equal(s.u_star, p.u_nom)
    np.testing.assert_array_equal(s.multipliers, 0.0)
    assert verify_kkt(p, s).worst == 0.0


def test_scalar_worked_example():
    s = solve(QpProblem(np.array([0.05]), np.array([[200.0]]), np.array([2.0])))
    assert s.u_star[0] == pytest.approx(0.01, abs=1e-15)
    assert s.multipliers[0] == pytest.approx((200 * 0.05 - 2) / 200**2, rel=1e-12)


def test_two_active_corner():
    p = QpProblem(np.array([1.0, 1.0]), np.eye(2), np.zeros(2))
    s = solve(p)
    np.testing.assert_allclose(s.u_star, 0.0, atol=1e-15)
    assert set(s.active_set) == {0, 1}
    np.testing.assert_allclose(orc.grid_qp(p.u_nom, p.G, p.h, 2.0), 0.0, atol=2e-3)


def test_kkt_detects_perturbation():
    p = QpProblem(np.array([0.05]), np.array([[200.0]]), np.array([2.0]))
    s = solve(p)
    bad = type(s)(s.u_star + 1e-3, s.multipliers, s.active_set)
    assert verify_kkt(p, bad).stationarity > 0


def test_grid_oracle_has_small_kkt_residual():
    p = QpProblem(np.array([1.0, 0.5]), np.array([[1.0, 1.0]]) / np.sqrt(2), np.array([0.2]))
    u = orc.grid_qp(p.u_nom, p.G, p.h, 2.0)
    lam = np.array([max(0.0, float(p.G[0] @ (p.u_nom - u)))])
    rep = verify_kkt(p, type(solve(p))(u, lam))
    assert rep.worst <= 2e-3


def test_infeasible_reported():
    s = solve(QpProblem(np.array([0.0]), np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0])))
    assert not s.optimal


def test_slack_unused_when_feasible(rng):
    for _ in range(20):
        inst = orc.random_qp(rng, 3, 2)
        p = QpProblem(inst.u_nom, inst.G, inst.h)
        for w in (1e-2, 1.0, 1e6):
            s = solve_with_slack(p, w)
            np.testing.assert_allclose(s.u_star, solve(p).u_star, atol=1e-8)
            assert s.slack == 0.0


def test_slack_contradictory_rows():
    p = QpProblem(np.array([0.0]), np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    s = solve_with_slack(p, 1e6)
    assert s.optimal and abs(s.u_star[0]) < 1e-3 and s.slack == pytest.approx(1.0, abs=1e-3)
    assert s.kkt_residual <= 1e-9 * max(1.0, s.multipliers.max())


def test_slack_decreases_with_penalty():
    # u <= -1 + s and u >= 1 - s with u_nom = 3: s = 4 / (1 + 2 w) until it reaches 1
    p = QpProblem(np.array([3.0]), np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    slacks = [solve_with_slack(p, w).slack for w in (0.1, 0.5, 1.0, 10.0)]
    np.testing.assert_allclose(slacks, [4 / 1.2, 2.0, 4 / 3, 1.0], rtol=1e-9)


def test_slack_penalty_must_be_positive():
    with pytest.raises(ValueError):
        solve_with_slack(QpProblem(np.zeros(1), np.ones((1, 1)), np.zeros(1)), 0.0)


def test_closed_form_single_row(rng):
    for _ in range(50):
        g = rng.normal(size=3)
        u_nom = rng.normal(size=3)
        h = float(g @ u_nom) - abs(rng.normal())
        s = solve(QpProblem(u_nom, g[None, :], np.array([h])))
        u, lam = halfspace_projection(u_nom, g, h)
        np.testing.assert_allclose(s.u_star, u, atol=1e-10)
        assert s.multipliers[0] == pytest.approx(lam, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 3), m=st.integers(1, 3))
def test_matches_enumeration_and_kkt(seed, n, m):
    r = np.random.default_rng(seed)
    inst = orc.random_qp(r, n, 1 if n == 1 else m)
    p = QpProblem(inst.u_nom, inst.G, inst.h)
    s = solve(p)
    assert s.optimal
    np.testing.assert_allclose(s.u_star, orc.enumerate_qp(p.u_nom, p.G, p.h), atol=1e-9)
    rep = verify_kkt(p, s)
    assert rep.stationarity <= 1e-8 and rep.complementarity <= 1e-8 and rep.dual == 0


def test_projection_property(rng):
    for _ in range(20):
        inst = orc.random_qp(rng, 3, 3)
        s = solve(QpProblem(inst.u_nom, inst.G, inst.h))
        d = np.linalg.norm(s.u_star - inst.u_nom)
        samples = inst.u_feasible + rng.uniform(-1, 1, (400, 3))
        feas = samples[np.all(samples @ inst.G.T <= inst.h, axis=1)][:100]
        assert np.all(np.linalg.norm(feas - inst.u_nom, axis=1) >= d - 1e-12)


def test_deterministic_tie_break():
    p = QpProblem(np.array([1.0, 1.0]), np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.0, 0.0]))
    assert solve(p).active_set == solve(p).active_set


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(np.zeros(2), np.zeros((1, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        QpProblem(np.array([np.nan]), np.ones((1, 1)), np.zeros(1))
