import numpy as np
import pytest

from guardforce import oracles as orc
from guardforce.environment import PriorModel, Wrench
from guardforce.robot import JointState, planar2, single_link
from guardforce.safety import (SafetyConfig, b_fc, check_initial_conditions, dynamic_constraint,
                               kinematic_constraint, zeta_diagnostics)

Y_UP = (0.0, 1.0, 0.0)  # single link at q=0 presses along +y


def zcfg(**kw):
    return SafetyConfig(h_e_max=(0, 0, 5.0, 0, 0, 0), prior=PriorModel(200.0), **kw)


def test_barrier_separated_is_zero():
    np.testing.assert_array_equal(b_fc(zcfg(), Wrench([0, 0, 4.8]), False), np.zeros(6))


def test_barrier_worked_value():
    b = b_fc(zcfg(), Wrench([0, 0, 4.8]), True)
    assert b[2] == pytest.approx(0.2, abs=1e-12)
    assert np.count_nonzero(b) == 1


def test_barrier_boundary():
    assert b_fc(zcfg(), Wrench([0, 0, 5.0]), True)[2] == 0.0


def link_cfg(**kw):
    return SafetyConfig(h_e_max=(0, 5.0, 0, 0, 0, 0), prior=PriorModel(200.0, contact_axis=Y_UP), **kw)


def test_kinematic_row_worked_example():
    cs = kinematic_constraint(link_cfg(l=10.0), single_link(1.0), [0.0], 0.0, 0.0,
                              np.array([0, 0.2, 0, 0, 0, 0]))
    np.testing.assert_allclose(cs.G, [[200.0]], atol=1e-12)
    np.testing.assert_allclose(cs.h, [2.0], atol=1e-12)
    assert cs.axes == (1,)


def test_kinematic_sigma_tightens():
    b = np.array([0, 0.2, 0, 0, 0, 0])
    h0 = kinematic_constraint(link_cfg(), single_link(), [0.0], 0.0, 0.0, b).h
    h1 = kinematic_constraint(link_cfg(), single_link(), [0.0], 0.0, 0.3, b).h
    np.testing.assert_allclose(h0 - h1, [0.3], atol=1e-12)


def test_kinematic_separated_empty():
    assert kinematic_constraint(link_cfg(), single_link(), [0.0], 0.0, 0.0, np.zeros(6), in_contact=False).empty


def test_kinematic_dimension_check():
    with pytest.raises(ValueError):
        kinematic_constraint(link_cfg(), single_link(), [0.0, 1.0], 0.0, 0.0, np.zeros(6))


def test_masking_ignores_inactive_axes(rng):
    cfg = link_cfg()
    b = np.array([0, 0.2, 0, 0, 0, 0])
    z2 = np.zeros(6)
    cs0 = kinematic_constraint(cfg, single_link(), [0.3], z2, 0.0, b)
    junk = rng.normal(size=6)
    junk[1] = 0.0
    cs1 = kinematic_constraint(cfg, single_link(), [0.3], z2 + junk, 0.0, b + junk)
    np.testing.assert_array_equal(cs0.G, cs1.G)
    np.testing.assert_array_equal(cs0.h, cs1.h)


PL = dict(l1=1.0, m1=1.0, m2=1.0, r1=0.5, r2=0.5, I1=1 / 12, I2=1 / 12, g=9.81)


def dyn_cfg(**kw):
    return SafetyConfig(h_e_max=(0, 3.0, 0, 0, 0, 0),
                        prior=PriorModel(200.0, contact_axis=(0.0, -1.0, 0.0)), **kw)


def test_dynamic_row_matches_direct_substitution(rng):
    m = planar2()
    cfg = dyn_cfg(l1=4.0, l2=6.0)
    for _ in range(25):
        q = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(0.4, 2.6)])
        qd = rng.uniform(-1, 1, 2)
        h_e = Wrench([rng.normal(), rng.normal(), 0.0])
        z2, z3 = rng.normal(size=6), rng.normal(size=6)
        sig, bar = abs(rng.normal()), rng.normal(size=6)
        tau = rng.normal(size=2) * 5
        cs = dynamic_constraint(cfg, m, JointState(q, qd), h_e, z2, z3, sig, bar)

        # independent route: joint accelerations from the Lagrangian oracle
        M, c, g = orc.planar2_lagrangian(q, qd, **PL)
        J = orc.planar_jacobian([1.0, 1.0], q)
        eps = 1e-6
        Jd = (orc.planar_jacobian([1.0, 1.0], q + eps * qd) - orc.planar_jacobian([1.0, 1.0], q - eps * qd)) / (2 * eps)
        h_app = -h_e.vector[:2]
        qdd = np.linalg.solve(M, tau - c - g - J.T @ h_app)
        xdd = J @ qdd + Jd @ qd
        # compression coordinate is -y
        lhs = (-200.0 * -xdd[1] - z3[1] - (cfg.l1 + cfg.l2 + 1) * sig
               + (cfg.l1 + cfg.l2) * (-200.0 * -(J @ qd)[1] - z2[1]) + cfg.l1 * cfg.l2 * bar[1])
        assert cs.h[0] - cs.G[0] @ tau == pytest.approx(lhs, abs=1e-6 * max(1.0, abs(lhs)))


def test_dynamic_sigma_tightens():
    m = planar2()
    st = JointState([0.2, 1.1], [0.1, -0.2])
    a = dynamic_constraint(dyn_cfg(), m, st, Wrench([0, 1.0, 0]), 0.0, 0.0, 0.0, np.full(6, 0.5))
    b = dynamic_constraint(dyn_cfg(), m, st, Wrench([0, 1.0, 0]), 0.0, 0.0, 0.1, np.full(6, 0.5))
    assert np.all(b.h < a.h)
    np.testing.assert_allclose(a.h - b.h, 0.1 * (5 + 5 + 1), atol=1e-12)


def test_dynamic_separated_empty():
    st = JointState([0.2, 1.1], [0.0, 0.0])
    assert dynamic_constraint(dyn_cfg(), planar2(), st, Wrench(), 0, 0, 0, np.zeros(6), in_contact=False).empty


def test_dynamic_positive_margin_at_rest_without_gravity():
    m = planar2(gravity=(0, 0, 0))
    st = JointState([0.2, 1.1], [0.0, 0.0])
    cs = dynamic_constraint(dyn_cfg(), m, st, Wrench(), 0, 0, 0, np.full(6, 1.0))
    assert cs.h[0] > 0
    assert cs.G[0] @ np.array([1e-3, -1e-3]) <= cs.h[0]


def test_initial_conditions():
    cfg = zcfg(l1=5.0)
    # separated start
    assert check_initial_conditions(cfg, [0, 0, 0.1], [0, 0, -1], 0.0, 0.0, 0.0, in_contact=False) == (True, True)
    # pressed 3 cm into a 200 N/m prior: 6 N > 5 N
    assert check_initial_conditions(cfg, [0, 0, -0.03], [0, 0, 0], 0.0, 0.0, 0.0)[0] is False
    # exactly at the limit, at rest
    assert check_initial_conditions(cfg, [0, 0, -0.025], [0, 0, 0], 0.0, 0.0, 0.0) == (True, True)
    # moving down fast near the limit violates the rate condition only
    assert check_initial_conditions(cfg, [0, 0, -0.02], [0, 0, -0.1], 0.0, 0.0, 0.0) == (True, False)


def test_zeta_constant():
    z0, z1, z2 = zeta_diagnostics(np.full(50, 2.0), 0.01, 3.0, 4.0)
    np.testing.assert_allclose(z1, 6.0)
    np.testing.assert_allclose(z2, 24.0)


def test_zeta_exponential_kills_first_level():
    t = np.arange(0, 2, 1e-4)
    _, z1, _ = zeta_diagnostics(np.exp(-3.0 * t), 1e-4, 3.0, 4.0)
    assert np.max(np.abs(z1)) < 1e-6


def test_zeta_linear():
    t = np.arange(0, 1, 0.01)
    _, z1, _ = zeta_diagnostics(0.5 * t, 0.01, 3.0, 4.0)
    np.testing.assert_allclose(z1, 0.5 + 3.0 * 0.5 * t, atol=1e-12)


def test_zeta_too_short():
    with pytest.raises(ValueError):
        zeta_diagnostics([1.0, 2.0], 0.1, 1.0, 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SafetyConfig(l=0.0)
    with pytest.raises(ValueError):
        SafetyConfig(h_e_max=(0, 0, 0, 0, 0, 0))
