import numpy as np
import pytest

from guardforce import oracles as orc
from guardforce.robot import (DHRow, JointState, RobotModel, SingularConfiguration, cartesian_dynamics,
                              coriolis_matrix, dynamics_terms, forward_dynamics, forward_kinematics,
                              forward_positions, gravity_vector, inertia_matrix, inverse_kinematics,
                              jacobian, jacobian_dot, kinetic_energy, planar2, preset, single_link, ur3e)


def test_planar2_straight_arm():
    np.testing.assert_allclose(forward_kinematics(planar2(), [0, 0]).position, [2, 0, 0], atol=1e-15)


def test_planar2_quarter_turn():
    np.testing.assert_allclose(forward_kinematics(planar2(), [np.pi / 2, 0]).position, [0, 2, 0], atol=1e-12)


def test_ur3e_home_matches_dh_chain_oracle():
    m = ur3e()
    pose = forward_kinematics(m, np.zeros(6))
    T = orc.dh_chain(m.dh_rows, np.zeros(6))
    np.testing.assert_allclose(pose.position, T[:3, 3], atol=1e-12)
    np.testing.assert_allclose(pose.rotation, T[:3, :3], atol=1e-12)


def test_fk_matches_oracle_random(rng):
    m = ur3e()
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 6)
        T = orc.dh_chain(m.dh_rows, q)
        pose = forward_kinematics(m, q)
        np.testing.assert_allclose(pose.position, T[:3, 3], atol=1e-12)
        R = pose.rotation
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(R) - 1) < 1e-9


def test_fk_dimension_mismatch():
    with pytest.raises(ValueError):
        forward_kinematics(planar2(), [0.0, 0.0, 0.0])


def test_batched_positions_match_fk(rng):
    m = ur3e()
    Q = rng.uniform(-3, 3, (7, 6))
    P = forward_positions(m, Q)
    for q, p in zip(Q, P):
        np.testing.assert_allclose(p, forward_kinematics(m, q).position, atol=1e-14)


def test_planar2_jacobian_at_zero():
    J = jacobian(planar2(), [0, 0])
    np.testing.assert_allclose(J[:2], [[0, 0], [2, 1]], atol=1e-15)


def test_planar_jacobian_closed_form(rng):
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, 2)
        np.testing.assert_allclose(jacobian(planar2(), q)[:2], orc.planar_jacobian([1, 1], q), atol=1e-12)


def test_single_link_jacobian():
    L, q = 0.7, 0.3
    J = jacobian(single_link(length=L), [q])
    np.testing.assert_allclose(J[:2, 0], [-L * np.sin(q), L * np.cos(q)], atol=1e-15)


@pytest.mark.parametrize("name", ["ur3e", "planar2", "link1"])
def test_jacobian_central_differences(name, rng):
    m = preset(name)
    fk_p = lambda q: forward_kinematics(m, q).position
    fk_R = lambda q: forward_kinematics(m, q).rotation
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, m.dof)
        J_fd = np.vstack([orc.fd_position_jacobian(fk_p, q), orc.fd_angular_jacobian(fk_R, q)])
        np.testing.assert_allclose(jacobian(m, q), J_fd, atol=1e-5)


def test_jacobian_dot_by_differences(rng):
    m = ur3e()
    q, qd = rng.uniform(-2, 2, 6), rng.uniform(-1, 1, 6)
    h = 1e-6
    fd = (jacobian(m, q + h * qd) - jacobian(m, q - h * qd)) / (2 * h)
    np.testing.assert_allclose(jacobian_dot(m, q, qd), fd, atol=1e-7)


def test_inverse_kinematics_round_trip():
    m = ur3e()
    q0 = np.array([0.3, -1.2, 1.4, -1.7, -1.5, 0.2])
    pose = forward_kinematics(m, q0)
    q = inverse_kinematics(m, pose.position, pose.rotation, q_seed=q0 + 0.05)
    np.testing.assert_allclose(forward_kinematics(m, q).position, pose.position, atol=1e-9)


def test_planar2_matches_lagrangian_oracle(rng):
    m = planar2(l1=0.8, l2=0.6, m1=1.5, m2=0.7)
    for _ in range(20):
        q, qd = rng.uniform(-3, 3, 2), rng.uniform(-2, 2, 2)
        M, c, g = orc.planar2_lagrangian(q, qd, 0.8, 1.5, 0.7, 0.4, 0.3, 1.5 * 0.64 / 12, 0.7 * 0.36 / 12, 9.81)
        d = dynamics_terms(m, JointState(q, qd))
        np.testing.assert_allclose(d.M, M, atol=1e-12)
        np.testing.assert_allclose(d.c_vec, c, atol=1e-12)
        np.testing.assert_allclose(d.g_vec, g, atol=1e-12)


def test_coriolis_vanishes_at_rest():
    d = dynamics_terms(planar2(), JointState([0.3, 0.4], [0.0, 0.0]))
    np.testing.assert_array_equal(d.c_vec, 0.0)


def test_zero_gravity():
    np.testing.assert_array_equal(gravity_vector(planar2(gravity=(0, 0, 0)), [0.3, 0.4]), 0.0)


def test_dynamics_unavailable_on_ur3e():
    with pytest.raises(ValueError):
        inertia_matrix(ur3e(), np.zeros(6))


def test_inertia_spd_and_skew(rng):
    m = planar2()
    h = 1e-5
    for _ in range(100):
        q, qd = rng.uniform(-np.pi, np.pi, 2), rng.uniform(-3, 3, 2)
        M = inertia_matrix(m, q)
        assert np.max(np.abs(M - M.T)) <= 1e-10
        assert np.linalg.eigvalsh(M).min() > 0
        Md = (inertia_matrix(m, q + h * qd) - inertia_matrix(m, q - h * qd)) / (2 * h)
        N = Md - 2 * coriolis_matrix(m, q, qd)
        assert np.max(np.abs(N + N.T)) <= 1e-8


def test_free_motion_conserves_kinetic_energy(rng):
    m = planar2(gravity=(0, 0, 0))
    q, qd = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    E0 = kinetic_energy(m, JointState(q, qd))
    dt = 1e-4
    f = lambda q, v: (v, forward_dynamics(m, JointState(q, v), np.zeros(2)))
    for _ in range(10_000):
        k1 = f(q, qd)
        k2 = f(q + dt / 2 * k1[0], qd + dt / 2 * k1[1])
        k3 = f(q + dt / 2 * k2[0], qd + dt / 2 * k2[1])
        k4 = f(q + dt * k3[0], qd + dt * k3[1])
        q = q + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        qd = qd + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    assert abs(kinetic_energy(m, JointState(q, qd)) - E0) <= 1e-6


def test_cartesian_identity_jacobian():
    # a single link at q=0 moves along +y with unit lever arm
    m = single_link(length=1.0)
    cd = cartesian_dynamics(m, JointState([0.0], [0.0]), rows=[1])
    np.testing.assert_allclose(cd.J, [[1.0]])
    np.testing.assert_allclose(cd.M_x, inertia_matrix(m, [0.0]))


def test_cartesian_round_trip(rng):
    """Task-space torques reproduce the commanded acceleration through joint dynamics."""
    m = planar2()
    for _ in range(20):
        q = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(0.4, 2.6)])
        qd = rng.uniform(-1, 1, 2)
        st = JointState(q, qd)
        cd = cartesian_dynamics(m, st, damped=False)
        xdd = rng.normal(size=2)
        h_app = rng.normal(size=2)
        xd = cd.J @ qd
        tau = cd.M_x @ xdd + cd.C_x @ xd + cd.G_x + cd.J.T @ h_app
        qdd = forward_dynamics(m, st, tau, ext_torque=-cd.J.T @ h_app)
        Jd = jacobian_dot(m, q, qd)[:2]
        np.testing.assert_allclose(cd.J @ qdd + Jd @ qd, xdd, atol=1e-8)


def test_singular_configuration():
    m = planar2()
    st = JointState([0.3, 0.0], [0.1, 0.2])
    with pytest.raises(SingularConfiguration):
        cartesian_dynamics(m, st, damped=False)
    cd = cartesian_dynamics(m, st, damped=True)
    assert cd.near_singular
    assert np.all(np.isfinite(cd.M_x)) and np.all(np.isfinite(cd.C_x))


def test_model_validation():
    with pytest.raises(ValueError):
        RobotModel("bad", ())
    with pytest.raises(ValueError):
        RobotModel("bad", (DHRow(1, 0, 0),), link_masses=(-1.0,))
