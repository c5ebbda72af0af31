"""Serial-arm geometry and rigid-body dynamics.

Kinematics use the standard (distal) Denavit-Hartenberg convention: each row
``(a, alpha, d, theta_offset)`` contributes ``Rz(q + theta_offset) Tz(d) Tx(a) Rx(alpha)``.
All joints are revolute.

Dynamics are only available for planar chains (every ``alpha == 0`` and
``d == 0``) with one or two links, which covers the PLANAR2 plant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_DLS_DAMPING = 1e-4
SINGULAR_SV = 1e-6


class SingularConfiguration(RuntimeError):
    """Raised when an undamped Jacobian inverse is requested at a singular pose."""


class DHRow(NamedTuple):
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


@dataclass(frozen=True)
class RobotModel:
    name: str
    dh_rows: tuple[DHRow, ...]
    link_masses: tuple[float, ...] | None = None
    # distance of each link's centre of mass from its proximal joint, along the link
    link_com_offsets: tuple[float, ...] | None = None
    # planar moment of inertia of each link about its centre of mass
    link_inertias: tuple[float, ...] | None = None
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    # rows of the 6-D twist used as the task space for resolved-rate and
    # Cartesian dynamics (planar arms use the in-plane position rows)
    task_rows: tuple[int, ...] = (0, 1, 2, 3, 4, 5)

    def __post_init__(self):
        rows = tuple(DHRow(*map(float, r)) for r in self.dh_rows)
        object.__setattr__(self, "dh_rows", rows)
        if not 1 <= len(rows) <= 6:
            raise ValueError(f"dof must be in 1..6, got {len(rows)}")
        if self.link_masses is not None:
            if len(self.link_masses) != self.dof:
                raise ValueError("one mass per link required")
            if any(m <= 0 for m in self.link_masses):
                raise ValueError("link masses must be positive")

    @property
    def dof(self) -> int:
        return len(self.dh_rows)

    @property
    def is_planar(self) -> bool:
        return all(abs(r.alpha) < 1e-12 and abs(r.d) < 1e-12 for r in self.dh_rows)

    @property
    def has_dynamics(self) -> bool:
        return self.link_masses is not None and self.is_planar and self.dof <= 2


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qdot = np.asarray(self.qdot, dtype=float)
        if q.shape != qdot.shape:
            raise ValueError("q and qdot must have the same shape")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def as_vector(self) -> np.ndarray:
        """Position padded to a 6-vector (orientation slots zero)."""
        return np.concatenate([self.position, np.zeros(3)])


@dataclass(frozen=True)
class DynamicsTerms:
    M: np.ndarray
    c_vec: np.ndarray
    g_vec: np.ndarray
    C: np.ndarray | None = None


@dataclass(frozen=True)
class CartesianDynamics:
    """Task-space terms of ``M_x xdd + C_x xd + G_x = tau - J^T h``.

    ``M_x = M J^-1`` and ``C_x = (C - M J^-1 Jdot) J^-1``; both map task
    quantities to joint torques.
    """

    M_x: np.ndarray
    C_x: np.ndarray
    G_x: np.ndarray
    J: np.ndarray
    Jdot: np.ndarray
    near_singular: bool


# --------------------------------------------------------------------------
# presets

def ur3e() -> RobotModel:
    """UR3e with the manufacturer's nominal DH table; kinematics only."""
    h = np.pi / 2
    return RobotModel(
        name="ur3e",
        dh_rows=(
            DHRow(0.0, h, 0.15185),
            DHRow(-0.24355, 0.0, 0.0),
            DHRow(-0.2132, 0.0, 0.0),
            DHRow(0.0, h, 0.13105),
            DHRow(0.0, -h, 0.08535),
            DHRow(0.0, 0.0, 0.0921),
        ),
    )


def planar2(l1: float = 1.0, l2: float = 1.0, m1: float = 1.0, m2: float = 1.0,
            gravity: Sequence[float] = (0.0, -9.81, 0.0)) -> RobotModel:
    """Two-link arm moving in the x-y plane; uniform rods, gravity along -y."""
    return RobotModel(
        name="planar2",
        dh_rows=(DHRow(l1, 0.0, 0.0), DHRow(l2, 0.0, 0.0)),
        link_masses=(m1, m2),
        link_com_offsets=(l1 / 2, l2 / 2),
        link_inertias=(m1 * l1**2 / 12, m2 * l2**2 / 12),
        gravity=tuple(float(g) for g in gravity),
        task_rows=(0, 1),
    )


def single_link(length: float = 1.0, mass: float = 1.0,
                gravity: Sequence[float] = (0.0, -9.81, 0.0)) -> RobotModel:
    return RobotModel(
        name="link1",
        dh_rows=(DHRow(length, 0.0, 0.0),),
        link_masses=(mass,),
        link_com_offsets=(length / 2,),
        link_inertias=(mass * length**2 / 12,),
        gravity=tuple(float(g) for g in gravity),
        task_rows=(0, 1),
    )


PRESETS = {"ur3e": ur3e, "planar2": planar2, "link1": single_link}


def preset(name: str) -> RobotModel:
    try:
        return PRESETS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown robot preset {name!r}; choose from {sorted(PRESETS)}") from None


# --------------------------------------------------------------------------
# kinematics

def dh_transform(row: DHRow, q: float) -> np.ndarray:
    th = float(q) + row.theta_offset
    ct, st = math.cos(th), math.sin(th)
    ca, sa = math.cos(row.alpha), math.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _check_q(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != model.dof:
        raise ValueError(f"expected {model.dof} joint values, got {q.shape[0]}")
    return q


def joint_frames(model: RobotModel, q) -> list[np.ndarray]:
    """Homogeneous transforms T_0, T_1, ..., T_n of every DH frame in the base."""
    q = _check_q(model, q)
    frames = [np.eye(4)]
    T = frames[0]
    for row, qi in zip(model.dh_rows, q):
        T = T @ dh_transform(row, qi)
        frames.append(T)
    return frames


def forward_kinematics(model: RobotModel, q) -> Pose:
    T = joint_frames(model, q)[-1]
    return Pose(T[:3, 3].copy(), T[:3, :3].copy())


def forward_positions(model: RobotModel, Q) -> np.ndarray:
    """Tool positions for a batch of configurations (rows of ``Q``)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.dof:
        raise ValueError(f"expected {model.dof} joint values per row")
    m = Q.shape[0]
    T = np.broadcast_to(np.eye(4), (m, 4, 4))
    for i, row in enumerate(model.dh_rows):
        th = Q[:, i] + row.theta_offset
        ct, st = np.cos(th), np.sin(th)
        ca, sa = math.cos(row.alpha), math.sin(row.alpha)
        A = np.zeros((m, 4, 4))
        A[:, 0, 0], A[:, 0, 1], A[:, 0, 2], A[:, 0, 3] = ct, -st * ca, st * sa, row.a * ct
        A[:, 1, 0], A[:, 1, 1], A[:, 1, 2], A[:, 1, 3] = st, ct * ca, -ct * sa, row.a * st
        A[:, 2, 1], A[:, 2, 2], A[:, 2, 3] = sa, ca, row.d
        A[:, 3, 3] = 1.0
        T = T @ A
    return T[:, :3, 3].copy()


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows are linear then angular velocity."""
    frames = joint_frames(model, q)
    p_end = frames[-1][:3, 3]
    Z = np.array([F[:3, 2] for F in frames[:-1]])
    O = np.array([F[:3, 3] for F in frames[:-1]])
    J = np.empty((6, model.dof))
    r = p_end - O
    # row-wise cross product, written out to avoid np.cross overhead
    J[0] = Z[:, 1] * r[:, 2] - Z[:, 2] * r[:, 1]
    J[1] = Z[:, 2] * r[:, 0] - Z[:, 0] * r[:, 2]
    J[2] = Z[:, 0] * r[:, 1] - Z[:, 1] * r[:, 0]
    J[3:] = Z.T
    return J


def task_jacobian(model: RobotModel, q) -> np.ndarray:
    return jacobian(model, q)[list(model.task_rows)]


def jacobian_dot(model: RobotModel, q, qdot) -> np.ndarray:
    """Time derivative of the geometric Jacobian along the motion ``qdot``."""
    qdot = np.asarray(qdot, dtype=float)
    frames = joint_frames(model, q)
    J = jacobian(model, q)
    n = model.dof
    # angular velocity of frame i and linear velocity of its origin
    omegas = [np.zeros(3)]
    vels = [np.zeros(3)]
    for i in range(n):
        omegas.append(omegas[-1] + J[3:, i] * qdot[i])
    p_end = frames[-1][:3, 3]
    v_end = J[:3] @ qdot
    for i in range(1, n + 1):
        o = frames[i][:3, 3]
        # velocity of frame origin i: only joints before it contribute
        v = np.zeros(3)
        for j in range(i):
            v += np.cross(frames[j][:3, 2], o - frames[j][:3, 3]) * qdot[j]
        vels.append(v)
    Jd = np.zeros((6, n))
    for i in range(n):
        z = frames[i][:3, 2]
        zdot = np.cross(omegas[i], z)
        r = p_end - frames[i][:3, 3]
        rdot = v_end - vels[i]
        Jd[:3, i] = np.cross(zdot, r) + np.cross(z, rdot)
        Jd[3:, i] = zdot
    return Jd


def damped_pinv(J: np.ndarray, damping: float = DEFAULT_DLS_DAMPING) -> np.ndarray:
    """Damped least-squares inverse ``J^T (J J^T + damping^2 I)^-1``."""
    JJt = J @ J.T
    return J.T @ np.linalg.solve(JJt + damping**2 * np.eye(JJt.shape[0]), np.eye(JJt.shape[0]))


def min_singular_value(J: np.ndarray) -> float:
    return float(np.linalg.svd(J, compute_uv=False).min())


def rotation_error(R_target: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Rotation vector (world frame) taking ``R`` onto ``R_target``."""
    Re = R_target @ R.T
    cos_th = np.clip((np.trace(Re) - 1.0) / 2.0, -1.0, 1.0)
    th = np.arccos(cos_th)
    w = np.array([Re[2, 1] - Re[1, 2], Re[0, 2] - Re[2, 0], Re[1, 0] - Re[0, 1]])
    if th < 1e-9:
        return 0.5 * w
    if np.pi - th < 1e-6:
        # axis from the symmetric part near a half turn
        axis = np.sqrt(np.clip((np.diag(Re) + 1.0) / 2.0, 0.0, None))
        axis *= np.where(w >= 0, 1.0, -1.0)
        return th * axis / np.linalg.norm(axis)
    return th / (2.0 * np.sin(th)) * w


def inverse_kinematics(model: RobotModel, position, rotation=None, q_seed=None,
                       tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Damped Newton iteration on the task rows; raises if it fails to converge."""
    q = np.zeros(model.dof) if q_seed is None else _check_q(model, q_seed).copy()
    rows = list(model.task_rows)
    for _ in range(max_iter):
        pose = forward_kinematics(model, q)
        err = np.zeros(6)
        err[:3] = np.asarray(position, dtype=float) - pose.position
        if rotation is not None:
            err[3:] = rotation_error(np.asarray(rotation), pose.rotation)
        e = err[rows]
        if np.linalg.norm(e) < tol:
            return q
        q = q + damped_pinv(jacobian(model, q)[rows], 1e-6) @ e
    raise RuntimeError("inverse kinematics did not converge")


# --------------------------------------------------------------------------
# dynamics (planar, one or two links)

def _require_dynamics(model: RobotModel):
    if not model.has_dynamics:
        raise ValueError(f"robot {model.name!r} has no dynamics model (planar 1-2 link arms only)")


def inertia_matrix(model: RobotModel, q) -> np.ndarray:
    _require_dynamics(model)
    q = _check_q(model, q)
    m, r, I = model.link_masses, model.link_com_offsets, model.link_inertias
    if model.dof == 1:
        return np.array([[I[0] + m[0] * r[0] ** 2]])
    l1 = model.dh_rows[0].a
    c2 = np.cos(q[1] + model.dh_rows[1].theta_offset)
    m22 = I[1] + m[1] * r[1] ** 2
    m12 = m22 + m[1] * l1 * r[1] * c2
    m11 = I[0] + m[0] * r[0] ** 2 + I[1] + m[1] * (l1 ** 2 + r[1] ** 2 + 2 * l1 * r[1] * c2)
    return np.array([[m11, m12], [m12, m22]])


def coriolis_matrix(model: RobotModel, q, qdot) -> np.ndarray:
    """Christoffel-symbol form, so that ``Mdot - 2C`` is skew-symmetric."""
    _require_dynamics(model)
    q = _check_q(model, q)
    qdot = np.asarray(qdot, dtype=float)
    if model.dof == 1:
        return np.zeros((1, 1))
    l1 = model.dh_rows[0].a
    h = -model.link_masses[1] * l1 * model.link_com_offsets[1] * np.sin(q[1] + model.dh_rows[1].theta_offset)
    return np.array([
        [h * qdot[1], h * (qdot[0] + qdot[1])],
        [-h * qdot[0], 0.0],
    ])


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    """Joint torques balancing gravity: ``-sum_k m_k Jv_k^T g``."""
    _require_dynamics(model)
    q = _check_q(model, q)
    gx, gy = float(model.gravity[0]), float(model.gravity[1])
    th, acc = [], 0.0
    for row, qi in zip(model.dh_rows, q.tolist()):
        acc += qi + row.theta_offset
        th.append(acc)
    joints = [(0.0, 0.0)]
    for k in range(model.dof):
        a = model.dh_rows[k].a
        joints.append((joints[-1][0] + a * math.cos(th[k]), joints[-1][1] + a * math.sin(th[k])))
    tau = [0.0] * model.dof
    for k in range(model.dof):
        r_k = model.link_com_offsets[k]
        cx = joints[k][0] + r_k * math.cos(th[k])
        cy = joints[k][1] + r_k * math.sin(th[k])
        for j in range(k + 1):
            rx, ry = cx - joints[j][0], cy - joints[j][1]
            # planar linear Jacobian column of the COM is (-ry, rx)
            tau[j] -= model.link_masses[k] * (-ry * gx + rx * gy)
    return np.array(tau)


def dynamics_terms(model: RobotModel, state: JointState) -> DynamicsTerms:
    M = inertia_matrix(model, state.q)
    C = coriolis_matrix(model, state.q, state.qdot)
    return DynamicsTerms(M=M, c_vec=C @ state.qdot, g_vec=gravity_vector(model, state.q), C=C)


def forward_dynamics(model: RobotModel, state: JointState, tau, ext_torque=None) -> np.ndarray:
    """Joint accelerations of ``M qdd + C qd + G = tau + ext_torque``."""
    d = dynamics_terms(model, state)
    rhs = np.asarray(tau, dtype=float) - d.c_vec - d.g_vec
    if ext_torque is not None:
        rhs = rhs + ext_torque
    return np.linalg.solve(d.M, rhs)


def kinetic_energy(model: RobotModel, state: JointState) -> float:
    M = inertia_matrix(model, state.q)
    return 0.5 * float(state.qdot @ M @ state.qdot)


def cartesian_dynamics(model: RobotModel, state: JointState, damped: bool = True,
                       damping: float = DEFAULT_DLS_DAMPING, rows=None) -> CartesianDynamics:
    rows = list(model.task_rows if rows is None else rows)
    J = jacobian(model, state.q)[rows]
    if J.shape[0] != J.shape[1]:
        raise ValueError(f"task Jacobian must be square, got {J.shape}")
    Jd = jacobian_dot(model, state.q, state.qdot)[rows]
    near_singular = min_singular_value(J) < SINGULAR_SV
    if near_singular and not damped:
        raise SingularConfiguration(f"min singular value of J below {SINGULAR_SV}")
    # exact inverse away from singularities; damping only where it is needed
    J_inv = damped_pinv(J, damping) if near_singular else np.linalg.inv(J)
    d = dynamics_terms(model, state)
    M_x = d.M @ J_inv
    C_x = (d.C - d.M @ J_inv @ Jd) @ J_inv
    return CartesianDynamics(M_x=M_x, C_x=C_x, G_x=d.g_vec, J=J, Jdot=Jd, near_singular=near_singular)
