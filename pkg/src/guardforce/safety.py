"""Force-constrained barrier functions and their linear control constraints.

Everything here works in compression coordinates (see
:class:`~guardforce.environment.PriorModel`): along an active axis the applied
force ``h`` and the position ``x`` both grow as the tool presses in, and the
barrier is ``b = h_max - h`` while touching, ``0`` otherwise.

Rows are emitted in ``G u <= h`` form so a single projection QP handles both
the joint-velocity and the joint-torque decision variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import PriorModel, Wrench
from .robot import JointState, RobotModel, cartesian_dynamics, jacobian


@dataclass(frozen=True)
class SafetyConfig:
    h_e_max: tuple = (0.0, 0.0, 5.0, 0.0, 0.0, 0.0)
    prior: PriorModel = field(default_factory=PriorModel)
    l: float = 10.0
    l1: float = 5.0
    l2: float = 5.0
    # axes the barrier acts on; defaults to the prior's contact axis
    active_axes: tuple | None = None
    # penetration dead band before a sample counts as touching (m)
    contact_threshold: float = 1e-5

    def __post_init__(self):
        hm = np.asarray(self.h_e_max, dtype=float)
        if hm.shape != (6,):
            raise ValueError("h_e_max must have six entries")
        if min(self.l, self.l1, self.l2) <= 0:
            raise ValueError("barrier gains must be positive")
        if np.any(hm[self.mask] <= 0):
            raise ValueError("force limits on active axes must be positive")

    @property
    def mask(self) -> np.ndarray:
        if self.active_axes is None:
            m = np.zeros(6, dtype=bool)
            m[self.prior.axis_index] = True
            return m
        return np.asarray(self.active_axes, dtype=bool).reshape(6)

    @property
    def limits(self) -> np.ndarray:
        return np.asarray(self.h_e_max, dtype=float)

    @property
    def force_limit(self) -> float:
        """Limit on the contact axis."""
        return float(self.limits[self.prior.axis_index])


@dataclass(frozen=True)
class ConstraintSet:
    G: np.ndarray
    h: np.ndarray
    axes: tuple[int, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.h.shape[0] == 0

    @classmethod
    def none(cls, n: int) -> "ConstraintSet":
        return cls(np.zeros((0, n)), np.zeros(0))


def b_fc(cfg: SafetyConfig, h_e: Wrench, in_contact: bool) -> np.ndarray:
    if not in_contact:
        return np.zeros(6)
    h = cfg.prior.compress_wrench(h_e)
    return np.where(cfg.mask, cfg.limits - h, 0.0)


def _vec(v, n=6) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.full(n, float(v)) if v.ndim == 0 else v.reshape(n)


def kinematic_constraint(cfg: SafetyConfig, model: RobotModel, q, z2, sigma, barrier,
                         in_contact: bool = True) -> ConstraintSet:
    """Rows of ``K_pri J qdot <= -z2 - sigma + l b`` on the active axes."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.dof,):
        raise ValueError(f"expected {model.dof} joint values")
    if not in_contact:
        return ConstraintSet.none(model.dof)
    axes = np.flatnonzero(cfg.mask)
    KS = cfg.prior.stiffness_matrix() @ cfg.prior.selection()
    G = (KS @ jacobian(model, q))[axes]
    h = (-_vec(z2) - _vec(sigma) + cfg.l * _vec(barrier))[axes]
    return ConstraintSet(G, h, tuple(int(a) for a in axes))


def dynamic_constraint(cfg: SafetyConfig, model: RobotModel, state: JointState, h_e: Wrench,
                       z2, z3, sigma, barrier, in_contact: bool = True,
                       damped: bool = True) -> ConstraintSet:
    """Rows of the second-order barrier condition on joint torques.

    ``K M_x^-1 tau <= F - z3 - (l1+l2+1) sigma + (l1+l2)(-K xd - z2) + l1 l2 b``
    with ``F = K M_x^-1 (J^T h_app + C_x xd + G_x)``, where ``h_app`` is the
    force the tool applies to the surface. Only the model's task rows enter,
    so ``J`` is square.
    """
    if not in_contact:
        return ConstraintSet.none(model.dof)
    rows = list(model.task_rows)
    cd = cartesian_dynamics(model, state, damped=damped, rows=rows)
    Mx_inv = np.linalg.inv(cd.M_x)
    xdot = cd.J @ state.qdot
    # restrict the compression selector and stiffness to the task rows
    S = cfg.prior.selection()[np.ix_(rows, rows)]
    K = cfg.prior.stiffness_matrix()[np.ix_(rows, rows)]
    KS = K @ S
    h_app = -h_e.vector[rows]
    F = KS @ Mx_inv @ (cd.J.T @ h_app + cd.C_x @ xdot + cd.G_x)
    l1, l2 = cfg.l1, cfg.l2
    sel = lambda v: _vec(v)[rows]
    rhs = (F - sel(z3) - (l1 + l2 + 1) * sel(sigma)
           + (l1 + l2) * (-KS @ xdot - sel(z2)) + l1 * l2 * sel(barrier))
    G = KS @ Mx_inv
    keep = [i for i, r in enumerate(rows) if cfg.mask[r]]
    return ConstraintSet(
        G[keep], rhs[keep], tuple(rows[i] for i in keep),
        diagnostics={"F": F[keep], "xdot": xdot, "near_singular": cd.near_singular},
    )


def check_initial_conditions(cfg: SafetyConfig, x0, xdot0, delta_e0, z2_0, sigma0,
                             in_contact: bool = True) -> tuple[bool, bool]:
    """Membership of the start state in the two invariant sets of the torque-level barrier.

    ``x0`` and ``xdot0`` are base-frame position/velocity (3 or 6 entries).
    """
    if not in_contact:
        return True, True
    prior = cfg.prior
    K = prior.stiffness_matrix()
    x = prior.compress_position(np.asarray(x0, dtype=float)[:3])
    v = np.zeros(6)
    v[:3] = np.asarray(xdot0, dtype=float)[:3]
    xd = prior.selection() @ v
    h0 = K @ (x - prior.rest_compressed()) + _vec(delta_e0)
    b0 = cfg.limits - h0
    c1 = -K @ xd - _vec(z2_0) - _vec(sigma0) + cfg.l1 * b0
    m = cfg.mask
    return bool(np.all(b0[m] >= 0)), bool(np.all(c1[m] >= 0))


def zeta_diagnostics(b_trace, dt: float, l1: float, l2: float):
    """Finite-difference cascade ``z0 = b, z1 = z0' + l1 z0, z2 = z1' + l2 z1``.

    Second-order central differences in the interior, one-sided at the ends.
    """
    b = np.asarray(b_trace, dtype=float)
    if b.shape[0] < 3:
        raise ValueError("need at least three samples")
    zeta0 = b
    zeta1 = np.gradient(zeta0, dt, axis=0, edge_order=2) + l1 * zeta0
    zeta2 = np.gradient(zeta1, dt, axis=0, edge_order=2) + l2 * zeta1
    return zeta0, zeta1, zeta2
