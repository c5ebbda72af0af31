"""Nominal compliant controllers and the safety-filtered control steps.

Wrench conventions: the simulator measures the reaction acting on the tool.
The admittance law and the barrier work with the force the tool applies to
the surface, which is the negative of that reaction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator as est
from .environment import PriorModel, Wrench, lumped_uncertainty
from .qp import QpProblem, QpSolution, solve, solve_with_slack
from .robot import (JointState, Pose, RobotModel, cartesian_dynamics, damped_pinv,
                    forward_kinematics, jacobian, min_singular_value,
                    rotation_error, SINGULAR_SV, DEFAULT_DLS_DAMPING)
from .safety import (ConstraintSet, SafetyConfig, b_fc, dynamic_constraint,
                     kinematic_constraint)


def _diag6(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.full(6, float(v)) if v.ndim == 0 else v.reshape(6).copy()


def _as6(x) -> np.ndarray:
    if isinstance(x, Pose):
        return x.as_vector()
    x = np.asarray(x, dtype=float).reshape(-1)
    out = np.zeros(6)
    out[: x.shape[0]] = x
    return out


# --------------------------------------------------------------------------
# admittance

@dataclass(frozen=True)
class AdmittanceParams:
    """Virtual mass-spring-damper with its commanded pose ``x_c`` and rate ``xd_c``.

    The angular half of ``x_c`` is a rotation vector; the simulator keeps it
    relative to the reference orientation.
    """

    M_I: float | tuple = 1.0
    D_I: float | tuple = 40.0
    K_I: float | tuple = 600.0
    x_c: np.ndarray = field(default_factory=lambda: np.zeros(6))
    xd_c: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        for name in ("M_I", "D_I", "K_I"):
            if np.any(_diag6(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "x_c", _as6(self.x_c))
        object.__setattr__(self, "xd_c", _as6(self.xd_c))

    def reset(self, x, xd=None) -> "AdmittanceParams":
        return replace(self, x_c=_as6(x), xd_c=np.zeros(6) if xd is None else _as6(xd))


def admittance_update(params: AdmittanceParams, h_e: Wrench, x_ref, dt: float,
                      xdot_ref=None) -> AdmittanceParams:
    """One RK4 step of ``M xdd + D (xd - xd_ref) + K (x - x_ref) = -h_e``.

    ``h_e`` is the wrench the tool applies to its surroundings.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    M, D, K = _diag6(params.M_I), _diag6(params.D_I), _diag6(params.K_I)
    xr = _as6(x_ref)
    vr = np.zeros(6) if xdot_ref is None else _as6(xdot_ref)
    f = -(h_e.vector if isinstance(h_e, Wrench) else _as6(h_e))

    def rhs(x, v):
        return v, (f - D * (v - vr) - K * (x - xr)) / M

    x, v = params.x_c, params.xd_c
    k1x, k1v = rhs(x, v)
    k2x, k2v = rhs(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
    k3x, k3v = rhs(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
    k4x, k4v = rhs(x + dt * k3x, v + dt * k3v)
    return replace(
        params,
        x_c=x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
        xd_c=v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


# --------------------------------------------------------------------------
# resolved rate

@dataclass(frozen=True)
class NominalGains:
    K_c: float = 0.2
    # Cartesian error gain; defaults to K_c
    K_task: float | None = None
    damping: float = DEFAULT_DLS_DAMPING

    def __post_init__(self):
        if self.K_c <= 0 or (self.K_task is not None and self.K_task <= 0):
            raise ValueError("feedback gains must be positive")

    @property
    def task_gain(self) -> float:
        return self.K_c if self.K_task is None else self.K_task


def task_error(model: RobotModel, q, x_cmd) -> np.ndarray:
    """Pose error on the model's task rows (position, then rotation vector)."""
    pose = forward_kinematics(model, q)
    err = np.zeros(6)
    if isinstance(x_cmd, Pose):
        err[:3] = x_cmd.position - pose.position
        err[3:] = rotation_error(x_cmd.rotation, pose.rotation)
    else:
        xc = _as6(x_cmd)
        err[:3] = xc[:3] - pose.position
    return err[list(model.task_rows)]


def resolved_rate_nominal(model: RobotModel, q, x_cmd, xdot_cmd, gains: NominalGains,
                          q_ref=None) -> tuple[np.ndarray, bool]:
    """``qd = J+ (xd_cmd + K_task e) + K_c (q_ref - q)``; returns the singularity flag too.

    The joint-space term is dropped when no ``q_ref`` is given.
    """
    q = np.asarray(q, dtype=float)
    rows = list(model.task_rows)
    J = jacobian(model, q)[rows]
    v = _as6(xdot_cmd)[rows] + gains.task_gain * task_error(model, q, x_cmd)
    qd = damped_pinv(J, gains.damping) @ v
    if q_ref is not None:
        qd = qd + gains.K_c * (np.asarray(q_ref, dtype=float) - q)
    return qd, min_singular_value(J) < SINGULAR_SV


# --------------------------------------------------------------------------
# force loop

@dataclass(frozen=True)
class ForceLoopParams:
    k_p: float = 1e-5
    k_i: float = 1e-2
    F_d: float = 4.0
    # anti-windup: |k_i * integral| never exceeds this offset (m)
    offset_limit: float = 0.05
    integral: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.k_p < 0 or self.k_i < 0:
            raise ValueError("force loop gains must be non-negative")
        if not (np.isfinite(self.offset_limit) and self.offset_limit > 0):
            raise ValueError("anti-windup bound must be positive and finite")


def force_loop_update(params: ForceLoopParams, F_meas: float, dt: float) -> ForceLoopParams:
    """PI on ``F_d - F_meas``; the offset is a reference shift into the surface (m)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = params.F_d - float(F_meas)
    integral = params.integral + e * dt
    if params.k_i > 0:
        cap = params.offset_limit / params.k_i
        if abs(integral) > cap:
            # freeze at the bound rather than accumulate
            integral = float(np.clip(integral, -cap, cap))
    offset = params.k_p * e + params.k_i * integral
    offset = float(np.clip(offset, -params.offset_limit, params.offset_limit))
    return replace(params, integral=integral, offset=offset)


# --------------------------------------------------------------------------
# safety filter

@dataclass
class Sc3Context:
    """Mutable state of one safety filter, owned by a single control loop."""

    model: RobotModel
    safety: SafetyConfig
    estimator: est.EstimatorState
    bound: est.ErrorBoundParams = field(default_factory=est.ErrorBoundParams)
    # sub-steps per control tick for the differentiator
    substeps: int = 20
    # feed zero to the differentiator while separated
    mask_separated: bool = True
    # slack penalty for infeasible ticks; None leaves the nominal command unfiltered
    slack_penalty: float | None = 1e6
    t: float = 0.0

    @property
    def prior(self) -> PriorModel:
        return self.safety.prior


@dataclass(frozen=True)
class StepDiagnostics:
    u_nom: np.ndarray
    u_star: np.ndarray
    delta: np.ndarray
    barrier: np.ndarray
    sigma: np.ndarray
    constraints: ConstraintSet
    solution: QpSolution | None
    in_contact: bool
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray | None = None

    @property
    def active(self) -> bool:
        return self.solution is not None and len(self.solution.active_set) > 0

    @property
    def feasible(self) -> bool:
        """The hard constraint holds at ``u_star`` (no slack, no fallback)."""
        if self.constraints.empty:
            return True
        return self.solution is not None and self.solution.optimal and self.solution.slack <= 1e-12

    @property
    def multipliers(self) -> np.ndarray:
        if self.solution is None:
            return np.zeros(0)
        return self.solution.multipliers


def _estimate(ctx: Sc3Context, h_e: Wrench, x, in_contact: bool, dt: float):
    delta = lumped_uncertainty(h_e, x, ctx.prior)
    feed = np.zeros_like(delta) if (ctx.mask_separated and not in_contact) else delta
    n = max(int(ctx.substeps), 1)
    ctx.estimator = est.td_advance(ctx.estimator, feed, dt / n, n)
    ctx.t += dt
    sigma = est.sigma_vector(est.error_bound(ctx.bound, ctx.t))
    return delta, sigma


def _filter(ctx: Sc3Context, u_nom: np.ndarray, cs: ConstraintSet):
    if cs.empty:
        return u_nom, None
    sol = solve(QpProblem(u_nom, cs.G, cs.h))
    if not sol.optimal and ctx.slack_penalty is not None:
        sol = solve_with_slack(QpProblem(u_nom, cs.G, cs.h), ctx.slack_penalty)
    if not sol.optimal:
        return u_nom, sol
    return sol.u_star, sol


def sc3_kinematic_step(ctx: Sc3Context, q, qdot_nom, h_e: Wrench, in_contact: bool,
                       dt: float) -> tuple[np.ndarray, StepDiagnostics]:
    """Velocity-level filter; ``h_e`` is the measured reaction on the tool."""
    q = np.asarray(q, dtype=float)
    u_nom = np.asarray(qdot_nom, dtype=float)
    x = forward_kinematics(ctx.model, q)
    delta, sigma = _estimate(ctx, h_e, x, in_contact, dt)
    b = b_fc(ctx.safety, h_e, in_contact)
    s = ctx.estimator
    cs = kinematic_constraint(ctx.safety, ctx.model, q, s.z2, sigma, b, in_contact=in_contact)
    u, sol = _filter(ctx, u_nom, cs)
    return u, StepDiagnostics(u_nom, u, delta, b, sigma, cs, sol, in_contact, s.z1, s.z2)


def sc3_dynamic_step(ctx: Sc3Context, state: JointState, tau_nom, h_e: Wrench,
                     in_contact: bool, dt: float) -> tuple[np.ndarray, StepDiagnostics]:
    """Torque-level filter; needs a third-order differentiator."""
    if ctx.estimator.order != 3:
        raise ValueError("torque-level filtering needs a third-order differentiator")
    u_nom = np.asarray(tau_nom, dtype=float)
    x = forward_kinematics(ctx.model, state.q)
    delta, sigma = _estimate(ctx, h_e, x, in_contact, dt)
    b = b_fc(ctx.safety, h_e, in_contact)
    s = ctx.estimator
    cs = dynamic_constraint(ctx.safety, ctx.model, state, h_e, s.z2, s.z3, sigma, b,
                            in_contact=in_contact)
    u, sol = _filter(ctx, u_nom, cs)
    return u, StepDiagnostics(u_nom, u, delta, b, sigma, cs, sol, in_contact, s.z1, s.z2, s.z3)


# --------------------------------------------------------------------------
# computed torque

@dataclass(frozen=True)
class ComputedTorqueGains:
    kp: float = 10.0
    kd: float = 5.0


def computed_torque_nominal(model: RobotModel, state: JointState, x_des, xd_des=None,
                            xdd_des=None, gains: ComputedTorqueGains = ComputedTorqueGains()) -> np.ndarray:
    """Task-space inverse dynamics with PD feedback; ignores contact forces."""
    rows = list(model.task_rows)
    cd = cartesian_dynamics(model, state, rows=rows)
    pose = forward_kinematics(model, state.q)
    xd = cd.J @ state.qdot
    e = (_as6(x_des)[:3] - pose.position)
    e = np.concatenate([e, np.zeros(3)])[rows]
    ed = (np.zeros(len(rows)) if xd_des is None else _as6(xd_des)[rows]) - xd
    a = (np.zeros(len(rows)) if xdd_des is None else _as6(xdd_des)[rows]) + gains.kp * e + gains.kd * ed
    return cd.M_x @ a + cd.C_x @ xd + cd.G_x
