"""Fixed-step closed-loop simulation of the scenarios in :mod:`guardforce.scenarios`.

Each control tick measures the contact wrench, runs the nominal controller
and (optionally) the safety filter, then holds the command over ``substeps``
plant sub-steps. Velocity-level plants execute the joint rates exactly;
torque-level plants integrate the rigid-body dynamics with RK4.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import controllers as ctl
from .environment import (PriorModel, SeriesHybrid, Wrench, contact_force, lumped_uncertainty,
                          step_env_path, step_env_state)
from .estimator import EstimatorState
from .robot import (JointState, Pose, RobotModel, forward_dynamics, forward_kinematics, forward_positions,
                    inverse_kinematics, jacobian, jacobian_dot, preset)
from .safety import SafetyConfig, b_fc
from .scenarios import Scenario

DOWN_ROTATION = np.diag([1.0, -1.0, -1.0])
FORCE_TOL = 0.01


@dataclass
class Trace:
    """Per-tick record. Forces are along the contact axis, positive when pressing."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qd_nom: np.ndarray
    x: np.ndarray          # contact-axis coordinate of the tool
    xd: np.ndarray
    xdd: np.ndarray        # axis acceleration at the tick; zero for velocity plants
    force: np.ndarray
    b_fc: np.ndarray
    sigma: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    active: np.ndarray
    lam: np.ndarray
    feasible: np.ndarray   # filter constraint held without slack
    in_contact: np.ndarray
    violation: np.ndarray
    x_ref: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def __len__(self) -> int:
        return self.t.shape[0]


@dataclass(frozen=True)
class Metrics:
    max_force: float
    violations: int
    violation_time: float
    steady_force: float
    steady_band: float
    rms_tracking: float
    active_fraction: float
    min_b_fc: float
    contact_fraction: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _axis_index(axis) -> int:
    return int(np.argmax(np.abs(np.asarray(axis, dtype=float))))


def safety_config(s: Scenario) -> SafetyConfig:
    axis = tuple(float(a) for a in s.environment.axis)
    prior = PriorModel(s.safety.K_pri, s.safety.rest_pri, axis)
    limits = np.zeros(6)
    limits[prior.axis_index] = s.safety.F_max
    return SafetyConfig(tuple(limits), prior, s.safety.l, s.safety.l1, s.safety.l2,
                        contact_threshold=s.safety.contact_threshold)


def _wrap(q: np.ndarray) -> np.ndarray:
    return (q + np.pi) % (2 * np.pi) - np.pi


def initial_configuration(s: Scenario, model: RobotModel) -> tuple[np.ndarray, np.ndarray]:
    """Joint angles placing the tool at the start point, plus the start point."""
    p0 = np.array(s.start, dtype=float)
    if s.start_on_reference:
        p0[_axis_index(s.environment.axis)] = s.reference(0.0)[0]
    if model.name == "ur3e":
        seed = [0.0, -np.pi / 2, np.pi / 2, -np.pi / 2, -np.pi / 2, 0.0]
        q = inverse_kinematics(model, p0, DOWN_ROTATION, q_seed=seed)
    else:
        # elbow-down branch of the two-link arm
        q = inverse_kinematics(model, p0, q_seed=[-1.2, 1.6])
    return _wrap(q), p0


class _Measure:
    """Contact sensing shared by both plants."""

    def __init__(self, env, threshold):
        self.env = env
        self.threshold = threshold

    def __call__(self, pose: Pose, v: np.ndarray) -> tuple[Wrench, bool]:
        if self.env is None:
            return Wrench.zero(), False
        return contact_force(self.env, pose, v, threshold=self.threshold)


def _estimator_ctx(s: Scenario, model, cfg, est0: EstimatorState) -> ctl.Sc3Context:
    return ctl.Sc3Context(
        model=model, safety=cfg, estimator=est0, bound=s.estimator.bound(),
        substeps=s.substeps, mask_separated=s.estimator.mask_separated,
        slack_penalty=s.safety.slack_penalty,
    )


def _seed_estimator(s: Scenario, cfg: SafetyConfig, h: Wrench, pose: Pose, contact: bool) -> EstimatorState:
    """Start the differentiator on the first measurement to avoid a start-up kick."""
    est0 = s.estimator.initial_state()
    d0 = lumped_uncertainty(h, pose, cfg.prior)
    if s.estimator.mask_separated and not contact:
        d0 = np.zeros(6)
    return replace(est0, z1=d0)


def run_scenario(s: Scenario) -> Trace:
    if s.robot == "planar2":
        return _run_dynamic(s)
    return _run_kinematic(s)


class _Recorder:
    def __init__(self, n_ticks: int, dof: int):
        self.rows: dict[str, list] = {}

    def add(self, **kw):
        for k, v in kw.items():
            self.rows.setdefault(k, []).append(v)

    def build(self, meta) -> Trace:
        arr = {k: np.asarray(v, dtype=float) for k, v in self.rows.items()}
        for k in ("active", "feasible", "in_contact", "violation"):
            arr[k] = arr[k].astype(bool)
        return Trace(meta=meta, **arr)


def _run_kinematic(s: Scenario) -> Trace:
    model = preset(s.robot)
    cfg = safety_config(s)
    env = s.environment.build()
    measure = _Measure(env, cfg.contact_threshold)
    ai = cfg.prior.axis_index
    sgn = float(np.sign(cfg.prior.selection()[ai, ai]))
    kind = s.controller.kind
    c = s.controller
    q, p0 = initial_configuration(s, model)
    R_ref = DOWN_ROTATION
    adm = ctl.AdmittanceParams(c.M_I, c.D_I, c.K_I).reset(np.concatenate([p0, np.zeros(3)]))
    gains = ctl.NominalGains(c.K_c, c.K_task)
    floop = ctl.ForceLoopParams(c.k_p, c.k_i, c.F_d, c.offset_limit)
    force_loop = kind.startswith("parallel_fp")
    u = np.zeros(model.dof)
    pose = forward_kinematics(model, q)
    h, contact = measure(pose, np.zeros(3))
    ctx = _estimator_ctx(s, model, cfg, _seed_estimator(s, cfg, h, pose, contact)) if s.filtered else None
    n_ticks = int(round(s.duration / s.dt))
    hsub = s.dt / s.substeps
    rec = _Recorder(n_ticks, model.dof)
    hybrid = isinstance(env, SeriesHybrid)
    for k in range(n_ticks):
        t = k * s.dt
        pose = forward_kinematics(model, q)
        J = jacobian(model, q)
        v = J[:3] @ u
        h, contact = measure(pose, v)
        # nominal: reference, optional force loop, admittance, resolved rate
        z_ref, zd_ref = s.reference(t)
        x_ref = np.concatenate([p0, np.zeros(3)])
        xd_ref = np.zeros(6)
        x_ref[ai], xd_ref[ai] = z_ref, zd_ref
        f_meas = float(cfg.prior.compress_wrench(h)[ai])
        if force_loop:
            if contact:
                floop = ctl.force_loop_update(floop, f_meas, s.dt)
            # offset pushes the reference into the surface
            x_ref[ai] += sgn * floop.offset
        adm = ctl.admittance_update(adm, Wrench(-h.force, -h.moment), x_ref, s.dt, xd_ref)
        x_cmd = Pose(adm.x_c[:3], R_ref)
        u_nom, _ = ctl.resolved_rate_nominal(model, q, x_cmd, adm.xd_c, gains)
        if ctx is not None:
            u, diag = ctl.sc3_kinematic_step(ctx, q, u_nom, h, contact, s.dt)
            sigma = float(diag.sigma[ai])
            b = float(diag.barrier[ai])
            zs = (float(diag.z1[ai]), float(diag.z2[ai]), 0.0)
            active, feasible = diag.active, diag.feasible
            lam = float(diag.multipliers.sum())
        else:
            u = u_nom
            sigma, lam, active, feasible = 0.0, 0.0, False, True
            b = float(b_fc(cfg, h, contact)[ai])
            zs = (0.0, 0.0, 0.0)
        rec.add(t=t, q=q.copy(), qd=u.copy(), qd_nom=u_nom.copy(), x=pose.position[ai],
                xd=v[ai], xdd=0.0, force=f_meas, b_fc=b, sigma=sigma, z1=zs[0], z2=zs[1], z3=zs[2],
                active=active, lam=lam, feasible=feasible, in_contact=contact,
                violation=f_meas > s.safety.F_max * (1 + FORCE_TOL), x_ref=z_ref)
        # plant: ideal joint-rate tracking, zero-order hold
        if hybrid:
            steps = np.arange(1, s.substeps + 1)[:, None] * hsub
            env = step_env_path(env, forward_positions(model, q + steps * u), hsub)
            measure.env = env
        q = q + s.dt * u
    return rec.build(_meta(s))


def _meta(s: Scenario) -> dict:
    return {"scenario": s.name, "dt": s.dt, "F_max": s.safety.F_max,
            "steady_window": s.reference.steady_window(s.duration)}


def _run_dynamic(s: Scenario) -> Trace:
    model = preset(s.robot)
    cfg = safety_config(s)
    env = s.environment.build()
    measure = _Measure(env, cfg.contact_threshold)
    ai = cfg.prior.axis_index
    rows = list(model.task_rows)
    c = s.controller
    ct_gains = ctl.ComputedTorqueGains(c.kp_ct, c.kd_ct)
    q, p0 = initial_configuration(s, model)
    qd = np.zeros(model.dof)
    pose = forward_kinematics(model, q)
    h, contact = measure(pose, np.zeros(3))
    ctx = None
    if s.filtered:
        ctx = _estimator_ctx(s, model, cfg, _seed_estimator(s, cfg, h, pose, contact))
    n_ticks = int(round(s.duration / s.dt))
    hsub = s.dt / s.substeps
    rec = _Recorder(n_ticks, model.dof)

    def accel(qq, vv, tau, env_now):
        p = forward_kinematics(model, qq)
        Jf = jacobian(model, qq)
        w, _ = (Wrench.zero(), False) if env_now is None else contact_force(env_now, p, Jf[:3] @ vv)
        ext = Jf[rows].T @ w.vector[rows]
        return forward_dynamics(model, JointState(qq, vv), tau, ext)

    for k in range(n_ticks):
        t = k * s.dt
        state = JointState(q, qd)
        pose = forward_kinematics(model, q)
        J = jacobian(model, q)
        v = J[:3] @ qd
        h, contact = measure(pose, v)
        z_ref, zd_ref = s.reference(t)
        x_des = p0.copy()
        x_des[ai] = z_ref
        xd_des = np.zeros(3)
        xd_des[ai] = zd_ref
        tau_nom = ctl.computed_torque_nominal(model, state, x_des, xd_des, gains=ct_gains)
        f_meas = float(cfg.prior.compress_wrench(h)[ai])
        if ctx is not None:
            tau, diag = ctl.sc3_dynamic_step(ctx, state, tau_nom, h, contact, s.dt)
            sigma, b = float(diag.sigma[ai]), float(diag.barrier[ai])
            zs = (float(diag.z1[ai]), float(diag.z2[ai]), float(diag.z3[ai]))
            active, lam = diag.active, float(diag.multipliers.sum())
            feasible = diag.feasible
        else:
            tau = tau_nom
            sigma, lam, active, feasible = 0.0, 0.0, False, True
            b = float(b_fc(cfg, h, contact)[ai])
            zs = (0.0, 0.0, 0.0)
        qdd0 = accel(q, qd, tau, env)
        xdd = float((J[:3] @ qdd0 + jacobian_dot(model, q, qd)[:3] @ qd)[ai])
        rec.add(t=t, q=q.copy(), qd=qd.copy(), qd_nom=tau_nom.copy(), x=pose.position[ai],
                xd=v[ai], xdd=xdd, force=f_meas, b_fc=b, sigma=sigma, z1=zs[0], z2=zs[1], z3=zs[2],
                active=active, lam=lam, feasible=feasible, in_contact=contact,
                violation=f_meas > s.safety.F_max * (1 + FORCE_TOL), x_ref=z_ref)
        for j in range(s.substeps):
            k1q, k1v = qd, (qdd0 if j == 0 else accel(q, qd, tau, env))
            k2q, k2v = qd + 0.5 * hsub * k1v, accel(q + 0.5 * hsub * k1q, qd + 0.5 * hsub * k1v, tau, env)
            k3q, k3v = qd + 0.5 * hsub * k2v, accel(q + 0.5 * hsub * k2q, qd + 0.5 * hsub * k2v, tau, env)
            k4q, k4v = qd + hsub * k3v, accel(q + hsub * k3q, qd + hsub * k3v, tau, env)
            q = q + hsub / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
            qd = qd + hsub / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
            env = step_env_state(env, forward_kinematics(model, q), hsub) if env is not None else None
        measure.env = env
    return rec.build(_meta(s))


def compute_metrics(trace: Trace, F_max: float | None = None, steady_window=None) -> Metrics:
    F_max = trace.meta.get("F_max") if F_max is None else F_max
    if steady_window is None:
        steady_window = trace.meta.get("steady_window")
    dt = float(trace.meta.get("dt", trace.t[1] - trace.t[0] if len(trace) > 1 else 0.0))
    f = trace.force
    viol = f > F_max * (1 + FORCE_TOL)
    if steady_window is not None:
        m = (trace.t >= steady_window[0]) & (trace.t <= steady_window[1])
    else:
        m = np.zeros(len(trace), dtype=bool)
        m[int(0.75 * len(trace)):] = True
    tail = f[m] if m.any() else f[-1:]
    return Metrics(
        max_force=float(f.max(initial=0.0)),
        violations=int(viol.sum()),
        violation_time=float(viol.sum() * dt),
        steady_force=float(tail.mean()),
        steady_band=float(np.abs(tail - F_max).max()),
        rms_tracking=float(np.sqrt(np.mean((trace.x - trace.x_ref) ** 2))),
        active_fraction=float(trace.active.mean()),
        min_b_fc=float(trace.b_fc.min(initial=0.0)),
        contact_fraction=float(trace.in_contact.mean()),
    )
