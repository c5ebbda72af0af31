"""Scenario descriptions, reference signals and the built-in scenario library.

A :class:`Scenario` is plain data (numbers, strings, tuples) so it can be
written to and read from a config file and patched with ``key=value``
overrides. Runtime objects are built from it by :mod:`guardforce.sim`.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import environment as env_mod
from .estimator import ErrorBoundParams, EstimatorState, select_bound

SCHEMA_VERSION = 1

CONTROLLERS = (
    "admittance", "admittance+sc3", "parallel_fp", "parallel_fp+sc3",
    "computed_torque", "dynamic_sc3",
)
# plain counterpart used as the comparison baseline for each filtered controller
BASELINES = {
    "admittance+sc3": "admittance",
    "parallel_fp+sc3": "parallel_fp",
    "dynamic_sc3": "computed_torque",
}


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str = "spring"  # spring | kelvin_voigt | hybrid | none
    stiffness: float = 1000.0
    damping: float = 10.0
    k_spring: float = 2000.0
    k_sponge: float = 1000.0
    d_sponge: float = 50.0
    rest: float = 0.011
    axis: tuple = env_mod.DOWN
    clamp: bool = True

    def build(self) -> env_mod.EnvironmentModel | None:
        axis = tuple(float(a) for a in self.axis)
        if self.kind == "spring":
            return env_mod.Spring(self.stiffness, self.rest, axis)
        if self.kind == "kelvin_voigt":
            return env_mod.KelvinVoigt(self.stiffness, self.damping, self.rest, axis, self.clamp)
        if self.kind == "hybrid":
            return env_mod.SeriesHybrid(self.k_spring, self.k_sponge, self.d_sponge, self.rest, axis)
        if self.kind == "none":
            return None
        raise ValueError(f"unknown environment kind {self.kind!r}")


@dataclass(frozen=True)
class SafetySpec:
    F_max: float = 5.0
    l: float = 10.0
    l1: float = 5.0
    l2: float = 5.0
    K_pri: float = 200.0
    rest_pri: float = 0.0
    contact_threshold: float = 1e-5
    # None: leave the nominal command untouched when the QP is infeasible
    slack_penalty: float | None = 1e6


@dataclass(frozen=True)
class EstimatorSpec:
    L1: float = 110.0
    L2: float = 3000.0
    L3: float | None = None
    mode: str = "constant"
    sigma_bar: float = 1.0
    alpha: float | None = None
    epsilon: float | None = None
    beta: float = 0.0
    z0_norm: float = 0.0
    # zero the differentiator input while separated (off: keeps it continuous at contact)
    mask_separated: bool = False

    def bound(self) -> ErrorBoundParams:
        if self.mode == "auto":
            return select_bound(self.L1, self.L2, self.L3, self.sigma_bar, self.epsilon,
                                self.beta, self.z0_norm)
        return ErrorBoundParams(self.mode, self.sigma_bar, self.alpha, self.epsilon,
                                self.beta, self.z0_norm)

    def initial_state(self) -> EstimatorState:
        return EstimatorState.zeros(self.L1, self.L2, self.L3)


@dataclass(frozen=True)
class ReferenceSpec:
    """Contact-axis coordinate of the position reference (base frame, m).

    ``square``: starts at ``high``, first moves to ``low`` at ``start`` and
    alternates every half ``period``; transitions are ramps at ``slew`` m/s
    (``slew <= 0`` gives steps).
    ``sinusoid``: ``offset - amplitude sin(omega t)``.
    ``constant``: holds ``high`` until ``start``, then ramps to ``value``.
    """

    kind: str = "square"
    high: float = 0.045
    low: float = -0.005
    period: float = 20.0
    start: float = 5.0
    slew: float = 0.02
    amplitude: float = 0.04
    omega: float = 0.1 * math.pi
    offset: float = 0.025
    value: float = 0.0

    def _ramp(self, a: float, b: float, tau: float) -> tuple[float, float]:
        if self.slew <= 0 or tau * self.slew >= abs(b - a):
            return b, 0.0
        s = math.copysign(self.slew, b - a)
        return a + s * tau, s

    def __call__(self, t: float) -> tuple[float, float]:
        """Reference position and rate at ``t``."""
        if self.kind == "sinusoid":
            return (self.offset - self.amplitude * math.sin(self.omega * t),
                    -self.amplitude * self.omega * math.cos(self.omega * t))
        if t < self.start:
            return self.high, 0.0
        if self.kind == "constant":
            return self._ramp(self.high, self.value, t - self.start)
        if self.kind == "square":
            tau = (t - self.start) % self.period
            half = 0.5 * self.period
            if tau < half:
                return self._ramp(self.high, self.low, tau)
            return self._ramp(self.low, self.high, tau - half)
        raise ValueError(f"unknown reference kind {self.kind!r}")

    def steady_window(self, duration: float) -> tuple[float, float] | None:
        """Final 25% of the last fully settled hold at the pressed level."""
        if self.kind == "constant":
            return 0.75 * duration, duration
        if self.kind != "square":
            return None
        ramp = 0.0 if self.slew <= 0 else abs(self.high - self.low) / self.slew
        half = 0.5 * self.period
        k = math.floor((duration - self.start) / self.period)
        while k >= 0:
            t0 = self.start + k * self.period + ramp
            t1 = min(self.start + k * self.period + half, duration)
            if t1 - t0 > 0.5 * (half - ramp):
                return t1 - 0.25 * (t1 - t0), t1
            k -= 1
        return None


@dataclass(frozen=True)
class ControllerSpec:
    kind: str = "admittance+sc3"
    M_I: float = 1.0
    D_I: float = 40.0
    K_I: float = 600.0
    K_c: float = 0.2
    K_task: float | None = None
    k_p: float = 1e-5
    k_i: float = 1e-2
    F_d: float = 4.0
    offset_limit: float = 0.05
    kp_ct: float = 10.0
    kd_ct: float = 5.0


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    robot: str = "ur3e"
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    safety: SafetySpec = field(default_factory=SafetySpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    duration: float = 40.0
    dt: float = 0.02
    substeps: int = 20
    seed: int = 0
    # initial tool position (base frame); the contact-axis entry is replaced
    # by the reference at t = 0 unless ``start_on_reference`` is false
    start: tuple = (0.3, 0.1, 0.045)
    start_on_reference: bool = True
    description: str = ""

    def __post_init__(self):
        if self.duration <= 0 or self.dt <= 0 or self.substeps < 1:
            raise ValueError("duration, dt and substeps must be positive")
        if self.controller.kind not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller.kind!r}; choose from {CONTROLLERS}")
        if self.reference.kind not in ("square", "sinusoid", "constant"):
            raise ValueError(f"unknown reference kind {self.reference.kind!r}")
        if self.robot not in ("ur3e", "planar2"):
            raise ValueError(f"unknown robot {self.robot!r}")
        dynamic = self.controller.kind in ("computed_torque", "dynamic_sc3")
        if dynamic != (self.robot == "planar2"):
            raise ValueError("torque-level controllers run on planar2, velocity-level ones on ur3e")

    @property
    def filtered(self) -> bool:
        return self.controller.kind.endswith("sc3")

    def baseline(self) -> "Scenario":
        """Same scenario with the safety filter removed."""
        kind = BASELINES.get(self.controller.kind, self.controller.kind)
        return replace(self, controller=replace(self.controller, kind=kind))


# --------------------------------------------------------------------------
# built-ins

_SQUARE = ReferenceSpec()
_SINE = ReferenceSpec(kind="sinusoid")


def _kin(name, env, F_max, **kw) -> Scenario:
    safety = kw.pop("safety", SafetySpec(F_max=F_max))
    return Scenario(name=name, environment=env, safety=safety, **kw)


def builtin_scenarios() -> dict[str, Scenario]:
    spring = EnvironmentSpec(kind="spring", stiffness=1000.0)
    sponge = EnvironmentSpec(kind="kelvin_voigt", stiffness=1000.0, damping=10.0)
    hybrid = EnvironmentSpec(kind="hybrid", k_spring=2000.0, k_sponge=1000.0, d_sponge=50.0)
    hybrid_medium = EnvironmentSpec(kind="hybrid", k_spring=2000.0, k_sponge=400.0, d_sponge=40.0)
    hybrid_high = EnvironmentSpec(kind="hybrid", k_spring=2000.0, k_sponge=1500.0, d_sponge=60.0)
    out = [
        _kin("test1_spring", spring, 5.0, description="square presses on an elastic surface"),
        _kin("test2_sponge", sponge, 5.0, description="square presses on a viscoelastic surface"),
        _kin("test3_hybrid", hybrid, 3.0, description="square presses on a spring stacked on a sponge"),
        _kin("sinusoid_medium", hybrid_medium, 4.0, reference=_SINE,
             description="sinusoidal tracking over a medium-stiffness hybrid surface"),
        _kin("sinusoid_high", hybrid_high, 4.0, reference=_SINE,
             description="sinusoidal tracking over a high-stiffness hybrid surface"),
        _kin("force_control", hybrid, 9.0, duration=30.0,
             safety=SafetySpec(F_max=9.0, l=1.2),
             controller=ControllerSpec(kind="parallel_fp+sc3"),
             reference=ReferenceSpec(kind="constant", start=2.0, value=0.0),
             description="PI force regulation at 4 N under a 9 N limit"),
        _kin("sweep_l", hybrid, 3.0, description="test3 with the barrier gain swept (see sweep_grid)"),
        _kin("sweep_sigma", hybrid, 3.0, description="test3 with the error bound swept (see sweep_grid)"),
        Scenario(
            name="dynamic_planar2", robot="planar2",
            controller=ControllerSpec(kind="dynamic_sc3"),
            environment=EnvironmentSpec(kind="spring", stiffness=1000.0, rest=-0.789, axis=(0.0, -1.0, 0.0)),
            safety=SafetySpec(F_max=1.0, rest_pri=-0.8),
            estimator=EstimatorSpec(L1=90.0, L2=2700.0, L3=27000.0, sigma_bar=0.2),
            reference=ReferenceSpec(kind="constant", high=-0.7893, start=0.0, slew=0.0, value=-1.2),
            duration=5.0, dt=0.01, substeps=10, start=(1.2, -0.7893, 0.0), start_on_reference=False,
            description="torque-level filter on a two-link arm pressing a floor",
        ),
    ]
    return {s.name: s for s in out}


SWEEP_GRIDS = {
    "sweep_l": ("safety.l", (2.0, 5.0, 10.0)),
    "sweep_sigma": ("estimator.sigma_bar", (0.0, 0.5, 1.0)),
}


def get_scenario(name: str) -> Scenario:
    table = builtin_scenarios()
    if name not in table:
        raise KeyError(f"unknown scenario {name!r}; built-ins: {', '.join(table)}")
    return table[name]


# --------------------------------------------------------------------------
# config files and overrides

ALIASES = {
    "F_max": "safety.F_max",
    "l": "safety.l",
    "l1": "safety.l1",
    "l2": "safety.l2",
    "K_pri": "safety.K_pri",
    "sigma_bar": "estimator.sigma_bar",
    "F_d": "controller.F_d",
    "k_p": "controller.k_p",
    "k_i": "controller.k_i",
    "K_I": "controller.K_I",
    "D_I": "controller.D_I",
    "controller": "controller.kind",
}


def to_dict(s: Scenario) -> dict:
    d = dataclasses.asdict(s)
    return json.loads(json.dumps(d))  # tuples -> lists


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for k, v in data.items():
        sub = _NESTED.get((cls, k))
        if sub is not None:
            kw[k] = _build(sub, v)
        elif isinstance(v, list):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    return cls(**kw)


_NESTED = {
    (Scenario, "controller"): ControllerSpec,
    (Scenario, "environment"): EnvironmentSpec,
    (Scenario, "safety"): SafetySpec,
    (Scenario, "estimator"): EstimatorSpec,
    (Scenario, "reference"): ReferenceSpec,
}


def from_dict(d: dict) -> Scenario:
    return _build(Scenario, d)


def parse_value(text: str) -> Any:
    """int, then float, then JSON (lists, true/false/null), then the raw string."""
    for conv in (int, float, json.loads):
        try:
            return conv(text)
        except (ValueError, json.JSONDecodeError):
            pass
    return text


def _merge(base: dict, patch: dict) -> dict:
    out = dict(base)
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_overrides(s: Scenario, overrides) -> Scenario:
    """Apply ``key=value`` strings or ``(key, value)`` pairs; dotted keys reach nested fields."""
    d = to_dict(s)
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ValueError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            value = parse_value(raw.strip())
        else:
            key, value = item
        key = ALIASES.get(key.strip(), key.strip())
        parts = key.split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ValueError(f"unknown override key {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ValueError(f"unknown override key {key!r}")
        node[parts[-1]] = value
    return from_dict(d)


def load_config(path) -> Scenario:
    """Read a scenario file; ``base`` names a built-in whose values are patched."""
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    version = data.pop("schema", None)
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: expected schema: {SCHEMA_VERSION}, got {version!r}")
    base_name = data.pop("base", None)
    base = get_scenario(base_name) if base_name else Scenario()
    return from_dict(_merge(to_dict(base), data))


def dump_config(s: Scenario) -> str:
    d = {"schema": SCHEMA_VERSION, **to_dict(s)}
    return yaml.safe_dump(d, sort_keys=False)
