"""Ground-truth contact laws and the controller-side prior model.

The environment occupies the half-space beyond a rest surface. ``contact_axis``
is the unit direction in which the end effector must move to press into it
(default ``-Z``: the material lies below the tool). Penetration is
``p = axis . (x - x_r)``; a positive ``p`` means the material is compressed.

Wrenches returned by :func:`contact_force` are the reaction acting on the end
effector, so pressing down on a surface below the tool gives a positive ``F_z``.

The controller never sees these models directly. It gets the measured wrench
and reasons with a :class:`PriorModel` (assumed stiffness and rest position),
working in "compression coordinates" where forces and positions along the
contact axis grow as the material is pressed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Union

import numpy as np

from .robot import Pose

DOWN = (0.0, 0.0, -1.0)


@lru_cache(maxsize=32)
def _unit_cached(v: tuple) -> np.ndarray:
    u = _unit_array(np.asarray(v, dtype=float).reshape(3))
    u.flags.writeable = False
    return u


def _unit(v) -> np.ndarray:
    if isinstance(v, tuple):
        return _unit_cached(v)
    return _unit_array(np.asarray(v, dtype=float).reshape(3))


def _unit_array(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("contact axis must be a non-zero finite vector")
    return v / n


def _rest_point(rest, axis) -> np.ndarray:
    """Scalars are read as the coordinate of the surface along its own axis."""
    r = np.asarray(rest, dtype=float)
    if r.ndim == 0:
        return float(r) * np.abs(_unit(axis))
    return r.reshape(3)


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float).reshape(3))
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=float).reshape(3))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])

    @classmethod
    def zero(cls) -> "Wrench":
        return cls()


@dataclass(frozen=True)
class Spring:
    stiffness: float
    rest: float | tuple = 0.0
    contact_axis: tuple = DOWN

    def __post_init__(self):
        if self.stiffness <= 0:
            raise ValueError("stiffness must be positive")


@dataclass(frozen=True)
class KelvinVoigt:
    stiffness: float
    damping: float
    rest: float | tuple = 0.0
    contact_axis: tuple = DOWN
    # sponges cannot pull on the tool while it retreats
    clamp: bool = True

    def __post_init__(self):
        if self.stiffness <= 0 or self.damping <= 0:
            raise ValueError("stiffness and damping must be positive")


@dataclass(frozen=True)
class SeriesHybrid:
    """A spring stacked on a Kelvin-Voigt sponge.

    ``deflection`` is the sponge compression; the spring carries
    ``k_spring * (p - deflection)``.
    """

    k_spring: float
    k_sponge: float
    d_sponge: float
    rest: float | tuple = 0.0
    contact_axis: tuple = DOWN
    deflection: float = 0.0

    def __post_init__(self):
        if min(self.k_spring, self.k_sponge, self.d_sponge) <= 0:
            raise ValueError("stiffness and damping must be positive")
        if not np.isfinite(self.deflection):
            raise ValueError("sponge deflection must be finite")

    @property
    def series_stiffness(self) -> float:
        return self.k_spring * self.k_sponge / (self.k_spring + self.k_sponge)


EnvironmentModel = Union[Spring, KelvinVoigt, SeriesHybrid]


def penetration(env: EnvironmentModel, position) -> float:
    axis = _unit(env.contact_axis)
    return float(axis @ (np.asarray(position, dtype=float) - _rest_point(env.rest, env.contact_axis)))


def normal_force(env: EnvironmentModel, p: float, pdot: float) -> tuple[float, bool]:
    """Scalar contact law: compressive force magnitude and whether touching."""
    if isinstance(env, SeriesHybrid):
        # after a fast retreat the sponge may still be compressed: the top of
        # the stack sits at ``deflection`` below the rest surface
        touching = p > 0.0 and p > env.deflection
        if not touching:
            return 0.0, False
        return env.k_spring * (p - env.deflection), True
    if p <= 0.0:
        return 0.0, False
    if isinstance(env, Spring):
        return env.stiffness * p, True
    if isinstance(env, KelvinVoigt):
        f = env.stiffness * p + env.damping * pdot
        if env.clamp:
            f = max(f, 0.0)
        return f, True
    raise TypeError(f"unknown environment model {type(env).__name__}")


def contact_force(env: EnvironmentModel, x: Pose, xdot=None, t: float = 0.0,
                  threshold: float = 0.0) -> tuple[Wrench, bool]:
    """Reaction wrench on the end effector and the contact flag.

    ``threshold`` is a penetration dead band for the flag only; the force
    itself follows the contact law as soon as the surface is touched.
    """
    axis = _unit(env.contact_axis)
    position = x.position if isinstance(x, Pose) else np.asarray(x, dtype=float)[:3]
    p = penetration(env, position)
    v = np.zeros(3) if xdot is None else np.asarray(xdot, dtype=float)[:3]
    f, touching = normal_force(env, p, float(axis @ v))
    if not touching:
        return Wrench.zero(), False
    surface = env.deflection if isinstance(env, SeriesHybrid) else 0.0
    return Wrench(force=-f * axis), bool(p - surface > threshold)


def step_env_state(env: EnvironmentModel, x, dt: float) -> EnvironmentModel:
    """Advance internal material state by one explicit Euler step."""
    if dt <= 0 or not isinstance(env, SeriesHybrid):
        return env
    position = x.position if isinstance(x, Pose) else x
    p = penetration(env, position)
    spring = max(env.k_spring * (p - env.deflection), 0.0)
    rate = (spring - env.k_sponge * env.deflection) / env.d_sponge
    return replace(env, deflection=env.deflection + dt * rate)


def step_env_path(env: EnvironmentModel, positions, dt: float) -> EnvironmentModel:
    """Apply :func:`step_env_state` once per row of ``positions``, in order.

    Each row is the tool position at the end of its sub-step.
    """
    if dt <= 0 or not isinstance(env, SeriesHybrid):
        return env
    axis = _unit(env.contact_axis)
    p = (np.asarray(positions, dtype=float) - _rest_point(env.rest, env.contact_axis)) @ axis
    d = env.deflection
    ks, kg, dg = env.k_spring, env.k_sponge, env.d_sponge
    for pk in p.tolist():
        spring = ks * (pk - d)
        if spring < 0.0:
            spring = 0.0
        d = d + dt * (spring - kg * d) / dg
    return replace(env, deflection=d)


@dataclass(frozen=True)
class PriorModel:
    """Controller's belief about the surface: stiffness and rest position.

    ``stiffness`` may be a scalar, six per-axis values or a 6x6 matrix, all in
    compression coordinates. The contact axis must be aligned with a base axis.
    """

    stiffness: float | tuple = 200.0
    rest: float | tuple = 0.0
    contact_axis: tuple = DOWN

    def __post_init__(self):
        axis = _unit(self.contact_axis)
        if np.count_nonzero(np.abs(axis) > 1e-12) != 1:
            raise ValueError("prior contact axis must be aligned with a base axis")
        if np.any(np.diag(self.stiffness_matrix()) < 0):
            raise ValueError("prior stiffness must be non-negative")

    @property
    def axis_index(self) -> int:
        return int(np.argmax(np.abs(_unit(self.contact_axis))))

    def selection(self) -> np.ndarray:
        """6x6 signed selector from base coordinates to compression coordinates."""
        S = np.zeros((6, 6))
        i = self.axis_index
        S[i, i] = np.sign(_unit(self.contact_axis)[i])
        return S

    def stiffness_matrix(self) -> np.ndarray:
        K = np.asarray(self.stiffness, dtype=float)
        if K.ndim == 0:
            return float(K) * np.eye(6)
        if K.shape == (6,):
            return np.diag(K)
        if K.shape == (6, 6):
            return K
        raise ValueError(f"prior stiffness must be scalar, 6 or 6x6, got shape {K.shape}")

    def compress_position(self, position) -> np.ndarray:
        pos = np.asarray(position.position if isinstance(position, Pose) else position, dtype=float)
        v = np.zeros(6)
        v[:3] = pos[:3]
        return self.selection() @ v

    def compress_wrench(self, wrench: Wrench) -> np.ndarray:
        """Reaction wrench -> force applied by the tool, signed positive when pressing."""
        return -self.selection() @ wrench.vector

    def rest_compressed(self) -> np.ndarray:
        return self.compress_position(_rest_point(self.rest, self.contact_axis))


def lumped_uncertainty(measured: Wrench, x, prior: PriorModel) -> np.ndarray:
    """Measured force minus the prior linear-spring prediction (6-vector)."""
    h = prior.compress_wrench(measured)
    dx = prior.compress_position(x) - prior.rest_compressed()
    return h - prior.stiffness_matrix() @ dx
