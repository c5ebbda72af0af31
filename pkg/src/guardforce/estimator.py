"""Linear tracking differentiator for the lumped interaction uncertainty.

Second order (kinematic control)::

    z1' = z2 + L1 (delta - z1)
    z2' =      L2 (delta - z1)

Third order (torque control) uses the chained form::

    z1' = z2 + L1 (delta - z1)
    z2' = z3 + L2 (delta - z1)
    z3' =      L3 (delta - z1)

so that z3 tracks the second derivative of ``delta``.

Error bound: with ``Z`` the stacked estimation error, ``A`` its system matrix
and ``alpha`` a decay rate with ``Z^T A Z <= -alpha |Z|^2``, every trajectory
whose input derivative is bounded by ``beta`` stays below

    zbar(t) = sqrt(|Z0|^2 exp(-a t) + (1 - exp(-a t)) b),
    a = 2 alpha - eps,  b = beta^2 / (2 alpha eps - eps^2).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

DIM = 6


class NotNegativeDefinite(ValueError):
    """The symmetric part of the error matrix is not negative definite."""


def _gain(g, dim=DIM) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g = np.full(dim, float(g))
    elif g.ndim == 2:
        if np.any(np.abs(g - np.diag(np.diag(g))) > 0):
            raise ValueError("gain matrices must be diagonal")
        g = np.diag(g).copy()
    if np.any(g <= 0):
        raise ValueError("gains must be positive")
    return g


@dataclass(frozen=True)
class EstimatorState:
    z1: np.ndarray
    z2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    z3: np.ndarray | None = None
    L3: np.ndarray | None = None

    def __post_init__(self):
        if (self.z3 is None) != (self.L3 is None):
            raise ValueError("z3 and L3 must be given together")

    @property
    def order(self) -> int:
        return 2 if self.z3 is None else 3

    @classmethod
    def zeros(cls, L1, L2, L3=None, dim: int = DIM) -> "EstimatorState":
        z = np.zeros(dim)
        return cls(
            z1=z.copy(), z2=z.copy(), L1=_gain(L1, dim), L2=_gain(L2, dim),
            z3=None if L3 is None else z.copy(), L3=None if L3 is None else _gain(L3, dim),
        )

    def stacked(self) -> np.ndarray:
        parts = [self.z1, self.z2] + ([] if self.z3 is None else [self.z3])
        return np.concatenate(parts)

    def with_stacked(self, z: np.ndarray) -> "EstimatorState":
        n = self.z1.shape[0]
        if self.order == 2:
            return replace(self, z1=z[:n], z2=z[n:])
        return replace(self, z1=z[:n], z2=z[n:2 * n], z3=z[2 * n:])


def _derivative(s: EstimatorState, z: np.ndarray, delta: np.ndarray) -> np.ndarray:
    n = s.z1.shape[0]
    e = delta - z[:n]
    if s.order == 2:
        return np.concatenate([z[n:] + s.L1 * e, s.L2 * e])
    return np.concatenate([z[n:2 * n] + s.L1 * e, z[2 * n:] + s.L2 * e, s.L3 * e])


def td_step(state: EstimatorState, delta_e, dt: float) -> EstimatorState:
    """One classical RK4 step with ``delta_e`` held over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = np.asarray(delta_e, dtype=float)
    z = state.stacked()
    k1 = _derivative(state, z, delta)
    k2 = _derivative(state, z + 0.5 * dt * k1, delta)
    k3 = _derivative(state, z + 0.5 * dt * k2, delta)
    k4 = _derivative(state, z + dt * k3, delta)
    return state.with_stacked(z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


@lru_cache(maxsize=64)
def _propagator(gains: tuple, dt: float, substeps: int):
    """Per-axis matrices (Phi, Gamma) equal to ``substeps`` RK4 steps of size dt.

    The TD is linear and time invariant with a held input, so repeated RK4
    steps compose into one affine map; caching it keeps the control loop cheap.
    """
    order = len(gains)
    A = np.zeros((order, order))
    A[:, 0] = -np.asarray(gains)
    A[:-1, 1:] += np.eye(order - 1)
    B = np.asarray(gains, dtype=float)
    I = np.eye(order)
    Ah = A * dt
    R = I + Ah + Ah @ Ah / 2 + Ah @ Ah @ Ah / 6 + Ah @ Ah @ Ah @ Ah / 24
    # input term of one RK4 step for constant input: dt (I + Ah/2 + Ah^2/6 + Ah^3/24) B
    S = dt * (I + Ah / 2 + Ah @ Ah / 6 + Ah @ Ah @ Ah / 24) @ B
    Phi, Gam = I.copy(), np.zeros(order)
    for _ in range(substeps):
        Phi, Gam = R @ Phi, R @ Gam + S
    return Phi, Gam


def td_advance(state: EstimatorState, delta_e, dt: float, substeps: int = 1) -> EstimatorState:
    """Same result as ``substeps`` calls of :func:`td_step`, evaluated per axis."""
    if substeps == 1:
        return td_step(state, delta_e, dt)
    delta = np.asarray(delta_e, dtype=float)
    rows = [state.z1, state.z2] + ([] if state.z3 is None else [state.z3])
    Z = np.vstack(rows)  # order x dim
    gains = [state.L1, state.L2] + ([] if state.L3 is None else [state.L3])
    G = np.vstack(gains)
    out = np.empty_like(Z)
    # axes sharing gains share a propagator
    for key in {tuple(G[:, j]) for j in range(G.shape[1])}:
        cols = np.all(G.T == np.asarray(key), axis=1)
        Phi, Gam = _propagator(key, float(dt), int(substeps))
        out[:, cols] = Phi @ Z[:, cols] + np.outer(Gam, delta[cols])
    if state.order == 2:
        return replace(state, z1=out[0], z2=out[1])
    return replace(state, z1=out[0], z2=out[1], z3=out[2])


def error_matrix(L1, L2, L3=None) -> np.ndarray:
    """System matrix of the stacked estimation error."""
    L1 = _gain(L1)
    n = L1.shape[0]
    L2 = _gain(L2, n)
    order = 2 if L3 is None else 3
    A = np.zeros((order * n, order * n))
    A[:n, :n] = -np.diag(L1)
    A[:n, n:2 * n] = np.eye(n)
    A[n:2 * n, :n] = -np.diag(L2)
    if order == 3:
        A[n:2 * n, 2 * n:] = np.eye(n)
        A[2 * n:, :n] = -np.diag(_gain(L3, n))
    return A


def decay_rate(A: np.ndarray) -> float:
    """Largest ``alpha`` with ``Z^T A Z <= -alpha |Z|^2`` for all ``Z``."""
    A = np.asarray(A, dtype=float)
    lam = np.linalg.eigvalsh(0.5 * (A + A.T)).max()
    if lam >= 0:
        raise NotNegativeDefinite(f"symmetric part has eigenvalue {lam:.6g} >= 0")
    return float(-lam)


def compute_alpha(L1, L2, L3=None) -> float:
    return decay_rate(error_matrix(L1, L2, L3))


@dataclass(frozen=True)
class ErrorBoundParams:
    mode: str = "constant"
    sigma_bar: float = 0.0
    alpha: float | None = None
    epsilon: float | None = None
    beta: float = 0.0
    z0_norm: float = 0.0

    def __post_init__(self):
        if self.mode not in ("analytic", "constant"):
            raise ValueError(f"unknown bound mode {self.mode!r}")
        if self.mode == "constant":
            if self.sigma_bar < 0:
                raise ValueError("sigma_bar must be non-negative")
            return
        if self.alpha is None or self.epsilon is None:
            raise ValueError("analytic mode needs alpha and epsilon")
        if not (self.alpha > 0 and 0 < self.epsilon < 2 * self.alpha):
            raise ValueError("analytic mode needs alpha > 0 and 0 < epsilon < 2 alpha")
        if self.beta < 0 or self.z0_norm < 0:
            raise ValueError("beta and |Z(0)| must be non-negative")

    @property
    def rate(self) -> float:
        return 2.0 * self.alpha - self.epsilon

    @property
    def ultimate(self) -> float:
        """Squared limit ``b`` of the bound."""
        return self.beta**2 / (2 * self.alpha * self.epsilon - self.epsilon**2)


def error_bound(params: ErrorBoundParams, t: float) -> float:
    if params.mode == "constant":
        return float(params.sigma_bar)
    decay = np.exp(-params.rate * t)
    return float(np.sqrt(params.z0_norm**2 * decay + (1.0 - decay) * params.ultimate))


def sigma_vector(zbar: float, dim: int = DIM) -> np.ndarray:
    if zbar < 0:
        raise ValueError("error bound must be non-negative")
    return np.full(dim, float(zbar))


def select_bound(L1, L2, L3=None, sigma_bar: float = 0.0, epsilon: float | None = None,
                 beta: float = 0.0, z0_norm: float = 0.0) -> ErrorBoundParams:
    """Analytic bound when the gains admit a decay rate, otherwise constant ``sigma_bar``.

    ``epsilon`` defaults to ``alpha`` (the choice that minimises the ultimate bound).
    """
    try:
        alpha = compute_alpha(L1, L2, L3)
    except NotNegativeDefinite:
        return ErrorBoundParams("constant", sigma_bar)
    eps = alpha if epsilon is None else epsilon
    return ErrorBoundParams("analytic", sigma_bar, alpha, eps, beta, z0_norm)
