"""Independent reference computations used to check the main implementation.

Nothing here calls the production solvers or kinematics; the point is to
reach the same numbers by a different route (brute force, closed forms,
finite differences).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

GRID_STEP = 1e-3


# --------------------------------------------------------------------------
# QP

def grid_qp(u_nom, G, h, lam_max: float, step: float = GRID_STEP, points: int = 21) -> np.ndarray:
    """Grid search over the multipliers of ``min |u - u_nom|^2 / 2  s.t.  G u <= h``.

    The dual ``D(lam) = lam.(G u_nom - h) - |G^T lam|^2 / 2`` is maximised on a
    lattice over ``lam >= 0`` (coarse to fine, recentring whenever the best
    point sits on the window edge) and mapped back by ``u = u_nom - G^T lam``.
    The last lattice has spacing ``step``; since the dual gap at the lattice
    point nearest the optimum is ``|G^T (lam - lam*)|^2 / 2``, the returned
    ``u`` is within ``|G| step sqrt(m) / 2`` of the true minimiser.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    b = G @ u_nom - np.asarray(h, dtype=float)
    m = G.shape[0]
    k = (points - 1) // 2
    centre = np.zeros(m)
    spacing = max(float(lam_max) / k, step)
    for _ in range(10_000):
        offs = np.arange(-k, k + 1) * spacing
        L = np.stack(np.meshgrid(*([offs] * m), indexing="ij"), axis=-1).reshape(-1, m) + centre
        L = np.maximum(L, 0.0)
        D = L @ b - 0.5 * np.sum((L @ G) ** 2, axis=1)
        best = L[np.argmax(D)]
        on_edge = np.any((np.abs(best - centre) >= k * spacing * (1 - 1e-12)) & (best > 0))
        centre = best
        if on_edge:
            continue
        if spacing <= step:
            return u_nom - G.T @ best
        spacing = max(spacing / 5, step)
    raise RuntimeError("grid search did not settle")


@dataclass(frozen=True)
class QpInstance:
    u_nom: np.ndarray
    G: np.ndarray
    h: np.ndarray
    u_feasible: np.ndarray

    @property
    def radius(self) -> float:
        """The minimiser lies within this distance of ``u_nom``."""
        return float(np.linalg.norm(self.u_feasible - self.u_nom))


def random_qp(rng: np.random.Generator, n: int, m: int, max_cos: float = 0.95) -> QpInstance:
    """Feasible-by-construction instance with unit rows that are not nearly parallel."""
    if n == 1 and m > 1:
        raise ValueError("rows of a one-dimensional problem are always parallel")
    while True:
        G = rng.normal(size=(m, n))
        G /= np.linalg.norm(G, axis=1, keepdims=True)
        cos = np.abs(G @ G.T - np.eye(m))
        if m == 1 or cos.max() <= max_cos:
            break
    u_f = rng.uniform(-1, 1, n)
    h = G @ u_f + rng.uniform(0.0, 0.5, m)
    u_nom = rng.uniform(-1.5, 1.5, n)
    return QpInstance(u_nom, G, h, u_f)


def enumerate_qp(u_nom, G, h, tol: float = 1e-9) -> np.ndarray:
    """Exact projection by trying every active set (small problems only)."""
    u_nom = np.asarray(u_nom, dtype=float)
    G = np.atleast_2d(G)
    m = G.shape[0]
    best, best_d = None, np.inf
    for r in range(0, min(m, u_nom.shape[0]) + 1):
        for S in itertools.combinations(range(m), r):
            S = list(S)
            if S:
                Gs = G[S]
                try:
                    lam = np.linalg.solve(Gs @ Gs.T, Gs @ u_nom - h[S])
                except np.linalg.LinAlgError:
                    continue
                if np.any(lam < -tol):
                    continue
                u = u_nom - Gs.T @ lam
            else:
                u = u_nom.copy()
            if np.all(G @ u <= h + tol):
                d = float(np.sum((u - u_nom) ** 2))
                if d < best_d:
                    best, best_d = u, d
    if best is None:
        raise ValueError("no feasible active set")
    return best


# --------------------------------------------------------------------------
# kinematics

def _rz(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])


def _rx(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1]])


def _tr(x, y, z):
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def dh_chain(dh_rows, q) -> np.ndarray:
    """Tool transform as a product of elementary ``Rz Tz Tx Rx`` factors per row."""
    T = np.eye(4)
    for (a, alpha, d, off), qi in zip(dh_rows, q):
        T = T @ _rz(qi + off) @ _tr(0, 0, d) @ _tr(a, 0, 0) @ _rx(alpha)
    return T


def planar_jacobian(lengths, q) -> np.ndarray:
    """Closed-form in-plane position Jacobian (2 x n) of a planar chain."""
    th = np.cumsum(q)
    n = len(lengths)
    J = np.zeros((2, n))
    for i in range(n):
        for k in range(i, n):
            J[0, i] -= lengths[k] * np.sin(th[k])
            J[1, i] += lengths[k] * np.cos(th[k])
    return J


def fd_position_jacobian(fk, q, h: float = 1e-6) -> np.ndarray:
    """Central differences of the tool position ``fk(q) -> 3-vector``."""
    q = np.asarray(q, dtype=float)
    cols = []
    for i in range(q.shape[0]):
        e = np.zeros_like(q)
        e[i] = h
        cols.append((np.asarray(fk(q + e)) - np.asarray(fk(q - e))) / (2 * h))
    return np.array(cols).T


def fd_angular_jacobian(fk_rot, q, h: float = 1e-6) -> np.ndarray:
    """Angular velocity columns from ``(R(q+h e) - R(q-h e)) R^T / 2h``."""
    q = np.asarray(q, dtype=float)
    R0 = fk_rot(q)
    cols = []
    for i in range(q.shape[0]):
        e = np.zeros_like(q)
        e[i] = h
        W = (fk_rot(q + e) - fk_rot(q - e)) / (2 * h) @ R0.T
        cols.append([W[2, 1], W[0, 2], W[1, 0]])
    return np.array(cols).T


# --------------------------------------------------------------------------
# dynamics

def planar2_lagrangian(q, qd, l1, m1, m2, r1, r2, I1, I2, g):
    """Inertia matrix, velocity-product torques and gravity torques of a two-link arm.

    ``c_vec`` comes from the textbook ``h = -m2 l1 r2 sin q2`` expressions;
    ``g`` is the scalar gravity magnitude along ``-y``.
    """
    c2, s2 = np.cos(q[1]), np.sin(q[1])
    M11 = m1 * r1**2 + I1 + m2 * (l1**2 + r2**2 + 2 * l1 * r2 * c2) + I2
    M12 = m2 * (r2**2 + l1 * r2 * c2) + I2
    M22 = m2 * r2**2 + I2
    hh = -m2 * l1 * r2 * s2
    c_vec = np.array([hh * (2 * qd[0] * qd[1] + qd[1] ** 2), -hh * qd[0] ** 2])
    c1, c12 = np.cos(q[0]), np.cos(q[0] + q[1])
    g_vec = np.array([
        (m1 * r1 + m2 * l1) * g * c1 + m2 * r2 * g * c12,
        m2 * r2 * g * c12,
    ])
    return np.array([[M11, M12], [M12, M22]]), c_vec, g_vec


# --------------------------------------------------------------------------
# estimator

def simulate_linear_error(A, B, Z0, w, t_end: float, dt: float = 1e-3):
    """RK4 solution of ``Z' = A Z + B w(t)``; returns sample times and norms."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Z = np.asarray(Z0, dtype=float).copy()
    n_steps = int(round(t_end / dt))
    ts = np.arange(n_steps + 1) * dt
    norms = np.empty(n_steps + 1)
    norms[0] = np.linalg.norm(Z)
    f = lambda t, z: A @ z + B @ w(t)
    for k in range(n_steps):
        t = ts[k]
        k1 = f(t, Z)
        k2 = f(t + dt / 2, Z + dt / 2 * k1)
        k3 = f(t + dt / 2, Z + dt / 2 * k2)
        k4 = f(t + dt, Z + dt * k3)
        Z = Z + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        norms[k + 1] = np.linalg.norm(Z)
    return ts, norms


def random_dissipative_matrix(rng: np.random.Generator, n: int, alpha: float) -> np.ndarray:
    """Random ``A`` whose symmetric part is ``<= -alpha I`` (with equality on one direction)."""
    S = rng.normal(size=(n, n))
    P = S @ S.T
    P = P / np.linalg.eigvalsh(P).max()  # eigenvalues in (0, 1]
    sym = -(alpha * np.eye(n) + 2.0 * alpha * (np.eye(n) - P))
    K = rng.normal(size=(n, n))
    skew = K - K.T
    return sym + skew
