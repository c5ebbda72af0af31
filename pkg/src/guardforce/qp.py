"""Exact solver for the projection QP ``min 1/2 |u - u_nom|^2  s.t.  G u <= h``.

Uses the Goldfarb-Idnani dual active-set method specialised to an identity
Hessian: start from the unconstrained minimiser ``u_nom`` and add the most
violated row until the iterate is primal feasible, dropping rows whose
multipliers would turn negative. Each working set is solved exactly, so
problems with a handful of rows terminate in a few iterations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9
_ZERO_STEP = 1e-14


@dataclass(frozen=True)
class QpProblem:
    u_nom: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_nom, dtype=float).reshape(-1)
        G = np.asarray(self.G, dtype=float).reshape(-1, u.shape[0])
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if G.shape[0] != h.shape[0]:
            raise ValueError("G and h row counts differ")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
            raise ValueError("QP data must be finite")
        object.__setattr__(self, "u_nom", u)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.u_nom.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True)
class QpSolution:
    u_star: np.ndarray
    multipliers: np.ndarray
    active_set: tuple[int, ...] = ()
    status: str = "optimal"
    iterations: int = 0
    slack: float = 0.0
    kkt_residual: float = field(default=0.0)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def verify_kkt(p: QpProblem, s: QpSolution) -> KktReport:
    u, lam = s.u_star, s.multipliers
    viol = p.G @ u - p.h if p.m else np.zeros(0)
    grad = u - p.u_nom + (p.G.T @ lam if p.m else 0.0)
    return KktReport(
        stationarity=float(np.max(np.abs(grad))) if p.n else 0.0,
        primal=float(max(0.0, viol.max())) if p.m else 0.0,
        dual=float(max(0.0, -lam.min())) if p.m else 0.0,
        complementarity=float(np.max(np.abs(lam * viol))) if p.m else 0.0,
    )


def solve(p: QpProblem, tol: float = FEAS_TOL, max_iter: int | None = None) -> QpSolution:
    """Project ``u_nom`` onto the polyhedron; infeasibility is reported in ``status``."""
    n, m = p.n, p.m
    x = p.u_nom.copy()
    if m == 0:
        return QpSolution(x, np.zeros(0))
    # >= form used by the dual method: N_i x >= b_i
    Nall, b = -p.G, -p.h
    active: list[int] = []
    u: list[float] = []
    max_iter = max_iter or 50 * (m + 1)
    it = 0
    status = "optimal"
    while True:
        slack = Nall @ x - b
        p_idx = int(np.argmin(slack))
        if slack[p_idx] >= -tol:
            break
        n_p = Nall[p_idx]
        u_plus = 0.0
        added = False
        while not added:
            it += 1
            if it > max_iter:
                status = "max_iter"
                break
            if active:
                N = Nall[active].T
                r = np.linalg.solve(N.T @ N, N.T @ n_p)
                z = n_p - N @ r
            else:
                r = np.zeros(0)
                z = n_p
            t1, k_drop = np.inf, None
            for j, rj in enumerate(r):
                if rj > _ZERO_STEP:
                    ratio = u[j] / rj
                    if ratio < t1:
                        t1, k_drop = ratio, j
            zz = float(z @ n_p)
            s_p = float(n_p @ x - b[p_idx])
            t2 = -s_p / zz if zz > _ZERO_STEP else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                status = "infeasible"
                break
            if np.isfinite(t2):
                x = x + t * z
            u = [uj - t * rj for uj, rj in zip(u, r)]
            u_plus += t
            if t2 <= t1:
                active.append(p_idx)
                u.append(u_plus)
                added = True
            else:
                del active[k_drop]
                del u[k_drop]
        if status != "optimal":
            break
    lam = np.zeros(m)
    for j, uj in zip(active, u):
        lam[j] = max(uj, 0.0)
    sol = QpSolution(x, lam, tuple(sorted(active)), status, it)
    rep = verify_kkt(p, sol)
    return QpSolution(x, lam, sol.active_set, status, it, kkt_residual=rep.worst)


def solve_with_slack(p: QpProblem, penalty: float, tol: float = FEAS_TOL) -> QpSolution:
    """Relax every row by one shared slack ``s >= 0`` priced at ``penalty * s^2``.

    Feasible problems return the hard solution with ``s = 0``; the relaxation
    is only used when no hard solution exists. The slack is rescaled to
    ``s' = sqrt(2 penalty) s`` so the augmented problem is again a pure
    projection and :func:`solve` applies unchanged.
    """
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    hard = solve(p, tol)
    if hard.optimal:
        return hard
    c = np.sqrt(2.0 * penalty)
    n, m = p.n, p.m
    G = np.zeros((m + 1, n + 1))
    G[:m, :n] = p.G
    G[:m, n] = -1.0 / c
    G[m, n] = -1.0
    h = np.concatenate([p.h, [0.0]])
    aug = QpProblem(np.concatenate([p.u_nom, [0.0]]), G, h)
    sol = solve(aug, tol)
    u = sol.u_star[:n]
    lam = sol.multipliers[:m]
    s = max(sol.u_star[n] / c, 0.0)
    active = tuple(i for i in sol.active_set if i < m)
    res = QpSolution(u, lam, active, sol.status, sol.iterations, slack=s)
    # report the residual of the relaxed rows, which is what the solution satisfies
    relaxed = QpProblem(p.u_nom, p.G, p.h + s)
    return QpSolution(u, lam, active, sol.status, sol.iterations, slack=s,
                      kkt_residual=verify_kkt(relaxed, res).worst)


def halfspace_projection(u_nom, g, h) -> tuple[np.ndarray, float]:
    """Closed form for one active row: ``lam = (g u_nom - h) / (g g^T)``."""
    u_nom = np.asarray(u_nom, dtype=float)
    g = np.asarray(g, dtype=float)
    lam = (g @ u_nom - h) / (g @ g)
    if lam <= 0:
        return u_nom.copy(), 0.0
    return u_nom - lam * g, float(lam)
