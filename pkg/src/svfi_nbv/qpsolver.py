"""Dense strictly convex QP solver.

    minimize    1/2 u^T H u + g^T u
    subject to  A_eq u  = b_eq
                A_in u <= b_in
                lb <= u <= ub

Dual active-set method in the style of Goldfarb and Idnani: start from the
unconstrained minimiser, repeatedly add the most violated constraint and
drop active ones whose multipliers would turn negative. Every iterate is dual
feasible, so an inconsistent constraint set shows up as a step that cannot
be bounded. Projections are recomputed from scratch with a QR factorisation
each step; problems here have tens of variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max-iter"

TIKHONOV = 1e-9


@dataclass
class QProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    row_keys: Optional[Sequence] = None  # stable ids of A_in rows, used for warm starts

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("H must be n x n")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10:
            raise ValueError("H must be symmetric")

        def rows(a, b):
            if a is None:
                return np.zeros((0, n)), np.zeros(0)
            a = np.asarray(a, dtype=float).reshape(-1, n)
            b = np.asarray(b, dtype=float).ravel()
            if b.shape[0] != a.shape[0]:
                raise ValueError("row count mismatch between matrix and bound")
            return a, b

        self.A_eq, self.b_eq = rows(self.A_eq, self.b_eq)
        self.A_in, self.b_in = rows(self.A_in, self.b_in)
        self.lb = None if self.lb is None else np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = None if self.ub is None else np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def inequality_rows(self):
        """All inequalities, box limits appended as rows, as ``(A, b, keys)``."""
        a, b = [self.A_in], [self.b_in]
        keys = list(self.row_keys) if self.row_keys is not None else [("in", i) for i in range(self.A_in.shape[0])]
        eye = np.eye(self.n)
        if self.ub is not None:
            fin = np.isfinite(self.ub)
            a.append(eye[fin])
            b.append(self.ub[fin])
            keys += [("ub", int(i)) for i in np.nonzero(fin)[0]]
        if self.lb is not None:
            fin = np.isfinite(self.lb)
            a.append(-eye[fin])
            b.append(-self.lb[fin])
            keys += [("lb", int(i)) for i in np.nonzero(fin)[0]]
        return np.vstack(a), np.concatenate(b), keys

    def objective(self, u) -> float:
        return float(0.5 * u @ self.H @ u + self.g @ u)


@dataclass
class QPResult:
    u: np.ndarray
    status: str
    iterations: int
    lam_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_in: np.ndarray = field(default_factory=lambda: np.zeros(0))  # includes box rows, same order as inequality_rows()
    active: tuple = ()


def kkt_residuals(p: QProblem, u, lam_eq, lam_in) -> dict:
    """Stationarity, primal feasibility, dual feasibility and complementarity, as max-abs values."""
    a_in, b_in, _ = p.inequality_rows()
    stat = p.H @ u + p.g + p.A_eq.T @ lam_eq + a_in.T @ lam_in
    slack = b_in - a_in @ u
    prim = max(np.max(np.abs(p.A_eq @ u - p.b_eq), initial=0.0), np.max(-slack, initial=0.0))
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(max(prim, 0.0)),
        "dual": float(max(np.max(-lam_in, initial=0.0), 0.0)),
        "complementarity": float(np.max(np.abs(lam_in * slack), initial=0.0)),
    }


class QPSolver:
    """Stateful solver: remembers the last active set by row key for warm starts.

    Not safe for concurrent use; keep one instance per control loop.
    """

    def __init__(self, tol: float = 1e-8, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter
        self._warm_keys: tuple = ()

    def reset(self):
        self._warm_keys = ()

    def solve(self, p: QProblem, warm_start: bool = True) -> QPResult:
        a_in, b_in, keys = p.inequality_rows()
        n = p.n
        m_eq = p.A_eq.shape[0]
        # constraints in ">=" form: normals^T u >= rhs
        normals = np.vstack([p.A_eq, -a_in]).T if (m_eq + a_in.shape[0]) else np.zeros((n, 0))
        rhs = np.concatenate([p.b_eq, -b_in])
        chol = _cholesky(p.H)
        feas_tol = 0.1 * self.tol

        start = None
        if warm_start and self._warm_keys:
            pos = {k: i for i, k in enumerate(keys)}
            guess = [m_eq + pos[k] for k in self._warm_keys if k in pos]
            start = _dual_feasible_start(chol, p.g, normals, rhs, m_eq, guess)
        if start is None:
            start = _dual_feasible_start(chol, p.g, normals, rhs, m_eq, [])
        if start is None:
            return self._finish(p, np.zeros(n), INFEASIBLE, 0, m_eq, [], np.zeros(0), keys)
        u, active, mult = start

        status, iters = MAX_ITER, 0
        for iters in range(1, self.max_iter + 1):
            inactive = np.ones(normals.shape[1], dtype=bool)
            inactive[:m_eq] = False
            inactive[active] = False
            if not inactive.any():
                status = OPTIMAL
                break
            cand = np.nonzero(inactive)[0]
            viol = normals[:, cand].T @ u - rhs[cand]
            j = int(np.argmin(viol))
            if viol[j] >= -feas_tol * max(1.0, abs(rhs[cand[j]])):
                status = OPTIMAL
                break
            step = _add_constraint(chol, normals, rhs, m_eq, u, active, mult, int(cand[j]), self.max_iter)
            if step is None:
                status = INFEASIBLE
                break
            u, active, mult = step
        return self._finish(p, u, status, iters, m_eq, active, mult, keys)

    def _finish(self, p, u, status, iters, m_eq, active, mult, keys) -> QPResult:
        n_in = len(keys)
        lam_eq = np.zeros(m_eq)
        lam_in = np.zeros(n_in)
        for idx, val in zip(active, mult):
            if idx < m_eq:
                lam_eq[idx] = -val
            else:
                lam_in[idx - m_eq] = val
        act = tuple(keys[i - m_eq] for i in active if i >= m_eq)
        if status == OPTIMAL:
            self._warm_keys = act
        else:
            self._warm_keys = ()
            if status == INFEASIBLE:
                u = np.zeros(p.n)
        return QPResult(u=u, status=status, iterations=iters, lam_eq=lam_eq, lam_in=lam_in, active=act)


def _cholesky(h):
    reg = 0.0
    eye = np.eye(h.shape[0])
    for _ in range(12):
        try:
            return np.linalg.cholesky(h + reg * eye)
        except np.linalg.LinAlgError:
            reg = TIKHONOV if reg == 0.0 else reg * 10.0
    raise np.linalg.LinAlgError("H is not positive definite even after regularisation")


def _hinv(chol, v):
    return cho_solve((chol, True), v)


def _projection(chol, normals, active):
    """QR factors of ``L^-1 N_A``."""
    if not active:
        return None, None
    b = solve_triangular(chol, normals[:, active], lower=True)
    q, r = np.linalg.qr(b)
    return q, r


def _dual_feasible_start(chol, g, normals, rhs, m_eq, guess):
    """Minimiser on the equalities plus ``guess`` with non-negative multipliers.

    Drops guessed inequalities with negative multipliers until the point is
    dual feasible. Returns ``None`` if the equalities alone are inconsistent.
    """
    active = list(range(m_eq)) + [i for i in guess if i >= m_eq]
    while True:
        u0 = -_hinv(chol, g)
        if not active:
            return u0, [], np.zeros(0)
        q, r = _projection(chol, normals, active)
        diag = np.abs(np.diag(r))
        if diag.min() <= 1e-12 * max(diag.max(), 1.0):
            if len(active) > m_eq:
                active = list(range(m_eq))
                continue
            return _equalities_by_steps(chol, g, normals, rhs, m_eq)
        na = normals[:, active]
        mult = np.linalg.solve(r.T @ r, rhs[active] - na.T @ u0)
        u = u0 + _hinv(chol, na @ mult)
        neg = [k for k, i in enumerate(active) if i >= m_eq and mult[k] < 0]
        if not neg:
            return u, active, mult
        drop = active[neg[int(np.argmin(mult[neg]))]]
        active.remove(drop)


def _equalities_by_steps(chol, g, normals, rhs, m_eq):
    """Add equalities one at a time, skipping redundant consistent ones."""
    u = -_hinv(chol, g)
    active, mult = [], np.zeros(0)
    for p in range(m_eq):
        q, r = _projection(chol, normals, active)
        d = solve_triangular(chol, normals[:, p], lower=True)
        if q is not None:
            coef = q.T @ d
            d_perp = d - q @ coef
            rr = solve_triangular(r, coef)
        else:
            d_perp, rr = d, np.zeros(0)
        z = solve_triangular(chol.T, d_perp, lower=False)
        curv = float(d_perp @ d_perp)
        s = float(normals[:, p] @ u - rhs[p])
        if curv <= 1e-14 * float(d @ d):
            if abs(s) > 1e-9 * max(1.0, abs(rhs[p])):
                return None
            continue
        t = -s / curv
        u = u + t * z
        mult = np.append(mult - t * rr, t)
        active.append(p)
    return u, active, mult


def _add_constraint(chol, normals, rhs, m_eq, u, active, mult, p, max_inner):
    active = list(active)
    mult = np.asarray(mult, dtype=float).copy()
    u_p = 0.0
    for _ in range(max_inner + len(active) + 1):
        q, r = _projection(chol, normals, active)
        d = solve_triangular(chol, normals[:, p], lower=True)
        if q is not None:
            coef = q.T @ d
            d_perp = d - q @ coef
            rr = solve_triangular(r, coef)
        else:
            d_perp, rr = d, np.zeros(0)
        z = solve_triangular(chol.T, d_perp, lower=False)
        curv = float(d_perp @ d_perp)
        s = float(normals[:, p] @ u - rhs[p])

        t1, k_drop = np.inf, -1
        for k, i in enumerate(active):
            if i >= m_eq and rr[k] > 0:
                ratio = mult[k] / rr[k]
                if ratio < t1:
                    t1, k_drop = ratio, k
        dependent = curv <= 1e-14 * max(float(d @ d), 1e-300)
        t2 = np.inf if dependent else -s / curv
        t = min(t1, t2)
        if not np.isfinite(t):
            return None
        if not np.isfinite(t2):
            mult = mult - t * rr
            u_p += t
            mult = np.delete(mult, k_drop)
            active.pop(k_drop)
            continue
        u = u + t * z
        mult = mult - t * rr
        u_p += t
        if t2 <= t1:
            active.append(p)
            return u, active, np.append(mult, u_p)
        mult = np.delete(mult, k_drop)
        active.pop(k_drop)
    return None
