"""Two-phase revised simplex for small dense linear programs.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``
with each variable either free or nonnegative. Entering columns follow
Dantzig's rule with a Harris ratio test. After a run of non-improving
(degenerate) pivots the right-hand side is shifted by a tiny random amount
to break the tie structure; the shift is removed at optimality and the
solve resumes from that basis. A second stall switches to Bland's rule. The basis is refactorized from scratch at every pivot, which keeps
round-off from accumulating on the ill-conditioned bases that spline
sieves produce.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import InfeasibleError, SizeError, ValidationError

PIVOT_TOL = 1e-9
HARRIS_TOL = 1e-9
REL_PIVOT = 1e-7  # pivots smaller than this times the column maximum are avoided
MAX_TRIES = 20
PERTURB = 1e-7
MAX_SIZE = 4000


@dataclass
class LpProblem:
    """``min c @ x`` with inequality and equality blocks.

    ``free[j]`` marks variable ``j`` as unrestricted in sign; others are
    nonnegative.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    free: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if n == 0:
            raise ValidationError("LP needs at least one variable")
        self.A_ub, self.b_ub = self._block(self.A_ub, self.b_ub, n, "inequality")
        self.A_eq, self.b_eq = self._block(self.A_eq, self.b_eq, n, "equality")
        self.free = np.zeros(n, bool) if self.free is None else \
            np.broadcast_to(np.asarray(self.free, bool), (n,)).copy()

    @staticmethod
    def _block(A, b, n, name):
        if A is None:
            return np.zeros((0, n)), np.zeros(0)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape != (b.size, n):
            raise ValidationError(f"{name} block has shape {A.shape}, expected ({b.size}, {n})")
        return A, b

    @property
    def n_vars(self):
        return self.c.size

    @property
    def n_constraints(self):
        return self.b_ub.size + self.b_eq.size


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray | None
    fun: float
    iterations: int
    flags: dict = field(default_factory=dict)
    y: np.ndarray | None = None  # multipliers, one per inequality then equality row


class _Revised:
    """Revised simplex state; the basis is refactorized at every iteration."""

    def __init__(self, A, b, basis):
        self.A = A
        self.b = b
        self.basis = basis
        self.iterations = 0
        self._refactor()

    def _refactor(self):
        self.lu = lu_factor(self.A[:, self.basis])
        self.xB = lu_solve(self.lu, self.b)
        np.maximum(self.xB, 0.0, out=self.xB)

    def duals(self, cost):
        return lu_solve(self.lu, cost[self.basis], trans=1)

    def row(self, r):
        """Row ``r`` of ``B^{-1} A``."""
        e = np.zeros(self.b.size)
        e[r] = 1.0
        return lu_solve(self.lu, e, trans=1) @ self.A

    def pivot(self, r, col):
        self.basis[r] = col
        self.iterations += 1
        self._refactor()

    def run(self, cost, allowed, max_iter, stall_limit=50):
        """Minimize ``cost``; returns "optimal", "unbounded" or "iteration_limit".

        On a run of degenerate pivots the right-hand side is shifted so that
        every basic variable is strictly positive; the shift is removed once
        the shifted problem is optimal. A second stall switches to Bland's rule.
        """
        bland = False
        stall = 0
        b0 = None
        rng = np.random.default_rng(12345)
        last = float(cost[self.basis] @ self.xB)
        scale = max(1.0, np.abs(cost).max())
        for _ in range(max_iter):
            y = self.duals(cost)
            red = cost - y @ self.A
            red[self.basis] = 0.0
            cand = np.flatnonzero(allowed & (red < -PIVOT_TOL * scale))
            if cand.size == 0:
                if b0 is not None and b0 is not False:
                    self.b = b0
                    b0 = False
                    self._refactor()
                    continue
                return "optimal"
            order = cand if bland else cand[np.argsort(red[cand], kind="stable")]
            col, colv, pos = None, None, None
            for j in order[:MAX_TRIES]:
                v = lu_solve(self.lu, self.A[:, j])
                ok = v > max(PIVOT_TOL, REL_PIVOT * np.abs(v).max())
                if np.any(ok):
                    col, colv, pos = j, v, ok
                    break
                if col is None and np.any(v > PIVOT_TOL):
                    fallback = (j, v, v > PIVOT_TOL)
                elif not np.any(v > PIVOT_TOL):
                    self._restore(b0)
                    return "unbounded"
            if col is None:
                col, colv, pos = fallback
            rhs = self.xB
            if bland:
                ratios = np.full(colv.size, np.inf)
                ratios[pos] = rhs[pos] / colv[pos]
                best = ratios.min()
                ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
                r = ties[np.argmin(self.basis[ties])]
            else:
                # Harris two-pass test: bound the step with a small feasibility
                # slack, then take the largest pivot among rows within it
                theta = np.min((rhs[pos] + HARRIS_TOL) / colv[pos])
                within = np.flatnonzero(pos)
                within = within[rhs[within] / colv[within] <= theta]
                r = within[np.argmax(colv[within])]
            self.pivot(r, col)
            obj = float(cost[self.basis] @ self.xB)
            if obj < last - PIVOT_TOL * scale:
                stall, last = 0, obj
            else:
                stall += 1
                if stall >= stall_limit:
                    stall = 0
                    if b0 is None:
                        b0 = self.b
                        shift = PERTURB * (1.0 + np.abs(self.xB)) * rng.uniform(0.5, 1.0, self.xB.size)
                        self.b = b0 + self.A[:, self.basis] @ shift
                        self._refactor()
                        last = float(cost[self.basis] @ self.xB)
                    else:
                        bland = True
        self._restore(b0)
        return "iteration_limit"

    def _restore(self, b0):
        if b0 is not None and b0 is not False:
            self.b = b0
            self._refactor()


def simplex(problem: LpProblem, max_iter=20000) -> LpResult:
    """Solve ``problem`` up to floating-point pivoting tolerance.

    Returns the primal solution and, when optimal, the multipliers ``y``
    (one per inequality row, then per equality row) with
    ``c @ x == b_ub @ y_ub + b_eq @ y_eq`` and ``y_ub <= 0``.
    """
    c, A_ub, b_ub, A_eq, b_eq = problem.c, problem.A_ub, problem.b_ub, problem.A_eq, problem.b_eq
    n, m_ub, m_eq = c.size, b_ub.size, b_eq.size
    free = np.flatnonzero(problem.free)
    if n + free.size + 2 * (m_ub + m_eq) > MAX_SIZE:
        raise SizeError("LP too large for the dense solver")
    m = m_ub + m_eq
    if m == 0:
        if np.any((c < 0) | ((c > 0) & problem.free)):
            return LpResult("unbounded", None, np.nan, 0)
        return LpResult("optimal", np.zeros(n), 0.0, 0, {}, np.zeros(0))
    # columns: x (n), negative parts of free x, slacks (m_ub), artificials
    A = np.vstack([A_ub, A_eq])
    A = np.hstack([A, -A[:, free], np.vstack([np.eye(m_ub), np.zeros((m_eq, m_ub))])])
    cost = np.concatenate([c, -c[free], np.zeros(m_ub)])
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1.0
    b = np.abs(b)
    n_struct = A.shape[1]
    # a slack can start basic when its row was not flipped
    basis = np.full(m, -1)
    slack_rows = np.flatnonzero(~neg[:m_ub])
    basis[slack_rows] = n + free.size + slack_rows
    art_rows = np.flatnonzero(basis < 0)
    n_art = art_rows.size
    art = np.zeros((m, n_art))
    art[art_rows, np.arange(n_art)] = 1.0
    basis[art_rows] = n_struct + np.arange(n_art)
    A = np.hstack([A, art])
    cost = np.concatenate([cost, np.zeros(n_art)])
    tab = _Revised(A, b, basis)
    flags = {}
    structural = np.arange(A.shape[1]) < n_struct
    if n_art:
        cost1 = np.where(structural, 0.0, 1.0)
        status = tab.run(cost1, np.ones(A.shape[1], bool), max_iter)
        if status == "iteration_limit":
            return LpResult(status, None, np.nan, tab.iterations)
        infeas = float(cost1[tab.basis] @ tab.xB)
        if infeas > PIVOT_TOL * max(1.0, b.max()):
            return LpResult("infeasible", None, np.nan, tab.iterations,
                            {"phase1_residual": infeas})
        # drive remaining artificials out; rows with no structural entry are
        # redundant and keep a zero-level artificial that can never move
        redundant = 0
        for r in range(m):
            if tab.basis[r] >= n_struct:
                row = tab.row(r)
                row[~structural] = 0.0
                row[tab.basis] = 0.0
                nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if nz.size:
                    tab.pivot(r, nz[np.argmax(np.abs(row[nz]))])
                else:
                    redundant += 1
        if redundant:
            flags["redundant_rows"] = redundant
    status = tab.run(cost, structural, max_iter)
    z = np.zeros(A.shape[1])
    z[tab.basis] = tab.xB
    x = z[:n].copy()
    x[free] -= z[n:n + free.size]
    if status != "optimal":
        return LpResult(status, x if status == "iteration_limit" else None, np.nan,
                        tab.iterations, flags)
    y = tab.duals(cost) * np.where(neg, -1.0, 1.0)
    # original variable index of each basic column (-1 for slacks/artificials)
    var_of = np.concatenate([np.arange(n), free, np.full(A.shape[1] - n - free.size, -1)])
    flags["basic_vars"] = np.unique(var_of[tab.basis][var_of[tab.basis] >= 0])
    return LpResult("optimal", x, float(c @ x), tab.iterations, flags, y)


def solve_dual_form(problem: LpProblem, max_iter=20000) -> LpResult:
    """Solve an LP with all variables free through its dual.

    The dual ``min b_eq @ lam + b_ub @ mu`` subject to
    ``A_eq.T @ lam + A_ub.T @ mu = -c``, ``mu >= 0`` has one row per primal
    variable, which is much smaller when the primal has many inequality
    rows and few variables. The primal solution is the dual's multiplier
    vector.
    """
    if not problem.free.all():
        raise ValidationError("solve_dual_form needs all variables free")
    m_eq = problem.b_eq.size
    d = np.concatenate([problem.b_eq, problem.b_ub])
    M = np.vstack([problem.A_eq, problem.A_ub]).T
    free = np.concatenate([np.ones(m_eq, bool), np.zeros(problem.b_ub.size, bool)])
    if d.size == 0:
        ok = not np.any(problem.c)
        return LpResult("optimal" if ok else "unbounded", np.zeros(problem.n_vars) if ok
                        else None, 0.0 if ok else np.nan, 0)
    res = simplex(LpProblem(d, A_eq=M, b_eq=-problem.c, free=free), max_iter)
    if res.status == "optimal":
        # refine: the primal solves the rows whose dual variables are basic
        rows = res.flags.pop("basic_vars")
        x = res.y
        if rows.size:
            A_all = np.vstack([problem.A_eq, problem.A_ub])
            x, *_ = np.linalg.lstsq(A_all[rows], d[rows], rcond=None)
            if rows.size < problem.n_vars:
                # underdetermined: stay closest to the multiplier solution
                x = res.y + np.linalg.lstsq(A_all[rows], d[rows] - A_all[rows] @ res.y,
                                            rcond=None)[0]
        return LpResult("optimal", x, float(problem.c @ x), res.iterations, res.flags)
    # dual unbounded means the primal is infeasible; a dual without feasible
    # points means the primal is unbounded or infeasible
    status = {"unbounded": "infeasible", "infeasible": "unbounded"}.get(res.status, res.status)
    return LpResult(status, None, np.nan, res.iterations, res.flags)


def solve(problem: LpProblem, max_iter=20000) -> LpResult:
    """``simplex`` that raises on infeasibility."""
    res = simplex(problem, max_iter)
    if res.status == "infeasible":
        raise InfeasibleError("linear program is infeasible")
    return res
