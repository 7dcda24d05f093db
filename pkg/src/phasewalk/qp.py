"""Dense convex QP solver: dual active-set method with warm starting.

Solves
    min  1/2 x^T H x + g^T x
    s.t. A x = b,   lb <= C x <= ub

for symmetric positive-(semi)definite H. The method starts at the
unconstrained minimizer and adds violated constraints one at a time,
taking combined primal/dual steps and dropping active constraints whose
multipliers would go negative. Every Optimal return carries a certified
KKT residual. Bounds with magnitude >= INFINITY_BOUND are treated as
absent and never enter the active set.

A solver instance owns scratch state for one solve at a time; share
problems and solutions between threads, not solver instances.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

INFINITY_BOUND = 1e19

# Regularization added to H when the Cholesky factorization reports
# semi-definiteness. The NMPC cost Hessians are strictly positive
# definite, so this is a safety net only.
_REGULARIZATION = 1e-10

_ZERO_TOL = 1e-11
_FEAS_TOL = 1e-10


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class QpProblem:
    """Value container for one dense QP.

    eq_matrix/eq_rhs may be empty ((0, n) / (0,)); likewise the
    inequality block. lb/ub bound the rows of ineq_matrix elementwise.
    """

    hessian: np.ndarray
    gradient: np.ndarray
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    ineq_matrix: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        self.gradient = np.asarray(self.gradient, dtype=float).ravel()
        n = self.gradient.size
        if self.hessian.shape != (n, n):
            raise ValueError(f"hessian shape {self.hessian.shape} vs gradient size {n}")
        sym_err = np.max(np.abs(self.hessian - self.hessian.T)) if n else 0.0
        if sym_err > 1e-12 * max(1.0, np.max(np.abs(self.hessian))):
            raise ValueError(f"hessian not symmetric (max asymmetry {sym_err:.3e})")
        if self.eq_matrix is None:
            self.eq_matrix = np.zeros((0, n))
            self.eq_rhs = np.zeros(0)
        else:
            self.eq_matrix = np.atleast_2d(np.asarray(self.eq_matrix, dtype=float))
            self.eq_rhs = np.asarray(self.eq_rhs, dtype=float).ravel()
        if self.ineq_matrix is None:
            self.ineq_matrix = np.zeros((0, n))
            self.lower = np.zeros(0)
            self.upper = np.zeros(0)
        else:
            self.ineq_matrix = np.atleast_2d(np.asarray(self.ineq_matrix, dtype=float))
            self.lower = np.asarray(self.lower, dtype=float).ravel()
            self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.eq_matrix.shape[1] != n or self.ineq_matrix.shape[1] != n:
            raise ValueError("constraint matrix width does not match variable count")
        if self.eq_rhs.shape[0] != self.eq_matrix.shape[0]:
            raise ValueError("eq_rhs length mismatch")
        m = self.ineq_matrix.shape[0]
        if self.lower.shape[0] != m or self.upper.shape[0] != m:
            raise ValueError("bound length mismatch")
        finite = (self.lower < INFINITY_BOUND) & (self.upper > -INFINITY_BOUND)
        both = finite & (self.lower > -INFINITY_BOUND) & (self.upper < INFINITY_BOUND)
        if np.any(self.lower[both] > self.upper[both] + 1e-12):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.gradient.size


@dataclass
class QpSolution:
    primal: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    status: QpStatus
    kkt_residual: float = np.inf
    pivots: int = 0
    # Internal single-sided constraint ids, usable as a warm-start seed.
    active_set: tuple = field(default_factory=tuple)
    objective: float = np.nan


def kkt_residual(p: QpProblem, x, eq_mult, ineq_mult) -> float:
    """Max-norm KKT residual: stationarity, feasibility, complementarity."""
    r = 0.0
    stat = p.hessian @ x + p.gradient
    if p.eq_matrix.shape[0]:
        stat = stat - p.eq_matrix.T @ eq_mult
        r = max(r, float(np.max(np.abs(p.eq_matrix @ x - p.eq_rhs))))
    if p.ineq_matrix.shape[0]:
        stat = stat - p.ineq_matrix.T @ ineq_mult
        cx = p.ineq_matrix @ x
        lo_gap = np.where(p.lower > -INFINITY_BOUND, p.lower - cx, -np.inf)
        hi_gap = np.where(p.upper < INFINITY_BOUND, cx - p.upper, -np.inf)
        r = max(r, float(np.max(np.maximum(lo_gap, hi_gap), initial=0.0)))
        # complementary slackness: positive multipliers pair with the lower
        # bound, negative with the upper
        slack = np.where(ineq_mult >= 0.0, cx - p.lower, p.upper - cx)
        slack = np.where(np.abs(ineq_mult) > 0.0, slack, 0.0)
        r = max(r, float(np.max(np.abs(ineq_mult * slack), initial=0.0)))
    if x.size:
        r = max(r, float(np.max(np.abs(stat))))
    return r


class _Infeasible(Exception):
    pass


class QpSolver:
    """Reusable solver; holds per-solve scratch only."""

    def __init__(self, max_pivots: int = 500):
        self.max_pivots = max_pivots

    def solve(self, p: QpProblem, warm_start=None) -> QpSolution:
        n = p.n_vars
        try:
            chol = self._factor(p.hessian)
        except np.linalg.LinAlgError:
            return QpSolution(
                primal=np.zeros(n),
                eq_multipliers=np.zeros(p.eq_matrix.shape[0]),
                ineq_multipliers=np.zeros(p.ineq_matrix.shape[0]),
                status=QpStatus.UNBOUNDED,
            )

        # Single-sided rows: id 2j   <->  C_j x >= lb_j
        #                    id 2j+1 <-> -C_j x >= -ub_j
        # Equality row e carries id -(e+1); a flip sign is chosen at add time.
        self._p = p
        self._chol = chol
        self._x = -cho_solve(chol, p.gradient) if n else np.zeros(0)
        self._active: list[int] = []
        self._mult: list[float] = []
        self._flip: dict[int, float] = {}
        self._hinv_cache: dict[int, np.ndarray] = {}
        self._pivots = 0

        seed = self._normalize_seed(warm_start)
        try:
            for e in range(p.eq_matrix.shape[0]):
                self._add_constraint(-(e + 1))
            for cid in seed:
                if cid < 0 or cid in self._active:
                    continue
                if self._violation(cid) < -_FEAS_TOL:
                    self._add_constraint(cid)
            while True:
                cid = self._most_violated()
                if cid is None:
                    break
                self._add_constraint(cid)
        except _Infeasible:
            return self._finish(QpStatus.INFEASIBLE)
        except _PivotBudget:
            return self._finish(QpStatus.MAX_ITER)
        return self._finish(QpStatus.OPTIMAL)

    # -- internals ---------------------------------------------------------

    def _factor(self, hessian):
        try:
            return cho_factor(hessian, lower=True)
        except np.linalg.LinAlgError:
            return cho_factor(
                hessian + _REGULARIZATION * np.eye(hessian.shape[0]), lower=True
            )

    @staticmethod
    def _normalize_seed(warm_start):
        if warm_start is None:
            return ()
        if isinstance(warm_start, QpSolution):
            return warm_start.active_set
        return tuple(int(c) for c in warm_start)

    def _normal(self, cid: int) -> np.ndarray:
        p = self._p
        if cid < 0:
            return self._flip.get(cid, 1.0) * p.eq_matrix[-cid - 1]
        j, side = divmod(cid, 2)
        return p.ineq_matrix[j] if side == 0 else -p.ineq_matrix[j]

    def _rhs(self, cid: int) -> float:
        p = self._p
        if cid < 0:
            return self._flip.get(cid, 1.0) * p.eq_rhs[-cid - 1]
        j, side = divmod(cid, 2)
        return p.lower[j] if side == 0 else -p.upper[j]

    def _violation(self, cid: int) -> float:
        return float(self._normal(cid) @ self._x - self._rhs(cid))

    def _most_violated(self):
        p = self._p
        m = p.ineq_matrix.shape[0]
        if m == 0:
            return None
        cx = p.ineq_matrix @ self._x
        worst, worst_cid = -_FEAS_TOL, None
        for j in range(m):
            if p.lower[j] > -INFINITY_BOUND:
                v = cx[j] - p.lower[j]
                if v < worst and 2 * j not in self._active:
                    worst, worst_cid = v, 2 * j
            if p.upper[j] < INFINITY_BOUND:
                v = p.upper[j] - cx[j]
                if v < worst and 2 * j + 1 not in self._active:
                    worst, worst_cid = v, 2 * j + 1
        return worst_cid

    def _hinv_n(self, cid: int) -> np.ndarray:
        cached = self._hinv_cache.get(cid)
        if cached is None:
            cached = cho_solve(self._chol, self._normal(cid))
            self._hinv_cache[cid] = cached
        return cached

    def _add_constraint(self, cid: int):
        if cid < 0:
            # orient the equality so it is approached from the violated side
            raw = float(self._p.eq_matrix[-cid - 1] @ self._x - self._p.eq_rhs[-cid - 1])
            self._flip[cid] = -1.0 if raw > 0.0 else 1.0
            self._hinv_cache.pop(cid, None)
            if abs(raw) <= _FEAS_TOL and self._dependent(cid):
                return  # already implied by the active set
        n_plus = self._normal(cid)
        hinv_np = self._hinv_n(cid)
        u_plus = 0.0
        while True:
            self._bump_pivots()
            if self._active:
                big_n = np.column_stack([self._hinv_n(c) for c in self._active])
                normals = np.column_stack([self._normal(c) for c in self._active])
                m_mat = normals.T @ big_n
                try:
                    r = np.linalg.solve(m_mat, normals.T @ hinv_np)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(m_mat, normals.T @ hinv_np, rcond=None)[0]
                z = hinv_np - big_n @ r
            else:
                r = np.zeros(0)
                z = hinv_np

            viol = self._violation(cid)
            if viol >= -_FEAS_TOL and u_plus == 0.0 and cid >= 0:
                return  # satisfied before any step was needed
            znp = float(z @ n_plus)
            t2 = -viol / znp if znp > _ZERO_TOL else np.inf

            t1, drop_pos = np.inf, None
            for pos, c in enumerate(self._active):
                if c < 0:
                    continue  # equalities never leave the active set
                if r[pos] > _ZERO_TOL:
                    step = self._mult[pos] / r[pos]
                    if step < t1 - 1e-14:
                        t1, drop_pos = step, pos
            t = min(t1, t2)
            if not np.isfinite(t):
                raise _Infeasible

            if np.isfinite(t2):
                self._x = self._x + t * z
            for pos in range(len(self._active)):
                self._mult[pos] -= t * r[pos]
            u_plus += t

            if t == t2 and np.isfinite(t2):
                self._active.append(cid)
                self._mult.append(u_plus)
                return
            self._drop(drop_pos)

    def _dependent(self, cid: int) -> bool:
        if not self._active:
            return False
        n_plus = self._normal(cid)
        big_n = np.column_stack([self._hinv_n(c) for c in self._active])
        normals = np.column_stack([self._normal(c) for c in self._active])
        try:
            r = np.linalg.solve(normals.T @ big_n, normals.T @ self._hinv_n(cid))
        except np.linalg.LinAlgError:
            return True
        z = self._hinv_n(cid) - big_n @ r
        return float(z @ n_plus) <= _ZERO_TOL

    def _drop(self, pos: int):
        self._bump_pivots()
        del self._active[pos]
        del self._mult[pos]

    def _bump_pivots(self):
        self._pivots += 1
        if self._pivots > self.max_pivots:
            raise _PivotBudget

    def _finish(self, status: QpStatus) -> QpSolution:
        p = self._p
        eq_mult = np.zeros(p.eq_matrix.shape[0])
        ineq_mult = np.zeros(p.ineq_matrix.shape[0])
        for cid, u in zip(self._active, self._mult):
            if cid < 0:
                eq_mult[-cid - 1] += self._flip.get(cid, 1.0) * u
            else:
                j, side = divmod(cid, 2)
                ineq_mult[j] += u if side == 0 else -u
        sol = QpSolution(
            primal=self._x.copy(),
            eq_multipliers=eq_mult,
            ineq_multipliers=ineq_mult,
            status=status,
            pivots=self._pivots,
            active_set=tuple(c for c in self._active if c >= 0),
            objective=float(0.5 * self._x @ (p.hessian @ self._x) + p.gradient @ self._x),
        )
        if status == QpStatus.OPTIMAL:
            sol.kkt_residual = kkt_residual(p, sol.primal, eq_mult, ineq_mult)
        return sol


class _PivotBudget(Exception):
    pass


def solve_qp(p: QpProblem, warm_start=None, max_pivots: int = 500) -> QpSolution:
    """One-shot convenience wrapper around QpSolver."""
    return QpSolver(max_pivots=max_pivots).solve(p, warm_start=warm_start)
