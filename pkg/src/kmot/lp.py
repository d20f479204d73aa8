"""Finite linear programs: dense solves and lazy row generation.

Both routes run on the HiGHS dual simplex through ``highspy``. Dual values
are reported with a single convention regardless of sense: the derivative
of the optimal value with respect to the right-hand side of each row. For
``min c'x  s.t.  A x = b, x >= 0`` this gives a ``y`` with ``A'y <= c``.

Row generation (:class:`RowGenerationSolver`) keeps one HiGHS model alive,
so repeated solves that only change the objective are warm started from the
previous basis and reuse every row generated so far.
"""
from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import highspy
import numpy as np
from scipy import sparse

from .errors import RowCapExceeded, SolverFailure, Stalled, ValidationError

INF = highspy.kHighsInf
FEAS_TOL = 1e-10
VIOLATION_TOL = 1e-9
DEFAULT_ITERATION_CAP = 1_000_000


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    STALLED = "stalled"


@dataclass
class LinearProgram:
    """``min`` or ``max`` of ``objective . x`` subject to

    ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and ``lower <= x <= upper``.

    Bounds default to ``x >= 0``. Matrices may be dense arrays or scipy
    sparse matrices.
    """

    objective: np.ndarray
    A_ub: object = None
    b_ub: np.ndarray | None = None
    A_eq: object = None
    b_eq: np.ndarray | None = None
    lower: object = 0.0
    upper: object = np.inf
    sense: str = "min"

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.objective.shape[0]
        if self.sense not in ("min", "max"):
            raise ValidationError(f"sense must be 'min' or 'max', got {self.sense!r}")
        self.A_ub, self.b_ub = _check_block(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = _check_block(self.A_eq, self.b_eq, n, "eq")
        self.lower = np.broadcast_to(np.asarray(self.lower, float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValidationError("lower bound above upper bound")

    @property
    def n_vars(self) -> int:
        return self.objective.shape[0]


def _check_block(A, b, n, name):
    if A is None:
        return sparse.csr_matrix((0, n)), np.zeros(0)
    A = sparse.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise ValidationError(
            f"A_{name} has shape {A.shape}, expected ({b.shape[0]}, {n})"
        )
    return A, b


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None
    value: float
    dual_ub: np.ndarray | None = None
    dual_eq: np.ndarray | None = None
    iterations: int = 0
    rows_generated: int = 0
    rounds: int = 1
    active_rows: np.ndarray | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def stats(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": int(self.iterations),
            "rows_generated": int(self.rows_generated),
            "rounds": int(self.rounds),
        }

    def raise_for_status(self) -> "LpSolution":
        if self.status is Status.STALLED:
            raise Stalled(f"LP stalled: {self.message}", self.stats())
        if self.status is not Status.OPTIMAL:
            raise SolverFailure(f"LP not solved to optimality: {self.status.value}", self.stats())
        return self


def _new_highs(iteration_cap: int) -> highspy.Highs:
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("presolve", "off")
    h.setOptionValue("solver", "simplex")
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("primal_feasibility_tolerance", FEAS_TOL)
    h.setOptionValue("dual_feasibility_tolerance", FEAS_TOL)
    h.setOptionValue("simplex_iteration_limit", int(iteration_cap))
    return h


def _hinf(a):
    a = np.asarray(a, dtype=float).copy()
    a[np.isposinf(a)] = INF
    a[np.isneginf(a)] = -INF
    return a


def _add_rows(h, A: sparse.csr_matrix, lo, hi):
    if A.shape[0] == 0:
        return
    A = sparse.csr_matrix(A)
    h.addRows(
        A.shape[0], _hinf(lo), _hinf(hi), A.nnz,
        A.indptr[:-1].astype(np.int32), A.indices.astype(np.int32),
        A.data.astype(float),
    )


_STATUS = {
    highspy.HighsModelStatus.kOptimal: Status.OPTIMAL,
    highspy.HighsModelStatus.kInfeasible: Status.INFEASIBLE,
    highspy.HighsModelStatus.kUnbounded: Status.UNBOUNDED,
    highspy.HighsModelStatus.kUnboundedOrInfeasible: Status.UNBOUNDED,
    highspy.HighsModelStatus.kIterationLimit: Status.STALLED,
    highspy.HighsModelStatus.kTimeLimit: Status.STALLED,
    highspy.HighsModelStatus.kModelEmpty: Status.OPTIMAL,
}


def _run(h) -> tuple[Status, str]:
    h.run()
    ms = h.getModelStatus()
    return _STATUS.get(ms, Status.STALLED), h.modelStatusToString(ms)


def solve_dense(lp: LinearProgram, *, iteration_cap: int = DEFAULT_ITERATION_CAP) -> LpSolution:
    """Solve a fully materialized LP with primal and dual certificates.

    Non-optimal outcomes are reported through ``status``; a run that hits
    ``iteration_cap`` comes back as ``Status.STALLED``.
    """
    h = _new_highs(iteration_cap)
    n = lp.n_vars
    h.addVars(n, _hinf(lp.lower), _hinf(lp.upper))
    if n:
        h.changeColsCost(n, np.arange(n, dtype=np.int32), lp.objective)
    m_ub, m_eq = lp.A_ub.shape[0], lp.A_eq.shape[0]
    _add_rows(h, lp.A_ub, np.full(m_ub, -np.inf), lp.b_ub)
    _add_rows(h, lp.A_eq, lp.b_eq, lp.b_eq)
    h.changeObjectiveSense(
        highspy.ObjSense.kMaximize if lp.sense == "max" else highspy.ObjSense.kMinimize
    )
    status, msg = _run(h)
    if status is Status.UNBOUNDED:
        # A dual-simplex "unbounded" can hide primal infeasibility; check it.
        h.changeColsCost(n, np.arange(n, dtype=np.int32), np.zeros(n))
        st2, _ = _run(h)
        if st2 is Status.INFEASIBLE:
            status = Status.INFEASIBLE
    iters = int(h.getInfo().simplex_iteration_count)
    if status is not Status.OPTIMAL:
        value = {Status.INFEASIBLE: np.nan, Status.UNBOUNDED: np.inf if lp.sense == "max" else -np.inf}.get(status, np.nan)
        return LpSolution(status, None, value, iterations=iters, message=msg)
    sol = h.getSolution()
    x = np.array(sol.col_value)
    duals = np.array(sol.row_dual)
    return LpSolution(
        Status.OPTIMAL, x, float(lp.objective @ x) if n else 0.0,
        dual_ub=duals[:m_ub], dual_eq=duals[m_ub:m_ub + m_eq],
        iterations=iters, message=msg,
    )


class ConstraintFamily(ABC):
    """A large family of inequalities ``a_r . x <= b_r`` over ``n_vars`` variables.

    Subclasses expose rows by index and a most-violated query. The query
    must return rows ordered by decreasing violation with ties broken by
    increasing row index, so that row generation is deterministic.
    """

    n_vars: int
    size: int

    @abstractmethod
    def rows(self, idx: np.ndarray) -> tuple[sparse.csr_matrix, np.ndarray]:
        """Coefficient matrix and right-hand side of the requested rows."""

    @abstractmethod
    def most_violated(self, x: np.ndarray, limit: int = 1,
                      tol: float = VIOLATION_TOL) -> tuple[np.ndarray, np.ndarray]:
        """Up to ``limit`` row indices with violation above ``tol``, and the violations."""

    def max_violation(self, x: np.ndarray) -> float:
        idx, viol = self.most_violated(x, 1, tol=-np.inf)
        return float(viol[0]) if len(viol) else -np.inf


def top_violations(viol: np.ndarray, offset: int, limit: int, tol: float):
    """Deterministic top-``limit`` selection from a block of violations."""
    cand = np.flatnonzero(viol > tol)
    if cand.size == 0:
        return cand + offset, viol[cand]
    if cand.size > limit:
        part = np.argpartition(-viol[cand], limit - 1)[:limit]
        # keep every candidate tied with the limit-th value so ties resolve by index
        thresh = viol[cand[part]].min()
        cand = cand[viol[cand] >= thresh]
    order = np.lexsort((cand, -viol[cand]))[:limit]
    cand = cand[order]
    return cand + offset, viol[cand]


def merge_top(blocks, limit):
    """Merge per-block ``(idx, viol)`` lists keeping global order and ties by index."""
    if not blocks:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx = np.concatenate([b[0] for b in blocks])
    viol = np.concatenate([b[1] for b in blocks])
    order = np.lexsort((idx, -viol))[:limit]
    return idx[order], viol[order]


class MatrixFamily(ConstraintFamily):
    """An explicit ``A x <= b`` viewed as a family; for tests and small programs."""

    def __init__(self, A, b):
        self.A = sparse.csr_matrix(A, dtype=float)
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.size, self.n_vars = self.A.shape

    def rows(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.A[idx], self.b[idx]

    def most_violated(self, x, limit=1, tol=VIOLATION_TOL):
        viol = self.A @ x - self.b
        return top_violations(viol, 0, limit, tol)


@dataclass
class RowGenerationSolver:
    """Cutting-plane solver for ``opt objective . x`` over a constraint family.

    Fixed rows (``A_eq``/``A_fixed``) are always present; family rows start
    from ``initial_rows`` and grow by up to ``rows_per_round`` most-violated
    rows per round until no family row is violated by more than ``tol``.
    The model persists across :meth:`solve` calls, so later objectives start
    from the previous basis and the accumulated rows.
    """

    family: ConstraintFamily
    initial_rows: np.ndarray | None = None
    sense: str = "max"
    lower: object = -np.inf
    upper: object = np.inf
    A_eq: object = None
    b_eq: np.ndarray | None = None
    eq_family_rows: np.ndarray | None = None
    tol: float = VIOLATION_TOL
    rows_per_round: int = 32
    max_rounds: int = 10_000
    row_cap: int = 5_000_000
    iteration_cap: int = DEFAULT_ITERATION_CAP
    _active: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        n = self.family.n_vars
        self._h = _new_highs(self.iteration_cap)
        lo = np.broadcast_to(np.asarray(self.lower, float), (n,))
        hi = np.broadcast_to(np.asarray(self.upper, float), (n,))
        self._h.addVars(n, _hinf(lo), _hinf(hi))
        self._h.changeObjectiveSense(
            highspy.ObjSense.kMaximize if self.sense == "max" else highspy.ObjSense.kMinimize
        )
        A_eq, b_eq = _check_block(self.A_eq, self.b_eq, n, "eq")
        self._n_eq = A_eq.shape[0]
        _add_rows(self._h, A_eq, b_eq, b_eq)
        self._rows: list[int] = []
        self._generated = 0
        if self.eq_family_rows is not None and len(self.eq_family_rows):
            idx = np.unique(np.asarray(self.eq_family_rows, dtype=np.int64))
            A, b = self.family.rows(idx)
            _add_rows(self._h, A, b, b)
            for r in idx:
                self._active[int(r)] = len(self._rows)
                self._rows.append(int(r))
        if self.initial_rows is not None:
            self._add(np.asarray(self.initial_rows, dtype=np.int64), count=False)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def add_rows(self, idx) -> int:
        """Activate family rows ahead of the next solve; returns how many were new."""
        return self._add(np.asarray(idx, dtype=np.int64), count=False)

    def _add(self, idx, count=True):
        idx = np.array([r for r in dict.fromkeys(int(i) for i in idx) if r not in self._active],
                       dtype=np.int64)
        if idx.size == 0:
            return 0
        if len(self._rows) + idx.size > self.row_cap:
            raise RowCapExceeded(
                f"row generation would exceed the cap of {self.row_cap} rows",
                {"rows": len(self._rows)},
            )
        A, b = self.family.rows(idx)
        _add_rows(self._h, A, np.full(idx.size, -np.inf), b)
        for r in idx:
            self._active[int(r)] = len(self._rows)
            self._rows.append(int(r))
        if count:
            self._generated += idx.size
        return idx.size

    def solve(self, objective: np.ndarray) -> LpSolution:
        n = self.family.n_vars
        objective = np.asarray(objective, dtype=float)
        self._h.changeColsCost(n, np.arange(n, dtype=np.int32), objective)
        iters = 0
        generated0 = self._generated
        for rnd in range(1, self.max_rounds + 1):
            status, msg = _run(self._h)
            iters += int(self._h.getInfo().simplex_iteration_count)
            if status is not Status.OPTIMAL:
                return LpSolution(status, None, np.nan, iterations=iters,
                                  rows_generated=self._generated - generated0,
                                  rounds=rnd, message=msg)
            x = np.array(self._h.getSolution().col_value)
            idx, _ = self.family.most_violated(x, self.rows_per_round, self.tol)
            if idx.size == 0:
                break
            if self._add(idx) == 0:
                return LpSolution(Status.STALLED, x, np.nan, iterations=iters,
                                  rows_generated=self._generated - generated0, rounds=rnd,
                                  message="violated rows already active; tolerance too tight")
        else:
            return LpSolution(Status.STALLED, None, np.nan, iterations=iters,
                              rows_generated=self._generated - generated0,
                              rounds=self.max_rounds, message="round cap reached")
        duals = np.array(self._h.getSolution().row_dual)
        return LpSolution(
            Status.OPTIMAL, x, float(objective @ x),
            dual_eq=duals[:self._n_eq], dual_ub=duals[self._n_eq:],
            iterations=iters, rows_generated=self._generated - generated0,
            rounds=rnd, active_rows=np.array(self._rows, dtype=np.int64), message=msg,
        )


def solve_lazy(objective, family: ConstraintFamily, initial_rows=None, *,
               sense="max", lower=-np.inf, upper=np.inf, A_eq=None, b_eq=None,
               tol=VIOLATION_TOL, rows_per_round=32, max_rounds=10_000,
               row_cap=5_000_000, iteration_cap=DEFAULT_ITERATION_CAP) -> LpSolution:
    """One-shot row generation; see :class:`RowGenerationSolver`.

    ``RowCapExceeded`` is raised when the active set would exceed
    ``row_cap``; a round cap or iteration cap yields ``Status.STALLED``.
    """
    solver = RowGenerationSolver(
        family, initial_rows, sense=sense, lower=lower, upper=upper,
        A_eq=A_eq, b_eq=b_eq, tol=tol, rows_per_round=rows_per_round,
        max_rounds=max_rounds, row_cap=row_cap, iteration_cap=iteration_cap,
    )
    return solver.solve(objective)
