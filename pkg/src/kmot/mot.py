"""The multimarginal optimal transport program on a finite support.

Tuples ``(i_1, ..., i_k)`` are flattened in C order (last index fastest),
which is the column order of the marginal matrix ``A``: for ``N = 2, k = 3``
the columns are ``pi_111, pi_112, pi_121, ..., pi_222``.

Two solve routes share one interface (:class:`MotSolver`):

* dense: the primal LP ``min <c, pi>  s.t.  A pi = mu, pi >= 0`` with all
  ``N^k`` columns; returns the multicoupling and the row duals.
* lazy: the dual LP ``max <u, mu>  s.t.  A'u <= c`` by row generation over
  the ``N^k`` tuple constraints; the multicoupling is not materialized.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import highspy
import numpy as np
from scipy import sparse

from .errors import (
    BudgetExceeded,
    IndexOutOfRange,
    SolverFailure,
    SupportMismatch,
    ValidationError,
)
from .lp import (
    ConstraintFamily,
    LinearProgram,
    RowGenerationSolver,
    Status,
    VIOLATION_TOL,
    _hinf,
    _new_highs,
    _run,
    merge_top,
    solve_dense,
    top_violations,
)
from .measures import Measure, MeasureCollection, SupportSpace

DENSE_LIMIT = 10**6
MAX_TUPLES = 10**8
_CHUNK = 1 << 18


def n_tuples(N: int, k: int) -> int:
    return int(N) ** int(k)


def pair_cost(support: SupportSpace, k: int, i: int, j: int) -> float:
    """Cost of a tuple with ``k-1`` copies of ``x_i`` and one ``x_j``.

    Indices are zero-based. Equals ``(k-1)/k^2 * ||x_i - x_j||^2``.
    """
    N = support.N
    if not (0 <= i < N and 0 <= j < N):
        raise IndexOutOfRange(f"indices ({i}, {j}) outside 0..{N - 1}")
    return (k - 1) / k**2 * float(support.sq_dists[i, j])


def pair_cost_matrix(support: SupportSpace, k: int) -> np.ndarray:
    return (k - 1) / k**2 * support.sq_dists


def tuple_costs(support: SupportSpace, k: int, tuples: np.ndarray) -> np.ndarray:
    """Costs of an explicit ``(T, k)`` array of index tuples.

    Uses ``c = k^-2 * sum_{m<l} ||x_{i_m} - x_{i_l}||^2``, which is the mean
    squared deviation from the tuple's centroid.
    """
    D = support.sq_dists
    out = np.zeros(tuples.shape[0])
    for m in range(k):
        for l in range(m + 1, k):
            out += D[tuples[:, m], tuples[:, l]]
    return out / k**2


def build_cost_tensor(support: SupportSpace, k: int, max_entries: int = MAX_TUPLES) -> np.ndarray:
    """Dense cost vector of length ``N^k`` (C-order tuple flattening).

    Raises :class:`BudgetExceeded` if ``N^k > max_entries``.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    size = n_tuples(support.N, k)
    if size > max_entries:
        raise BudgetExceeded(f"N^k = {size} exceeds the budget of {max_entries} entries")
    return _cost_tensor(support, k)


@lru_cache(maxsize=8)
def _cost_tensor(support: SupportSpace, k: int) -> np.ndarray:
    N = support.N
    D = support.sq_dists
    c = np.zeros((N,) * k)
    for m in range(k):
        for l in range(m + 1, k):
            shape = [1] * k
            shape[m], shape[l] = N, N
            c = c + D.reshape(shape)
    c = (c / k**2).reshape(-1)
    c.setflags(write=False)
    return c


class MarginalMatrix:
    """Implicit ``A`` in ``{0,1}^{kN x N^k}``.

    Row ``(i, j)`` (stacked as ``i*N + j``) selects the tuples whose ``i``-th
    index equals ``j``.
    """

    def __init__(self, N: int, k: int):
        if N < 1 or k < 1:
            raise ValidationError("N and k must be positive")
        self.N, self.k = int(N), int(k)
        self.shape = (self.k * self.N, n_tuples(self.N, self.k))

    def tuple_of(self, col: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(col, (self.N,) * self.k))

    def contains(self, row: int, col: int) -> bool:
        i, j = divmod(row, self.N)
        return (col // self.N ** (self.k - 1 - i)) % self.N == j

    def tuples(self, cols=None) -> np.ndarray:
        cols = np.arange(self.shape[1]) if cols is None else np.asarray(cols)
        return np.stack(np.unravel_index(cols, (self.N,) * self.k), axis=1)

    def to_sparse(self) -> sparse.csc_matrix:
        T = self.shape[1]
        tup = self.tuples()
        rows = (tup + np.arange(self.k) * self.N).ravel()
        indptr = np.arange(0, T * self.k + 1, self.k)
        return sparse.csc_matrix((np.ones(T * self.k), rows, indptr), shape=self.shape)

    def toarray(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def apply(self, pi: np.ndarray) -> np.ndarray:
        """``A pi``: the stacked marginals of a multicoupling, shape ``(k, N)``."""
        P = np.asarray(pi).reshape((self.N,) * self.k)
        axes = set(range(self.k))
        return np.stack([P.sum(axis=tuple(axes - {i})) for i in range(self.k)])

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        """``A'u`` as a flat ``N^k`` vector: ``sum_i u_i[t_i]`` for every tuple."""
        return _tuple_sums(np.asarray(u).reshape(self.k, self.N)).reshape(-1)


def _tuple_sums(U: np.ndarray) -> np.ndarray:
    k, N = U.shape
    S = np.zeros((N,) * k)
    for i in range(k):
        shape = [1] * k
        shape[i] = N
        S = S + U[i].reshape(shape)
    return S


def diagonal_tuples(N: int, k: int) -> np.ndarray:
    step = sum(N**p for p in range(k))
    return np.arange(N) * step


def pair_tuples(N: int, k: int) -> np.ndarray:
    """Flat indices of tuples with ``k-1`` coinciding entries and one other."""
    out = []
    for i in range(k):
        for m in range(N):
            for j in range(N):
                if j != m:
                    t = [m] * k
                    t[i] = j
                    out.append(np.ravel_multi_index(t, (N,) * k))
    return np.unique(np.array(out, dtype=np.int64))


def north_west_corner(weights: np.ndarray) -> np.ndarray:
    """Flat tuple indices carrying the multi-index north-west corner coupling.

    The returned set supports a feasible multicoupling of the given
    marginals, which keeps a restricted dual program bounded.
    """
    weights = np.asarray(weights, dtype=float)
    k, N = weights.shape
    rem = weights.copy()
    pos = [0] * k
    out = []
    while True:
        out.append(np.ravel_multi_index(pos, (N,) * k))
        vals = np.array([rem[i, pos[i]] for i in range(k)])
        m = vals.min()
        advanced = False
        for i in range(k):
            rem[i, pos[i]] -= m
            if rem[i, pos[i]] <= 1e-15 and pos[i] < N - 1:
                pos[i] += 1
                advanced = True
        if not advanced:
            break
    return np.unique(np.array(out, dtype=np.int64))


class TupleFamily(ConstraintFamily):
    """The ``N^k`` dual constraints ``sum_i u_i[t_i] <= c_t`` over ``u`` in ``R^{kN}``.

    The most-violated query enumerates all tuples, in chunks when ``N^k``
    exceeds ``cache_limit`` (costs are then computed on the fly).
    """

    def __init__(self, support: SupportSpace, k: int, cache_limit: int = DENSE_LIMIT,
                 max_tuples: int = MAX_TUPLES):
        self.support, self.k, self.N = support, int(k), support.N
        self.n_vars = self.k * self.N
        self.size = n_tuples(self.N, self.k)
        if self.size > max_tuples:
            raise BudgetExceeded(
                f"N^k = {self.size} tuples exceed the enumeration budget of {max_tuples}"
            )
        self.cost = _cost_tensor(support, k) if self.size <= cache_limit else None
        self._offsets = np.arange(self.k) * self.N

    def tuples(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx, dtype=np.int64), (self.N,) * self.k), axis=1)

    def costs(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.cost is not None:
            return self.cost[idx]
        return tuple_costs(self.support, self.k, self.tuples(idx))

    def rows(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        cols = (self.tuples(idx) + self._offsets).ravel()
        indptr = np.arange(0, idx.size * self.k + 1, self.k)
        A = sparse.csr_matrix((np.ones(cols.size), cols, indptr), shape=(idx.size, self.n_vars))
        return A, self.costs(idx)

    def most_violated(self, x, limit=1, tol=VIOLATION_TOL):
        U = np.asarray(x, dtype=float).reshape(self.k, self.N)
        if self.cost is not None:
            viol = _tuple_sums(U).reshape(-1) - self.cost
            return top_violations(viol, 0, limit, tol)
        blocks = []
        for start in range(0, self.size, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, self.size))
            tup = self.tuples(idx)
            s = U[np.arange(self.k), tup].sum(axis=1)
            viol = s - tuple_costs(self.support, self.k, tup)
            blocks.append(top_violations(viol, start, limit, tol))
            if len(blocks) > 64:
                blocks = [merge_top(blocks, limit)]
        return merge_top(blocks, limit)


@dataclass
class MotSolution:
    """Optimal value, a primal multicoupling (dense mode) and a dual optimum.

    ``dual`` has shape ``(k, N)``; ``coupling`` is the flat ``N^k`` vector,
    or ``None`` when the lazy dual route was used (``lazy`` is then True).
    """

    value: float
    dual: np.ndarray
    coupling: np.ndarray | None = None
    lazy: bool = False
    solver_stats: dict = field(default_factory=dict)

    def coupling_tensor(self) -> np.ndarray:
        if self.coupling is None:
            raise ValidationError("multicoupling not materialized in lazy mode")
        k, N = self.dual.shape
        return self.coupling.reshape((N,) * k)


class MotSolver:
    """Reusable MOT solver for one support and one ``k``.

    The constraint structure never changes between calls, only the
    marginals, so a single HiGHS model is kept and warm started. Results
    therefore depend on the sequence of calls on one instance only through
    floating-point rounding of equal optimal values.

    ``mode`` is ``"dense"``, ``"lazy"`` or ``"auto"`` (dense when
    ``N^k <= dense_limit``).
    """

    def __init__(self, support: SupportSpace, k: int, mode: str = "auto",
                 dense_limit: int = DENSE_LIMIT, max_tuples: int = MAX_TUPLES):
        if k < 2:
            raise ValidationError("k must be >= 2")
        self.support, self.k, self.N = support, int(k), support.N
        size = n_tuples(self.N, self.k)
        if mode == "auto":
            mode = "dense" if size <= dense_limit else "lazy"
        if mode not in ("dense", "lazy"):
            raise ValidationError(f"unknown mode {mode!r}")
        if size > max_tuples:
            raise BudgetExceeded(f"N^k = {size} exceeds the budget of {max_tuples} tuples")
        self.mode = mode
        if mode == "dense":
            self._build_dense()
        else:
            self._family = TupleFamily(support, k, cache_limit=dense_limit, max_tuples=max_tuples)
            k, N = self.k, self.N
            pins = np.full(k * N, -np.inf), np.full(k * N, np.inf)
            pins[0][N::N] = 0.0
            pins[1][N::N] = 0.0
            self._rg = RowGenerationSolver(
                self._family,
                np.union1d(diagonal_tuples(N, k), pair_tuples(N, k)),
                sense="max", lower=pins[0], upper=pins[1],
            )

    def _build_dense(self):
        k, N = self.k, self.N
        A = MarginalMatrix(N, k).to_sparse()
        c = _cost_tensor(self.support, k)
        lp = highspy.HighsLp()
        lp.num_col_ = A.shape[1]
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = c
        lp.col_lower_ = np.zeros(A.shape[1])
        lp.col_upper_ = _hinf(np.full(A.shape[1], np.inf))
        lp.row_lower_ = np.zeros(A.shape[0])
        lp.row_upper_ = np.zeros(A.shape[0])
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr.astype(np.int32)
        lp.a_matrix_.index_ = A.indices.astype(np.int32)
        lp.a_matrix_.value_ = A.data
        self._h = _new_highs(10**7)
        self._h.passModel(lp)
        self._cost = c

    def solve(self, weights) -> MotSolution:
        if isinstance(weights, MeasureCollection):
            if weights.k != self.k or weights.support != self.support:
                raise SupportMismatch("collection does not match this solver")
            weights = weights.weights()
        W = np.asarray(weights, dtype=float)
        if W.shape != (self.k, self.N):
            raise ValidationError(f"weights have shape {W.shape}, expected {(self.k, self.N)}")
        if self.mode == "dense":
            return self._solve_dense(W)
        return self._solve_lazy(W)

    def _solve_dense(self, W):
        mu = W.reshape(-1)
        n = mu.size
        self._h.changeRowsBounds(n, np.arange(n, dtype=np.int32), mu, mu)
        status, msg = _run(self._h)
        info = self._h.getInfo()
        stats = {"mode": "dense", "iterations": int(info.simplex_iteration_count),
                 "columns": int(self._cost.size), "rows": int(n)}
        if status is not Status.OPTIMAL:
            raise SolverFailure(f"MOT primal solve failed: {msg}", stats)
        sol = self._h.getSolution()
        pi = np.array(sol.col_value)
        u = np.array(sol.row_dual).reshape(self.k, self.N)
        return MotSolution(float(self._cost @ pi), u, pi, False, stats)

    def _solve_lazy(self, W):
        self._rg.add_rows(north_west_corner(W))
        res = self._rg.solve(W.reshape(-1))
        stats = {"mode": "lazy", **res.stats(), "active_rows": int(self._rg.n_rows)}
        if not res.ok:
            raise SolverFailure(f"MOT dual row generation failed: {res.message}", stats)
        u = res.x.reshape(self.k, self.N)
        return MotSolution(float(res.value), u, None, True, stats)


def solve_mot(collection: MeasureCollection, mode: str = "auto",
              dense_limit: int = DENSE_LIMIT, max_tuples: int = MAX_TUPLES) -> MotSolution:
    """Optimal MOT value with a dual optimum (and the multicoupling in dense mode)."""
    solver = MotSolver(collection.support, collection.k, mode, dense_limit, max_tuples)
    return solver.solve(collection.weights())


def mot_value(collection: MeasureCollection, **kw) -> float:
    return solve_mot(collection, **kw).value


def w2_squared(mu: Measure, nu: Measure) -> float:
    """Squared 2-Wasserstein distance between two measures on one support."""
    if mu.support != nu.support:
        raise SupportMismatch("measures live on different supports")
    N = mu.N
    A = MarginalMatrix(N, 2).to_sparse()
    lp = LinearProgram(
        mu.support.sq_dists.reshape(-1),
        A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]),
    )
    res = solve_dense(lp).raise_for_status()
    return max(res.value, 0.0)


def zero_sum_dual(collection: MeasureCollection, tol: float = 1e-9) -> np.ndarray:
    """A dual optimum with ``sum_i u_i = 0`` and ``u_i[0] = 0`` for all blocks.

    Solves the dual program restricted to ``sum_i u_i = 0``; raises
    :class:`SolverFailure` if the restricted optimum falls short of the MOT
    value, i.e. when no zero-sum dual optimum exists.
    """
    k, N = collection.k, collection.N
    W = collection.weights()
    family = TupleFamily(collection.support, k)
    lo, hi = np.full(k * N, -np.inf), np.full(k * N, np.inf)
    lo[N::N] = hi[N::N] = 0.0
    rg = RowGenerationSolver(
        family, np.union1d(diagonal_tuples(N, k), pair_tuples(N, k)), sense="max",
        lower=lo, upper=hi, A_eq=sparse.hstack([sparse.identity(N)] * k, format="csr"),
        b_eq=np.zeros(N),
    )
    res = rg.solve(W.reshape(-1))
    if not res.ok:
        raise SolverFailure(f"zero-sum dual solve failed: {res.message}", res.stats())
    value = MotSolver(collection.support, k).solve(W).value
    if res.value < value - tol:
        raise SolverFailure("no dual optimum with zero-sum blocks", {"gap": value - res.value})
    return res.x.reshape(k, N)


def normalize_dual(u: np.ndarray) -> np.ndarray:
    """Shift constants between dual blocks so ``u_2[0] = ... = u_k[0] = 0``.

    The shifts are absorbed by ``u_1``, so every tuple sum ``sum_i u_i[t_i]``
    and every objective ``<u, mu>`` with probability vectors ``mu_i`` is
    unchanged. If ``sum_i u_i = 0`` held before, ``u_1[0]`` ends at zero too.
    """
    u = np.array(u, dtype=float, copy=True)
    shifts = u[1:, 0].copy()
    u[1:] -= shifts[:, None]
    u[0] += shifts.sum()
    return u


def check_regularity(collection: MeasureCollection) -> bool:
    """Sufficient condition for the multitransportation polytope to have no
    degenerate vertices.

    Measures are first ordered by their largest weight (stable); the
    condition then requires strictly increasing largest weights and
    ``mu_i^(N) + sum_{j > i} mu_j^(1) > k - i`` for ``i = 1..k-1``, where
    ``mu^(1) >= ... >= mu^(N)`` are the sorted weights.
    """
    W = -np.sort(-collection.weights(), axis=1)
    k = W.shape[0]
    W = W[np.argsort(W[:, 0], kind="stable")]
    tops = W[:, 0]
    if np.any(np.diff(tops) <= 0):
        return False
    for i in range(1, k):
        if not W[i - 1, -1] + tops[i:].sum() > k - i:
            return False
    return True


def barycenter(solution: MotSolution, support: SupportSpace, tol: float = 1e-12):
    """Push-forward of the multicoupling by the tuple-averaging map.

    Returns ``(points, weights)``; a diagnostic only, since barycenters of
    discrete measures are generally not unique.
    """
    P = solution.coupling
    if P is None:
        raise ValidationError("barycenter needs a materialized multicoupling")
    k = solution.dual.shape[0]
    idx = np.flatnonzero(P > tol)
    tup = np.stack(np.unravel_index(idx, (support.N,) * k), axis=1)
    means = support.points[tup].mean(axis=1)
    keys = np.round(means, 12)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    w = np.bincount(inv.reshape(-1), weights=P[idx], minlength=len(uniq))
    return uniq, w


def enumerate_tuples(N: int, k: int):
    return itertools.product(range(N), repeat=k)
