"""Asymptotic laws of the scaled empirical MOT value.

All programs here optimize over dual vectors ``u = (u_1, ..., u_k)`` with a
linear objective built from Gaussian directions ``g_i``:

* :class:`NullProgram`: ``max sum_i sqrt(a_i) <u_i, g_i>`` over
  ``{sum_i u_i = 0, A'u <= c}`` (the null limit ``X0``);
* :class:`Ub0Program`: the same objective over the relaxation keeping only
  tuples with ``k-1`` coinciding indices (``UB0 >= X0`` pathwise);
* :class:`AlternativeProgram`: the same objective over the dual optimal
  face of a fixed alternative.

Each program's feasible set is fixed, so a single persistent LP is built
once and re-solved with a new objective per draw. Every program is invariant
under shifting ``u_i`` by constants ``t_i`` with ``sum t_i = 0`` (the
directions ``g_i`` sum to zero), so the first entries of ``u_2, ..., u_k``
are pinned to 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import InvalidSize, SolverFailure, ValidationError
from .lp import MatrixFamily, RowGenerationSolver
from .measures import Measure, MeasureCollection, SupportSpace, gaussian_limit_sample
from .mot import (
    DENSE_LIMIT,
    MAX_TUPLES,
    MotSolution,
    TupleFamily,
    diagonal_tuples,
    n_tuples,
    pair_cost_matrix,
    pair_tuples,
)


@dataclass(frozen=True)
class RateInfo:
    """Scaling rate ``rho_n`` and asymptotic weights for sample sizes ``n``.

    ``lam[i] = n_i / sum(n)`` and ``a[i] = prod_{j != i} lam[j]``.
    """

    n: tuple[int, ...]
    rho: float
    lam: np.ndarray
    a: np.ndarray

    @property
    def k(self) -> int:
        return len(self.n)


def rate(n) -> RateInfo:
    n = tuple(int(v) for v in n)
    if len(n) < 2:
        raise ValidationError("need k >= 2 sample sizes")
    if min(n) < 1:
        raise InvalidSize(f"sample sizes must be positive, got {n}")
    k = len(n)
    total = float(sum(n))
    # logs keep the product of large sizes finite
    log_rho = 0.5 * np.sum(np.log(n)) - 0.5 * (k - 1) * np.log(total)
    lam = np.array(n, dtype=float) / total
    a = np.array([np.prod(np.delete(lam, i)) for i in range(k)])
    return RateInfo(n, float(np.exp(log_rho)), lam, a)


def draw_null_directions(mu1: Measure | np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` independent draws from ``N(0, Sigma(mu1))``, shape ``(k, N)``."""
    return gaussian_limit_sample(mu1, rng, size=k)


def draw_alternative_directions(collection: MeasureCollection | np.ndarray,
                                rng: np.random.Generator) -> np.ndarray:
    """One draw ``g_i ~ N(0, Sigma(mu_i))`` per measure, shape ``(k, N)``."""
    W = collection.weights() if isinstance(collection, MeasureCollection) else np.asarray(collection)
    return np.stack([gaussian_limit_sample(w, rng) for w in W])


def _objective(G: np.ndarray, a: np.ndarray) -> np.ndarray:
    # no recentering: zero-mass coordinates must keep exactly zero coefficients
    G = np.asarray(G, dtype=float)
    return np.sqrt(np.asarray(a, dtype=float))[:, None] * G


def _pins(k: int, N: int):
    lo, hi = np.full(k * N, -np.inf), np.full(k * N, np.inf)
    lo[N::N] = 0.0
    hi[N::N] = 0.0
    return lo, hi


class NullProgram:
    """Persistent solver for ``max sum_i <u_i, w_i>  s.t.  sum_i u_i = 0, A'u <= c``.

    ``mode="lazy"`` generates tuple rows on demand starting from the pair
    tuples; ``mode="dense"`` loads all ``N^k`` rows up front. ``"auto"``
    picks dense up to ``dense_limit`` rows.
    """

    def __init__(self, support: SupportSpace, k: int, mode: str = "lazy",
                 dense_limit: int = DENSE_LIMIT, max_tuples: int = MAX_TUPLES):
        self.support, self.k, self.N = support, int(k), support.N
        size = n_tuples(self.N, self.k)
        if mode == "auto":
            mode = "dense" if size <= dense_limit else "lazy"
        if mode not in ("dense", "lazy"):
            raise ValidationError(f"unknown mode {mode!r}")
        self.mode = mode
        family = TupleFamily(support, k, cache_limit=dense_limit, max_tuples=max_tuples)
        if mode == "dense":
            rows = np.arange(size)
        else:
            rows = np.union1d(diagonal_tuples(self.N, self.k), pair_tuples(self.N, self.k))
        k, N = self.k, self.N
        A_eq = sparse.hstack([sparse.identity(N)] * k, format="csr")
        lo, hi = _pins(k, N)
        self._rg = RowGenerationSolver(family, rows, sense="max", lower=lo, upper=hi,
                                       A_eq=A_eq, b_eq=np.zeros(N))
        self.last_stats: dict = {}

    def solve_weights(self, W: np.ndarray) -> tuple[float, np.ndarray]:
        """Optimal value and maximizer for the objective matrix ``W`` (shape ``(k, N)``)."""
        res = self._rg.solve(np.asarray(W, dtype=float).reshape(-1))
        self.last_stats = res.stats()
        if not res.ok:
            raise SolverFailure(f"null limit program failed: {res.message}", res.stats())
        return max(res.value, 0.0), res.x.reshape(self.k, self.N)

    def value(self, G: np.ndarray, a) -> float:
        """``X0`` for directions ``G`` (shape ``(k, N)``) and weights ``a``."""
        return self.solve_weights(_objective(G, a))[0]


def sample_x0(mu1: Measure, a, k: int, rng: np.random.Generator,
              program: NullProgram | None = None) -> float:
    """One draw of the null limit: ``g_i`` i.i.d. ``N(0, Sigma(mu1))``, then the LP value."""
    program = program or NullProgram(mu1.support, k)
    return program.value(draw_null_directions(mu1, k, rng), a)


@dataclass
class Ub0Program:
    """Relaxed null program in the variables ``v = (u_2, ..., u_k)``.

    Rows: for each block ``i = 1..k`` and each ordered pair ``m != j``,
    ``(u_i)_j - (u_i)_m <= pc(m, j)`` where ``u_1 = -sum_{i>=2} u_i`` and
    ``pc`` is the pair cost. ``A`` has ``k N (N-1)`` rows and ``(k-1) N``
    columns.
    """

    support: SupportSpace
    k: int
    A: sparse.csr_matrix
    b: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def to_full(self) -> sparse.csr_matrix:
        """Rows re-expressed in ``(u_1, ..., u_k)`` before substitution."""
        N, k = self.support.N, self.k
        rows, cols, vals = [], [], []
        r = 0
        for i in range(k):
            for m in range(N):
                for j in range(N):
                    if j == m:
                        continue
                    rows += [r, r]
                    cols += [i * N + j, i * N + m]
                    vals += [1.0, -1.0]
                    r += 1
        return sparse.csr_matrix((vals, (rows, cols)), shape=(r, k * N))


def build_ub0(support: SupportSpace, k: int) -> Ub0Program:
    if k < 2:
        raise ValidationError("k must be >= 2")
    N = support.N
    pc = pair_cost_matrix(support, k)
    n_var = (k - 1) * N
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for i in range(k):
        for m in range(N):
            for j in range(N):
                if j == m:
                    continue
                if i == 0:
                    for l in range(k - 1):
                        rows += [r, r]
                        cols += [l * N + j, l * N + m]
                        vals += [-1.0, 1.0]
                else:
                    rows += [r, r]
                    cols += [(i - 1) * N + j, (i - 1) * N + m]
                    vals += [1.0, -1.0]
                rhs.append(pc[m, j])
                r += 1
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(r, n_var))
    A.sum_duplicates()
    return Ub0Program(support, k, A, np.array(rhs))


class Ub0Solver:
    """Persistent LP for :class:`Ub0Program` values."""

    def __init__(self, support: SupportSpace, k: int):
        self.template = build_ub0(support, k)
        self.k, self.N = int(k), support.N
        lo, hi = _pins(self.k - 1, self.N)
        lo[0] = hi[0] = 0.0
        fam = MatrixFamily(self.template.A, self.template.b)
        self._rg = RowGenerationSolver(fam, np.arange(fam.size), sense="max", lower=lo, upper=hi)

    def value(self, G: np.ndarray, a) -> float:
        W = _objective(G, a)
        obj = (W[1:] - W[0]).reshape(-1)
        res = self._rg.solve(obj)
        if not res.ok:
            raise SolverFailure(f"UB0 program failed: {res.message}", res.stats())
        return max(res.value, 0.0)


def sample_ub0(mu1: Measure, a, k: int, rng: np.random.Generator,
               program: Ub0Solver | None = None) -> float:
    """One draw of ``UB0``; consumes the stream exactly like :func:`sample_x0`,
    so equal seeds give pathwise-coupled ``(X0, UB0)`` pairs."""
    program = program or Ub0Solver(mu1.support, k)
    return program.value(draw_null_directions(mu1, k, rng), a)


def nlb_sigma(u_star: np.ndarray, collection: MeasureCollection | np.ndarray, a) -> float:
    """Standard deviation of ``sum_i sqrt(a_i) <u_i*, G_i>`` with
    ``G_i ~ N(0, diag(mu_i) - mu_i mu_i')``."""
    W = collection.weights() if isinstance(collection, MeasureCollection) else np.asarray(collection)
    U = np.asarray(u_star, dtype=float).reshape(W.shape)
    var = (W * U**2).sum(axis=1) - (W * U).sum(axis=1) ** 2
    return float(np.sqrt(max(np.dot(np.asarray(a, dtype=float), var), 0.0)))


def nlb_value(u_star: np.ndarray, G: np.ndarray, a) -> float:
    """The fixed-dual objective ``sum_i sqrt(a_i) <u_i*, g_i>`` for one draw."""
    return float((_objective(G, a) * np.asarray(u_star).reshape(np.shape(G))).sum())


class AlternativeProgram:
    """``max sum_i sqrt(a_i) <u_i, g_i>`` over the dual optimal set of a fixed
    collection; Gaussian when that set is a single point up to shifts.

    With a materialized multicoupling the optimal face is cut out exactly by
    complementary slackness (tuple rows held at equality on the coupling's
    support). Without one, the face is approximated by
    ``<u, mu> = value - face_tol``.
    """

    def __init__(self, collection: MeasureCollection, solution: MotSolution,
                 support_tol: float = 1e-12, face_tol: float = 1e-9,
                 dense_limit: int = DENSE_LIMIT):
        support, k, N = collection.support, collection.k, collection.N
        self.k, self.N = k, N
        family = TupleFamily(support, k, cache_limit=dense_limit)
        lo, hi = _pins(k, N)
        init = np.union1d(diagonal_tuples(N, k), pair_tuples(N, k))
        if solution.coupling is not None:
            tight = np.flatnonzero(solution.coupling > support_tol)
            self._rg = RowGenerationSolver(family, init, sense="max", lower=lo, upper=hi,
                                           eq_family_rows=tight)
        else:
            mu = collection.weights().reshape(1, -1)
            self._rg = RowGenerationSolver(family, init, sense="max", lower=lo, upper=hi,
                                           A_eq=mu, b_eq=[solution.value - face_tol])

    def value(self, G: np.ndarray, a) -> float:
        res = self._rg.solve(_objective(G, a).reshape(-1))
        if not res.ok:
            raise SolverFailure(f"alternative limit program failed: {res.message}", res.stats())
        return float(res.value)
