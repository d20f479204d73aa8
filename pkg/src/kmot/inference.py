"""Tests of equality of k distributions and confidence regions for the MOT value.

Null samples come from four sources: the derivative bootstrap (plug-in
Gaussian directions fed to the null limit program), the m-out-of-n
bootstrap, the ``UB0`` relaxation, and label permutations.

Replicates are processed in fixed chunks of ``BootstrapConfig.chunk_size``.
Each chunk owns one persistent LP and each replicate draws from its own
stream (:func:`~kmot.measures.replicate_rng`), so results do not depend on
the number of worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.stats import norm

from .errors import (
    DivisibilityViolation,
    InvalidSize,
    SolverFailure,
    UnboundedEntry,
    ValidationError,
)
from .limits import NullProgram, Ub0Solver, draw_null_directions, rate
from .lp import LinearProgram, Status, solve_dense
from .measures import (
    Measure,
    MeasureCollection,
    SupportSpace,
    multinomial_resample,
    replicate_rng,
)
from .mot import (
    DENSE_LIMIT,
    MarginalMatrix,
    MotSolver,
    build_cost_tensor,
    w2_squared,
)

METHODS = ("derivative", "mn", "ub0", "permutation")
QUANTILE_METHOD = "inverted_cdf"
TIE_TOL = 1e-10


@dataclass(frozen=True)
class BootstrapConfig:
    """Replicate settings shared by all resampling schemes.

    Parameters
    ----------
    B : int
        Number of replicates (or permutations).
    p : float
        Subsample exponent of the m-out-of-n bootstrap, ``m_i = floor(n_i^p)``.
    seed : int
        Master seed; every replicate stream is derived from it.
    coupled : bool
        Let ``UB0`` draws reuse the derivative-bootstrap streams, so the two
        samples are pathwise comparable.
    pool_all : bool
        Estimate the null covariance from all groups pooled instead of the
        first group only.
    jobs : int
        Worker processes; never changes results.
    chunk_size : int
        Replicates per persistent LP; part of the reproducibility contract.
    mode : str
        ``"auto"``, ``"dense"`` or ``"lazy"`` for MOT solves.
    dense_limit : int
        Largest ``N^k`` solved densely in ``"auto"`` mode.
    """

    B: int = 500
    p: float = 0.5
    seed: int = 0
    coupled: bool = False
    pool_all: bool = False
    jobs: int = 1
    chunk_size: int = 64
    mode: str = "auto"
    dense_limit: int = DENSE_LIMIT

    def __post_init__(self):
        if int(self.B) < 1:
            raise InvalidSize(f"replicates must be >= 1, got {self.B}")
        if not 0 < self.p < 1:
            raise ValidationError(f"subsample exponent must lie in (0, 1), got {self.p}")
        if int(self.jobs) < 1 or int(self.chunk_size) < 1:
            raise ValidationError("jobs and chunk_size must be positive")


@dataclass
class ReplicateSample:
    """Replicate values in replicate order; failed replicates are NaN."""

    values: np.ndarray
    failures: int = 0

    @property
    def finite(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]

    def quantile(self, q):
        v = self.finite
        if v.size == 0:
            raise SolverFailure("every replicate failed", {"failures": self.failures})
        return np.quantile(v, q, method=QUANTILE_METHOD)


@dataclass
class TestResult:
    statistic: float
    cutoff: float
    alpha: float
    decision: str
    p_value: float
    method: str
    replicate_values: np.ndarray
    mot_value: float
    rho: float
    failures: int = 0
    solver_stats: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    @property
    def reject(self) -> bool:
        return self.decision == "reject"


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    convention: str
    mot_value: float
    rho: float
    q_low: float
    q_high: float
    replicate_values: np.ndarray
    failures: int = 0


@dataclass(frozen=True)
class PowerCurvePoint:
    n: int
    delta: float
    bound: float


def empirical_quantile(values, q) -> float:
    return float(np.quantile(np.asarray(values, dtype=float), q, method=QUANTILE_METHOD))


def _chunk_map(worker, B: int, cfg: BootstrapConfig, args: tuple) -> ReplicateSample:
    bounds = [(s, min(s + cfg.chunk_size, B)) for s in range(0, B, cfg.chunk_size)]
    if cfg.jobs > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(bounds))) as ex:
            parts = list(ex.map(worker, *zip(*[(s, e, *args) for s, e in bounds])))
    else:
        parts = [worker(s, e, *args) for s, e in bounds]
    values = np.concatenate(parts) if parts else np.zeros(0)
    return ReplicateSample(values, int(np.count_nonzero(~np.isfinite(values))))


def _null_measure(data: MeasureCollection, pool_all: bool) -> Measure:
    if not pool_all:
        mu = data[0]
        return mu if mu.sample_size is not None else Measure(mu.weights, mu.support, data.sizes[0])
    n = np.array(data.sizes, dtype=float)
    w = (n[:, None] * data.weights()).sum(axis=0) / n.sum()
    return Measure(w / w.sum(), data.support, int(n.sum()))


def _null_worker(start, stop, kind, mu1, k, a, resample, seed, tag):
    program = NullProgram(mu1.support, k) if kind == "x0" else Ub0Solver(mu1.support, k)
    out = np.empty(stop - start)
    for r, b in enumerate(range(start, stop)):
        rng = replicate_rng(seed, tag, b)
        mu = multinomial_resample(mu1, resample, rng) if resample else mu1
        G = draw_null_directions(mu, k, rng)
        try:
            out[r] = program.value(G, a)
        except SolverFailure:
            out[r] = np.nan
    return out


def derivative_bootstrap_null(data: MeasureCollection, cfg: BootstrapConfig) -> ReplicateSample:
    """Plug-in draws of the null limit.

    Each replicate resamples the null measure at its sample size, draws ``k``
    Gaussian directions from the resampled covariance and solves the null
    limit program with weights estimated from the sample sizes.
    """
    mu1 = _null_measure(data, cfg.pool_all)
    a = rate(data.sizes).a
    args = ("x0", mu1, data.k, a, mu1.sample_size, cfg.seed, "derivative")
    return _chunk_map(_null_worker, cfg.B, cfg, args)


def ub0_null(data: MeasureCollection, cfg: BootstrapConfig) -> ReplicateSample:
    """Draws of the ``UB0`` upper bound, resampled like the derivative bootstrap.

    With ``cfg.coupled`` the streams coincide with
    :func:`derivative_bootstrap_null`, so value ``b`` of both samples comes
    from the same directions.
    """
    mu1 = _null_measure(data, cfg.pool_all)
    a = rate(data.sizes).a
    tag = "derivative" if cfg.coupled else "ub0"
    args = ("ub0", mu1, data.k, a, mu1.sample_size, cfg.seed, tag)
    return _chunk_map(_null_worker, cfg.B, cfg, args)


def limit_null_sample(mu1: Measure, sizes, cfg: BootstrapConfig, kind: str = "x0") -> ReplicateSample:
    """Draws of ``X0`` (or ``UB0``) from a known measure, without resampling."""
    args = (kind, mu1, len(sizes), rate(sizes).a, None, cfg.seed, "truth")
    return _chunk_map(_null_worker, cfg.B, cfg, args)


def subsample_sizes(n, p: float) -> tuple[int, ...]:
    m = tuple(int(math.floor(v**p + 1e-9)) for v in n)
    if min(m) < 1:
        raise InvalidSize(f"subsample sizes {m} must be positive")
    return m


def _mn_worker(start, stop, W, support, m, rho_m, center, seed, mode, dense_limit):
    k = W.shape[0]
    solver = MotSolver(support, k, mode, dense_limit)
    out = np.empty(stop - start)
    for r, b in enumerate(range(start, stop)):
        rng = replicate_rng(seed, "mn", b)
        Ws = np.stack([rng.multinomial(m[i], W[i]) / m[i] for i in range(k)])
        try:
            out[r] = rho_m * (solver.solve(Ws).value - center)
        except SolverFailure:
            out[r] = np.nan
    return out


def mn_bootstrap(data: MeasureCollection, cfg: BootstrapConfig, hypothesis: str = "H0",
                 mot_hat: float | None = None) -> ReplicateSample:
    """m-out-of-n bootstrap with ``m_i = floor(n_i^p)``.

    Under ``"H0"`` every group is resampled from the null measure and the
    value is ``rho_m * MOT*``. Under ``"Ha"`` group ``i`` is resampled from
    its own empirical measure and the value is ``rho_m * (MOT* - MOT_hat)``.
    """
    if hypothesis not in ("H0", "Ha"):
        raise ValidationError(f"hypothesis must be 'H0' or 'Ha', got {hypothesis!r}")
    m = subsample_sizes(data.sizes, cfg.p)
    rho_m = rate(m).rho
    if hypothesis == "H0":
        w1 = _null_measure(data, cfg.pool_all).weights
        W = np.repeat(w1[None, :], data.k, axis=0)
        center = 0.0
    else:
        W = data.weights()
        if mot_hat is None:
            mot_hat = MotSolver(data.support, data.k, cfg.mode, cfg.dense_limit).solve(W).value
        center = mot_hat
    args = (W, data.support, m, rho_m, center, cfg.seed, cfg.mode, cfg.dense_limit)
    return _chunk_map(_mn_worker, cfg.B, cfg, args)


def _perm_worker(start, stop, pooled, sizes, support, seed, mode, dense_limit):
    k, N = len(sizes), support.N
    cuts = np.cumsum(sizes)[:-1]
    solver = MotSolver(support, k, mode, dense_limit)
    out = np.empty(stop - start)
    for r, b in enumerate(range(start, stop)):
        rng = replicate_rng(seed, "permutation", b)
        groups = np.split(rng.permutation(pooled), cuts)
        W = np.stack([np.bincount(g, minlength=N) / g.size for g in groups])
        try:
            out[r] = solver.solve(W).value
        except SolverFailure:
            out[r] = np.nan
    return out


def permutation_test(groups, support: SupportSpace, R: int, alpha: float = 0.05,
                     cfg: BootstrapConfig | None = None) -> TestResult:
    """Permutation test on raw observations.

    Parameters
    ----------
    groups : sequence of integer arrays
        Support indices of the observations in each group.
    support : SupportSpace
    R : int
        Number of random relabelings, at least 1.

    The p-value is ``(1 + #{r : MOT_r >= MOT_obs}) / (1 + R)``, with ties
    judged up to ``TIE_TOL``; reject iff it is at most ``alpha``.
    """
    _check_alpha(alpha)
    if int(R) < 1:
        raise InvalidSize(f"need at least one permutation, got R = {R}")
    cfg = replace(cfg or BootstrapConfig(), B=int(R))
    groups = [np.asarray(g, dtype=np.int64) for g in groups]
    if len(groups) < 2:
        raise ValidationError("need k >= 2 groups")
    sizes = [g.size for g in groups]
    if min(sizes) < 1:
        raise InvalidSize("every group needs at least one observation")
    data = MeasureCollection(tuple(
        Measure.from_counts(np.bincount(g, minlength=support.N), support) for g in groups
    ))
    solver = MotSolver(support, data.k, cfg.mode, cfg.dense_limit)
    sol = solver.solve(data.weights())
    pooled = np.concatenate(groups)
    sample = _chunk_map(_perm_worker, int(R), cfg,
                        (pooled, sizes, support, cfg.seed, cfg.mode, cfg.dense_limit))
    vals = sample.finite
    exceed = int(np.count_nonzero(vals >= sol.value - TIE_TOL))
    p_value = (1 + exceed) / (1 + vals.size)
    rho = rate(sizes).rho
    scaled = rho * sample.values
    return TestResult(
        statistic=rho * sol.value,
        cutoff=float(rho * sample.quantile(1 - alpha)),
        alpha=alpha,
        decision="reject" if p_value <= alpha else "retain",
        p_value=p_value,
        method="permutation",
        replicate_values=scaled,
        mot_value=sol.value,
        rho=rho,
        failures=sample.failures,
        solver_stats=sol.solver_stats,
    )


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")


def test_h0(data: MeasureCollection, alpha: float = 0.05, method: str = "derivative",
            cfg: BootstrapConfig | None = None, groups=None) -> TestResult:
    """Test equality of the ``k`` distributions behind ``data``.

    The statistic is ``rho_n * MOT(mu_hat)``. For the asymptotic methods the
    cutoff is the ``1 - alpha`` quantile of the null sample and ``H0`` is
    rejected iff the statistic is at least the cutoff and positive (a zero
    statistic never rejects). ``groups`` (raw support indices) is required
    for ``method="permutation"``.
    """
    _check_alpha(alpha)
    cfg = cfg or BootstrapConfig()
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "permutation":
        if groups is None:
            raise ValidationError("the permutation test needs raw observations")
        return permutation_test(groups, data.support, cfg.B, alpha, cfg)
    r = rate(data.sizes)
    sol = MotSolver(data.support, data.k, cfg.mode, cfg.dense_limit).solve(data.weights())
    statistic = r.rho * sol.value
    if method == "derivative":
        sample = derivative_bootstrap_null(data, cfg)
    elif method == "ub0":
        sample = ub0_null(data, cfg)
    else:
        sample = mn_bootstrap(data, cfg, "H0")
    cutoff = float(sample.quantile(1 - alpha))
    vals = sample.finite
    p_value = float(np.count_nonzero(vals >= statistic)) / vals.size
    reject = statistic >= cutoff and statistic > TIE_TOL
    return TestResult(
        statistic=statistic, cutoff=cutoff, alpha=alpha,
        decision="reject" if reject else "retain", p_value=p_value, method=method,
        replicate_values=sample.values, mot_value=sol.value, rho=r.rho,
        failures=sample.failures, solver_stats=sol.solver_stats,
    )


test_h0.__test__ = False


def confidence_region(data: MeasureCollection, alpha: float = 0.05,
                      cfg: BootstrapConfig | None = None, mode: str = "standard") -> ConfidenceInterval:
    """Confidence interval for ``MOT(mu)`` from Ha m-out-of-n bootstrap draws.

    ``mode="standard"``: ``[M - q_hi / rho_n, M - q_lo / rho_n]`` clipped at 0.
    ``mode="literal"``: ``(M / rho_n - q_hi, M / rho_n - q_lo)``, unclipped.
    Here ``M = MOT(mu_hat)`` and ``q_lo, q_hi`` are the ``alpha/2`` and
    ``1 - alpha/2`` quantiles of the draws.
    """
    _check_alpha(alpha)
    if mode not in ("standard", "literal"):
        raise ValidationError(f"unknown confidence-region mode {mode!r}")
    cfg = cfg or BootstrapConfig()
    rho = rate(data.sizes).rho
    M = MotSolver(data.support, data.k, cfg.mode, cfg.dense_limit).solve(data.weights()).value
    sample = mn_bootstrap(data, cfg, "Ha", mot_hat=M)
    q_lo, q_hi = (float(v) for v in sample.quantile([alpha / 2, 1 - alpha / 2]))
    if mode == "standard":
        lower, upper = max(M - q_hi / rho, 0.0), max(M - q_lo / rho, 0.0)
    else:
        lower, upper = M / rho - q_hi, M / rho - q_lo
    return ConfidenceInterval(lower, upper, 1 - alpha, mode, M, rho, q_lo, q_hi,
                              sample.values, sample.failures)


def metric_constant(support: SupportSpace) -> float:
    """``C(X)``: Euclidean norm of ``(||x_1 - x_j||^2)_j``."""
    return float(np.linalg.norm(support.sq_dists[0]))


def cutoff_bound(alpha: float, k: int, a, support: SupportSpace) -> float:
    """Universal upper bound on the ``1 - alpha`` quantile of the null limit:
    ``sum_i sqrt(a_i) * (k-1)/k^2 * C(X) * sqrt(-8 ln(alpha/4))``."""
    _check_alpha(alpha)
    a = np.asarray(a, dtype=float)
    if a.shape != (k,):
        raise ValidationError("need one weight per measure")
    t = math.sqrt(-8.0 * math.log(alpha / 4.0))
    return float(np.sqrt(a).sum() * (k - 1) / k**2 * metric_constant(support) * t)


def dual_range_entries(support: SupportSpace, k: int = 2) -> np.ndarray:
    """Per-entry ``max |u_1[j]|`` over ``{sum_i u_i = 0, A'u <= c}`` with the
    first entries of ``u_2, ..., u_k`` pinned to 0.

    Each entry is found from two dense LPs (maximize and minimize).
    """
    N = support.N
    c = build_cost_tensor(support, k)
    A = MarginalMatrix(N, k).to_sparse().T.tocsr()
    A_eq = sparse.hstack([sparse.identity(N)] * k, format="csr")
    lo, hi = np.full(k * N, -np.inf), np.full(k * N, np.inf)
    lo[N::N] = hi[N::N] = 0.0
    out = np.zeros(N)
    for j in range(N):
        e = np.zeros(k * N)
        e[j] = 1.0
        ext = []
        for sense in ("max", "min"):
            res = solve_dense(LinearProgram(e, A_ub=A, b_ub=c, A_eq=A_eq, b_eq=np.zeros(N),
                                            lower=lo, upper=hi, sense=sense))
            if res.status is Status.UNBOUNDED:
                raise UnboundedEntry(f"entry {j} of u_1 is unbounded", res.stats())
            res.raise_for_status()
            ext.append(abs(res.value))
        out[j] = max(ext)
    return out


def dual_range(support: SupportSpace, k: int = 2) -> float:
    """``C~(X)``: Euclidean norm of :func:`dual_range_entries`."""
    return float(np.linalg.norm(dual_range_entries(support, k)))


def power_lower_bound(c_tilde: float, n: float, delta: float, alpha: float = 0.05) -> float:
    """``1 - Phi((4 C~ sqrt(-ln(alpha/4)) - sqrt(n/2) delta) / C~)``."""
    _check_alpha(alpha)
    if c_tilde <= 0:
        raise ValidationError("the dual-range constant must be positive")
    if n < 1 or delta < 0:
        raise ValidationError("need n >= 1 and delta >= 0")
    arg = (4.0 * c_tilde * math.sqrt(-math.log(alpha / 4.0)) - math.sqrt(n / 2.0) * delta) / c_tilde
    return float(norm.sf(arg))


def power_curve(c_tilde: float, ns, deltas, alpha: float = 0.05) -> list[PowerCurvePoint]:
    return [PowerCurvePoint(int(n), float(d), power_lower_bound(c_tilde, n, d, alpha))
            for d in deltas for n in ns]


def reference_mot(family: str, measures, k: int) -> float:
    """Closed-form MOT values for structured alternatives.

    ``family="clustered"``: ``measures`` holds one representative per
    cluster (``C = len(measures)``, ``C`` must divide ``k``); the value is
    the ``C``-marginal MOT of the representatives, ``W2^2 / 4`` for ``C = 2``.
    ``family="sparse"``: ``measures = (mu_a, mu_b)`` with ``k-1`` copies of
    ``mu_a``; the value is ``(k-1)/k^2 * W2^2(mu_a, mu_b)``.
    """
    measures = list(measures)
    if family == "sparse":
        if len(measures) != 2:
            raise ValidationError("the sparse family takes exactly two measures")
        if k < 2:
            raise ValidationError("k must be >= 2")
        return (k - 1) / k**2 * w2_squared(measures[0], measures[1])
    if family == "clustered":
        C = len(measures)
        if C < 1 or k % C:
            raise DivisibilityViolation(f"{C} clusters do not divide k = {k}")
        if C == 1:
            return 0.0
        if C == 2:
            return 0.25 * w2_squared(measures[0], measures[1])
        from .mot import solve_mot
        return solve_mot(MeasureCollection(tuple(measures))).value
    raise ValidationError(f"unknown family {family!r}")
