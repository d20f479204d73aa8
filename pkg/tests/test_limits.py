import itertools
import math

import numpy as np
import pytest
from scipy import sparse, stats

from kmot.limits import (
    AlternativeProgram,
    NullProgram,
    Ub0Solver,
    build_ub0,
    draw_alternative_directions,
    draw_null_directions,
    nlb_sigma,
    nlb_value,
    rate,
    sample_ub0,
    sample_x0,
)
from kmot.lp import LinearProgram, solve_dense
from kmot.measures import Measure, MeasureCollection, SupportSpace, replicate_rng
from kmot.mot import MarginalMatrix, build_cost_tensor, check_regularity, solve_mot


def test_rate_examples():
    assert rate((100, 100)).rho == pytest.approx(math.sqrt(50), rel=1e-12)
    assert rate((100, 100)).rho == pytest.approx(math.sqrt(100 * 100 / 200), rel=1e-12)
    assert rate((90, 90, 90)).rho == pytest.approx(math.sqrt(10), rel=1e-12)
    r = rate((100, 300))
    np.testing.assert_allclose(r.lam, [0.25, 0.75])
    np.testing.assert_allclose(r.a, [0.75, 0.25])


@pytest.mark.parametrize("n,k", [(7, 2), (40, 3), (500, 4)])
def test_rate_equal_sizes(n, k):
    assert rate([n] * k).rho == pytest.approx(math.sqrt(n / k ** (k - 1)), rel=1e-12)


def dense_null_value(support, k, W):
    """Null limit program written out in full and solved with all rows."""
    N = support.N
    A = MarginalMatrix(N, k).toarray().T
    eq = np.hstack([np.eye(N)] * k)
    lo, hi = np.full(k * N, -np.inf), np.full(k * N, np.inf)
    lo[N::N] = hi[N::N] = 0
    res = solve_dense(LinearProgram(W.ravel(), A_ub=A, b_ub=build_cost_tensor(support, k),
                                    A_eq=eq, b_eq=np.zeros(N), lower=lo, upper=hi, sense="max"))
    return res.raise_for_status().value


def test_null_program_two_point_example(line_support):
    G = np.array([[0.3, -0.3], [-0.1, 0.1]])
    for mode in ("lazy", "dense"):
        v = NullProgram(line_support, 2, mode).value(G, [0.5, 0.5])
        assert v == pytest.approx(1.7677669529663689, abs=1e-8)
        assert v == pytest.approx(6.25 * 0.4 * math.sqrt(0.5), abs=1e-12)


def test_null_program_closed_form_two_points(line_support):
    rng = np.random.default_rng(0)
    mu = Measure([0.35, 0.65], line_support)
    a = rate((30, 70)).a
    prog = NullProgram(line_support, 2)
    for _ in range(100):
        G = draw_null_directions(mu, 2, rng)
        h = math.sqrt(a[0]) * G[0] - math.sqrt(a[1]) * G[1]
        assert prog.value(G, a) == pytest.approx(6.25 * abs(h[0]), abs=1e-8)


@pytest.mark.parametrize("k,N", [(2, 4), (3, 3), (3, 4), (4, 3)])
def test_null_lazy_matches_dense(k, N):
    rng = np.random.default_rng(10 * k + N)
    S = SupportSpace(rng.normal(size=(N, 2)))
    mu = Measure(rng.dirichlet(np.ones(N)), S)
    lazy = NullProgram(S, k, "lazy")
    a = rate(rng.integers(10, 100, size=k)).a
    for _ in range(25):
        G = draw_null_directions(mu, k, rng)
        W = np.sqrt(a)[:, None] * G
        v = lazy.value(G, a)
        assert v >= 0
        assert v == pytest.approx(dense_null_value(S, k, W), abs=1e-8)


def test_point_mass_gives_zero(line_support):
    mu = Measure([1, 0], line_support)
    rng = np.random.default_rng(1)
    for k in (2, 3):
        assert sample_x0(mu, [1 / k] * k, k, rng) == 0
        assert sample_ub0(mu, [1 / k] * k, k, rng) == 0


def test_ub0_shapes(line_support):
    assert build_ub0(line_support, 3).shape == (6, 4)
    S = SupportSpace(np.arange(5)[:, None])
    for k in (2, 3, 4):
        assert build_ub0(S, k).shape == (k * 5 * 4, (k - 1) * 5)


def test_ub0_rows_are_implied_by_null_constraints():
    rng = np.random.default_rng(2)
    S = SupportSpace(rng.normal(size=(3, 2)))
    k, N = 3, 3
    A = MarginalMatrix(N, k).toarray().T
    c = build_cost_tensor(S, k)
    eq = np.hstack([np.eye(N)] * k)
    full = build_ub0(S, k).to_full().toarray()
    rhs = build_ub0(S, k).b
    # each UB0 row, as a maximization over the null polytope, cannot exceed its rhs
    for row, b in zip(full, rhs):
        res = solve_dense(LinearProgram(row, A_ub=A, b_ub=c, A_eq=eq, b_eq=np.zeros(N),
                                        lower=-1e3, upper=1e3, sense="max"))
        assert res.value <= b + 1e-9
        # and the row is exactly a tuple row with sum u = 0 substituted
        i = int(np.flatnonzero(row > 0)[0]) // N
        j = int(np.flatnonzero(row > 0)[0]) % N
        m = int(np.flatnonzero(row < 0)[0]) % N
        t = [m] * k
        t[i] = j
        col = np.ravel_multi_index(t, (N,) * k)
        assert c[col] == pytest.approx(b)
        # tuple row minus the equality row for entry m
        np.testing.assert_allclose(A[col] - eq[m], row)


def test_ub0_substitution_matches_full_form():
    rng = np.random.default_rng(3)
    S = SupportSpace(rng.normal(size=(4, 1)))
    prog = build_ub0(S, 3)
    v = rng.normal(size=8)
    u = np.concatenate([-v.reshape(2, 4).sum(axis=0), v])
    np.testing.assert_allclose(prog.A @ v, prog.to_full() @ u)


@pytest.mark.parametrize("N", [2, 3])
def test_ub0_dominates_and_is_tight_for_two_measures(N):
    rng = np.random.default_rng(N)
    S = SupportSpace(rng.normal(size=(N, 2)))
    mu = Measure(rng.dirichlet(np.ones(N)), S)
    for k in (2, 3):
        x0, ub = NullProgram(S, k), Ub0Solver(S, k)
        a = rate([50] * k).a
        for r in range(100):
            G = draw_null_directions(mu, k, replicate_rng(0, "derivative", r))
            x, u = x0.value(G, a), ub.value(G, a)
            assert u >= x - 1e-8
            if k == 2:
                assert u == pytest.approx(x, abs=1e-8)


def test_coupled_sampling_shares_draws(grid_support):
    mu = Measure(np.full(12, 1 / 12), grid_support)
    a = rate([10, 10, 10]).a
    x = sample_x0(mu, a, 3, replicate_rng(5, "derivative", 0))
    u = sample_ub0(mu, a, 3, replicate_rng(5, "derivative", 0))
    assert u >= x - 1e-8


def test_x0_scales_with_squared_coordinates():
    rng = np.random.default_rng(4)
    S = SupportSpace(rng.normal(size=(4, 2)))
    mu = Measure(rng.dirichlet(np.ones(4)), S)
    a = rate([40, 60, 80]).a
    p1, p2 = NullProgram(S, 3), NullProgram(S.scaled(3.0), 3)
    for _ in range(20):
        G = draw_null_directions(mu, 3, rng)
        assert p2.value(G, a) == pytest.approx(9 * p1.value(G, a), rel=1e-9, abs=1e-10)


def test_nlb_sigma_examples(line_support):
    assert nlb_sigma(np.zeros((2, 2)), np.array([[0.5, 0.5], [1, 0]]), [0.5, 0.5]) == 0
    coll = MeasureCollection((Measure([0.5, 0.5], line_support), Measure([1, 0], line_support)))
    u = solve_mot(coll).dual
    a = np.array([0.5, 0.5])
    # expand u' (diag(w) - w w') u by hand
    var = 0.0
    for i, w in enumerate(coll.weights()):
        S = [[w[0] - w[0] ** 2, -w[0] * w[1]], [-w[0] * w[1], w[1] - w[1] ** 2]]
        var += a[i] * sum(u[i][p] * S[p][q] * u[i][q] for p in range(2) for q in range(2))
    assert nlb_sigma(u, coll, a) == pytest.approx(math.sqrt(var), abs=1e-10)


def test_fixed_dual_below_alternative_program():
    rng = np.random.default_rng(6)
    S = SupportSpace(rng.normal(size=(4, 2)))
    W = rng.dirichlet(np.ones(4), size=3)
    W[2] = W[1]  # repeated measure: degenerate, non-singleton dual set
    coll = MeasureCollection(tuple(Measure(w, S) for w in W))
    sol = solve_mot(coll)
    prog = AlternativeProgram(coll, sol)
    a = rate([100, 200, 300]).a
    for _ in range(100):
        G = draw_alternative_directions(coll, rng)
        assert nlb_value(sol.dual, G, a) <= prog.value(G, a) + 1e-8


def test_alternative_program_lazy_face_close_to_exact():
    rng = np.random.default_rng(7)
    S = SupportSpace(rng.normal(size=(3, 1)))
    coll = MeasureCollection(tuple(Measure(w, S) for w in rng.dirichlet(np.ones(3), size=3)))
    exact = AlternativeProgram(coll, solve_mot(coll, mode="dense"))
    approx = AlternativeProgram(coll, solve_mot(coll, mode="lazy"))
    a = rate([10, 10, 10]).a
    for _ in range(30):
        G = draw_alternative_directions(coll, rng)
        assert approx.value(G, a) == pytest.approx(exact.value(G, a), abs=1e-6)


def test_alternative_program_gaussian_under_regularity():
    S = SupportSpace([[0.0], [1.0], [3.0]])
    coll = MeasureCollection((Measure([0.3, 0.3, 0.4], S), Measure([0.8, 0.1, 0.1], S)))
    assert check_regularity(coll)
    sol = solve_mot(coll)
    a = rate([400, 600]).a
    sigma = nlb_sigma(sol.dual, coll, a)
    prog = AlternativeProgram(coll, sol)
    rng = np.random.default_rng(8)
    vals = np.array([prog.value(draw_alternative_directions(coll, rng), a) for _ in range(500)])
    assert stats.kstest(vals / sigma, "norm").pvalue > 0.01
