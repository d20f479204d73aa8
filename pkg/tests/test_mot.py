import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from kmot.errors import BudgetExceeded, IndexOutOfRange, SupportMismatch
from kmot.measures import Measure, MeasureCollection, SupportSpace
from kmot.mot import (
    MarginalMatrix,
    MotSolver,
    TupleFamily,
    barycenter,
    build_cost_tensor,
    check_regularity,
    north_west_corner,
    normalize_dual,
    pair_cost,
    solve_mot,
    w2_squared,
)

from conftest import random_collection


def centroid_cost(points, tup):
    x = points[list(tup)]
    return float(((x - x.mean(axis=0)) ** 2).sum() / len(tup))


def brute_marginal_matrix(N, k):
    cols = list(itertools.product(range(N), repeat=k))
    A = np.zeros((k * N, len(cols)))
    for c, t in enumerate(cols):
        for i in range(k):
            A[i * N + t[i], c] = 1
    return A


def oracle_mot(coll):
    """Dense primal solved by scipy from independently built data."""
    k, N = coll.k, coll.N
    c = [centroid_cost(coll.support.points, t) for t in itertools.product(range(N), repeat=k)]
    res = linprog(c, A_eq=brute_marginal_matrix(N, k), b_eq=coll.weights().ravel(),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def test_cost_examples(line_support):
    c3 = build_cost_tensor(line_support, 3).reshape(2, 2, 2)
    assert c3[0, 0, 0] == 0
    assert c3[0, 0, 1] == pytest.approx(50 / 9, abs=1e-12)
    assert build_cost_tensor(line_support, 2).reshape(2, 2)[0, 1] == pytest.approx(6.25)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_cost_matches_centroid_formula(k):
    rng = np.random.default_rng(k)
    S = SupportSpace(rng.normal(size=(4, 3)))
    c = build_cost_tensor(S, k)
    brute = [centroid_cost(S.points, t) for t in itertools.product(range(4), repeat=k)]
    np.testing.assert_allclose(c, brute, atol=1e-12)


def test_cost_symmetry():
    rng = np.random.default_rng(0)
    S = SupportSpace(rng.normal(size=(3, 2)))
    c = build_cost_tensor(S, 4).reshape((3,) * 4)
    for perm in itertools.permutations(range(4)):
        np.testing.assert_allclose(c, c.transpose(perm), atol=1e-12)


def test_budget():
    S = SupportSpace(np.arange(10)[:, None])
    with pytest.raises(BudgetExceeded):
        build_cost_tensor(S, 4, max_entries=9999)
    with pytest.raises(BudgetExceeded):
        MotSolver(S, 4, max_tuples=9999)


def test_pair_cost(line_support):
    assert pair_cost(line_support, 3, 0, 0) == 0
    assert pair_cost(line_support, 3, 0, 1) == pytest.approx(50 / 9)
    assert pair_cost(line_support, 2, 0, 1) == pytest.approx(25 / 4)
    with pytest.raises(IndexOutOfRange):
        pair_cost(line_support, 2, 0, 2)


def test_marginal_matrix_small_example():
    expected = np.array([
        [1, 1, 1, 1, 0, 0, 0, 0],
        [0, 0, 0, 0, 1, 1, 1, 1],
        [1, 1, 0, 0, 1, 1, 0, 0],
        [0, 0, 1, 1, 0, 0, 1, 1],
        [1, 0, 1, 0, 1, 0, 1, 0],
        [0, 1, 0, 1, 0, 1, 0, 1],
    ])
    M = MarginalMatrix(2, 3)
    np.testing.assert_array_equal(M.toarray(), expected)
    for r in range(6):
        for col in range(8):
            assert M.contains(r, col) == bool(expected[r, col])


@pytest.mark.parametrize("N,k", [(2, 3), (3, 2), (3, 3), (2, 4)])
def test_marginal_matrix_counts(N, k):
    A = MarginalMatrix(N, k).toarray()
    np.testing.assert_array_equal(A, brute_marginal_matrix(N, k))
    assert np.all(A.sum(axis=0) == k)
    assert np.all(A.sum(axis=1) == N ** (k - 1))


def test_marginal_apply_and_adjoint():
    rng = np.random.default_rng(1)
    M = MarginalMatrix(3, 3)
    pi = rng.random(27)
    np.testing.assert_allclose(M.apply(pi).ravel(), M.toarray() @ pi)
    u = rng.normal(size=9)
    np.testing.assert_allclose(M.adjoint(u), M.toarray().T @ u)


def test_identical_measures_give_zero_and_diagonal_coupling(grid_support):
    w = np.random.default_rng(2).dirichlet(np.ones(12))
    coll = MeasureCollection((Measure(w, grid_support),) * 3)
    sol = solve_mot(coll)
    assert abs(sol.value) < 1e-12
    P = sol.coupling_tensor()
    np.testing.assert_allclose(np.einsum("iii->i", P), w, atol=1e-10)


def test_point_mass_examples(line_support):
    d5, d10 = Measure([1, 0], line_support), Measure([0, 1], line_support)
    assert solve_mot(MeasureCollection((d5, d10))).value == pytest.approx(6.25, abs=1e-12)
    assert solve_mot(MeasureCollection((d5, d5, d10))).value == pytest.approx(50 / 9, abs=1e-12)
    assert solve_mot(MeasureCollection((d5, d5, d10)), mode="lazy").value == pytest.approx(50 / 9, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_solution_certificates(seed):
    rng = np.random.default_rng(seed)
    k = 2 + seed % 3
    coll = random_collection(rng, 4, k)
    sol = solve_mot(coll)
    M = MarginalMatrix(coll.N, k)
    c = build_cost_tensor(coll.support, k)
    assert sol.coupling.min() >= -1e-10
    assert abs(sol.coupling.sum() - 1) < 1e-9
    np.testing.assert_allclose(M.apply(sol.coupling), coll.weights(), atol=1e-8)
    assert np.max(M.adjoint(sol.dual) - c) <= 1e-8
    assert sol.value == pytest.approx(float((sol.dual * coll.weights()).sum()), abs=1e-8)
    assert sol.value == pytest.approx(oracle_mot(coll), abs=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_lazy_matches_dense_and_oracle(seed):
    rng = np.random.default_rng(50 + seed)
    coll = random_collection(rng, int(rng.integers(2, 5)), int(rng.integers(2, 4)))
    dense, lazy = solve_mot(coll, mode="dense"), solve_mot(coll, mode="lazy")
    assert lazy.coupling is None and lazy.lazy
    assert lazy.value == pytest.approx(dense.value, abs=1e-8)
    M = MarginalMatrix(coll.N, coll.k)
    assert np.max(M.adjoint(lazy.dual) - build_cost_tensor(coll.support, coll.k)) <= 1e-8


def test_lazy_chunked_enumeration_matches():
    rng = np.random.default_rng(3)
    coll = random_collection(rng, 6, 4)
    ref = solve_mot(coll, mode="dense").value
    fam = TupleFamily(coll.support, 4, cache_limit=10)
    assert fam.cost is None
    solver = MotSolver(coll.support, 4, mode="lazy", dense_limit=10)
    assert solver.solve(coll.weights()).value == pytest.approx(ref, abs=1e-8)


def test_persistent_solver_reuse(grid_support):
    rng = np.random.default_rng(4)
    s_dense, s_lazy = MotSolver(grid_support, 3, "dense"), MotSolver(grid_support, 3, "lazy")
    for _ in range(5):
        W = rng.dirichlet(np.ones(12), size=3)
        assert s_dense.solve(W).value == pytest.approx(s_lazy.solve(W).value, abs=1e-8)


def test_w2_examples(line_support):
    a, b = Measure([0.5, 0.5], line_support), Measure([1, 0], line_support)
    assert w2_squared(a, a) == pytest.approx(0, abs=1e-12)
    assert w2_squared(Measure([1, 0], line_support), Measure([0, 1], line_support)) == pytest.approx(25)
    assert w2_squared(a, b) == pytest.approx(12.5, abs=1e-12)
    with pytest.raises(SupportMismatch):
        w2_squared(a, Measure([1, 0], SupportSpace([[0], [1]])))


def w2_1d(points, p, q):
    """Quantile coupling in one dimension."""
    order = np.argsort(points)
    x, p, q = points[order], p[order], q[order]
    grid = np.unique(np.concatenate([np.cumsum(p), np.cumsum(q), [0.0]]))
    grid = grid[grid <= 1]
    total = 0.0
    for lo, hi in zip(grid[:-1], grid[1:]):
        t = (lo + hi) / 2
        xi = x[min(np.searchsorted(np.cumsum(p), t), len(x) - 1)]
        yi = x[min(np.searchsorted(np.cumsum(q), t), len(x) - 1)]
        total += (hi - lo) * (xi - yi) ** 2
    return total


@pytest.mark.parametrize("seed", range(5))
def test_w2_matches_quantile_coupling_and_k2_reduction(seed):
    rng = np.random.default_rng(seed)
    pts = np.sort(rng.choice(50, size=5, replace=False)).astype(float)
    S = SupportSpace(pts[:, None])
    p, q = rng.dirichlet(np.ones(5), size=2)
    w2 = w2_squared(Measure(p, S), Measure(q, S))
    assert w2 == pytest.approx(w2_1d(pts, p, q), abs=1e-8)
    mot = solve_mot(MeasureCollection((Measure(p, S), Measure(q, S)))).value
    assert mot == pytest.approx(w2 / 4, abs=1e-8)


def test_normalize_dual_properties(line_support):
    rng = np.random.default_rng(5)
    M = MarginalMatrix(2, 3)
    c = build_cost_tensor(line_support, 3)
    W = rng.dirichlet(np.ones(2), size=3)
    for _ in range(20):
        # a random feasible dual: random point shifted into the polytope
        u = rng.normal(size=6)
        u[:2] -= max(0, np.max(M.adjoint(u) - c))
        v = normalize_dual(u.reshape(3, 2))
        assert np.all(v[1:, 0] == 0)
        assert np.max(M.adjoint(v) - c) <= 1e-8
        assert (v * W).sum() == pytest.approx((u.reshape(3, 2) * W).sum(), abs=1e-12)
    already = np.array([[1.0, 2.0], [0.0, -1.0], [0.0, 3.0]])
    np.testing.assert_array_equal(normalize_dual(already), already)


def test_normalize_dual_zero_sum_makes_u1_start_at_zero():
    u = np.array([[-3.0, 1.0], [1.0, 0.5], [2.0, -1.5]])
    v = normalize_dual(u)
    assert v[0, 0] == 0 and np.allclose(v.sum(axis=0), 0)


def test_regularity(line_support):
    S = SupportSpace([[0.0], [1.0], [3.0]])
    same = Measure([0.3, 0.3, 0.4], S)
    assert not check_regularity(MeasureCollection((same, same)))
    # literal check: maxima 0.4 < 0.8 and smallest of mu_1 (0.3) + largest of mu_2 (0.8) > 1
    ok = MeasureCollection((same, Measure([0.8, 0.1, 0.1], S)))
    assert check_regularity(ok)
    # partial-sum clause fails: 0.3 + 0.6 = 0.9 <= 1
    bad = MeasureCollection((same, Measure([0.6, 0.2, 0.2], S)))
    assert not check_regularity(bad)


def test_north_west_corner_supports_a_coupling():
    rng = np.random.default_rng(6)
    W = rng.dirichlet(np.ones(4), size=3)
    idx = north_west_corner(W)
    M = MarginalMatrix(4, 3).toarray()[:, idx]
    res = linprog(np.zeros(idx.size), A_eq=M, b_eq=W.ravel(), bounds=(0, None), method="highs")
    assert res.status == 0


def test_barycenter_of_two_point_masses(line_support):
    d5, d10 = Measure([1, 0], line_support), Measure([0, 1], line_support)
    sol = solve_mot(MeasureCollection((d5, d10)))
    pts, w = barycenter(sol, line_support)
    np.testing.assert_allclose(pts, [[7.5]])
    np.testing.assert_allclose(w, [1.0])
