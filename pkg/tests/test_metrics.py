import itertools

import numpy as np
import pytest

from gsfmix.core import MixingMeasure
from gsfmix.errors import DimensionMismatch, UnsupportedOrder
from gsfmix.metrics import aggregate_selection, optimal_transport, voronoi_assign, wasserstein


def random_measure(rng, K, d):
    return MixingMeasure(rng.normal(size=(K, d)) * 2, rng.dirichlet(np.ones(K)))


def basis_enumeration_cost(a, b, r):
    """Brute-force LP oracle: the optimum is attained at a basic feasible solution, i.e. a plan
    supported on K + L - 1 cells. Enumerate every such support and solve its square system."""
    K, L = a.K, b.K
    C = np.linalg.norm(a.atoms[:, None, :] - b.atoms[None, :, :], axis=-1) ** r
    rows = np.kron(np.eye(K), np.ones(L))
    cols = np.kron(np.ones(K), np.eye(L))
    A = np.vstack([rows, cols[:-1]])
    rhs = np.concatenate([a.weights, b.weights[:-1]])
    best = np.inf
    for support in itertools.combinations(range(K * L), K + L - 1):
        sub = A[:, support]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, rhs)
        if np.all(x >= -1e-12):
            best = min(best, float(C.ravel()[list(support)] @ x))
    return best


def quantile_w1(x, wx, y, wy):
    """W1 on the line as the integral of |F^-1 - G^-1| over u in (0, 1), by merging breakpoints."""
    ix, iy = np.argsort(x), np.argsort(y)
    x, wx, y, wy = x[ix], wx[ix], y[iy], wy[iy]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cuts = np.unique(np.concatenate([[0.0], cx, cy]))
    cuts = cuts[cuts <= 1.0]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        qx = x[min(np.searchsorted(cx, mid), len(x) - 1)]
        qy = y[min(np.searchsorted(cy, mid), len(y) - 1)]
        total += (hi - lo) * abs(qx - qy)
    return total


class TestWasserstein:
    def test_identical(self):
        m = MixingMeasure([[0.0, 1.0], [2.0, 2.0]], [0.3, 0.7])
        assert wasserstein(m, m, 1) == pytest.approx(0.0, abs=1e-12)

    def test_point_masses(self):
        assert wasserstein(MixingMeasure([[0.0]], [1.0]), MixingMeasure([[3.0]], [1.0]), 1) == pytest.approx(3.0)

    def test_two_to_one(self):
        a = MixingMeasure([[0.0], [2.0]], [0.5, 0.5])
        assert wasserstein(a, MixingMeasure([[1.0]], [1.0]), 2) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(12))
    @pytest.mark.parametrize("r", [1, 2])
    def test_dense_lp_oracle(self, seed, r):
        rng = np.random.default_rng(seed)
        a, b = random_measure(rng, 4, 2), random_measure(rng, 4, 2)
        assert optimal_transport(a, b, r).cost == pytest.approx(basis_enumeration_cost(a, b, r), abs=1e-8)

    @pytest.mark.parametrize("seed", range(12))
    def test_rectangular_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        a, b = random_measure(rng, 3, 3), random_measure(rng, 5, 3)
        assert optimal_transport(a, b, 1).cost == pytest.approx(basis_enumeration_cost(a, b, 1), abs=1e-8)

    @pytest.mark.parametrize("seed", range(25))
    def test_quantile_oracle(self, seed):
        rng = np.random.default_rng(seed)
        K, L = rng.integers(1, 8), rng.integers(1, 8)
        a, b = random_measure(rng, K, 1), random_measure(rng, L, 1)
        expected = quantile_w1(a.atoms[:, 0], a.weights, b.atoms[:, 0], b.weights)
        assert wasserstein(a, b, 1) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("seed", range(15))
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_measure(rng, rng.integers(1, 6), 2) for _ in range(3))
        for r in (1, 2):
            ab, ba = wasserstein(a, b, r), wasserstein(b, a, r)
            assert ab >= 0 and ab == pytest.approx(ba, abs=1e-12)
            assert ab <= wasserstein(a, c, r) + wasserstein(c, b, r) + 1e-8

    def test_plan_marginals(self):
        rng = np.random.default_rng(3)
        a, b = random_measure(rng, 5, 2), random_measure(rng, 3, 2)
        q = optimal_transport(a, b, 2).q
        assert np.all(q >= 0)
        np.testing.assert_allclose(q.sum(axis=1), a.weights, atol=1e-9)
        np.testing.assert_allclose(q.sum(axis=0), b.weights, atol=1e-9)

    def test_errors(self):
        a = MixingMeasure([[0.0]], [1.0])
        with pytest.raises(UnsupportedOrder):
            wasserstein(a, a, 3)
        with pytest.raises(DimensionMismatch):
            wasserstein(a, MixingMeasure([[0.0, 1.0]], [1.0]), 1)


class TestVoronoi:
    def test_self(self):
        true = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 0.0]])
        cells = voronoi_assign(true, true)
        assert [list(c) for c in cells] == [[0], [1], [2]]

    def test_hand_example(self):
        cells = voronoi_assign([[1.0], [2.0], [9.0]], [[0.0], [10.0]])
        assert [list(c) for c in cells] == [[0, 1], [2]]

    def test_single_true_atom(self):
        cells = voronoi_assign(np.random.default_rng(0).normal(size=(6, 2)), [[0.0, 0.0]])
        assert list(cells[0]) == list(range(6))

    def test_tie_goes_to_first(self):
        cells = voronoi_assign([[0.5]], [[0.0], [1.0]])
        assert list(cells[0]) == [0] and list(cells[1]) == []


class TestAggregate:
    def test_all_correct(self):
        out = aggregate_selection([("bic", 2)] * 5, 2)
        assert out["bic"].correct == 1.0 and out["bic"].total == 5

    def test_three_of_four(self):
        out = aggregate_selection([("gsf", 2), ("gsf", 2), ("gsf", 3), ("gsf", 2)], 2)
        assert out["gsf"].correct == 0.75 and out["gsf"].counts == {2: 3, 3: 1}

    def test_per_method(self):
        out = aggregate_selection([("a", 1), ("b", 2), ("a", 2), ("b", 2)], 2)
        assert out["a"].correct == 0.5 and out["b"].correct == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_selection([], 2)
