import itertools

import numpy as np
import pytest

from gsfmix.core import (Dataset, MixingMeasure, PathRecord, RegularizationPath, as_measure, effective_order,
                         fuse_labels, read_path_csv)
from gsfmix.errors import DimensionMismatch, InvalidObservation, NegativeWeight, WeightSumError


def closure_classes(atoms, tol):
    """Independent transitive-closure oracle: BFS over the 'within tol' graph."""
    atoms = np.atleast_2d(atoms)
    K = len(atoms)
    seen, classes = set(), 0
    for s in range(K):
        if s in seen:
            continue
        classes += 1
        stack = [s]
        seen.add(s)
        while stack:
            i = stack.pop()
            for j in range(K):
                if j not in seen and np.linalg.norm(atoms[i] - atoms[j]) <= tol:
                    seen.add(j)
                    stack.append(j)
    return classes


class TestMixingMeasure:
    def test_valid_measure(self):
        m = MixingMeasure([[0], [1]], [0.5, 0.5])
        assert m.K == 2 and m.dim == 1

    def test_weight_sum(self):
        with pytest.raises(WeightSumError):
            MixingMeasure([[0], [1]], [0.7, 0.7])

    def test_ragged_atoms(self):
        with pytest.raises(DimensionMismatch):
            MixingMeasure([[0, 0], [1]], [0.5, 0.5])

    def test_negative_weight(self):
        with pytest.raises(NegativeWeight):
            MixingMeasure([[0], [1]], [1.5, -0.5])

    def test_arrays_are_read_only(self):
        m = as_measure([[0.0], [1.0]], [0.5, 0.5])
        with pytest.raises(ValueError):
            m.atoms[0, 0] = 3.0

    def test_json_round_trip(self):
        m = MixingMeasure([[0.1, 2.0], [1.0, -3.5]], [0.25, 0.75])
        assert MixingMeasure.from_json(m.to_json()) == m

    def test_merged_pools_weights(self):
        m = MixingMeasure([[0], [0], [1]], [0.3, 0.3, 0.4])
        merged = m.merged()
        assert merged.K == 2
        np.testing.assert_allclose(sorted(merged.weights), [0.4, 0.6])


class TestEffectiveOrder:
    def test_exact_duplicates(self):
        assert effective_order(MixingMeasure([[0], [0], [1]], [.3, .3, .4]), 0.0) == 2

    def test_sub_tolerance_gap(self):
        assert effective_order(MixingMeasure([[0], [1e-12], [1]], [.3, .3, .4]), 1e-8) == 2

    def test_transitive_merging(self):
        m = MixingMeasure([[0], [0.5], [1.0]], [.3, .3, .4])
        assert effective_order(m, 0.6) == 1 == closure_classes(m.atoms, 0.6)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_closure_oracle(self, seed):
        rng = np.random.default_rng(seed)
        K, d = rng.integers(1, 9), rng.integers(1, 4)
        atoms = rng.normal(size=(K, d))
        tol = rng.uniform(0, 1.5)
        m = MixingMeasure(atoms, np.full(K, 1.0 / K))
        assert effective_order(m, tol) == closure_classes(atoms, tol)
        labels = fuse_labels(atoms, tol)
        for i, j in itertools.combinations(range(K), 2):
            if np.linalg.norm(atoms[i] - atoms[j]) <= tol:
                assert labels[i] == labels[j]


class TestDataset:
    def test_multinomial_rows_checked(self):
        with pytest.raises(InvalidObservation):
            Dataset([[1, 2], [2, 2]], trials=3)

    def test_empty_dataset_allowed(self):
        assert Dataset(np.zeros((0, 2))).n == 0

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidObservation):
            Dataset([[0.0, np.nan]])


def test_path_csv_round_trip():
    recs = (
        PathRecord(0.1, MixingMeasure([[0.0, 1.0], [2.0, 3.0]], [0.5, 0.5]), 2, -10.0, 25.0, True, 7),
        PathRecord(0.5, MixingMeasure([[1.0, 2.0]], [1.0]), 1, -12.5, 27.25, False, 30),
    )
    path = RegularizationPath(recs, "gaussian", 10, 2)
    rows = read_path_csv(path.to_csv())
    assert [r["order"] for r in rows] == [2, 1]
    assert rows[0]["atoms"] == [[0.0, 1.0], [2.0, 3.0]]
    assert rows[1]["atoms"] == [[1.0, 2.0]]
    assert rows[1]["converged"] is False and rows[1]["bic"] == 27.25


def test_path_requires_increasing_lambda():
    rec = PathRecord(0.1, MixingMeasure([[0.0]], [1.0]), 1, -1.0, 2.0, True, 1)
    with pytest.raises(ValueError):
        RegularizationPath((rec, rec), "gaussian", 1, 1)
