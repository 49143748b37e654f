from itertools import permutations

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ordering_scaling import amd_order, mc64_scale
from solver_errors import StructurallySingularError
from sparse_core import CsrMatrix, apply_scaling, permute_columns, permute_symmetric, symmetrized_pattern
from symbolic_lu import count_fill
from matrix_factories import random_diag_dominant, tridiagonal


def _best_log_product(dense: np.ndarray) -> float:
    n = dense.shape[0]
    with np.errstate(divide='ignore'):
        logs = np.log(np.abs(dense))
    perms = np.array(list(permutations(range(n))))
    return float(np.max(logs[perms, np.arange(n)].sum(axis=1)))


def _random_matchable(n: int, rng) -> np.ndarray:
    dense = np.where(rng.random((n, n)) < 0.4, rng.uniform(-10.0, 10.0, (n, n)), 0.0)
    perm = rng.permutation(n)
    dense[perm, np.arange(n)] = rng.uniform(0.01, 5.0, n) * rng.choice([-1.0, 1.0], n)
    return dense


def _scaled_matched(matrix: CsrMatrix):
    result = mc64_scale(matrix)
    return result, permute_columns(apply_scaling(matrix, result.scaling), result.col_perm).to_dense()


def _with_diagonal(n, edges):
    dense = np.eye(n)
    for i, j in edges:
        dense[i, j] = dense[j, i] = 1.0
    return CsrMatrix.from_dense(dense)


class TestMatching:
    def test_two_by_two_swaps(self):
        result, scaled = _scaled_matched(CsrMatrix.from_dense([[0.1, 2.0], [3.0, 0.1]]))
        assert_array_equal(result.row_match, [1, 0])
        assert_allclose(np.abs(np.diag(scaled)), 1.0, rtol=1e-14)
        assert np.all(np.abs(scaled) <= 1.0 + 1e-14)

    def test_diagonal_matrix(self):
        A = CsrMatrix.from_dense(np.diag([5.0, -2.0, 0.5]))
        result = mc64_scale(A)
        assert result.col_perm.is_identity()
        products = result.scaling.row_scale * np.abs([5.0, -2.0, 0.5]) * result.scaling.col_scale
        assert_allclose(products, 1.0, rtol=1e-14)

    def test_structurally_singular(self):
        with pytest.raises(StructurallySingularError) as info:
            mc64_scale(CsrMatrix.from_dense([[1.0, 0.0], [1.0, 0.0]]))
        assert info.value.rows == [1]

    def test_explicit_zero_is_not_a_candidate(self):
        A = CsrMatrix(2, 2, [0, 2, 4], [0, 1, 0, 1], [0.0, 1.0, 1.0, 1.0])
        result = mc64_scale(A)
        assert_array_equal(result.row_match, [1, 0])

    def test_product_is_maximal(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 9))
            dense = _random_matchable(n, rng)
            result = mc64_scale(CsrMatrix.from_dense(dense))
            best = _best_log_product(dense)
            assert abs(result.matched_product - best) <= 1e-12 * max(1.0, abs(best))

    def test_scaled_matrix_bounds(self, rng):
        for _ in range(20):
            A = random_diag_dominant(40, rng)
            _, scaled = _scaled_matched(A)
            assert_allclose(np.abs(np.diag(scaled)), 1.0, rtol=1e-12)
            assert np.max(np.abs(scaled)) <= 1.0 + 1e-12


class TestAmd:
    @staticmethod
    def _fill_under(pattern: CsrMatrix) -> int:
        perm = amd_order(symmetrized_pattern(pattern))
        return count_fill(permute_symmetric(pattern, perm))

    def test_path_graph_no_fill(self):
        assert self._fill_under(tridiagonal(6)) == 0

    def test_star_hub_eliminated_late(self):
        n = 6
        for hub in range(n):
            pattern = _with_diagonal(n, [(hub, leaf) for leaf in range(n) if leaf != hub])
            perm = amd_order(pattern)
            assert perm.forward[hub] >= n - 2
            assert count_fill(permute_symmetric(pattern, perm)) == 0
        pattern = _with_diagonal(n, [(n - 1, leaf) for leaf in range(n - 1)])
        assert amd_order(pattern).forward[n - 1] == n - 1

    def test_complete_graph(self):
        assert self._fill_under(CsrMatrix.from_dense(np.ones((4, 4)))) == 0

    def test_random_trees_no_fill(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 41))
            labels = rng.permutation(n)
            edges = [(int(labels[v]), int(labels[rng.integers(0, v)])) for v in range(1, n)]
            assert self._fill_under(_with_diagonal(n, edges)) == 0

    def test_bijection_and_determinism(self, rng):
        pattern = symmetrized_pattern(random_diag_dominant(80, rng))
        first = amd_order(pattern)
        assert_array_equal(np.sort(first.forward), np.arange(80))
        assert_array_equal(first.forward, amd_order(pattern).forward)

    def test_empty_graph(self):
        assert amd_order(CsrMatrix(0, 0, [0], [], [])).size == 0

    def test_beats_natural_on_arrow(self):
        dense = np.eye(8)
        dense[0, :] = dense[:, 0] = 1.0
        pattern = CsrMatrix.from_dense(dense)
        assert count_fill(pattern) > 0
        assert self._fill_under(pattern) == 0
