import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from solver_errors import DimensionMismatchError, MatrixMarketError
from sparse_core import (CooMatrix, CsrMatrix, DiagonalScaling, Permutation, apply_scaling, coo_to_csr,
                         mm_read, mm_read_csr, mm_write, pattern_equal, permute_symmetric, spmv,
                         symmetrized_pattern)
from matrix_factories import random_diag_dominant


def _write(path, text):
    path.write_text(text, encoding='utf-8')
    return path


def _check_structure(matrix: CsrMatrix):
    assert matrix.row_offsets[0] == 0
    assert np.all(np.diff(matrix.row_offsets) >= 0)
    assert matrix.row_offsets[-1] == matrix.nnz
    for i in range(matrix.nrows):
        cols, _ = matrix.row(i)
        assert np.all(np.diff(cols) > 0)


class TestCooToCsr:
    def test_sorts_and_compresses(self):
        coo = CooMatrix.from_entries(2, 2, [(1, 0, 6.0), (0, 0, 4.0), (0, 1, 3.0), (1, 1, 3.0)])
        csr = coo_to_csr(coo)
        assert_array_equal(csr.row_offsets, [0, 2, 4])
        assert_array_equal(csr.col_indices, [0, 1, 0, 1])
        assert_array_equal(csr.values, [4.0, 3.0, 6.0, 3.0])

    def test_empty(self):
        csr = coo_to_csr(CooMatrix.from_entries(2, 2, []))
        assert_array_equal(csr.row_offsets, [0, 0, 0])
        assert csr.nnz == 0

    def test_single_entry(self):
        csr = coo_to_csr(CooMatrix.from_entries(3, 3, [(2, 2, 5.0)]))
        assert_array_equal(csr.row_offsets, [0, 0, 0, 1])

    def test_duplicates_summed_and_zeros_kept(self):
        coo = CooMatrix.from_entries(2, 2, [(0, 1, 1.0), (0, 1, 2.0), (1, 1, 0.0)])
        csr = coo_to_csr(coo)
        assert csr.nnz == 2
        assert_array_equal(csr.values, [3.0, 0.0])

    def test_out_of_range_rejected(self):
        with pytest.raises(IndexError):
            CooMatrix.from_entries(2, 2, [(2, 0, 1.0)])


class TestSpmv:
    @pytest.mark.parametrize("dense, x, expected", [
        ([[1.0, 2.0], [0.0, 3.0]], [1.0, 1.0], [3.0, 3.0]),
        ([[4.0, 3.0], [6.0, 3.0]], [1.0, 2.0], [10.0, 12.0]),
    ])
    def test_products(self, dense, x, expected):
        assert_array_equal(spmv(CsrMatrix.from_dense(dense), x), expected)

    def test_identity(self, rng):
        x = rng.standard_normal(7)
        assert_array_equal(spmv(CsrMatrix.identity(7), x), x)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            spmv(CsrMatrix.identity(3), np.ones(4))

    def test_repeatable_bits(self, rng):
        A = random_diag_dominant(60, rng)
        x = rng.standard_normal(60)
        assert_array_equal(spmv(A, x), spmv(A, x))


class TestPermutationsAndScaling:
    def test_swap_two_by_two(self, two_by_two):
        swap = Permutation(np.array([1, 0]))
        assert_array_equal(permute_symmetric(two_by_two, swap).to_dense(), [[3.0, 6.0], [3.0, 4.0]])

    def test_identity_unchanged(self, rng):
        A = random_diag_dominant(20, rng)
        B = permute_symmetric(A, Permutation.identity(20))
        assert pattern_equal(A, B)
        assert_array_equal(A.values, B.values)

    def test_permute_and_restore(self, rng):
        A = random_diag_dominant(30, rng)
        perm = Permutation(rng.permutation(30))
        restored = permute_symmetric(permute_symmetric(A, perm), perm.inverted())
        assert pattern_equal(A, restored)
        assert_array_equal(A.values, restored.values)
        _check_structure(restored)

    def test_diagonal_stays_diagonal(self, rng):
        perm = Permutation(rng.permutation(10))
        B = permute_symmetric(CsrMatrix.identity(10), perm)
        assert_array_equal(B.to_dense(), np.eye(10))

    def test_permutation_must_be_bijection(self):
        with pytest.raises(ValueError):
            Permutation(np.array([0, 0, 1]))

    def test_apply_scaling_two_sided(self):
        A = CsrMatrix.from_dense(np.ones((2, 2)))
        scaled = apply_scaling(A, DiagonalScaling(np.array([2.0, 1.0]), np.ones(2)))
        assert_array_equal(scaled.to_dense(), [[2.0, 2.0], [1.0, 1.0]])

    def test_scaling_then_inverse(self, rng):
        A = random_diag_dominant(15, rng)
        scaling = DiagonalScaling(rng.uniform(0.1, 10.0, 15), rng.uniform(0.1, 10.0, 15))
        restored = apply_scaling(apply_scaling(A, scaling), scaling.inverted())
        assert_allclose(restored.values, A.values, rtol=1e-14)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError):
            DiagonalScaling(np.array([1.0, 0.0]), np.ones(2))


class TestPatterns:
    def test_pattern_equal(self, two_by_two):
        assert pattern_equal(two_by_two, two_by_two.with_values([1.0, 1.0, 1.0, 1.0]))
        extra = CsrMatrix.from_dense([[4.0, 3.0, 0.0], [6.0, 3.0, 0.0], [0.0, 0.0, 1.0]])
        assert not pattern_equal(two_by_two, extra)
        lower = CsrMatrix.from_dense([[4.0, 0.0], [6.0, 3.0]])
        assert not pattern_equal(two_by_two, lower)

    def test_symmetrized_bidiagonal(self):
        lower = CsrMatrix.from_dense(np.eye(5, k=-1))
        sym = symmetrized_pattern(lower)
        assert_array_equal(sym.to_dense(), np.eye(5, k=-1) + np.eye(5, k=1))

    def test_symmetrized_dense_row(self):
        dense = np.eye(4)
        dense[2, :] = 1.0
        sym = symmetrized_pattern(CsrMatrix.from_dense(dense)).to_dense()
        assert np.all(sym[2, :] == 1.0) and np.all(sym[:, 2] == 1.0)


class TestMatrixMarket:
    def test_read_general(self, tmp_path):
        path = _write(tmp_path / 'a.mtx', "%%MatrixMarket matrix coordinate real general\n"
                                          "% comment\n2 2 4\n1 1 4\n2 1 6\n1 2 3\n2 2 3\n")
        coo = mm_read(path)
        assert coo.nnz == 4
        assert_array_equal(coo_to_csr(coo).to_dense(), [[4.0, 3.0], [6.0, 3.0]])

    def test_read_symmetric_expands(self, tmp_path):
        path = _write(tmp_path / 's.mtx', "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2\n2 1 1\n")
        dense = mm_read_csr(path).to_dense()
        assert_array_equal(dense, [[2.0, 1.0], [1.0, 0.0]])
        assert mm_read(path).nnz == 3

    def test_array_format_rejected(self, tmp_path):
        path = _write(tmp_path / 'd.mtx', "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n")
        with pytest.raises(MatrixMarketError, match="unsupported format: array") as info:
            mm_read(path)
        assert info.value.line == 1

    def test_complex_rejected(self, tmp_path):
        path = _write(tmp_path / 'c.mtx', "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n")
        with pytest.raises(MatrixMarketError, match="unsupported field"):
            mm_read(path)

    def test_out_of_range_reports_line(self, tmp_path):
        path = _write(tmp_path / 'bad.mtx', "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n3 1 1\n")
        with pytest.raises(MatrixMarketError) as info:
            mm_read(path)
        assert info.value.line == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            mm_read(tmp_path / 'nope.mtx')

    def test_roundtrip_two_by_two(self, tmp_path, two_by_two):
        mm_write(two_by_two, tmp_path / 'rt.mtx')
        back = mm_read_csr(tmp_path / 'rt.mtx')
        assert pattern_equal(back, two_by_two)
        assert_array_equal(back.values, two_by_two.values)

    def test_empty_matrix(self, tmp_path):
        empty = coo_to_csr(CooMatrix.from_entries(3, 3, []))
        mm_write(empty, tmp_path / 'e.mtx')
        lines = [l for l in (tmp_path / 'e.mtx').read_text().splitlines() if not l.startswith('%')]
        assert lines[0].split() == ['3', '3', '0']
        assert mm_read(tmp_path / 'e.mtx').nnz == 0

    def test_tiny_value_survives(self, tmp_path):
        A = coo_to_csr(CooMatrix.from_entries(1, 1, [(0, 0, 1e-300)]))
        mm_write(A, tmp_path / 't.mtx')
        assert mm_read_csr(tmp_path / 't.mtx').values[0] == 1e-300

    def test_random_roundtrips(self, tmp_path, rng):
        for trial in range(100):
            n = int(rng.integers(1, 101))
            A = random_diag_dominant(n, rng, per_row=3)
            path = tmp_path / f'r{trial}.mtx'
            mm_write(A, path)
            back = mm_read_csr(path)
            assert pattern_equal(back, A)
            assert_array_equal(back.values, A.values)
