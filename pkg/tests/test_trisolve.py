import gc
import weakref

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from kkt_harness import KktBlocks, assemble_kkt
from numeric_lu import MODE_PARALLEL, FactorOptions, factorize, refactorize
from solver_errors import DimensionMismatchError
from sparse_core import CsrMatrix, spmv
from symbolic_lu import AnalyzeOptions, symbolic_analyze
from trisolve import SolveWorkspace, lower_solve, solve_system, upper_solve
from matrix_factories import random_diag_dominant

NATURAL = AnalyzeOptions(use_scaling=False, use_amd=False)


def _natural_factors(dense):
    A = CsrMatrix.from_dense(dense)
    return factorize(symbolic_analyze(A, NATURAL), A)


class TestLowerSolve:
    def test_identity(self, rng):
        y = rng.standard_normal(5)
        assert_array_equal(lower_solve(_natural_factors(np.eye(5)), y), y)

    def test_two_by_two(self):
        factors = _natural_factors([[1.0, 0.0], [2.0, 1.0]])
        assert_array_equal(lower_solve(factors, [1.0, 4.0]), [1.0, 2.0])

    def test_unit_bidiagonal(self):
        factors = _natural_factors(np.eye(4) - np.eye(4, k=-1))
        assert_array_equal(lower_solve(factors, np.ones(4)), [1.0, 2.0, 3.0, 4.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            lower_solve(_natural_factors(np.eye(3)), np.ones(4))


class TestUpperSolve:
    def test_identity(self, rng):
        y = rng.standard_normal(5)
        assert_array_equal(upper_solve(_natural_factors(np.eye(5)), y), y)

    def test_two_by_two(self):
        factors = _natural_factors([[2.0, 1.0], [0.0, 4.0]])
        assert_array_equal(upper_solve(factors, [4.0, 8.0]), [1.0, 2.0])

    def test_diagonal(self):
        factors = _natural_factors(np.diag([2.0, 4.0]))
        assert_array_equal(upper_solve(factors, [2.0, 8.0]), [1.0, 2.0])

    def test_matches_dense_triangular_solve(self, rng):
        A = random_diag_dominant(40, rng)
        factors = factorize(symbolic_analyze(A), A)
        y = rng.standard_normal(40)
        U = factors.upper_dense()
        assert_allclose(upper_solve(factors, y), np.linalg.solve(U, y), rtol=1e-12, atol=1e-12)
        L = factors.lower_dense()
        assert_allclose(lower_solve(factors, y), np.linalg.solve(L, y), rtol=1e-12, atol=1e-12)


class TestSolveSystem:
    def test_identity(self, rng):
        A = CsrMatrix.identity(6)
        b = rng.standard_normal(6)
        assert_array_equal(solve_system(factorize(symbolic_analyze(A), A), b), b)

    def test_two_by_two(self, two_by_two):
        for options in (NATURAL, AnalyzeOptions()):
            factors = factorize(symbolic_analyze(two_by_two, options), two_by_two)
            assert_allclose(solve_system(factors, [10.0, 12.0]), [1.0, 2.0], rtol=1e-14)

    def test_small_kkt(self):
        blocks = KktBlocks(H=CsrMatrix.from_dense([[2.0]]), J=CsrMatrix.from_dense([[1.0]]),
                           D_y=np.array([0.1]), mu=0.1)
        K = assemble_kkt(blocks).K
        x = solve_system(factorize(symbolic_analyze(K), K), spmv(K, np.ones(2)))
        assert_allclose(x, np.ones(2), atol=1e-12)

    def test_three_unknown_kkt(self):
        blocks = KktBlocks(H=CsrMatrix.from_dense(np.diag([2.0, 3.0])), J=CsrMatrix.from_dense([[1.0, 1.0]]),
                           D_y=np.array([0.1, 0.1]), mu=0.1)
        K = assemble_kkt(blocks).K
        x = solve_system(factorize(symbolic_analyze(K), K), spmv(K, np.ones(3)))
        assert_allclose(x, np.ones(3), atol=1e-12)

    @pytest.mark.parametrize("options", [AnalyzeOptions(), NATURAL, AnalyzeOptions(use_scaling=False)])
    def test_residual_on_random_systems(self, rng, options):
        A = random_diag_dominant(120, rng)
        x_true = rng.standard_normal(120)
        b = spmv(A, x_true)
        x = solve_system(factorize(symbolic_analyze(A, options), A), b)
        assert np.linalg.norm(spmv(A, x) - b) <= 1e-12 * np.linalg.norm(b)

    @pytest.mark.parametrize("workers", [2, 4])
    def test_parallel_bitwise(self, rng, workers):
        A = random_diag_dominant(100, rng)
        symbolic = symbolic_analyze(A)
        b = rng.standard_normal(100)
        sequential = solve_system(factorize(symbolic, A), b)
        factors = factorize(symbolic, A, FactorOptions(mode=MODE_PARALLEL, worker_count=workers))
        assert_array_equal(solve_system(factors, b), sequential)
        assert_array_equal(solve_system(factors, b, mode='sequential'), sequential)

    def test_invalid_factors_rejected(self, two_by_two):
        factors = factorize(symbolic_analyze(two_by_two, NATURAL), two_by_two)
        factors.valid = False
        with pytest.raises(ValueError):
            solve_system(factors, [1.0, 1.0])

    def test_rhs_shape_checked(self, two_by_two):
        factors = factorize(symbolic_analyze(two_by_two), two_by_two)
        with pytest.raises(DimensionMismatchError):
            solve_system(factors, np.ones((2, 1)))
        with pytest.raises(DimensionMismatchError):
            solve_system(factors, np.ones(3))


class TestWorkspace:
    def test_no_allocations_after_warmup(self, rng):
        A = random_diag_dominant(50, rng)
        factors = factorize(symbolic_analyze(A), A)
        workspace = SolveWorkspace(50)
        b = rng.standard_normal(50)
        first = solve_system(factors, b, workspace=workspace)
        allocations = workspace.allocations
        for _ in range(1000):
            x = solve_system(factors, b, workspace=workspace)
        assert workspace.allocations == allocations
        assert_array_equal(x, first)
        assert workspace.stats == {'solves': 1001, 'rebinds': 1}

    def test_rebinds_after_refactorize(self, rng):
        A = random_diag_dominant(30, rng)
        factors = factorize(symbolic_analyze(A), A)
        workspace = SolveWorkspace(30)
        b = spmv(A, np.ones(30))
        solve_system(factors, b, workspace=workspace)
        doubled = A.with_values(2.0 * A.values)
        refactorize(factors, doubled)
        x = solve_system(factors, b, workspace=workspace)
        assert_allclose(x, 0.5 * np.ones(30), rtol=1e-12)
        assert workspace.stats['rebinds'] == 2

    def test_new_analysis_rebinds_pattern(self, rng):
        first = random_diag_dominant(40, rng)
        workspace = SolveWorkspace(40)
        factors = factorize(symbolic_analyze(first), first)
        solve_system(factors, spmv(first, np.ones(40)), workspace=workspace)
        bound = weakref.ref(factors.symbolic)
        del factors
        gc.collect()
        assert bound() is not None

        second = random_diag_dominant(40, rng, per_row=6)
        factors = factorize(symbolic_analyze(second), second)
        x = solve_system(factors, spmv(second, np.ones(40)), workspace=workspace)
        assert_allclose(x, np.ones(40), rtol=1e-12)
        assert workspace.stats['rebinds'] == 2

    def test_size_mismatch(self, two_by_two):
        factors = factorize(symbolic_analyze(two_by_two), two_by_two)
        with pytest.raises(DimensionMismatchError):
            solve_system(factors, [1.0, 1.0], workspace=SolveWorkspace(3))
