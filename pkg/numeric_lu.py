#!/usr/bin/env python3
"""
Numeric LU Factorization and Refactorization

Up-looking, row-by-row elimination over the combined L+U storage built by
symbolic_lu:
1. Scatter the scaled, permuted values of A into the combined storage
   (fill-in slots start at exactly 0)
2. For each row i and each strict-lower column d in ascending order:
       alpha = a_id / u_dd;  l_id = alpha;  a_ij -= alpha * u_dj  (j > d)
3. Check |u_ii| > pivot floor

Rows run either sequentially or on the ready-flag RowScheduler. Each row is
computed by one worker with a fixed update order, so both modes produce the
same bits. Refactorization reuses the symbolic analysis and overwrites the
values array in place.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from row_scheduler import RowScheduler
from solver_errors import InvalidConfigError, RequiresReanalysisError, ZeroPivotError
from sparse_core import CsrMatrix, pattern_equal
from symbolic_lu import SymbolicFactors

logger = logging.getLogger(__name__)

# Configuration
PIVOT_FLOOR = 1e-30
MODE_SEQUENTIAL = 'sequential'
MODE_PARALLEL = 'scheduled-parallel'
FACTOR_MODES = (MODE_SEQUENTIAL, MODE_PARALLEL)
MODE_ALIASES = {'parallel': MODE_PARALLEL}

MatrixValues = Union[CsrMatrix, np.ndarray]


@dataclass(frozen=True)
class FactorOptions:
    """Execution mode of the numeric phase."""

    mode: str = MODE_SEQUENTIAL
    worker_count: int = 1
    pivot_floor: float = PIVOT_FLOOR
    jitter: float = 0.0          # seconds of random delay per row (parallel mode only)
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'mode', MODE_ALIASES.get(self.mode, self.mode))
        if self.mode not in FACTOR_MODES:
            raise InvalidConfigError(f"Invalid factor mode: {self.mode}")
        if self.worker_count < 1:
            raise InvalidConfigError(f"worker_count must be >= 1, got {self.worker_count}")
        if not self.pivot_floor >= 0:
            raise InvalidConfigError(f"pivot_floor must be >= 0, got {self.pivot_floor}")
        if self.jitter < 0:
            raise InvalidConfigError(f"jitter must be >= 0, got {self.jitter}")

    @property
    def parallel(self) -> bool:
        return self.mode == MODE_PARALLEL


@dataclass(eq=False)
class NumericFactors:
    """Values of L (strict lower, unit diagonal implied) and U in the combined storage."""

    symbolic: SymbolicFactors
    values: np.ndarray
    options: FactorOptions
    generation: int = 0
    valid: bool = False
    timings: Dict[str, float] = field(default_factory=dict)
    _scheduler: Optional[RowScheduler] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.symbolic.n

    def scheduler(self) -> RowScheduler:
        if self._scheduler is None:
            sym = self.symbolic
            self._scheduler = RowScheduler([sym.dependencies(i) for i in range(sym.n)],
                                           self.options.worker_count,
                                           jitter=self.options.jitter, seed=self.options.seed)
        return self._scheduler

    def diagonal(self) -> np.ndarray:
        return self.values[self.symbolic.diag_index]

    def lower_dense(self) -> np.ndarray:
        """L as a dense matrix including its unit diagonal."""
        sym = self.symbolic
        dense = np.eye(sym.n)
        ro, ci = sym.row_offsets, sym.col_indices
        for i in range(sym.n):
            for p in range(ro[i], ro[i] + sym.diag_pos[i]):
                dense[i, ci[p]] = self.values[p]
        return dense

    def upper_dense(self) -> np.ndarray:
        sym = self.symbolic
        dense = np.zeros((sym.n, sym.n))
        ro, ci = sym.row_offsets, sym.col_indices
        for i in range(sym.n):
            for p in range(ro[i] + sym.diag_pos[i], ro[i + 1]):
                dense[i, ci[p]] = self.values[p]
        return dense


def _source_values(symbolic: SymbolicFactors, matrix: MatrixValues) -> np.ndarray:
    """Values aligned to the analyzed source pattern; a different pattern needs re-analysis."""
    if isinstance(matrix, CsrMatrix):
        if not pattern_equal(matrix, symbolic.source_pattern):
            raise RequiresReanalysisError(
                f"pattern differs from the analyzed one (nnz {matrix.nnz} vs {symbolic.source_pattern.nnz})")
        return matrix.values
    values = np.asarray(matrix, dtype=np.float64)
    if values.shape != (symbolic.source_pattern.nnz,):
        raise RequiresReanalysisError(
            f"expected {symbolic.source_pattern.nnz} values for the analyzed pattern, got {values.shape}")
    return values


def scatter_values(symbolic: SymbolicFactors, matrix: MatrixValues,
                   out: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Place D_r A D_c, permuted, into the combined L+U storage.

    Args:
        symbolic: Analysis of the pattern
        matrix: CsrMatrix with the analyzed pattern, or its values array
        out: Optional storage to overwrite (length nnz of the combined pattern)

    Returns:
        Values array with fill-in slots set to 0
    """
    values = _source_values(symbolic, matrix)
    if out is None:
        out = np.zeros(symbolic.nnz)
    else:
        out.fill(0.0)
    out[symbolic.scatter_map] = symbolic.entry_row_scale * values * symbolic.entry_col_scale
    return out


def _row_kernel(symbolic: SymbolicFactors, values: np.ndarray, pivot_floor: float):
    """Build the elimination kernel for one row over `values`."""
    plans = symbolic.row_plans
    diag_index = symbolic.diag_index.tolist()

    def eliminate(i: int) -> None:
        for slot, d, u_start, u_end, targets in plans[i]:
            alpha = values[slot] / values[diag_index[d]]
            values[slot] = alpha
            if u_end > u_start:
                values[targets] -= alpha * values[u_start:u_end]
        pivot = values[diag_index[i]]
        if not abs(pivot) > pivot_floor:
            raise ZeroPivotError(i, pivot)

    return eliminate


def _eliminate(factors: NumericFactors) -> None:
    options = factors.options
    kernel = _row_kernel(factors.symbolic, factors.values, options.pivot_floor)
    factors.valid = False
    if options.parallel:
        factors.scheduler().run(kernel)
    else:
        for i in range(factors.n):
            kernel(i)
    factors.valid = True


def _timed_factor(factors: NumericFactors, matrix: MatrixValues) -> NumericFactors:
    start = time.perf_counter()
    scatter_values(factors.symbolic, matrix, out=factors.values)
    scattered = time.perf_counter()
    try:
        _eliminate(factors)
    finally:
        done = time.perf_counter()
        factors.timings = {
            'scatter_ms': (scattered - start) * 1000.0,
            'factor_ms': (done - scattered) * 1000.0,
        }
    factors.generation += 1
    return factors


def allocate_factors(symbolic: SymbolicFactors, options: Optional[FactorOptions] = None) -> NumericFactors:
    """Empty (invalid, generation 0) factors for `symbolic`, ready for refactorize."""
    return NumericFactors(symbolic=symbolic, values=np.zeros(symbolic.nnz), options=options or FactorOptions())


def factorize(symbolic: SymbolicFactors, matrix: MatrixValues,
              options: Optional[FactorOptions] = None) -> NumericFactors:
    """
    Numeric factorization against an existing symbolic analysis.

    Args:
        symbolic: Analysis of the pattern of `matrix`
        matrix: CsrMatrix (or values aligned to symbolic.source_pattern)
        options: FactorOptions

    Returns:
        NumericFactors with generation 1

    Raises:
        ZeroPivotError: |u_ii| <= pivot_floor at some row
        RequiresReanalysisError: pattern differs from the analyzed one
    """
    factors = allocate_factors(symbolic, options)
    options = factors.options
    _timed_factor(factors, matrix)
    logger.debug(f"Factorized n={symbolic.n} ({options.mode}, workers={options.worker_count}) "
                 f"in {factors.timings['factor_ms']:.3f} ms")
    return factors


def refactorize(factors: NumericFactors, matrix: MatrixValues) -> NumericFactors:
    """
    Recompute the numeric values in place for a matrix with the analyzed pattern.

    Bitwise identical to factorize(factors.symbolic, matrix, factors.options);
    no pattern, lookup or permutation storage is allocated.

    Raises:
        RequiresReanalysisError: pattern differs; rerun symbolic_analyze
        ZeroPivotError: tiny pivot
    """
    _timed_factor(factors, matrix)
    logger.debug(f"Refactorized n={factors.n}, generation {factors.generation}, "
                 f"{factors.timings['factor_ms']:.3f} ms")
    return factors
