#!/usr/bin/env python3
"""
Sparse Triangular Solves

Forward substitution with the unit lower factor, back substitution with the
upper factor, and the full solve that maps an original right-hand side to an
original solution:

    x = D_c . Q . P^T . U^-1 . L^-1 . P . D_r . b

Each row accumulates its terms left to right in ascending column order. In
parallel mode rows are dispatched by the ready-flag RowScheduler; the
per-row arithmetic is identical, so both modes return the same bits.

A SolveWorkspace owns the length-n buffers and is reused across solves and
across refactorizations of the same pattern.
"""

import logging
from typing import List, Optional

import numpy as np

from numeric_lu import MODE_ALIASES, MODE_PARALLEL, MODE_SEQUENTIAL, NumericFactors
from row_scheduler import RowScheduler
from solver_errors import DimensionMismatchError, InvalidConfigError, ZeroPivotError
from sparse_core import DenseVector, as_vector
from symbolic_lu import SymbolicFactors

logger = logging.getLogger(__name__)


class SolveWorkspace:
    """
    Persistent buffers for solve_system.

    permuted_rhs and solution are numpy arrays; intermediate holds the
    in-place triangular solve state. `allocations` counts buffer allocations.
    """

    def __init__(self, n: int):
        self.n = n
        self.allocations = 0
        self.permuted_rhs = self._allocate_array()
        self.solution = self._allocate_array()
        self.intermediate: List[float] = self._allocate_list()
        self.stats = {'solves': 0, 'rebinds': 0}

        self._symbolic: Optional[SymbolicFactors] = None
        self._factors: Optional[NumericFactors] = None
        self._generation = -1
        self._row_offsets: List[int] = []
        self._col_indices: List[int] = []
        self._diag_index: List[int] = []
        self._values: List[float] = []
        self._gather_in = None
        self._scale_in = None
        self._gather_out = None
        self._scale_out = None
        self._schedulers = {}

    def _allocate_array(self) -> np.ndarray:
        self.allocations += 1
        return np.zeros(self.n)

    def _allocate_list(self) -> List[float]:
        self.allocations += 1
        return [0.0] * self.n

    def bind(self, factors: NumericFactors) -> None:
        """Cache pattern data per symbolic analysis and values per factor generation."""
        sym = factors.symbolic
        if sym.n != self.n:
            raise DimensionMismatchError(f"workspace has size {self.n}, factors have size {sym.n}")
        if self._symbolic is not sym:
            self._symbolic = sym
            self._row_offsets = sym.row_offsets.tolist()
            self._col_indices = sym.col_indices.tolist()
            self._diag_index = sym.diag_index.tolist()
            self._gather_in = sym.amd.inverse
            self._scale_in = sym.scaling.row_scale[sym.amd.inverse]
            self._gather_out = sym.amd.forward[sym.col_perm.forward]
            self._scale_out = sym.scaling.col_scale
            self._schedulers = {}
            self._factors = None
        if self._factors is not factors or self._generation != factors.generation:
            self._factors = factors
            self._generation = factors.generation
            self._values = factors.values.tolist()
            self.stats['rebinds'] += 1

    def scheduler(self, factors: NumericFactors, descending: bool, worker_count: int) -> RowScheduler:
        key = (descending, worker_count)
        if key not in self._schedulers:
            sym = factors.symbolic
            deps = [sym.upper_dependencies(i) if descending else sym.dependencies(i) for i in range(sym.n)]
            self._schedulers[key] = RowScheduler(deps, worker_count, descending=descending)
        return self._schedulers[key]


def _resolve_mode(factors: NumericFactors, mode: Optional[str]) -> str:
    mode = MODE_ALIASES.get(mode, mode) if mode else factors.options.mode
    if mode not in (MODE_SEQUENTIAL, MODE_PARALLEL):
        raise InvalidConfigError(f"Invalid solve mode: {mode}")
    return mode


def _forward_kernel(ws: SolveWorkspace, x: List[float]):
    ro, ci, di, lu = ws._row_offsets, ws._col_indices, ws._diag_index, ws._values

    def forward_row(i: int) -> None:
        acc = x[i]
        for p in range(ro[i], di[i]):
            acc -= lu[p] * x[ci[p]]
        x[i] = acc

    return forward_row


def _backward_kernel(ws: SolveWorkspace, x: List[float]):
    ro, ci, di, lu = ws._row_offsets, ws._col_indices, ws._diag_index, ws._values

    def backward_row(i: int) -> None:
        acc = x[i]
        d = di[i]
        for p in range(d + 1, ro[i + 1]):
            acc -= lu[p] * x[ci[p]]
        pivot = lu[d]
        if pivot == 0.0:
            raise ZeroPivotError(i, pivot)
        x[i] = acc / pivot

    return backward_row


def _run(ws: SolveWorkspace, factors: NumericFactors, kernel, mode: str, descending: bool) -> None:
    if mode == MODE_PARALLEL:
        ws.scheduler(factors, descending, factors.options.worker_count).run(kernel)
        return
    rows = range(ws.n - 1, -1, -1) if descending else range(ws.n)
    for i in rows:
        kernel(i)


def _prepare(factors: NumericFactors, y, workspace: Optional[SolveWorkspace]) -> SolveWorkspace:
    if len(y) != factors.n:
        raise DimensionMismatchError(f"right-hand side has length {len(y)}, expected {factors.n}")
    ws = workspace or SolveWorkspace(factors.n)
    ws.bind(factors)
    return ws


def lower_solve(factors: NumericFactors, y, mode: Optional[str] = None,
                workspace: Optional[SolveWorkspace] = None) -> DenseVector:
    """
    Solve L x = y with the unit lower factor.

    Args:
        factors: NumericFactors
        y: Right-hand side in factor (transformed) ordering
        mode: 'sequential' or 'scheduled-parallel'; defaults to the factor options
        workspace: Optional SolveWorkspace to reuse

    Returns:
        x as a new array
    """
    y = as_vector(y)
    ws = _prepare(factors, y, workspace)
    x = ws.intermediate
    x[:] = y.tolist()
    _run(ws, factors, _forward_kernel(ws, x), _resolve_mode(factors, mode), descending=False)
    return np.array(x)


def upper_solve(factors: NumericFactors, y, mode: Optional[str] = None,
                workspace: Optional[SolveWorkspace] = None) -> DenseVector:
    """
    Solve U x = y, rows in descending order.

    Raises:
        ZeroPivotError: u_ii == 0
    """
    y = as_vector(y)
    ws = _prepare(factors, y, workspace)
    x = ws.intermediate
    x[:] = y.tolist()
    _run(ws, factors, _backward_kernel(ws, x), _resolve_mode(factors, mode), descending=True)
    return np.array(x)


def solve_system(factors: NumericFactors, b, workspace: Optional[SolveWorkspace] = None,
                 mode: Optional[str] = None) -> DenseVector:
    """
    Solve A x = b through the scalings, permutations and triangular factors.

    Args:
        factors: Valid factors of the current matrix
        b: Right-hand side in the original ordering
        workspace: SolveWorkspace reused between calls (created when omitted)
        mode: Execution mode override

    Returns:
        x in the original ordering (a new array)
    """
    if not factors.valid:
        raise ValueError("factors are not valid; factorization failed or never ran")
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise DimensionMismatchError(f"right-hand side must be a vector, got shape {b.shape}")
    ws = _prepare(factors, b, workspace)
    mode = _resolve_mode(factors, mode)

    np.take(b, ws._gather_in, out=ws.permuted_rhs)
    np.multiply(ws.permuted_rhs, ws._scale_in, out=ws.permuted_rhs)

    x = ws.intermediate
    x[:] = ws.permuted_rhs.tolist()
    _run(ws, factors, _forward_kernel(ws, x), mode, descending=False)
    _run(ws, factors, _backward_kernel(ws, x), mode, descending=True)

    ws.solution[:] = x
    np.take(ws.solution, ws._gather_out, out=ws.permuted_rhs)
    np.multiply(ws.permuted_rhs, ws._scale_out, out=ws.solution)
    ws.stats['solves'] += 1
    return ws.solution.copy()
