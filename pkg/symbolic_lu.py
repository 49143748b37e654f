#!/usr/bin/env python3
"""
Symbolic LU Analysis

One-time analysis of a sparsity pattern, reused by every refactorization:
- optional matching/scaling and AMD ordering (ordering_scaling)
- fill pattern of L+U in combined row storage (fill1, up-looking)
- per-row column lookups (bitmap or hash table)
- scatter map from the source pattern into the combined storage
- per-row update plans: for each strict-lower slot l_id, the offsets in
  row i hit by the upper part of row d

Analysis is single-threaded; the resulting SymbolicFactors is read-only and
may be shared by concurrent factorizations.
"""

import heapq
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ordering_scaling import MatchingResult, amd_order, mc64_scale
from solver_errors import DimensionMismatchError, ZeroDiagonalError
from sparse_core import (INDEX_DTYPE, CsrMatrix, DiagonalScaling, Permutation, permute_columns,
                         permute_symmetric, symmetrized_pattern)

logger = logging.getLogger(__name__)

# Configuration
BITMAP_WORD_BITS = 64
BITMAP_WORDS_PER_NNZ = 1  # bitmap when span <= 64 * nnz
ABSENT = -1

_POPCOUNT_TABLE = np.array([bin(b).count('1') for b in range(256)], dtype=np.int64)


def _popcount64(words: np.ndarray) -> np.ndarray:
    """Vectorized popcount of uint64 words."""
    as_bytes = np.ascontiguousarray(words, dtype=np.uint64).view(np.uint8).reshape(-1, 8)
    return _POPCOUNT_TABLE[as_bytes].sum(axis=1)


class RowLookup:
    """
    Column index -> offset within one row of the combined pattern.

    Bitmap variant: one bit per column of the row span, packed in 64-bit words,
    with a prefix count per word; offset = prefix[word] + popcount(bits below).
    Hash variant: a dict, used when the span is too wide for a bitmap.
    """

    __slots__ = ('variant', 'size', '_min_col', '_span', '_words', '_prefix', '_table')

    def __init__(self, columns: np.ndarray):
        columns = np.asarray(columns, dtype=INDEX_DTYPE)
        self.size = int(columns.size)
        self._table: Dict[int, int] = {}
        self._words = None
        self._prefix = None
        self._min_col = 0
        self._span = 0
        if self.size == 0:
            self.variant = 'hash'
            return
        self._min_col = int(columns[0])
        self._span = int(columns[-1]) - self._min_col + 1
        if self._span <= BITMAP_WORD_BITS * BITMAP_WORDS_PER_NNZ * self.size:
            self.variant = 'bitmap'
            rel = columns - self._min_col
            nwords = (self._span + BITMAP_WORD_BITS - 1) // BITMAP_WORD_BITS
            words = np.zeros(nwords, dtype=np.uint64)
            np.bitwise_or.at(words, rel >> 6, np.left_shift(np.uint64(1), (rel & 63).astype(np.uint64)))
            counts = _popcount64(words)
            self._words = words
            self._prefix = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(INDEX_DTYPE)
        else:
            self.variant = 'hash'
            self._table = {int(c): k for k, c in enumerate(columns.tolist())}

    def lookup(self, column: int) -> int:
        """Offset of `column` in the row, or ABSENT."""
        if self.variant == 'hash':
            return self._table.get(int(column), ABSENT)
        rel = int(column) - self._min_col
        if rel < 0 or rel >= self._span:
            return ABSENT
        word = int(self._words[rel >> 6])
        bit = rel & 63
        if not (word >> bit) & 1:
            return ABSENT
        return int(self._prefix[rel >> 6]) + (word & ((1 << bit) - 1)).bit_count()

    def offsets(self, columns: np.ndarray) -> np.ndarray:
        """Vectorized lookup; absent columns map to ABSENT."""
        columns = np.asarray(columns, dtype=INDEX_DTYPE)
        if self.variant == 'hash':
            table = self._table
            return np.fromiter((table.get(c, ABSENT) for c in columns.tolist()),
                               dtype=INDEX_DTYPE, count=columns.size)
        rel = columns - self._min_col
        inside = (rel >= 0) & (rel < self._span)
        result = np.full(columns.size, ABSENT, dtype=INDEX_DTYPE)
        if not inside.any():
            return result
        r = rel[inside]
        block = r >> 6
        bit = (r & 63).astype(np.uint64)
        word = self._words[block]
        present = ((word >> bit) & np.uint64(1)).astype(bool)
        below = word & ((np.uint64(1) << bit) - np.uint64(1))
        offsets = self._prefix[block] + _popcount64(below)
        inside_idx = np.flatnonzero(inside)
        result[inside_idx[present]] = offsets[present]
        return result


def build_lookup(columns) -> RowLookup:
    """Build the lookup structure for one sorted, unique column list."""
    return RowLookup(np.asarray(columns, dtype=INDEX_DTYPE))


def fill1_pattern(pattern: CsrMatrix) -> CsrMatrix:
    """
    Filled L+U pattern of `pattern` under elimination in natural order.

    Row i of the result is the closure of row i of B under merging, for each
    lower column d in ascending order, the strictly-upper columns of the
    already finished row d. Equivalently (i, j) is filled iff a path joins i
    to j in B through vertices numbered below min(i, j).

    Args:
        pattern: Square pattern with a stored diagonal in every row

    Returns:
        Pattern (unit values) of the combined factor storage

    Raises:
        ZeroDiagonalError: row k has no stored diagonal
    """
    if pattern.nrows != pattern.ncols:
        raise DimensionMismatchError(f"fill1_pattern needs a square pattern, got {pattern.shape}")
    n = pattern.nrows
    ro = pattern.row_offsets.tolist()
    ci = pattern.col_indices.tolist()
    upper_rows: List[List[int]] = [[] for _ in range(n)]
    filled_cols: List[int] = []
    offsets = [0]

    for i in range(n):
        row = ci[ro[i]:ro[i + 1]]
        present = set(row)
        if i not in present:
            raise ZeroDiagonalError(i)
        pending = [c for c in row if c < i]
        heapq.heapify(pending)
        while pending:
            d = heapq.heappop(pending)
            for j in upper_rows[d]:
                if j not in present:
                    present.add(j)
                    if j < i:
                        heapq.heappush(pending, j)
        closed = sorted(present)
        upper_rows[i] = [j for j in closed if j > i]
        filled_cols.extend(closed)
        offsets.append(len(filled_cols))

    return CsrMatrix(n, n, np.array(offsets, dtype=INDEX_DTYPE), np.array(filled_cols, dtype=INDEX_DTYPE),
                     np.ones(len(filled_cols)))


def count_fill(pattern: CsrMatrix) -> int:
    """Number of entries fill1 adds to `pattern`."""
    return fill1_pattern(pattern).nnz - pattern.nnz


@dataclass(frozen=True)
class AnalyzeOptions:
    """Preprocessing switches; scaling off is the AMD-only (KLU-style) path."""

    use_scaling: bool = True
    use_amd: bool = True


# One dependency of a row: (l_slot, d, u_start, u_end, targets)
UpdateStep = Tuple[int, int, int, int, np.ndarray]


@dataclass(frozen=True, eq=False)
class SymbolicFactors:
    """Everything about a pattern that refactorization reuses."""

    n: int
    combined_pattern: CsrMatrix
    diag_pos: np.ndarray            # offset of the diagonal within each row
    row_lookup: List[RowLookup]
    match: Optional[MatchingResult]
    amd: Permutation
    source_pattern: CsrMatrix
    col_perm: Permutation
    scaling: DiagonalScaling
    scatter_map: np.ndarray         # source entry -> combined offset
    entry_row_scale: np.ndarray
    entry_col_scale: np.ndarray
    row_plans: List[List[UpdateStep]]
    options: AnalyzeOptions = field(default_factory=AnalyzeOptions)
    stats: Dict[str, float] = field(default_factory=dict)

    @property
    def nnz(self) -> int:
        return self.combined_pattern.nnz

    @property
    def row_offsets(self) -> np.ndarray:
        return self.combined_pattern.row_offsets

    @property
    def col_indices(self) -> np.ndarray:
        return self.combined_pattern.col_indices

    @property
    def diag_index(self) -> np.ndarray:
        """Absolute storage offset of every diagonal entry."""
        return self.combined_pattern.row_offsets[:-1] + self.diag_pos

    def dependencies(self, i: int) -> np.ndarray:
        """Strict-lower columns of row i (rows that must finish first)."""
        start = self.combined_pattern.row_offsets[i]
        return self.combined_pattern.col_indices[start:start + self.diag_pos[i]]

    def upper_dependencies(self, i: int) -> np.ndarray:
        """Strict-upper columns of row i (used by the backward solve)."""
        start = self.combined_pattern.row_offsets[i] + self.diag_pos[i] + 1
        return self.combined_pattern.col_indices[start:self.combined_pattern.row_offsets[i + 1]]


def _build_row_plans(filled: CsrMatrix, lookups: List[RowLookup], diag_index: np.ndarray) -> List[List[UpdateStep]]:
    ro = filled.row_offsets
    ci = filled.col_indices
    plans: List[List[UpdateStep]] = []
    for i in range(filled.nrows):
        start = int(ro[i])
        steps: List[UpdateStep] = []
        for slot in range(start, int(diag_index[i])):
            d = int(ci[slot])
            u_start = int(diag_index[d]) + 1
            u_end = int(ro[d + 1])
            targets = lookups[i].offsets(ci[u_start:u_end])
            if targets.size and targets.min() == ABSENT:
                # fill1 guarantees a superset; reaching this means a corrupted pattern
                raise AssertionError(f"row {i}: update from row {d} misses the filled pattern")
            steps.append((slot, d, u_start, u_end, targets + start))
        plans.append(steps)
    return plans


def symbolic_analyze(matrix: CsrMatrix, options: Optional[AnalyzeOptions] = None) -> SymbolicFactors:
    """
    Run the one-time analysis pipeline on `matrix`.

    matching/scaling (optional) -> column permutation onto the diagonal ->
    symmetrized pattern -> AMD (optional) -> symmetric permutation -> fill1 ->
    lookups, scatter map and update plans.

    Args:
        matrix: Square, structurally nonsingular CSR matrix
        options: AnalyzeOptions

    Returns:
        SymbolicFactors
    """
    options = options or AnalyzeOptions()
    if matrix.nrows != matrix.ncols:
        raise DimensionMismatchError(f"symbolic_analyze needs a square matrix, got {matrix.shape}")
    n = matrix.nrows
    source = matrix.pattern()

    if options.use_scaling:
        match = mc64_scale(matrix)
        scaling = match.scaling
        col_perm = match.col_perm
    else:
        match = None
        scaling = DiagonalScaling.identity(n)
        col_perm = Permutation.identity(n)

    matched = permute_columns(source, col_perm)
    amd = amd_order(symmetrized_pattern(matched)) if options.use_amd else Permutation.identity(n)
    transformed = permute_symmetric(matched, amd)
    filled = fill1_pattern(transformed)

    ro = filled.row_offsets
    ci = filled.col_indices
    lookups = [build_lookup(ci[ro[i]:ro[i + 1]]) for i in range(n)]
    diag_pos = np.array([lookups[i].lookup(i) for i in range(n)], dtype=INDEX_DTYPE)
    diag_index = ro[:-1] + diag_pos

    # Scatter map: source entry (r, c) lands at B[amd(r), amd(q(c))]
    b_rows = amd.forward[source.row_ids]
    b_cols = amd.forward[col_perm.forward[source.col_indices]]
    scatter_map = np.empty(source.nnz, dtype=INDEX_DTYPE)
    by_row = np.argsort(b_rows, kind='stable')
    bounds = np.searchsorted(b_rows[by_row], np.arange(n + 1))
    for k in range(n):
        entries = by_row[bounds[k]:bounds[k + 1]]
        if entries.size:
            scatter_map[entries] = lookups[k].offsets(b_cols[entries]) + ro[k]

    row_plans = _build_row_plans(filled, lookups, diag_index)

    bitmap_rows = sum(1 for lk in lookups if lk.variant == 'bitmap')
    stats = {
        'nnz_source': float(source.nnz),
        'nnz_filled': float(filled.nnz),
        'fill_in': float(filled.nnz - transformed.nnz),
        'fill_ratio': float(filled.nnz) / max(source.nnz, 1),
        'bitmap_rows': float(bitmap_rows),
        'hash_rows': float(n - bitmap_rows),
    }
    logger.info(f"Symbolic analysis: n={n}, nnz(A)={source.nnz}, nnz(L+U)={filled.nnz}, "
                f"fill ratio {stats['fill_ratio']:.2f}, scaling={'on' if options.use_scaling else 'off'}, "
                f"ordering={'amd' if options.use_amd else 'natural'}")

    return SymbolicFactors(
        n=n,
        combined_pattern=filled,
        diag_pos=diag_pos,
        row_lookup=lookups,
        match=match,
        amd=amd,
        source_pattern=source,
        col_perm=col_perm,
        scaling=scaling,
        scatter_map=scatter_map,
        entry_row_scale=scaling.row_scale[source.row_ids],
        entry_col_scale=scaling.col_scale[source.col_indices],
        row_plans=row_plans,
        options=options,
        stats=stats,
    )
