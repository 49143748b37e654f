#!/usr/bin/env python3
"""
Sparse Matrix Core

Storage and plumbing shared by every solver stage:
- COO carrier and CSR storage (64-bit indices, float64 values)
- Permutation and diagonal scaling types
- COO to CSR conversion, symmetric permutation, scaling, matrix-vector product
- Matrix Market coordinate I/O (real, general or symmetric)

All matrix types are immutable once constructed and may be read from several
threads at the same time.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from solver_errors import DimensionMismatchError, MatrixMarketError

logger = logging.getLogger(__name__)

# Configuration
INDEX_DTYPE = np.int64
VALUE_DTYPE = np.float64
MM_PRECISION = 17  # digits needed for an exact float64 round trip
SUPPORTED_FIELDS = ('real', 'integer')
SUPPORTED_SYMMETRIES = ('general', 'symmetric')

PathLike = Union[str, Path]
DenseVector = np.ndarray


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def as_vector(values, n: Optional[int] = None) -> DenseVector:
    """
    Copy `values` into a finite float64 vector.

    Args:
        values: Array-like of reals
        n: Expected length (checked when given)

    Returns:
        New contiguous float64 array
    """
    vec = np.array(values, dtype=VALUE_DTYPE, copy=True).reshape(-1)
    if n is not None and vec.size != n:
        raise DimensionMismatchError(f"vector length {vec.size} != {n}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("vector contains non-finite entries")
    return vec


@dataclass(frozen=True, eq=False)
class CooMatrix:
    """Triplet carrier used before conversion to CSR."""

    nrows: int
    ncols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=INDEX_DTYPE).reshape(-1)
        cols = np.asarray(self.cols, dtype=INDEX_DTYPE).reshape(-1)
        values = np.asarray(self.values, dtype=VALUE_DTYPE).reshape(-1)
        if not (rows.size == cols.size == values.size):
            raise DimensionMismatchError("COO rows, cols and values differ in length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.nrows or cols.min() < 0 or cols.max() >= self.ncols:
                raise IndexError(f"COO index out of range for {self.nrows}x{self.ncols}")
        object.__setattr__(self, 'rows', _frozen(rows.copy()))
        object.__setattr__(self, 'cols', _frozen(cols.copy()))
        object.__setattr__(self, 'values', _frozen(values.copy()))

    @classmethod
    def from_entries(cls, nrows: int, ncols: int,
                     entries: Iterable[Tuple[int, int, float]]) -> 'CooMatrix':
        entries = list(entries)
        if not entries:
            return cls(nrows, ncols, np.empty(0), np.empty(0), np.empty(0))
        rows, cols, values = zip(*entries)
        return cls(nrows, ncols, np.array(rows), np.array(cols), np.array(values, dtype=VALUE_DTYPE))

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def entries(self) -> List[Tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.values)]

    def canonicalize(self) -> 'CooMatrix':
        """Sort by (row, col) and sum duplicates; explicit zeros stay in the pattern."""
        if self.nnz == 0:
            return self
        order = np.lexsort((self.cols, self.rows))
        rows, cols, values = self.rows[order], self.cols[order], self.values[order]
        keep = np.ones(rows.size, dtype=bool)
        keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(keep)
        summed = np.add.reduceat(values, starts) if starts.size < values.size else values
        return CooMatrix(self.nrows, self.ncols, rows[starts], cols[starts], summed)


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row storage with sorted, unique columns per row."""

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'nrows', int(self.nrows))
        object.__setattr__(self, 'ncols', int(self.ncols))
        object.__setattr__(self, 'row_offsets', _frozen(np.array(self.row_offsets, dtype=INDEX_DTYPE).reshape(-1)))
        object.__setattr__(self, 'col_indices', _frozen(np.array(self.col_indices, dtype=INDEX_DTYPE).reshape(-1)))
        object.__setattr__(self, 'values', _frozen(np.array(self.values, dtype=VALUE_DTYPE).reshape(-1)))
        self.validate()

    def validate(self) -> None:
        """Raise ValueError when the CSR structural invariants do not hold."""
        ro, ci = self.row_offsets, self.col_indices
        if ro.size != self.nrows + 1 or ro[0] != 0:
            raise ValueError("row_offsets must have length nrows+1 and start at 0")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if ci.size != ro[-1] or self.values.size != ro[-1]:
            raise ValueError("nnz does not match row_offsets[nrows]")
        if ci.size == 0:
            return
        if ci.min() < 0 or ci.max() >= self.ncols:
            raise ValueError("column index out of range")
        steps = np.diff(ci)
        row_start = np.zeros(ci.size, dtype=bool)
        row_start[ro[:-1][ro[:-1] < ci.size]] = True
        if np.any(steps[~row_start[1:]] <= 0):
            raise ValueError("column indices must be strictly increasing within each row")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @cached_property
    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return _frozen(np.repeat(np.arange(self.nrows, dtype=INDEX_DTYPE), np.diff(self.row_offsets)))

    @cached_property
    def scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values.copy(), self.col_indices.copy(), self.row_offsets.copy()),
                             shape=self.shape)

    def row(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        start, end = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[start:end], self.values[start:end]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=VALUE_DTYPE)
        dense[self.row_ids, self.col_indices] = self.values
        return dense

    def to_coo(self) -> CooMatrix:
        return CooMatrix(self.nrows, self.ncols, self.row_ids, self.col_indices, self.values)

    def with_values(self, values) -> 'CsrMatrix':
        return CsrMatrix(self.nrows, self.ncols, self.row_offsets, self.col_indices, values)

    def pattern(self) -> 'CsrMatrix':
        return self.with_values(np.ones(self.nnz, dtype=VALUE_DTYPE))

    def transpose(self) -> 'CsrMatrix':
        return coo_to_csr(CooMatrix(self.ncols, self.nrows, self.col_indices, self.row_ids, self.values))

    @classmethod
    def from_dense(cls, dense) -> 'CsrMatrix':
        """Build CSR from a dense array, storing only nonzero entries."""
        dense = np.asarray(dense, dtype=VALUE_DTYPE)
        rows, cols = np.nonzero(dense)
        return coo_to_csr(CooMatrix(dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols]))

    @classmethod
    def identity(cls, n: int) -> 'CsrMatrix':
        idx = np.arange(n, dtype=INDEX_DTYPE)
        return cls(n, n, np.arange(n + 1, dtype=INDEX_DTYPE), idx, np.ones(n))


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection on 0..n-1; forward[i] is the destination of i."""

    forward: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        forward = np.array(self.forward, dtype=INDEX_DTYPE).reshape(-1)
        n = forward.size
        if n and (forward.min() < 0 or forward.max() >= n or np.unique(forward).size != n):
            raise ValueError("permutation forward array is not a bijection")
        inverse = np.empty(n, dtype=INDEX_DTYPE)
        inverse[forward] = np.arange(n, dtype=INDEX_DTYPE)
        if self.inverse is not None and not np.array_equal(np.asarray(self.inverse), inverse):
            raise ValueError("inverse does not invert forward")
        object.__setattr__(self, 'forward', _frozen(forward))
        object.__setattr__(self, 'inverse', _frozen(inverse))

    @classmethod
    def identity(cls, n: int) -> 'Permutation':
        return cls(np.arange(n, dtype=INDEX_DTYPE))

    @classmethod
    def from_order(cls, order) -> 'Permutation':
        """Permutation sending order[k] to position k (elimination order)."""
        order = np.asarray(order, dtype=INDEX_DTYPE)
        forward = np.empty(order.size, dtype=INDEX_DTYPE)
        forward[order] = np.arange(order.size, dtype=INDEX_DTYPE)
        return cls(forward)

    @property
    def size(self) -> int:
        return int(self.forward.size)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.forward, np.arange(self.size)))

    def inverted(self) -> 'Permutation':
        return Permutation(self.inverse)


@dataclass(frozen=True, eq=False)
class DiagonalScaling:
    """Row and column scale factors forming D_r A D_c."""

    row_scale: np.ndarray
    col_scale: np.ndarray

    def __post_init__(self):
        row_scale = np.array(self.row_scale, dtype=VALUE_DTYPE).reshape(-1)
        col_scale = np.array(self.col_scale, dtype=VALUE_DTYPE).reshape(-1)
        for name, scale in (('row', row_scale), ('column', col_scale)):
            if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
                raise ValueError(f"{name} scale entries must be positive and finite")
        object.__setattr__(self, 'row_scale', _frozen(row_scale))
        object.__setattr__(self, 'col_scale', _frozen(col_scale))

    @classmethod
    def identity(cls, n: int) -> 'DiagonalScaling':
        return cls(np.ones(n), np.ones(n))

    def inverted(self) -> 'DiagonalScaling':
        return DiagonalScaling(1.0 / self.row_scale, 1.0 / self.col_scale)


def coo_to_csr(coo: CooMatrix) -> CsrMatrix:
    """
    Convert a COO carrier to CSR with sorted rows.

    Duplicates are summed on the way, so non-canonical input is accepted too.
    """
    canon = coo.canonicalize()
    counts = np.bincount(canon.rows, minlength=canon.nrows) if canon.nnz else np.zeros(canon.nrows, dtype=INDEX_DTYPE)
    row_offsets = np.zeros(canon.nrows + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_offsets[1:])
    return CsrMatrix(canon.nrows, canon.ncols, row_offsets, canon.cols, canon.values)


def spmv(matrix: CsrMatrix, x) -> DenseVector:
    """
    Compute y = A x.

    Each y_i is accumulated left to right over the stored row, which keeps
    repeated calls bitwise identical.
    """
    x = np.asarray(x, dtype=VALUE_DTYPE).reshape(-1)
    if x.size != matrix.ncols:
        raise DimensionMismatchError(f"spmv: matrix has {matrix.ncols} columns, vector has {x.size} entries")
    return matrix.scipy @ x


def _require_square(matrix: CsrMatrix, what: str) -> None:
    if matrix.nrows != matrix.ncols:
        raise DimensionMismatchError(f"{what}: matrix must be square, got {matrix.nrows}x{matrix.ncols}")


def permute_symmetric(matrix: CsrMatrix, perm: Permutation) -> CsrMatrix:
    """Return B = P A P^T, i.e. B[p(i), p(j)] = A[i, j]."""
    _require_square(matrix, "permute_symmetric")
    if perm.size != matrix.nrows:
        raise DimensionMismatchError(f"permutation size {perm.size} != matrix size {matrix.nrows}")
    rows = perm.forward[matrix.row_ids]
    cols = perm.forward[matrix.col_indices]
    return coo_to_csr(CooMatrix(matrix.nrows, matrix.ncols, rows, cols, matrix.values))


def permute_columns(matrix: CsrMatrix, perm: Permutation) -> CsrMatrix:
    """Return A Q^T: column j of A moves to column perm.forward[j]."""
    if perm.size != matrix.ncols:
        raise DimensionMismatchError(f"permutation size {perm.size} != column count {matrix.ncols}")
    cols = perm.forward[matrix.col_indices]
    return coo_to_csr(CooMatrix(matrix.nrows, matrix.ncols, matrix.row_ids, cols, matrix.values))


def apply_scaling(matrix: CsrMatrix, scaling: DiagonalScaling) -> CsrMatrix:
    """Return D_r A D_c with b_ij = D_r[i] * a_ij * D_c[j]."""
    if scaling.row_scale.size != matrix.nrows or scaling.col_scale.size != matrix.ncols:
        raise DimensionMismatchError("scaling dimensions do not match the matrix")
    values = scaling.row_scale[matrix.row_ids] * matrix.values * scaling.col_scale[matrix.col_indices]
    return matrix.with_values(values)


def pattern_equal(a: CsrMatrix, b: CsrMatrix) -> bool:
    """True iff both matrices have the same shape, row offsets and column indices."""
    return (a.shape == b.shape
            and np.array_equal(a.row_offsets, b.row_offsets)
            and np.array_equal(a.col_indices, b.col_indices))


def symmetrized_pattern(matrix: CsrMatrix) -> CsrMatrix:
    """Pattern of A + A^T with unit values."""
    _require_square(matrix, "symmetrized_pattern")
    rows = np.concatenate([matrix.row_ids, matrix.col_indices])
    cols = np.concatenate([matrix.col_indices, matrix.row_ids])
    union = coo_to_csr(CooMatrix(matrix.nrows, matrix.ncols, rows, cols, np.ones(rows.size)))
    return union.pattern()


# ---------------- Matrix Market I/O ----------------

def _read_banner(path: Path) -> Tuple[int, int, int, str, str, str]:
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline()
    if not first.startswith('%%MatrixMarket'):
        raise MatrixMarketError("missing %%MatrixMarket banner", line=1, path=str(path))
    tokens = first.split()
    if len(tokens) != 5 or tokens[1].lower() != 'matrix':
        raise MatrixMarketError(f"malformed banner: {first.strip()!r}", line=1, path=str(path))
    fmt, fld, symmetry = (t.lower() for t in tokens[2:5])
    if fmt != 'coordinate':
        raise MatrixMarketError(f"unsupported format: {fmt}", line=1, path=str(path))
    if fld not in SUPPORTED_FIELDS:
        raise MatrixMarketError(f"unsupported field: {fld}", line=1, path=str(path))
    if symmetry not in SUPPORTED_SYMMETRIES:
        raise MatrixMarketError(f"unsupported symmetry: {symmetry}", line=1, path=str(path))
    try:
        nrows, ncols, nnz, _, _, _ = scipy.io.mminfo(str(path))
    except (ValueError, IndexError) as e:
        raise MatrixMarketError(f"malformed header: {e}", line=1, path=str(path)) from e
    return int(nrows), int(ncols), int(nnz), fmt, fld, symmetry


def _diagnose_body(path: Path, nrows: int, ncols: int, nnz: int) -> MatrixMarketError:
    """Scan the file to find the first offending line after a failed parse."""
    seen = 0
    size_line_read = False
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith('%'):
                continue
            if not size_line_read:
                size_line_read = True
                continue
            tokens = text.split()
            if len(tokens) != 3:
                return MatrixMarketError(f"expected 'row col value', got {text!r}", line=line_no, path=str(path))
            try:
                i, j, _ = int(tokens[0]), int(tokens[1]), float(tokens[2])
            except ValueError:
                return MatrixMarketError(f"unparsable entry {text!r}", line=line_no, path=str(path))
            if not (1 <= i <= nrows and 1 <= j <= ncols):
                return MatrixMarketError(f"index ({i}, {j}) out of range for {nrows}x{ncols}",
                                         line=line_no, path=str(path))
            seen += 1
    if seen != nnz:
        return MatrixMarketError(f"declared {nnz} entries, found {seen}", path=str(path))
    return MatrixMarketError("unreadable coordinate body", path=str(path))


def mm_read(path: PathLike) -> CooMatrix:
    """
    Read a Matrix Market coordinate file into a canonical COO matrix.

    Symmetric storage is expanded to general, duplicates are summed and
    indices become 0-based.

    Args:
        path: File to read

    Returns:
        Canonicalized CooMatrix
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Matrix Market file not found: {path}")

    nrows, ncols, nnz, _, _, symmetry = _read_banner(path)
    try:
        raw = scipy.io.mmread(str(path))
    except (ValueError, IndexError, TypeError, RuntimeError) as e:
        raise _diagnose_body(path, nrows, ncols, nnz) from e

    coo = sp.coo_matrix(raw)
    rows, cols, values = coo.row, coo.col, coo.data.astype(VALUE_DTYPE)
    if symmetry == 'symmetric' and rows.size > nnz:
        logger.debug(f"{path.name}: symmetric storage expanded from {nnz} to {rows.size} entries")

    matrix = CooMatrix(nrows, ncols, rows, cols, values).canonicalize()
    logger.debug(f"Read {path.name}: {nrows}x{ncols}, {matrix.nnz} entries ({symmetry})")
    return matrix


def mm_write(matrix: CsrMatrix, path: PathLike) -> None:
    """Write `matrix` as a general real coordinate file with round-trip precision."""
    path = Path(path)
    coo = sp.coo_matrix((matrix.values.copy(), (matrix.row_ids.copy(), matrix.col_indices.copy())),
                        shape=matrix.shape)
    scipy.io.mmwrite(str(path), coo, field='real', precision=MM_PRECISION, symmetry='general')
    logger.debug(f"Wrote {path}: {matrix.nrows}x{matrix.ncols}, {matrix.nnz} entries")


def mm_read_csr(path: PathLike) -> CsrMatrix:
    return coo_to_csr(mm_read(path))
