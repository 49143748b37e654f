#!/usr/bin/env python3
"""
Ordering and Scaling

Preprocessing run once per sparsity pattern:
1. Maximum-product matching with dual-derived row/column scalings
   (MC64 job 5 style). Large entries are moved onto the diagonal and the
   scaled matrix has unit diagonal and off-diagonals of magnitude <= 1.
2. Approximate minimum degree ordering on a symmetric pattern, using a
   quotient graph of variables and elements.

Both are pure single-threaded transformations.
"""

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Set

import numpy as np

from solver_errors import DimensionMismatchError, StructurallySingularError
from sparse_core import CsrMatrix, DiagonalScaling, Permutation

logger = logging.getLogger(__name__)

INF = math.inf


@dataclass(frozen=True, eq=False)
class MatchingResult:
    """
    Matching plus scalings.

    col_perm.forward[j] is the row that original column j is matched to, so
    column j lands at position forward[j] and matched entries sit on the
    diagonal of D_r A D_c Q^T.
    """

    col_perm: Permutation
    scaling: DiagonalScaling
    matched_product: float  # sum of log|a| over matched entries

    @property
    def row_match(self) -> np.ndarray:
        """Original column matched to each row."""
        return self.col_perm.inverse


def _log_costs(matrix: CsrMatrix) -> tuple:
    """c_ij = log(max_k |a_kj|) - log|a_ij|; zero entries are not candidates."""
    magnitude = np.abs(matrix.values)
    usable = magnitude > 0
    col_max = np.zeros(matrix.ncols)
    np.maximum.at(col_max, matrix.col_indices[usable], magnitude[usable])
    costs = np.full(matrix.nnz, INF)
    with np.errstate(divide='ignore'):
        costs[usable] = np.log(col_max[matrix.col_indices[usable]]) - np.log(magnitude[usable])
    return costs, col_max, usable


def mc64_scale(matrix: CsrMatrix) -> MatchingResult:
    """
    Compute a maximum-product perfect matching and equilibrating scalings.

    The product maximization is solved as a minimum-cost assignment on the
    log-cost transform with shortest augmenting paths (Dijkstra on reduced
    costs) and row/column potentials u, v. At the end u_i + v_j <= c_ij with
    equality on matched entries, so D_r = exp(u) and D_c = exp(v) / colmax give
    |d_r a d_c| <= 1 everywhere and == 1 on the matching.

    Args:
        matrix: Square CSR matrix

    Returns:
        MatchingResult

    Raises:
        StructurallySingularError: no perfect matching over the nonzero entries
    """
    if matrix.nrows != matrix.ncols:
        raise DimensionMismatchError(f"mc64_scale needs a square matrix, got {matrix.shape}")
    n = matrix.nrows
    costs, col_max, usable = _log_costs(matrix)

    # Candidate lists per row: [(col, cost), ...] over nonzero entries only
    ro = matrix.row_offsets
    cols_all = matrix.col_indices.tolist()
    costs_all = costs.tolist()
    usable_all = usable.tolist()
    candidates: List[List[tuple]] = []
    for i in range(n):
        candidates.append([(cols_all[p], costs_all[p]) for p in range(ro[i], ro[i + 1]) if usable_all[p]])

    empty_rows = [i for i in range(n) if not candidates[i]]
    if empty_rows:
        raise StructurallySingularError(empty_rows, f"structurally singular: rows {empty_rows[:10]} have no nonzero entries")
    empty_cols = np.flatnonzero(col_max == 0)
    if empty_cols.size:
        logger.debug(f"mc64: columns {empty_cols[:10].tolist()} have no nonzero entries")

    u = [min(c for _, c in candidates[i]) for i in range(n)]
    v = [0.0] * n
    row_match = [-1] * n
    col_match = [-1] * n

    # Cheap start: match rows to free columns on tight edges
    for i in range(n):
        for j, c in candidates[i]:
            if col_match[j] < 0 and c - u[i] - v[j] <= 0.0:
                row_match[i] = j
                col_match[j] = i
                break

    unmatched: List[int] = []
    for s in range(n):
        if row_match[s] >= 0:
            continue

        dist: Dict[int, float] = {}
        pred: Dict[int, int] = {}
        final: Dict[int, float] = {}
        heap: List[tuple] = []
        for j, c in candidates[s]:
            d = max(c - u[s] - v[j], 0.0)
            if d < dist.get(j, INF):
                dist[j] = d
                pred[j] = s
                heapq.heappush(heap, (d, j))

        sink = -1
        shortest = INF
        while heap:
            d, j = heapq.heappop(heap)
            if j in final or d > dist[j]:
                continue
            final[j] = d
            if col_match[j] < 0:
                sink, shortest = j, d
                break
            i = col_match[j]
            for k, c in candidates[i]:
                if k in final:
                    continue
                nd = d + max(c - u[i] - v[k], 0.0)
                if nd < dist.get(k, INF):
                    dist[k] = nd
                    pred[k] = i
                    heapq.heappush(heap, (nd, k))

        if sink < 0:
            unmatched.append(s)
            continue

        # Potential update keeps every matched edge tight and reduced costs >= 0
        for j, dj in final.items():
            if j == sink:
                continue
            i = col_match[j]
            v[j] += dj - shortest
            u[i] -= dj - shortest
        u[s] += shortest

        j = sink
        while True:
            i = pred[j]
            previous = row_match[i]
            row_match[i] = j
            col_match[j] = i
            if i == s:
                break
            j = previous

    if unmatched:
        raise StructurallySingularError(unmatched)

    row_scale = np.exp(np.array(u))
    col_scale = np.exp(np.array(v)) / col_max
    matched_values = np.empty(n)
    for i in range(n):
        cols, vals = matrix.row(i)
        matched_values[i] = vals[np.searchsorted(cols, row_match[i])]
    matched_product = float(np.sum(np.log(np.abs(matched_values))))

    logger.debug(f"mc64: n={n}, log product={matched_product:.6g}")
    return MatchingResult(
        col_perm=Permutation(np.array(col_match, dtype=np.int64)),
        scaling=DiagonalScaling(row_scale, col_scale),
        matched_product=matched_product,
    )


def amd_order(pattern: CsrMatrix) -> Permutation:
    """
    Approximate minimum degree ordering of a symmetric pattern.

    Quotient-graph elimination: the pivot of minimum approximate external
    degree (lowest index on ties) becomes an element absorbing the elements
    adjacent to it; each variable of the new element gets the bound
        min(n_left - 1, d_old + |Lp \\ i|, |A_i| + |Lp \\ i| + sum |Le \\ Lp|).
    No aggressive absorption and no dense-row postponement. Diagonal entries
    are ignored.

    Args:
        pattern: Square pattern, expected symmetric (use symmetrized_pattern)

    Returns:
        Permutation with forward[v] = elimination step of v
    """
    if pattern.nrows != pattern.ncols:
        raise DimensionMismatchError(f"amd_order needs a square pattern, got {pattern.shape}")
    n = pattern.nrows
    if n == 0:
        return Permutation.identity(0)

    adjacency: List[Set[int]] = [set() for _ in range(n)]
    rows = pattern.row_ids.tolist()
    cols = pattern.col_indices.tolist()
    for i, j in zip(rows, cols):
        if i != j:
            adjacency[i].add(j)
            adjacency[j].add(i)

    elements_of: List[Set[int]] = [set() for _ in range(n)]
    element_vars: Dict[int, Set[int]] = {}
    degree = [len(adj) for adj in adjacency]
    eliminated = [False] * n
    heap = [(degree[i], i) for i in range(n)]
    heapq.heapify(heap)
    order: List[int] = []

    while heap:
        d, p = heapq.heappop(heap)
        if eliminated[p] or d != degree[p]:
            continue
        eliminated[p] = True
        order.append(p)

        absorbed = elements_of[p]
        new_element = set(adjacency[p])
        for e in absorbed:
            new_element |= element_vars.pop(e)
        new_element.discard(p)
        element_vars[p] = new_element
        adjacency[p] = set()
        elements_of[p] = set()

        remaining = n - len(order)
        members = sorted(new_element)
        for i in members:
            adjacency[i].discard(p)
            adjacency[i] -= new_element
            elements_of[i] -= absorbed
            elements_of[i].add(p)

        size = len(new_element)
        for i in members:
            external = len(adjacency[i]) + size - 1
            for e in elements_of[i]:
                if e != p:
                    external += len(element_vars[e] - new_element)
            bound = min(remaining - 1, degree[i] + size - 1, external)
            if bound != degree[i]:
                degree[i] = bound
            heapq.heappush(heap, (degree[i], i))

    logger.debug(f"amd: ordered {n} vertices")
    return Permutation.from_order(order)
