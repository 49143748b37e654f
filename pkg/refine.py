#!/usr/bin/env python3
"""
Iterative Refinement

Improves a direct-solve solution using the LU factors as a preconditioner:
- fgmres_refine: right-preconditioned flexible GMRES without restart,
  CGS2 orthogonalization, Givens-rotation least squares, best-iterate return
- classic_refine: x <- x + M^-1 (b - A x) while the residual decreases
- refine: dispatch on the configured method

Residuals are always measured on the original system, ||b - A x||_2 / ||b||_2.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from solver_errors import DimensionMismatchError, InvalidConfigError
from sparse_core import CsrMatrix, spmv

logger = logging.getLogger(__name__)

# Configuration
REFINE_MAX_ITERATIONS = 20
REFINE_TOLERANCE = 1e-14
BREAKDOWN_NORM = 1e-300
REFINE_METHODS = ('fgmres', 'classic')

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = REFINE_MAX_ITERATIONS
    tolerance: float = REFINE_TOLERANCE
    enabled: bool = True
    method: str = 'fgmres'

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.tolerance > 0:
            raise InvalidConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if self.method not in REFINE_METHODS:
            raise InvalidConfigError(f"Invalid refinement method: {self.method}")


@dataclass
class RefineOutcome:
    """
    Result of one refinement run.

    residual_history[0] is the residual of x0; later entries are the
    per-iteration residuals (least-squares estimates for FGMRES).
    final_residual is the true relative residual of the returned x.
    """

    x: np.ndarray
    iterations: int
    residual_history: List[float]
    converged: bool
    final_residual: float
    method: str = 'fgmres'
    orthogonality_loss: float = 0.0
    breakdown: bool = False


class OrthonormalizeResult(NamedTuple):
    coefficients: np.ndarray
    vector: np.ndarray
    norm: float
    breakdown: bool


def as_operator(operator: Union[CsrMatrix, Operator]) -> Operator:
    """Wrap a CsrMatrix as a matvec; callables pass through."""
    if isinstance(operator, CsrMatrix):
        return lambda v: spmv(operator, v)
    return operator


def cgs2_orthonormalize(basis: Sequence[np.ndarray], v: np.ndarray) -> OrthonormalizeResult:
    """
    Orthonormalize v against an orthonormal basis with two classical Gram-Schmidt passes.

    Args:
        basis: Mutually orthonormal vectors
        v: Vector to orthonormalize

    Returns:
        OrthonormalizeResult; the coefficients sum both passes. On breakdown
        (remaining norm <= 1e-300) the vector is returned unnormalized.
    """
    w = np.array(v, dtype=np.float64, copy=True)
    if len(basis) == 0:
        coefficients = np.zeros(0)
    else:
        V = np.asarray(basis, dtype=np.float64)
        first = V @ w
        w -= V.T @ first
        second = V @ w
        w -= V.T @ second
        coefficients = first + second
    norm = float(np.linalg.norm(w))
    if norm <= BREAKDOWN_NORM:
        return OrthonormalizeResult(coefficients, w, norm, True)
    return OrthonormalizeResult(coefficients, w / norm, norm, False)


def orthogonality_loss(basis: Sequence[np.ndarray]) -> float:
    """max |<v_i, v_j> - delta_ij| over the basis."""
    if len(basis) == 0:
        return 0.0
    V = np.asarray(basis)
    return float(np.max(np.abs(V @ V.T - np.eye(len(basis)))))


def _givens(a: float, b: float):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def _relative_residual(A: Operator, b: np.ndarray, x: np.ndarray, bnorm: float) -> float:
    return float(np.linalg.norm(b - A(x))) / bnorm


def _prepare(A, b, x0):
    b = np.asarray(b, dtype=np.float64)
    x0 = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=np.float64)
    if x0.shape != b.shape:
        raise DimensionMismatchError(f"x0 has shape {x0.shape}, b has shape {b.shape}")
    return as_operator(A), b, x0


def fgmres_refine(A: Union[CsrMatrix, Operator], b, x0, precond: Operator,
                  config: Optional[RefineConfig] = None) -> RefineOutcome:
    """
    Flexible GMRES refinement starting from a direct solution.

    Args:
        A: Original matrix or its matvec
        b: Right-hand side
        x0: Starting iterate (the direct-solve output)
        precond: z = M^-1 v, typically solve_system with the current factors
        config: RefineConfig

    Returns:
        RefineOutcome holding the best of x0 and the final iterate
    """
    config = config or RefineConfig()
    A, b, x0 = _prepare(A, b, x0)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return RefineOutcome(np.zeros_like(b), 0, [0.0], True, 0.0)

    r0 = b - A(x0)
    beta = float(np.linalg.norm(r0))
    rel0 = beta / bnorm
    history = [rel0]
    if rel0 <= config.tolerance:
        return RefineOutcome(x0.copy(), 0, history, True, rel0)

    m = config.max_iterations
    V: List[np.ndarray] = [r0 / beta]
    Z: List[np.ndarray] = []
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta

    x_best, rel_best = x0.copy(), rel0
    iterations = 0
    breakdown = False
    for k in range(m):
        z = np.asarray(precond(V[k]), dtype=np.float64)
        Z.append(z)
        step = cgs2_orthonormalize(V, A(z))
        H[:k + 1, k] = step.coefficients
        H[k + 1, k] = step.norm

        for i in range(k):
            upper = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = upper
        cs[k], sn[k] = _givens(H[k, k], H[k + 1, k])
        H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
        H[k + 1, k] = 0.0
        if H[k, k] == 0.0:
            # singular least-squares system; finish with the first k columns
            if k > 0:
                x = x0 + np.asarray(Z[:k]).T @ solve_triangular(H[:k, :k], g[:k])
                rel = _relative_residual(A, b, x, bnorm)
                if rel < rel_best:
                    x_best, rel_best = x, rel
            break
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]

        iterations = k + 1
        estimate = abs(g[k + 1]) / bnorm
        history.append(estimate)
        breakdown = step.breakdown
        logger.debug(f"fgmres iteration {iterations}: estimated residual {estimate:.3e}")

        if estimate <= config.tolerance or breakdown or iterations == m:
            y = solve_triangular(H[:k + 1, :k + 1], g[:k + 1])
            x = x0 + np.asarray(Z).T @ y
            rel = _relative_residual(A, b, x, bnorm)
            if rel < rel_best:
                x_best, rel_best = x, rel
            if rel <= config.tolerance or breakdown:
                break
        if breakdown:
            break
        V.append(step.vector)

    converged = rel_best <= config.tolerance
    loss = orthogonality_loss(V)
    if not converged:
        logger.debug(f"fgmres stopped after {iterations} iterations at residual {rel_best:.3e}")
    return RefineOutcome(x=x_best, iterations=iterations, residual_history=history, converged=converged,
                         final_residual=rel_best, method='fgmres', orthogonality_loss=loss,
                         breakdown=breakdown)


def classic_refine(A: Union[CsrMatrix, Operator], b, x0, precond: Operator,
                   config: Optional[RefineConfig] = None) -> RefineOutcome:
    """
    Wilkinson-style refinement: solve M d = r, x <- x + d.

    Stops at the tolerance, at the iteration cap, or when a correction fails
    to reduce the residual (that correction is discarded).
    """
    config = config or RefineConfig(method='classic')
    A, b, x = _prepare(A, b, x0)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return RefineOutcome(np.zeros_like(b), 0, [0.0], True, 0.0, method='classic')

    x = x.copy()
    r = b - A(x)
    rel = float(np.linalg.norm(r)) / bnorm
    history = [rel]
    iterations = 0
    while rel > config.tolerance and iterations < config.max_iterations:
        candidate = x + np.asarray(precond(r), dtype=np.float64)
        r_candidate = b - A(candidate)
        rel_candidate = float(np.linalg.norm(r_candidate)) / bnorm
        iterations += 1
        if not rel_candidate < rel:
            break
        x, r, rel = candidate, r_candidate, rel_candidate
        history.append(rel)

    return RefineOutcome(x=x, iterations=iterations, residual_history=history,
                         converged=rel <= config.tolerance, final_residual=rel, method='classic')


def refine(method: str, A: Union[CsrMatrix, Operator], b, x0, precond: Operator,
           config: Optional[RefineConfig] = None) -> RefineOutcome:
    """Run the named refinement method; a disabled config returns x0 untouched."""
    if method not in REFINE_METHODS:
        raise InvalidConfigError(f"Invalid refinement method: {method}")
    if config is not None and not config.enabled:
        A, b, x0 = _prepare(A, b, x0)
        bnorm = float(np.linalg.norm(b)) or 1.0
        rel = _relative_residual(A, b, x0, bnorm)
        return RefineOutcome(x0.copy(), 0, [rel], rel <= config.tolerance, rel, method=method)
    if method == 'fgmres':
        return fgmres_refine(A, b, x0, precond, config)
    if method == 'classic':
        return classic_refine(A, b, x0, precond, config)
