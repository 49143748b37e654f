#!/usr/bin/env python3
"""
Exception hierarchy for the refactorization solver.

Library code raises these; only the command-line driver catches them and
turns them into exit codes.
"""

from typing import Iterable, List, Optional


class SolverError(Exception):
    """Base class for every error raised by the solver modules."""


class MatrixMarketError(SolverError, ValueError):
    """Malformed or unsupported Matrix Market input."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        self.reason = message
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class DimensionMismatchError(SolverError, ValueError):
    """Operand shapes do not agree."""


class StructurallySingularError(SolverError):
    """No perfect matching exists; `rows` is the set that could not be matched."""

    def __init__(self, rows: Iterable[int], message: str = ""):
        self.rows: List[int] = sorted(int(r) for r in rows)
        detail = message or f"structurally singular: {len(self.rows)} unmatched row(s) {self.rows[:10]}"
        super().__init__(detail)


class ZeroDiagonalError(SolverError):
    """The permuted matrix has no stored diagonal entry in row `row`."""

    def __init__(self, row: int):
        self.row = int(row)
        super().__init__(f"structurally zero diagonal at row {self.row}")


class ZeroPivotError(SolverError):
    """A pivot fell at or below the pivot floor during numeric factorization."""

    def __init__(self, row: int, value: float):
        self.row = int(row)
        self.value = float(value)
        super().__init__(f"zero pivot at row {self.row} (|u_ii| = {abs(self.value):.3e})")


class RequiresReanalysisError(SolverError):
    """The matrix pattern differs from the analyzed one; rerun symbolic analysis."""


class PatternMismatchError(SolverError, ValueError):
    """A system in a sequence does not share the sequence pattern."""

    def __init__(self, index: int, message: str = ""):
        self.index = int(index)
        super().__init__(message or f"pattern mismatch at system index {self.index}")


class InvalidConfigError(SolverError, ValueError):
    """Configuration values are out of range or inconsistent."""


class AsymmetricMatrixError(SolverError, ValueError):
    """A block required to be symmetric is not (pattern or values)."""


class ReportFormatError(SolverError, ValueError):
    """A saved benchmark report cannot be parsed."""
