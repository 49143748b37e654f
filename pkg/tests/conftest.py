"""Shared fixtures; puts the repository root on sys.path."""

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from sparse_core import CsrMatrix  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


@pytest.fixture
def two_by_two():
    """[[4, 3], [6, 3]]: LU without pivoting gives l10 = 1.5, U = [[4, 3], [0, -1.5]]."""
    return CsrMatrix.from_dense([[4.0, 3.0], [6.0, 3.0]])


@pytest.fixture(autouse=True)
def _isolate_logs(tmp_path, monkeypatch):
    """Keep default log files out of the working tree."""
    monkeypatch.chdir(tmp_path)
