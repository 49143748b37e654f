#!/usr/bin/env python3
"""
KKT Sequence Harness

Builds and loads sequences of interior-method KKT systems that share one
sparsity pattern:

    K = [[H + D_y + delta_p I, J^T],
         [J,                  -delta_d I]]

Features:
- Block assembly with a stored diagonal in both blocks, so the pattern does
  not depend on mu or the regularizations
- Synthetic sequences: fixed grid-like Hessian and local Jacobian, barrier
  parameter reduced geometrically down to a floor, D_y = mu / y^2 with a set
  of active components whose y tracks mu
- Manufactured right-hand sides (rhs = K x_true) for forward-error checks
- Manifest-driven loading of exported sequences with pattern validation
- Export to Matrix Market + manifest + YAML sidecar
- Pattern-break injection for exercising the re-analysis policy

Usage:
    from kkt_harness import SequenceConfig, gen_sequence, save_sequence
    sequence = gen_sequence(SequenceConfig(n=200, m=80))
    save_sequence(sequence, "kkt_seq")
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import yaml

from solver_errors import (AsymmetricMatrixError, DimensionMismatchError, InvalidConfigError,
                           MatrixMarketError, PatternMismatchError)
from sparse_core import (INDEX_DTYPE, CooMatrix, CsrMatrix, DenseVector, coo_to_csr, mm_read, mm_read_csr,
                         mm_write, pattern_equal, spmv)

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_MU0 = 1e-1
DEFAULT_MU_MIN = 1e-7
DEFAULT_REDUCTION = 0.2
DEFAULT_REGULARIZATION = 1e-8
MANIFEST_NAME = 'manifest.txt'
SIDECAR_NAME = 'sequence.yaml'
CHORD_PROBABILITY = 0.25
EXTRA_JACOBIAN_PROBABILITY = 0.5

PathLike = Union[str, Path]


@dataclass(frozen=True)
class SequenceConfig:
    """Generator settings; YAML keys mirror the field names."""

    n: int = 200
    m: int = 80
    topology_seed: int = 0
    mu0: float = DEFAULT_MU0
    mu_min: float = DEFAULT_MU_MIN
    reduction: float = DEFAULT_REDUCTION
    delta_p: float = DEFAULT_REGULARIZATION
    delta_d: float = DEFAULT_REGULARIZATION
    trajectory_seed: int = 1
    rhs_seed: int = 2
    active_fraction: float = 0.2
    length: Optional[int] = None  # None: stop once mu reaches mu_min

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfigError(f"n must be >= 1, got {self.n}")
        if not 1 <= self.m <= self.n:
            raise InvalidConfigError(f"m must satisfy 1 <= m <= n, got m={self.m}, n={self.n}")
        if not self.mu0 > self.mu_min > 0:
            raise InvalidConfigError(f"need mu0 > mu_min > 0, got mu0={self.mu0}, mu_min={self.mu_min}")
        if not 0 < self.reduction < 1:
            raise InvalidConfigError(f"reduction factor must lie in (0, 1), got {self.reduction}")
        if self.delta_p < 0 or self.delta_d < 0:
            raise InvalidConfigError("regularizations must be >= 0")
        if not 0 <= self.active_fraction <= 1:
            raise InvalidConfigError(f"active_fraction must lie in [0, 1], got {self.active_fraction}")
        if self.length is not None and self.length < 1:
            raise InvalidConfigError("sequence length must be ≥ 1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SequenceConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfigError(f"Unknown sequence config keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path: PathLike) -> 'SequenceConfig':
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise InvalidConfigError(f"{path}: expected a mapping of config keys")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class KktBlocks:
    H: CsrMatrix
    J: CsrMatrix
    D_y: np.ndarray
    mu: float
    delta_p: float = 0.0
    delta_d: float = 0.0


@dataclass(frozen=True, eq=False)
class KktSystem:
    """One system of a sequence; x_true is known for generated systems."""

    K: CsrMatrix
    rhs: DenseVector
    mu: float
    index: int
    x_true: Optional[DenseVector] = None
    blocks: Optional[KktBlocks] = None

    @property
    def size(self) -> int:
        return self.K.nrows

    def with_regularization(self, delta_p: float, delta_d: float) -> 'KktSystem':
        """Reassemble with new regularizations; the pattern is unchanged."""
        if self.blocks is None:
            raise ValueError(f"system {self.index} has no blocks to reassemble")
        blocks = KktBlocks(self.blocks.H, self.blocks.J, self.blocks.D_y, self.blocks.mu, delta_p, delta_d)
        system = assemble_kkt(blocks, index=self.index)
        return KktSystem(system.K, self.rhs, self.mu, self.index, self.x_true, blocks)


@dataclass(eq=False)
class KktSequence:
    pattern: CsrMatrix
    systems: List[KktSystem]
    mu_values: List[float]
    delta_p: float = 0.0
    delta_d: float = 0.0
    source: str = 'generated'
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.systems)

    def __iter__(self) -> Iterator[KktSystem]:
        return iter(self.systems)

    def __getitem__(self, k: int) -> KktSystem:
        return self.systems[k]

    @property
    def generated(self) -> bool:
        return self.source == 'generated'

    def validate(self) -> None:
        """Raise PatternMismatchError at the first system whose pattern differs from system 0."""
        for system in self.systems:
            if not pattern_equal(system.K, self.pattern):
                raise PatternMismatchError(system.index)


def assemble_kkt(blocks: KktBlocks, index: int = 0, rhs: Optional[DenseVector] = None,
                 x_true: Optional[DenseVector] = None) -> KktSystem:
    """
    Assemble the symmetric KKT matrix from its blocks.

    Both diagonal blocks are stored in full, so explicit zeros appear where
    the (2,2) block or a Hessian diagonal vanishes.

    Args:
        blocks: KktBlocks
        index: Position in the sequence
        rhs: Right-hand side; defaults to K x_true, or K * ones without x_true
        x_true: Manufactured solution

    Returns:
        KktSystem

    Raises:
        DimensionMismatchError: inconsistent block sizes
        AsymmetricMatrixError: H is not exactly symmetric
    """
    H, J = blocks.H, blocks.J
    n, m = H.nrows, J.nrows
    if H.ncols != n:
        raise DimensionMismatchError(f"H must be square, got {H.shape}")
    if J.ncols != n:
        raise DimensionMismatchError(f"J must have {n} columns, got {J.shape}")
    d_y = np.asarray(blocks.D_y, dtype=np.float64)
    if d_y.shape != (n,):
        raise DimensionMismatchError(f"D_y must have length {n}, got {d_y.shape}")
    transposed = H.transpose()
    if not (pattern_equal(H, transposed) and np.array_equal(H.values, transposed.values)):
        raise AsymmetricMatrixError("H must be symmetric in pattern and values")

    h_rows, h_cols = H.row_ids, H.col_indices
    off = h_rows != h_cols
    h_diag = np.zeros(n)
    h_diag[h_rows[~off]] = H.values[~off]
    diag_11 = (h_diag + d_y) + blocks.delta_p
    diag_22 = np.full(m, 0.0 - blocks.delta_d)

    j_rows, j_cols = J.row_ids + n, J.col_indices
    diag_idx = np.arange(n + m, dtype=INDEX_DTYPE)
    rows = np.concatenate([h_rows[off], diag_idx, j_cols, j_rows])
    cols = np.concatenate([h_cols[off], diag_idx, j_rows, j_cols])
    values = np.concatenate([H.values[off], diag_11, diag_22, J.values, J.values])
    K = coo_to_csr(CooMatrix(n + m, n + m, rows, cols, values))

    if rhs is None:
        rhs = spmv(K, x_true if x_true is not None else np.ones(n + m))
    return KktSystem(K=K, rhs=np.asarray(rhs, dtype=np.float64), mu=float(blocks.mu), index=index,
                     x_true=x_true, blocks=blocks)


def mu_schedule(config: SequenceConfig) -> List[float]:
    """mu_k = mu0 * reduction^k, clamped at mu_min; ends at the first clamp unless a length is set."""
    values: List[float] = []
    k = 0
    while True:
        mu = config.mu0 * config.reduction ** k
        clamped = mu <= config.mu_min
        values.append(config.mu_min if clamped else mu)
        k += 1
        if config.length is not None:
            if len(values) == config.length:
                return values
        elif clamped:
            return values


def _grid_hessian(n: int, rng: np.random.Generator) -> CsrMatrix:
    """Symmetric, strictly diagonally dominant H on a grid graph with random local chords."""
    width = max(1, int(math.isqrt(n)))
    edges: List[Tuple[int, int]] = []
    for i in range(n):
        col = i % width
        if col + 1 < width and i + 1 < n:
            edges.append((i, i + 1))
        if i + width < n:
            edges.append((i, i + width))
        if col + 1 < width and i + width + 1 < n and rng.random() < CHORD_PROBABILITY:
            edges.append((i, i + width + 1))

    if edges:
        src, dst = np.array(edges, dtype=INDEX_DTYPE).T
    else:
        src = dst = np.empty(0, dtype=INDEX_DTYPE)
    weights = rng.uniform(-1.0, 1.0, size=src.size)
    row_sums = np.zeros(n)
    np.add.at(row_sums, src, np.abs(weights))
    np.add.at(row_sums, dst, np.abs(weights))
    diagonal = row_sums + rng.uniform(0.5, 1.5, size=n)

    idx = np.arange(n, dtype=INDEX_DTYPE)
    rows = np.concatenate([src, dst, idx])
    cols = np.concatenate([dst, src, idx])
    values = np.concatenate([weights, weights, diagonal])
    return coo_to_csr(CooMatrix(n, n, rows, cols, values))


def _local_jacobian(n: int, m: int, rng: np.random.Generator) -> CsrMatrix:
    """m x n Jacobian with 2-3 entries per row anchored at distinct columns (full row rank)."""
    width = max(1, int(math.isqrt(n)))
    rows: List[int] = []
    cols: List[int] = []
    for r in range(m):
        anchor = (r * n) // m
        picked = [anchor]
        if anchor + 1 < n:
            picked.append(anchor + 1)
        if anchor + width < n and anchor + width not in picked and rng.random() < EXTRA_JACOBIAN_PROBABILITY:
            picked.append(anchor + width)
        rows.extend([r] * len(picked))
        cols.extend(picked)
    magnitudes = rng.uniform(0.5, 1.5, size=len(rows))
    signs = rng.choice([-1.0, 1.0], size=len(rows))
    return coo_to_csr(CooMatrix(m, n, np.array(rows), np.array(cols), magnitudes * signs))


def gen_sequence(config: Optional[SequenceConfig] = None) -> KktSequence:
    """
    Generate a fixed-pattern KKT sequence along a barrier continuation.

    H and J are drawn once from topology_seed. Per step, inactive components
    draw y ~ U(0.5, 2); active components keep y = mu * c with c fixed, so
    their D_y entries grow like 1/mu and the conditioning worsens with k.

    Args:
        config: SequenceConfig (defaults give 10 systems, n=200, m=80)

    Returns:
        KktSequence with manufactured right-hand sides
    """
    config = config or SequenceConfig()
    topology = np.random.default_rng(config.topology_seed)
    trajectory = np.random.default_rng(config.trajectory_seed)
    solutions = np.random.default_rng(config.rhs_seed)

    H = _grid_hessian(config.n, topology)
    J = _local_jacobian(config.n, config.m, topology)
    active = trajectory.random(config.n) < config.active_fraction
    active_scale = trajectory.uniform(0.5, 2.0, size=config.n)

    schedule = mu_schedule(config)
    systems: List[KktSystem] = []
    for k, mu in enumerate(schedule):
        y = trajectory.uniform(0.5, 2.0, size=config.n)
        y[active] = mu * active_scale[active]
        d_y = mu / (y * y)
        blocks = KktBlocks(H, J, d_y, mu, config.delta_p, config.delta_d)
        x_true = solutions.uniform(-1.0, 1.0, size=config.n + config.m)
        systems.append(assemble_kkt(blocks, index=k, x_true=x_true))

    sequence = KktSequence(pattern=systems[0].K.pattern(), systems=systems, mu_values=schedule,
                           delta_p=config.delta_p, delta_d=config.delta_d, source='generated',
                           metadata={'config': config.to_dict()})
    logger.info(f"Generated KKT sequence: {len(systems)} systems, n+m={config.n + config.m}, "
                f"nnz={systems[0].K.nnz}, mu {schedule[0]:.1e} -> {schedule[-1]:.1e}")
    return sequence


def inject_pattern_break(sequence: KktSequence, k: int) -> KktSequence:
    """
    Add one symmetric off-diagonal pair to systems k..end.

    The pair is the first structurally absent (i, j), i < j, scanning rows in
    order; its value is small enough to leave the solutions nearly unchanged.
    Right-hand sides are recomputed from x_true when known.
    """
    if not 0 <= k < len(sequence):
        raise IndexError(f"break index {k} outside sequence of length {len(sequence)}")
    pattern = sequence.pattern
    size = pattern.nrows
    target = None
    for i in range(size):
        cols, _ = pattern.row(i)
        present = set(cols.tolist())
        for j in range(i + 1, size):
            if j not in present:
                target = (i, j)
                break
        if target:
            break
    if target is None:
        raise ValueError("pattern is dense; nothing to add")

    i, j = target
    systems = list(sequence.systems[:k])
    for system in sequence.systems[k:]:
        coo = system.K.to_coo()
        value = 1e-3 * float(np.min(np.abs(system.K.values[system.K.values != 0])))
        rows = np.concatenate([coo.rows, [i, j]])
        cols = np.concatenate([coo.cols, [j, i]])
        values = np.concatenate([coo.values, [value, value]])
        K = coo_to_csr(CooMatrix(size, size, rows, cols, values))
        rhs = spmv(K, system.x_true) if system.x_true is not None else system.rhs
        systems.append(KktSystem(K, rhs, system.mu, system.index, system.x_true, None))

    logger.info(f"Injected pattern break ({i}, {j}) from system {k}")
    return KktSequence(pattern=sequence.pattern, systems=systems, mu_values=list(sequence.mu_values),
                       delta_p=sequence.delta_p, delta_d=sequence.delta_d, source=sequence.source,
                       metadata={**sequence.metadata, 'pattern_break': [k, i, j]})


def _read_vector(path: Path, n: int) -> DenseVector:
    coo = mm_read(path)
    if coo.ncols != 1 or coo.nrows != n:
        raise DimensionMismatchError(f"{path.name}: expected a {n}x1 vector, got {coo.nrows}x{coo.ncols}")
    vector = np.zeros(n)
    vector[coo.rows] = coo.values
    return vector


def _write_vector(vector: DenseVector, path: Path) -> None:
    n = vector.size
    column = CsrMatrix(n, 1, np.arange(n + 1, dtype=INDEX_DTYPE), np.zeros(n, dtype=INDEX_DTYPE), vector)
    mm_write(column, path)


def _parse_manifest(manifest: Path) -> List[Tuple[str, Optional[str]]]:
    entries: List[Tuple[str, Optional[str]]] = []
    with open(manifest, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith('#'):
                continue
            tokens = text.split()
            if len(tokens) > 2:
                raise MatrixMarketError(f"manifest expects 'matrix [rhs]', got {text!r}",
                                        line=line_no, path=str(manifest))
            entries.append((tokens[0], tokens[1] if len(tokens) == 2 else None))
    if not entries:
        raise InvalidConfigError(f"{manifest}: manifest lists no systems")
    return entries


def load_sequence(directory: PathLike, manifest: str = MANIFEST_NAME) -> KktSequence:
    """
    Load an exported sequence listed in a manifest.

    Manifest lines name a matrix file and optionally an rhs file, relative to
    the manifest's directory. A sequence.yaml sidecar, when present, provides
    mu values, regularizations and manufactured solutions.

    Raises:
        FileNotFoundError: manifest or listed file missing
        PatternMismatchError: system k differs in pattern from system 0
    """
    directory = Path(directory)
    manifest_path = directory / manifest
    if not manifest_path.exists():
        raise FileNotFoundError(f"Manifest not found: {manifest_path}")
    entries = _parse_manifest(manifest_path)

    sidecar: Dict[str, Any] = {}
    sidecar_path = manifest_path.parent / SIDECAR_NAME
    if sidecar_path.exists():
        with open(sidecar_path, 'r', encoding='utf-8') as f:
            sidecar = yaml.safe_load(f) or {}
    mu_values = list(sidecar.get('mu', [math.nan] * len(entries)))
    solution_files = sidecar.get('solutions') or [None] * len(entries)
    if len(mu_values) != len(entries) or len(solution_files) != len(entries):
        raise InvalidConfigError(f"{sidecar_path.name} lists {len(mu_values)} systems, manifest lists {len(entries)}")

    systems: List[KktSystem] = []
    pattern: Optional[CsrMatrix] = None
    for k, (matrix_name, rhs_name) in enumerate(entries):
        K = mm_read_csr(manifest_path.parent / matrix_name)
        if K.nrows != K.ncols:
            raise DimensionMismatchError(f"{matrix_name}: KKT matrix must be square, got {K.shape}")
        if pattern is None:
            pattern = K.pattern()
        elif not pattern_equal(K, pattern):
            raise PatternMismatchError(k, f"pattern mismatch at system index {k} ({matrix_name})")
        rhs = _read_vector(manifest_path.parent / rhs_name, K.nrows) if rhs_name else spmv(K, np.ones(K.nrows))
        x_true = _read_vector(manifest_path.parent / solution_files[k], K.nrows) if solution_files[k] else None
        systems.append(KktSystem(K=K, rhs=rhs, mu=float(mu_values[k]), index=k, x_true=x_true))

    logger.info(f"Loaded {len(systems)} systems from {manifest_path}")
    return KktSequence(pattern=pattern, systems=systems, mu_values=[float(mu) for mu in mu_values],
                       delta_p=float(sidecar.get('delta_p', 0.0)), delta_d=float(sidecar.get('delta_d', 0.0)),
                       source='loaded', metadata={'directory': str(directory)})


def save_sequence(sequence: KktSequence, directory: PathLike) -> Path:
    """
    Export a sequence as Matrix Market files, a manifest and a YAML sidecar.

    Returns:
        Path of the written manifest
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_lines: List[str] = []
    solutions: List[Optional[str]] = []
    for system in sequence:
        matrix_name = f"K_{system.index:03d}.mtx"
        rhs_name = f"rhs_{system.index:03d}.mtx"
        mm_write(system.K, directory / matrix_name)
        _write_vector(system.rhs, directory / rhs_name)
        manifest_lines.append(f"{matrix_name} {rhs_name}")
        if system.x_true is not None:
            solution_name = f"x_true_{system.index:03d}.mtx"
            _write_vector(system.x_true, directory / solution_name)
            solutions.append(solution_name)
        else:
            solutions.append(None)

    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text('\n'.join(manifest_lines) + '\n', encoding='utf-8')
    sidecar = {
        'mu': [float(mu) for mu in sequence.mu_values],
        'delta_p': float(sequence.delta_p),
        'delta_d': float(sequence.delta_d),
        'solutions': solutions if any(solutions) else None,
        'source': sequence.source,
    }
    if 'config' in sequence.metadata:
        sidecar['config'] = sequence.metadata['config']
    with open(directory / SIDECAR_NAME, 'w', encoding='utf-8') as f:
        yaml.dump(sidecar, f, default_flow_style=False, sort_keys=False)

    logger.info(f"Saved {len(sequence)} systems to {directory}")
    return manifest_path
