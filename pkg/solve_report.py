#!/usr/bin/env python3
"""
Solve Report Data Model

Per-system phase breakdown plus an aggregate block, rendered as JSON or CSV.
Field names are stable; scripts read them directly.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from solver_errors import ReportFormatError

logger = logging.getLogger(__name__)

PHASES = ('analyze_ms', 'scatter_ms', 'factor_ms', 'trisolve_ms', 'refine_ms')
STATUS_SOLVED = 'solved'
STATUS_FAILED = 'failed'
TIME_DECIMALS = 3  # milliseconds with microsecond resolution


def _json_safe(value: Any) -> Any:
    """Non-finite floats become None so reports stay strict JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


def ms(seconds: float) -> float:
    """Seconds -> milliseconds rounded to microseconds."""
    return round(seconds * 1000.0, TIME_DECIMALS)


@dataclass
class SystemRecord:
    k: int
    n: int
    nnz: int
    analyze_ms: float = 0.0
    scatter_ms: float = 0.0
    factor_ms: float = 0.0
    trisolve_ms: float = 0.0
    refine_ms: float = 0.0
    refine_iters: int = 0
    relres_direct: Optional[float] = None
    relres_final: Optional[float] = None
    status: str = STATUS_FAILED
    total_ms: float = 0.0
    forward_error: Optional[float] = None
    events: List[str] = field(default_factory=list)

    @property
    def phase_ms(self) -> float:
        return sum(getattr(self, phase) for phase in PHASES)


@dataclass
class ReportAggregate:
    total_ms: float = 0.0
    mean_analyze_ms: float = 0.0
    mean_scatter_ms: float = 0.0
    mean_factor_ms: float = 0.0
    mean_trisolve_ms: float = 0.0
    mean_refine_ms: float = 0.0
    systems: int = 0
    systems_solved: int = 0
    systems_failed: int = 0
    reanalysis_count: int = 0
    regularization_retries: int = 0
    factor_share: float = 0.0
    trisolve_share: float = 0.0
    median_refine_iters: float = 0.0
    peak_rss_mb: float = 0.0


@dataclass
class SolveReport:
    records: List[SystemRecord] = field(default_factory=list)
    aggregate: ReportAggregate = field(default_factory=ReportAggregate)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def all_solved(self) -> bool:
        return bool(self.records) and all(r.status == STATUS_SOLVED for r in self.records)

    @property
    def any_solved(self) -> bool:
        return any(r.status == STATUS_SOLVED for r in self.records)

    def to_dict(self) -> Dict[str, Any]:
        return _json_safe({
            'metadata': self.metadata,
            'aggregate': asdict(self.aggregate),
            'systems': [asdict(r) for r in self.records],
        })

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolveReport':
        try:
            records = [SystemRecord(**record) for record in data['systems']]
            aggregate = ReportAggregate(**data['aggregate'])
        except (KeyError, TypeError) as e:
            raise ReportFormatError(f"malformed report: {e}") from e
        return cls(records=records, aggregate=aggregate, metadata=dict(data.get('metadata', {})))


def build_aggregate(records: List[SystemRecord], reanalysis_count: int = 0,
                    regularization_retries: int = 0, peak_rss_mb: float = 0.0) -> ReportAggregate:
    """Sum and average the per-system records."""
    if not records:
        return ReportAggregate(reanalysis_count=reanalysis_count,
                               regularization_retries=regularization_retries, peak_rss_mb=peak_rss_mb)
    frame = pd.DataFrame([asdict(r) for r in records])
    phase_total = float(frame[list(PHASES)].to_numpy().sum())
    solved = int((frame['status'] == STATUS_SOLVED).sum())
    return ReportAggregate(
        total_ms=round(float(frame['total_ms'].sum()), TIME_DECIMALS),
        mean_analyze_ms=round(float(frame['analyze_ms'].mean()), TIME_DECIMALS),
        mean_scatter_ms=round(float(frame['scatter_ms'].mean()), TIME_DECIMALS),
        mean_factor_ms=round(float(frame['factor_ms'].mean()), TIME_DECIMALS),
        mean_trisolve_ms=round(float(frame['trisolve_ms'].mean()), TIME_DECIMALS),
        mean_refine_ms=round(float(frame['refine_ms'].mean()), TIME_DECIMALS),
        systems=len(records),
        systems_solved=solved,
        systems_failed=len(records) - solved,
        reanalysis_count=reanalysis_count,
        regularization_retries=regularization_retries,
        factor_share=float(frame['factor_ms'].sum()) / phase_total if phase_total > 0 else 0.0,
        trisolve_share=float(frame['trisolve_ms'].sum()) / phase_total if phase_total > 0 else 0.0,
        median_refine_iters=float(np.median(frame['refine_iters'])),
        peak_rss_mb=round(peak_rss_mb, 1),
    )


def render_json(report: SolveReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False)


def render_csv(report: SolveReport, aggregate: bool = False) -> str:
    """One row per system, or a single aggregate row with aggregate=True."""
    if aggregate:
        return pd.DataFrame([asdict(report.aggregate)]).to_csv(index=False)
    columns = [f.name for f in fields(SystemRecord)]
    frame = pd.DataFrame([asdict(r) for r in report.records], columns=columns)
    frame['events'] = frame['events'].map(lambda events: ';'.join(events) if isinstance(events, list) else '')
    return frame.to_csv(index=False)


def render(report: SolveReport, fmt: str, aggregate: bool = False) -> str:
    if fmt == 'json':
        return render_json(report)
    if fmt == 'csv':
        return render_csv(report, aggregate=aggregate)
    raise ValueError(f"Invalid report format: {fmt}")


def load_report(path: Union[str, Path]) -> SolveReport:
    """Read a JSON report written by render_json."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Report not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ReportFormatError(f"{path.name}: not valid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ReportFormatError(f"{path.name}: expected a JSON object")
    return SolveReport.from_dict(data)


def write_report(report: SolveReport, path: Union[str, Path], fmt: str = 'json') -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(report, fmt), encoding='utf-8')
    logger.info(f"Report written to {path}")
    return path
