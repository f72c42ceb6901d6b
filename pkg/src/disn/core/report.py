"""Aggregate metrics over several runs (mean and standard deviation)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
from rich.table import Table

from disn.core.evaluation import METRICS_NAME
from disn.exceptions import ArtifactError, ValidationError

if TYPE_CHECKING:
    from pathlib import Path

REPORT_NAME = "report.json"


@dataclass
class MetricSummary:
    """Mean and sample standard deviation of one metric across runs."""

    name: str
    mean: float
    std: float
    n: int


def load_run_metrics(run_dir: Path) -> dict[str, float]:
    """Read a run's metrics file as flat dotted keys (``mismatch.raw.eer``).

    Raises:
        ValidationError: If the file is missing or not a metrics document.
    """
    path = run_dir / METRICS_NAME
    if not path.exists():
        raise ValidationError(f"No {METRICS_NAME} in {run_dir}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"Invalid JSON in {path}: {e}") from e
    if not isinstance(document, dict):
        raise ValidationError(f"{path} does not hold a metrics mapping")
    flat: dict[str, float] = {}
    _flatten(document, "", flat)
    return flat


def _flatten(node: dict[str, Any], prefix: str, out: dict[str, float]) -> None:
    for key, value in node.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            _flatten(value, f"{name}.", out)
        elif isinstance(value, int | float) and not isinstance(value, bool) and prefix:
            out[name] = float(value)


def summarize_runs(run_dirs: list[Path]) -> list[MetricSummary]:
    """Mean and standard deviation of every metric present in all runs.

    Args:
        run_dirs: Run directories holding metrics files.

    Returns:
        Summaries in sorted metric order.
    """
    if not run_dirs:
        raise ValidationError("No run directories given")
    runs = [load_run_metrics(run_dir) for run_dir in run_dirs]
    shared = sorted(set.intersection(*(set(run) for run in runs)))
    summaries = []
    for name in shared:
        values = np.array([run[name] for run in runs])
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        summaries.append(MetricSummary(name, float(values.mean()), std, int(values.size)))
    return summaries


def format_report_json(summaries: list[MetricSummary]) -> str:
    """Format summaries as JSON keyed by metric name."""
    data = {s.name: {"mean": s.mean, "std": s.std, "n": s.n} for s in summaries}
    return json.dumps(data, indent=2, sort_keys=True)


def format_report_table(summaries: list[MetricSummary]) -> Table:
    """Format summaries as mean ± std rows."""
    table = Table(title="Metrics across runs")
    table.add_column("Metric", style="bold")
    table.add_column("Mean ± std", justify="right", style="cyan")
    table.add_column("Runs", justify="right")
    for s in summaries:
        table.add_row(s.name, f"{s.mean:.4f} ± {s.std:.4f}", str(s.n))
    return table


def write_report(summaries: list[MetricSummary], out_dir: Path) -> Path:
    """Write the JSON summary as ``report.json``."""
    path = out_dir / REPORT_NAME
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(format_report_json(summaries) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e
    return path
