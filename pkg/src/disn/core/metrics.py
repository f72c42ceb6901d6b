"""Trial scoring and detection metrics (EER, minDCF, DET)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from rich.table import Table

from disn.exceptions import ArtifactError, ConfigError, ProtocolError, ScoringError, ShapeError

if TYPE_CHECKING:
    from collections.abc import Sequence

NORM_EPS = 1e-12
DET_COLUMNS = ["threshold", "far", "frr"]


def _unit_rows(vectors: Sequence[np.ndarray], utt_id: str) -> np.ndarray:
    if not len(vectors):
        raise ScoringError(f"No embeddings for utterance {utt_id}")
    matrix = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise ScoringError(f"Zero-norm embedding for utterance {utt_id}; cosine is undefined")
    return matrix / norms


def score_trial(
    embs_a: Sequence[np.ndarray],
    embs_b: Sequence[np.ndarray],
    ids: tuple[str, str] = ("enroll", "test"),
) -> float:
    """Mean cosine similarity over all cross pairs of two segment lists.

    Args:
        embs_a: Segment vectors of the enrollment utterance.
        embs_b: Segment vectors of the test utterance.
        ids: Utterance ids used in error messages.

    Returns:
        Average of |a| x |b| cosines.

    Raises:
        ScoringError: If a list is empty or holds a zero vector.
        ShapeError: If dimensions differ.
    """
    a = _unit_rows(embs_a, ids[0])
    b = _unit_rows(embs_b, ids[1])
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"Cannot score {ids[0]} ({a.shape[1]}-dim) against {ids[1]} ({b.shape[1]}-dim)"
        )
    return float(np.mean(a @ b.T))


@dataclass
class ScoreSet:
    """Parallel trial scores and target (1) / nontarget (0) labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ShapeError(
                f"Scores {self.scores.shape} and labels {self.labels.shape} "
                "must be equal-length vectors"
            )
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ProtocolError("Trial labels must be 0 or 1")

    @property
    def targets(self) -> np.ndarray:
        return self.scores[self.labels == 1]

    @property
    def nontargets(self) -> np.ndarray:
        return self.scores[self.labels == 0]

    def require_both_classes(self) -> None:
        """Raise ProtocolError unless targets and nontargets are both present."""
        n_target = int(np.sum(self.labels == 1))
        n_nontarget = self.labels.size - n_target
        if n_target == 0 or n_nontarget == 0:
            raise ProtocolError(
                f"Need at least one target and one nontarget trial, "
                f"got {n_target} and {n_nontarget}"
            )


@dataclass
class OperatingPoints:
    """Error rates at every candidate threshold, thresholds increasing."""

    thresholds: np.ndarray
    frr: np.ndarray
    far: np.ndarray


def operating_points(scores: ScoreSet) -> OperatingPoints:
    """Sweep thresholds at midpoints between distinct scores plus both extremes.

    A trial is accepted when its score is >= the threshold, so all equal scores
    switch together. The first threshold accepts everything, the last rejects
    everything.
    """
    scores.require_both_classes()
    distinct = np.unique(scores.scores)
    thresholds = np.concatenate(
        [[distinct[0] - 1.0], (distinct[:-1] + distinct[1:]) / 2, [distinct[-1] + 1.0]]
    )
    targets = np.sort(scores.targets)
    nontargets = np.sort(scores.nontargets)
    frr = np.searchsorted(targets, thresholds, side="left") / targets.size
    far = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    return OperatingPoints(thresholds, frr, far)


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate with linear interpolation between operating points.

    Returns:
        Tuple of (eer, threshold).

    Raises:
        ProtocolError: If targets or nontargets are missing.
    """
    points = operating_points(scores)
    diff = points.frr - points.far
    i = int(np.flatnonzero(diff >= 0)[0])
    if diff[i] == 0 or i == 0:
        return float(points.frr[i]), float(points.thresholds[i])
    alpha = -diff[i - 1] / (diff[i] - diff[i - 1])
    eer = points.frr[i - 1] + alpha * (points.frr[i] - points.frr[i - 1])
    threshold = points.thresholds[i - 1] + alpha * (points.thresholds[i] - points.thresholds[i - 1])
    return float(eer), float(threshold)


def compute_min_dcf(
    scores: ScoreSet,
    p_target: float = 0.05,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
) -> tuple[float, float]:
    """Normalized minimum detection cost.

    The cost at each threshold is divided by the cost of the best trivial
    system, ``min(c_miss * p_target, c_fa * (1 - p_target))``.

    Returns:
        Tuple of (min_dcf, threshold).

    Raises:
        ConfigError: If p_target is outside (0, 1) or a cost is not positive.
        ProtocolError: If targets or nontargets are missing.
    """
    if not 0.0 < p_target < 1.0:
        raise ConfigError(f"p_target must lie in (0, 1), got {p_target}")
    if c_miss <= 0 or c_fa <= 0:
        raise ConfigError(f"Detection costs must be positive, got c_miss={c_miss}, c_fa={c_fa}")
    points = operating_points(scores)
    c_det = c_miss * points.frr * p_target + c_fa * points.far * (1 - p_target)
    best = int(np.argmin(c_det))
    c_def = min(c_miss * p_target, c_fa * (1 - p_target))
    return float(c_det[best] / c_def), float(points.thresholds[best])


@dataclass
class MetricsReport:
    """Detection metrics of one score set."""

    eer: float
    eer_threshold: float
    min_dcf: float
    dcf_threshold: float
    n_target: int
    n_nontarget: int

    def to_dict(self) -> dict[str, float | int]:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "min_dcf": self.min_dcf,
            "dcf_threshold": self.dcf_threshold,
            "n_target": self.n_target,
            "n_nontarget": self.n_nontarget,
        }


def compute_metrics(
    scores: ScoreSet,
    p_target: float = 0.05,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
) -> MetricsReport:
    """EER and minDCF of a score set."""
    eer, eer_threshold = compute_eer(scores)
    min_dcf, dcf_threshold = compute_min_dcf(scores, p_target, c_miss, c_fa)
    n_target = int(np.sum(scores.labels == 1))
    return MetricsReport(
        eer, eer_threshold, min_dcf, dcf_threshold, n_target, int(scores.labels.size - n_target)
    )


def write_det_csv(scores: ScoreSet, path: Path) -> None:
    """Write the DET curve as (threshold, FAR, FRR) rows."""
    points = operating_points(scores)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(DET_COLUMNS)
            for row in zip(points.thresholds, points.far, points.frr, strict=True):
                writer.writerow([repr(float(v)) for v in row])
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e


def format_metrics_json(blocks: dict[str, object]) -> str:
    """Format a metrics document as stable JSON."""
    return json.dumps(blocks, indent=2, sort_keys=True)


def format_metrics_table(blocks: dict[str, MetricsReport]) -> Table:
    """Format metric blocks side by side.

    Args:
        blocks: Block name (e.g. raw, disentangled) to report.

    Returns:
        Formatted table.
    """
    table = Table(title="Verification metrics")
    table.add_column("Scores", style="bold")
    table.add_column("EER (%)", justify="right", style="cyan")
    table.add_column("minDCF", justify="right", style="cyan")
    table.add_column("Targets", justify="right")
    table.add_column("Nontargets", justify="right")
    for name, report in blocks.items():
        table.add_row(
            name,
            f"{100 * report.eer:.2f}",
            f"{report.min_dcf:.4f}",
            str(report.n_target),
            str(report.n_nontarget),
        )
    return table
