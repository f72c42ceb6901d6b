"""Linear probes measuring what speaker and environment codes reveal."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from rich.table import Table

from disn.core.diffcore import FcLayer, backward, fc_forward
from disn.core.discriminators import log_softmax, mapc_loss
from disn.core.optim import Adam, AdamState
from disn.exceptions import ProbeError, ShapeError

if TYPE_CHECKING:
    from disn.config import ProbeConfig
    from disn.core.disentangler import CodeBatch

logger = logging.getLogger(__name__)


@dataclass
class ProbeResult:
    """Held-out accuracy of one probe."""

    accuracy: float
    chance: float
    n_classes: int
    n_holdout: int


@dataclass
class ProbeReport:
    """The four probe accuracies and the code correlation."""

    speaker_from_spk: ProbeResult
    speaker_from_env: ProbeResult
    session_from_spk: ProbeResult
    session_from_env: ProbeResult
    mapc: float

    def probes(self) -> dict[str, ProbeResult]:
        return {
            "speaker_from_spk": self.speaker_from_spk,
            "speaker_from_env": self.speaker_from_env,
            "session_from_spk": self.session_from_spk,
            "session_from_env": self.session_from_env,
        }

    def to_dict(self) -> dict[str, float]:
        data = {name: result.accuracy for name, result in self.probes().items()}
        data["mapc"] = self.mapc
        return data


def stratified_split(
    labels: np.ndarray,
    holdout_fraction: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Split row indices per class; every class keeps at least one training row."""
    train, holdout = [], []
    for cls in np.unique(labels):
        rows = rng.permutation(np.flatnonzero(labels == cls))
        n_out = min(int(np.floor(holdout_fraction * rows.size)), rows.size - 1)
        holdout.extend(rows[:n_out])
        train.extend(rows[n_out:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(holdout, dtype=np.int64))


def train_linear_probe(
    x: np.ndarray,
    labels: np.ndarray,
    config: ProbeConfig,
    rng: np.random.Generator,
) -> ProbeResult:
    """Fit a softmax-regression probe and score it on a held-out split.

    Inputs are standardized with training-split statistics; training is full-batch
    Adam on the cross-entropy.

    Raises:
        ProbeError: If the labels have a single class or nothing can be held out.
    """
    if x.shape[0] != labels.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows but {labels.shape[0]} labels")
    classes, y = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise ProbeError("Probe labels have a single class")
    train, holdout = stratified_split(y, config.holdout_fraction, rng)
    if holdout.size == 0:
        raise ProbeError("No class has enough rows for a held-out split")

    x = np.asarray(x, dtype=np.float64)
    mean = x[train].mean(axis=0)
    std = x[train].std(axis=0)
    std = np.where(std > 0, std, 1.0)
    x_std = (x - mean) / std

    layer = FcLayer(x.shape[1], classes.size, rng, "float64")
    optimizer = Adam([layer.weight, layer.bias], AdamState())
    x_train, y_train = x_std[train], y[train]
    rows = np.arange(train.size)
    for _ in range(config.epochs):
        layer.weight.zero_grad()
        layer.bias.zero_grad()
        logits, cache = fc_forward(layer, x_train)
        dlogits = np.exp(log_softmax(logits))
        dlogits[rows, y_train] -= 1.0
        backward(cache, dlogits / train.size)
        optimizer.step(config.lr)

    logits, _ = fc_forward(layer, x_std[holdout])
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y[holdout]))
    return ProbeResult(accuracy, 1.0 / classes.size, int(classes.size), int(holdout.size))


def probe_disentanglement(
    codes: CodeBatch,
    speaker_labels: np.ndarray,
    session_labels: np.ndarray,
    config: ProbeConfig,
    rng: np.random.Generator,
) -> ProbeReport:
    """Train speaker and session probes on both code halves.

    Args:
        codes: Eval-mode codes, one row per utterance.
        speaker_labels: Speaker label per row.
        session_labels: Session label per row.
        config: Probe settings.
        rng: Probe generator.

    Returns:
        ProbeReport with held-out accuracies and MAPC over all rows.
    """
    results = {}
    for target, labels in (("speaker", speaker_labels), ("session", session_labels)):
        for half in ("spk", "env"):
            result = train_linear_probe(getattr(codes, half), labels, config, rng)
            logger.info("%s-from-%s probe accuracy %.3f", target, half, result.accuracy)
            results[f"{target}_from_{half}"] = result
    mapc, _ = mapc_loss(codes.spk.astype(np.float64), codes.env.astype(np.float64))
    return ProbeReport(mapc=mapc, **results)


def format_probe_table(report: ProbeReport) -> Table:
    """Format probe accuracies with their chance levels."""
    table = Table(title="Disentanglement probes")
    table.add_column("Probe", style="bold")
    table.add_column("Accuracy", justify="right", style="cyan")
    table.add_column("Chance", justify="right")
    for name, result in report.probes().items():
        table.add_row(name.replace("_", " "), f"{result.accuracy:.3f}", f"{result.chance:.3f}")
    table.add_row("MAPC(spk, env)", f"{report.mapc:.4f}", "")
    return table
