"""Raw-versus-disentangled evaluation of a trained checkpoint."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from disn.core.disentangler import embed_codes
from disn.core.hasher import fingerprint_embeddings
from disn.core.metrics import MetricsReport, ScoreSet, compute_metrics
from disn.core.probes import ProbeReport, probe_disentanglement
from disn.core.trials import score_trials
from disn.exceptions import ScoringError

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping

    from disn.config import RunConfig
    from disn.core.checkpoint import Checkpoint
    from disn.core.disentangler import AutoEncoder
    from disn.core.sampler import Dataset
    from disn.core.trials import Trial

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.json"
CUSTOM_TRIALS = "custom"


def trials_file_name(kind: str) -> str:
    return f"trials_{kind}.txt"


@dataclass
class SpeakerCodeStore:
    """Eval-mode speaker codes of every segment, grouped by utterance."""

    codes: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __call__(self, utt_id: str) -> list[np.ndarray]:
        try:
            return self.codes[utt_id]
        except KeyError:
            raise ScoringError(f"Unknown utterance in trial list: {utt_id}") from None


def speaker_code_store(autoencoder: AutoEncoder, dataset: Dataset, dtype: str) -> SpeakerCodeStore:
    """Encode every segment once and group the speaker codes per utterance."""
    utt_ids = [meta.utt_id for meta in dataset.metadata]
    segments = [dataset.segments(u) for u in utt_ids]
    matrix = np.stack([s for group in segments for s in group]).astype(dtype)
    spk = embed_codes(autoencoder, matrix).spk
    store = SpeakerCodeStore()
    start = 0
    for utt_id, group in zip(utt_ids, segments, strict=True):
        store.codes[utt_id] = list(spk[start : start + len(group)])
        start += len(group)
    return store


def raw_lookup(dataset: Dataset) -> Callable[[str], list[np.ndarray]]:
    """Segment vectors of an utterance, with a scoring error for unknown ids."""

    def lookup(utt_id: str) -> list[np.ndarray]:
        if utt_id not in dataset.index:
            raise ScoringError(f"Unknown utterance in trial list: {utt_id}")
        return dataset.segments(utt_id)

    return lookup


@dataclass
class TrialListResult:
    """Scores and metrics of one trial list in both embedding spaces."""

    raw_scores: ScoreSet
    disentangled_scores: ScoreSet
    raw: MetricsReport
    disentangled: MetricsReport

    def to_dict(self) -> dict[str, object]:
        return {"raw": self.raw.to_dict(), "disentangled": self.disentangled.to_dict()}


@dataclass
class EvalResult:
    """Per trial list results, plus optional probes."""

    lists: dict[str, TrialListResult]
    probes: ProbeReport | None = None
    fingerprint_matches: bool = True

    def to_dict(self) -> dict[str, object]:
        data: dict[str, object] = {name: result.to_dict() for name, result in self.lists.items()}
        if self.probes is not None:
            data["probes"] = self.probes.to_dict()
        return data

    def metric_blocks(self) -> dict[str, MetricsReport]:
        """Flat ``<list> <space>`` blocks for tabular output."""
        blocks = {}
        for name, result in self.lists.items():
            blocks[f"{name} raw"] = result.raw
            blocks[f"{name} disentangled"] = result.disentangled
        return blocks


def evaluate(
    dataset: Dataset,
    checkpoint: Checkpoint,
    trial_lists: Mapping[str, list[Trial]],
    config: RunConfig,
    with_probes: bool = False,
) -> EvalResult:
    """Score trial lists on raw embeddings and on speaker codes.

    Args:
        dataset: Evaluation data.
        checkpoint: Trained framework.
        trial_lists: Trial lists by name (e.g. mismatch, standard).
        config: Run configuration (eval and probe sections).
        with_probes: Also train linear probes on the codes.

    Returns:
        EvalResult with both metric blocks per list.
    """
    framework = checkpoint.framework
    fingerprint = fingerprint_embeddings(dataset.embeddings)
    matches = checkpoint.fingerprint in (None, fingerprint)
    if not matches:
        logger.warning("Evaluation embeddings differ from the checkpoint's training embeddings")

    threads = config.eval.resolved_threads()
    store = speaker_code_store(framework.autoencoder, dataset, framework.dtype)
    costs = (config.eval.p_target, config.eval.c_miss, config.eval.c_fa)
    lists = {}
    for name, trials in trial_lists.items():
        raw_scores = score_trials(trials, raw_lookup(dataset), threads)
        disentangled_scores = score_trials(trials, store, threads)
        result = TrialListResult(
            raw_scores,
            disentangled_scores,
            compute_metrics(raw_scores, *costs),
            compute_metrics(disentangled_scores, *costs),
        )
        logger.info(
            "%s trials: EER raw %.4f, disentangled %.4f",
            name, result.raw.eer, result.disentangled.eer,
        )
        lists[name] = result

    probes = None
    if with_probes:
        utt_ids = [meta.utt_id for meta in dataset.metadata]
        codes = embed_codes(framework.autoencoder, dataset.matrix(utt_ids, framework.dtype))
        probes = probe_disentanglement(
            codes,
            np.array([meta.speaker_id for meta in dataset.metadata]),
            np.array([meta.session_id for meta in dataset.metadata]),
            config.probe,
            config.stream("probe"),
        )

    return EvalResult(lists, probes, matches)
