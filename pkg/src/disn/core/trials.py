"""Verification trial lists (environment-mismatch and standard) and parallel scoring."""

from __future__ import annotations

import asyncio
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from disn.core.metrics import ScoreSet, score_trial
from disn.core.sampler import group_sessions
from disn.exceptions import ArtifactError, ProtocolError, ValidationError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from disn.core.sampler import UtteranceMeta

logger = logging.getLogger(__name__)

TARGET = 1
NONTARGET = 0


@dataclass(frozen=True)
class Trial:
    """One verification trial."""

    label: int
    enroll: str
    test: str

    def to_line(self) -> str:
        return f"{self.label} {self.enroll} {self.test}"


if TYPE_CHECKING:
    TrialBuilder = Callable[[list[UtteranceMeta], np.random.Generator, int], list[Trial]]


def _speaker_utterances(metadata: list[UtteranceMeta]) -> dict[str, list[str]]:
    by_speaker: dict[str, list[str]] = defaultdict(list)
    for meta in metadata:
        by_speaker[meta.speaker_id].append(meta.utt_id)
    return by_speaker


def _pick(items: Sequence[str], rng: np.random.Generator) -> str:
    return items[int(rng.integers(len(items)))]


def _nontargets(
    by_speaker: dict[str, list[str]], rng: np.random.Generator, count: int
) -> list[Trial]:
    speakers = sorted(by_speaker)
    trials = []
    for _ in range(count):
        first, second = rng.choice(len(speakers), size=2, replace=False)
        trials.append(
            Trial(
                NONTARGET,
                _pick(by_speaker[speakers[first]], rng),
                _pick(by_speaker[speakers[second]], rng),
            )
        )
    return trials


def build_mismatch_trials(
    metadata: list[UtteranceMeta],
    rng: np.random.Generator,
    n_trials: int = 2000,
) -> list[Trial]:
    """Draw a balanced trial list with environment mismatch on the target side.

    Target trials pair two utterances of one speaker from different sessions;
    nontarget trials pair utterances of two different speakers.

    Args:
        metadata: Utterance records.
        rng: Trials generator.
        n_trials: Total trial count (targets get the smaller half).

    Returns:
        Targets followed by nontargets.

    Raises:
        ProtocolError: If no speaker has two sessions or fewer than two speakers exist.
    """
    grouped = group_sessions(metadata)
    eligible = [s for s in sorted(grouped) if len(grouped[s]) >= 2]
    if not eligible:
        raise ProtocolError("No speaker has utterances in two sessions; cannot build target trials")
    by_speaker = _speaker_utterances(metadata)
    if len(by_speaker) < 2:
        raise ProtocolError("Nontarget trials need at least two speakers")

    n_target = n_trials // 2
    trials = []
    for _ in range(n_target):
        speaker = _pick(eligible, rng)
        sessions = list(grouped[speaker].values())
        first, second = rng.choice(len(sessions), size=2, replace=False)
        enroll = _pick([m.utt_id for m in sessions[first]], rng)
        test = _pick([m.utt_id for m in sessions[second]], rng)
        trials.append(Trial(TARGET, enroll, test))
    trials.extend(_nontargets(by_speaker, rng, n_trials - n_target))
    logger.info("Built %d mismatch target and %d nontarget trials", n_target, n_trials - n_target)
    return trials


def build_standard_trials(
    metadata: list[UtteranceMeta],
    rng: np.random.Generator,
    n_trials: int = 2000,
) -> list[Trial]:
    """Draw a balanced trial list without session constraints.

    Target trials pair two distinct utterances of one speaker, from the same
    session or not; nontargets are drawn as in :func:`build_mismatch_trials`.

    Raises:
        ProtocolError: If no speaker has two utterances or fewer than two speakers exist.
    """
    by_speaker = _speaker_utterances(metadata)
    eligible = [s for s in sorted(by_speaker) if len(by_speaker[s]) >= 2]
    if not eligible:
        raise ProtocolError("No speaker has two utterances; cannot build target trials")
    if len(by_speaker) < 2:
        raise ProtocolError("Nontarget trials need at least two speakers")

    n_target = n_trials // 2
    trials = []
    for _ in range(n_target):
        utterances = by_speaker[_pick(eligible, rng)]
        first, second = rng.choice(len(utterances), size=2, replace=False)
        trials.append(Trial(TARGET, utterances[first], utterances[second]))
    trials.extend(_nontargets(by_speaker, rng, n_trials - n_target))
    logger.info("Built %d standard target and %d nontarget trials", n_target, n_trials - n_target)
    return trials


TRIAL_BUILDERS: dict[str, TrialBuilder] = {
    "mismatch": build_mismatch_trials,
    "standard": build_standard_trials,
}


def build_trials(
    kind: str,
    metadata: list[UtteranceMeta],
    rng: np.random.Generator,
    n_trials: int = 2000,
) -> list[Trial]:
    """Draw a trial list of the named kind (``mismatch`` or ``standard``)."""
    try:
        builder = TRIAL_BUILDERS[kind]
    except KeyError:
        raise ProtocolError(f"Unknown trial kind: {kind}") from None
    return builder(metadata, rng, n_trials)


def write_trials(trials: list[Trial], path: Path) -> None:
    """Write one ``label enroll test`` line per trial."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(t.to_line() + "\n" for t in trials), encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e


def read_trials(path: Path) -> list[Trial]:
    """Read a trial list.

    Raises:
        ValidationError: If the file is missing or a line is malformed.
    """
    if not path.exists():
        raise ValidationError(f"Trial list not found: {path}")
    trials = []
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise ValidationError(
                f"{path}:{line_number}: expected 'label enroll test' with label 0/1"
            )
        trials.append(Trial(int(parts[0]), parts[1], parts[2]))
    return trials


async def score_trials_async(
    trials: list[Trial],
    lookup: Callable[[str], Sequence[np.ndarray]],
    max_concurrent: int = 1,
) -> ScoreSet:
    """Score trials in worker threads, at most ``max_concurrent`` at a time.

    Args:
        trials: Trials to score.
        lookup: Maps an utterance id to its segment vectors (read-only).
        max_concurrent: Worker cap.

    Returns:
        ScoreSet in trial order.
    """
    semaphore = asyncio.Semaphore(max_concurrent)

    async def score_with_semaphore(trial: Trial) -> float:
        async with semaphore:
            return await asyncio.to_thread(
                score_trial, lookup(trial.enroll), lookup(trial.test), (trial.enroll, trial.test)
            )

    scores = await asyncio.gather(*(score_with_semaphore(t) for t in trials))
    return ScoreSet(np.array(scores, dtype=np.float64), np.array([t.label for t in trials]))


def score_trials(
    trials: list[Trial],
    lookup: Callable[[str], Sequence[np.ndarray]],
    max_concurrent: int = 1,
) -> ScoreSet:
    """Synchronous wrapper around :func:`score_trials_async`."""
    if max_concurrent <= 1:
        scores = [score_trial(lookup(t.enroll), lookup(t.test), (t.enroll, t.test)) for t in trials]
        return ScoreSet(np.array(scores, dtype=np.float64), np.array([t.label for t in trials]))
    return asyncio.run(score_trials_async(trials, lookup, max_concurrent))
