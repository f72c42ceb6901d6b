"""Triplet batch construction and the synthetic factor world."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from disn.core.embstore import load_embeddings, save_embeddings
from disn.exceptions import ArtifactError, EmptyDatasetError, ValidationError

if TYPE_CHECKING:
    from collections.abc import Iterator

    from disn.config import WorldConfig

logger = logging.getLogger(__name__)

METADATA_NAME = "metadata.jsonl"
GROUND_TRUTH_NAME = "ground_truth.json"
EMBEDDINGS_NAME = "embeddings.emb"
SEGMENT_SEPARATOR = "#"
CLEAN_TAG = "clean"


@dataclass(frozen=True)
class UtteranceMeta:
    """Identity of one utterance."""

    utt_id: str
    speaker_id: str
    session_id: str
    augmentation_tag: str

    def to_dict(self) -> dict[str, str]:
        return {
            "utt_id": self.utt_id,
            "speaker_id": self.speaker_id,
            "session_id": self.session_id,
            "augmentation_tag": self.augmentation_tag,
        }

    @classmethod
    def from_dict(cls, data: dict[str, object]) -> UtteranceMeta:
        try:
            return cls(
                utt_id=str(data["utt_id"]),
                speaker_id=str(data["speaker_id"]),
                session_id=str(data["session_id"]),
                augmentation_tag=str(data["augmentation_tag"]),
            )
        except KeyError as e:
            raise ValidationError(f"Metadata record is missing key {e}") from e


@dataclass(frozen=True)
class TripletIndex:
    """Three same-speaker utterances: u1, u2 share session and augmentation; u3 differs."""

    u1: str
    u2: str
    u3: str


@dataclass
class SkipRecord:
    """A speaker or session that could not contribute a triplet."""

    speaker_id: str
    session_id: str | None
    reason: str


@dataclass
class TripletSet:
    """Result of one triplet-construction pass."""

    triplets: list[TripletIndex] = field(default_factory=list)
    skipped: list[SkipRecord] = field(default_factory=list)


def check_sessions(metadata: list[UtteranceMeta]) -> None:
    """Verify every session belongs to exactly one speaker.

    Raises:
        ValidationError: If a session id appears under two speakers.
    """
    owner: dict[str, str] = {}
    for meta in metadata:
        seen = owner.setdefault(meta.session_id, meta.speaker_id)
        if seen != meta.speaker_id:
            raise ValidationError(
                f"Session {meta.session_id} belongs to both {seen} and {meta.speaker_id}"
            )


def group_sessions(metadata: list[UtteranceMeta]) -> dict[str, dict[str, list[UtteranceMeta]]]:
    """Group utterances as speaker -> session -> utterances, in first-seen order."""
    grouped: dict[str, dict[str, list[UtteranceMeta]]] = defaultdict(lambda: defaultdict(list))
    for meta in metadata:
        grouped[meta.speaker_id][meta.session_id].append(meta)
    return grouped


def build_triplets(metadata: list[UtteranceMeta], rng: np.random.Generator) -> TripletSet:
    """Draw one triplet per eligible (speaker, session).

    u1 and u2 are drawn without replacement from one session among utterances
    sharing an augmentation tag, in random order; u3 comes from a different
    session of the same speaker with a different tag.

    Args:
        metadata: Utterance records.
        rng: Sampler generator (consumed deterministically).

    Returns:
        TripletSet with triplets and skip records.

    Raises:
        EmptyDatasetError: If no speaker yields a triplet.
    """
    check_sessions(metadata)
    result = TripletSet()

    for speaker_id, sessions in group_sessions(metadata).items():
        if len(sessions) < 2:
            result.skipped.append(SkipRecord(speaker_id, None, "fewer than 2 sessions"))
            continue
        for session_id, utterances in sessions.items():
            by_tag: dict[str, list[UtteranceMeta]] = defaultdict(list)
            for meta in utterances:
                by_tag[meta.augmentation_tag].append(meta)
            tags = sorted(tag for tag, group in by_tag.items() if len(group) >= 2)
            if not tags:
                result.skipped.append(
                    SkipRecord(speaker_id, session_id, "no 2 utterances share an augmentation")
                )
                continue
            tag = tags[rng.integers(len(tags))]
            others = [
                meta
                for other_id, group in sessions.items()
                if other_id != session_id
                for meta in group
                if meta.augmentation_tag != tag
            ]
            if not others:
                result.skipped.append(
                    SkipRecord(
                        speaker_id, session_id, "no other session with a different augmentation"
                    )
                )
                continue
            pair = rng.choice(len(by_tag[tag]), size=2, replace=False)
            third = others[rng.integers(len(others))]
            result.triplets.append(
                TripletIndex(by_tag[tag][pair[0]].utt_id, by_tag[tag][pair[1]].utt_id, third.utt_id)
            )

    if result.skipped:
        logger.info("Triplet construction skipped %d speakers/sessions", len(result.skipped))
    if not result.triplets:
        raise EmptyDatasetError("No speaker has two sessions with usable utterances")
    return result


def check_triplet(triplet: TripletIndex, index: dict[str, UtteranceMeta]) -> list[str]:
    """List the triplet invariants a triplet violates (empty when valid)."""
    u1, u2, u3 = index[triplet.u1], index[triplet.u2], index[triplet.u3]
    problems = []
    if not u1.speaker_id == u2.speaker_id == u3.speaker_id:
        problems.append("speakers differ")
    if u1.session_id != u2.session_id or u1.session_id == u3.session_id:
        problems.append("session structure violated")
    if u1.augmentation_tag != u2.augmentation_tag or u1.augmentation_tag == u3.augmentation_tag:
        problems.append("augmentation structure violated")
    if u1.utt_id == u2.utt_id:
        problems.append("u1 and u2 are the same utterance")
    return problems


@dataclass
class Dataset:
    """Embeddings plus metadata; one vector (or several segments) per utterance."""

    embeddings: dict[str, np.ndarray]
    metadata: list[UtteranceMeta]

    def __post_init__(self) -> None:
        self._index = {meta.utt_id: meta for meta in self.metadata}
        self._segments: dict[str, list[str]] = defaultdict(list)
        for key in self.embeddings:
            self._segments[key.split(SEGMENT_SEPARATOR, 1)[0]].append(key)
        missing = [m.utt_id for m in self.metadata if m.utt_id not in self._segments]
        if missing:
            raise ValidationError(f"{len(missing)} utterances have no embedding, e.g. {missing[0]}")

    @property
    def dim(self) -> int:
        return next(iter(self.embeddings.values())).shape[0]

    @property
    def speakers(self) -> list[str]:
        """Speaker ids in sorted order (class index order)."""
        return sorted({meta.speaker_id for meta in self.metadata})

    def meta(self, utt_id: str) -> UtteranceMeta:
        return self._index[utt_id]

    @property
    def index(self) -> dict[str, UtteranceMeta]:
        return self._index

    def segments(self, utt_id: str) -> list[np.ndarray]:
        """All segment vectors of an utterance."""
        return [self.embeddings[key] for key in self._segments[utt_id]]

    def vector(self, utt_id: str) -> np.ndarray:
        """First segment of an utterance (training input)."""
        return self.embeddings[self._segments[utt_id][0]]

    def matrix(self, utt_ids: list[str], dtype: str = "float32") -> np.ndarray:
        return np.stack([self.vector(u) for u in utt_ids]).astype(dtype)


def iter_batches(
    triplets: list[TripletIndex],
    batch_size: int,
    rng: np.random.Generator,
) -> Iterator[list[TripletIndex]]:
    """Shuffle triplets and yield batches; a last batch under two triplets is dropped."""
    order = rng.permutation(len(triplets))
    for start in range(0, len(order), batch_size):
        chunk = [triplets[i] for i in order[start : start + batch_size]]
        if len(chunk) >= 2:
            yield chunk


# -- synthetic factor world ---------------------------------------------------


@dataclass
class GroundTruth:
    """Generating factors of a synthetic world."""

    speaker_factors: np.ndarray
    session_factors: np.ndarray
    session_perturbations: np.ndarray
    speaker_mixing: np.ndarray
    env_mixing: np.ndarray
    speaker_ids: list[str]
    session_ids: list[str]
    session_tags: list[str]

    def noiseless(self, speaker_index: int, session_index: int) -> np.ndarray:
        """Embedding component without per-utterance noise."""
        env = self.session_factors[session_index] + self.session_perturbations[session_index]
        return self.speaker_factors[speaker_index] @ self.speaker_mixing + env @ self.env_mixing

    def to_dict(self) -> dict[str, object]:
        return {
            "speaker_ids": self.speaker_ids,
            "session_ids": self.session_ids,
            "session_tags": self.session_tags,
            "speaker_factors": self.speaker_factors.tolist(),
            "session_factors": self.session_factors.tolist(),
            "session_perturbations": self.session_perturbations.tolist(),
            "speaker_mixing": self.speaker_mixing.tolist(),
            "env_mixing": self.env_mixing.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, list]) -> GroundTruth:
        return cls(
            speaker_factors=np.asarray(data["speaker_factors"], dtype=np.float64),
            session_factors=np.asarray(data["session_factors"], dtype=np.float64),
            session_perturbations=np.asarray(data["session_perturbations"], dtype=np.float64),
            speaker_mixing=np.asarray(data["speaker_mixing"], dtype=np.float64),
            env_mixing=np.asarray(data["env_mixing"], dtype=np.float64),
            speaker_ids=list(data["speaker_ids"]),
            session_ids=list(data["session_ids"]),
            session_tags=list(data["session_tags"]),
        )


@dataclass
class SynthDataset:
    """A generated dataset with its ground truth."""

    dataset: Dataset
    truth: GroundTruth


def synth_generate(world: WorldConfig, rng: np.random.Generator) -> SynthDataset:
    """Generate embeddings ``e = s_k W_s + (v_m + delta_m) W_e + sigma * eps``.

    Every session draws one augmentation tag; its perturbation delta_m is shared
    by all of the session's utterances and is zero for the clean tag.

    Args:
        world: World configuration.
        rng: World generator.

    Returns:
        SynthDataset with float32 embeddings and float64 ground truth.
    """
    ds, de, dim = world.speaker_factor_dim, world.env_factor_dim, world.embedding_dim
    speaker_mixing = rng.standard_normal((ds, dim)) / np.sqrt(ds)
    env_mixing = rng.standard_normal((de, dim)) / np.sqrt(de)

    n_sessions = world.n_speakers * world.sessions_per_speaker
    speaker_factors = rng.standard_normal((world.n_speakers, ds))
    session_factors = rng.standard_normal((n_sessions, de))
    tag_index = rng.integers(len(world.augmentations), size=n_sessions)
    session_tags = [world.augmentations[i] for i in tag_index]
    perturbations = world.aug_sigma * rng.standard_normal((n_sessions, de))
    for m, tag in enumerate(session_tags):
        if tag == CLEAN_TAG:
            perturbations[m] = 0.0

    speaker_ids = [f"spk{k:03d}" for k in range(world.n_speakers)]
    session_ids = [
        f"{speaker_ids[k]}-ses{s:02d}"
        for k in range(world.n_speakers)
        for s in range(world.sessions_per_speaker)
    ]
    truth = GroundTruth(
        speaker_factors,
        session_factors,
        perturbations,
        speaker_mixing,
        env_mixing,
        speaker_ids,
        session_ids,
        session_tags,
    )

    embeddings: dict[str, np.ndarray] = {}
    metadata: list[UtteranceMeta] = []
    for m, session_id in enumerate(session_ids):
        k = m // world.sessions_per_speaker
        clean = truth.noiseless(k, m)
        for u in range(world.utterances_per_session):
            utt_id = f"{session_id}-utt{u:02d}"
            metadata.append(UtteranceMeta(utt_id, speaker_ids[k], session_id, session_tags[m]))
            for seg in range(world.segments_per_utterance):
                vector = clean + world.noise_sigma * rng.standard_normal(dim)
                key = (
                    utt_id
                    if world.segments_per_utterance == 1
                    else f"{utt_id}{SEGMENT_SEPARATOR}{seg}"
                )
                embeddings[key] = vector.astype(np.float32)

    return SynthDataset(Dataset(embeddings, metadata), truth)


def save_metadata(metadata: list[UtteranceMeta], path: Path) -> None:
    """Write metadata as JSON lines."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            for meta in metadata:
                f.write(json.dumps(meta.to_dict(), sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e


def load_metadata(path: Path) -> list[UtteranceMeta]:
    """Read JSON-lines metadata.

    Raises:
        ValidationError: If the file is missing or a line is not a valid record.
    """
    if not path.exists():
        raise ValidationError(f"Metadata file not found: {path}")
    metadata = []
    with path.open(encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{line_number}: invalid JSON: {e}") from e
            metadata.append(UtteranceMeta.from_dict(data))
    return metadata


def save_ground_truth(truth: GroundTruth, path: Path) -> None:
    """Write ground-truth factors as JSON."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(truth.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e


def load_ground_truth(path: Path) -> GroundTruth:
    """Read ground-truth factors."""
    if not path.exists():
        raise ValidationError(f"Ground-truth file not found: {path}")
    return GroundTruth.from_dict(json.loads(path.read_text(encoding="utf-8")))


def save_dataset(dataset: Dataset, out_dir: Path) -> None:
    """Write embeddings and metadata into a dataset directory."""
    save_embeddings(dataset.embeddings, out_dir / EMBEDDINGS_NAME)
    save_metadata(dataset.metadata, out_dir / METADATA_NAME)


def load_dataset(dataset_dir: Path, expected_dim: int | None = None) -> Dataset:
    """Read a dataset directory written by ``save_dataset`` or by an extractor.

    Raises:
        EmbeddingFileError: If the embedding file is missing or malformed.
        ValidationError: If metadata is missing or does not cover the embeddings.
    """
    embeddings = load_embeddings(dataset_dir / EMBEDDINGS_NAME, expected_dim)
    metadata = load_metadata(dataset_dir / METADATA_NAME)
    if not embeddings or not metadata:
        raise EmptyDatasetError(f"Dataset in {dataset_dir} is empty")
    return Dataset(embeddings, metadata)
