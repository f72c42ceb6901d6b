"""Unit tests for the linear disentanglement probes."""

from __future__ import annotations

import numpy as np
import pytest

from disn.config import ProbeConfig
from disn.core.disentangler import CodeBatch
from disn.core.probes import (
    format_probe_table,
    probe_disentanglement,
    stratified_split,
    train_linear_probe,
)
from disn.exceptions import ProbeError, ShapeError

CONFIG = ProbeConfig(epochs=200, lr=0.05, holdout_fraction=0.25)


def clustered(
    rng: np.random.Generator, n_classes: int, per_class: int, dim: int
) -> tuple[np.ndarray, np.ndarray]:
    """Well-separated class clusters and their labels."""
    labels = np.repeat(np.arange(n_classes), per_class)
    centers = 5.0 * rng.standard_normal((n_classes, dim))
    return centers[labels] + 0.1 * rng.standard_normal((labels.size, dim)), labels


class TestStratifiedSplit:
    """Tests for the per-class split."""

    def test_every_class_trains(self, rng: np.random.Generator) -> None:
        """Test that each class keeps a training row and the split is a partition."""
        labels = np.array([0, 0, 0, 0, 1, 1, 2])
        train, holdout = stratified_split(labels, 0.5, rng)
        assert set(labels[train]) == {0, 1, 2}
        assert sorted(np.concatenate([train, holdout])) == list(range(labels.size))
        assert holdout.size == 2 + 1


class TestTrainLinearProbe:
    """Tests for a single probe."""

    def test_separable(self, rng: np.random.Generator) -> None:
        """Test that clustered classes are recovered."""
        x, labels = clustered(rng, 3, 20, 4)
        result = train_linear_probe(x, labels, CONFIG, rng)
        assert result.accuracy >= 0.9
        assert result.chance == pytest.approx(1 / 3)
        assert result.n_classes == 3
        assert result.n_holdout == 15

    def test_random_labels_near_chance(self, rng: np.random.Generator) -> None:
        """Test that a probe cannot predict labels independent of the inputs."""
        x = rng.standard_normal((200, 8))
        labels = rng.integers(4, size=200)
        result = train_linear_probe(x, labels, CONFIG, rng)
        assert result.accuracy < 0.6

    def test_string_labels(self, rng: np.random.Generator) -> None:
        """Test that labels may be ids rather than indices."""
        x, labels = clustered(rng, 2, 8, 3)
        names = np.array(["spk-a", "spk-b"])[labels]
        assert train_linear_probe(x, names, CONFIG, rng).n_classes == 2

    def test_single_class(self, rng: np.random.Generator) -> None:
        """Test that one class cannot be probed."""
        with pytest.raises(ProbeError, match="single class"):
            train_linear_probe(rng.standard_normal((5, 2)), np.zeros(5), CONFIG, rng)

    def test_no_holdout(self, rng: np.random.Generator) -> None:
        """Test that singleton classes leave nothing to hold out."""
        with pytest.raises(ProbeError, match="held-out"):
            train_linear_probe(rng.standard_normal((3, 2)), np.arange(3), CONFIG, rng)

    def test_row_mismatch(self, rng: np.random.Generator) -> None:
        """Test that inputs and labels must align."""
        with pytest.raises(ShapeError):
            train_linear_probe(rng.standard_normal((4, 2)), np.zeros(3), CONFIG, rng)


class TestProbeDisentanglement:
    """Tests for the four-probe report."""

    def test_factorized_codes(self, rng: np.random.Generator) -> None:
        """Test codes where each half carries exactly one factor."""
        spk, speakers = clustered(rng, 3, 24, 3)
        sessions = np.tile(np.arange(4), 18)
        session_centers = 5.0 * rng.standard_normal((4, 3))
        env = session_centers[sessions] + 0.1 * rng.standard_normal((72, 3))
        report = probe_disentanglement(CodeBatch(spk, env), speakers, sessions, CONFIG, rng)

        assert report.speaker_from_spk.accuracy >= 0.9
        assert report.session_from_env.accuracy >= 0.9
        assert report.session_from_spk.accuracy < 0.6
        assert 0.0 <= report.mapc <= 1.0
        assert set(report.to_dict()) == {
            "speaker_from_spk",
            "speaker_from_env",
            "session_from_spk",
            "session_from_env",
            "mapc",
        }
        assert format_probe_table(report).row_count == 5
