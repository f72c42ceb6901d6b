"""Unit tests for raw-versus-disentangled evaluation."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from disn.config import RunConfig
from disn.core.checkpoint import Checkpoint, load_checkpoint
from disn.core.disentangler import embed_codes
from disn.core.evaluation import evaluate, raw_lookup, speaker_code_store
from disn.core.sampler import SynthDataset
from disn.core.trainer import fit
from disn.core.trials import Trial, build_mismatch_trials, build_standard_trials
from disn.exceptions import ScoringError


@pytest.fixture
def checkpoint(tmp_path: Path, small_config: RunConfig, small_synth: SynthDataset) -> Checkpoint:
    """Train the fast-test model and load its checkpoint."""
    path = tmp_path / "checkpoint.disn"
    fit(small_synth.dataset, small_config, path)
    return load_checkpoint(path, small_config.model)


@pytest.fixture
def trials(small_config: RunConfig, small_synth: SynthDataset) -> list[Trial]:
    """Draw the fast-test trial list."""
    return build_mismatch_trials(
        small_synth.dataset.metadata, small_config.stream("trials"), small_config.eval.n_trials
    )


class TestSpeakerCodeStore:
    """Tests for cached speaker codes."""

    def test_codes_match_direct_encoding(
        self, checkpoint: Checkpoint, small_synth: SynthDataset
    ) -> None:
        """Test that stored codes equal eval-mode codes of each vector."""
        dataset = small_synth.dataset
        store = speaker_code_store(checkpoint.framework.autoencoder, dataset, "float32")
        utt_id = dataset.metadata[5].utt_id
        direct = embed_codes(
            checkpoint.framework.autoencoder, dataset.matrix([utt_id], "float32")
        ).spk[0]
        assert len(store(utt_id)) == 1
        np.testing.assert_allclose(store(utt_id)[0], direct, rtol=1e-5, atol=1e-7)
        assert store(utt_id)[0].shape == (checkpoint.framework.config.spk_dim,)

    def test_unknown_utterance(self, checkpoint: Checkpoint, small_synth: SynthDataset) -> None:
        """Test that unknown ids are scoring errors."""
        store = speaker_code_store(checkpoint.framework.autoencoder, small_synth.dataset, "float32")
        with pytest.raises(ScoringError, match="nope"):
            store("nope")
        with pytest.raises(ScoringError, match="nope"):
            raw_lookup(small_synth.dataset)("nope")


class TestEvaluate:
    """Tests for the evaluation driver."""

    def test_both_blocks(
        self,
        checkpoint: Checkpoint,
        small_config: RunConfig,
        small_synth: SynthDataset,
        trials: list[Trial],
    ) -> None:
        """Test metric blocks, trial counts and score ranges."""
        result = evaluate(small_synth.dataset, checkpoint, {"mismatch": trials}, small_config)
        assert result.to_dict().keys() == {"mismatch"}
        assert set(result.to_dict()["mismatch"]) == {"raw", "disentangled"}
        scored = result.lists["mismatch"]
        assert scored.raw.n_target == 20
        assert scored.disentangled.n_nontarget == 20
        for report in (scored.raw, scored.disentangled):
            assert 0.0 <= report.eer <= 1.0
        assert np.all(np.abs(scored.disentangled_scores.scores) <= 1.0 + 1e-9)
        assert list(result.metric_blocks()) == ["mismatch raw", "mismatch disentangled"]
        assert result.fingerprint_matches
        assert result.probes is None

    def test_several_lists(
        self,
        checkpoint: Checkpoint,
        small_config: RunConfig,
        small_synth: SynthDataset,
        trials: list[Trial],
    ) -> None:
        """Test that each trial list gets its own blocks and is scored alone."""
        standard = build_standard_trials(
            small_synth.dataset.metadata, np.random.default_rng(5), small_config.eval.n_trials
        )
        both = evaluate(
            small_synth.dataset,
            checkpoint,
            {"mismatch": trials, "standard": standard},
            small_config,
        )
        alone = evaluate(small_synth.dataset, checkpoint, {"standard": standard}, small_config)
        assert list(both.to_dict()) == ["mismatch", "standard"]
        assert both.to_dict()["standard"] == alone.to_dict()["standard"]

    def test_threads_do_not_change_scores(
        self,
        monkeypatch: pytest.MonkeyPatch,
        checkpoint: Checkpoint,
        small_config: RunConfig,
        small_synth: SynthDataset,
        trials: list[Trial],
    ) -> None:
        """Test that concurrent scoring is deterministic."""
        single = evaluate(small_synth.dataset, checkpoint, {"mismatch": trials}, small_config)
        monkeypatch.setenv("DISN_THREADS", "3")
        threaded = evaluate(small_synth.dataset, checkpoint, {"mismatch": trials}, small_config)
        np.testing.assert_array_equal(
            single.lists["mismatch"].raw_scores.scores,
            threaded.lists["mismatch"].raw_scores.scores,
        )
        assert single.to_dict() == threaded.to_dict()

    def test_probes(
        self,
        checkpoint: Checkpoint,
        small_config: RunConfig,
        small_synth: SynthDataset,
        trials: list[Trial],
    ) -> None:
        """Test that probes add their own block."""
        result = evaluate(
            small_synth.dataset, checkpoint, {"mismatch": trials}, small_config, with_probes=True
        )
        assert result.probes is not None
        assert "probes" in result.to_dict()
        assert 0.0 <= result.probes.mapc <= 1.0

    def test_fingerprint_mismatch(
        self,
        checkpoint: Checkpoint,
        small_config: RunConfig,
        small_synth: SynthDataset,
        trials: list[Trial],
    ) -> None:
        """Test that other data is flagged but still evaluated."""
        checkpoint.fingerprint = "0" * 16
        result = evaluate(small_synth.dataset, checkpoint, {"mismatch": trials}, small_config)
        assert not result.fingerprint_matches

    def test_unknown_trial_utterance(
        self, checkpoint: Checkpoint, small_config: RunConfig, small_synth: SynthDataset
    ) -> None:
        """Test a trial list naming an utterance outside the dataset."""
        with pytest.raises(ScoringError):
            evaluate(
                small_synth.dataset,
                checkpoint,
                {"custom": [Trial(1, "ghost", "ghost")]},
                small_config,
            )
