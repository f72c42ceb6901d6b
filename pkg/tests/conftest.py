"""Shared fixtures for disn tests."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pytest
import yaml

from disn.config import RunConfig
from disn.core.sampler import UtteranceMeta, save_dataset, synth_generate

if TYPE_CHECKING:
    from collections.abc import Callable

    from disn.core.sampler import SynthDataset

SMALL_CONFIG = {
    "seed": 7,
    "world": {
        "n_speakers": 6,
        "sessions_per_speaker": 3,
        "utterances_per_session": 4,
        "speaker_factor_dim": 4,
        "env_factor_dim": 4,
        "embedding_dim": 8,
    },
    "model": {"input_dim": 8, "code_dim": 6, "env_hidden_dim": 6, "env_out_dim": 4},
    "train": {"epochs": 2, "batch_size": 4, "checkpoint_every": 1},
    "eval": {"n_trials": 40},
    "probe": {"epochs": 40},
}


@pytest.fixture(autouse=True)
def isolate_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep the caller's DISN_THREADS out of every test."""
    monkeypatch.delenv("DISN_THREADS", raising=False)


@pytest.fixture
def rng() -> np.random.Generator:
    """Return a fixed-seed generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_config() -> RunConfig:
    """Return a run config sized for fast tests."""
    return RunConfig.model_validate(SMALL_CONFIG)


@pytest.fixture
def small_config_file(tmp_path: Path) -> Path:
    """Write the fast-test config as YAML with paths inside tmp_path."""
    data = {
        **SMALL_CONFIG,
        "paths": {"dataset_dir": str(tmp_path / "data"), "run_dir": str(tmp_path / "run")},
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


@pytest.fixture
def small_synth(small_config: RunConfig) -> SynthDataset:
    """Generate the fast-test synthetic world."""
    return synth_generate(small_config.world, small_config.stream("world"))


@pytest.fixture
def small_dataset_dir(tmp_path: Path, small_synth: SynthDataset) -> Path:
    """Save the fast-test world to a dataset directory."""
    out = tmp_path / "data"
    save_dataset(small_synth.dataset, out)
    return out


@pytest.fixture
def make_metadata() -> Callable[[list[tuple[str, str, str, str]]], list[UtteranceMeta]]:
    """Return a builder of metadata from (utt, speaker, session, tag) tuples."""

    def build(rows: list[tuple[str, str, str, str]]) -> list[UtteranceMeta]:
        return [UtteranceMeta(*row) for row in rows]

    return build
