"""Configuration loading and validation for disn."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from disn.core.hasher import stream_key
from disn.exceptions import ArtifactError, ConfigError

RESOLVED_CONFIG_NAME = "config.resolved.json"
CONFIG_VERSION = 1

# Sizes used with the two reference extractors; explicit keys always win.
PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "resnet34": {
        "model": {"code_dim": 1024, "env_hidden_dim": 512, "env_out_dim": 512},
        "train": {"decay_every": 16, "batch_size": 220},
    },
    "ecapa": {
        "model": {"code_dim": 512, "env_hidden_dim": 256, "env_out_dim": 128},
        "train": {"decay_every": 8, "batch_size": 256},
    },
}


class StrictModel(BaseModel):
    """Base model rejecting unknown keys."""

    model_config = ConfigDict(extra="forbid")


class WorldConfig(StrictModel):
    """Configuration for the synthetic factor world."""

    n_speakers: int = Field(default=50, ge=1)
    sessions_per_speaker: int = Field(default=8, ge=1)
    utterances_per_session: int = Field(default=4, ge=1)
    segments_per_utterance: int = Field(default=1, ge=1)
    speaker_factor_dim: int = Field(default=16, ge=1)
    env_factor_dim: int = Field(default=16, ge=1)
    embedding_dim: int = Field(default=64, ge=1)
    noise_sigma: float = Field(default=0.5, ge=0.0)
    aug_sigma: float = Field(default=0.5, ge=0.0)
    augmentations: list[str] = Field(
        default_factory=lambda: ["clean", "noise", "music", "babble", "reverb"],
        min_length=2,
    )


class ModelConfig(StrictModel):
    """Configuration for the auto-encoder and discriminator sizes."""

    input_dim: int = Field(default=64, ge=1)
    code_dim: int = Field(default=32, ge=2)
    env_hidden_dim: int = Field(default=32, ge=1)
    env_out_dim: int = Field(default=32, ge=1)
    bn_momentum: float = Field(default=0.1, gt=0.0, lt=1.0)
    bn_eps: float = Field(default=1e-5, gt=0.0)

    @field_validator("code_dim")
    @classmethod
    def _code_dim_even(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f"code_dim must be even to split in half, got {value}")
        return value

    @property
    def spk_dim(self) -> int:
        """Speaker-code width (first half of the code)."""
        return self.code_dim // 2

    @property
    def env_dim(self) -> int:
        """Environment-code width (second half of the code)."""
        return self.code_dim - self.spk_dim


class LossWeights(StrictModel):
    """Weights of the composite objective and the environment triplet margin."""

    lambda_s: float = Field(default=1.0, ge=0.0)
    lambda_r: float = Field(default=1.0, ge=0.0)
    lambda_e: float = Field(default=1.0, ge=0.0)
    lambda_adv: float = Field(default=0.5, ge=0.0)
    lambda_c: float = Field(default=1.0, ge=0.0)
    margin: float = Field(default=1.0, ge=0.0)


class TrainConfig(StrictModel):
    """Configuration for the optimization loop."""

    weights: LossWeights = Field(default_factory=LossWeights)
    batch_size: int = Field(default=64, ge=2, description="Batch size in triplets")
    epochs: int = Field(default=30, ge=1)
    lr0: float = Field(default=0.001, gt=0.0)
    decay_factor: float = Field(default=0.75, gt=0.0, lt=1.0)
    decay_every: int = Field(default=16, ge=1)
    precision: Literal["float32", "float64"] = "float32"
    variant: Literal["full", "ablated", "grl_only"] = "full"
    swap_codes: bool = True
    use_adversary: bool = True
    checkpoint_every: int = Field(default=5, ge=1)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps_adam: float = Field(default=1e-8, gt=0.0)

    def apply_variant(self) -> TrainConfig:
        """Return the config with the variant's forced settings applied."""
        if self.variant == "ablated":
            weights = self.weights.model_copy(update={"lambda_adv": 0.0, "lambda_c": 0.0})
            return self.model_copy(update={"weights": weights, "swap_codes": False})
        if self.variant == "grl_only":
            weights = self.weights.model_copy(update={"lambda_r": 0.0})
            return self.model_copy(update={"weights": weights, "swap_codes": False})
        return self


class EvalConfig(StrictModel):
    """Configuration for trial generation and detection metrics."""

    n_trials: int = Field(default=2000, ge=2)
    p_target: float = Field(default=0.05, gt=0.0, lt=1.0)
    c_miss: float = Field(default=1.0, gt=0.0)
    c_fa: float = Field(default=1.0, gt=0.0)
    trial_kinds: list[Literal["mismatch", "standard"]] = Field(
        default_factory=lambda: ["mismatch", "standard"], min_length=1
    )
    threads: int | None = Field(default=None, ge=1)
    trials_path: Path | None = None

    @field_validator("trial_kinds")
    @classmethod
    def _distinct_kinds(cls, value: list[str]) -> list[str]:
        if len(set(value)) != len(value):
            raise ValueError(f"trial_kinds lists a kind twice: {value}")
        return value

    def resolved_threads(self) -> int:
        """Worker cap for trial scoring (config, then $DISN_THREADS, then 1)."""
        if self.threads is not None:
            return self.threads
        raw = os.environ.get("DISN_THREADS")
        if raw is None:
            return 1
        try:
            value = int(raw)
        except ValueError as e:
            raise ConfigError(f"DISN_THREADS must be an integer, got {raw!r}") from e
        if value < 1:
            raise ConfigError(f"DISN_THREADS must be >= 1, got {value}")
        return value


class ProbeConfig(StrictModel):
    """Configuration for the linear disentanglement probes."""

    epochs: int = Field(default=300, ge=1)
    lr: float = Field(default=0.05, gt=0.0)
    holdout_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)


class PathsConfig(StrictModel):
    """Input and output locations."""

    dataset_dir: Path = Path("data")
    run_dir: Path = Path("runs/default")
    checkpoint: Path | None = None

    def model_post_init(self, __context: object) -> None:
        """Expand environment variables and user home in all paths."""
        del __context  # Unused, required by pydantic interface

        self.dataset_dir = Path(os.path.expandvars(str(self.dataset_dir))).expanduser()
        self.run_dir = Path(os.path.expandvars(str(self.run_dir))).expanduser()
        if self.checkpoint is not None:
            self.checkpoint = Path(os.path.expandvars(str(self.checkpoint))).expanduser()

    @property
    def checkpoint_path(self) -> Path:
        """Checkpoint location (defaults to the run directory)."""
        return self.checkpoint or self.run_dir / "checkpoint.disn"


class RunConfig(StrictModel):
    """Main configuration for disn."""

    version: int = CONFIG_VERSION
    seed: int = Field(default=0, ge=0)
    preset: Literal["resnet34", "ecapa"] | None = None
    world: WorldConfig = Field(default_factory=WorldConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @field_validator("version")
    @classmethod
    def _known_version(cls, value: int) -> int:
        if value != CONFIG_VERSION:
            raise ValueError(f"Unsupported config version {value} (expected {CONFIG_VERSION})")
        return value

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("preset") is None:
            return data
        preset = PRESETS.get(data["preset"])
        if preset is None:
            return data  # rejected by the Literal field
        merged = dict(data)
        for section, defaults in preset.items():
            given = merged.get(section) or {}
            if not isinstance(given, dict):
                return data
            merged[section] = {**defaults, **given}
        return merged

    def stream(self, name: str) -> np.random.Generator:
        """Independent random generator for a named sub-stream of the run seed.

        Args:
            name: Sub-stream name (world, sampler, init, trials.<kind>, probe).

        Returns:
            Generator seeded from (seed, name) only.
        """
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream_key(name)]))


def parse_override(override: str) -> tuple[list[str], Any]:
    """Parse a dotted ``key=value`` override.

    Args:
        override: Text such as ``train.epochs=5``.

    Returns:
        Tuple of (key path, parsed value).

    Raises:
        ConfigError: If the override is not of the form key=value.
    """
    key, sep, raw = override.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Override must look like key=value, got {override!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse value in override {override!r}: {e}") from e
    return key.strip().split("."), value


def apply_overrides(data: dict[str, Any], overrides: list[str] | tuple[str, ...]) -> dict[str, Any]:
    """Apply dotted overrides to raw config data.

    Unknown keys are left to model validation, which rejects them.

    Args:
        data: Raw config mapping (not modified).
        overrides: Sequence of ``key=value`` strings.

    Returns:
        New mapping with overrides applied.
    """
    result = json.loads(json.dumps(data, default=str))
    for override in overrides:
        path, value = parse_override(override)
        node = result
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"Override {override!r}: {part!r} is not a section")
            node = child
        node[path[-1]] = value
    return result


def load_config(
    config_path: Path | None = None,
    overrides: list[str] | tuple[str, ...] = (),
) -> RunConfig:
    """Load a run configuration from a YAML or JSON file.

    Args:
        config_path: Config file; None uses defaults only.
        overrides: Dotted ``key=value`` overrides applied after the file.

    Returns:
        Validated RunConfig.

    Raises:
        ConfigError: If the file is unreadable, malformed or invalid.
    """
    data: Any = {}
    if config_path is not None:
        if not config_path.exists():
            raise ConfigError(f"Config file not found: {config_path}")
        try:
            with config_path.open(encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML/JSON in config file {config_path}: {e}") from e
        except OSError as e:
            raise ConfigError(f"Could not read config file {config_path}: {e}") from e

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {config_path} must contain a mapping at top level")

    data = apply_overrides(data, overrides)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        source = config_path or "defaults"
        raise ConfigError(f"Invalid configuration in {source}: {e}") from e


def write_resolved_config(config: RunConfig, out_dir: Path) -> Path:
    """Persist the fully resolved configuration next to run artifacts.

    Args:
        config: Resolved configuration.
        out_dir: Artifact directory (created if needed).

    Returns:
        Path of the written file.
    """
    path = out_dir / RESOLVED_CONFIG_NAME
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e
    return path
