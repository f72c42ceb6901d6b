"""Training loop: the composite-objective step, epochs, checkpoints and loss history."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from rich.table import Table

from disn.core.checkpoint import Checkpoint, save_checkpoint
from disn.core.diffcore import Tensor, backward
from disn.core.discriminators import (
    env_triplet_loss,
    mapc_loss,
    route_adversarial,
    speaker_loss,
)
from disn.core.disentangler import (
    decode,
    encode,
    recons_loss,
    split_codes,
    swap_permutation,
    swap_speaker_codes,
)
from disn.core.framework import Framework
from disn.core.hasher import fingerprint_embeddings
from disn.core.optim import Adam, AdamState, HistoryRow, lr_at
from disn.core.sampler import build_triplets, iter_batches
from disn.exceptions import (
    ArtifactError,
    ConfigMismatchError,
    DimensionMismatchError,
    EmptyDatasetError,
    NumericError,
)

if TYPE_CHECKING:
    from collections.abc import Callable

    from disn.config import RunConfig, TrainConfig
    from disn.core.sampler import Dataset, TripletIndex

logger = logging.getLogger(__name__)

HISTORY_NAME = "history.csv"
HISTORY_COLUMNS = [
    "epoch",
    "L_spk",
    "L_recons",
    "L_env_env",
    "L_env_spk",
    "L_corr",
    "L_total",
    "lr",
]


@dataclass
class LossReport:
    """Loss values of one step."""

    spk: float
    recons: float
    env_env: float
    env_spk: float
    corr: float
    total: float


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise NumericError(f"Loss term {name} is non-finite ({value})")


class Trainer:
    """Composite-objective steps with separate updates for E^S and everything else."""

    def __init__(
        self,
        framework: Framework,
        config: TrainConfig,
        main_state: AdamState | None = None,
        adversary_state: AdamState | None = None,
    ):
        self.framework = framework
        self.config = config
        self.main_optimizer = Adam(
            [p for _, p in framework.main_params()], main_state or self._fresh_state()
        )
        self.adversary_optimizer = Adam(
            [p for _, p in framework.adversary_params()], adversary_state or self._fresh_state()
        )

    def _fresh_state(self) -> AdamState:
        return AdamState(beta1=self.config.beta1, beta2=self.config.beta2, eps=self.config.eps_adam)

    def compute_gradients(self, e: Tensor, labels: np.ndarray) -> LossReport:
        """One forward over a triplet batch and all gradient paths.

        Main-set gradients come from the composite objective with the E^S term
        entering through gradient reversal; E^S gradients come from its own loss
        with the speaker codes held constant.

        Args:
            e: Triplet-contiguous input embeddings (3B rows).
            labels: Speaker class index per triplet.

        Returns:
            LossReport with every term and the weighted total.

        Raises:
            NumericError: If any loss term is non-finite.
        """
        fw, cfg = self.framework, self.config
        w = cfg.weights
        fw.zero_grad()

        z, enc_cache = encode(fw.autoencoder, e, "train")
        codes, split_cache = split_codes(z)
        l_spk, spk_cache = speaker_loss(fw.spk_disc, codes.spk, labels)
        l_env, env_cache = env_triplet_loss(fw.env_env, codes.env, w.margin)
        routing = None
        l_adv = 0.0
        if cfg.use_adversary:
            routing = route_adversarial(fw.env_spk, codes.spk, w.margin, w.lambda_adv)
            l_adv = routing.value
        l_corr, corr_cache = mapc_loss(codes.spk, codes.env)
        decoder_input = swap_speaker_codes(codes) if cfg.swap_codes else codes
        e_hat, dec_cache = decode(fw.autoencoder, decoder_input, "train")
        l_rec, rec_cache = recons_loss(e, e_hat)

        for name, value in (
            ("L_spk", l_spk),
            ("L_recons", l_rec),
            ("L_env_env", l_env),
            ("L_env_spk", l_adv),
            ("L_corr", l_corr),
        ):
            _check_finite(name, value)
        total = (
            w.lambda_s * l_spk
            + w.lambda_r * l_rec
            + w.lambda_e * l_env
            + w.lambda_adv * l_adv
            + w.lambda_c * l_corr
        )

        d = fw.config.spk_dim
        grad_codes = backward(dec_cache, backward(rec_cache, w.lambda_r))
        grad_spk = grad_codes[:, :d]
        grad_env = grad_codes[:, d:]
        if cfg.swap_codes:
            grad_spk = grad_spk[swap_permutation(e.shape[0])]
        grad_spk = grad_spk + backward(spk_cache, w.lambda_s)
        grad_env = grad_env + backward(env_cache, w.lambda_e)
        if routing is not None and w.lambda_adv != 0:
            grad_spk = grad_spk + routing.encoder_grad
        if w.lambda_c != 0:
            grad_corr = backward(corr_cache, w.lambda_c)
            grad_spk = grad_spk + grad_corr[:, :d]
            grad_env = grad_env + grad_corr[:, d:]
        grad_z = backward(split_cache, np.concatenate([grad_spk, grad_env], axis=1))
        backward(enc_cache, grad_z)

        return LossReport(l_spk, l_rec, l_env, l_adv, l_corr, total)

    def apply_updates(self, lr: float) -> None:
        """Main update from the composite objective, then the E^S update."""
        self.main_optimizer.step(lr)
        self.framework.spk_disc.clamp()
        if self.config.use_adversary:
            self.adversary_optimizer.step(lr)

    def train_step(self, e: Tensor, labels: np.ndarray, lr: float) -> LossReport:
        """Gradients and both parameter-set updates for one mini-batch."""
        report = self.compute_gradients(e, labels)
        self.apply_updates(lr)
        return report


def assemble_batch(
    dataset: Dataset,
    triplets: list[TripletIndex],
    speaker_index: dict[str, int],
    dtype: str = "float32",
) -> tuple[Tensor, np.ndarray]:
    """Stack a triplet batch as contiguous rows plus per-triplet speaker labels."""
    utt_ids = [u for t in triplets for u in (t.u1, t.u2, t.u3)]
    labels = np.array(
        [speaker_index[dataset.meta(t.u1).speaker_id] for t in triplets], dtype=np.int64
    )
    return dataset.matrix(utt_ids, dtype), labels


@dataclass
class FitResult:
    """Trained framework and loss history."""

    framework: Framework
    trainer: Trainer
    history: list[HistoryRow] = field(default_factory=list)


def _mean_row(epoch: int, reports: list[LossReport], lr: float) -> HistoryRow:
    def mean(attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in reports]))

    return HistoryRow(
        epoch,
        mean("spk"),
        mean("recons"),
        mean("env_env"),
        mean("env_spk"),
        mean("corr"),
        mean("total"),
        lr,
    )


def fit(
    dataset: Dataset,
    config: RunConfig,
    checkpoint_path: Path | None = None,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[HistoryRow], None] | None = None,
) -> FitResult:
    """Train the framework for ``config.train.epochs`` epochs.

    Each epoch draws fresh triplets, shuffles them into batches and runs one step
    per batch. A checkpoint is written every ``checkpoint_every`` epochs and after
    the last one; ``resume`` continues after the checkpoint's epoch.

    Args:
        dataset: Training data.
        config: Run configuration.
        checkpoint_path: Where to write checkpoints (None disables them).
        resume: Checkpoint to continue from.
        on_epoch: Called with every finished epoch's history row.

    Returns:
        FitResult with the framework and the full loss history.

    Raises:
        EmptyDatasetError: If the data cannot produce a single batch.
        DimensionMismatchError: If the data dimension differs from the model's.
    """
    train_cfg = config.train.apply_variant()
    if not dataset.metadata:
        raise EmptyDatasetError("Dataset has no utterances")
    if dataset.dim != config.model.input_dim:
        raise DimensionMismatchError(
            f"Dataset dimension {dataset.dim} != model input_dim {config.model.input_dim}"
        )
    speakers = dataset.speakers
    speaker_index = {speaker: i for i, speaker in enumerate(speakers)}
    fingerprint = fingerprint_embeddings(dataset.embeddings)

    if resume is not None:
        if resume.speakers != speakers:
            raise ConfigMismatchError("Checkpoint was trained on a different speaker set")
        if resume.fingerprint != fingerprint:
            logger.warning("Resuming on embeddings that differ from the checkpoint's training data")
        framework = resume.framework
        trainer = Trainer(framework, train_cfg, resume.main_state, resume.adversary_state)
        sampler_rng = np.random.default_rng(0)
        sampler_rng.bit_generator.state = resume.rng_state
        history = list(resume.history)
        start = resume.epoch + 1
    else:
        framework = Framework(
            config.model, len(speakers), config.stream("init"), train_cfg.precision
        )
        trainer = Trainer(framework, train_cfg)
        sampler_rng = config.stream("sampler")
        history = []
        start = 0

    for epoch in range(start, train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        triplet_set = build_triplets(dataset.metadata, sampler_rng)
        reports = []
        for batch in iter_batches(triplet_set.triplets, train_cfg.batch_size, sampler_rng):
            e, labels = assemble_batch(dataset, batch, speaker_index, train_cfg.precision)
            reports.append(trainer.train_step(e, labels, lr))
        if not reports:
            raise EmptyDatasetError(
                f"Only {len(triplet_set.triplets)} triplet(s) per epoch; a batch needs at least 2"
            )
        row = _mean_row(epoch, reports, lr)
        history.append(row)
        logger.info(
            "epoch %d: L_total=%.4f L_recons=%.4f L_env_env=%.4f lr=%.6f",
            epoch, row.total, row.recons, row.env_env, lr,
        )
        if on_epoch is not None:
            on_epoch(row)

        last = epoch + 1 == train_cfg.epochs
        if checkpoint_path is not None and (last or (epoch + 1) % train_cfg.checkpoint_every == 0):
            save_checkpoint(
                Checkpoint(
                    framework=framework,
                    main_state=trainer.main_optimizer.state,
                    adversary_state=trainer.adversary_optimizer.state,
                    epoch=epoch,
                    rng_state=sampler_rng.bit_generator.state,
                    history=history,
                    speakers=speakers,
                    fingerprint=fingerprint,
                ),
                checkpoint_path,
            )

    return FitResult(framework, trainer, history)


def write_history_csv(history: list[HistoryRow], path: Path) -> None:
    """Write the loss history with the documented columns."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(HISTORY_COLUMNS)
            for row in history:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row.to_list()])
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e


def format_history_table(history: list[HistoryRow], last: int = 10) -> Table:
    """Format the last epochs of a loss history.

    Args:
        history: Loss history.
        last: Number of trailing epochs to show.

    Returns:
        Formatted table.
    """
    table = Table(title="Training losses (epoch means)")
    for column in HISTORY_COLUMNS:
        table.add_column(column, justify="right", style="cyan" if column == "L_total" else None)
    for row in history[-last:]:
        table.add_row(
            str(row.epoch),
            *(
                f"{v:.4f}"
                for v in (row.spk, row.recons, row.env_env, row.env_spk, row.corr, row.total)
            ),
            f"{row.lr:.6g}",
        )
    return table
