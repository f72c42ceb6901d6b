"""Container for every trainable module of the disentanglement framework."""

from __future__ import annotations

from collections.abc import Iterator
from typing import TYPE_CHECKING

from disn.core.discriminators import EnvDisc, SpeakerDisc
from disn.core.disentangler import AutoEncoder

if TYPE_CHECKING:
    import numpy as np

    from disn.config import ModelConfig
    from disn.core.diffcore import BnLayer, Param, Tensor


class Framework:
    """Auto-encoder, speaker discriminator S and environment discriminators E^E, E^S.

    Modules are initialized in that order from one generator, so adding or
    removing E^S from a run never changes the other modules' initial values.
    """

    def __init__(
        self,
        config: ModelConfig,
        n_speakers: int,
        rng: np.random.Generator,
        dtype: str = "float32",
    ):
        self.config = config
        self.dtype = dtype
        self.autoencoder = AutoEncoder(config, rng, dtype)
        self.spk_disc = SpeakerDisc(config.spk_dim, n_speakers, rng, dtype)
        self.env_env = EnvDisc(
            config.env_dim, config.env_hidden_dim, config.env_out_dim, rng, dtype,
            config.bn_momentum, config.bn_eps,
        )
        self.env_spk = EnvDisc(
            config.spk_dim, config.env_hidden_dim, config.env_out_dim, rng, dtype,
            config.bn_momentum, config.bn_eps,
        )

    @property
    def n_speakers(self) -> int:
        return self.spk_disc.n_speakers

    def main_params(self) -> Iterator[tuple[str, Param]]:
        """Parameters updated from the composite objective (everything but E^S)."""
        yield from self.autoencoder.named_params("ae")
        yield from self.spk_disc.named_params("spk_disc")
        yield from self.env_env.named_params("env_env")

    def adversary_params(self) -> Iterator[tuple[str, Param]]:
        """Parameters of E^S, updated only from its own loss."""
        yield from self.env_spk.named_params("env_spk")

    def named_params(self) -> Iterator[tuple[str, Param]]:
        yield from self.main_params()
        yield from self.adversary_params()

    def named_buffers(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.autoencoder.named_buffers("ae")
        yield from self.spk_disc.named_buffers("spk_disc")
        yield from self.env_env.named_buffers("env_env")
        yield from self.env_spk.named_buffers("env_spk")

    def bn_layers(self) -> list[BnLayer]:
        return (
            self.autoencoder.bn_layers()
            + self.spk_disc.bn_layers()
            + self.env_env.bn_layers()
            + self.env_spk.bn_layers()
        )

    def freeze_stats(self, frozen: bool = True) -> None:
        """Stop (or resume) running-statistic updates in every BN layer."""
        for layer in self.bn_layers():
            layer.frozen_stats = frozen

    def zero_grad(self) -> None:
        for _, param in self.named_params():
            param.zero_grad()
