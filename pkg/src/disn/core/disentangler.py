"""Auto-encoder disentangler: encode, split, swap, decode, reconstruct."""

from __future__ import annotations

import logging
from collections.abc import Iterator
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from disn.core.diffcore import (
    BnLayer,
    ChainCache,
    FcLayer,
    L1Cache,
    Mode,
    Param,
    Tensor,
    backward,
    bn_forward,
    ensure_tensor,
    fc_forward,
    l1_normalize_forward,
)
from disn.exceptions import BatchStructureError, ConfigError, ShapeError

if TYPE_CHECKING:
    from disn.config import ModelConfig

logger = logging.getLogger(__name__)

TRIPLET = 3


@dataclass
class CodeBatch:
    """Speaker and environment codes, one row per utterance."""

    spk: Tensor
    env: Tensor

    def __post_init__(self) -> None:
        if self.spk.shape[0] != self.env.shape[0]:
            raise ShapeError(
                "Speaker and environment codes differ in rows: "
                f"{self.spk.shape[0]} != {self.env.shape[0]}"
            )

    @property
    def rows(self) -> int:
        return self.spk.shape[0]

    def concat(self) -> Tensor:
        """Decoder input: speaker half first, environment half second."""
        return np.concatenate([self.spk, self.env], axis=1)


class AutoEncoder:
    """Encoder (BN then FC, D -> Z) and mirrored decoder (BN then FC, Z -> D)."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype: str = "float32"):
        d_in, z = config.input_dim, config.code_dim
        if d_in < z:
            logger.warning("Input dim %d is smaller than code dim %d", d_in, z)
        self.config = config
        self.enc_bn = BnLayer(d_in, config.bn_momentum, config.bn_eps, dtype)
        self.enc_fc = FcLayer(d_in, z, rng, dtype)
        self.dec_bn = BnLayer(z, config.bn_momentum, config.bn_eps, dtype)
        self.dec_fc = FcLayer(z, d_in, rng, dtype)

    def named_params(self, prefix: str = "ae") -> Iterator[tuple[str, Param]]:
        yield from self.enc_bn.named_params(f"{prefix}.enc_bn")
        yield from self.enc_fc.named_params(f"{prefix}.enc_fc")
        yield from self.dec_bn.named_params(f"{prefix}.dec_bn")
        yield from self.dec_fc.named_params(f"{prefix}.dec_fc")

    def named_buffers(self, prefix: str = "ae") -> Iterator[tuple[str, Tensor]]:
        yield from self.enc_bn.named_buffers(f"{prefix}.enc_bn")
        yield from self.dec_bn.named_buffers(f"{prefix}.dec_bn")

    def bn_layers(self) -> list[BnLayer]:
        return [self.enc_bn, self.dec_bn]


@dataclass
class SplitCache:
    spk: L1Cache
    env: L1Cache
    spk_dim: int

    def backward(self, grad_out: Tensor) -> Tensor:
        """Gradient w.r.t. z from the gradient w.r.t. concat(spk, env)."""
        return np.concatenate(
            [
                backward(self.spk, grad_out[:, : self.spk_dim]),
                backward(self.env, grad_out[:, self.spk_dim :]),
            ],
            axis=1,
        )


@dataclass
class ReconsCache:
    diff: Tensor
    n_triplets: float

    def backward(self, grad_out: float) -> Tensor:
        """Gradient w.r.t. the reconstruction (subgradient 0 at zero difference)."""
        return np.sign(self.diff) * (grad_out / self.n_triplets)


def encode(params: AutoEncoder, e: Tensor, mode: Mode) -> tuple[Tensor, ChainCache]:
    """Project input embeddings to bottleneck codes ``z = FC(BN(e))``.

    Args:
        params: Auto-encoder parameters.
        e: Row batch of D-dimensional embeddings (row order preserved).
        mode: "train" or "eval".

    Returns:
        Tuple of (z with Z columns, cache).
    """
    ensure_tensor(e, params.enc_bn.dim, "embeddings")
    h, bn_cache = bn_forward(params.enc_bn, e, mode)
    z, fc_cache = fc_forward(params.enc_fc, h)
    return z, ChainCache([bn_cache, fc_cache])


def split_codes(z: Tensor) -> tuple[CodeBatch, SplitCache]:
    """Split codes in half and L1-normalize each half independently.

    Args:
        z: Bottleneck codes with an even column count.

    Returns:
        Tuple of (CodeBatch, cache).

    Raises:
        ConfigError: If the code width is odd.
    """
    ensure_tensor(z, name="codes")
    if z.shape[1] % 2:
        raise ConfigError(f"Code dimension must be even to split in half, got {z.shape[1]}")
    d = z.shape[1] // 2
    spk, spk_cache = l1_normalize_forward(z[:, :d])
    env, env_cache = l1_normalize_forward(z[:, d:])
    return CodeBatch(spk, env), SplitCache(spk_cache, env_cache, d)


def swap_permutation(rows: int) -> np.ndarray:
    """Row permutation exchanging members 2 and 3 of every triplet.

    Raises:
        BatchStructureError: If rows is not a multiple of three.
    """
    if rows % TRIPLET:
        raise BatchStructureError(f"Triplet batches need a multiple of 3 rows, got {rows}")
    perm = np.arange(rows)
    perm[1::TRIPLET], perm[2::TRIPLET] = perm[2::TRIPLET].copy(), perm[1::TRIPLET].copy()
    return perm


def swap_speaker_codes(codes: CodeBatch) -> CodeBatch:
    """Exchange the speaker codes of the second and third utterance of each triplet.

    The first member's speaker code and all environment codes are untouched.
    The operation is its own inverse, so its backward is the same permutation.
    """
    perm = swap_permutation(codes.rows)
    return CodeBatch(codes.spk[perm], codes.env.copy())


def decode(params: AutoEncoder, codes: CodeBatch, mode: Mode) -> tuple[Tensor, ChainCache]:
    """Reconstruct embeddings ``e_hat = FC(BN(concat(spk, env)))``.

    The cache's backward yields the gradient w.r.t. concat(spk, env).
    """
    z = codes.concat()
    ensure_tensor(z, params.dec_bn.dim, "codes")
    h, bn_cache = bn_forward(params.dec_bn, z, mode)
    e_hat, fc_cache = fc_forward(params.dec_fc, h)
    return e_hat, ChainCache([bn_cache, fc_cache])


def recons_loss(e: Tensor, e_hat: Tensor) -> tuple[float, ReconsCache]:
    """L1 reconstruction loss summed per triplet and averaged over triplets.

    The batch is normalized by rows / 3 triplets so magnitudes do not depend on
    batch size.

    Returns:
        Tuple of (loss value, cache); backward gives the gradient w.r.t. e_hat.
    """
    if e.shape != e_hat.shape:
        raise ShapeError(f"Reconstruction shape {e_hat.shape} != input shape {e.shape}")
    diff = e_hat - e
    n_triplets = e.shape[0] / TRIPLET
    return float(np.sum(np.abs(diff)) / n_triplets), ReconsCache(diff, n_triplets)


def embed_codes(params: AutoEncoder, e: Tensor) -> CodeBatch:
    """Eval-mode disentangled codes for a batch of embeddings."""
    z, _ = encode(params, e, "eval")
    codes, _ = split_codes(z)
    return codes
