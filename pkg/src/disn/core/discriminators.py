"""Speaker and environment discriminators, their losses, and adversarial routing."""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from disn.core.diffcore import (
    BnLayer,
    ChainCache,
    FcCache,
    FcLayer,
    Mode,
    Param,
    Tensor,
    backward,
    bn_forward,
    elu_forward,
    ensure_tensor,
    fc_forward,
)
from disn.core.disentangler import TRIPLET
from disn.exceptions import BatchStructureError, DegenerateBatchError, ShapeError

AP_INIT_SCALE = 10.0
AP_INIT_OFFSET = -5.0
AP_MIN_SCALE = 1e-6
COS_EPS = 1e-12


def _triplet_count(rows: int) -> int:
    if rows % TRIPLET:
        raise BatchStructureError(f"Triplet batches need a multiple of 3 rows, got {rows}")
    return rows // TRIPLET


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


class SpeakerDisc:
    """Speaker discriminator S: one FC classifier plus angular-prototypical scale/offset."""

    def __init__(
        self, spk_dim: int, n_speakers: int, rng: np.random.Generator, dtype: str = "float32"
    ):
        self.f = FcLayer(spk_dim, n_speakers, rng, dtype)
        self.ap_scale = Param(np.array([AP_INIT_SCALE], dtype=dtype))
        self.ap_offset = Param(np.array([AP_INIT_OFFSET], dtype=dtype))

    @property
    def n_speakers(self) -> int:
        return self.f.out_dim

    def named_params(self, prefix: str = "spk_disc") -> Iterator[tuple[str, Param]]:
        yield from self.f.named_params(f"{prefix}.f")
        yield f"{prefix}.ap_scale", self.ap_scale
        yield f"{prefix}.ap_offset", self.ap_offset

    def named_buffers(self, prefix: str = "spk_disc") -> Iterator[tuple[str, Tensor]]:
        del prefix
        yield from ()

    def bn_layers(self) -> list[BnLayer]:
        return []

    def clamp(self) -> None:
        """Keep the angular-prototypical scale strictly positive."""
        np.maximum(self.ap_scale.value, AP_MIN_SCALE, out=self.ap_scale.value)


class EnvDisc:
    """Environment discriminator g: two blocks of BN -> ELU -> FC."""

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        dtype: str = "float32",
        momentum: float = 0.1,
        eps: float = 1e-5,
    ):
        self.bn1 = BnLayer(in_dim, momentum, eps, dtype)
        self.fc1 = FcLayer(in_dim, hidden_dim, rng, dtype)
        self.bn2 = BnLayer(hidden_dim, momentum, eps, dtype)
        self.fc2 = FcLayer(hidden_dim, out_dim, rng, dtype)

    @property
    def in_dim(self) -> int:
        return self.bn1.dim

    def named_params(self, prefix: str) -> Iterator[tuple[str, Param]]:
        yield from self.bn1.named_params(f"{prefix}.bn1")
        yield from self.fc1.named_params(f"{prefix}.fc1")
        yield from self.bn2.named_params(f"{prefix}.bn2")
        yield from self.fc2.named_params(f"{prefix}.fc2")

    def named_buffers(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.bn1.named_buffers(f"{prefix}.bn1")
        yield from self.bn2.named_buffers(f"{prefix}.bn2")

    def bn_layers(self) -> list[BnLayer]:
        return [self.bn1, self.bn2]


@dataclass
class SpeakerLossCache:
    fc: FcCache
    dlogits: Tensor
    q_hat: Tensor
    c_hat: Tensor
    q_norm: Tensor
    c_norm: Tensor
    cos: Tensor
    dscores: Tensor
    disc: SpeakerDisc
    ce_value: float
    ap_value: float

    def backward(self, grad_out: float) -> Tensor:
        """Gradient w.r.t. the speaker codes; accumulates f, scale and offset grads."""
        grad = backward(self.fc, self.dlogits * grad_out)

        dscores = self.dscores * grad_out
        w = float(self.disc.ap_scale.value[0])
        self.disc.ap_scale.grad += np.sum(dscores * self.cos)
        self.disc.ap_offset.grad += np.sum(dscores)
        dcos = w * dscores
        dq = _normalize_backward(dcos @ self.c_hat, self.q_hat, self.q_norm)
        dc = _normalize_backward(dcos.T @ self.q_hat, self.c_hat, self.c_norm)
        grad[0::TRIPLET] += dq
        grad[1::TRIPLET] += dc / 2
        grad[2::TRIPLET] += dc / 2
        return grad


def _unit_rows(x: Tensor) -> tuple[Tensor, Tensor]:
    norm = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    norm = np.maximum(norm, COS_EPS)
    return x / norm, norm


def _normalize_backward(grad_hat: Tensor, x_hat: Tensor, norm: Tensor) -> Tensor:
    radial = np.sum(grad_hat * x_hat, axis=1, keepdims=True)
    clamped = norm <= COS_EPS
    return np.where(clamped, grad_hat, grad_hat - x_hat * radial) / norm


def speaker_loss(
    disc: SpeakerDisc,
    spk: Tensor,
    labels: np.ndarray,
) -> tuple[float, SpeakerLossCache]:
    """Softmax cross-entropy plus angular-prototypical loss on speaker codes.

    The cross-entropy runs over all rows. For the prototypical term the first member
    of each triplet is the query and the mean of the other two is the prototype;
    each query is classified against all prototypes in the batch with scores
    ``w * cos + b``.

    Args:
        disc: Speaker discriminator.
        spk: Triplet-contiguous speaker codes (3B rows).
        labels: Speaker class index per triplet (B entries).

    Returns:
        Tuple of (CE + AP, cache).

    Raises:
        DegenerateBatchError: If the batch has fewer than two triplets.
    """
    ensure_tensor(spk, disc.f.in_dim, "speaker codes")
    n_triplets = _triplet_count(spk.shape[0])
    if labels.shape != (n_triplets,):
        raise ShapeError(f"Expected {n_triplets} triplet labels, got shape {labels.shape}")
    if n_triplets < 2:
        raise DegenerateBatchError("Angular prototypical loss needs at least two triplets")

    logits, fc_cache = fc_forward(disc.f, spk)
    row_labels = np.repeat(labels, TRIPLET)
    rows = np.arange(spk.shape[0])
    log_p = log_softmax(logits)
    ce_value = float(-np.mean(log_p[rows, row_labels]))
    dlogits = np.exp(log_p)
    dlogits[rows, row_labels] -= 1.0
    dlogits /= spk.shape[0]

    q_hat, q_norm = _unit_rows(spk[0::TRIPLET])
    c_hat, c_norm = _unit_rows((spk[1::TRIPLET] + spk[2::TRIPLET]) / 2)
    cos = q_hat @ c_hat.T
    scores = disc.ap_scale.value[0] * cos + disc.ap_offset.value[0]
    log_q = log_softmax(scores)
    diag = np.arange(n_triplets)
    ap_value = float(-np.mean(log_q[diag, diag]))
    dscores = np.exp(log_q)
    dscores[diag, diag] -= 1.0
    dscores /= n_triplets

    cache = SpeakerLossCache(
        fc_cache, dlogits, q_hat, c_hat, q_norm, c_norm, cos, dscores, disc, ce_value, ap_value
    )
    return ce_value + ap_value, cache


@dataclass
class TripletCache:
    anchor_pos: Tensor
    anchor_neg: Tensor
    active: np.ndarray
    n_triplets: int

    def backward(self, grad_out: float) -> Tensor:
        """Gradient w.r.t. the discriminator outputs (triplet-contiguous rows)."""
        coef = (self.active * (2.0 * grad_out / self.n_triplets))[:, None]
        grad = np.empty(
            (self.n_triplets * TRIPLET, self.anchor_pos.shape[1]), dtype=self.anchor_pos.dtype
        )
        grad[0::TRIPLET] = coef * (self.anchor_pos - self.anchor_neg)
        grad[1::TRIPLET] = -coef * self.anchor_pos
        grad[2::TRIPLET] = coef * self.anchor_neg
        return grad


def triplet_margin_loss(g: Tensor, margin: float) -> tuple[float, TripletCache]:
    """``mean(max(0, m + ||g1 - g2||^2 - ||g1 - g3||^2))`` over triplets."""
    ensure_tensor(g, name="discriminator output")
    n_triplets = _triplet_count(g.shape[0])
    anchor_pos = g[0::TRIPLET] - g[1::TRIPLET]
    anchor_neg = g[0::TRIPLET] - g[2::TRIPLET]
    hinge = margin + np.sum(anchor_pos**2, axis=1) - np.sum(anchor_neg**2, axis=1)
    active = hinge > 0
    value = float(np.sum(hinge[active]) / n_triplets)
    return value, TripletCache(anchor_pos, anchor_neg, active, n_triplets)


def env_embed(disc: EnvDisc, x: Tensor, mode: Mode) -> tuple[Tensor, ChainCache]:
    """Run g: BN -> ELU -> FC -> BN -> ELU -> FC."""
    caches = []
    h = x
    for bn, fc in ((disc.bn1, disc.fc1), (disc.bn2, disc.fc2)):
        h, bn_cache = bn_forward(bn, h, mode)
        h, elu_cache = elu_forward(h)
        h, fc_cache = fc_forward(fc, h)
        caches += [bn_cache, elu_cache, fc_cache]
    return h, ChainCache(caches)


def env_triplet_loss(
    disc: EnvDisc,
    x: Tensor,
    margin: float,
    mode: Mode = "train",
) -> tuple[float, ChainCache]:
    """Environment triplet loss of one discriminator on triplet-contiguous inputs.

    Used on environment codes with E^E and on speaker codes with E^S.

    Returns:
        Tuple of (loss, cache); backward gives the gradient w.r.t. x and
        accumulates the discriminator's parameter gradients.
    """
    ensure_tensor(x, disc.in_dim, "environment input")
    _triplet_count(x.shape[0])
    g, embed_cache = env_embed(disc, x, mode)
    value, trip_cache = triplet_margin_loss(g, margin)
    return value, ChainCache([embed_cache, trip_cache])


@dataclass
class MapcCache:
    a: Tensor
    b: Tensor
    sa: Tensor
    sb: Tensor
    r: Tensor
    mask: Tensor

    def backward(self, grad_out: float) -> Tensor:
        """Gradient w.r.t. concat(spk, env)."""
        n = self.a.shape[0]
        g = np.sign(self.r) * self.mask * (grad_out / self.r.size)
        gr = g * self.r
        da = (self.b / (n * self.sb)) @ g.T / self.sa - self.a * (gr.sum(axis=1) / (n * self.sa**2))
        db = (self.a / (n * self.sa)) @ g / self.sb - self.b * (gr.sum(axis=0) / (n * self.sb**2))
        da -= da.mean(axis=0)
        db -= db.mean(axis=0)
        return np.concatenate([da, db], axis=1)


def _centered_std(x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    mean = x.mean(axis=0)
    centered = x - mean
    std = np.sqrt(np.mean(centered**2, axis=0))
    tol = np.finfo(x.dtype).eps * 100 * (1.0 + np.abs(mean))
    valid = std > tol
    return centered, np.where(valid, std, 1.0), valid


def mapc_loss(spk: Tensor, env: Tensor) -> tuple[float, MapcCache]:
    """Mean absolute Pearson correlation over all (speaker dim, environment dim) pairs.

    Pairs involving a zero-variance column contribute 0.

    Raises:
        DegenerateBatchError: If fewer than two rows are given.
    """
    ensure_tensor(spk, name="speaker codes")
    ensure_tensor(env, name="environment codes")
    if spk.shape[0] != env.shape[0]:
        raise ShapeError(f"Row counts differ: {spk.shape[0]} != {env.shape[0]}")
    n = spk.shape[0]
    if n < 2:
        raise DegenerateBatchError(f"Correlation needs at least two rows, got {n}")
    a, sa, valid_a = _centered_std(spk)
    b, sb, valid_b = _centered_std(env)
    mask = np.outer(valid_a, valid_b).astype(spk.dtype)
    r = (a.T @ b) / (n * np.outer(sa, sb)) * mask
    return float(np.mean(np.abs(r))), MapcCache(a, b, sa, sb, r, mask)


@dataclass
class AdversarialRouting:
    """Outcome of the shared E^S forward: loss value and the encoder-side gradient."""

    value: float
    encoder_grad: Tensor


def route_adversarial(
    disc: EnvDisc,
    e_spk: Tensor,
    margin: float,
    lambda_adv: float,
    mode: Mode = "train",
) -> AdversarialRouting:
    """Split one E^S loss into its discriminator and encoder gradient paths.

    One forward of E^S on the speaker codes, one backward with unit weight: the
    discriminator's parameter gradients are those of L_env_spk with the codes held
    constant, and nothing flows further down that path. The encoder path receives
    the input gradient through a gradient reversal, ``-lambda_adv * dL/de_spk``.

    Returns:
        AdversarialRouting with the loss value and the reversed, weighted gradient.
    """
    value, cache = env_triplet_loss(disc, e_spk, margin, mode)
    grad = backward(cache, 1.0)
    return AdversarialRouting(value, -lambda_adv * grad)
