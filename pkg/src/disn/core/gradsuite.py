"""Finite-difference verification of every layer, loss and the full training step."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from rich.table import Table

from disn.config import LossWeights, ModelConfig, TrainConfig
from disn.core.diffcore import (
    DEFAULT_H,
    BnLayer,
    FcLayer,
    GradProblem,
    ProblemBuilder,
    backward,
    bn_forward,
    corrupt_gradient,
    elu_forward,
    fc_forward,
    gradcheck,
    l1_normalize_forward,
    projected_problem,
)
from disn.core.discriminators import EnvDisc, SpeakerDisc, env_triplet_loss, mapc_loss, speaker_loss
from disn.core.disentangler import AutoEncoder, CodeBatch, decode, encode, recons_loss, split_codes
from disn.core.framework import Framework
from disn.core.trainer import Trainer

if TYPE_CHECKING:
    from collections.abc import Callable

    from disn.core.diffcore import Param

logger = logging.getLogger(__name__)

F64 = "float64"
LAYER_TOLERANCE = 1e-5
LOSS_TOLERANCE = 1e-4
# A checker that accepts a sign-flipped gradient is broken.
SELF_TEST_MIN_ERROR = 0.5
N_TRIPLETS = 2
N_SPEAKERS = 3
# Wide margin keeps the hinge terms away from their kink.
SUITE_MARGIN = 5.0

SUITE_MODEL = ModelConfig(input_dim=6, code_dim=4, env_hidden_dim=5, env_out_dim=3)


def _away_from_zero(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _jitter_bn(layer: BnLayer, rng: np.random.Generator, freeze: bool = True) -> BnLayer:
    layer.gamma.value[...] = 1.0 + 0.1 * rng.standard_normal(layer.dim)
    layer.beta.value[...] = 0.1 * rng.standard_normal(layer.dim)
    layer.frozen_stats = freeze
    return layer


def _param_arrays(params: list[tuple[str, Param]]) -> dict[str, np.ndarray]:
    return {name: param.value for name, param in params}


def _param_grads(params: list[tuple[str, Param]]) -> dict[str, np.ndarray]:
    return {name: param.grad.copy() for name, param in params}


def _zero(params: list[tuple[str, Param]]) -> None:
    for _, param in params:
        param.zero_grad()


def fc_problem(rng: np.random.Generator) -> GradProblem:
    layer = FcLayer(4, 3, rng, F64)
    params = list(layer.named_params("fc"))
    x = rng.standard_normal((5, 4))
    return projected_problem(
        "fc",
        {**_param_arrays(params), "x": x},
        lambda: fc_forward(layer, x),
        lambda gx: {**_param_grads(params), "x": gx},
        rng,
        tuple(p for _, p in params),
    )


def _bn_problem(name: str, mode: str, rng: np.random.Generator) -> GradProblem:
    layer = _jitter_bn(BnLayer(4, dtype=F64), rng)
    layer.running_mean[...] = rng.standard_normal(4)
    layer.running_var[...] = rng.uniform(0.5, 2.0, size=4)
    params = list(layer.named_params("bn"))
    x = rng.standard_normal((6, 4))
    return projected_problem(
        name,
        {**_param_arrays(params), "x": x},
        lambda: bn_forward(layer, x, mode),
        lambda gx: {**_param_grads(params), "x": gx},
        rng,
        tuple(p for _, p in params),
    )


def bn_train_problem(rng: np.random.Generator) -> GradProblem:
    return _bn_problem("bn_train", "train", rng)


def bn_eval_problem(rng: np.random.Generator) -> GradProblem:
    return _bn_problem("bn_eval", "eval", rng)


def elu_problem(rng: np.random.Generator) -> GradProblem:
    x = rng.standard_normal((5, 4))
    return projected_problem("elu", {"x": x}, lambda: elu_forward(x), lambda gx: {"x": gx}, rng)


def l1norm_problem(rng: np.random.Generator) -> GradProblem:
    x = _away_from_zero(rng, (5, 4))
    return projected_problem(
        "l1norm", {"x": x}, lambda: l1_normalize_forward(x), lambda gx: {"x": gx}, rng
    )


def _autoencoder(rng: np.random.Generator) -> AutoEncoder:
    ae = AutoEncoder(SUITE_MODEL, rng, F64)
    for layer in ae.bn_layers():
        _jitter_bn(layer, rng)
    return ae


def encode_problem(rng: np.random.Generator) -> GradProblem:
    ae = _autoencoder(rng)
    params = [(n, p) for n, p in ae.named_params() if ".enc_" in n]
    e = rng.standard_normal((3 * N_TRIPLETS, SUITE_MODEL.input_dim))
    return projected_problem(
        "encode",
        {**_param_arrays(params), "e": e},
        lambda: encode(ae, e, "train"),
        lambda ge: {**_param_grads(params), "e": ge},
        rng,
        tuple(p for _, p in params),
    )


def decode_problem(rng: np.random.Generator) -> GradProblem:
    ae = _autoencoder(rng)
    params = [(n, p) for n, p in ae.named_params() if ".dec_" in n]
    half = SUITE_MODEL.spk_dim
    spk = rng.standard_normal((3 * N_TRIPLETS, half))
    env = rng.standard_normal((3 * N_TRIPLETS, SUITE_MODEL.env_dim))
    return projected_problem(
        "decode",
        {**_param_arrays(params), "spk": spk, "env": env},
        lambda: decode(ae, CodeBatch(spk, env), "train"),
        lambda gz: {**_param_grads(params), "spk": gz[:, :half], "env": gz[:, half:]},
        rng,
        tuple(p for _, p in params),
    )


def split_problem(rng: np.random.Generator) -> GradProblem:
    z = _away_from_zero(rng, (5, 6))

    def forward():
        codes, cache = split_codes(z)
        return codes.concat(), cache

    return projected_problem("split", {"z": z}, forward, lambda gz: {"z": gz}, rng)


def recons_problem(rng: np.random.Generator) -> GradProblem:
    e = rng.standard_normal((3 * N_TRIPLETS, 4))
    e_hat = e + _away_from_zero(rng, e.shape)

    def analytic() -> dict[str, np.ndarray]:
        _, cache = recons_loss(e, e_hat)
        grad = backward(cache, 1.0)
        return {"e": -grad, "e_hat": grad}

    return GradProblem(
        "recons", {"e": e, "e_hat": e_hat}, lambda: recons_loss(e, e_hat)[0], analytic
    )


def speaker_problem(rng: np.random.Generator) -> GradProblem:
    disc = SpeakerDisc(4, N_SPEAKERS, rng, F64)
    params = list(disc.named_params())
    spk = rng.standard_normal((3 * N_TRIPLETS, 4))
    labels = np.array([0, 2])

    def analytic() -> dict[str, np.ndarray]:
        _zero(params)
        _, cache = speaker_loss(disc, spk, labels)
        return {**_param_grads(params), "spk": backward(cache, 1.0)}

    return GradProblem(
        "speaker",
        {**_param_arrays(params), "spk": spk},
        lambda: speaker_loss(disc, spk, labels)[0],
        analytic,
    )


def env_triplet_problem(rng: np.random.Generator) -> GradProblem:
    disc = EnvDisc(4, 5, 3, rng, F64)
    for layer in disc.bn_layers():
        _jitter_bn(layer, rng)
    params = list(disc.named_params("env"))
    x = rng.standard_normal((3 * N_TRIPLETS, 4))

    def analytic() -> dict[str, np.ndarray]:
        _zero(params)
        _, cache = env_triplet_loss(disc, x, SUITE_MARGIN)
        return {**_param_grads(params), "x": backward(cache, 1.0)}

    return GradProblem(
        "env_triplet",
        {**_param_arrays(params), "x": x},
        lambda: env_triplet_loss(disc, x, SUITE_MARGIN)[0],
        analytic,
    )


def mapc_problem(rng: np.random.Generator) -> GradProblem:
    spk = rng.standard_normal((8, 3))
    env = rng.standard_normal((8, 2))

    def analytic() -> dict[str, np.ndarray]:
        _, cache = mapc_loss(spk, env)
        grad = backward(cache, 1.0)
        return {"spk": grad[:, :3], "env": grad[:, 3:]}

    return GradProblem("mapc", {"spk": spk, "env": env}, lambda: mapc_loss(spk, env)[0], analytic)


def _full_step_setup(rng: np.random.Generator) -> tuple[Framework, Trainer, np.ndarray, np.ndarray]:
    framework = Framework(SUITE_MODEL, N_SPEAKERS, rng, F64)
    for layer in framework.bn_layers():
        _jitter_bn(layer, rng, freeze=False)
    framework.freeze_stats()
    config = TrainConfig(precision=F64, weights=LossWeights(margin=SUITE_MARGIN))
    trainer = Trainer(framework, config)
    e = rng.standard_normal((3 * N_TRIPLETS, SUITE_MODEL.input_dim))
    labels = np.array([1, 2])
    return framework, trainer, e, labels


def full_step_main_problem(rng: np.random.Generator) -> GradProblem:
    """Main-set gradients against ``L_total - 2 * lambda_adv * L_env_spk``.

    Gradient reversal makes the encoder descend on ``-lambda_adv * L_env_spk``;
    the main set holds no E^S parameter, so this objective has exactly the
    gradient the trainer routes to it.
    """
    framework, trainer, e, labels = _full_step_setup(rng)
    params = list(framework.main_params())
    lambda_adv = trainer.config.weights.lambda_adv

    def objective() -> float:
        report = trainer.compute_gradients(e, labels)
        return report.total - 2 * lambda_adv * report.env_spk

    def analytic() -> dict[str, np.ndarray]:
        trainer.compute_gradients(e, labels)
        return _param_grads(params)

    return GradProblem("full_step_main", _param_arrays(params), objective, analytic)


def full_step_adversary_problem(rng: np.random.Generator) -> GradProblem:
    """E^S gradients against ``L_env_spk`` alone."""
    framework, trainer, e, labels = _full_step_setup(rng)
    params = list(framework.adversary_params())

    def analytic() -> dict[str, np.ndarray]:
        trainer.compute_gradients(e, labels)
        return _param_grads(params)

    return GradProblem(
        "full_step_adversary",
        _param_arrays(params),
        lambda: trainer.compute_gradients(e, labels).env_spk,
        analytic,
    )


@dataclass(frozen=True)
class GradCase:
    """One entry of the verification suite."""

    name: str
    build: ProblemBuilder
    tolerance: float


@dataclass
class GradCheckResult:
    """Outcome of one suite entry."""

    name: str
    error: float
    tolerance: float
    passed: bool


SUITE: list[GradCase] = [
    GradCase("fc", fc_problem, LAYER_TOLERANCE),
    GradCase("bn_train", bn_train_problem, LAYER_TOLERANCE),
    GradCase("bn_eval", bn_eval_problem, LAYER_TOLERANCE),
    GradCase("elu", elu_problem, LAYER_TOLERANCE),
    GradCase("l1norm", l1norm_problem, LAYER_TOLERANCE),
    GradCase("encode", encode_problem, LOSS_TOLERANCE),
    GradCase("decode", decode_problem, LOSS_TOLERANCE),
    GradCase("split", split_problem, LOSS_TOLERANCE),
    GradCase("recons", recons_problem, LOSS_TOLERANCE),
    GradCase("speaker", speaker_problem, LOSS_TOLERANCE),
    GradCase("env_triplet", env_triplet_problem, LOSS_TOLERANCE),
    GradCase("mapc", mapc_problem, LOSS_TOLERANCE),
    GradCase("full_step_main", full_step_main_problem, LOSS_TOLERANCE),
    GradCase("full_step_adversary", full_step_adversary_problem, LOSS_TOLERANCE),
]


def check_case(case: GradCase, seed: int = 0, h: float = DEFAULT_H) -> GradCheckResult:
    """Run one suite entry."""
    error = gradcheck(case.build, seed, h)
    result = GradCheckResult(case.name, error, case.tolerance, error < case.tolerance)
    logger.debug("gradcheck %s: %.3e (tolerance %.0e)", case.name, error, case.tolerance)
    return result


def self_test(seed: int = 0) -> GradCheckResult:
    """Confirm the checker rejects a sign-flipped gradient."""
    error = gradcheck(corrupt_gradient(fc_problem), seed)
    return GradCheckResult(
        "checker_self_test", error, SELF_TEST_MIN_ERROR, error >= SELF_TEST_MIN_ERROR
    )


def run_suite(
    seed: int = 0,
    cases: list[GradCase] | None = None,
    on_result: Callable[[GradCheckResult], None] | None = None,
) -> list[GradCheckResult]:
    """Run the checker self-test and every suite entry.

    Args:
        seed: Seed for all problem builders.
        cases: Entries to run (defaults to the full suite).
        on_result: Called after each entry finishes.

    Returns:
        Results in run order, self-test first.
    """
    results = [self_test(seed)]
    if on_result is not None:
        on_result(results[0])
    for case in SUITE if cases is None else cases:
        result = check_case(case, seed)
        results.append(result)
        if on_result is not None:
            on_result(result)
    return results


def format_gradcheck_table(results: list[GradCheckResult]) -> Table:
    """Format per-component worst relative errors."""
    table = Table(title="Gradient checks (float64)")
    table.add_column("Component", style="bold")
    table.add_column("Max rel. error", justify="right", style="cyan")
    table.add_column("Tolerance", justify="right")
    table.add_column("Status")
    for result in results:
        if result.name == "checker_self_test":
            bound = f">= {result.tolerance:.0e}"
        else:
            bound = f"< {result.tolerance:.0e}"
        table.add_row(
            result.name,
            f"{result.error:.3e}",
            bound,
            "[green]pass[/green]" if result.passed else "[red]FAIL[/red]",
        )
    return table
