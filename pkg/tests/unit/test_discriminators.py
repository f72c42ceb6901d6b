"""Unit tests for the discriminators, their losses and adversarial routing."""

from __future__ import annotations

import numpy as np
import pytest

from disn.core.diffcore import backward
from disn.core.discriminators import (
    AP_MIN_SCALE,
    EnvDisc,
    SpeakerDisc,
    env_triplet_loss,
    log_softmax,
    mapc_loss,
    route_adversarial,
    speaker_loss,
    triplet_margin_loss,
)
from disn.exceptions import BatchStructureError, DegenerateBatchError, ShapeError


@pytest.fixture
def env_disc(rng: np.random.Generator) -> EnvDisc:
    """Return a small float64 environment discriminator."""
    return EnvDisc(4, 5, 3, rng, "float64")


class TestLogSoftmax:
    """Tests for log_softmax."""

    def test_rows_normalize(self, rng: np.random.Generator) -> None:
        """Test that probabilities sum to one per row."""
        log_p = log_softmax(rng.standard_normal((3, 5)) * 50)
        np.testing.assert_allclose(np.exp(log_p).sum(axis=1), 1.0)

    def test_uniform(self) -> None:
        """Test equal logits."""
        np.testing.assert_allclose(log_softmax(np.zeros((1, 4))), np.log(0.25))


class TestSpeakerLoss:
    """Tests for the speaker discriminator loss."""

    def test_value_is_ce_plus_ap(self, rng: np.random.Generator) -> None:
        """Test the loss against a direct computation of the two terms."""
        disc = SpeakerDisc(3, 4, rng, "float64")
        spk = rng.standard_normal((6, 3))
        labels = np.array([0, 2])
        value, cache = speaker_loss(disc, spk, labels)

        logits = spk @ disc.f.weight.value + disc.f.bias.value
        log_p = log_softmax(logits)
        ce = -np.mean(log_p[np.arange(6), np.repeat(labels, 3)])
        q = spk[0::3] / np.linalg.norm(spk[0::3], axis=1, keepdims=True)
        c = (spk[1::3] + spk[2::3]) / 2
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        scores = 10.0 * (q @ c.T) - 5.0
        ap = -np.mean(np.diag(log_softmax(scores)))

        assert cache.ce_value == pytest.approx(ce)
        assert cache.ap_value == pytest.approx(ap)
        assert value == pytest.approx(ce + ap)

    def test_single_triplet(self, rng: np.random.Generator) -> None:
        """Test that one triplet is too few for the prototypical term."""
        disc = SpeakerDisc(3, 2, rng, "float64")
        with pytest.raises(DegenerateBatchError):
            speaker_loss(disc, rng.standard_normal((3, 3)), np.array([0]))

    def test_label_count(self, rng: np.random.Generator) -> None:
        """Test that one label per triplet is required."""
        disc = SpeakerDisc(3, 2, rng, "float64")
        with pytest.raises(ShapeError):
            speaker_loss(disc, rng.standard_normal((6, 3)), np.array([0, 1, 1]))

    def test_not_triplets(self, rng: np.random.Generator) -> None:
        """Test that row counts must be multiples of three."""
        disc = SpeakerDisc(3, 2, rng, "float64")
        with pytest.raises(BatchStructureError):
            speaker_loss(disc, rng.standard_normal((5, 3)), np.array([0]))

    def test_clamp_keeps_scale_positive(self, rng: np.random.Generator) -> None:
        """Test the scale clamp after an update drives it negative."""
        disc = SpeakerDisc(3, 2, rng, "float64")
        disc.ap_scale.value[0] = -2.0
        disc.clamp()
        assert disc.ap_scale.value[0] == AP_MIN_SCALE


class TestTripletMarginLoss:
    """Tests for the triplet hinge."""

    def test_active_hinge(self) -> None:
        """Test a violated margin."""
        value, _ = triplet_margin_loss(np.array([[0.0], [1.0], [0.0]]), 1.0)
        assert value == pytest.approx(2.0)

    def test_inactive_hinge(self) -> None:
        """Test a satisfied margin and its zero gradient."""
        value, cache = triplet_margin_loss(np.array([[0.0], [0.0], [10.0]]), 1.0)
        assert value == 0.0
        assert np.all(backward(cache, 1.0) == 0.0)

    def test_mean_over_triplets(self) -> None:
        """Test averaging over an active and an inactive triplet."""
        g = np.array([[0.0], [1.0], [0.0], [0.0], [0.0], [10.0]])
        value, _ = triplet_margin_loss(g, 1.0)
        assert value == pytest.approx(1.0)


class TestEnvTripletLoss:
    """Tests for the environment discriminator loss."""

    def test_non_negative(self, env_disc: EnvDisc, rng: np.random.Generator) -> None:
        """Test that the hinge loss is never negative."""
        value, _ = env_triplet_loss(env_disc, rng.standard_normal((12, 4)), 1.0)
        assert value >= 0.0

    def test_input_width(self, env_disc: EnvDisc, rng: np.random.Generator) -> None:
        """Test input validation."""
        with pytest.raises(ShapeError):
            env_triplet_loss(env_disc, rng.standard_normal((12, 5)), 1.0)

    def test_not_triplets(self, env_disc: EnvDisc, rng: np.random.Generator) -> None:
        """Test that row counts must be multiples of three."""
        with pytest.raises(BatchStructureError):
            env_triplet_loss(env_disc, rng.standard_normal((10, 4)), 1.0)


class TestMapcLoss:
    """Tests for the mean absolute Pearson correlation."""

    def test_identical_columns(self, rng: np.random.Generator) -> None:
        """Test perfect correlation."""
        x = rng.standard_normal((10, 1))
        value, _ = mapc_loss(x, x.copy())
        assert value == pytest.approx(1.0)

    def test_anti_correlated(self, rng: np.random.Generator) -> None:
        """Test that the sign of the correlation is ignored."""
        x = rng.standard_normal((10, 1))
        value, _ = mapc_loss(x, -x)
        assert value == pytest.approx(1.0)

    def test_orthogonal_columns(self) -> None:
        """Test zero correlation."""
        spk = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        env = np.array([[1.0], [1.0], [-1.0], [-1.0]])
        value, _ = mapc_loss(spk, env)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_zero_variance_column(self, rng: np.random.Generator) -> None:
        """Test that a constant column contributes zero and a finite gradient."""
        spk = np.ones((6, 2))
        value, cache = mapc_loss(spk, rng.standard_normal((6, 3)))
        assert value == 0.0
        assert np.all(np.isfinite(backward(cache, 1.0)))

    def test_bounded(self, rng: np.random.Generator) -> None:
        """Test that the value lies in [0, 1]."""
        value, _ = mapc_loss(rng.standard_normal((9, 3)), rng.standard_normal((9, 3)))
        assert 0.0 <= value <= 1.0

    def test_affine_invariant(self, rng: np.random.Generator) -> None:
        """Test that per-column scaling and shifting leave the value unchanged."""
        for _ in range(1000):
            spk = rng.standard_normal((9, 3))
            env = rng.standard_normal((9, 4))
            scale = rng.uniform(0.5, 3.0, size=3) * rng.choice([-1.0, 1.0], size=3)
            moved, _ = mapc_loss(spk * scale + rng.normal(size=3), 2.0 * env - 1.0)
            assert moved == pytest.approx(mapc_loss(spk, env)[0], rel=1e-9)

    def test_independent_codes(self, rng: np.random.Generator) -> None:
        """Test the null level for independent codes of 1024 rows and width 8."""
        n = 1024
        values = [
            mapc_loss(rng.standard_normal((n, 8)), rng.standard_normal((n, 8)))[0]
            for _ in range(20)
        ]
        assert all(abs(v - 0.025) <= 0.01 for v in values)
        # E|r| of a null sample correlation
        assert np.mean(values) == pytest.approx(np.sqrt(2 / (np.pi * n)), abs=2e-3)

    def test_single_row(self) -> None:
        """Test that correlation needs two rows."""
        with pytest.raises(DegenerateBatchError):
            mapc_loss(np.ones((1, 2)), np.ones((1, 2)))


class TestRouteAdversarial:
    """Tests for gradient-reversal routing through E^S."""

    def test_encoder_gradient_is_reversed(
        self, env_disc: EnvDisc, rng: np.random.Generator
    ) -> None:
        """Test that the encoder path gets minus lambda times the input gradient."""
        x = rng.standard_normal((12, 4))
        routing = route_adversarial(env_disc, x, 1.0, 0.5)
        value, cache = env_triplet_loss(env_disc, x, 1.0)
        assert routing.value == value
        np.testing.assert_array_equal(routing.encoder_grad, -0.5 * backward(cache, 1.0))

    def test_discriminator_gradient_has_unit_weight(
        self, env_disc: EnvDisc, rng: np.random.Generator
    ) -> None:
        """Test that E^S parameter gradients do not depend on lambda."""
        x = rng.standard_normal((12, 4))
        route_adversarial(env_disc, x, 1.0, 0.5)
        first = env_disc.fc2.weight.grad.copy()
        for _, param in env_disc.named_params("env_spk"):
            param.zero_grad()
        route_adversarial(env_disc, x, 1.0, 3.0)
        np.testing.assert_allclose(env_disc.fc2.weight.grad, first)

    def test_zero_lambda(self, env_disc: EnvDisc, rng: np.random.Generator) -> None:
        """Test that a zero weight blocks the encoder path entirely."""
        routing = route_adversarial(env_disc, rng.standard_normal((12, 4)), 1.0, 0.0)
        assert not np.any(routing.encoder_grad)
