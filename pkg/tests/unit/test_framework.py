"""Unit tests for the framework container."""

from __future__ import annotations

import numpy as np

from disn.config import ModelConfig, TrainConfig
from disn.core.framework import Framework
from disn.core.trainer import Trainer

MODEL = ModelConfig(input_dim=6, code_dim=4, env_hidden_dim=5, env_out_dim=3)


def make_framework(seed: int = 0) -> Framework:
    """Build a float64 framework over three speakers."""
    return Framework(MODEL, 3, np.random.default_rng(seed), "float64")


def buffers(framework: Framework) -> dict[str, np.ndarray]:
    """Copy every running statistic."""
    return {name: value.copy() for name, value in framework.named_buffers()}


class TestParameterSets:
    """Tests for the main and adversary parameter sets."""

    def test_partition(self) -> None:
        """Test that the two sets are disjoint and cover every parameter."""
        fw = make_framework()
        main = {name for name, _ in fw.main_params()}
        adversary = {name for name, _ in fw.adversary_params()}
        assert not main & adversary
        assert main | adversary == {name for name, _ in fw.named_params()}
        assert all(name.startswith("env_spk.") for name in adversary)

    def test_zero_grad(self) -> None:
        """Test that every gradient is cleared."""
        fw = make_framework()
        for _, param in fw.named_params():
            param.grad[...] = 1.0
        fw.zero_grad()
        assert all(not np.any(param.grad) for _, param in fw.named_params())


class TestFreezeStats:
    """Tests for freezing batch-norm running statistics."""

    def test_covers_every_module(self) -> None:
        """Test that all six BN layers are switched."""
        fw = make_framework()
        fw.freeze_stats()
        assert len(fw.bn_layers()) == 6
        assert all(layer.frozen_stats for layer in fw.bn_layers())
        fw.freeze_stats(False)
        assert not any(layer.frozen_stats for layer in fw.bn_layers())

    def test_frozen_step_keeps_buffers(self, rng: np.random.Generator) -> None:
        """Test that train-mode forwards leave frozen statistics alone and resume after."""
        fw = make_framework()
        trainer = Trainer(fw, TrainConfig(precision="float64"))
        e, labels = rng.standard_normal((12, 6)), np.array([0, 1, 2, 1])

        before = buffers(fw)
        fw.freeze_stats()
        trainer.compute_gradients(e, labels)
        for name, value in fw.named_buffers():
            np.testing.assert_array_equal(value, before[name], err_msg=name)

        fw.freeze_stats(False)
        trainer.compute_gradients(e, labels)
        changed = [
            name for name, value in fw.named_buffers() if not np.array_equal(value, before[name])
        ]
        assert len(changed) == len(before)
