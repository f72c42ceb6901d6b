"""Unit tests for Adam and the learning-rate schedule."""

from __future__ import annotations

import numpy as np
import pytest

from disn.config import TrainConfig
from disn.core.diffcore import Param
from disn.core.optim import Adam, AdamState, HistoryRow, lr_at


class TestAdam:
    """Tests for the Adam optimizer."""

    def test_first_step_moves_by_lr(self) -> None:
        """Test that bias correction makes the first step about lr in size."""
        param = Param(np.array([1.0, -1.0]))
        param.grad[...] = [4.0, -0.01]
        Adam([param], AdamState()).step(0.1)
        np.testing.assert_allclose(param.value, [0.9, -0.9], atol=1e-6)

    def test_counts_steps(self) -> None:
        """Test the shared step counter."""
        state = AdamState()
        optimizer = Adam([Param(np.zeros(2))], state)
        optimizer.step(0.1)
        optimizer.step(0.1)
        assert state.t == 2

    def test_minimizes_quadratic(self) -> None:
        """Test convergence on (x - 3)^2."""
        param = Param(np.array([0.0]))
        optimizer = Adam([param], AdamState())
        for _ in range(5000):
            param.grad[...] = 2 * (param.value - 3.0)
            optimizer.step(0.01)
        assert param.value[0] == pytest.approx(3.0, abs=1e-3)

    def test_zero_gradient_is_a_no_op(self) -> None:
        """Test that a parameter without gradient stays put."""
        param = Param(np.array([2.5], dtype=np.float32))
        Adam([param], AdamState()).step(0.5)
        assert param.value[0] == 2.5
        assert param.value.dtype == np.float32

    def test_state_dict(self) -> None:
        """Test the serializable form of the state."""
        state = AdamState(t=7, beta1=0.8)
        assert AdamState.from_dict(state.to_dict()) == state


class TestLrSchedule:
    """Tests for the step-decay schedule."""

    @pytest.mark.parametrize(
        ("epoch", "expected"),
        [(0, 1e-3), (15, 1e-3), (16, 7.5e-4), (32, 5.625e-4)],
    )
    def test_step_decay(self, epoch: int, expected: float) -> None:
        """Test lr0 * decay ** (epoch // every)."""
        config = TrainConfig(lr0=1e-3, decay_factor=0.75, decay_every=16)
        assert lr_at(epoch, config) == pytest.approx(expected)


class TestHistoryRow:
    """Tests for history rows."""

    def test_list_form(self) -> None:
        """Test the column order of a history row."""
        row = HistoryRow(3, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.001)
        assert row.to_list() == [3, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.001]
        assert HistoryRow.from_list(row.to_list()) == row
