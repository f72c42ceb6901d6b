"""Adam, the step-decay learning-rate schedule, and loss-history records."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from disn.config import TrainConfig
    from disn.core.diffcore import Param, Tensor


@dataclass
class AdamState:
    """Step counter and hyper-parameters of one Adam instance."""

    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self) -> dict[str, float | int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, float | int]) -> AdamState:
        return cls(
            t=int(data["t"]),
            beta1=float(data["beta1"]),
            beta2=float(data["beta2"]),
            eps=float(data["eps"]),
        )


def adam_update(param: Param, grad: Tensor, state: AdamState, lr: float) -> Param:
    """Apply one bias-corrected Adam update in place.

    ``state.t`` must already count the current step.
    """
    b1, b2 = state.beta1, state.beta2
    param.m1[...] = b1 * param.m1 + (1 - b1) * grad
    param.m2[...] = b2 * param.m2 + (1 - b2) * grad * grad
    m_hat = param.m1 / (1 - b1**state.t)
    v_hat = param.m2 / (1 - b2**state.t)
    param.value -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.value.dtype, copy=False)
    return param


class Adam:
    """Adam over a fixed parameter set."""

    def __init__(self, params: list[Param], state: AdamState):
        self.params = params
        self.state = state

    def step(self, lr: float) -> None:
        self.state.t += 1
        for param in self.params:
            adam_update(param, param.grad, self.state, lr)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Step-decayed learning rate ``lr0 * decay_factor ** (epoch // decay_every)``."""
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


@dataclass
class HistoryRow:
    """Per-epoch loss means."""

    epoch: int
    spk: float
    recons: float
    env_env: float
    env_spk: float
    corr: float
    total: float
    lr: float

    def to_list(self) -> list[float | int]:
        return [
            self.epoch,
            self.spk,
            self.recons,
            self.env_env,
            self.env_spk,
            self.corr,
            self.total,
            self.lr,
        ]

    @classmethod
    def from_list(cls, values: list[float | int]) -> HistoryRow:
        epoch, *losses = values
        return cls(int(epoch), *(float(v) for v in losses))
