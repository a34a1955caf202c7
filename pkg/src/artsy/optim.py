"""SGD with momentum and a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import OptimizerError
from .tensor import Tensor


@dataclass(frozen=True)
class SgdConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 48
    epochs: int = 20

    def validated(self) -> "SgdConfig":
        if self.base_lr <= 0:
            raise OptimizerError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise OptimizerError(f"momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise OptimizerError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise OptimizerError("batch_size and epochs must be >= 1")
        return self


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """lr(step) = base_lr * 0.5 * (1 + cos(pi * step / total_steps))."""
    if total_steps < 1:
        raise OptimizerError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0 or step >= total_steps:
        raise OptimizerError(f"step {step} outside [0, {total_steps})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class Sgd:
    """Momentum SGD over named parameters; one velocity buffer per parameter.

    Gradients are zeroed after each step, so a fresh tape per batch sees
    clean buffers.
    """

    def __init__(self, params: list[tuple[str, Tensor]], cfg: SgdConfig, total_steps: int):
        if total_steps < 1:
            raise OptimizerError(f"total_steps must be >= 1, got {total_steps}")
        self.params = list(params)
        self.cfg = cfg.validated()
        self.total_steps = total_steps
        self.step_count = 0
        self._vel = [np.zeros_like(t.data) for _, t in self.params]

    def step(self) -> float:
        """Apply one update at the current schedule position; returns the lr used."""
        lr = cosine_lr(self.cfg.base_lr, self.step_count, self.total_steps)
        for (name, t), vel in zip(self.params, self._vel):
            if t.grad is None:
                raise OptimizerError(f"parameter '{name}' has no gradient")
            K.sgd_update(t.data, t.grad, vel, lr, self.cfg.momentum, self.cfg.weight_decay)
        for _, t in self.params:
            t.zero_grad()
        self.step_count += 1
        return lr
