"""Adam and the two learning-rate schedules used in training."""
from __future__ import annotations

import numpy as np


class Adam:
    """Adaptive moment estimation over a dict of named numpy arrays (updated in place)."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            if k not in self.params:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr == 0.0:
                continue
            self.params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def constant_lr(base: float):
    return lambda step: base


def linear_decay_lr(base: float, total_steps: int):
    """``base`` at step 0, falling linearly to 0 at ``total_steps``."""
    total = max(int(total_steps), 1)
    return lambda step: base * max(0.0, 1.0 - step / total)
