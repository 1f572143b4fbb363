"""Stochastic gradient descent with momentum and stepwise learning-rate decay.

Update rule per parameter:

    v <- momentum * v + g
    p <- p - lr(t) * v,    lr(t) = lr0 * decay_gamma ** floor(t / decay_step)

where t counts completed optimizer steps. Gradients are zeroed after
each step; velocities persist across steps.
"""

from __future__ import annotations

import numpy as np

from .errors import TapeError
from .tensor import Tensor


class SGD:
    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        lr: float,
        momentum: float = 0.0,
        decay_gamma: float = 1.0,
        decay_step: int = 1,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0,1), got {momentum}")
        if not 0.0 < decay_gamma <= 1.0:
            raise ValueError(f"decay_gamma must be in (0,1], got {decay_gamma}")
        if decay_step < 1:
            raise ValueError(f"decay_step must be >= 1, got {decay_step}")
        names = [name for name, _ in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params = dict(params)
        self.lr0 = lr
        self.momentum = momentum
        self.decay_gamma = decay_gamma
        self.decay_step = decay_step
        self.velocity = {name: np.zeros_like(p.data) for name, p in params}
        self.step_count = 0

    def lr_at(self, step: int) -> float:
        return self.lr0 * self.decay_gamma ** (step // self.decay_step)

    @property
    def lr(self) -> float:
        return self.lr_at(self.step_count)

    def step(self, names=None) -> None:
        """Apply one update to ``names`` (default: all registered parameters).

        Every stepped parameter must carry a gradient from a completed
        backward pass.
        """
        chosen = tuple(self.params) if names is None else tuple(names)
        lr = self.lr
        for name in chosen:
            p = self.params[name]
            if p.grad is None:
                raise TapeError(f"parameter {name!r} has no gradient; run backward first")
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= lr * v
        self.step_count += 1
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
