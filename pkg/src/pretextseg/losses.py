"""Loss functions and the fixed task-to-loss mapping.

Reconstruction tasks (inpainting, denoising) regress pixels with mean
squared error; classification tasks (jigsaw, colorization,
segmentation) use cross-entropy over the class axis. Per-task weights
are configurable; the kind of loss per task is not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .pretext import TASKS
from .tensor import Tensor, from_op

LOSS_KINDS = {
    "inpainting": "mse",
    "denoising": "mse",
    "colorization": "ce",
    "jigsaw": "ce",
    "segmentation": "ce",
}


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over all elements of (pred - target)^2."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss shapes disagree: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred - target
    return (diff * diff).mean()


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean of -log softmax(logits)[target] over batch and positions.

    ``logits`` is [N,K,...] with the class axis second; ``target`` is an
    integer array shaped like logits with the class axis removed.
    Numerically stabilized by max subtraction, which also makes the loss
    invariant to adding a constant across the class axis.
    """
    target = np.asarray(target)
    if not np.issubdtype(target.dtype, np.integer):
        raise DataError(f"cross_entropy target must be integer, got dtype {target.dtype}")
    z = logits.data
    if z.ndim < 2:
        raise ShapeError(f"cross_entropy needs [N,K,...] logits, got shape {z.shape}")
    k = z.shape[1]
    expect = z.shape[:1] + z.shape[2:]
    if target.shape != expect:
        raise ShapeError(
            f"cross_entropy target shape {target.shape} does not match logits {z.shape}"
        )
    if target.min() < 0 or target.max() >= k:
        raise DataError(
            f"cross_entropy target labels must lie in 0..{k - 1}, got range "
            f"[{target.min()}, {target.max()}]"
        )

    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    idx = np.expand_dims(target, axis=1)
    picked = np.take_along_axis(shifted - log_norm, idx, axis=1)
    count = picked.size
    loss = -picked.sum() / count

    def backward(g):
        grad = np.exp(shifted - log_norm)
        np.put_along_axis(
            grad, idx, np.take_along_axis(grad, idx, axis=1) - 1.0, axis=1
        )
        return (grad * (g / count),)

    return from_op(loss, (logits,), backward)


@dataclass
class TaskLossSpec:
    """Active tasks with their combination weights."""

    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.weights:
            raise ConfigError("at least one task must be active")
        for task, lam in self.weights.items():
            if task not in TASKS:
                raise ConfigError(f"unknown task {task!r}; known: {', '.join(TASKS)}")
            if lam < 0:
                raise ConfigError(f"task weight for {task!r} must be >= 0, got {lam}")
        if all(lam == 0 for lam in self.weights.values()):
            raise ConfigError("at least one task weight must be > 0")

    def kind(self, task: str) -> str:
        return LOSS_KINDS[task]

    @property
    def tasks(self):
        return tuple(self.weights)


def combine_losses(per_task: dict[str, Tensor], spec: TaskLossSpec) -> Tensor:
    """Weighted sum of per-task losses; every configured task must be present."""
    total = None
    for task, lam in spec.weights.items():
        if task not in per_task:
            raise ConfigError(f"loss for configured task {task!r} is missing")
        term = lam * per_task[task]
        total = term if total is None else total + term
    return total
