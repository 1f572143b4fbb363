"""Normalization layers over N,C,H,W activations.

All five variants share one standardization core and differ only in the
axes the statistics are pooled over:

    mu    = mean(x)                 over the variant's axes
    var   = mean((x - mu)^2)        same axes, biased estimator
    xhat  = (x - mu) / sqrt(var + eps)
    y     = gamma * xhat + beta     per-channel scale and shift

batch:    axes (N, H, W), running statistics kept for eval mode
layer:    axes (C, H, W) per sample
instance: axes (H, W) per sample and channel
group:    axes (C/groups, H, W) per sample and channel group
switchable: standardizes with softmax-weighted mixtures of the batch,
    instance, and layer statistics; the mixing logits are learnable and
    mean and variance are mixed independently.

Running statistics update as running <- (1 - m) * running + m * batch
and start at mean 0, variance 1, so eval mode is defined before any
training step has happened.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, exp, sqrt


@dataclass
class NormParams:
    """Learnable per-channel scale/shift plus normalization constants."""

    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5
    momentum_stat: float = 0.1
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not 0.0 < self.momentum_stat < 1.0:
            raise ValueError(f"momentum_stat must be in (0,1), got {self.momentum_stat}")
        if self.running_var is not None and np.any(self.running_var < 0):
            raise ValueError("running_var entries must be >= 0")

    @classmethod
    def create(cls, channels: int, eps: float = 1e-5, momentum_stat: float = 0.1,
               track_running: bool = False) -> "NormParams":
        p = cls(
            gamma=Tensor(np.ones(channels), requires_grad=True),
            beta=Tensor(np.zeros(channels), requires_grad=True),
            eps=eps,
            momentum_stat=momentum_stat,
        )
        if track_running:
            p.running_mean = np.zeros(channels)
            p.running_var = np.ones(channels)
        return p

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


@dataclass
class SwitchableWeights:
    """Learnable mixing logits over {batch, instance, layer} statistics."""

    logits_mean: Tensor = field(
        default_factory=lambda: Tensor(np.zeros(3), requires_grad=True)
    )
    logits_var: Tensor = field(
        default_factory=lambda: Tensor(np.zeros(3), requires_grad=True)
    )


def _softmax3(logits: Tensor) -> Tensor:
    # max subtraction is a constant shift, so the gradient stays exact
    shifted = exp(logits - float(logits.data.max()))
    return shifted / shifted.sum()


def _check_input(x: Tensor, p: NormParams):
    if x.data.ndim != 4:
        raise ShapeError(f"norm layers expect N,C,H,W input, got shape {x.data.shape}")
    if x.data.shape[1] != p.channels:
        raise ShapeError(
            f"input has {x.data.shape[1]} channels but params carry {p.channels}"
        )


def _affine(xhat: Tensor, p: NormParams) -> Tensor:
    c = p.channels
    return p.gamma.reshape(1, c, 1, 1) * xhat + p.beta.reshape(1, c, 1, 1)


def _standardize(x: Tensor, axes, p: NormParams) -> Tensor:
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    return centered / sqrt(var + p.eps)


def batch_norm(x: Tensor, p: NormParams, training: bool = True) -> Tensor:
    """Normalize over the mini-batch, per channel.

    Training mode pools statistics over the N, H, W axes and updates the
    running statistics; eval mode standardizes with the running
    statistics instead. A single-element pool per channel has no
    variance to estimate and is rejected.
    """
    _check_input(x, p)
    n, c, h, w = x.data.shape
    if training:
        if n * h * w < 2:
            raise ShapeError(
                "batch_norm training needs at least 2 values per channel, "
                f"got batch shape {x.data.shape}"
            )
        out = _affine(_standardize(x, (0, 2, 3), p), p)
        if p.running_mean is not None:
            m = p.momentum_stat
            batch_mean = x.data.mean(axis=(0, 2, 3))
            batch_var = x.data.var(axis=(0, 2, 3))
            p.running_mean = (1.0 - m) * p.running_mean + m * batch_mean
            p.running_var = (1.0 - m) * p.running_var + m * batch_var
        return out
    if p.running_mean is None:
        raise ShapeError("batch_norm eval mode needs running statistics")
    mean = Tensor(p.running_mean.reshape(1, c, 1, 1))
    std = Tensor(np.sqrt(p.running_var + p.eps).reshape(1, c, 1, 1))
    return _affine((x - mean) / std, p)


def layer_norm(x: Tensor, p: NormParams, training: bool = True) -> Tensor:
    """Normalize each sample over all of its features (C, H, W axes)."""
    _check_input(x, p)
    return _affine(_standardize(x, (1, 2, 3), p), p)


def instance_norm(x: Tensor, p: NormParams, training: bool = True) -> Tensor:
    """Normalize each channel of each sample over its spatial extent."""
    _check_input(x, p)
    return _affine(_standardize(x, (2, 3), p), p)


def group_norm(x: Tensor, p: NormParams, groups: int, training: bool = True) -> Tensor:
    """Normalize channel groups per sample.

    groups=1 coincides with layer_norm, groups=C with instance_norm.
    """
    _check_input(x, p)
    n, c, h, w = x.data.shape
    if groups < 1 or c % groups != 0:
        raise ValueError(f"channel count {c} is not divisible by groups={groups}")
    grouped = x.reshape(n, groups, c // groups, h, w)
    xhat = _standardize(grouped, (2, 3, 4), p).reshape(n, c, h, w)
    return _affine(xhat, p)


def switchable_norm(
    x: Tensor, p: NormParams, w: SwitchableWeights, training: bool = True
) -> Tensor:
    """Standardize with learned mixtures of batch/instance/layer statistics.

    Mixture weights are softmax(logits), one weight triple for the means
    and an independent one for the variances; each variance is measured
    around its own mean. In eval mode the batch component falls back to
    the running statistics, like batch_norm.
    """
    _check_input(x, p)
    n, c, h, wd = x.data.shape
    if training and n * h * wd < 2:
        raise ShapeError(
            "switchable_norm training needs at least 2 values per channel, "
            f"got batch shape {x.data.shape}"
        )

    def stats(axes):
        mu = x.mean(axis=axes, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        return mu, var

    mu_in, var_in = stats((2, 3))
    mu_ln, var_ln = stats((1, 2, 3))
    if training:
        mu_bn, var_bn = stats((0, 2, 3))
        if p.running_mean is not None:
            m = p.momentum_stat
            p.running_mean = (1.0 - m) * p.running_mean + m * mu_bn.data.reshape(c)
            p.running_var = (1.0 - m) * p.running_var + m * var_bn.data.reshape(c)
    else:
        if p.running_mean is None:
            raise ShapeError("switchable_norm eval mode needs running statistics")
        mu_bn = Tensor(p.running_mean.reshape(1, c, 1, 1))
        var_bn = Tensor(p.running_var.reshape(1, c, 1, 1))

    wm = _softmax3(w.logits_mean)
    wv = _softmax3(w.logits_var)
    mu_mix = wm[0] * mu_bn + wm[1] * mu_in + wm[2] * mu_ln
    var_mix = wv[0] * var_bn + wv[1] * var_in + wv[2] * var_ln
    xhat = (x - mu_mix) / sqrt(var_mix + p.eps)
    return _affine(xhat, p)
