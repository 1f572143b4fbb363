"""Model assembly: one shared convolutional encoder, per-task heads.

The encoder is a stack of conv -> norm -> relu blocks (stride-2
downsampling in the second and third block). Dense heads mirror it with
two nearest-neighbor upsample blocks followed by a 1x1 projection, so
they emit predictions at the input resolution. The jigsaw head pools the
encoder features globally and classifies the applied tile permutation.

All heads consume the same encoder output; the encoder parameters are
shared objects, not copies.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .norms import NormParams, SwitchableWeights, batch_norm, group_norm, instance_norm, layer_norm, switchable_norm
from .pretext import TASKS
from .tensor import Tensor, conv2d, linear, relu, upsample_nearest

NORM_KINDS = ("batch", "layer", "instance", "group", "switchable", "none")

DENSE_HEAD_CHANNELS = {"inpainting": 3, "denoising": 3}


class Conv2d:
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0):
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.padding = stride, padding
        self.weight = Tensor(np.zeros((c_out, c_in, kernel, kernel)), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x, training):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def init(self, rng):
        fan_in = self.c_in * self.kernel * self.kernel
        fan_out = self.c_out * self.kernel * self.kernel
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.data.shape)
        self.bias.data[...] = 0.0


class Linear:
    def __init__(self, d_in: int, d_out: int):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Tensor(np.zeros((d_in, d_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x, training):
        return linear(x, self.weight, self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def init(self, rng):
        bound = np.sqrt(6.0 / (self.d_in + self.d_out))
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.data.shape)
        self.bias.data[...] = 0.0


class NormLayer:
    def __init__(self, kind: str, channels: int, groups: int = 1,
                 switch: SwitchableWeights | None = None):
        if kind not in NORM_KINDS or kind == "none":
            raise ConfigError(f"unknown norm kind {kind!r}")
        self.kind = kind
        self.groups = groups
        self.norm = NormParams.create(
            channels, track_running=kind in ("batch", "switchable")
        )
        self.switch = switch if kind == "switchable" else None
        if kind == "switchable" and switch is None:
            self.switch = SwitchableWeights()

    def __call__(self, x, training):
        if self.kind == "batch":
            return batch_norm(x, self.norm, training)
        if self.kind == "layer":
            return layer_norm(x, self.norm, training)
        if self.kind == "instance":
            return instance_norm(x, self.norm, training)
        if self.kind == "group":
            return group_norm(x, self.norm, self.groups, training)
        return switchable_norm(x, self.norm, self.switch, training)

    def params(self):
        out = [("gamma", self.norm.gamma), ("beta", self.norm.beta)]
        if self.switch is not None:
            out += [
                ("logits_mean", self.switch.logits_mean),
                ("logits_var", self.switch.logits_var),
            ]
        return out

    def stats(self):
        if self.norm.running_mean is None:
            return []
        return [("running_mean", self.norm), ("running_var", self.norm)]

    def init(self, rng):
        self.norm.gamma.data[...] = 1.0
        self.norm.beta.data[...] = 0.0
        if self.norm.running_mean is not None:
            self.norm.running_mean[...] = 0.0
            self.norm.running_var[...] = 1.0
        if self.switch is not None:
            self.switch.logits_mean.data[...] = 0.0
            self.switch.logits_var.data[...] = 0.0


class ReLU:
    def __call__(self, x, training):
        return relu(x)

    def params(self):
        return []


class Upsample:
    def __init__(self, factor: int):
        self.factor = factor

    def __call__(self, x, training):
        return upsample_nearest(x, self.factor)

    def params(self):
        return []


class GlobalAvgPool:
    def __call__(self, x, training):
        return x.mean(axis=(2, 3))

    def params(self):
        return []


class Reshape:
    """Reshape trailing dimensions, keeping the batch axis."""

    def __init__(self, *dims):
        self.dims = dims

    def __call__(self, x, training):
        return x.reshape((x.shape[0],) + self.dims)

    def params(self):
        return []


class Stack:
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x, training):
        for layer in self.layers:
            x = layer(x, training)
        return x


class Model:
    def __init__(self, encoder: Stack, heads: dict[str, Stack], norm_kind: str,
                 group_count: int, down_factor: int):
        self.encoder = encoder
        self.heads = heads
        self.norm_kind = norm_kind
        self.group_count = group_count
        self.down_factor = down_factor

    def encode(self, x: Tensor, training: bool) -> Tensor:
        h, w = x.shape[2], x.shape[3]
        if h % self.down_factor or w % self.down_factor:
            raise ShapeError(
                f"input {h}x{w} must be divisible by the encoder stride product "
                f"{self.down_factor}"
            )
        return self.encoder(x, training)

    def forward(self, x: Tensor, task: str, training: bool) -> Tensor:
        if task not in self.heads:
            raise ConfigError(f"model has no head for task {task!r}")
        return self.heads[task](self.encode(x, training), training)

    def _walk(self):
        yield "encoder", self.encoder
        for task, head in self.heads.items():
            yield f"heads.{task}", head

    def layers(self):
        for scope, stack in self._walk():
            for i, layer in enumerate(stack.layers):
                yield f"{scope}.{i}", layer

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out, seen = [], set()
        for prefix, layer in self.layers():
            for local, tensor in layer.params():
                if id(tensor) in seen:  # shared switchable logits appear once
                    continue
                seen.add(id(tensor))
                out.append((f"{prefix}.{local}", tensor))
        return out

    def named_stats(self) -> list[tuple[str, NormParams, str]]:
        """Non-learnable running statistics, as (name, params, field)."""
        out, seen = [], set()
        for prefix, layer in self.layers():
            if not isinstance(layer, NormLayer):
                continue
            for field, norm in layer.stats():
                key = (id(norm), field)
                if key in seen:
                    continue
                seen.add(key)
                out.append((f"{prefix}.{field}", norm, field))
        return out

    def scope_param_names(self, scopes) -> list[str]:
        names = []
        for name, _ in self.named_parameters():
            if any(name == s or name.startswith(s + ".") for s in scopes):
                names.append(name)
        return names


def _norm(cfg_norm: str, channels: int, groups: int, shared_switch):
    if cfg_norm == "none":
        return None
    return NormLayer(cfg_norm, channels, groups=groups, switch=shared_switch)


def _conv_block(c_in, c_out, stride, cfg_norm, groups, shared_switch):
    block = [Conv2d(c_in, c_out, kernel=3, stride=stride, padding=1)]
    norm = _norm(cfg_norm, c_out, groups, shared_switch)
    if norm is not None:
        block.append(norm)
    block.append(ReLU())
    return block


def build_model(cfg) -> Model:
    """Assemble encoder and heads from a training configuration.

    The topology is a deterministic function of the configuration; see
    ``init_params`` for the (seeded) parameter values.
    """
    tasks = tuple(cfg.tasks)
    if not tasks:
        raise ConfigError("config names no tasks")
    for task in tasks:
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; known: {', '.join(TASKS)}")
    if cfg.norm not in NORM_KINDS:
        raise ConfigError(f"unknown norm kind {cfg.norm!r}; known: {', '.join(NORM_KINDS)}")

    channels = tuple(cfg.encoder_channels)
    if len(channels) != 3 or any(c < 1 for c in channels):
        raise ConfigError(f"encoder_channels must be 3 positive ints, got {channels}")
    c1, c2, c3 = channels
    if cfg.norm == "group":
        for c in {c1, c2, c3}:
            if c % cfg.groups != 0:
                raise ConfigError(
                    f"groups={cfg.groups} does not divide channel count {c}"
                )

    shared_switch = None
    if cfg.norm == "switchable" and getattr(cfg, "switch_shared", False):
        shared_switch = SwitchableWeights()

    def norm_args():
        return (cfg.norm, cfg.groups, shared_switch)

    encoder = Stack(
        _conv_block(3, c1, 1, *norm_args())
        + _conv_block(c1, c2, 2, *norm_args())
        + _conv_block(c2, c3, 2, *norm_args())
    )

    def dense_head(c_out):
        return Stack(
            [Upsample(2)]
            + _conv_block(c3, c2, 1, *norm_args())
            + [Upsample(2)]
            + _conv_block(c2, c1, 1, *norm_args())
            + [Conv2d(c1, c_out, kernel=1)]
        )

    heads: dict[str, Stack] = {}
    for task in tasks:
        if task == "segmentation":
            if cfg.nb_classes < 2:
                raise ConfigError(
                    f"segmentation needs nb_classes >= 2, got {cfg.nb_classes}"
                )
            heads[task] = dense_head(cfg.nb_classes)
        elif task == "colorization":
            if cfg.color_bins < 2:
                raise ConfigError(f"colorization needs color_bins >= 2, got {cfg.color_bins}")
            heads[task] = dense_head(cfg.color_bins)
        elif task == "jigsaw":
            tiles = cfg.jigsaw_grid * cfg.jigsaw_grid
            heads[task] = Stack(
                [GlobalAvgPool(), Linear(c3, tiles * tiles), Reshape(tiles, tiles)]
            )
        else:
            heads[task] = dense_head(DENSE_HEAD_CHANNELS[task])

    return Model(encoder, heads, cfg.norm, cfg.groups, down_factor=4)


def init_params(model: Model, seed: int) -> None:
    """Reset all parameters reproducibly.

    Conv and linear weights draw from uniform(-b, b) with
    b = sqrt(6 / (fan_in + fan_out)); biases, shifts, and switchable
    logits start at zero, scales at one, running stats at (0, 1).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    for _, layer in model.layers():
        if hasattr(layer, "init"):
            layer.init(rng)
