"""Experiment configuration: a flat key set, loadable from TOML files.

Config files use plain ``key = value`` lines grouped under optional
``[sections]``; section names are cosmetic and every key has one global
meaning, mirrored by a CLI flag of the same name. CLI values override
file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .losses import TaskLossSpec
from .pretext import TASKS, PretextParams

COMBINE_MODES = ("sum", "alternate")


def _parse_name_list(value) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [p.strip() for p in value.split(",") if p.strip()]
    return tuple(value)


def _parse_int_list(value) -> tuple[int, ...]:
    if isinstance(value, str):
        value = [p.strip() for p in value.split(",") if p.strip()]
    return tuple(int(v) for v in value)


@dataclass
class TrainConfig:
    # run
    seed: int = 0
    epochs: int = 1
    eval_every: int = 1
    steps_per_epoch: int = 0  # 0 -> derived from pool sizes
    # data
    dataset: str = ""
    batch_labeled: int = 8
    batch_unlabeled: int = 8
    sample_with_replacement: bool = False
    nb_classes: int = 0  # 0 -> taken from the dataset manifest
    miou_include_absent: bool = False  # score absent classes 0 instead of skipping
    # tasks
    tasks: tuple = ("segmentation",)
    task_weights: dict = field(default_factory=dict)  # missing tasks weigh 1.0
    combine: str = "sum"
    # model
    norm: str = "batch"
    groups: int = 2
    encoder_channels: tuple = (16, 32, 64)
    switch_shared: bool = False
    # optimizer
    lr: float = 0.1
    momentum: float = 0.9
    decay_gamma: float = 1.0
    decay_step: int = 1000
    # pretext tasks
    inpaint_side: int = 0  # 0 -> image height // 4
    inpaint_fill: float = 0.5
    noise_sigma: float = 0.1
    color_bins: int = 16
    jigsaw_grid: int = 3
    jigsaw_perms: int = 64

    def weights(self) -> dict[str, float]:
        return {t: float(self.task_weights.get(t, 1.0)) for t in self.tasks}

    def loss_spec(self) -> TaskLossSpec:
        return TaskLossSpec(self.weights())

    def pretext_params(self) -> PretextParams:
        return PretextParams(
            inpaint_side=self.inpaint_side if self.inpaint_side > 0 else None,
            inpaint_fill=self.inpaint_fill,
            noise_sigma=self.noise_sigma,
            color_bins=self.color_bins,
            jigsaw_grid=self.jigsaw_grid,
            jigsaw_count=self.jigsaw_perms,
        )

    def pretext_tasks(self) -> tuple[str, ...]:
        return tuple(t for t in self.tasks if t != "segmentation")

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.steps_per_epoch < 0:
            raise ConfigError("steps_per_epoch must be >= 0")
        if self.batch_labeled < 0 or self.batch_unlabeled < 0:
            raise ConfigError("batch sizes must be >= 0")
        if self.batch_labeled + self.batch_unlabeled < 1:
            raise ConfigError("batch_labeled + batch_unlabeled must be >= 1")
        if self.combine not in COMBINE_MODES:
            raise ConfigError(
                f"combine must be one of {', '.join(COMBINE_MODES)}, got {self.combine!r}"
            )
        if not self.tasks:
            raise ConfigError("no tasks configured")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError(f"duplicate tasks in {self.tasks}")
        for t in self.tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}; known: {', '.join(TASKS)}")
        for t in self.task_weights:
            if t not in TASKS:
                raise ConfigError(f"weight given for unknown task {t!r}")
        self.loss_spec()  # validates weight values
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if not 0.0 < self.decay_gamma <= 1.0:
            raise ConfigError(f"decay_gamma must be in (0,1], got {self.decay_gamma}")
        if self.decay_step < 1:
            raise ConfigError(f"decay_step must be >= 1, got {self.decay_step}")
        if not 0.0 <= self.inpaint_fill <= 1.0:
            raise ConfigError(f"inpaint_fill must be in [0,1], got {self.inpaint_fill}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.color_bins < 2:
            raise ConfigError(f"color_bins must be >= 2, got {self.color_bins}")
        if self.jigsaw_grid < 1 or self.jigsaw_perms < 1:
            raise ConfigError("jigsaw_grid and jigsaw_perms must be >= 1")
        return self


_LIST_FIELDS = {"tasks": _parse_name_list, "encoder_channels": _parse_int_list}
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _assign(cfg: TrainConfig, key: str, value) -> None:
    if key.startswith("weight_"):
        task = key[len("weight_") :]
        cfg.task_weights[task] = float(value)
        return
    if key == "active":  # [tasks] active = "..." reads naturally in files
        key = "tasks"
    if key in _LIST_FIELDS:
        setattr(cfg, key, _LIST_FIELDS[key](value))
        return
    if key not in _FIELD_TYPES or key == "task_weights":
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(cfg, key)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} expects a boolean, got {value!r}")
        setattr(cfg, key, value)
    elif isinstance(current, int):
        setattr(cfg, key, int(value))
    elif isinstance(current, float):
        setattr(cfg, key, float(value))
    else:
        setattr(cfg, key, str(value))


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    for key, value in overrides.items():
        if value is not None:
            _assign(cfg, key, value)
    return cfg


def load_config(path) -> TrainConfig:
    """Read a TOML config file into a TrainConfig (not yet validated)."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"cannot parse config {path}: {err}") from err
    cfg = TrainConfig()
    for key, value in doc.items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                _assign(cfg, sub_key, sub_value)
        else:
            _assign(cfg, key, value)
    return cfg
