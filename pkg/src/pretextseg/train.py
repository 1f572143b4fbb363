"""The semi-supervised multi-task training loop and evaluation.

Each step draws a batch (labeled segmentation pairs plus pretext
transforms of unlabeled images), runs the shared encoder and the
relevant heads, and applies one SGD update. In ``sum`` mode all task
losses combine into a single weighted objective per step; in
``alternate`` mode tasks take turns, one per step, round-robin.

Determinism: given (config, seed), every loss value, parameter, and
report row is reproducible bit for bit. Math is single threaded and all
randomness derives from the seed. Wall-clock seconds in the report are
the one observational exception.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import load_checkpoint, read_container, save_checkpoint
from .config import TrainConfig
from .data import BatchStream, DatasetManifest, ImageLoader
from .errors import ConfigError, DataError, NumericsError
from .losses import combine_losses, cross_entropy, mse_loss
from .metrics import ConfusionMatrix, iou_per_class, miou, pixel_accuracy
from .model import Model, build_model, init_params
from .optim import SGD
from .pretext import build_catalogue, build_palette
from .tensor import Tape, Tensor


@dataclass
class EvalResult:
    miou: float
    pixel_acc: float
    iou: list
    confusion: ConfusionMatrix


@dataclass
class EpochRow:
    epoch: int
    lr: float
    losses: dict
    val_miou: float | None
    val_pixacc: float | None
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch training record; ``lr`` is the rate at the epoch's first step."""

    tasks: tuple
    rows: list = field(default_factory=list)

    def header(self) -> list:
        return (
            ["epoch", "lr"]
            + [f"loss_{t}" for t in self.tasks]
            + ["val_miou", "val_pixacc", "seconds"]
        )

    @staticmethod
    def _cell(value) -> str:
        return "" if value is None else repr(float(value))

    def row_cells(self, row: EpochRow) -> list:
        return (
            [str(row.epoch), self._cell(row.lr)]
            + [self._cell(row.losses.get(t)) for t in self.tasks]
            + [self._cell(row.val_miou), self._cell(row.val_pixacc), self._cell(row.seconds)]
        )

    def csv_text(self) -> str:
        lines = [",".join(self.header())]
        lines += [",".join(self.row_cells(r)) for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())


def _stack_inputs(samples) -> Tensor:
    arrs = []
    for s in samples:
        a = s.input
        if a.shape[0] == 1:  # luminance input, tiled to the encoder's 3 channels
            a = np.repeat(a, 3, axis=0)
        arrs.append(a)
    return Tensor(np.stack(arrs))


def evaluate(model: Model, manifest: DatasetManifest, split: str = "val",
             loader: ImageLoader | None = None, batch_size: int = 16,
             include_absent: bool = False) -> EvalResult:
    """Argmax segmentation over a split, accumulated into one confusion matrix.

    Ties in the class logits resolve to the lowest class index. With
    ``include_absent``, classes missing from both masks score 0 instead
    of dropping out of the mean.
    """
    if "segmentation" not in model.heads:
        raise ConfigError("model has no segmentation head to evaluate")
    entries = [e for e in manifest.entries if e.split == split and e.mask is not None]
    if not entries:
        raise DataError(f"split {split!r} has no entries with masks")
    loader = loader if loader is not None else ImageLoader(manifest)
    cm = ConfusionMatrix.empty(manifest.nb_classes)
    for start in range(0, len(entries), batch_size):
        chunk = entries[start : start + batch_size]
        x = Tensor(np.stack([loader.image(e) for e in chunk]))
        logits = model.forward(x, "segmentation", training=False)
        pred = np.argmax(logits.data, axis=1)
        gt = np.stack([loader.mask(e) for e in chunk])
        cm.add(gt, pred)
    return EvalResult(miou(cm, include_absent), pixel_accuracy(cm), iou_per_class(cm), cm)


def constant_baseline(manifest: DatasetManifest, split: str = "val",
                      loader: ImageLoader | None = None) -> tuple[int, float]:
    """Best mIoU any constant-class predictor reaches on the split."""
    entries = [e for e in manifest.entries if e.split == split and e.mask is not None]
    if not entries:
        raise DataError(f"split {split!r} has no entries with masks")
    loader = loader if loader is not None else ImageLoader(manifest)
    k = manifest.nb_classes
    hist = np.zeros(k, dtype=np.int64)
    for e in entries:
        hist += np.bincount(loader.mask(e).reshape(-1), minlength=k)
    best_class, best = 0, -1.0
    for cls in range(k):
        counts = np.zeros((k, k), dtype=np.int64)
        counts[:, cls] = hist
        score = miou(ConfusionMatrix(k, counts))
        if score > best:
            best_class, best = cls, score
    return best_class, best


class Trainer:
    """Owns one training run: model, optimizer, batch stream, report."""

    def __init__(self, cfg: TrainConfig):
        cfg.validate()
        self.manifest = DatasetManifest.load(cfg.dataset)
        nb = self.manifest.nb_classes
        if cfg.nb_classes and cfg.nb_classes != nb:
            raise ConfigError(
                f"config nb_classes={cfg.nb_classes} but dataset has {nb} classes"
            )
        self.cfg = replace(cfg, nb_classes=nb)
        cfg = self.cfg

        h, w = self.manifest.image_size
        if h % 4 or w % 4:
            raise ConfigError(
                f"image size {h}x{w} must be divisible by the encoder stride product 4"
            )
        if "segmentation" in cfg.tasks:
            if cfg.batch_labeled < 1:
                raise ConfigError("segmentation is active but batch_labeled is 0")
            if not self.manifest.labeled_train():
                raise ConfigError("segmentation is active but the dataset has no labeled entries")
        pretext_tasks = cfg.pretext_tasks()
        if pretext_tasks and cfg.batch_unlabeled < 1:
            raise ConfigError(f"pretext tasks {pretext_tasks} active but batch_unlabeled is 0")
        if "jigsaw" in cfg.tasks and (h % cfg.jigsaw_grid or w % cfg.jigsaw_grid):
            raise ConfigError(
                f"jigsaw grid {cfg.jigsaw_grid} does not divide image size {h}x{w}"
            )
        side = cfg.inpaint_side if cfg.inpaint_side > 0 else h // 4
        if "inpainting" in cfg.tasks and side > min(h, w):
            raise ConfigError(f"inpaint_side {side} exceeds image size {h}x{w}")

        self.loader = ImageLoader(self.manifest)
        self.params = cfg.pretext_params()
        if "colorization" in cfg.tasks:
            self.params.palette = build_palette(
                (self.loader.image(e) for e in self.manifest.train_entries()),
                nb_bins=cfg.color_bins,
            )
        if "jigsaw" in cfg.tasks:
            self.params.catalogue = build_catalogue(
                cfg.jigsaw_grid, cfg.jigsaw_perms, seed=cfg.seed
            )

        self.model = build_model(cfg)
        init_params(self.model, cfg.seed)
        self.optim = SGD(
            self.model.named_parameters(),
            lr=cfg.lr,
            momentum=cfg.momentum,
            decay_gamma=cfg.decay_gamma,
            decay_step=cfg.decay_step,
        )
        self.stream = BatchStream(self.manifest, cfg, self.params, self.loader)
        self.spec = cfg.loss_spec()
        self.report = TrainReport(tasks=cfg.tasks)
        self.epoch = 0
        self.step_in_epoch = 0
        self._loss_sums = {t: 0.0 for t in cfg.tasks}
        self._loss_counts = {t: 0 for t in cfg.tasks}

    # ---- single step ------------------------------------------------------

    def _task_loss(self, task, samples):
        x = _stack_inputs(samples)
        out = self.model.forward(x, task, training=True)
        if self.spec.kind(task) == "mse":
            return mse_loss(out, np.stack([s.target for s in samples]))
        return cross_entropy(out, np.stack([s.target for s in samples]))

    def train_step(self) -> dict:
        """One optimization step at the current (epoch, step) position."""
        cfg = self.cfg
        batch = self.stream.batch_at(self.epoch, self.step_in_epoch)
        by_task = dict(batch.unlabeled)
        if batch.labeled:
            by_task["segmentation"] = batch.labeled

        if cfg.combine == "alternate":
            active = (self.spec.tasks[self.optim.step_count % len(self.spec.tasks)],)
        else:
            active = self.spec.tasks

        current = None
        try:
            tape = Tape()
            with tape:
                per_task = {}
                for task in active:
                    current = task
                    per_task[task] = self._task_loss(task, by_task[task])
                current = None
                if cfg.combine == "alternate":
                    task = active[0]
                    total = self.spec.weights[task] * per_task[task]
                    step_names = self.model.scope_param_names(
                        ["encoder", f"heads.{task}"]
                    )
                else:
                    total = combine_losses(per_task, self.spec)
                    step_names = None
            tape.backward(total)
            self.optim.step(names=step_names)
        except NumericsError as err:
            where = f" task {current!r}," if current else ""
            raise NumericsError(
                f"aborting: non-finite value at epoch {self.epoch + 1} step "
                f"{self.step_in_epoch},{where} lr {self.optim.lr}: {err}"
            ) from err

        losses = {t: loss.item() for t, loss in per_task.items()}
        for t, v in losses.items():
            self._loss_sums[t] += v
            self._loss_counts[t] += 1
        self.step_in_epoch += 1
        return losses

    # ---- full run ---------------------------------------------------------

    def _eval_due(self) -> bool:
        return (self.epoch + 1) % self.cfg.eval_every == 0 or self.epoch + 1 == self.cfg.epochs

    def run(self) -> TrainReport:
        spe = self.stream.steps_per_epoch()
        while self.epoch < self.cfg.epochs:
            started = time.perf_counter()
            while self.step_in_epoch < spe:
                self.train_step()
            val_miou = val_pixacc = None
            if "segmentation" in self.model.heads and self._eval_due():
                result = evaluate(self.model, self.manifest, "val", self.loader,
                                  include_absent=self.cfg.miou_include_absent)
                val_miou, val_pixacc = result.miou, result.pixel_acc
            self.report.rows.append(
                EpochRow(
                    epoch=self.epoch + 1,
                    lr=self.optim.lr_at(self.epoch * spe),
                    losses={
                        t: (self._loss_sums[t] / self._loss_counts[t])
                        if self._loss_counts[t]
                        else None
                        for t in self.cfg.tasks
                    },
                    val_miou=val_miou,
                    val_pixacc=val_pixacc,
                    seconds=time.perf_counter() - started,
                )
            )
            self.epoch += 1
            self.step_in_epoch = 0
            self._loss_sums = {t: 0.0 for t in self.cfg.tasks}
            self._loss_counts = {t: 0 for t in self.cfg.tasks}
        return self.report

    # ---- persistence ------------------------------------------------------

    def save(self, path) -> None:
        extra = {"epoch": self.epoch, "step_in_epoch": self.step_in_epoch}
        for t in self.cfg.tasks:
            idx = self.cfg.tasks.index(t)
            extra[f"loss_sum_{idx}"] = self._loss_sums[t]
            extra[f"loss_count_{idx}"] = self._loss_counts[t]
        save_checkpoint(self.model, self.optim, path, cfg=self.cfg, extra=extra)

    def resume(self, path) -> None:
        meta = load_checkpoint(self.model, self.optim, path)
        self.epoch = int(meta.get("epoch", 0))
        self.step_in_epoch = int(meta.get("step_in_epoch", 0))
        for i, t in enumerate(self.cfg.tasks):
            self._loss_sums[t] = meta.get(f"loss_sum_{i}", 0.0)
            self._loss_counts[t] = int(meta.get(f"loss_count_{i}", 0))

    def warm_start(self, path) -> list:
        """Transfer matching parameters from a checkpoint of a possibly
        different run (e.g. pretext pretraining before supervised
        finetuning). Optimizer state and counters stay fresh; returns the
        names actually loaded."""
        tensors = read_container(path)
        loaded = []
        for name, p in self.model.named_parameters():
            key = f"param/{name}"
            if key in tensors and tensors[key].shape == p.data.shape:
                p.data[...] = tensors[key]
                loaded.append(name)
        for name, norm, field in self.model.named_stats():
            key = f"stat/{name}"
            if key in tensors and tensors[key].shape == getattr(norm, field).shape:
                getattr(norm, field)[...] = tensors[key]
        if not loaded:
            raise DataError(f"no parameters in {path} match the configured model")
        return loaded


def train(cfg: TrainConfig) -> TrainReport:
    """Run a full training per config; see Trainer for stepwise control."""
    return Trainer(cfg).run()
