"""Synthetic shape datasets, manifests, and labeled/unlabeled batch sampling.

A dataset directory holds ``images/*.ppm``, ``masks/*.pgm``, and a
``manifest.json`` describing the split. Train entries come in two
disjoint pools: labeled (mask path present) and unlabeled (mask path
null, even though a mask file may exist on disk); validation entries
always keep their masks. Training code reaches masks only through the
manifest, so unlabeled masks are structurally unreadable.

Synthetic images place colored geometric shapes (rectangle, disk,
triangle) on a noisy gray background; the mask labels each pixel with
the class of the topmost shape, background as class 0. Class identity
is carried by a consistent (if noisy) color and shape kind, which makes
the segmentation task learnable by a small network.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .pretext import PretextParams, PretextSample, make_sample, make_segmentation

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

# seed-stream tags so every random decision has its own derived generator
_STREAM_IMAGE = 1
_STREAM_SPLIT = 2
_STREAM_BATCH = 3
_STREAM_ORDER = 4
_STREAM_TRANSFORM = 5


@dataclass
class ManifestEntry:
    image: str
    mask: str | None
    split: str  # "train" | "val"


@dataclass
class DatasetManifest:
    nb_classes: int
    image_size: tuple[int, int]
    labeled_fraction: float
    entries: list[ManifestEntry]
    root: Path
    version: int = MANIFEST_VERSION

    def train_entries(self):
        return [e for e in self.entries if e.split == "train"]

    def val_entries(self):
        return [e for e in self.entries if e.split == "val"]

    def labeled_train(self):
        return [e for e in self.train_entries() if e.mask is not None]

    def unlabeled_train(self):
        return [e for e in self.train_entries() if e.mask is None]

    def save(self) -> Path:
        doc = {
            "version": self.version,
            "nb_classes": self.nb_classes,
            "image_size": list(self.image_size),
            "labeled_fraction": self.labeled_fraction,
            "entries": [
                {"image": e.image, "mask": e.mask, "split": e.split}
                for e in self.entries
            ],
        }
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(doc, indent=1))
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise DataError(f"dataset manifest not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise FormatError(f"manifest {path} is not valid JSON: {err}") from err
        if doc.get("version") != MANIFEST_VERSION:
            raise FormatError(
                f"manifest version {doc.get('version')!r} unsupported, "
                f"expected {MANIFEST_VERSION}"
            )
        root = path.parent
        entries = [
            ManifestEntry(image=e["image"], mask=e.get("mask"), split=e["split"])
            for e in doc["entries"]
        ]
        for e in entries:
            if e.split not in ("train", "val"):
                raise FormatError(f"unknown split {e.split!r} in manifest")
            if e.mask is not None and not (root / e.mask).exists():
                raise DataError(f"mask file missing for labeled entry: {e.mask}")
        return cls(
            nb_classes=int(doc["nb_classes"]),
            image_size=tuple(doc["image_size"]),
            labeled_fraction=float(doc["labeled_fraction"]),
            entries=entries,
            root=root,
        )


class ImageLoader:
    """Caching reader for manifest entries."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._images: dict[str, np.ndarray] = {}
        self._masks: dict[str, np.ndarray] = {}

    def image(self, entry: ManifestEntry) -> np.ndarray:
        if entry.image not in self._images:
            img = read_ppm(self.manifest.root / entry.image)
            if img.shape[1:] != self.manifest.image_size:
                raise DataError(
                    f"{entry.image} decodes to {img.shape[1:]}, manifest says "
                    f"{self.manifest.image_size}"
                )
            self._images[entry.image] = img
        return self._images[entry.image]

    def mask(self, entry: ManifestEntry) -> np.ndarray:
        if entry.mask is None:
            raise DataError(f"entry {entry.image} has no mask in the manifest")
        if entry.mask not in self._masks:
            mask = read_pgm(self.manifest.root / entry.mask)
            if mask.shape != self.manifest.image_size:
                raise DataError(
                    f"{entry.mask} decodes to {mask.shape}, manifest says "
                    f"{self.manifest.image_size}"
                )
            self._masks[entry.mask] = mask
        return self._masks[entry.mask]


# ---- synthetic data --------------------------------------------------------

_SHAPE_KINDS = ("rectangle", "disk", "triangle")


def _class_color(cls: int, nb_classes: int) -> np.ndarray:
    hue = 0.83 * (cls - 1) / max(1, nb_classes - 2)
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.9))


def _rasterize(placement: dict, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    kind = placement["kind"]
    if kind == "rectangle":
        t, l, hh, ww = placement["top"], placement["left"], placement["height"], placement["width"]
        return (yy >= t) & (yy < t + hh) & (xx >= l) & (xx < l + ww)
    if kind == "disk":
        cy, cx, r = placement["cy"], placement["cx"], placement["r"]
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    v0, v1, v2 = (np.asarray(placement[k], dtype=np.float64) for k in ("v0", "v1", "v2"))

    def edge(a, b):
        return (b[1] - a[1]) * (yy - a[0]) - (b[0] - a[0]) * (xx - a[1])

    e0, e1, e2 = edge(v0, v1), edge(v1, v2), edge(v2, v0)
    return ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))


def synthesize_image(rng, nb_classes: int, size: tuple[int, int]):
    """One random image/mask pair plus the placement log that produced it."""
    h, w = size
    base = rng.uniform(0.12, 0.3) + rng.uniform(-0.04, 0.04, 3)
    img = np.clip(base, 0.05, 0.4)[:, None, None] * np.ones((3, h, w))
    mask = np.zeros((h, w), dtype=np.int64)
    placements = []
    for _ in range(int(rng.integers(2, 5))):
        cls = int(rng.integers(1, nb_classes))
        kind = _SHAPE_KINDS[(cls - 1) % len(_SHAPE_KINDS)]
        placement = {"kind": kind, "cls": cls}
        if kind == "rectangle":
            hh = int(rng.integers(h // 4, h // 2 + 1))
            ww = int(rng.integers(w // 4, w // 2 + 1))
            placement.update(
                top=int(rng.integers(0, h - hh + 1)),
                left=int(rng.integers(0, w - ww + 1)),
                height=hh,
                width=ww,
            )
        elif kind == "disk":
            r = int(rng.integers(max(2, h // 8), h // 4 + 1))
            placement.update(
                cy=int(rng.integers(r, h - r + 1)),
                cx=int(rng.integers(r, w - r + 1)),
                r=r,
            )
        else:
            s = int(rng.integers(h // 3, h // 2 + 1))
            top = int(rng.integers(0, h - s + 1))
            left = int(rng.integers(0, w - s + 1))
            jitter = rng.integers(-s // 6, s // 6 + 1, (3, 2))
            v0 = (top + int(jitter[0, 0]) % (s // 3 + 1), left + s // 2 + int(jitter[0, 1]))
            v1 = (top + s - 1 - int(jitter[1, 0]) % (s // 3 + 1), left + int(jitter[1, 1]) % (s // 3 + 1))
            v2 = (top + s - 1 - int(jitter[2, 0]) % (s // 3 + 1), left + s - 1 - int(jitter[2, 1]) % (s // 3 + 1))
            placement.update(v0=v0, v1=v1, v2=v2)
        color = np.clip(
            _class_color(cls, nb_classes) + rng.normal(0.0, 0.04, 3), 0.05, 1.0
        )
        placement["color"] = color.tolist()
        region = _rasterize(placement, h, w)
        img[:, region] = color[:, None]
        mask[region] = cls
        placements.append(placement)
    img = np.clip(img + rng.normal(0.0, 0.02, img.shape), 0.0, 1.0)
    return img, mask, placements


def generate_synthetic(
    out_dir,
    n: int,
    nb_classes: int,
    size: tuple[int, int],
    seed: int,
    labeled_fraction: float = 0.1,
    val_fraction: float = 0.2,
) -> DatasetManifest:
    """Write n image/mask pairs plus a manifest; deterministic per seed."""
    if n < 2:
        raise ValueError(f"need at least 2 images, got {n}")
    if nb_classes < 2:
        raise ValueError(f"need at least 2 classes, got {nb_classes}")
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0,1], got {labeled_fraction}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0,1), got {val_fraction}")
    root = Path(out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DataError(f"cannot create dataset directory {root}: {err}") from err

    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), _STREAM_IMAGE, i]))
        img, mask, _ = synthesize_image(rng, nb_classes, size)
        write_ppm(root / f"images/{i:04d}.ppm", img)
        write_pgm(root / f"masks/{i:04d}.pgm", mask)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _STREAM_SPLIT]))
    order = rng.permutation(n)
    n_val = max(1, round(val_fraction * n))
    val_ids = set(order[:n_val].tolist())
    train_ids = [int(i) for i in order[n_val:]]
    n_labeled = max(1, round(labeled_fraction * len(train_ids)))
    labeled_ids = set(train_ids[:n_labeled])

    entries = []
    for i in range(n):
        with_mask = i in val_ids or i in labeled_ids
        entries.append(
            ManifestEntry(
                image=f"images/{i:04d}.ppm",
                mask=f"masks/{i:04d}.pgm" if with_mask else None,
                split="val" if i in val_ids else "train",
            )
        )
    manifest = DatasetManifest(
        nb_classes=nb_classes,
        image_size=tuple(size),
        labeled_fraction=n_labeled / len(train_ids),
        entries=entries,
        root=root,
    )
    manifest.save()
    return manifest


# ---- batching --------------------------------------------------------------


@dataclass
class Batch:
    labeled: list[PretextSample] = field(default_factory=list)
    unlabeled: dict[str, list[PretextSample]] = field(default_factory=dict)


def _choose(rng, pool_size: int, count: int) -> list[int]:
    if count == 0:
        return []
    replace = pool_size < count
    return [int(i) for i in rng.choice(pool_size, size=count, replace=replace)]


def _build_batch(manifest, pretext_tasks, params, loader, labeled, unlabeled, rng) -> Batch:
    batch = Batch()
    for entry in labeled:
        batch.labeled.append(
            make_segmentation(loader.image(entry), loader.mask(entry), manifest.nb_classes)
        )
    for task in pretext_tasks:
        batch.unlabeled[task] = [
            make_sample(task, loader.image(entry), params, rng) for entry in unlabeled
        ]
    return batch


def sample_batch(
    manifest: DatasetManifest,
    cfg,
    rng,
    *,
    params: PretextParams | None = None,
    loader: ImageLoader | None = None,
) -> Batch:
    """Draw one random batch: labeled segmentation pairs plus every active
    pretext task applied to each drawn unlabeled image.

    Pools smaller than the batch size are drawn with replacement.
    """
    params = params if params is not None else cfg.pretext_params()
    loader = loader if loader is not None else ImageLoader(manifest)
    b_l = cfg.batch_labeled if "segmentation" in cfg.tasks else 0
    b_u = cfg.batch_unlabeled
    pretext_tasks = tuple(t for t in cfg.tasks if t != "segmentation")
    if not pretext_tasks:
        b_u = 0

    labeled_pool = manifest.labeled_train()
    unlabeled_pool = manifest.unlabeled_train()
    if b_l > 0 and not labeled_pool:
        raise ConfigError("batch_labeled > 0 but the dataset has no labeled train entries")
    if b_u > 0 and not unlabeled_pool:
        raise ConfigError("batch_unlabeled > 0 but the dataset has no unlabeled train entries")

    labeled = [labeled_pool[i] for i in _choose(rng, len(labeled_pool), b_l)]
    unlabeled = [unlabeled_pool[i] for i in _choose(rng, len(unlabeled_pool), b_u)]
    return _build_batch(manifest, pretext_tasks, params, loader, labeled, unlabeled, rng)


class BatchStream:
    """Deterministic epoch-wise batch source.

    Batches are a pure function of (seed, epoch, step): index orders are
    reshuffled per pool cycle from seeds derived off (seed, epoch,
    cycle), and transform randomness derives from (seed, epoch, step).
    Training can therefore resume from a bare (epoch, step) pair with no
    generator state to persist.
    """

    def __init__(self, manifest: DatasetManifest, cfg, params: PretextParams,
                 loader: ImageLoader | None = None):
        self.manifest = manifest
        self.cfg = cfg
        self.params = params
        self.loader = loader if loader is not None else ImageLoader(manifest)
        self.seed = int(cfg.seed)
        self.pretext_tasks = tuple(t for t in cfg.tasks if t != "segmentation")
        self.b_l = cfg.batch_labeled if "segmentation" in cfg.tasks else 0
        self.b_u = cfg.batch_unlabeled if self.pretext_tasks else 0
        self.labeled_pool = manifest.labeled_train()
        self.unlabeled_pool = manifest.unlabeled_train()
        if self.b_l > 0 and not self.labeled_pool:
            raise ConfigError("batch_labeled > 0 but the dataset has no labeled train entries")
        if self.b_u > 0 and not self.unlabeled_pool:
            raise ConfigError(
                "batch_unlabeled > 0 but the dataset has no unlabeled train entries"
            )
        if self.b_l + self.b_u < 1:
            raise ConfigError("batch is empty for the configured tasks")
        self._orders: dict[tuple, np.ndarray] = {}

    def steps_per_epoch(self) -> int:
        """Cover each active pool at least once per epoch, and consume at
        least one train-split worth of samples."""
        if self.cfg.steps_per_epoch:
            return self.cfg.steps_per_epoch
        needs = [1]
        if self.b_l:
            needs.append(-(-len(self.labeled_pool) // self.b_l))
        if self.b_u:
            needs.append(-(-len(self.unlabeled_pool) // self.b_u))
        total = len(self.manifest.train_entries())
        needs.append(-(-total // (self.b_l + self.b_u)))
        return max(needs)

    def _order(self, tag: int, epoch: int, cycle: int, pool_size: int) -> np.ndarray:
        key = (tag, epoch, cycle)
        if key not in self._orders:
            if len(self._orders) > 64:
                self._orders.clear()
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, _STREAM_ORDER, tag, epoch, cycle])
            )
            self._orders[key] = rng.permutation(pool_size)
        return self._orders[key]

    def _slice(self, tag: int, pool_size: int, count: int, epoch: int, step: int):
        picked = []
        for j in range(step * count, (step + 1) * count):
            cycle, pos = divmod(j, pool_size)
            picked.append(int(self._order(tag, epoch, cycle, pool_size)[pos]))
        return picked

    def batch_at(self, epoch: int, step: int) -> Batch:
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, _STREAM_TRANSFORM, epoch, step])
        )
        if self.cfg.sample_with_replacement:
            draw = np.random.default_rng(
                np.random.SeedSequence([self.seed, _STREAM_BATCH, epoch, step])
            )
            labeled = [self.labeled_pool[i] for i in _choose(draw, len(self.labeled_pool), self.b_l)]
            unlabeled = [
                self.unlabeled_pool[i] for i in _choose(draw, len(self.unlabeled_pool), self.b_u)
            ]
        else:
            labeled = [
                self.labeled_pool[i]
                for i in self._slice(0, len(self.labeled_pool), self.b_l, epoch, step)
            ]
            unlabeled = [
                self.unlabeled_pool[i]
                for i in self._slice(1, len(self.unlabeled_pool), self.b_u, epoch, step)
            ]
        return _build_batch(
            self.manifest, self.pretext_tasks, self.params, self.loader,
            labeled, unlabeled, rng,
        )
