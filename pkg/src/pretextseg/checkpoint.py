"""Versioned binary checkpoint container.

Layout: magic ``PXL1``, then a sequence of named tensors until EOF.
Each tensor is: u32 name length, UTF-8 name, u32 rank, rank u64 dims,
then the row-major float64 payload, all little-endian.

A checkpoint stores parameters (``param/``), normalization running
statistics (``stat/``), optimizer velocities (``vel/``), resume counters
(``meta/``), and enough numeric build info (``build/``) to reconstruct
the model topology without the original config file. Integers ride in
float64 slots, which is exact below 2**53.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import TrainConfig
from .errors import DataError, FormatError
from .model import NORM_KINDS, Model, build_model
from .pretext import TASKS

MAGIC = b"PXL1"
_MAX_RANK = 16


def write_container(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def read_container(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    pos = 4
    out: dict[str, np.ndarray] = {}

    def take(count: int, what: str) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=len(data))
        chunk = data[pos : pos + count]
        pos += count
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        if rank > _MAX_RANK:
            raise FormatError(f"implausible tensor rank {rank} for {name!r}", offset=pos - 4)
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        count = 1
        for d in dims:
            count *= d
        payload = take(8 * count, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    return out


def _build_info(cfg: TrainConfig) -> dict[str, np.ndarray]:
    return {
        "build/tasks": np.array([TASKS.index(t) for t in cfg.tasks], dtype=np.float64),
        "build/norm": np.array([NORM_KINDS.index(cfg.norm)], dtype=np.float64),
        "build/groups": np.array([cfg.groups], dtype=np.float64),
        "build/encoder_channels": np.array(cfg.encoder_channels, dtype=np.float64),
        "build/nb_classes": np.array([cfg.nb_classes], dtype=np.float64),
        "build/color_bins": np.array([cfg.color_bins], dtype=np.float64),
        "build/jigsaw_grid": np.array([cfg.jigsaw_grid], dtype=np.float64),
        "build/jigsaw_perms": np.array([cfg.jigsaw_perms], dtype=np.float64),
        "build/switch_shared": np.array([float(cfg.switch_shared)], dtype=np.float64),
    }


def config_from_build(tensors: dict[str, np.ndarray]) -> TrainConfig:
    """Reconstruct the model-defining config fields from build info."""
    try:
        return TrainConfig(
            tasks=tuple(TASKS[int(i)] for i in tensors["build/tasks"]),
            norm=NORM_KINDS[int(tensors["build/norm"][0])],
            groups=int(tensors["build/groups"][0]),
            encoder_channels=tuple(int(c) for c in tensors["build/encoder_channels"]),
            nb_classes=int(tensors["build/nb_classes"][0]),
            color_bins=int(tensors["build/color_bins"][0]),
            jigsaw_grid=int(tensors["build/jigsaw_grid"][0]),
            jigsaw_perms=int(tensors["build/jigsaw_perms"][0]),
            switch_shared=bool(tensors["build/switch_shared"][0]),
        )
    except (KeyError, IndexError) as err:
        raise FormatError(f"checkpoint lacks build info: {err}") from err


def save_checkpoint(model: Model, optim, path, cfg: TrainConfig | None = None,
                    extra: dict[str, float] | None = None) -> None:
    """Serialize model + optimizer (+ resume counters) to one container."""
    tensors: dict[str, np.ndarray] = {}
    if cfg is not None:
        tensors.update(_build_info(cfg))
    for name, p in model.named_parameters():
        tensors[f"param/{name}"] = p.data
    for name, norm, field in model.named_stats():
        tensors[f"stat/{name}"] = getattr(norm, field)
    if optim is not None:
        for name, v in optim.velocity.items():
            tensors[f"vel/{name}"] = v
        tensors["meta/step_count"] = np.array([optim.step_count], dtype=np.float64)
    for key, value in (extra or {}).items():
        tensors[f"meta/{key}"] = np.array([value], dtype=np.float64)
    write_container(path, tensors)


def load_checkpoint(model: Model, optim, path) -> dict[str, float]:
    """Restore parameters, stats, and velocities in place; return meta counters.

    Every stored tensor must land on a same-shaped slot in the given
    model/optimizer, so training resumes bit-exactly.
    """
    tensors = read_container(path)

    def pull(key: str, slot: np.ndarray, kind: str):
        if key not in tensors:
            raise DataError(f"checkpoint is missing {kind} {key!r}")
        arr = tensors[key]
        if arr.shape != slot.shape:
            raise DataError(
                f"checkpoint {kind} {key!r} has shape {arr.shape}, model expects {slot.shape}"
            )
        slot[...] = arr

    for name, p in model.named_parameters():
        pull(f"param/{name}", p.data, "parameter")
    for name, norm, field in model.named_stats():
        pull(f"stat/{name}", getattr(norm, field), "statistic")
    if optim is not None:
        for name, v in optim.velocity.items():
            pull(f"vel/{name}", v, "velocity")
        if "meta/step_count" in tensors:
            optim.step_count = int(tensors["meta/step_count"][0])
    return {
        key[len("meta/") :]: float(arr[0])
        for key, arr in tensors.items()
        if key.startswith("meta/")
    }


def load_model(path) -> tuple[Model, TrainConfig]:
    """Rebuild a model purely from a checkpoint (for evaluation)."""
    tensors = read_container(path)
    cfg = config_from_build(tensors)
    model = build_model(cfg)
    for name, p in model.named_parameters():
        key = f"param/{name}"
        if key not in tensors:
            raise DataError(f"checkpoint is missing parameter {key!r}")
        if tensors[key].shape != p.data.shape:
            raise DataError(
                f"checkpoint parameter {key!r} has shape {tensors[key].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data[...] = tensors[key]
    for name, norm, field in model.named_stats():
        key = f"stat/{name}"
        if key in tensors:
            getattr(norm, field)[...] = tensors[key]
    return model, cfg
