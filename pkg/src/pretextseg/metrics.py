"""Confusion-matrix segmentation metrics.

The mIoU pipeline works on integer label arrays and goes through an
explicit category coding step: every (ground truth, prediction) pixel
pair maps to code nb_classes*gt + pred, the code histogram reshapes to
the nb_classes x nb_classes confusion matrix (rows = ground truth,
columns = prediction), and per-class IoU follows from the diagonal and
the row/column sums. ``miou_oracle`` recomputes mIoU by direct per-class
set scans and must agree exactly.

Classes absent from both masks (union 0) are excluded from the mean
rather than scored 0; ``include_absent=True`` forces the score-as-zero
convention instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError


def _check_labels(name: str, arr: np.ndarray, nb_classes: int) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"{name} must be an integer array, got dtype {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() >= nb_classes):
        raise DataError(
            f"{name} labels must lie in 0..{nb_classes - 1}, got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    return arr


def category_matrix(gt, pred, nb_classes: int) -> np.ndarray:
    """Flattened per-pixel category codes: nb_classes*gt + pred."""
    gt = _check_labels("gt", gt, nb_classes)
    pred = _check_labels("pred", pred, nb_classes)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt shape {gt.shape} != pred shape {pred.shape}")
    return (nb_classes * gt.astype(np.int64) + pred.astype(np.int64)).reshape(-1)


@dataclass
class ConfusionMatrix:
    nb_classes: int
    counts: np.ndarray  # int64 [K,K]

    @classmethod
    def empty(cls, nb_classes: int) -> "ConfusionMatrix":
        if nb_classes < 1:
            raise ValueError(f"nb_classes must be >= 1, got {nb_classes}")
        return cls(nb_classes, np.zeros((nb_classes, nb_classes), dtype=np.int64))

    def add(self, gt, pred) -> None:
        self.counts += confusion_from_categories(
            category_matrix(gt, pred, self.nb_classes), self.nb_classes
        ).counts

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.nb_classes != self.nb_classes:
            raise ValueError(
                f"cannot merge {other.nb_classes}-class matrix into "
                f"{self.nb_classes}-class matrix"
            )
        self.counts += other.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_from_categories(categ: np.ndarray, nb_classes: int) -> ConfusionMatrix:
    """Histogram category codes into the K x K confusion matrix."""
    categ = np.asarray(categ)
    if categ.size and (categ.min() < 0 or categ.max() >= nb_classes * nb_classes):
        raise ValueError(
            f"internal: category code outside 0..{nb_classes * nb_classes - 1}"
        )
    counts = np.bincount(categ.reshape(-1), minlength=nb_classes * nb_classes)
    return ConfusionMatrix(nb_classes, counts.reshape(nb_classes, nb_classes).astype(np.int64))


def iou_per_class(cm: ConfusionMatrix) -> list:
    """Per-class IoU; classes with empty union yield None (absent)."""
    diag = np.diag(cm.counts)
    union = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - diag
    out = []
    for k in range(cm.nb_classes):
        out.append(int(diag[k]) / int(union[k]) if union[k] > 0 else None)
    return out


def miou(cm: ConfusionMatrix, include_absent: bool = False) -> float:
    """Mean IoU over present classes (or all classes, scoring absent as 0)."""
    ious = iou_per_class(cm)
    if include_absent:
        values = [v if v is not None else 0.0 for v in ious]
    else:
        values = [v for v in ious if v is not None]
    if not values:
        raise DataError("all classes are absent; mIoU is undefined")
    return sum(values) / len(values)


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("empty confusion matrix; pixel accuracy is undefined")
    return int(np.trace(cm.counts)) / cm.total


def miou_oracle(gt, pred, nb_classes: int, include_absent: bool = False) -> float:
    """Brute-force mIoU by per-class set scans, no confusion matrix.

    Independent reference for the category-code path; the two must agree
    exactly on identical inputs.
    """
    gt = _check_labels("gt", gt, nb_classes)
    pred = _check_labels("pred", pred, nb_classes)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt shape {gt.shape} != pred shape {pred.shape}")
    values = []
    for k in range(nb_classes):
        inter = int(np.sum((gt == k) & (pred == k)))
        union = int(np.sum((gt == k) | (pred == k)))
        if union > 0:
            values.append(inter / union)
        elif include_absent:
            values.append(0.0)
    if not values:
        raise DataError("all classes are absent; mIoU is undefined")
    return sum(values) / len(values)


def write_iou_report(path, cm: ConfusionMatrix) -> None:
    """Per-class CSV (class_id, intersection, union, iou) plus summary rows."""
    diag = np.diag(cm.counts)
    union = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - diag
    lines = ["class_id,intersection,union,iou"]
    for k, iou in enumerate(iou_per_class(cm)):
        cell = repr(iou) if iou is not None else ""
        lines.append(f"{k},{int(diag[k])},{int(union[k])},{cell}")
    lines.append(f"miou,,,{repr(miou(cm))}")
    lines.append(f"pixel_accuracy,,,{repr(pixel_accuracy(cm))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
