"""Accuracy and IoU metrics for classification and segmentation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class MetricReport:
    task: str
    overall_accuracy: float
    avg_class_accuracy: float
    miou: float
    class_names: list = field(default_factory=list)
    recall: list = field(default_factory=list)  # per class, NaN when the class has no samples
    iou: list = field(default_factory=list)  # per class, NaN when never labelled nor predicted
    epoch: int = -1
    seconds: float = 0.0

    def to_dict(self):
        d = asdict(self)
        for key in ("recall", "iou"):
            d[key] = [None if (v is None or math.isnan(v)) else v for v in d[key]]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("recall", "iou"):
            d[key] = [math.nan if v is None else v for v in d.get(key, [])]
        return cls(**d)

    def table(self):
        lines = [f"{'class':<24} {'recall':>8} {'IoU':>8}"]
        for i, (r, u) in enumerate(zip(self.recall, self.iou)):
            name = self.class_names[i] if i < len(self.class_names) else str(i)
            lines.append(f"{name:<24} {_pct(r):>8} {_pct(u):>8}")
        lines.append(f"overall accuracy      {self.overall_accuracy:.4f}")
        lines.append(f"average class accuracy {self.avg_class_accuracy:.4f}")
        lines.append(f"mIoU                  {self.miou:.4f}")
        return "\n".join(lines) + "\n"


def _pct(v):
    return "-" if v is None or math.isnan(v) else f"{v:.4f}"


def confusion_matrix(pred, labels, num_classes):
    pred = np.asarray(pred).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    return np.bincount(labels * num_classes + pred, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )


def per_class_iou(conf):
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - np.diag(conf)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), np.nan)


def part_miou(pred, labels, categories, category_parts):
    """Mean over shapes of the mean part IoU within each shape's category.

    A part absent from both prediction and ground truth scores IoU 1.
    """
    scores = []
    for p, l, cat in zip(pred, labels, categories):
        ious = []
        for part in category_parts[cat]:
            inter = np.sum((p == part) & (l == part))
            union = np.sum((p == part) | (l == part))
            ious.append(1.0 if union == 0 else inter / union)
        scores.append(np.mean(ious))
    return float(np.mean(scores))


def metrics(pred, labels, task, num_classes, categories=None, category_parts=None, class_names=None):
    """Compute a :class:`MetricReport` from predicted and true label arrays.

    Classification takes (S,) arrays. Segmentation takes (S, N) arrays; the
    part-segmentation mIoU additionally needs the category of every shape and
    the part ids of every category.
    """
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.size == 0:
        raise DataError("metrics: empty input")
    if pred.shape != labels.shape:
        raise DataError(f"metrics: prediction shape {pred.shape} != label shape {labels.shape}")
    for name, arr in (("label", labels), ("prediction", pred)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"metrics: {name} outside [0, {num_classes})")
    conf = confusion_matrix(pred, labels, num_classes)
    support = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, np.diag(conf) / np.maximum(support, 1), np.nan)
    iou = per_class_iou(conf)
    overall = float(np.trace(conf) / conf.sum())
    avg_class = float(np.nanmean(recall))
    if task == "part_seg" and categories is not None and category_parts:
        miou = part_miou(pred, labels, categories, category_parts)
    else:
        miou = float(np.nanmean(iou)) if np.any(~np.isnan(iou)) else math.nan
    return MetricReport(
        task=task,
        overall_accuracy=overall,
        avg_class_accuracy=avg_class,
        miou=miou,
        class_names=list(class_names or []),
        recall=[float(v) for v in recall],
        iou=[float(v) for v in iou],
    )
