"""Intersection-over-union evaluation via confusion-matrix counting.

Per-class IoU with an empty prediction/ground-truth union is undefined and
reported as NaN; mean IoU averages only the defined classes.
"""

import numpy as np

from .validation import DegenerateInputError, LabelError, ShapeError, check_label_range


class ConfusionMatrix:
    """C x C integer counts; counts[g, p] = pixels with ground truth g predicted p."""

    def __init__(self, class_count: int):
        if class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {class_count}")
        self.class_count = class_count
        self.counts = np.zeros((class_count, class_count), dtype=np.int64)

    def add(self, pred: np.ndarray, gt: np.ndarray, ignore_id: int = 255) -> "ConfusionMatrix":
        """Accumulate one prediction/ground-truth pair, skipping ignored pixels."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
        check_label_range(gt, self.class_count, ignore_id)
        keep = gt != ignore_id
        p, g = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
        if p.size and (p.min() < 0 or p.max() >= self.class_count):
            raise LabelError(f"prediction ids outside [0, {self.class_count})")
        flat = g * self.class_count + p
        self.counts += np.bincount(flat, minlength=self.class_count**2).reshape(
            self.class_count, self.class_count
        )
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_count != self.class_count:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN where the class appears in neither pred nor gt."""
        inter = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - np.diag(self.counts)
        out = np.full(self.class_count, np.nan)
        defined = union > 0
        out[defined] = inter[defined] / union[defined]
        return out

    def mean_iou(self) -> float:
        """Arithmetic mean of the defined per-class IoUs."""
        ious = self.per_class_iou()
        if np.isnan(ious).all():
            raise DegenerateInputError("no class has a nonempty union; mean IoU undefined")
        return float(np.nanmean(ious))


def accumulate_confusion(
    conf: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray, ignore_id: int = 255
) -> ConfusionMatrix:
    return conf.add(pred, gt, ignore_id)


def mean_iou(conf: ConfusionMatrix) -> float:
    return conf.mean_iou()


def iou(pred: np.ndarray, gt: np.ndarray, class_id: int, ignore_id: int = 255) -> float:
    """Set IoU of one class between two label maps; NaN when the union is empty."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    keep = gt != ignore_id
    p = pred[keep] == class_id
    g = gt[keep] == class_id
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return float("nan")
    return float(np.logical_and(p, g).sum() / union)


def format_iou_report(per_class: np.ndarray, class_names: list | None = None) -> str:
    """Two-column category/IoU table with a final Mean row.

    Classes with undefined IoU are omitted; values use shortest-roundtrip
    float formatting so the table can be parsed back exactly.
    """
    names = class_names or [f"class_{i}" for i in range(len(per_class))]
    if len(names) != len(per_class):
        raise ValueError("one name per class required")
    defined = [(n, v) for n, v in zip(names, per_class) if not np.isnan(v)]
    if not defined:
        raise DegenerateInputError("no class has a defined IoU")
    width = max(len(n) for n, _ in defined + [("Mean", 0.0)])
    lines = [f"{n:<{width}}  {float(v)!r}" for n, v in defined]
    mean = float(np.mean([v for _, v in defined]))
    lines.append(f"{'Mean':<{width}}  {mean!r}")
    return "\n".join(lines) + "\n"
