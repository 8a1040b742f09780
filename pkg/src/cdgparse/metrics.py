"""Segmentation metrics from an accumulated N x N confusion matrix.

Rows are ground truth, columns are predictions. Partial accumulators over
disjoint image subsets merge by matrix addition, so evaluation order never
matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import LabelMap


@dataclass
class MetricsReport:
    confusion: np.ndarray  # [N, N] int64, rows = ground truth
    pixel_acc: float
    mean_acc: float
    per_class_iou: np.ndarray  # NaN for classes absent from gt and prediction
    mean_iou: float
    fg_acc: float
    precision: float
    recall: float
    f1: float


def _pixels(x: LabelMap | np.ndarray) -> np.ndarray:
    return x.pixels if isinstance(x, LabelMap) else np.asarray(x)


class ConfusionAccumulator:
    """Streaming confusion-matrix builder over (prediction, ground truth) pairs."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: LabelMap | np.ndarray, gt: LabelMap | np.ndarray) -> None:
        p, t = _pixels(pred), _pixels(gt)
        if p.shape != t.shape:
            raise ValueError(f"prediction shape {p.shape} != ground-truth shape {t.shape}")
        n = self.num_classes
        if p.min() < 0 or p.max() >= n or t.min() < 0 or t.max() >= n:
            raise ValueError(f"class ids outside [0, {n - 1}]")
        flat = t.reshape(-1).astype(np.int64) * n + p.reshape(-1)
        self.confusion += np.bincount(flat, minlength=n * n).reshape(n, n)

    def merge(self, other: "ConfusionAccumulator") -> None:
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge accumulators with different class counts")
        self.confusion += other.confusion

    def report(self) -> MetricsReport:
        return report_from_confusion(self.confusion)


def report_from_confusion(confusion: np.ndarray) -> MetricsReport:
    conf = np.asarray(confusion, dtype=np.int64)
    n = conf.shape[0]
    total = conf.sum()
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1).astype(np.float64)
    pred_count = conf.sum(axis=0).astype(np.float64)

    pixel_acc = float(tp.sum() / total) if total else 0.0

    gt_present = gt_count > 0
    mean_acc = float((tp[gt_present] / gt_count[gt_present]).mean()) if gt_present.any() else 0.0

    # A class absent from both gt and prediction has an undefined IoU and is
    # excluded from the mean.
    present = (gt_count + pred_count) > 0
    union = gt_count + pred_count - tp
    iou = np.full(n, np.nan)
    iou[present] = tp[present] / union[present]
    mean_iou = float(iou[present].mean()) if present.any() else 0.0

    fg_total = conf[1:, :].sum()
    fg_acc = float(tp[1:].sum() / fg_total) if fg_total else 0.0

    # Foreground macro averages: per-class precision/recall over non-background
    # classes present somewhere, 0 when a class was never predicted / never
    # appears; F1 from the averaged precision and recall.
    fg_present = present.copy()
    fg_present[0] = False
    if fg_present.any():
        prec_c = np.where(pred_count[fg_present] > 0, tp[fg_present] / np.maximum(pred_count[fg_present], 1), 0.0)
        rec_c = np.where(gt_count[fg_present] > 0, tp[fg_present] / np.maximum(gt_count[fg_present], 1), 0.0)
        precision = float(prec_c.mean())
        recall = float(rec_c.mean())
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    else:
        precision = recall = f1 = 0.0

    return MetricsReport(
        confusion=conf,
        pixel_acc=pixel_acc,
        mean_acc=mean_acc,
        per_class_iou=iou,
        mean_iou=mean_iou,
        fg_acc=fg_acc,
        precision=precision,
        recall=recall,
        f1=f1,
    )


def evaluate(pred: LabelMap | np.ndarray, gt: LabelMap | np.ndarray, num_classes: int | None = None) -> MetricsReport:
    """One-shot scoring of a single prediction/ground-truth pair."""
    if num_classes is None:
        if isinstance(gt, LabelMap):
            num_classes = gt.num_classes
        elif isinstance(pred, LabelMap):
            num_classes = pred.num_classes
        else:
            raise ValueError("num_classes is required when passing raw arrays")
    acc = ConfusionAccumulator(num_classes)
    acc.update(pred, gt)
    return acc.report()
