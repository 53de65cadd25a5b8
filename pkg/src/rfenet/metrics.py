"""Evaluation suite: mIoU, pixel accuracy, mAE, mBER, F-beta.

mBER, mAE, and F-beta follow the conventions of the glass and mirror
segmentation literature rather than any single canonical definition:
BER is reported in percent as 100*(1 - (TPR + TNR)/2) averaged over
foreground classes, mAE is the mean absolute error of the foreground
probability map against the binary foreground ground truth, and F-beta
uses beta^2 = 0.3 on the binarized foreground prediction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

DEFAULT_BETA2 = 0.3


class ConfusionMatrix:
    """Streaming n x n confusion counts; rows are ground truth, cols prediction."""

    def __init__(self, n_classes: int):
        self.n = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def accumulate(self, pred, gt):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise DataError(f"pred/gt dims disagree: {pred.shape} vs {gt.shape}")
        if pred.size and (pred.max() >= self.n or pred.min() < 0
                          or gt.max() >= self.n or gt.min() < 0):
            raise DataError(f"class ids outside [0, {self.n})")
        idx = gt.reshape(-1).astype(np.int64) * self.n + pred.reshape(-1).astype(np.int64)
        self.counts += np.bincount(idx, minlength=self.n * self.n).reshape(self.n, self.n)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.n)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ProbStats:
    """Running |p - y| sums of the foreground probability map."""

    abs_err_sum: float = 0.0
    pixel_count: int = 0

    def accumulate(self, fg_prob, fg_target):
        fg_prob = np.asarray(fg_prob, dtype=np.float64)
        fg_target = np.asarray(fg_target, dtype=np.float64)
        if fg_prob.shape != fg_target.shape:
            raise DataError(f"prob/target dims disagree: {fg_prob.shape} vs {fg_target.shape}")
        self.abs_err_sum += float(np.abs(fg_prob - fg_target).sum())
        self.pixel_count += fg_prob.size
        return self

    def merge(self, other: "ProbStats") -> "ProbStats":
        return ProbStats(self.abs_err_sum + other.abs_err_sum,
                         self.pixel_count + other.pixel_count)

    @property
    def mae(self) -> float:
        return self.abs_err_sum / self.pixel_count if self.pixel_count else 0.0


@dataclass
class MetricsReport:
    miou: float  # mean IoU over classes present in the ground truth
    miou_fg_only: float  # same, restricted to foreground classes
    acc: float
    mae: float
    mber: float
    f_beta: float
    per_class_iou: list  # None for classes absent from both pred and GT
    config_echo: dict = field(default_factory=dict)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.__dict__, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    CSV_FIELDS = ("miou", "miou_fg_only", "acc", "mae", "mber", "f_beta")

    def csv_row(self, path):
        path = Path(path)
        fresh = not path.exists()
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(self.CSV_FIELDS)
            writer.writerow([repr(getattr(self, k)) for k in self.CSV_FIELDS])


def _rate(num: float, den: float) -> float:
    """A recall-style ratio where an empty denominator means nothing to miss."""
    return num / den if den > 0 else 1.0


def compute_report(cm: ConfusionMatrix, prob_stats: ProbStats | None = None,
                   beta2: float = DEFAULT_BETA2, config_echo: dict | None = None) -> MetricsReport:
    if cm.total == 0:
        raise DataError("confusion matrix is empty")
    c = cm.counts.astype(np.float64)
    n = cm.n
    tp = np.diag(c)
    gt_count = c.sum(axis=1)
    pred_count = c.sum(axis=0)
    union = gt_count + pred_count - tp

    per_class = [float(tp[k] / union[k]) if union[k] > 0 else None for k in range(n)]
    in_gt = [k for k in range(n) if gt_count[k] > 0]
    fg_in_gt = [k for k in in_gt if k > 0]
    miou = float(np.mean([per_class[k] for k in in_gt]))
    miou_fg = float(np.mean([per_class[k] for k in fg_in_gt])) if fg_in_gt else 0.0

    acc = float(tp.sum() / cm.total)

    bers = []
    for k in fg_in_gt:
        tpr = _rate(tp[k], gt_count[k])
        tn = cm.total - gt_count[k] - pred_count[k] + tp[k]
        tnr = _rate(tn, cm.total - gt_count[k])
        bers.append(100.0 * (1.0 - 0.5 * (tpr + tnr)))
    mber = float(np.mean(bers)) if bers else 0.0

    # Binarized foreground: any glass class vs background.
    tp_fg = float(c[1:, 1:].sum())
    fp_fg = float(c[0, 1:].sum())
    fn_fg = float(c[1:, 0].sum())
    if tp_fg + fp_fg + fn_fg == 0:
        f_beta = 1.0  # nothing to find, nothing found
    else:
        precision = _rate(tp_fg, tp_fg + fp_fg)
        recall = _rate(tp_fg, tp_fg + fn_fg)
        denom = beta2 * precision + recall
        f_beta = float((1.0 + beta2) * precision * recall / denom) if denom > 0 else 0.0

    return MetricsReport(
        miou=miou,
        miou_fg_only=miou_fg,
        acc=acc,
        mae=prob_stats.mae if prob_stats is not None else 0.0,
        mber=mber,
        f_beta=f_beta,
        per_class_iou=per_class,
        config_echo=dict(config_echo or {}),
    )
