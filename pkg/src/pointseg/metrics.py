"""Confusion-matrix accumulation and segmentation metrics.

Counts accumulate dataset-wide before any averaging. Masked variants drop
every ground-truth background pixel and the background class itself, so
false positives on background ground truth stop counting against the
foreground classes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimsMismatch, EmptyMatrix, PredContainsSentinel
from .raster import UNLABELED, LabelMap, LabelSchema


class ConfusionMatrix:
    """m x m pixel counts; rows = ground truth, cols = prediction."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.ignored_pixels = 0

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DimsMismatch("class counts differ")
        self.counts += other.counts
        self.ignored_pixels += other.ignored_pixels
        return self

    def total(self) -> int:
        return int(self.counts.sum())


def accumulate(cm: ConfusionMatrix, gt: LabelMap, pred: LabelMap) -> ConfusionMatrix:
    """Add one image's pixel counts; ground-truth sentinel pixels are skipped
    and tallied as ignored."""
    if gt.dims != pred.dims:
        raise DimsMismatch(f"gt {gt.dims} != pred {pred.dims}")
    p = pred.data.reshape(-1).astype(np.int64)
    g = gt.data.reshape(-1).astype(np.int64)
    if (p == UNLABELED).any():
        raise PredContainsSentinel("prediction contains unlabeled pixels")
    if (p >= cm.num_classes).any():
        raise ValueError("prediction contains out-of-schema class ids")
    valid = g != UNLABELED
    cm.ignored_pixels += int((~valid).sum())
    g = g[valid]
    p = p[valid]
    if (g >= cm.num_classes).any():
        raise ValueError("ground truth contains out-of-schema class ids")
    idx = g * cm.num_classes + p
    cm.counts += np.bincount(idx, minlength=cm.num_classes**2).reshape(
        cm.num_classes, cm.num_classes
    )
    return cm


@dataclass(frozen=True)
class MetricReport:
    """Per-class PA/IoU for the selected mode plus all four aggregates."""

    per_class_pa: np.ndarray = field(repr=False)
    per_class_iou: np.ndarray = field(repr=False)
    class_presence: np.ndarray = field(repr=False)
    mpa: float = 0.0
    miou: float = 0.0
    masked_mpa: float = float("nan")
    masked_miou: float = float("nan")
    masked: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "masked": self.masked,
                "mPA": self.mpa,
                "mIoU": self.miou,
                "masked_mPA": self.masked_mpa,
                "masked_mIoU": self.masked_miou,
                "per_class": [
                    {"class": i, "PA": self.per_class_pa[i], "IoU": self.per_class_iou[i]}
                    for i in np.flatnonzero(self.class_presence).tolist()
                ],
            },
            indent=2,
        )


def _mode_stats(counts: np.ndarray, schema: LabelSchema, masked: bool):
    m = schema.num_classes
    work = counts.copy()
    classes = np.ones(m, dtype=bool)
    if masked:
        work[schema.background_id, :] = 0
        classes[schema.background_id] = False
    if int(work.sum()) == 0:
        raise EmptyMatrix("no evaluated pixels" + (" after masking" if masked else ""))
    tp = np.diag(work).astype(np.float64)
    fn = work.sum(axis=1) - tp
    fp = work.sum(axis=0) - tp
    denom_pa = tp + fn
    denom_iou = tp + fp + fn
    present = classes & (denom_iou > 0)
    pa = np.full(m, np.nan)
    iou = np.full(m, np.nan)
    # PA undefined (0/0) for classes with no GT pixels but some FP: report 0
    with np.errstate(invalid="ignore", divide="ignore"):
        pa[present] = np.where(denom_pa[present] > 0, tp[present] / np.maximum(denom_pa[present], 1), 0.0)
        iou[present] = tp[present] / denom_iou[present]
    return pa, iou, present, float(np.mean(pa[present])), float(np.mean(iou[present]))


def compute_metrics(cm: ConfusionMatrix, schema: LabelSchema, masked: bool = False) -> MetricReport:
    """Metrics over present classes (TP+FP+FN > 0); absent ones are excluded
    from both per-class rows and the means."""
    pa, iou, present, mpa, miou = _mode_stats(cm.counts, schema, masked)
    try:
        _, _, _, m_mpa, m_miou = _mode_stats(cm.counts, schema, True)
    except EmptyMatrix:
        m_mpa, m_miou = float("nan"), float("nan")
    return MetricReport(
        per_class_pa=pa,
        per_class_iou=iou,
        class_presence=present,
        mpa=mpa,
        miou=miou,
        masked_mpa=m_mpa,
        masked_miou=m_miou,
        masked=masked,
    )


def report_per_class(report: MetricReport, schema: LabelSchema) -> list[tuple[int, str, float, float]]:
    """CSV-ready (class id, name, PA, IoU) rows for present classes."""
    rows = []
    for i in np.flatnonzero(report.class_presence).tolist():
        rows.append((i, schema.names[i], float(report.per_class_pa[i]), float(report.per_class_iou[i])))
    return rows


def metrics_csv(report: MetricReport, schema: LabelSchema) -> str:
    """Per-class table plus a summary block."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "name", "PA", "IoU"])
    for cid, name, pa, iou in report_per_class(report, schema):
        w.writerow([cid, name, f"{pa:.6f}", f"{iou:.6f}"])
    w.writerow([])
    w.writerow(["summary", "mPA", f"{report.mpa:.6f}", ""])
    w.writerow(["summary", "mIoU", f"{report.miou:.6f}", ""])
    if not math.isnan(report.masked_mpa):
        w.writerow(["summary", "masked_mPA", f"{report.masked_mpa:.6f}", ""])
        w.writerow(["summary", "masked_mIoU", f"{report.masked_miou:.6f}", ""])
    return buf.getvalue()
