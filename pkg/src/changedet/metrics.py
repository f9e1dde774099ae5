"""Pixel-level evaluation: confusion counts and the derived ratio metrics.

Dataset-level scores aggregate confusion counts over every patch first and
take the ratios once at the end, never averaging per-image metrics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def add(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass
class Metrics:
    precision: float
    recall: float
    iou: float
    f1: float
    degenerate: bool = False


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact integer confusion counts between two binary masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    for name, mask in (("prediction", pred), ("ground truth", gt)):
        if not np.isin(mask, (0, 1)).all():
            raise ValueError(f"{name} mask must contain only 0 and 1")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
    )


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    """Precision, recall, IoU, and F1; undefined ratios become 0 with a flag."""
    degenerate = counts.tp + counts.fp == 0 or counts.tp + counts.fn == 0
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    union = counts.tp + counts.fp + counts.fn
    iou = counts.tp / union if union else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(precision, recall, iou, f1, degenerate)


CSV_FIELDS = ["dataset", "split", "precision", "recall", "iou", "f1",
              "tp", "fp", "fn", "tn"]


def write_metrics_csv(path: str | Path, dataset: str, split: str,
                      counts: ConfusionCounts) -> Metrics:
    m = compute_metrics(counts)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        writer.writerow([dataset, split,
                         f"{m.precision:.6f}", f"{m.recall:.6f}",
                         f"{m.iou:.6f}", f"{m.f1:.6f}",
                         counts.tp, counts.fp, counts.fn, counts.tn])
    return m
