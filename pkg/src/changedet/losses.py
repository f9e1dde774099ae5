"""Dice + cross-entropy training objective with per-scale deep supervision.

The total objective sums dice + alpha * cross-entropy over the three
auxiliary scales (subject to the deep-supervision switches) and over the
final full-resolution prediction. Ground truth is matched to each auxiliary
scale by nearest-neighbor subsampling so labels stay binary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    log_softmax_lastdim,
    matmul,
    reshape,
    softmax_lastdim,
    transpose,
)

DICE_EPS = 1.0


def weighted_total(dice_terms, ce_terms, alpha: float) -> float:
    """Scalar combination rule: sum of dice terms plus alpha times each ce term."""
    return float(sum(dice_terms) + alpha * sum(ce_terms))


def _check_mask(logits: Tensor, gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt)
    if logits.ndim != 3:
        raise ShapeError(f"expected (K, H, W) logits, got {logits.shape}")
    if gt.shape != logits.shape[1:]:
        raise ShapeError(f"mask shape {gt.shape} does not match logits {logits.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground-truth mask must contain only 0 and 1")
    return gt.astype(np.int64)


def _pixel_tokens(logits: Tensor) -> Tensor:
    k, h, w = logits.shape
    return transpose(reshape(logits, (k, h * w)))


def cross_entropy(logits: Tensor, gt: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax-probability of the true class."""
    gt = _check_mask(logits, gt)
    k = logits.shape[0]
    n = gt.size
    logp = log_softmax_lastdim(_pixel_tokens(logits))
    onehot = np.zeros((n, k))
    onehot[np.arange(n), gt.reshape(-1)] = 1.0
    return -(logp * Tensor(onehot)).sum() * (1.0 / n)


def dice_loss(logits: Tensor, gt: np.ndarray) -> Tensor:
    """Soft dice on the foreground probability channel, smoothing 1.0."""
    gt = _check_mask(logits, gt)
    k = logits.shape[0]
    probs = softmax_lastdim(_pixel_tokens(logits))
    pick_fg = np.zeros((k, 1))
    pick_fg[1, 0] = 1.0
    p = matmul(probs, Tensor(pick_fg))
    g = Tensor(gt.reshape(-1, 1).astype(np.float64))
    inter = (p * g).sum()
    denom = p.sum() + float(gt.sum())
    return 1.0 - (inter * 2.0 + DICE_EPS) * (denom + DICE_EPS).reciprocal()


def downsample_mask(gt: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor subsampling at block centers; labels stay binary."""
    if factor == 1:
        return gt
    if gt.shape[0] % factor or gt.shape[1] % factor:
        raise ShapeError(f"mask shape {gt.shape} not divisible by {factor}")
    off = factor // 2
    return gt[off::factor, off::factor]


@dataclass
class LossReport:
    """Per-term breakdown of one objective evaluation.

    ``ce`` and ``dice`` hold the contribution of each supervised output in
    order (coarse to fine, then the final map when present); switched-off
    terms appear as 0. ``total`` always equals sum(dice) + alpha * sum(ce).
    """

    total: float
    ce: list[float] = field(default_factory=list)
    dice: list[float] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    alpha: float = 0.4


def total_loss(aux_logits: list[Tensor], final_logits: Tensor | None, gt: np.ndarray,
               alpha: float = 0.4, deep_ce: bool = True,
               deep_dice: bool = True) -> tuple[Tensor, LossReport]:
    """Build the differentiable objective and its numeric breakdown."""
    gt = np.asarray(gt)
    terms: list[Tensor] = []
    report = LossReport(total=0.0, alpha=alpha)
    h = gt.shape[0]

    for logits in aux_logits:
        factor = h // logits.shape[1]
        gt_s = downsample_mask(gt, factor)
        ce_val, dice_val = 0.0, 0.0
        if deep_dice:
            d = dice_loss(logits, gt_s)
            terms.append(d)
            dice_val = d.item()
        if deep_ce:
            c = cross_entropy(logits, gt_s)
            terms.append(c * alpha)
            ce_val = c.item()
        report.labels.append(f"s{factor}")
        report.ce.append(ce_val)
        report.dice.append(dice_val)

    if final_logits is not None:
        d = dice_loss(final_logits, gt)
        c = cross_entropy(final_logits, gt)
        terms.append(d)
        terms.append(c * alpha)
        report.labels.append("final")
        report.ce.append(c.item())
        report.dice.append(d.item())

    if not terms:
        raise ShapeError("objective has no terms: no auxiliary maps and no final map")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    report.total = total.item()
    return total, report
