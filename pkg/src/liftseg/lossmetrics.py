"""Training objectives with analytic gradients, plus the generalized
referring-segmentation evaluation protocol (zero / single / multi target,
with and without distractors).

Conventions: IoU of two empty masks is 1.0, which makes zero-target
records score 1 exactly when the prediction is empty and 0 otherwise.
Means use math.fsum so evaluation is invariant to record order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyInputError, ShapeError, UndefinedLossError

CATEGORIES = ("ZT", "ST", "MT")


@dataclass(frozen=True)
class EvalRecord:
    """One evaluated sample: prediction, ground truth, and its category."""

    sample_id: str
    prediction: np.ndarray
    ground_truth: np.ndarray
    category: str
    has_distractor: bool

    def __post_init__(self):
        pred = np.asarray(self.prediction).astype(np.uint8)
        gt = np.asarray(self.ground_truth).astype(np.uint8)
        if pred.shape != gt.shape or pred.ndim != 1:
            raise ShapeError(
                f"masks must be equal-length vectors, got {pred.shape}, {gt.shape}")
        if self.category not in CATEGORIES:
            raise ConfigError(f"category must be one of {CATEGORIES}")
        if (gt.sum() == 0) != (self.category == "ZT"):
            raise ConfigError("category ZT exactly when the ground truth is empty")
        pred.flags.writeable = False
        gt.flags.writeable = False
        object.__setattr__(self, "prediction", pred)
        object.__setattr__(self, "ground_truth", gt)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy in the stable log-sum-exp form.

    Returns (loss, gradient w.r.t. logits); the gradient is
    (sigmoid(logit) - target) / n.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape or logits.ndim != 1:
        raise ShapeError(f"shape mismatch: {logits.shape} vs {targets.shape}")
    n = logits.size
    per = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    grad = (_sigmoid(logits) - targets) / n
    return float(per.mean()), grad


def dice_loss(probs: np.ndarray, targets: np.ndarray,
              smooth: float = 1.0) -> tuple[float, np.ndarray]:
    """Soft Dice loss 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)."""
    if smooth <= 0.0:
        raise ConfigError(f"smooth must be positive, got {smooth}")
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape or probs.ndim != 1:
        raise ShapeError(f"shape mismatch: {probs.shape} vs {targets.shape}")
    numer = 2.0 * float(probs @ targets) + smooth
    denom = float(probs.sum() + targets.sum()) + smooth
    loss = 1.0 - numer / denom
    grad = -(2.0 * targets * denom - numer) / (denom * denom)
    return loss, grad


def confidence_loss(pred_conf: np.ndarray,
                    actual_iou: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error between predicted confidence and realized IoU."""
    pred_conf = np.asarray(pred_conf, dtype=np.float64)
    actual_iou = np.asarray(actual_iou, dtype=np.float64)
    if pred_conf.shape != actual_iou.shape or pred_conf.ndim != 1:
        raise ShapeError(f"shape mismatch: {pred_conf.shape} vs {actual_iou.shape}")
    diff = pred_conf - actual_iou
    return float((diff * diff).mean()), 2.0 * diff / diff.size


def contrastive_alignment(query_embeds: np.ndarray, text_pooled: np.ndarray,
                          positives: np.ndarray, temperature: float = 0.07):
    """Temperature-scaled softmax over cosine similarities.

    The loss is the mean negative log-probability of the positive queries
    under the softmax of cos(query, text) / temperature.  Returns
    (loss, grad w.r.t. query_embeds, grad w.r.t. text_pooled).
    """
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    q = np.asarray(query_embeds, dtype=np.float64)
    t = np.asarray(text_pooled, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if q.ndim != 2 or t.shape != (q.shape[1],):
        raise ShapeError(f"expected (m, D) queries and (D,) text, got {q.shape}, {t.shape}")
    if positives.shape != (q.shape[0],):
        raise ShapeError("positives must flag one entry per query")
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise UndefinedLossError("contrastive loss needs at least one positive")
    qn = np.linalg.norm(q, axis=1)
    tn = np.linalg.norm(t)
    cos = (q @ t) / (qn * tn)
    scaled = cos / temperature
    shifted = scaled - scaled.max()
    expd = np.exp(shifted)
    total = expd.sum()
    p = expd / total
    log_p = shifted - math.log(total)
    loss = -float(log_p[positives].sum()) / n_pos
    # d loss / d scaled_j = p_j - [j positive] / n_pos
    g_scaled = p - positives.astype(np.float64) / n_pos
    g_cos = g_scaled / temperature
    # cosine gradients: d cos_i / d q_i = t/(|q||t|) - cos_i * q_i/|q|^2
    grad_q = (g_cos[:, None]
              * (t[None, :] / (qn[:, None] * tn) - cos[:, None] * q / (qn ** 2)[:, None]))
    # d cos_i / d t = q_i/(|q_i||t|) - cos_i * t/|t|^2
    grad_t = (g_cos[:, None]
              * (q / (qn[:, None] * tn) - cos[:, None] * t[None, :] / (tn * tn))).sum(axis=0)
    return loss, grad_q, grad_t


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; both empty gives 1.0."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def _subset_metrics(ious: list[float], thresholds) -> dict:
    n = len(ious)
    return {
        "count": n,
        "miou": math.fsum(ious) / n,
        "acc": {f"{k:g}": sum(1 for x in ious if x >= k) / n for k in thresholds},
    }


def evaluate(records: list[EvalRecord], thresholds=(0.25, 0.5)) -> dict:
    """Aggregate mIoU and Acc@k, with ZT/ST/MT and distractor breakdowns.

    ZT and ST splits are additionally reported with and without
    distractors.  Per-record IoU follows the empty-empty = 1 convention,
    so a zero-target record scores 1 exactly when its prediction is empty.
    """
    if not records:
        raise EmptyInputError("evaluate needs at least one record")
    thresholds = tuple(float(k) for k in thresholds)
    ious = [iou(r.prediction, r.ground_truth) for r in records]
    report = _subset_metrics(ious, thresholds)
    by_category = {}
    by_distractor = {}
    for cat in CATEGORIES:
        sel = [x for x, r in zip(ious, records) if r.category == cat]
        if sel:
            by_category[cat] = _subset_metrics(sel, thresholds)
        if cat in ("ZT", "ST"):
            split = {}
            for label, flag in (("with", True), ("without", False)):
                sub = [x for x, r in zip(ious, records)
                       if r.category == cat and r.has_distractor is flag]
                if sub:
                    split[label] = _subset_metrics(sub, thresholds)
            if split:
                by_distractor[cat] = split
    report["by_category"] = by_category
    report["by_distractor"] = by_distractor
    return report
