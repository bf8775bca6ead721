"""Loss functions for the two distillation objectives.

The report objective is per-class binary cross-entropy averaged over
classes (the classifier has independent sigmoid heads, so a multi-label
formulation is the only sensible reading of "cross-entropy" here). The
detection objective pairs focal classification loss with smooth-L1 box
regression over matched anchors. Each objective splits into a supervised
part over annotated samples and an unsupervised part over pseudo-labeled
ones; both parts are mean-normalized by their own item counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .anchors import encode_offsets, match_anchors

# Probability clip applied before every logarithm.
PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossValue:
    """A loss with its supervised/unsupervised decomposition."""

    total: float
    supervised_part: float
    unsupervised_part: float
    term_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.supervised_part < 0.0 or self.unsupervised_part < 0.0:
            raise ValueError("loss parts must be non-negative")
        expected = self.supervised_part + self.unsupervised_part
        tol = 1e-12 * max(1.0, abs(expected))
        if abs(self.total - expected) > tol:
            raise ValueError("total must equal supervised + unsupervised parts")


def _loss_value(sup: float, unsup: float, counts: dict[str, int]) -> LossValue:
    return LossValue(
        total=sup + unsup,
        supervised_part=sup,
        unsupervised_part=unsup,
        term_counts=counts,
    )


def clip_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def multilabel_ce(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over classes of binary cross-entropy."""
    p = np.asarray(probs, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"probs and targets must be equal-length vectors, got {p.shape} vs {t.shape}")
    pc = clip_probs(p)
    return float(-np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))


def focal_loss(p: float, t: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Focal loss for one class probability against a binary target.

    With p_t = p if t=1 else 1-p and alpha_t defined likewise, the loss is
    -alpha_t * (1 - p_t)^gamma * ln(p_t). gamma=0, alpha=0.5 recovers half
    the binary cross-entropy.
    """
    if t not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {t}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    pc = min(max(float(p), PROB_EPS), 1.0 - PROB_EPS)
    pt = pc if t == 1 else 1.0 - pc
    at = alpha if t == 1 else 1.0 - alpha
    return -at * (1.0 - pt) ** gamma * math.log(pt)


def smooth_l1(pred: np.ndarray, target: np.ndarray, beta: float) -> float:
    """Smooth-L1 summed over components: quadratic inside |d| < beta,
    linear outside, continuous with matching slope at the junction."""
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    if np.asarray(pred).shape != np.asarray(target).shape:
        raise ValueError("pred and target must have equal shapes")
    ad = np.abs(d)
    return float(np.sum(np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)))


# ----------------------------------------------------------------------
# Vectorized forms plus gradients w.r.t. logits / raw predictions. These
# back the hand-derived parameter gradients of the linear models.
# ----------------------------------------------------------------------


def binary_ce_terms(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    pc = clip_probs(np.asarray(probs, dtype=float))
    t = np.asarray(targets, dtype=float)
    return -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))


def focal_terms(probs: np.ndarray, targets: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    pc = clip_probs(np.asarray(probs, dtype=float))
    t = np.asarray(targets, dtype=float)
    pt = np.where(t == 1.0, pc, 1.0 - pc)
    at = np.where(t == 1.0, alpha, 1.0 - alpha)
    return -at * (1.0 - pt) ** gamma * np.log(pt)


def focal_grad_logits(probs: np.ndarray, targets: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    """d focal / d logit where probs = sigmoid(logits)."""
    pc = clip_probs(np.asarray(probs, dtype=float))
    t = np.asarray(targets, dtype=float)
    pt = np.where(t == 1.0, pc, 1.0 - pc)
    at = np.where(t == 1.0, alpha, 1.0 - alpha)
    one_m = np.maximum(1.0 - pt, PROB_EPS)
    d_pt = -at * one_m**gamma / pt
    if gamma > 0.0:
        d_pt = d_pt + at * gamma * one_m ** (gamma - 1.0) * np.log(pt)
    sign = np.where(t == 1.0, 1.0, -1.0)
    return d_pt * sign * pc * (1.0 - pc)


def smooth_l1_grad(diff: np.ndarray, beta: float) -> np.ndarray:
    """d smooth_l1 / d pred for residuals diff = pred - target."""
    d = np.asarray(diff, dtype=float)
    return np.where(np.abs(d) < beta, d / beta, np.sign(d))


# ----------------------------------------------------------------------
# Batch compositions.
# ----------------------------------------------------------------------


def report_loss(
    probs: np.ndarray,
    targets: np.ndarray,
    labeled: np.ndarray,
    unsup_weight: float = 1.0,
) -> LossValue:
    """Report objective over a mixed batch.

    `probs` and `targets` are (B, K); `labeled` marks rows carrying real
    labels, the rest carry (refined) pseudo labels. Each part is the mean
    of per-item multilabel CE over its own rows.
    """
    p = np.asarray(probs, dtype=float)
    t = np.asarray(targets, dtype=float)
    lab = np.asarray(labeled, dtype=bool)
    if p.ndim != 2 or p.shape != t.shape or lab.shape != (p.shape[0],):
        raise ValueError("probs/targets must be (B, K) with a length-B labeled mask")
    if p.shape[0] == 0:
        raise ValueError("batch must contain at least one item")
    per_item = binary_ce_terms(p, t).mean(axis=1)
    n_lab = int(lab.sum())
    n_unlab = int((~lab).sum())
    sup = float(per_item[lab].mean()) if n_lab else 0.0
    unsup = unsup_weight * float(per_item[~lab].mean()) if n_unlab else 0.0
    return _loss_value(sup, unsup, {"labeled": n_lab, "unlabeled": n_unlab})


@dataclass(frozen=True)
class DetectionTarget:
    """Ground-truth or pseudo boxes for one image: (N, 4) corners + categories."""

    boxes: np.ndarray
    categories: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.boxes, dtype=float).reshape(-1, 4)
        c = np.asarray(self.categories, dtype=int).reshape(-1)
        if b.shape[0] != c.shape[0]:
            raise ValueError("boxes and categories must have equal length")
        object.__setattr__(self, "boxes", b)
        object.__setattr__(self, "categories", c)

    def __len__(self) -> int:
        return self.boxes.shape[0]


@dataclass(frozen=True)
class DetectionLossConfig:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0 / 9.0
    match_pos_iou: float = 0.5
    match_neg_iou: float = 0.4
    unsup_weight: float = 1.0


def detection_sample_loss(
    cls_probs: np.ndarray,
    reg_pred: np.ndarray,
    target: DetectionTarget,
    anchor_boxes: np.ndarray,
    cfg: DetectionLossConfig,
) -> tuple[float, float, int]:
    """(classification, regression, n_pos) for one image.

    Anchors with IoU >= match_pos_iou against some target are positive and
    take that target's class and offsets; anchors below match_neg_iou are
    background; the band in between is ignored. Both terms are normalized
    by max(1, n_pos).
    """
    n_anchors, n_classes = cls_probs.shape
    assigned, pos, ignore = match_anchors(
        anchor_boxes, target.boxes, cfg.match_pos_iou, cfg.match_neg_iou
    )
    valid = ~ignore
    cls_targets = np.zeros((n_anchors, n_classes))
    if pos.any():
        cls_targets[pos, target.categories[assigned[pos]]] = 1.0
    n_pos = int(pos.sum())
    norm = max(1, n_pos)
    cls_loss = float(
        focal_terms(cls_probs[valid], cls_targets[valid], cfg.focal_alpha, cfg.focal_gamma).sum()
    ) / norm
    reg_loss = 0.0
    if n_pos:
        enc = encode_offsets(anchor_boxes[pos], target.boxes[assigned[pos]])
        reg_loss = smooth_l1(reg_pred[pos], enc, cfg.smooth_l1_beta) / norm
    return cls_loss, reg_loss, n_pos


def detection_loss(
    outputs: list[tuple[np.ndarray, np.ndarray]],
    targets: list[DetectionTarget],
    labeled: np.ndarray,
    anchor_boxes: np.ndarray,
    cfg: DetectionLossConfig,
) -> LossValue:
    """Detection objective over a mixed batch.

    `outputs[i]` is (cls_probs (A, K), reg_pred (A, 4)) for sample i.
    An unlabeled sample whose refined pseudo set is empty contributes zero
    (no labels, no terms); a labeled sample with no annotations still pays
    background classification loss.
    """
    lab = np.asarray(labeled, dtype=bool)
    if len(outputs) != len(targets) or lab.shape != (len(outputs),):
        raise ValueError("outputs, targets and labeled mask must align")
    if len(outputs) == 0:
        raise ValueError("batch must contain at least one item")
    sums = {True: 0.0, False: 0.0}
    counts = {True: 0, False: 0}
    for (cls_probs, reg_pred), target, is_lab in zip(outputs, targets, lab):
        counts[bool(is_lab)] += 1
        if not is_lab and len(target) == 0:
            continue
        cls_loss, reg_loss, _ = detection_sample_loss(cls_probs, reg_pred, target, anchor_boxes, cfg)
        sums[bool(is_lab)] += cls_loss + reg_loss
    sup = sums[True] / counts[True] if counts[True] else 0.0
    unsup = cfg.unsup_weight * sums[False] / counts[False] if counts[False] else 0.0
    return _loss_value(sup, unsup, {"labeled": counts[True], "unlabeled": counts[False]})
