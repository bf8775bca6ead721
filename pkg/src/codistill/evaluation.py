"""Detection mAP and per-class ROC-AUC.

AP uses class-strict greedy matching (each ground-truth box matched at
most once, highest-IoU unmatched box wins) and all-point interpolation
of the precision-recall curve. mAP averages per-class AP over classes
that have at least one ground-truth instance. AUC is the rank-statistic
formulation: the probability a random positive outranks a random
negative, ties counted half.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .anchors import pairwise_iou

DEFAULT_IOU_THRESHOLDS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class MatchResult:
    """Per-prediction match flags for one class at one IoU threshold,
    in descending score order."""

    tp: np.ndarray
    matched_gt: np.ndarray
    scores: np.ndarray
    num_gt: int


@dataclass
class MetricRecord:
    """Evaluation snapshot at one generation boundary."""

    generation: int
    map_by_threshold: dict[float, float]
    per_class_ap: dict[float, list[float | None]]
    macro_auc: float
    per_class_auc: list[float | None] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "generation": self.generation,
            "map": {str(t): v for t, v in self.map_by_threshold.items()},
            "per_class_ap": {
                str(t): [None if a is None else float(a) for a in aps]
                for t, aps in self.per_class_ap.items()
            },
            "macro_auc": self.macro_auc,
            "per_class_auc": [None if a is None else float(a) for a in self.per_class_auc],
        }


# ----------------------------------------------------------------------
# Average precision.
# ----------------------------------------------------------------------


def _match_predictions(
    preds: list[tuple[int, float, np.ndarray]],
    gts: dict[int, np.ndarray],
    iou_thr: float,
) -> MatchResult:
    """Greedy matching in descending score order.

    preds: (image_id, score, box) triples for one class.
    gts: image_id -> (M, 4) ground-truth boxes of the same class.
    """
    order = sorted(
        range(len(preds)),
        key=lambda i: (-preds[i][1], preds[i][0], tuple(preds[i][2])),
    )
    used: dict[int, np.ndarray] = {img: np.zeros(len(b), bool) for img, b in gts.items()}
    tp = np.zeros(len(preds), bool)
    matched = np.full(len(preds), -1, dtype=int)
    scores = np.zeros(len(preds))
    for rank, i in enumerate(order):
        img, score, box = preds[i]
        scores[rank] = score
        gt_boxes = gts.get(img)
        if gt_boxes is None or len(gt_boxes) == 0:
            continue
        ious = pairwise_iou(box, gt_boxes)[0]
        free = ~used[img]
        if not free.any():
            continue
        ious_free = np.where(free, ious, -1.0)
        j = int(ious_free.argmax())
        if ious_free[j] >= iou_thr:
            tp[rank] = True
            matched[rank] = j
            used[img][j] = True
    num_gt = sum(len(b) for b in gts.values())
    return MatchResult(tp=tp, matched_gt=matched, scores=scores, num_gt=num_gt)


def _ap_from_matches(match: MatchResult, all_point: bool = True) -> float:
    if match.num_gt == 0:
        raise ValueError("AP is undefined for a class without ground truth")
    if len(match.tp) == 0:
        return 0.0
    tp_cum = np.cumsum(match.tp.astype(float))
    fp_cum = np.cumsum((~match.tp).astype(float))
    recall = tp_cum / match.num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    if not all_point:
        ap = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            mask = recall >= r
            ap += (precision[mask].max() if mask.any() else 0.0) / 11.0
        return float(ap)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mpre[idx]))


def average_precision(
    preds: list[tuple[int, float, np.ndarray]],
    gts: dict[int, np.ndarray],
    iou_thr: float,
    all_point: bool = True,
) -> float | None:
    """AP for one class; None when the class has no ground truth."""
    num_gt = sum(len(b) for b in gts.values())
    if num_gt == 0:
        return None
    return _ap_from_matches(_match_predictions(preds, gts, iou_thr), all_point=all_point)


def mean_ap(
    preds_by_image: dict[int, list],
    gts_by_image: dict[int, tuple[np.ndarray, np.ndarray]],
    num_categories: int,
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
    all_point: bool = True,
) -> tuple[dict[float, float], dict[float, list[float | None]]]:
    """mAP per IoU threshold plus per-class APs.

    preds_by_image: image_id -> iterable of Detection.
    gts_by_image: image_id -> (boxes (M, 4), categories (M,)).
    Classes without any ground truth are excluded from the mean.
    """
    total_gt = sum(len(b) for b, _ in gts_by_image.values())
    if total_gt == 0:
        raise ValueError("dataset has no ground-truth boxes")
    class_preds: dict[int, list[tuple[int, float, np.ndarray]]] = {c: [] for c in range(num_categories)}
    for img, dets in preds_by_image.items():
        for d in dets:
            arr = np.array(d.box.as_tuple()) if hasattr(d.box, "as_tuple") else np.asarray(d.box)
            class_preds[d.category].append((img, d.score, arr))
    class_gts: dict[int, dict[int, np.ndarray]] = {c: {} for c in range(num_categories)}
    for img, (boxes, cats) in gts_by_image.items():
        cats = np.asarray(cats, dtype=int)
        for c in range(num_categories):
            sel = np.asarray(boxes, dtype=float).reshape(-1, 4)[cats == c]
            if len(sel):
                class_gts[c][img] = sel
    maps: dict[float, float] = {}
    per_class: dict[float, list[float | None]] = {}
    for thr in iou_thresholds:
        aps = [
            average_precision(class_preds[c], class_gts[c], thr, all_point=all_point)
            for c in range(num_categories)
        ]
        valid = [a for a in aps if a is not None]
        maps[thr] = float(np.mean(valid))
        per_class[thr] = aps
    return maps, per_class


# ----------------------------------------------------------------------
# ROC-AUC.
# ----------------------------------------------------------------------


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC with midrank tie handling."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels, dtype=int).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(scores: np.ndarray, labels: np.ndarray) -> tuple[float, list[float | None]]:
    """Per-class AUC averaged over classes with both label values present.

    Single-class columns are skipped with a warning.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape or s.ndim != 2:
        raise ValueError("scores and labels must both be (N, K)")
    per_class: list[float | None] = []
    for c in range(s.shape[1]):
        try:
            per_class.append(roc_auc(s[:, c], y[:, c]))
        except ValueError:
            warnings.warn(f"class {c} has a single label value; skipped in macro AUC", stacklevel=2)
            per_class.append(None)
    valid = [a for a in per_class if a is not None]
    return (float(np.mean(valid)) if valid else float("nan")), per_class


# ----------------------------------------------------------------------
# Persistence: one CSV row per generation x threshold x class, plus a
# JSON summary. Column order: generation, threshold, class, ap, map, auc.
# ----------------------------------------------------------------------

METRICS_CSV_COLUMNS = ("generation", "threshold", "class", "ap", "map", "auc")


def metrics_to_csv(records: list[MetricRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_CSV_COLUMNS)
        for rec in records:
            for thr in sorted(rec.map_by_threshold):
                for c, ap in enumerate(rec.per_class_ap[thr]):
                    writer.writerow(
                        [
                            rec.generation,
                            thr,
                            c,
                            "" if ap is None else f"{ap:.10f}",
                            f"{rec.map_by_threshold[thr]:.10f}",
                            f"{rec.macro_auc:.10f}",
                        ]
                    )


def metrics_to_json(records: list[MetricRecord], path) -> None:
    with open(path, "w") as f:
        json.dump([r.as_dict() for r in records], f, indent=2, sort_keys=True)
