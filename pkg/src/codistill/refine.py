"""Cross-modal pseudo-label refinement.

Two monotone filters connect the modalities:

* rpdlr keeps only pseudo detections whose category the paired report
  classifier also asserts (report-guided detection label refinement).
* apclr keeps only pseudo report classes that the paired image detector
  actually finds (abnormality-guided classification label refinement).

Both return an accounting record so ablations can audit what was dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .suppression import SOURCE_REFINED, SOURCE_SA_NMS, SOURCE_STUDENT, SOURCE_TEACHER, DetectionSet


@dataclass(frozen=True)
class ClassSet:
    """Set of category ids asserted present."""

    present: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "present", frozenset(int(c) for c in self.present))
        if any(c < 0 for c in self.present):
            raise ValueError("category ids must be non-negative")

    def __contains__(self, c: int) -> bool:
        return c in self.present

    def __len__(self) -> int:
        return len(self.present)


@dataclass(frozen=True)
class RefinementReport:
    """Bookkeeping for one refinement call: kept + dropped = input size."""

    kept: int
    dropped: int
    dropped_categories: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.kept < 0 or self.dropped < 0:
            raise ValueError("counts must be non-negative")
        if len(self.dropped_categories) != self.dropped:
            raise ValueError("dropped_categories must list one entry per dropped item")


def rpdlr(pseudo_dets: DetectionSet, report_classes: ClassSet) -> tuple[DetectionSet, RefinementReport]:
    """Keep pseudo detections whose category is report-asserted.

    Order and scores are preserved; the output carries source "refined".
    """
    if pseudo_dets.source not in (SOURCE_TEACHER, SOURCE_SA_NMS):
        raise ValueError(
            f"rpdlr expects teacher or sa_nms pseudo labels, got source {pseudo_dets.source!r}"
        )
    kept = tuple(d for d in pseudo_dets.items if d.category in report_classes)
    dropped = tuple(d.category for d in pseudo_dets.items if d.category not in report_classes)
    report = RefinementReport(kept=len(kept), dropped=len(dropped), dropped_categories=dropped)
    return DetectionSet(kept, source=SOURCE_REFINED), report


def apclr(
    pseudo_classes: ClassSet,
    detected: DetectionSet,
    det_score_floor: float,
) -> tuple[ClassSet, RefinementReport]:
    """Keep pseudo report classes that are also detected in the paired image
    with score at or above the floor."""
    if detected.source != SOURCE_STUDENT:
        raise ValueError(f"apclr expects student detections, got source {detected.source!r}")
    visible = frozenset(d.category for d in detected.items if d.score >= det_score_floor)
    kept = frozenset(c for c in pseudo_classes.present if c in visible)
    dropped = tuple(sorted(pseudo_classes.present - kept))
    report = RefinementReport(kept=len(kept), dropped=len(dropped), dropped_categories=dropped)
    return ClassSet(kept), report


def classify_to_classset(probs: np.ndarray, class_threshold: float) -> ClassSet:
    """Binarize classifier probabilities at the threshold."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"expected a 1-d probability vector, got shape {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return ClassSet(frozenset(int(c) for c in np.flatnonzero(p >= class_threshold)))
