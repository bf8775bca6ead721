"""Greedy per-class NMS and self-adaptive NMS (SA-NMS).

SA-NMS merges the frozen teacher's pseudo detections with the current
student's confident predictions and suppresses the combined set, so a
maturing student can overrule stale or imprecise teacher boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import BBox, iou

SOURCE_TEACHER = "teacher"
SOURCE_STUDENT = "student"
SOURCE_SA_NMS = "sa_nms"
SOURCE_REFINED = "refined"
SOURCES = (SOURCE_TEACHER, SOURCE_STUDENT, SOURCE_SA_NMS, SOURCE_REFINED)


@dataclass(frozen=True)
class Detection:
    """A scored, class-labeled box."""

    box: BBox
    category: int
    score: float

    def __post_init__(self) -> None:
        if self.category < 0:
            raise ValueError(f"category must be non-negative, got {self.category}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DetectionSet:
    """Ordered detections plus their provenance."""

    items: tuple[Detection, ...] = field(default_factory=tuple)
    source: str = SOURCE_STUDENT

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}, expected one of {SOURCES}")
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def categories(self) -> frozenset[int]:
        return frozenset(d.category for d in self.items)


def _order_key(d: Detection):
    # Deterministic greedy order: score desc, then category, then coordinates.
    return (-d.score, d.category, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max)


def nms(dets: DetectionSet, iou_threshold: float) -> DetectionSet:
    """Greedy per-class NMS.

    Repeatedly keeps the highest-scoring remaining detection and removes
    same-category detections overlapping it with IoU strictly above the
    threshold. Output is a subset of the input, sorted by descending score.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    pools: dict[int, list[Detection]] = {}
    for d in sorted(dets.items, key=_order_key):
        pools.setdefault(d.category, []).append(d)
    kept: list[Detection] = []
    for cat in sorted(pools):
        pool = pools[cat]
        while pool:
            best = pool.pop(0)
            kept.append(best)
            pool = [d for d in pool if iou(d.box, best.box) <= iou_threshold]
    kept.sort(key=_order_key)
    return DetectionSet(tuple(kept), source=dets.source)


def sa_nms(
    teacher: DetectionSet,
    student: DetectionSet,
    iou_threshold: float,
    student_score_floor: float,
) -> DetectionSet:
    """Self-adaptive NMS over the union of teacher pseudo labels and
    student predictions at or above the confidence floor."""
    if teacher.source != SOURCE_TEACHER:
        raise ValueError(f"teacher set has source {teacher.source!r}")
    if student.source != SOURCE_STUDENT:
        raise ValueError(f"student set has source {student.source!r}")
    confident = tuple(d for d in student.items if d.score >= student_score_floor)
    merged = DetectionSet(teacher.items + confident, source=SOURCE_SA_NMS)
    return nms(merged, iou_threshold)
