"""Axis-aligned bounding-box arithmetic.

Boxes use continuous corner coordinates: width is x_max - x_min with no
"+1" pixel convention. Degenerate boxes are rejected at construction so
every downstream overlap computation sees strictly positive areas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with strictly positive extent."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {self!r}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"box must have positive width and height, got "
                f"({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def area(b: BBox) -> float:
    """Box area, (x_max - x_min) * (y_max - y_min)."""
    return b.width * b.height


def intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area of two boxes; 0 when disjoint."""
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union, in [0, 1]. Symmetric; 0 for disjoint boxes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)
