"""Box arithmetic against a pixel-rasterization oracle and algebraic laws."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codistill.geometry import BBox, area, intersection_area, iou


def raster_area(b: BBox) -> float:
    """Oracle: rasterize an integer-coordinate box on the unit grid and
    count cells."""
    cells = 0
    for x in range(int(b.x_min), int(b.x_max)):
        for y in range(int(b.y_min), int(b.y_max)):
            cells += 1
    return float(cells)


def raster_iou(a: BBox, b: BBox) -> float:
    """Oracle: per-cell membership count for integer boxes."""
    inter = 0
    union = 0
    xs = range(int(min(a.x_min, b.x_min)), int(max(a.x_max, b.x_max)))
    ys = range(int(min(a.y_min, b.y_min)), int(max(a.y_max, b.y_max)))
    for x in xs:
        for y in ys:
            in_a = a.x_min <= x < a.x_max and a.y_min <= y < a.y_max
            in_b = b.x_min <= x < b.x_max and b.y_min <= y < b.y_max
            inter += in_a and in_b
            union += in_a or in_b
    return inter / union if union else 0.0


def int_box(rng, span=20, max_side=10) -> BBox:
    x0 = int(rng.integers(0, span))
    y0 = int(rng.integers(0, span))
    return BBox(x0, y0, x0 + int(rng.integers(1, max_side)), y0 + int(rng.integers(1, max_side)))


finite_boxes = st.builds(
    lambda x0, y0, w, h: BBox(x0, y0, x0 + w, y0 + h),
    st.floats(-50, 50),
    st.floats(-50, 50),
    st.floats(0.01, 40),
    st.floats(0.01, 40),
)


class TestBBox:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            BBox(0, 0, 0, 1)
        with pytest.raises(ValueError):
            BBox(0, 0, 1, 0)
        with pytest.raises(ValueError):
            BBox(2, 0, 1, 1)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            BBox(0, 0, math.inf, 1)
        with pytest.raises(ValueError):
            BBox(math.nan, 0, 1, 1)


class TestArea:
    def test_unit_square(self):
        assert area(BBox(0, 0, 1, 1)) == 1.0

    def test_rectangle(self):
        assert area(BBox(0, 0, 2, 3)) == 6.0

    def test_matches_pixel_count_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            b = int_box(rng)
            assert area(b) == raster_area(b)


class TestIoU:
    def test_identical_boxes(self):
        b = BBox(1.5, 2.5, 4.0, 7.25)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0

    def test_one_seventh_case(self):
        # 2x2 vs 2x2 offset by (1,1): intersection 1, union 7.
        expected = raster_iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3))
        assert expected == pytest.approx(1.0 / 7.0, abs=0)
        assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == pytest.approx(expected, abs=1e-9)

    def test_matches_rasterization_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            a, b = int_box(rng), int_box(rng)
            assert iou(a, b) == pytest.approx(raster_iou(a, b), abs=1e-9)

    @given(finite_boxes, finite_boxes)
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(finite_boxes)
    def test_self_iou_is_one(self, b):
        assert iou(b, b) == 1.0

    @given(finite_boxes, finite_boxes, st.floats(-30, 30), st.floats(-30, 30))
    def test_translation_invariance(self, a, b, tx, ty):
        shifted_a = BBox(a.x_min + tx, a.y_min + ty, a.x_max + tx, a.y_max + ty)
        shifted_b = BBox(b.x_min + tx, b.y_min + ty, b.x_max + tx, b.y_max + ty)
        assert iou(shifted_a, shifted_b) == pytest.approx(iou(a, b), rel=1e-9, abs=1e-12)

    @settings(max_examples=200)
    @given(finite_boxes, finite_boxes, st.floats(0.05, 20))
    def test_scale_invariance(self, a, b, s):
        scaled_a = BBox(a.x_min * s, a.y_min * s, a.x_max * s, a.y_max * s)
        scaled_b = BBox(b.x_min * s, b.y_min * s, b.x_max * s, b.y_max * s)
        assert iou(scaled_a, scaled_b) == pytest.approx(iou(a, b), rel=1e-9, abs=1e-12)


def test_intersection_area_disjoint_is_zero():
    assert intersection_area(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0
