"""Refinement filter laws: subset, monotonicity, idempotence, closure."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codistill.geometry import BBox
from codistill.refine import ClassSet, RefinementReport, apclr, classify_to_classset, rpdlr
from codistill.suppression import Detection, DetectionSet

K = 8


def det(cat, score=0.8, at=0.0):
    return Detection(BBox(at, at, at + 2, at + 2), cat, score)


def det_set(cats, source="teacher", scores=None):
    scores = scores or [0.8] * len(cats)
    return DetectionSet(
        tuple(det(c, s, at=2.5 * i) for i, (c, s) in enumerate(zip(cats, scores))), source=source
    )


class TestRpdlr:
    def test_keeps_matching_categories(self):
        dets = det_set([1, 1, 3])
        out, rep = rpdlr(dets, ClassSet(frozenset({1})))
        assert [d.category for d in out.items] == [1, 1]
        assert out.source == "refined"
        assert (rep.kept, rep.dropped) == (2, 1)
        assert rep.dropped_categories == (3,)

    def test_empty_report_set_drops_everything(self):
        dets = det_set([0, 2, 5])
        out, rep = rpdlr(dets, ClassSet(frozenset()))
        assert len(out) == 0
        assert rep.dropped == 3

    def test_full_universe_is_identity(self):
        dets = det_set([0, 2, 5, 7])
        out, rep = rpdlr(dets, ClassSet(frozenset(range(K))))
        assert out.items == dets.items
        assert rep.dropped == 0

    def test_order_and_scores_preserved(self):
        dets = det_set([4, 1, 4], scores=[0.3, 0.9, 0.6])
        out, _ = rpdlr(dets, ClassSet(frozenset({4})))
        assert [d.score for d in out.items] == [0.3, 0.6]

    def test_rejects_refined_input(self):
        refined = DetectionSet((), source="refined")
        with pytest.raises(ValueError):
            rpdlr(refined, ClassSet(frozenset()))

    def test_accepts_sa_nms_input(self):
        out, _ = rpdlr(det_set([2], source="sa_nms"), ClassSet(frozenset({2})))
        assert len(out) == 1


class TestApclr:
    def test_intersection_semantics(self):
        detected = det_set([2, 5, 7], source="student")
        out, rep = apclr(ClassSet(frozenset({0, 2, 5})), detected, 0.5)
        assert out.present == {2, 5}
        assert rep.dropped_categories == (0,)

    def test_no_detections_above_floor(self):
        detected = det_set([2, 5], source="student", scores=[0.3, 0.4])
        out, rep = apclr(ClassSet(frozenset({2, 5})), detected, 0.5)
        assert out.present == frozenset()
        assert rep.dropped == 2

    def test_superset_filter_is_identity(self):
        detected = det_set([0, 1, 2, 3], source="student")
        pseudo = ClassSet(frozenset({1, 3}))
        out, rep = apclr(pseudo, detected, 0.5)
        assert out.present == pseudo.present
        assert rep.dropped == 0

    def test_rejects_teacher_detections(self):
        with pytest.raises(ValueError):
            apclr(ClassSet(frozenset()), det_set([1], source="teacher"), 0.5)


class TestClassifyToClassset:
    def test_all_zero(self):
        assert classify_to_classset(np.zeros(K), 0.5).present == frozenset()

    def test_all_one(self):
        assert classify_to_classset(np.ones(K), 0.5).present == frozenset(range(K))

    def test_thresholding(self):
        out = classify_to_classset(np.array([0.9, 0.4, 0.6]), 0.5)
        assert out.present == {0, 2}

    def test_threshold_is_inclusive(self):
        assert classify_to_classset(np.array([0.5]), 0.5).present == {0}

    def test_rejects_bad_probs(self):
        with pytest.raises(ValueError):
            classify_to_classset(np.array([1.2]), 0.5)
        with pytest.raises(ValueError):
            classify_to_classset(np.array([[0.2, 0.3]]), 0.5)


cats_lists = st.lists(st.integers(0, K - 1), max_size=12)
class_sets = st.frozensets(st.integers(0, K - 1), max_size=K)


class TestFilterLaws:
    @given(cats_lists, class_sets)
    def test_rpdlr_subset_closure_accounting(self, cats, guide):
        dets = det_set(cats)
        out, rep = rpdlr(dets, ClassSet(guide))
        assert set(out.items) <= set(dets.items)
        assert all(d.category in guide for d in out.items)
        assert rep.kept + rep.dropped == len(dets)

    @given(cats_lists, class_sets, class_sets)
    def test_rpdlr_monotone_in_guide(self, cats, g1, g2):
        dets = det_set(cats)
        small, _ = rpdlr(dets, ClassSet(g1))
        large, _ = rpdlr(dets, ClassSet(g1 | g2))
        assert set(small.items) <= set(large.items)

    @given(cats_lists, class_sets)
    def test_rpdlr_idempotent(self, cats, guide):
        dets = det_set(cats)
        once, _ = rpdlr(dets, ClassSet(guide))
        again, _ = rpdlr(DetectionSet(once.items, source="teacher"), ClassSet(guide))
        assert again.items == once.items

    @given(class_sets, cats_lists)
    def test_apclr_subset_closure_accounting(self, pseudo, det_cats):
        detected = det_set(det_cats, source="student")
        out, rep = apclr(ClassSet(pseudo), detected, 0.5)
        assert out.present <= pseudo
        assert out.present <= {d.category for d in detected.items}
        assert rep.kept + rep.dropped == len(pseudo)

    @given(class_sets, cats_lists, cats_lists)
    def test_apclr_monotone_in_detections(self, pseudo, cats1, cats2):
        small, _ = apclr(ClassSet(pseudo), det_set(cats1, source="student"), 0.5)
        large, _ = apclr(ClassSet(pseudo), det_set(cats1 + cats2, source="student"), 0.5)
        assert small.present <= large.present

    @given(class_sets, cats_lists)
    def test_apclr_idempotent(self, pseudo, det_cats):
        detected = det_set(det_cats, source="student")
        once, _ = apclr(ClassSet(pseudo), detected, 0.5)
        again, _ = apclr(once, detected, 0.5)
        assert again.present == once.present


def test_refinement_report_validation():
    with pytest.raises(ValueError):
        RefinementReport(kept=1, dropped=2, dropped_categories=(1,))
    with pytest.raises(ValueError):
        RefinementReport(kept=-1, dropped=0, dropped_categories=())
