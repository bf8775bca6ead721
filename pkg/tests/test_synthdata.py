"""Dataset generator: determinism, split arithmetic, label consistency,
noise injection statistics, and serialization round-trips."""

import hashlib

import numpy as np
import pytest

from codistill.anchors import pairwise_iou
from codistill.synthdata import (
    ANNOTATED_SPLITS,
    SPLIT_TRAIN,
    SPLIT_UNLABELED,
    DatasetConfig,
    NoiseSpec,
    cats_to_vector,
    corrupt_pseudo_classes,
    corrupt_pseudo_detections,
    dataset_to_bytes,
    generate,
    inject_noise,
    load_dataset,
    save_dataset,
)


def tiny_config(**overrides):
    base = dict(
        num_samples=200,
        labeled_fraction=0.05,
        grid_h=10,
        grid_w=10,
        grid_channels=2,
        vocab_size=40,
        eval_reserve=30,
        max_box_side=4.5,
        seed=0,
    )
    base.update(overrides)
    return DatasetConfig(**base)


class TestConfig:
    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            tiny_config(labeled_fraction=0.0)
        with pytest.raises(ValueError):
            tiny_config(split_train=0.5)  # ratios no longer sum to 1
        with pytest.raises(ValueError):
            tiny_config(vocab_size=10)  # keywords don't fit
        with pytest.raises(ValueError):
            tiny_config(max_box_side=50.0)

    def test_noise_spec_bounds(self):
        with pytest.raises(ValueError):
            NoiseSpec(det_confusion=1.5)
        assert not NoiseSpec().any()
        assert NoiseSpec(det_confusion=0.1).any()


class TestGenerate:
    def test_same_seed_byte_identical(self):
        a = dataset_to_bytes(generate(tiny_config()))
        b = dataset_to_bytes(generate(tiny_config()))
        assert hashlib.sha256(a).hexdigest() == hashlib.sha256(b).hexdigest()

    def test_different_seed_differs(self):
        a = dataset_to_bytes(generate(tiny_config()))
        b = dataset_to_bytes(generate(tiny_config(seed=1)))
        assert a != b

    def test_labeled_count_and_split_arithmetic(self):
        # 1000 samples at 1% -> 10 labeled, split 7/1/2.
        cfg = DatasetConfig(num_samples=1000, labeled_fraction=0.01, seed=3)
        ds = generate(cfg)
        assert cfg.labeled_count == 10
        assert len(ds.ids(SPLIT_TRAIN)) == 7
        assert len(ds.ids("val")) == 1
        assert len(ds.ids("test")) == 2

    def test_eval_reserve_sizes(self):
        ds = generate(tiny_config())
        assert len(ds.ids("eval_val")) == 10
        assert len(ds.ids("eval_test")) == 20

    def test_splits_disjoint_and_exhaustive(self):
        ds = generate(tiny_config())
        all_ids = []
        for split in ANNOTATED_SPLITS + (SPLIT_UNLABELED,):
            all_ids.extend(ds.ids(split))
        assert sorted(all_ids) == list(range(len(ds)))

    def test_class_labels_derive_from_annotation(self):
        ds = generate(tiny_config())
        k = ds.config.num_categories
        for i in ds.ids(*ANNOTATED_SPLITS):
            s = ds[i]
            boxes, cats = s.annotation
            np.testing.assert_array_equal(s.class_vector(k), cats_to_vector(cats, k))

    def test_unlabeled_annotation_hidden(self):
        ds = generate(tiny_config())
        for i in ds.ids(SPLIT_UNLABELED)[:20]:
            assert ds[i].annotation is None
            assert ds[i].class_vector(ds.config.num_categories) is None
            assert len(ds[i].latent_boxes) >= 0  # latent truth retained internally

    def test_boxes_inside_grid_and_overlap_bounded(self):
        cfg = tiny_config()
        ds = generate(cfg)
        for s in ds.samples:
            for x0, y0, x1, y1 in s.latent_boxes:
                assert 0 <= x0 < x1 <= cfg.grid_w
                assert 0 <= y0 < y1 <= cfg.grid_h
                assert x1 - x0 >= cfg.min_box_side - 1e-9
            if len(s.latent_boxes) > 1:
                m = pairwise_iou(s.latent_boxes, s.latent_boxes)
                np.fill_diagonal(m, 0.0)
                assert m.max() <= cfg.max_box_overlap + 1e-9

    def test_noiseless_reports_decode_exactly(self):
        cfg = tiny_config(keyword_dropout=0.0, distractor_rate=0.0)
        ds = generate(cfg)
        for s in ds.samples:
            present = set(int(c) for c in s.latent_cats)
            decoded = {
                c
                for c in range(cfg.num_categories)
                if any(s.tokens[kw] > 0 for kw in cfg.keyword_ids(c))
            }
            assert decoded == present

    def test_keyword_dropout_frequency(self):
        # With dropout d and no distractors, the fraction of present
        # categories whose keywords appear converges to 1 - d.
        cfg = tiny_config(num_samples=3000, keyword_dropout=0.25, distractor_rate=0.0, seed=5)
        ds = generate(cfg)
        present = kept = 0
        for s in ds.samples:
            for c in set(int(c) for c in s.latent_cats):
                present += 1
                kept += any(s.tokens[kw] > 0 for kw in cfg.keyword_ids(c))
        rate = kept / present
        sigma = (0.25 * 0.75 / present) ** 0.5
        assert abs(rate - 0.75) < 3 * sigma + 1e-9


class TestInjectNoise:
    def test_zero_rates_leave_dataset_unchanged(self):
        ds = generate(tiny_config())
        out = inject_noise(ds, NoiseSpec())
        assert dataset_to_bytes(out) == dataset_to_bytes(ds)

    def test_confusion_rate_one_remaps_every_category(self):
        ds = generate(tiny_config())
        out = inject_noise(ds, NoiseSpec(det_confusion=1.0))
        for s in out.samples:
            if s.split != SPLIT_UNLABELED:
                assert s.noisy_cats is None
                continue
            for orig, noisy in zip(s.latent_cats, s.noisy_cats):
                assert noisy != orig

    def test_annotated_splits_never_corrupted(self):
        ds = generate(tiny_config())
        out = inject_noise(ds, NoiseSpec(det_confusion=1.0, det_spurious=1.0, report_confusion=1.0))
        for s in out.samples:
            if s.split != SPLIT_UNLABELED:
                assert s.noisy_boxes is None and s.noisy_class_labels is None

    def test_injection_is_deterministic(self):
        ds = generate(tiny_config())
        a = dataset_to_bytes(inject_noise(ds, NoiseSpec(det_confusion=0.4, det_box_jitter=0.5)))
        b = dataset_to_bytes(inject_noise(ds, NoiseSpec(det_confusion=0.4, det_box_jitter=0.5)))
        assert a == b

    def test_corruption_frequency_within_binomial_bounds(self):
        # Monte-Carlo check over ~10k unlabeled samples.
        cfg = tiny_config(num_samples=10_000, labeled_fraction=0.001, eval_reserve=0, seed=9)
        ds = generate(cfg)
        rate = 0.3
        out = inject_noise(ds, NoiseSpec(det_confusion=rate, det_spurious=rate))
        confused = boxes = 0
        spurious = samples = 0
        for s in out.samples:
            if s.split != SPLIT_UNLABELED:
                continue
            samples += 1
            spurious += len(s.noisy_cats) > len(s.latent_cats)
            for orig, noisy in zip(s.latent_cats, s.noisy_cats[: len(s.latent_cats)]):
                boxes += 1
                confused += noisy != orig
        for observed, n in ((confused, boxes), (spurious, samples)):
            sigma = (rate * (1 - rate) / n) ** 0.5
            assert abs(observed / n - rate) < 2 * sigma + 0.005

    def test_report_view_confusion(self):
        cfg = tiny_config(seed=2)
        ds = generate(cfg)
        out = inject_noise(ds, NoiseSpec(report_confusion=1.0))
        k = cfg.num_categories
        for s in out.samples:
            if s.split != SPLIT_UNLABELED or len(s.latent_cats) == 0:
                continue
            present = set(int(c) for c in s.latent_cats)
            noisy = {c for c in range(k) if s.noisy_class_labels[c]}
            assert noisy == {(c - 1) % k for c in present}


class TestStreamCorruption:
    def test_zero_noise_is_identity_without_rng(self):
        from codistill.geometry import BBox
        from codistill.suppression import Detection

        cfg = tiny_config()
        items = [Detection(BBox(1, 1, 4, 4), 2, 0.8)]
        out = corrupt_pseudo_detections(items, 7, NoiseSpec(), cfg)
        assert out == items
        assert corrupt_pseudo_classes(frozenset({1, 2}), 7, NoiseSpec(), cfg) == frozenset({1, 2})

    def test_corruption_keyed_by_sample_id(self):
        from codistill.geometry import BBox
        from codistill.suppression import Detection

        cfg = tiny_config()
        spec = NoiseSpec(det_confusion=0.5, det_box_jitter=0.3)
        items = [Detection(BBox(1, 1, 4, 4), c, 0.8) for c in range(4)]
        a = corrupt_pseudo_detections(items, 7, spec, cfg)
        b = corrupt_pseudo_detections(items, 7, spec, cfg)
        assert a == b
        c = corrupt_pseudo_detections(items, 8, spec, cfg)
        assert a != c


class TestSerialization:
    def test_roundtrip_preserves_everything(self, tmp_path):
        ds = inject_noise(generate(tiny_config()), NoiseSpec(det_confusion=0.3))
        path = tmp_path / "data.jsonl"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert dataset_to_bytes(loaded) == dataset_to_bytes(ds)
        assert loaded.config == ds.config
        assert loaded.noise == ds.noise
        s0, l0 = ds.samples[17], loaded.samples[17]
        np.testing.assert_array_equal(s0.image, l0.image)
        np.testing.assert_array_equal(s0.tokens, l0.tokens)

    def test_rerun_same_seed_identical_file_digest(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(generate(tiny_config()), p1)
        save_dataset(generate(tiny_config()), p2)
        assert hashlib.sha256(p1.read_bytes()).hexdigest() == hashlib.sha256(p2.read_bytes()).hexdigest()

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"kind": "something-else"}\n')
        with pytest.raises(ValueError, match="not a codistill dataset"):
            load_dataset(path)

    def test_wrong_schema_version_rejected(self, tmp_path):
        ds = generate(tiny_config(num_samples=20, eval_reserve=0))
        blob = dataset_to_bytes(ds).decode()
        header, rest = blob.split("\n", 1)
        header = header.replace('"schema_version": 1', '"schema_version": 99')
        path = tmp_path / "v99.jsonl"
        path.write_text(header + "\n" + rest)
        with pytest.raises(ValueError, match="schema version"):
            load_dataset(path)
