"""Seeded generator of paired image/report samples with ground truth.

Each sample is a small feature grid plus a bag-of-tokens report. An
abnormality is a box whose interior carries a category-specific channel
signature (a tent-profile bump), and whose category keywords appear in
the report unless dropped. The labeled fraction mirrors the scarcity
regime of real paired archives (~1%), split 7:1:2 into train/val/test.

Because metrics on a handful of annotated images are too coarse to rank
pipeline variants, the generator additionally reserves an annotated
evaluation pool (splits eval_val/eval_test) that is never trained on and
never counted against the labeled budget.

Noise injection corrupts the latent ground truth of the unlabeled pool
(per-sample deterministic plans): those noisy views drive oracle guides
in controlled ablations, and the same plans corrupt teacher pseudo-label
streams during semi-supervised training.
"""

from __future__ import annotations

import base64
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .seeding import rng_for

SCHEMA_VERSION = 1

SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
SPLIT_TEST = "test"
SPLIT_EVAL_VAL = "eval_val"
SPLIT_EVAL_TEST = "eval_test"
SPLIT_UNLABELED = "unlabeled"
ANNOTATED_SPLITS = (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST, SPLIT_EVAL_VAL, SPLIT_EVAL_TEST)
ALL_SPLITS = ANNOTATED_SPLITS + (SPLIT_UNLABELED,)


@dataclass(frozen=True)
class DatasetConfig:
    num_samples: int = 5000
    labeled_fraction: float = 0.01
    num_categories: int = 8
    grid_h: int = 16
    grid_w: int = 16
    grid_channels: int = 4
    signature_amplitude: float = 1.0
    amplitude_jitter: float = 0.2
    background_sigma: float = 0.35
    vocab_size: int = 200
    keywords_per_category: int = 3
    keyword_dropout: float = 0.1
    distractor_rate: float = 0.16
    max_abnormalities: int = 3
    min_box_side: float = 3.0
    max_box_side: float = 5.5
    max_box_overlap: float = 0.3
    split_train: float = 0.7
    split_val: float = 0.1
    split_test: float = 0.2
    eval_reserve: int = 180
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if abs(self.split_train + self.split_val + self.split_test - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        if self.num_categories * self.keywords_per_category > self.vocab_size:
            raise ValueError("vocabulary too small for the per-category keyword sets")
        if self.min_box_side > self.max_box_side:
            raise ValueError("min_box_side must not exceed max_box_side")
        if self.max_box_side > min(self.grid_h, self.grid_w):
            raise ValueError("boxes must fit inside the grid")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if self.eval_reserve < 0:
            raise ValueError("eval_reserve must be non-negative")

    @property
    def labeled_count(self) -> int:
        return max(1, int(round(self.num_samples * self.labeled_fraction)))

    def keyword_ids(self, category: int) -> range:
        start = category * self.keywords_per_category
        return range(start, start + self.keywords_per_category)

    def signature(self, category: int) -> np.ndarray:
        """Channel-space direction for a category.

        Adjacent categories share channel structure (two-channel mix with
        a fixed mixing angle), so they are naturally confusable the way
        look-alike finding pairs are; the sign flips halfway through the
        category range to keep all signatures distinct.
        """
        c = self.grid_channels
        sig = np.zeros(c)
        angle = 0.6
        sign = 1.0 if (category // c) % 2 == 0 else -1.0
        sig[category % c] = sign * np.cos(angle)
        sig[(category + 1) % c] = sign * np.sin(angle)
        return sig


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption rates for the unlabeled pool's latent ground truth and
    for teacher pseudo-label streams. All rates in [0, 1]; box jitter is a
    per-coordinate normal sd in cell units."""

    det_confusion: float = 0.0
    det_box_jitter: float = 0.0
    det_spurious: float = 0.0
    report_confusion: float = 0.0
    report_spurious: float = 0.0

    def __post_init__(self) -> None:
        for name, v in asdict(self).items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"noise rate {name} must be in [0, 1], got {v}")

    def any(self) -> bool:
        return any(v > 0.0 for v in asdict(self).values())


@dataclass
class PairedSample:
    """One dataset element: image grid, report token counts, and latent
    ground truth. `annotation` exposes the latent truth only on annotated
    splits; the unlabeled pool keeps it hidden from training."""

    sample_id: int
    split: str
    image: np.ndarray
    tokens: np.ndarray
    latent_boxes: np.ndarray
    latent_cats: np.ndarray
    noisy_boxes: np.ndarray | None = None
    noisy_cats: np.ndarray | None = None
    noisy_class_labels: np.ndarray | None = None

    @property
    def annotated(self) -> bool:
        return self.split in ANNOTATED_SPLITS

    @property
    def annotation(self) -> tuple[np.ndarray, np.ndarray] | None:
        if not self.annotated:
            return None
        return self.latent_boxes, self.latent_cats

    def class_vector(self, k: int) -> np.ndarray | None:
        if not self.annotated:
            return None
        return cats_to_vector(self.latent_cats, k)


def cats_to_vector(cats: np.ndarray, k: int) -> np.ndarray:
    v = np.zeros(k, dtype=np.int8)
    for c in np.asarray(cats, dtype=int).reshape(-1):
        v[c] = 1
    return v


@dataclass
class SyntheticDataset:
    config: DatasetConfig
    samples: list[PairedSample]
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def ids(self, *splits: str) -> list[int]:
        wanted = set(splits)
        return [s.sample_id for s in self.samples if s.split in wanted]

    def __getitem__(self, sample_id: int) -> PairedSample:
        s = self.samples[sample_id]
        assert s.sample_id == sample_id
        return s

    def __len__(self) -> int:
        return len(self.samples)


# ----------------------------------------------------------------------
# Generation.
# ----------------------------------------------------------------------


def _draw_boxes(rng: np.random.Generator, cfg: DatasetConfig) -> tuple[np.ndarray, np.ndarray]:
    from .anchors import pairwise_iou

    n = int(rng.integers(0, cfg.max_abnormalities + 1))
    boxes: list[np.ndarray] = []
    for _ in range(n):
        for _attempt in range(40):
            w = rng.uniform(cfg.min_box_side, cfg.max_box_side)
            h = rng.uniform(cfg.min_box_side, cfg.max_box_side)
            x0 = rng.uniform(0.0, cfg.grid_w - w)
            y0 = rng.uniform(0.0, cfg.grid_h - h)
            cand = np.array([x0, y0, x0 + w, y0 + h])
            if not boxes or pairwise_iou(cand, np.stack(boxes)).max() <= cfg.max_box_overlap:
                boxes.append(cand)
                break
    cats = rng.integers(0, cfg.num_categories, size=len(boxes))
    if boxes:
        return np.stack(boxes), cats.astype(int)
    return np.zeros((0, 4)), np.zeros(0, dtype=int)


def _render_image(
    rng: np.random.Generator, cfg: DatasetConfig, boxes: np.ndarray, cats: np.ndarray
) -> np.ndarray:
    grid = rng.normal(0.0, cfg.background_sigma, (cfg.grid_h, cfg.grid_w, cfg.grid_channels))
    xs = np.arange(cfg.grid_w) + 0.5
    ys = np.arange(cfg.grid_h) + 0.5
    for box, cat in zip(boxes, cats):
        x0, y0, x1, y1 = box
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        hw, hh = (x1 - x0) / 2.0, (y1 - y0) / 2.0
        gx = np.clip(1.0 - np.abs(xs - cx) / hw, 0.0, None)
        gy = np.clip(1.0 - np.abs(ys - cy) / hh, 0.0, None)
        amp = cfg.signature_amplitude * (1.0 + cfg.amplitude_jitter * rng.uniform(-1.0, 1.0))
        grid += amp * np.outer(gy, gx)[:, :, None] * cfg.signature(int(cat))[None, None, :]
    return grid.astype(np.float32)


def _render_report(rng: np.random.Generator, cfg: DatasetConfig, cats: np.ndarray) -> np.ndarray:
    tokens = np.zeros(cfg.vocab_size, dtype=np.int32)
    for cat in sorted(set(int(c) for c in cats)):
        if rng.random() < 1.0 - cfg.keyword_dropout:
            for kw in cfg.keyword_ids(cat):
                tokens[kw] += 1 + rng.poisson(0.3)
    if cfg.distractor_rate > 0.0:
        tokens[rng.random(cfg.vocab_size) < cfg.distractor_rate] += 1
    return tokens


def _split_assignment(cfg: DatasetConfig) -> list[str]:
    n = cfg.num_samples
    n_labeled = cfg.labeled_count
    reserve = min(cfg.eval_reserve, max(0, n - n_labeled))
    n_train = int(n_labeled * cfg.split_train)
    n_val = int(n_labeled * cfg.split_val)
    n_test = n_labeled - n_train - n_val
    r_val = reserve // 3
    r_test = reserve - r_val
    order = rng_for(cfg.seed, "splits").permutation(n)
    splits = [SPLIT_UNLABELED] * n
    cursor = 0
    for split, count in (
        (SPLIT_TRAIN, n_train),
        (SPLIT_VAL, n_val),
        (SPLIT_TEST, n_test),
        (SPLIT_EVAL_VAL, r_val),
        (SPLIT_EVAL_TEST, r_test),
    ):
        for i in order[cursor : cursor + count]:
            splits[i] = split
        cursor += count
    return splits


def generate(config: DatasetConfig) -> SyntheticDataset:
    """Deterministic dataset from the config seed.

    Per-sample streams use counter-derived seeds, so generation order is
    immaterial and the dataset is reproducible bit for bit.
    """
    splits = _split_assignment(config)
    samples: list[PairedSample] = []
    for i in range(config.num_samples):
        rng = rng_for(config.seed, "sample", i)
        boxes, cats = _draw_boxes(rng, config)
        image = _render_image(rng, config, boxes, cats)
        tokens = _render_report(rng, config, cats)
        samples.append(
            PairedSample(
                sample_id=i,
                split=splits[i],
                image=image,
                tokens=tokens,
                latent_boxes=boxes,
                latent_cats=cats,
            )
        )
    return SyntheticDataset(config=config, samples=samples)


# ----------------------------------------------------------------------
# Noise injection.
# ----------------------------------------------------------------------


def _confuse_category(cat: int, k: int, direction: int = 1) -> int:
    # Fixed cyclic confusion maps: mistakes between categories are
    # systematic (specific look-alike pairs), not uniform noise. The two
    # modalities use opposite directions because visually confusable
    # pairs and linguistically confusable pairs are unrelated.
    return int((cat + direction) % k)


def _corrupt_boxes(
    rng: np.random.Generator,
    boxes: np.ndarray,
    cats: np.ndarray,
    spec: NoiseSpec,
    cfg: DatasetConfig,
) -> tuple[np.ndarray, np.ndarray]:
    out_boxes = boxes.copy()
    out_cats = cats.copy()
    k = cfg.num_categories
    for j in range(len(out_cats)):
        if spec.det_confusion > 0.0 and rng.random() < spec.det_confusion:
            out_cats[j] = _confuse_category(int(out_cats[j]), k)
        if spec.det_box_jitter > 0.0:
            jit = rng.normal(0.0, spec.det_box_jitter, 4)
            x0, y0, x1, y1 = out_boxes[j] + jit
            x0 = float(np.clip(x0, 0.0, cfg.grid_w - 1.0))
            y0 = float(np.clip(y0, 0.0, cfg.grid_h - 1.0))
            x1 = float(np.clip(x1, x0 + 1.0, cfg.grid_w))
            y1 = float(np.clip(y1, y0 + 1.0, cfg.grid_h))
            out_boxes[j] = (x0, y0, x1, y1)
    if spec.det_spurious > 0.0 and rng.random() < spec.det_spurious:
        w = rng.uniform(cfg.min_box_side, cfg.max_box_side)
        h = rng.uniform(cfg.min_box_side, cfg.max_box_side)
        x0 = rng.uniform(0.0, cfg.grid_w - w)
        y0 = rng.uniform(0.0, cfg.grid_h - h)
        out_boxes = np.concatenate([out_boxes, [[x0, y0, x0 + w, y0 + h]]])
        out_cats = np.concatenate([out_cats, [rng.integers(0, k)]])
    return out_boxes, out_cats.astype(int)


def _corrupt_class_set(
    rng: np.random.Generator, present: frozenset[int], spec: NoiseSpec, k: int
) -> frozenset[int]:
    out = set()
    for c in sorted(present):
        if spec.report_confusion > 0.0 and rng.random() < spec.report_confusion:
            out.add(_confuse_category(c, k, direction=-1))
        else:
            out.add(c)
    if spec.report_spurious > 0.0 and rng.random() < spec.report_spurious:
        absent = sorted(set(range(k)) - out)
        if absent:
            out.add(absent[int(rng.integers(0, len(absent)))])
    return frozenset(out)


def inject_noise(dataset: SyntheticDataset, noise_spec: NoiseSpec) -> SyntheticDataset:
    """Attach corrupted latent-ground-truth views to the unlabeled pool.

    The detection view (boxes + categories) and the report-class view are
    corrupted independently; annotated splits are never touched. Plans are
    keyed by (dataset seed, sample id), so repeated injection is stable.
    """
    cfg = dataset.config
    out: list[PairedSample] = []
    for s in dataset.samples:
        if s.split != SPLIT_UNLABELED or not noise_spec.any():
            out.append(replace(s, noisy_boxes=None, noisy_cats=None, noisy_class_labels=None))
            continue
        det_rng = rng_for(cfg.seed, "noise-det", s.sample_id)
        boxes, cats = _corrupt_boxes(det_rng, s.latent_boxes, s.latent_cats, noise_spec, cfg)
        rep_rng = rng_for(cfg.seed, "noise-report", s.sample_id)
        present = frozenset(int(c) for c in s.latent_cats)
        classes = _corrupt_class_set(rep_rng, present, noise_spec, cfg.num_categories)
        out.append(
            replace(
                s,
                noisy_boxes=boxes,
                noisy_cats=cats,
                noisy_class_labels=cats_to_vector(np.array(sorted(classes)), cfg.num_categories),
            )
        )
    return SyntheticDataset(config=cfg, samples=out, noise=noise_spec)


# Stream corruption used by the training pipeline: applies the same plan
# machinery to teacher pseudo labels, keyed per sample id so visitation
# order cannot change results. Zero-rate specs draw nothing at all.


def corrupt_pseudo_detections(items, sample_id: int, spec: NoiseSpec, cfg: DatasetConfig):
    """Corrupt a list of Detection pseudo labels for one unlabeled sample."""
    from .geometry import BBox
    from .suppression import Detection

    if not spec.any():
        return list(items)
    rng = rng_for(cfg.seed, "pseudo-det", sample_id)
    k = cfg.num_categories
    out = []
    for d in items:
        cat = d.category
        box = d.box
        if spec.det_confusion > 0.0 and rng.random() < spec.det_confusion:
            cat = _confuse_category(cat, k)
        if spec.det_box_jitter > 0.0:
            jit = rng.normal(0.0, spec.det_box_jitter, 4)
            x0 = float(np.clip(box.x_min + jit[0], 0.0, cfg.grid_w - 1.0))
            y0 = float(np.clip(box.y_min + jit[1], 0.0, cfg.grid_h - 1.0))
            x1 = float(np.clip(box.x_max + jit[2], x0 + 0.5, cfg.grid_w))
            y1 = float(np.clip(box.y_max + jit[3], y0 + 0.5, cfg.grid_h))
            box = BBox(x0, y0, x1, y1)
        out.append(Detection(box, cat, d.score))
    if spec.det_spurious > 0.0 and rng.random() < spec.det_spurious:
        w = rng.uniform(cfg.min_box_side, cfg.max_box_side)
        h = rng.uniform(cfg.min_box_side, cfg.max_box_side)
        x0 = rng.uniform(0.0, cfg.grid_w - w)
        y0 = rng.uniform(0.0, cfg.grid_h - h)
        out.append(
            Detection(BBox(x0, y0, x0 + w, y0 + h), int(rng.integers(0, k)), 0.9)
        )
    return out


def corrupt_pseudo_classes(
    present: frozenset[int], sample_id: int, spec: NoiseSpec, cfg: DatasetConfig
) -> frozenset[int]:
    """Corrupt a report pseudo-class set for one unlabeled sample."""
    if not spec.any():
        return present
    rng = rng_for(cfg.seed, "pseudo-report", sample_id)
    return _corrupt_class_set(rng, present, spec, cfg.num_categories)


# ----------------------------------------------------------------------
# Serialization: line-delimited JSON, one sample per line, versioned
# header line first. Grids are base64-encoded little-endian float32 so
# files round-trip bit for bit.
# ----------------------------------------------------------------------


def _encode_grid(image: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(image, dtype="<f4").tobytes()).decode("ascii")


def _decode_grid(blob: str, shape: tuple[int, int, int]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype="<f4").reshape(shape).copy()


def _sample_record(s: PairedSample) -> dict:
    rec = {
        "id": s.sample_id,
        "split": s.split,
        "grid": _encode_grid(s.image),
        "tokens": {str(i): int(c) for i, c in enumerate(s.tokens) if c},
        "latent_boxes": [[float(v) for v in row] for row in s.latent_boxes],
        "latent_cats": [int(c) for c in s.latent_cats],
    }
    if s.noisy_boxes is not None:
        rec["noisy_boxes"] = [[float(v) for v in row] for row in s.noisy_boxes]
        rec["noisy_cats"] = [int(c) for c in s.noisy_cats]
        rec["noisy_classes"] = [int(v) for v in s.noisy_class_labels]
    return rec


def dataset_to_bytes(dataset: SyntheticDataset) -> bytes:
    buf = io.StringIO()
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "codistill-dataset",
        "config": asdict(dataset.config),
        "noise": asdict(dataset.noise),
        "num_samples": len(dataset.samples),
    }
    buf.write(json.dumps(header, sort_keys=True) + "\n")
    for s in dataset.samples:
        buf.write(json.dumps(_sample_record(s), sort_keys=True) + "\n")
    return buf.getvalue().encode("utf-8")


def save_dataset(dataset: SyntheticDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(dataset))


def load_dataset(path) -> SyntheticDataset:
    with open(path, "r", encoding="utf-8") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: corrupt dataset header: {e}") from e
        if header.get("kind") != "codistill-dataset":
            raise ValueError(f"{path}: not a codistill dataset file")
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(
                f"{path}: unsupported dataset schema version {header.get('schema_version')!r}, "
                f"expected {SCHEMA_VERSION}"
            )
        config = DatasetConfig(**header["config"])
        noise = NoiseSpec(**header["noise"])
        shape = (config.grid_h, config.grid_w, config.grid_channels)
        samples = []
        for line in f:
            rec = json.loads(line)
            tokens = np.zeros(config.vocab_size, dtype=np.int32)
            for idx, count in rec["tokens"].items():
                tokens[int(idx)] = count
            s = PairedSample(
                sample_id=rec["id"],
                split=rec["split"],
                image=_decode_grid(rec["grid"], shape),
                tokens=tokens,
                latent_boxes=np.array(rec["latent_boxes"], dtype=float).reshape(-1, 4),
                latent_cats=np.array(rec["latent_cats"], dtype=int),
            )
            if "noisy_boxes" in rec:
                s.noisy_boxes = np.array(rec["noisy_boxes"], dtype=float).reshape(-1, 4)
                s.noisy_cats = np.array(rec["noisy_cats"], dtype=int)
                s.noisy_class_labels = np.array(rec["noisy_classes"], dtype=np.int8)
            samples.append(s)
    if len(samples) != header["num_samples"]:
        raise ValueError(f"{path}: expected {header['num_samples']} samples, found {len(samples)}")
    return SyntheticDataset(config=config, samples=samples, noise=noise)
