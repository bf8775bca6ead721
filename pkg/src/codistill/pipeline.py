"""Distillation training loops and the generational co-evolution loop.

One generation trains the report student first (its pseudo classification
labels optionally pruned by APCLR against the best frozen vision model),
then a reborn vision student (its pseudo detections optionally merged
with its own confident predictions by SA-NMS and pruned by RPDLR against
the fresh report student), and finally promotes both students to be the
next generation's teachers. Teachers are always frozen; exactly one model
is trainable at any point.

Every stage records parameter hashes of all frozen inputs before and
after training plus its exact batch composition, so the run manifest can
prove role discipline and reproducibility.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .config import PipelineConfig, RunConfig, to_dotted
from .evaluation import MetricRecord, macro_auc, mean_ap
from .losses import DetectionLossConfig, DetectionTarget
from .models import (
    ModelHandle,
    ReportBatch,
    ReportLossConfig,
    VisionBatch,
    freeze,
    new_report_model,
    new_vision_model,
    param_hash,
    patch_features,
    reinit,
    report_loss_and_grad,
    report_predict,
    train_step,
    vision_loss_and_grad,
    vision_predict,
)
from .refine import ClassSet, apclr, classify_to_classset, rpdlr
from .seeding import derive_seed, rng_for
from .suppression import SOURCE_STUDENT, DetectionSet, sa_nms
from .synthdata import (
    SPLIT_EVAL_TEST,
    SPLIT_EVAL_VAL,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_UNLABELED,
    SPLIT_VAL,
    SyntheticDataset,
    cats_to_vector,
    corrupt_pseudo_classes,
    corrupt_pseudo_detections,
)

logger = logging.getLogger(__name__)

VAL_SPLITS = (SPLIT_VAL, SPLIT_EVAL_VAL)
TEST_SPLITS = (SPLIT_TEST, SPLIT_EVAL_TEST)


@dataclass(frozen=True)
class BatchSpec:
    """Per-batch labeled/unlabeled composition."""

    labeled_per_batch: int
    unlabeled_per_batch: int
    batch_size: int = -1

    def __post_init__(self) -> None:
        if self.batch_size == -1:
            object.__setattr__(self, "batch_size", self.labeled_per_batch + self.unlabeled_per_batch)
        if self.labeled_per_batch + self.unlabeled_per_batch != self.batch_size:
            raise ValueError("labeled_per_batch + unlabeled_per_batch must equal batch_size")


@dataclass
class StageRecord:
    """Audit record for one training stage."""

    name: str
    generation: int
    trained_role: str
    iterations: int
    labeled_per_batch: int
    unlabeled_per_batch: int
    batches: int
    composition_exact: bool
    hashes_before: dict[str, str]
    hashes_after: dict[str, str]
    trained_hash: str
    first_loss: float | None = None
    last_loss: float | None = None

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "generation": self.generation,
            "trained_role": self.trained_role,
            "iterations": self.iterations,
            "labeled_per_batch": self.labeled_per_batch,
            "unlabeled_per_batch": self.unlabeled_per_batch,
            "batches": self.batches,
            "composition_exact": self.composition_exact,
            "hashes_before": dict(self.hashes_before),
            "hashes_after": dict(self.hashes_after),
            "trained_hash": self.trained_hash,
            "first_loss": self.first_loss,
            "last_loss": self.last_loss,
        }


@dataclass
class GenerationState:
    """Model roles at a generation boundary plus the accumulated logs."""

    k: int
    teacher_vision: ModelHandle
    teacher_report: ModelHandle
    student_vision: ModelHandle | None = None
    student_report: ModelHandle | None = None
    metrics_log: list[MetricRecord] = field(default_factory=list)
    stage_records: list[StageRecord] = field(default_factory=list)
    checkpoints: dict[str, ModelHandle] = field(default_factory=dict)


# ----------------------------------------------------------------------
# Guides: frozen predictors the refinement filters consult. Model guides
# wrap a frozen ModelHandle; oracle guides read the (possibly corrupted)
# latent ground truth and exist for controlled ablations.
# ----------------------------------------------------------------------


class ModelVisionGuide:
    def __init__(self, model: ModelHandle, dataset: SyntheticDataset, score_threshold: float, nms_iou: float):
        if not model.frozen:
            raise ValueError("vision guide model must be frozen")
        self.model = model
        self.dataset = dataset
        self.score_threshold = score_threshold
        self.nms_iou = nms_iou
        self._cache: dict[int, DetectionSet] = {}

    def detections(self, sample_id: int) -> DetectionSet:
        if sample_id not in self._cache:
            sample = self.dataset[sample_id]
            self._cache[sample_id] = vision_predict(
                self.model,
                sample.image,
                score_threshold=self.score_threshold,
                apply_nms=True,
                nms_iou=self.nms_iou,
                source=SOURCE_STUDENT,
            )
        return self._cache[sample_id]

    def hash_key(self) -> str:
        return param_hash(self.model)


class OracleVisionGuide:
    """Detects exactly the sample's latent boxes (noisy view when present)."""

    def __init__(self, dataset: SyntheticDataset):
        self.dataset = dataset

    def detections(self, sample_id: int) -> DetectionSet:
        from .geometry import BBox
        from .suppression import Detection

        s = self.dataset[sample_id]
        boxes = s.noisy_boxes if s.noisy_boxes is not None else s.latent_boxes
        cats = s.noisy_cats if s.noisy_cats is not None else s.latent_cats
        dets = tuple(Detection(BBox(*b), int(c), 1.0) for b, c in zip(boxes, cats))
        return DetectionSet(dets, source=SOURCE_STUDENT)

    def hash_key(self) -> str:
        return "oracle-vision"


class ModelReportGuide:
    def __init__(self, model: ModelHandle, dataset: SyntheticDataset):
        if not model.frozen:
            raise ValueError("report guide model must be frozen")
        self.model = model
        self.dataset = dataset
        self._cache: dict[int, np.ndarray] = {}

    def class_probs(self, sample_id: int) -> np.ndarray:
        if sample_id not in self._cache:
            self._cache[sample_id] = report_predict(self.model, self.dataset[sample_id].tokens)
        return self._cache[sample_id]

    def hash_key(self) -> str:
        return param_hash(self.model)


class OracleReportGuide:
    """Asserts exactly the sample's latent class set (noisy view when present)."""

    def __init__(self, dataset: SyntheticDataset):
        self.dataset = dataset

    def class_probs(self, sample_id: int) -> np.ndarray:
        s = self.dataset[sample_id]
        k = self.dataset.config.num_categories
        if s.noisy_class_labels is not None:
            return s.noisy_class_labels.astype(float)
        return cats_to_vector(s.latent_cats, k).astype(float)

    def hash_key(self) -> str:
        return "oracle-report"


# ----------------------------------------------------------------------
# Stage helpers.
# ----------------------------------------------------------------------


def _draw(rng: np.random.Generator, pool: np.ndarray, size: int) -> np.ndarray:
    if size == 0:
        return np.zeros(0, dtype=int)
    replace_draw = len(pool) < size
    return pool[rng.choice(len(pool), size, replace=replace_draw)]


def _detection_loss_config(pcfg: PipelineConfig) -> DetectionLossConfig:
    return DetectionLossConfig(
        focal_alpha=pcfg.focal_alpha,
        focal_gamma=pcfg.focal_gamma,
        smooth_l1_beta=pcfg.smooth_l1_beta,
        match_pos_iou=pcfg.match_pos_iou,
        match_neg_iou=pcfg.match_neg_iou,
        unsup_weight=pcfg.unsup_weight,
    )


def _target_from_detections(dets: DetectionSet) -> DetectionTarget:
    if len(dets) == 0:
        return DetectionTarget(np.zeros((0, 4)), np.zeros(0, dtype=int))
    boxes = np.array([d.box.as_tuple() for d in dets.items])
    cats = np.array([d.category for d in dets.items], dtype=int)
    return DetectionTarget(boxes, cats)


def _annotation_target(sample) -> DetectionTarget:
    boxes, cats = sample.annotation
    return DetectionTarget(boxes, cats)


def new_models_for(config: RunConfig, role: str, seed: int) -> ModelHandle:
    d, p = config.dataset, config.pipeline
    if role == "vision":
        return new_vision_model(
            d.grid_h,
            d.grid_w,
            d.grid_channels,
            d.num_categories,
            p.anchor_size,
            seed,
            init_weight_scale=p.init_weight_scale,
            init_prior=p.init_prior,
        )
    return new_report_model(d.vocab_size, d.num_categories, seed, init_weight_scale=p.init_weight_scale)


def train_initial_teachers(
    dataset: SyntheticDataset, config: RunConfig
) -> tuple[ModelHandle, ModelHandle, list[StageRecord]]:
    """Supervised-only training of the generation-0 teachers on the labeled
    train split; both are returned frozen."""
    labeled_ids = np.array(dataset.ids(SPLIT_TRAIN), dtype=int)
    if len(labeled_ids) == 0:
        raise ValueError("cannot train initial teachers: labeled train split is empty")
    pcfg = config.pipeline
    iters = pcfg.iterations if pcfg.teacher_iterations is None else pcfg.teacher_iterations
    records: list[StageRecord] = []

    vision = new_models_for(config, "vision", derive_seed(config.seed, "init", "vision", 0))
    rng = rng_for(config.seed, "batches", "vision-teacher", 0)
    loss_cfg = _detection_loss_config(pcfg)
    feat_cache = {int(i): patch_features(dataset[int(i)].image) for i in labeled_ids}
    batch_size = pcfg.vision_batch_labeled + pcfg.vision_batch_unlabeled
    first = last = None
    for _ in range(iters):
        ids = _draw(rng, labeled_ids, batch_size)
        batch = VisionBatch(
            features=[feat_cache[int(i)] for i in ids],
            targets=[_annotation_target(dataset[int(i)]) for i in ids],
            labeled=np.ones(len(ids), bool),
        )
        loss, grad = vision_loss_and_grad(vision, batch, loss_cfg)
        first = loss.total if first is None else first
        last = loss.total
        vision = train_step(vision, grad, pcfg.lr_vision, pcfg.momentum)
    vision = freeze(vision)
    records.append(
        StageRecord(
            name="teacher_vision",
            generation=0,
            trained_role="vision",
            iterations=iters,
            labeled_per_batch=batch_size,
            unlabeled_per_batch=0,
            batches=iters,
            composition_exact=True,
            hashes_before={},
            hashes_after={},
            trained_hash=param_hash(vision),
            first_loss=first,
            last_loss=last,
        )
    )

    report = new_models_for(config, "report", derive_seed(config.seed, "init", "report", 0))
    rng = rng_for(config.seed, "batches", "report-teacher", 0)
    k = dataset.config.num_categories
    batch_size = pcfg.report_batch_labeled + pcfg.report_batch_unlabeled
    first = last = None
    labels = {int(i): dataset[int(i)].class_vector(k) for i in labeled_ids}
    for _ in range(iters):
        ids = _draw(rng, labeled_ids, batch_size)
        batch = ReportBatch(
            tokens=np.stack([dataset[int(i)].tokens for i in ids]).astype(float),
            targets=np.stack([labels[int(i)] for i in ids]).astype(float),
            labeled=np.ones(len(ids), bool),
        )
        loss, grad = report_loss_and_grad(report, batch, ReportLossConfig(pcfg.unsup_weight))
        first = loss.total if first is None else first
        last = loss.total
        report = train_step(report, grad, pcfg.lr_report, pcfg.momentum)
    report = freeze(report)
    records.append(
        StageRecord(
            name="teacher_report",
            generation=0,
            trained_role="report",
            iterations=iters,
            labeled_per_batch=batch_size,
            unlabeled_per_batch=0,
            batches=iters,
            composition_exact=True,
            hashes_before={},
            hashes_after={},
            trained_hash=param_hash(report),
            first_loss=first,
            last_loss=last,
        )
    )
    return vision, report, records


def train_report_student(
    teacher_report: ModelHandle,
    vision_guide,
    dataset: SyntheticDataset,
    spec: BatchSpec,
    iterations: int,
    config: RunConfig,
    generation: int = 1,
) -> tuple[ModelHandle, StageRecord]:
    """Distill a reborn report student from the frozen report teacher.

    Unlabeled targets are the teacher's binarized pseudo classes, run
    through the stream-corruption plan when the dataset carries noise, and
    pruned by APCLR against `vision_guide` when one is given.
    """
    if not teacher_report.frozen:
        raise ValueError("report teacher must be frozen")
    pcfg = config.pipeline
    k = dataset.config.num_categories
    student = reinit(teacher_report, derive_seed(config.seed, "init", "report", generation))
    rng = rng_for(config.seed, "batches", "report", generation)
    labeled_ids = np.array(dataset.ids(SPLIT_TRAIN), dtype=int)
    unlabeled_ids = np.array(dataset.ids(SPLIT_UNLABELED), dtype=int)
    hashes_before = {"teacher_report": param_hash(teacher_report)}
    if vision_guide is not None:
        hashes_before["vision_guide"] = vision_guide.hash_key()

    labels = {int(i): dataset[int(i)].class_vector(k).astype(float) for i in labeled_ids}
    pseudo_cache: dict[int, np.ndarray] = {}

    def pseudo_target(i: int) -> np.ndarray:
        if i not in pseudo_cache:
            probs = report_predict(teacher_report, dataset[i].tokens)
            pseudo = classify_to_classset(probs, pcfg.class_threshold)
            present = corrupt_pseudo_classes(pseudo.present, i, dataset.noise, dataset.config)
            pseudo = ClassSet(present)
            if vision_guide is not None:
                pseudo, _ = apclr(pseudo, vision_guide.detections(i), pcfg.det_score_floor)
            pseudo_cache[i] = cats_to_vector(np.array(sorted(pseudo.present)), k).astype(float)
        return pseudo_cache[i]

    composition_exact = True
    first = last = None
    rcfg = ReportLossConfig(pcfg.unsup_weight)
    for _ in range(iterations):
        lids = _draw(rng, labeled_ids, spec.labeled_per_batch)
        uids = _draw(rng, unlabeled_ids, spec.unlabeled_per_batch)
        composition_exact &= len(lids) == spec.labeled_per_batch and len(uids) == spec.unlabeled_per_batch
        tokens = np.stack([dataset[int(i)].tokens for i in np.concatenate([lids, uids])]).astype(float)
        targets = np.stack([labels[int(i)] for i in lids] + [pseudo_target(int(i)) for i in uids])
        labeled = np.concatenate([np.ones(len(lids), bool), np.zeros(len(uids), bool)])
        loss, grad = report_loss_and_grad(student, ReportBatch(tokens, targets, labeled), rcfg)
        first = loss.total if first is None else first
        last = loss.total
        student = train_step(student, grad, pcfg.lr_report, pcfg.momentum)
    student = freeze(student)
    hashes_after = {"teacher_report": param_hash(teacher_report)}
    if vision_guide is not None:
        hashes_after["vision_guide"] = vision_guide.hash_key()
    record = StageRecord(
        name=f"student_report_gen{generation}",
        generation=generation,
        trained_role="report",
        iterations=iterations,
        labeled_per_batch=spec.labeled_per_batch,
        unlabeled_per_batch=spec.unlabeled_per_batch,
        batches=iterations,
        composition_exact=composition_exact,
        hashes_before=hashes_before,
        hashes_after=hashes_after,
        trained_hash=param_hash(student),
        first_loss=first,
        last_loss=last,
    )
    return student, record


def train_vision_student(
    teacher_vision: ModelHandle,
    report_guide,
    dataset: SyntheticDataset,
    spec: BatchSpec,
    iterations: int,
    config: RunConfig,
    generation: int = 1,
    sa_nms_enabled: bool = False,
) -> tuple[ModelHandle, StageRecord]:
    """Distill a reborn vision student from the frozen vision teacher.

    Per unlabeled sample: teacher pseudo detections (score-thresholded,
    NMS'd, stream-corrupted when the dataset carries noise), optionally
    merged with the current student's confident predictions via SA-NMS,
    then pruned by RPDLR against `report_guide` when one is given.
    """
    if not teacher_vision.frozen:
        raise ValueError("vision teacher must be frozen")
    pcfg = config.pipeline
    student = reinit(teacher_vision, derive_seed(config.seed, "init", "vision", generation))
    rng = rng_for(config.seed, "batches", "vision", generation)
    labeled_ids = np.array(dataset.ids(SPLIT_TRAIN), dtype=int)
    unlabeled_ids = np.array(dataset.ids(SPLIT_UNLABELED), dtype=int)
    loss_cfg = _detection_loss_config(pcfg)
    hashes_before = {"teacher_vision": param_hash(teacher_vision)}
    if report_guide is not None:
        hashes_before["report_guide"] = report_guide.hash_key()

    labeled_feats = {int(i): patch_features(dataset[int(i)].image) for i in labeled_ids}
    teacher_cache: dict[int, DetectionSet] = {}
    guide_classes: dict[int, ClassSet] = {}

    def teacher_pseudo(i: int, features: np.ndarray) -> DetectionSet:
        if i not in teacher_cache:
            raw = vision_predict(
                teacher_vision,
                dataset[i].image,
                score_threshold=pcfg.teacher_score_threshold,
                apply_nms=True,
                nms_iou=pcfg.nms_iou,
                source="teacher",
                features=features,
            )
            items = corrupt_pseudo_detections(raw.items, i, dataset.noise, dataset.config)
            teacher_cache[i] = DetectionSet(tuple(items), source="teacher")
        return teacher_cache[i]

    def report_classes(i: int) -> ClassSet:
        if i not in guide_classes:
            guide_classes[i] = classify_to_classset(report_guide.class_probs(i), pcfg.class_threshold)
        return guide_classes[i]

    composition_exact = True
    first = last = None
    for _ in range(iterations):
        lids = _draw(rng, labeled_ids, spec.labeled_per_batch)
        uids = _draw(rng, unlabeled_ids, spec.unlabeled_per_batch)
        composition_exact &= len(lids) == spec.labeled_per_batch and len(uids) == spec.unlabeled_per_batch
        feats = [labeled_feats[int(i)] for i in lids]
        targets = [_annotation_target(dataset[int(i)]) for i in lids]
        for i in uids:
            i = int(i)
            features = patch_features(dataset[i].image)
            pseudo = teacher_pseudo(i, features)
            if sa_nms_enabled:
                student_dets = vision_predict(
                    student,
                    dataset[i].image,
                    score_threshold=pcfg.student_score_floor,
                    apply_nms=False,
                    source=SOURCE_STUDENT,
                    features=features,
                )
                pseudo = sa_nms(pseudo, student_dets, pcfg.nms_iou, pcfg.student_score_floor)
            if report_guide is not None:
                pseudo, _ = rpdlr(pseudo, report_classes(i))
            feats.append(features)
            targets.append(_target_from_detections(pseudo))
        labeled = np.concatenate([np.ones(len(lids), bool), np.zeros(len(uids), bool)])
        loss, grad = vision_loss_and_grad(student, VisionBatch(feats, targets, labeled), loss_cfg)
        first = loss.total if first is None else first
        last = loss.total
        student = train_step(student, grad, pcfg.lr_vision, pcfg.momentum)
    student = freeze(student)
    hashes_after = {"teacher_vision": param_hash(teacher_vision)}
    if report_guide is not None:
        hashes_after["report_guide"] = report_guide.hash_key()
    record = StageRecord(
        name=f"student_vision_gen{generation}",
        generation=generation,
        trained_role="vision",
        iterations=iterations,
        labeled_per_batch=spec.labeled_per_batch,
        unlabeled_per_batch=spec.unlabeled_per_batch,
        batches=iterations,
        composition_exact=composition_exact,
        hashes_before=hashes_before,
        hashes_after=hashes_after,
        trained_hash=param_hash(student),
        first_loss=first,
        last_loss=last,
    )
    return student, record


# ----------------------------------------------------------------------
# Evaluation at generation boundaries.
# ----------------------------------------------------------------------


def evaluate_models(
    vision: ModelHandle,
    report: ModelHandle,
    dataset: SyntheticDataset,
    splits: tuple[str, ...],
    pcfg: PipelineConfig,
    generation: int,
) -> MetricRecord:
    ids = dataset.ids(*splits)
    k = dataset.config.num_categories
    preds_by_image = {}
    gts_by_image = {}
    scores = np.zeros((len(ids), k))
    labels = np.zeros((len(ids), k), dtype=int)
    for row, i in enumerate(ids):
        s = dataset[i]
        preds_by_image[i] = vision_predict(
            vision,
            s.image,
            score_threshold=pcfg.eval_score_floor,
            apply_nms=True,
            nms_iou=pcfg.eval_nms_iou,
        )
        gts_by_image[i] = s.annotation
        scores[row] = report_predict(report, s.tokens)
        labels[row] = s.class_vector(k)
    maps, per_class = mean_ap(
        preds_by_image, gts_by_image, k, all_point=getattr(pcfg, "eval_all_point_interp", True)
    )
    auc, per_auc = macro_auc(scores, labels)
    return MetricRecord(
        generation=generation,
        map_by_threshold=maps,
        per_class_ap=per_class,
        macro_auc=auc,
        per_class_auc=per_auc,
    )


# ----------------------------------------------------------------------
# Generations.
# ----------------------------------------------------------------------


def run_generation(
    state: GenerationState,
    dataset: SyntheticDataset,
    config: RunConfig,
    train_vision: bool = True,
    train_report: bool = True,
) -> GenerationState:
    """Advance the co-evolution loop by one generation and promote the
    freshly trained students to be the next teachers."""
    pcfg = config.pipeline
    k = state.k + 1
    report_spec = BatchSpec(pcfg.report_batch_labeled, pcfg.report_batch_unlabeled)
    vision_spec = BatchSpec(pcfg.vision_batch_labeled, pcfg.vision_batch_unlabeled)
    records = list(state.stage_records)
    checkpoints = dict(state.checkpoints)

    student_report = state.teacher_report
    if train_report:
        vision_guide = None
        if pcfg.apclr:
            # The best frozen vision model available: the previous student
            # when one exists, otherwise the initial teacher.
            guide_model = state.student_vision if state.student_vision is not None else state.teacher_vision
            vision_guide = ModelVisionGuide(guide_model, dataset, pcfg.det_score_floor, pcfg.nms_iou)
        logger.info("generation %d: training report student", k)
        student_report, rec = train_report_student(
            state.teacher_report, vision_guide, dataset, report_spec, pcfg.iterations, config, k
        )
        records.append(rec)
        checkpoints[f"gen{k}_student_report"] = student_report

    student_vision = state.teacher_vision
    if train_vision:
        report_guide = ModelReportGuide(student_report, dataset) if pcfg.rpdlr else None
        logger.info("generation %d: training vision student", k)
        student_vision, rec = train_vision_student(
            state.teacher_vision,
            report_guide,
            dataset,
            vision_spec,
            pcfg.iterations,
            config,
            k,
            sa_nms_enabled=pcfg.sa_nms,
        )
        records.append(rec)
        checkpoints[f"gen{k}_student_vision"] = student_vision

    metrics = list(state.metrics_log)
    metrics.append(evaluate_models(student_vision, student_report, dataset, VAL_SPLITS, pcfg, k))
    return GenerationState(
        k=k,
        teacher_vision=student_vision,
        teacher_report=student_report,
        student_vision=student_vision if train_vision else state.student_vision,
        student_report=student_report if train_report else state.student_report,
        metrics_log=metrics,
        stage_records=records,
        checkpoints=checkpoints,
    )


@dataclass
class RunResult:
    final_vision: ModelHandle
    state: GenerationState
    config: RunConfig

    @property
    def metrics(self) -> list[MetricRecord]:
        return self.state.metrics_log

    @property
    def manifest(self) -> dict:
        return build_manifest(self.config, self.state)


def run_coevolution(dataset: SyntheticDataset, config: RunConfig) -> RunResult:
    """Full run: initial teachers, then K generations of co-evolution.

    With generations = 0 only the initial teachers are trained and
    evaluated (the 0th-generation point of the generation curves).
    """
    pcfg = config.pipeline
    teacher_vision, teacher_report, records = train_initial_teachers(dataset, config)
    state = GenerationState(
        k=0,
        teacher_vision=teacher_vision,
        teacher_report=teacher_report,
        stage_records=records,
        checkpoints={"gen0_teacher_vision": teacher_vision, "gen0_teacher_report": teacher_report},
    )
    state.metrics_log.append(
        evaluate_models(teacher_vision, teacher_report, dataset, VAL_SPLITS, pcfg, 0)
    )
    k_vision, k_report = pcfg.effective_generations()
    for k in range(1, max(k_vision, k_report) + 1):
        state = run_generation(
            state, dataset, config, train_vision=k <= k_vision, train_report=k <= k_report
        )
    return RunResult(final_vision=state.teacher_vision, state=state, config=config)


# ----------------------------------------------------------------------
# Manifest and digests.
# ----------------------------------------------------------------------


def metrics_digest(records: list[MetricRecord]) -> str:
    payload = json.dumps([r.as_dict() for r in records], sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def run_profile(pcfg: PipelineConfig) -> str:
    """Human-readable mechanism profile for manifests."""
    flags = (pcfg.sa_nms, pcfg.rpdlr, pcfg.coevolve)
    if not any(flags):
        return "baseline-tsd"
    if all(flags):
        return "full"
    return "custom"


def build_manifest(config: RunConfig, state: GenerationState) -> dict:
    k_vision, k_report = config.pipeline.effective_generations()
    return {
        "schema_version": 1,
        "kind": "codistill-run",
        "profile": run_profile(config.pipeline),
        "config": to_dotted(config),
        "effective_generations": {"vision": k_vision, "report": k_report},
        "stages": [r.as_dict() for r in state.stage_records],
        "metrics": [m.as_dict() for m in state.metrics_log],
        "metrics_digest": metrics_digest(state.metrics_log),
        "checkpoints": sorted(state.checkpoints),
    }


# ----------------------------------------------------------------------
# Ablation harness: four incremental variants sharing seeds and data.
# ----------------------------------------------------------------------

ABLATION_VARIANTS = ("baseline", "rpdlr", "coe_apclr", "sa_nms")


def ablation_pipeline(pcfg: PipelineConfig, name: str) -> PipelineConfig:
    flags = {
        "baseline": dict(rpdlr=False, coevolve=False, sa_nms=False),
        "rpdlr": dict(rpdlr=True, coevolve=False, sa_nms=False),
        "coe_apclr": dict(rpdlr=True, coevolve=True, sa_nms=False),
        "sa_nms": dict(rpdlr=True, coevolve=True, sa_nms=True),
    }
    if name not in flags:
        raise ValueError(f"unknown ablation variant {name!r}")
    return replace(pcfg, **flags[name])


@dataclass
class AblationRow:
    name: str
    seeds: list[int]
    final_map: dict[float, list[float]]
    final_auc: list[float]
    histories: list[list[MetricRecord]]

    def mean_map(self, thr: float) -> float:
        return float(np.mean(self.final_map[thr]))

    def sd_map(self, thr: float) -> float:
        return float(np.std(self.final_map[thr]))

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "seeds": self.seeds,
            "final_map": {str(t): v for t, v in self.final_map.items()},
            "mean_map": {str(t): self.mean_map(t) for t in self.final_map},
            "sd_map": {str(t): self.sd_map(t) for t in self.final_map},
            "final_auc": self.final_auc,
            "mean_auc": float(np.mean(self.final_auc)),
        }


@dataclass
class AblationResult:
    rows: list[AblationRow]
    config: RunConfig

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"config": to_dotted(self.config), "rows": [r.as_dict() for r in self.rows]}


def run_ablation(config: RunConfig, repeats: int = 1, dataset_for_seed=None) -> AblationResult:
    """Run the four incremental variants over `repeats` paired seeds.

    Each repeat r generates one dataset (seed + r) shared by all four
    variants, so differences isolate the mechanisms. `dataset_for_seed`
    lets callers supply prebuilt datasets (keyed by repeat index).
    """
    from .synthdata import generate, inject_noise

    rows = {name: AblationRow(name, [], {}, [], []) for name in ABLATION_VARIANTS}
    for r in range(repeats):
        seed = config.seed + r
        if dataset_for_seed is not None:
            dataset = dataset_for_seed(r)
        else:
            dcfg = replace(config.dataset, seed=config.dataset.seed + r)
            dataset = generate(dcfg)
            if config.noise.any():
                dataset = inject_noise(dataset, config.noise)
        for name in ABLATION_VARIANTS:
            variant = RunConfig(
                dataset=dataset.config,
                noise=dataset.noise,
                pipeline=ablation_pipeline(config.pipeline, name),
                seed=seed,
                dataset_path=config.dataset_path,
                out_dir=config.out_dir,
            )
            logger.info("ablation repeat %d: variant %s", r, name)
            result = run_coevolution(dataset, variant)
            final = result.metrics[-1]
            row = rows[name]
            row.seeds.append(seed)
            for thr, v in final.map_by_threshold.items():
                row.final_map.setdefault(thr, []).append(v)
            row.final_auc.append(final.macro_auc)
            row.histories.append(result.metrics)
    return AblationResult(rows=[rows[name] for name in ABLATION_VARIANTS], config=config)
