"""Pydantic request/response models for the HTTP service.

These mirror the core dataclass configs field for field; `to_core` /
`from_core` converters keep the core package free of pydantic.
"""

from __future__ import annotations

from dataclasses import asdict

from pydantic import BaseModel, Field

from ..config import PipelineConfig, RunConfig
from ..evaluation import MetricRecord
from ..synthdata import DatasetConfig, NoiseSpec


class DatasetSpecModel(BaseModel):
    num_samples: int = 5000
    labeled_fraction: float = 0.01
    num_categories: int = 8
    grid_h: int = 16
    grid_w: int = 16
    grid_channels: int = 4
    signature_amplitude: float = 1.0
    amplitude_jitter: float = 0.2
    background_sigma: float = 0.1
    vocab_size: int = 200
    keywords_per_category: int = 3
    keyword_dropout: float = 0.1
    distractor_rate: float = 0.02
    max_abnormalities: int = 3
    min_box_side: float = 3.0
    max_box_side: float = 5.5
    max_box_overlap: float = 0.3
    split_train: float = 0.7
    split_val: float = 0.1
    split_test: float = 0.2
    eval_reserve: int = 180
    seed: int = 0

    def to_core(self) -> DatasetConfig:
        return DatasetConfig(**self.model_dump())

    @classmethod
    def from_core(cls, cfg: DatasetConfig) -> "DatasetSpecModel":
        return cls(**asdict(cfg))


class NoiseSpecModel(BaseModel):
    det_confusion: float = 0.0
    det_box_jitter: float = 0.0
    det_spurious: float = 0.0
    report_confusion: float = 0.0
    report_spurious: float = 0.0

    def to_core(self) -> NoiseSpec:
        return NoiseSpec(**self.model_dump())

    @classmethod
    def from_core(cls, spec: NoiseSpec) -> "NoiseSpecModel":
        return cls(**asdict(spec))


class PipelineSpecModel(BaseModel):
    generations: int = 2
    generations_report: int | None = None
    iterations: int = 2000
    teacher_iterations: int | None = None
    report_batch_labeled: int = 8
    report_batch_unlabeled: int = 8
    vision_batch_labeled: int = 8
    vision_batch_unlabeled: int = 4
    lr_report: float = 1e-4
    lr_vision: float = 1e-4
    momentum: float = 0.9
    unsup_weight: float = 1.0
    sa_nms: bool = True
    rpdlr: bool = True
    coevolve: bool = True
    teacher_score_threshold: float = 0.5
    student_score_floor: float = 0.5
    nms_iou: float = 0.5
    class_threshold: float = 0.5
    det_score_floor: float = 0.5
    eval_score_floor: float = 0.05
    eval_nms_iou: float = 0.5
    eval_all_point_interp: bool = True
    anchor_size: float = 4.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0 / 9.0
    match_pos_iou: float = 0.5
    match_neg_iou: float = 0.4
    init_weight_scale: float = 0.01
    init_prior: float = 0.01

    def to_core(self) -> PipelineConfig:
        return PipelineConfig(**self.model_dump())

    @classmethod
    def from_core(cls, cfg: PipelineConfig) -> "PipelineSpecModel":
        return cls(**asdict(cfg))


class RunConfigModel(BaseModel):
    dataset: DatasetSpecModel = Field(default_factory=DatasetSpecModel)
    noise: NoiseSpecModel = Field(default_factory=NoiseSpecModel)
    pipeline: PipelineSpecModel = Field(default_factory=PipelineSpecModel)
    seed: int = 0
    dataset_path: str = ""
    out_dir: str = ""

    def to_core(self) -> RunConfig:
        return RunConfig(
            dataset=self.dataset.to_core(),
            noise=self.noise.to_core(),
            pipeline=self.pipeline.to_core(),
            seed=self.seed,
            dataset_path=self.dataset_path,
            out_dir=self.out_dir,
        )

    @classmethod
    def from_core(cls, cfg: RunConfig) -> "RunConfigModel":
        return cls(
            dataset=DatasetSpecModel.from_core(cfg.dataset),
            noise=NoiseSpecModel.from_core(cfg.noise),
            pipeline=PipelineSpecModel.from_core(cfg.pipeline),
            seed=cfg.seed,
            dataset_path=cfg.dataset_path,
            out_dir=cfg.out_dir,
        )


class MetricRecordModel(BaseModel):
    generation: int
    map_by_threshold: dict[str, float]
    per_class_ap: dict[str, list[float | None]]
    macro_auc: float | None = None
    per_class_auc: list[float | None] = Field(default_factory=list)

    @classmethod
    def from_core(cls, rec: MetricRecord) -> "MetricRecordModel":
        d = rec.as_dict()
        return cls(
            generation=d["generation"],
            map_by_threshold=d["map"],
            per_class_ap=d["per_class_ap"],
            macro_auc=d["macro_auc"],
            per_class_auc=d["per_class_auc"],
        )


class GenDataRequest(BaseModel):
    dataset: DatasetSpecModel = Field(default_factory=DatasetSpecModel)
    noise: NoiseSpecModel | None = None
    out_path: str


class GenDataResponse(BaseModel):
    path: str
    num_samples: int
    counts_by_split: dict[str, int]
    digest: str


class TrainRequest(BaseModel):
    config: RunConfigModel = Field(default_factory=RunConfigModel)


class TrainResponse(BaseModel):
    metrics: list[MetricRecordModel]
    metrics_digest: str
    manifest_path: str | None = None
    checkpoint_paths: dict[str, str] = Field(default_factory=dict)
    final_map_50: float
    final_macro_auc: float


class AblateRequest(BaseModel):
    config: RunConfigModel = Field(default_factory=RunConfigModel)
    repeats: int = 1


class AblationRowModel(BaseModel):
    name: str
    seeds: list[int]
    mean_map: dict[str, float]
    sd_map: dict[str, float]
    mean_auc: float
    final_map: dict[str, list[float]]


class AblateResponse(BaseModel):
    rows: list[AblationRowModel]
    table_path: str | None = None


class EvalRequest(BaseModel):
    checkpoint_path: str
    dataset_path: str
    split: str = "val"
    report_checkpoint_path: str | None = None
    eval_score_floor: float = 0.05
    eval_nms_iou: float = 0.5


class EvalResponse(BaseModel):
    metrics: MetricRecordModel


class SummaryRequest(BaseModel):
    run_dir: str


class SummaryRow(BaseModel):
    generation: int
    map_25: float
    map_50: float
    map_75: float
    macro_auc: float


class SummaryResponse(BaseModel):
    rows: list[SummaryRow]
    text: str


class HealthResponse(BaseModel):
    status: str
    version: str
