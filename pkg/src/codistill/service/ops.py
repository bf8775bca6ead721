"""Service operations: the single implementation behind both the HTTP
routes and the CLI subcommands."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..evaluation import MetricRecord, metrics_to_csv, metrics_to_json
from ..models import load_checkpoint, save_checkpoint, vision_predict, report_predict
from ..evaluation import macro_auc, mean_ap
from ..pipeline import (
    TEST_SPLITS,
    VAL_SPLITS,
    RunResult,
    metrics_digest,
    run_ablation,
    run_coevolution,
)
from ..synthdata import (
    SPLIT_TRAIN,
    SyntheticDataset,
    dataset_to_bytes,
    generate,
    inject_noise,
    load_dataset,
)
from .schemas import (
    AblateRequest,
    AblateResponse,
    AblationRowModel,
    EvalRequest,
    EvalResponse,
    GenDataRequest,
    GenDataResponse,
    MetricRecordModel,
    SummaryRequest,
    SummaryResponse,
    SummaryRow,
    TrainRequest,
    TrainResponse,
)

logger = logging.getLogger(__name__)

SPLIT_GROUPS = {"val": VAL_SPLITS, "test": TEST_SPLITS, "train": (SPLIT_TRAIN,)}


def gen_data(req: GenDataRequest) -> GenDataResponse:
    dataset = generate(req.dataset.to_core())
    if req.noise is not None:
        spec = req.noise.to_core()
        if spec.any():
            dataset = inject_noise(dataset, spec)
    blob = dataset_to_bytes(dataset)
    path = Path(req.out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    counts = Counter(s.split for s in dataset.samples)
    return GenDataResponse(
        path=str(path),
        num_samples=len(dataset),
        counts_by_split=dict(sorted(counts.items())),
        digest=hashlib.sha256(blob).hexdigest(),
    )


def _resolve_dataset(config: RunConfig) -> SyntheticDataset:
    if config.dataset_path:
        return load_dataset(config.dataset_path)
    dataset = generate(config.dataset)
    if config.noise.any():
        dataset = inject_noise(dataset, config.noise)
    return dataset


def write_run_outputs(result: RunResult, out_dir: str) -> tuple[str, dict[str, str]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    paths: dict[str, str] = {}
    for name, model in result.state.checkpoints.items():
        p = ckpt_dir / f"{name}.ckpt"
        generation = int(name.split("_")[0].removeprefix("gen"))
        save_checkpoint(model, p, generation=generation)
        paths[name] = str(p)
    metrics_to_csv(result.metrics, out / "metrics.csv")
    metrics_to_json(result.metrics, out / "metrics.json")
    manifest = result.manifest
    manifest["checkpoint_paths"] = paths
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return str(manifest_path), paths


def train(req: TrainRequest) -> TrainResponse:
    config = req.config.to_core()
    dataset = _resolve_dataset(config)
    result = run_coevolution(dataset, config)
    manifest_path = None
    paths: dict[str, str] = {}
    if config.out_dir:
        manifest_path, paths = write_run_outputs(result, config.out_dir)
    final = result.metrics[-1]
    return TrainResponse(
        metrics=[MetricRecordModel.from_core(m) for m in result.metrics],
        metrics_digest=metrics_digest(result.metrics),
        manifest_path=manifest_path,
        checkpoint_paths=paths,
        final_map_50=final.map_by_threshold[0.5],
        final_macro_auc=final.macro_auc,
    )


def ablate(req: AblateRequest) -> AblateResponse:
    config = req.config.to_core()
    result = run_ablation(config, repeats=req.repeats)
    rows = []
    for row in result.rows:
        d = row.as_dict()
        rows.append(
            AblationRowModel(
                name=row.name,
                seeds=row.seeds,
                mean_map=d["mean_map"],
                sd_map=d["sd_map"],
                mean_auc=d["mean_auc"],
                final_map=d["final_map"],
            )
        )
    table_path = None
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(result.as_dict(), indent=2, sort_keys=True, default=str))
        lines = ["variant,map_25_mean,map_50_mean,map_75_mean,map_50_sd,auc_mean"]
        for row in result.rows:
            lines.append(
                f"{row.name},{row.mean_map(0.25):.6f},{row.mean_map(0.5):.6f},"
                f"{row.mean_map(0.75):.6f},{row.sd_map(0.5):.6f},{float(np.mean(row.final_auc)):.6f}"
            )
        (out / "ablation.csv").write_text("\n".join(lines) + "\n")
        table_path = str(out / "ablation.csv")
    return AblateResponse(rows=rows, table_path=table_path)


def evaluate(req: EvalRequest) -> EvalResponse:
    vision, _ = load_checkpoint(req.checkpoint_path)
    if vision.role != "vision":
        raise ValueError(f"{req.checkpoint_path}: expected a vision checkpoint, got role {vision.role!r}")
    dataset = load_dataset(req.dataset_path)
    if req.split not in SPLIT_GROUPS:
        raise ValueError(f"unknown split {req.split!r}, expected one of {sorted(SPLIT_GROUPS)}")
    ids = dataset.ids(*SPLIT_GROUPS[req.split])
    k = dataset.config.num_categories
    preds_by_image = {}
    gts_by_image = {}
    for i in ids:
        s = dataset[i]
        preds_by_image[i] = vision_predict(
            vision, s.image, score_threshold=req.eval_score_floor, apply_nms=True, nms_iou=req.eval_nms_iou
        )
        gts_by_image[i] = s.annotation
    maps, per_class = mean_ap(preds_by_image, gts_by_image, k)
    auc = None
    per_auc: list[float | None] = []
    if req.report_checkpoint_path:
        report, _ = load_checkpoint(req.report_checkpoint_path)
        if report.role != "report":
            raise ValueError(f"{req.report_checkpoint_path}: expected a report checkpoint")
        scores = np.stack([report_predict(report, dataset[i].tokens) for i in ids])
        labels = np.stack([dataset[i].class_vector(k) for i in ids])
        auc, per_auc = macro_auc(scores, labels)
    record = MetricRecord(
        generation=-1,
        map_by_threshold=maps,
        per_class_ap=per_class,
        macro_auc=float("nan") if auc is None else auc,
        per_class_auc=per_auc,
    )
    d = record.as_dict()
    return EvalResponse(
        metrics=MetricRecordModel(
            generation=d["generation"],
            map_by_threshold=d["map"],
            per_class_ap=d["per_class_ap"],
            macro_auc=auc,
            per_class_auc=d["per_class_auc"],
        )
    )


def summarize(req: SummaryRequest) -> SummaryResponse:
    run_dir = Path(req.run_dir)
    metrics_path = run_dir / "metrics.json"
    if not metrics_path.exists():
        raise FileNotFoundError(f"{metrics_path}: no metrics.json in run directory")
    records = json.loads(metrics_path.read_text())
    rows = []
    for rec in records:
        rows.append(
            SummaryRow(
                generation=rec["generation"],
                map_25=rec["map"]["0.25"],
                map_50=rec["map"]["0.5"],
                map_75=rec["map"]["0.75"],
                macro_auc=rec["macro_auc"],
            )
        )
    rows.sort(key=lambda r: r.generation)
    lines = [f"{'gen':>4} {'mAP@0.25':>9} {'mAP@0.5':>9} {'mAP@0.75':>9} {'AUC':>7}"]
    for r in rows:
        lines.append(f"{r.generation:>4} {r.map_25:>9.4f} {r.map_50:>9.4f} {r.map_75:>9.4f} {r.macro_auc:>7.4f}")
    return SummaryResponse(rows=rows, text="\n".join(lines))
