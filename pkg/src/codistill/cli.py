"""Command-line client for the codistill service operations.

Every subcommand builds the same request model the HTTP API accepts and
either executes it in-process (default) or posts it to a running service
(`--server URL`). Configuration precedence: preset < --config file <
--set key=value < explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import PRESETS, RunConfig, apply_overrides, parse_config_text
from .service import ops
from .service.schemas import (
    AblateRequest,
    EvalRequest,
    GenDataRequest,
    RunConfigModel,
    SummaryRequest,
    TrainRequest,
)

logger = logging.getLogger(__name__)

_ENDPOINTS = {
    "gen-data": "/datasets/generate",
    "train": "/runs/train",
    "ablate": "/runs/ablate",
    "eval": "/eval",
    "report": "/runs/report",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="dotted-key config file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper", help="base config preset")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="base seed for data and training")
    p.add_argument("--out", default=None, help="output directory (or file for gen-data)")
    p.add_argument("--server", default=None, help="base URL of a running service; run remotely")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="path to a generated dataset file")
    p.add_argument("--generations", type=int, default=None)
    p.add_argument("--sa-nms", dest="sa_nms", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--rpdlr", dest="rpdlr", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--coevolve", dest="coevolve", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--baseline-tsd", action="store_true",
                   help="disable SA-NMS, RPDLR and co-evolution (plain distillation baseline)")
    p.add_argument("--iterations", type=int, default=None)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    config = PRESETS[args.preset]()
    if args.config:
        file_values = parse_config_text(open(args.config, encoding="utf-8").read())
        config = apply_overrides(config, file_values)
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        pairs[key.strip()] = parse_config_text(f"x = {value}")["x"]
    config = apply_overrides(config, pairs)
    flag_overrides: dict[str, object] = {}
    if args.seed is not None:
        flag_overrides["seed"] = args.seed
        flag_overrides["dataset.seed"] = args.seed
    if args.out is not None:
        flag_overrides["out_dir"] = args.out
    if getattr(args, "data", None):
        flag_overrides["dataset_path"] = args.data
    if getattr(args, "generations", None) is not None:
        flag_overrides["pipeline.generations"] = args.generations
    if getattr(args, "iterations", None) is not None:
        flag_overrides["pipeline.iterations"] = args.iterations
    for flag in ("sa_nms", "rpdlr", "coevolve"):
        value = getattr(args, flag, None)
        if value is not None:
            flag_overrides[f"pipeline.{flag}"] = value
    if getattr(args, "baseline_tsd", False):
        flag_overrides.update(
            {"pipeline.sa_nms": False, "pipeline.rpdlr": False, "pipeline.coevolve": False}
        )
    return apply_overrides(config, flag_overrides)


def _dispatch(args: argparse.Namespace, command: str, request, response_cls):
    if args.server:
        import httpx

        url = args.server.rstrip("/") + _ENDPOINTS[command]
        resp = httpx.post(url, json=json.loads(request.model_dump_json()), timeout=3600.0)
        if resp.status_code != 200:
            raise RuntimeError(f"{url} returned {resp.status_code}: {resp.text}")
        return response_cls.model_validate(resp.json())
    op = {
        "gen-data": ops.gen_data,
        "train": ops.train,
        "ablate": ops.ablate,
        "eval": ops.evaluate,
        "report": ops.summarize,
    }[command]
    return op(request)


# ----------------------------------------------------------------------
# Subcommand handlers.
# ----------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    config = build_run_config(args)
    if not args.out:
        print("gen-data requires --out PATH", file=sys.stderr)
        return 2
    from .service.schemas import DatasetSpecModel, GenDataResponse, NoiseSpecModel

    req = GenDataRequest(
        dataset=DatasetSpecModel.from_core(config.dataset),
        noise=NoiseSpecModel.from_core(config.noise),
        out_path=args.out,
    )
    resp = _dispatch(args, "gen-data", req, GenDataResponse)
    print(f"wrote {resp.num_samples} samples to {resp.path}")
    for split, count in resp.counts_by_split.items():
        print(f"  {split}: {count}")
    print(f"digest: {resp.digest}")
    return 0


def _cmd_train(args) -> int:
    config = build_run_config(args)
    req = TrainRequest(config=RunConfigModel.from_core(config))
    from .service.schemas import TrainResponse

    resp = _dispatch(args, "train", req, TrainResponse)
    for m in resp.metrics:
        print(
            f"generation {m.generation}: mAP@0.5 = {m.map_by_threshold['0.5']:.4f}, "
            f"macro-AUC = {m.macro_auc:.4f}"
        )
    print(f"metrics digest: {resp.metrics_digest}")
    if resp.manifest_path:
        print(f"manifest: {resp.manifest_path}")
    return 0


def _cmd_ablate(args) -> int:
    config = build_run_config(args)
    req = AblateRequest(config=RunConfigModel.from_core(config), repeats=args.repeats)
    from .service.schemas import AblateResponse

    resp = _dispatch(args, "ablate", req, AblateResponse)
    print(f"{'variant':<12} {'mAP@0.25':>12} {'mAP@0.5':>12} {'mAP@0.75':>12} {'AUC':>8}")
    for row in resp.rows:
        print(
            f"{row.name:<12} "
            f"{row.mean_map['0.25']:>7.4f}±{row.sd_map['0.25']:.3f} "
            f"{row.mean_map['0.5']:>7.4f}±{row.sd_map['0.5']:.3f} "
            f"{row.mean_map['0.75']:>7.4f}±{row.sd_map['0.75']:.3f} "
            f"{row.mean_auc:>8.4f}"
        )
    if resp.table_path:
        print(f"table: {resp.table_path}")
    return 0


def _cmd_eval(args) -> int:
    req = EvalRequest(
        checkpoint_path=args.checkpoint,
        dataset_path=args.data,
        split=args.split,
        report_checkpoint_path=args.report_checkpoint,
        eval_score_floor=args.score_floor,
        eval_nms_iou=args.nms_iou,
    )
    from .service.schemas import EvalResponse

    resp = _dispatch(args, "eval", req, EvalResponse)
    m = resp.metrics
    for thr in sorted(m.map_by_threshold, key=float):
        print(f"mAP@{thr}: {m.map_by_threshold[thr]:.4f}")
    if m.macro_auc is not None:
        print(f"macro-AUC: {m.macro_auc:.4f}")
    if args.out:
        from pathlib import Path

        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.json").write_text(m.model_dump_json(indent=2))
        print(f"wrote {args.out}/eval.json")
    return 0


def _cmd_report(args) -> int:
    req = SummaryRequest(run_dir=args.run)
    from .service.schemas import SummaryResponse

    resp = _dispatch(args, "report", req, SummaryResponse)
    print(resp.text)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="run the co-evolution training pipeline")
    _add_config_flags(p)
    _add_pipeline_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("ablate", help="run the four-variant ablation table")
    _add_config_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--repeats", type=int, default=1, help="paired seeds per variant")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True, help="vision checkpoint path")
    p.add_argument("--report-checkpoint", default=None, help="optional report checkpoint for AUC")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--score-floor", type=float, default=0.05)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.add_argument("--server", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("report", help="summarize a finished run's generation curves")
    p.add_argument("--run", required=True, help="run output directory")
    p.add_argument("--server", default=None)
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("serve", help="launch the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
