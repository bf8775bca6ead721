"""CLI subcommands, flag precedence, and reproducibility of artifacts."""

import hashlib
import json

import pytest

from codistill.cli import build_parser, build_run_config, main


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


TINY = [
    "--set", "dataset.num_samples=200",
    "--set", "dataset.labeled_fraction=0.1",
    "--set", "dataset.eval_reserve=40",
    "--set", "dataset.grid_h=10",
    "--set", "dataset.grid_w=10",
    "--set", "dataset.vocab_size=60",
    "--set", "dataset.max_box_side=4.5",
    "--preset", "desk",
    "--set", "pipeline.iterations=25",
    "--set", "pipeline.teacher_iterations=25",
]


class TestConfigBuilding:
    def test_flags_override_file_and_preset(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("pipeline.generations = 5\nseed = 9\n")
        parser = build_parser()
        args = parser.parse_args(
            ["train", "--preset", "desk", "--config", str(cfg_file), "--generations", "1", "--seed", "3"]
        )
        cfg = build_run_config(args)
        assert cfg.pipeline.generations == 1  # flag beats file
        assert cfg.seed == 3
        assert cfg.dataset.seed == 3
        assert cfg.pipeline.iterations == 500  # preset survives where unoverridden

    def test_baseline_tsd_flag(self):
        parser = build_parser()
        args = parser.parse_args(["train", "--baseline-tsd"])
        cfg = build_run_config(args)
        assert not cfg.pipeline.sa_nms
        assert not cfg.pipeline.rpdlr
        assert not cfg.pipeline.coevolve

    def test_boolean_optional_flags(self):
        parser = build_parser()
        args = parser.parse_args(["train", "--no-sa-nms", "--rpdlr"])
        cfg = build_run_config(args)
        assert not cfg.pipeline.sa_nms
        assert cfg.pipeline.rpdlr

    def test_bad_set_pair_is_error(self, capsys):
        code, _, err = run_cli(["train", "--set", "oops"], capsys)
        assert code == 2
        assert "KEY=VALUE" in err


class TestGenData:
    def test_writes_and_reruns_identically(self, tmp_path, capsys):
        out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        base = ["gen-data", *TINY, "--seed", "2"]
        code, stdout, _ = run_cli(base + ["--out", str(out1)], capsys)
        assert code == 0
        assert "wrote 200 samples" in stdout
        code, _, _ = run_cli(base + ["--out", str(out2)], capsys)
        assert code == 0
        assert hashlib.sha256(out1.read_bytes()).digest() == hashlib.sha256(out2.read_bytes()).digest()

    def test_missing_out_is_error(self, capsys):
        code, _, err = run_cli(["gen-data"], capsys)
        assert code == 2
        assert "--out" in err


class TestTrainEvalReport:
    @pytest.fixture(scope="class")
    def run_dir(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("run")
        code = main(["train", *TINY, "--seed", "0", "--out", str(out)])
        assert code == 0
        return out

    def test_train_artifacts(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["kind"] == "codistill-run"
        assert manifest["config"]["pipeline.iterations"] == 25
        assert len(manifest["metrics"]) == 3
        assert (run_dir / "metrics.csv").exists()
        assert (run_dir / "checkpoints" / "gen2_student_vision.ckpt").exists()

    def test_generations_zero_evaluates_teachers_only(self, tmp_path, capsys):
        out = tmp_path / "run0"
        code, stdout, _ = run_cli(
            ["train", *TINY, "--seed", "0", "--generations", "0", "--out", str(out)], capsys
        )
        assert code == 0
        metric_lines = [l for l in stdout.splitlines() if l.startswith("generation ")]
        assert len(metric_lines) == 1
        manifest = json.loads((out / "manifest.json").read_text())
        assert [m["generation"] for m in manifest["metrics"]] == [0]

    def test_baseline_flag_recorded_in_manifest(self, tmp_path):
        out = tmp_path / "base"
        code = main(["train", *TINY, "--seed", "0", "--baseline-tsd", "--out", str(out)])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["profile"] == "baseline-tsd"
        assert manifest["config"]["pipeline.sa_nms"] is False
        assert manifest["config"]["pipeline.rpdlr"] is False
        assert manifest["config"]["pipeline.coevolve"] is False
        assert manifest["effective_generations"] == {"vision": 1, "report": 1}

    def test_eval_matches_library_call(self, run_dir, tmp_path, capsys):
        data = tmp_path / "data.jsonl"
        code, _, _ = run_cli(["gen-data", *TINY, "--seed", "0", "--out", str(data)], capsys)
        assert code == 0
        ckpt = run_dir / "checkpoints" / "gen2_student_vision.ckpt"
        code, stdout, _ = run_cli(
            ["eval", "--checkpoint", str(ckpt), "--data", str(data), "--split", "val"], capsys
        )
        assert code == 0
        assert "mAP@0.5" in stdout

        from codistill.evaluation import mean_ap
        from codistill.models import load_checkpoint, vision_predict
        from codistill.synthdata import load_dataset

        model, _ = load_checkpoint(ckpt)
        ds = load_dataset(data)
        ids = ds.ids("val", "eval_val")
        preds = {i: vision_predict(model, ds[i].image, 0.05, True, 0.5) for i in ids}
        gts = {i: ds[i].annotation for i in ids}
        maps, _ = mean_ap(preds, gts, ds.config.num_categories)
        assert f"mAP@0.5: {maps[0.5]:.4f}" in stdout

    def test_report_prints_generation_table(self, run_dir, capsys):
        code, stdout, _ = run_cli(["report", "--run", str(run_dir)], capsys)
        assert code == 0
        assert "gen" in stdout
        assert stdout.count("\n") >= 4

    def test_eval_arch_mismatch_is_error(self, run_dir, tmp_path, capsys):
        data = tmp_path / "bigger.jsonl"
        code, _, _ = run_cli(
            ["gen-data", "--preset", "desk", "--set", "dataset.num_samples=30",
             "--set", "dataset.labeled_fraction=0.5", "--set", "dataset.eval_reserve=0",
             "--out", str(data)],
            capsys,
        )
        assert code == 0
        ckpt = run_dir / "checkpoints" / "gen2_student_vision.ckpt"
        code, _, err = run_cli(
            ["eval", "--checkpoint", str(ckpt), "--data", str(data), "--split", "val"], capsys
        )
        assert code == 2
        assert "error" in err


class TestServerMode:
    def test_gen_data_through_live_server(self, tmp_path, capsys):
        import socket
        import subprocess
        import sys
        import time

        import httpx

        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        proc = subprocess.Popen(
            [sys.executable, "-m", "uvicorn", "codistill.service.app:app", "--port", str(port)],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        try:
            base = f"http://127.0.0.1:{port}"
            for _ in range(100):
                try:
                    if httpx.get(base + "/health", timeout=1.0).status_code == 200:
                        break
                except httpx.TransportError:
                    time.sleep(0.1)
            else:
                pytest.fail("service did not come up")
            out = tmp_path / "remote.jsonl"
            code, stdout, _ = run_cli(
                ["gen-data", "--server", base,
                 "--set", "dataset.num_samples=30", "--set", "dataset.labeled_fraction=0.5",
                 "--set", "dataset.eval_reserve=0", "--seed", "1", "--out", str(out)],
                capsys,
            )
            assert code == 0
            assert "wrote 30 samples" in stdout
            assert out.exists()
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestAblateCommand:
    def test_single_repeat_table(self, tmp_path, capsys):
        out = tmp_path / "abl"
        args = ["ablate", *TINY, "--seed", "0", "--repeats", "1",
                "--set", "pipeline.iterations=12", "--set", "pipeline.teacher_iterations=12",
                "--out", str(out)]
        code, stdout, _ = run_cli(args, capsys)
        assert code == 0
        for name in ("baseline", "rpdlr", "coe_apclr", "sa_nms"):
            assert name in stdout
        assert (out / "ablation.csv").exists()
        assert (out / "ablation.json").exists()
        rows = (out / "ablation.csv").read_text().splitlines()
        assert rows[0].startswith("variant,")
        assert len(rows) == 5
