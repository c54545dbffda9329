import filecmp
import json

import pytest

from hoirefine.cli import main

from conftest import fixture_path


def run_refine(tmp_path, name, cache=None):
    out = tmp_path / name
    argv = [
        "refine",
        "--config", fixture_path("config.json"),
        "--predictions", fixture_path("predictions.jsonl"),
        "--vocab", fixture_path("vocab.txt"),
        "--out", str(out),
    ]
    if cache:
        argv += ["--cache-dir", str(cache)]
    return main(argv), out


class TestRefine:
    def test_exit_zero_and_output_written(self, tmp_path, capsys):
        code, out = run_refine(tmp_path, "refined.jsonl", tmp_path / "cache")
        assert code == 0
        assert out.exists()
        stdout = capsys.readouterr().out
        assert "run summary:" in stdout
        assert "debates run:" in stdout

    def test_consecutive_runs_byte_identical(self, tmp_path):
        code_a, out_a = run_refine(tmp_path, "a.jsonl", tmp_path / "cache_a")
        code_b, out_b = run_refine(tmp_path, "b.jsonl", tmp_path / "cache_b")
        assert code_a == code_b == 0
        assert filecmp.cmp(out_a, out_b, shallow=False)

    def test_missing_config_exits_one(self, tmp_path):
        code = main([
            "refine",
            "--config", str(tmp_path / "nope.json"),
            "--predictions", fixture_path("predictions.jsonl"),
            "--vocab", fixture_path("vocab.txt"),
            "--out", str(tmp_path / "o.jsonl"),
        ])
        assert code == 1

    def test_invalid_config_exits_one(self, tmp_path):
        bad = tmp_path / "config.json"
        bad.write_text(json.dumps({"providers": [], "judge_provider": "x"}))
        code = main([
            "refine",
            "--config", str(bad),
            "--predictions", fixture_path("predictions.jsonl"),
            "--vocab", fixture_path("vocab.txt"),
            "--out", str(tmp_path / "o.jsonl"),
        ])
        assert code == 1

    def test_missing_api_key_exits_two(self, tmp_path, monkeypatch):
        monkeypatch.delenv("HOIREFINE_TEST_KEY", raising=False)
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({
            "providers": [{
                "id": "remote", "kind": "http",
                "endpoint": "http://localhost:1/v1/chat",
                "api_key_env": "HOIREFINE_TEST_KEY",
                "max_retries": 0, "backoff_base": 0.001,
            }],
            "judge_provider": "remote",
            "keyframe_interval": 4,
        }))
        code = main([
            "refine",
            "--config", str(cfg),
            "--predictions", fixture_path("predictions.jsonl"),
            "--vocab", fixture_path("vocab.txt"),
            "--out", str(tmp_path / "o.jsonl"),
        ])
        assert code == 2


class TestEval:
    def test_baseline_recall_printed(self, capsys):
        code = main([
            "eval",
            "--refined", fixture_path("predictions.jsonl"),
            "--gt", fixture_path("gt.jsonl"),
            "--vocab", fixture_path("vocab.txt"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "R@10" in out and "R@20" in out and "R@50" in out

    def test_custom_k_and_report(self, tmp_path, capsys):
        report = tmp_path / "report.json"
        code = main([
            "eval",
            "--refined", fixture_path("predictions.jsonl"),
            "--gt", fixture_path("gt.jsonl"),
            "--vocab", fixture_path("vocab.txt"),
            "--k", "5",
            "--report", str(report),
        ])
        assert code == 0
        data = json.loads(report.read_text())
        assert set(data["recall"]) == {"5"}
        assert data["threshold"] == 0.3

    def test_missing_gt_exits_one(self, tmp_path):
        code = main([
            "eval",
            "--refined", fixture_path("predictions.jsonl"),
            "--gt", str(tmp_path / "nope.jsonl"),
            "--vocab", fixture_path("vocab.txt"),
        ])
        assert code == 1


class TestAblate:
    def test_grid_and_report(self, tmp_path, capsys):
        report = tmp_path / "ablation.jsonl"
        code = main([
            "ablate",
            "--config", fixture_path("config.json"),
            "--predictions", fixture_path("predictions.jsonl"),
            "--vocab", fixture_path("vocab.txt"),
            "--gt", fixture_path("gt.jsonl"),
            "--cache-dir", str(tmp_path / "cache"),
            "--out", str(report),
        ])
        assert code == 0
        rows = [json.loads(ln) for ln in report.read_text().splitlines()]
        # baseline plus every on/off combination of the four components
        assert len(rows) == 1 + 16
        assert rows[0]["label"] == "baseline"
        assert (tmp_path / "ablation.jsonl.txt").exists()
        stdout = capsys.readouterr().out
        assert "configuration" in stdout


class TestGradcheck:
    def test_fixture_batch_passes(self, capsys):
        code = main(["gradcheck", "--batch", fixture_path("embedding_batch.jsonl")])
        assert code == 0
        assert "gradient check passed" in capsys.readouterr().out

    def test_bad_step_exits_one(self):
        code = main(["gradcheck", "--batch", fixture_path("embedding_batch.jsonl"),
                     "--h=-1e-5"])
        assert code == 1

    def test_corrupt_batch_exits_one(self, tmp_path):
        bad = tmp_path / "batch.jsonl"
        bad.write_text("not json\n")
        code = main(["gradcheck", "--batch", str(bad)])
        assert code == 1
