import json

import pytest
import yaml

from tutorloop import jsonio
from tutorloop.cli import main
from tutorloop.backends import generate_arithmetic_corpus


@pytest.fixture
def scripted_corpus(tmp_path):
    seeds = generate_arithmetic_corpus(10, rng_seed=0)
    path = tmp_path / "corpus.tsv"
    path.write_text(
        "".join(f"{s.text}\t{s.gold_answer}\n" for s in seeds), encoding="utf-8"
    )
    return path


@pytest.fixture
def run_config(tmp_path, scripted_corpus):
    cfg = {
        "corpus": str(scripted_corpus),
        "corpus_format": "plain",
        "n_levels": 3,
        "m_generalized": 2,
        "rng_seed": 0,
        "concurrency": 2,
        "output_dir": str(tmp_path / "run"),
        "backend": {"kind": "scripted", "error_rate": 0.0},
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


@pytest.fixture
def completed_run(run_config, tmp_path, capsys):
    assert main(["run", "--config", str(run_config)]) == 0
    capsys.readouterr()
    return tmp_path / "run"


class TestRun:
    def test_summary_reports_question_count(self, run_config, capsys):
        assert main(["run", "--config", str(run_config)]) == 0
        out = capsys.readouterr().out
        assert "questions: 90" in out
        assert "traces: 90" in out

    def test_outputs_exist(self, completed_run):
        for name in (
            "questions.jsonl",
            "traces.jsonl",
            "d_qa.jsonl",
            "d_qafr.jsonl",
            "config.json",
            "state.meta",
        ):
            assert (completed_run / name).exists()

    def test_rerun_is_idempotent(self, run_config, completed_run, capsys):
        before = (completed_run / "questions.jsonl").read_bytes()
        assert main(["run", "--config", str(run_config)]) == 0
        assert (completed_run / "questions.jsonl").read_bytes() == before

    def test_unknown_config_key_is_rejected(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("n_levles: 3\n", encoding="utf-8")
        assert main(["run", "--config", str(path)]) == 1
        assert "n_levles" in capsys.readouterr().err

    def test_unknown_nested_key_is_rejected(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("backend:\n  kind: scripted\n  modle: x\n", encoding="utf-8")
        assert main(["run", "--config", str(path)]) == 1
        assert "backend.modle" in capsys.readouterr().err

    def test_missing_api_key_fails_before_work(self, tmp_path, scripted_corpus, capsys, monkeypatch):
        monkeypatch.delenv("ABSENT_KEY", raising=False)
        cfg = {
            "corpus": str(scripted_corpus),
            "output_dir": str(tmp_path / "run"),
            "backend": {
                "kind": "remote",
                "base_url": "https://x",
                "model": "m",
                "api_key_env": "ABSENT_KEY",
            },
        }
        path = tmp_path / "remote.yaml"
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        assert main(["run", "--config", str(path)]) == 1
        assert "ABSENT_KEY" in capsys.readouterr().err
        assert not (tmp_path / "run" / "questions.jsonl").exists()


class TestCompile:
    def test_conservation(self, completed_run, tmp_path, capsys):
        out = tmp_path / "train.jsonl"
        assert (
            main(
                [
                    "compile",
                    "--qa",
                    str(completed_run / "d_qa.jsonl"),
                    "--qafr",
                    str(completed_run / "d_qafr.jsonl"),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        n_qa = len(jsonio.read_jsonl(completed_run / "d_qa.jsonl"))
        n_qafr = len(jsonio.read_jsonl(completed_run / "d_qafr.jsonl"))
        assert len(jsonio.read_jsonl(out)) == n_qa + 2 * n_qafr


class TestFilter:
    def test_filter_passes_clean_run(
        self, completed_run, scripted_corpus, tmp_path, capsys
    ):
        out = tmp_path / "filtered.jsonl"
        assert (
            main(
                [
                    "filter",
                    "--qa",
                    str(completed_run / "d_qa.jsonl"),
                    "--corpus",
                    str(scripted_corpus),
                    "--format",
                    "plain",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        # error_rate 0 run: every basic answer matches gold, nothing dropped
        assert len(jsonio.read_jsonl(out)) == 90


class TestSchedule:
    def test_quota_manifest(self, completed_run, tmp_path, capsys):
        train = tmp_path / "train.jsonl"
        main(
            [
                "compile",
                "--qa",
                str(completed_run / "d_qa.jsonl"),
                "--out",
                str(train),
            ]
        )
        shards = tmp_path / "shards"
        assert (
            main(
                [
                    "schedule",
                    "--train",
                    str(train),
                    "--ratio",
                    "0.8",
                    "--out",
                    str(shards),
                    "--seed",
                    "0",
                ]
            )
            == 0
        )
        manifest = jsonio.read_jsonl(shards / "manifest.json")[0]
        # 90 qa examples, 30 per level, shard size 30: 24 own / 3 / 3
        assert manifest["phases"][0]["level_counts"] == {"0": 24, "1": 3, "2": 3}
        assert (shards / "phase-0.jsonl").exists()
        assert (shards / "phase-2.jsonl").exists()

    def test_vanilla_single_shard(self, completed_run, tmp_path, capsys):
        train = tmp_path / "train.jsonl"
        main(
            ["compile", "--qa", str(completed_run / "d_qa.jsonl"), "--out", str(train)]
        )
        shards = tmp_path / "vanilla"
        assert (
            main(
                ["schedule", "--train", str(train), "--vanilla", "--out", str(shards)]
            )
            == 0
        )
        assert len(jsonio.read_jsonl(shards / "phase-0.jsonl")) == 90
        assert not (shards / "phase-1.jsonl").exists()


class TestSubset:
    def test_quarter(self, scripted_corpus, tmp_path, capsys):
        out = tmp_path / "subset.tsv"
        assert (
            main(
                [
                    "subset",
                    "--corpus",
                    str(scripted_corpus),
                    "--fraction",
                    "0.5",
                    "--out",
                    str(out),
                    "--seed",
                    "1",
                ]
            )
            == 0
        )
        lines = [l for l in out.read_text(encoding="utf-8").splitlines() if l]
        assert len(lines) == 5


class TestEval:
    def test_report(self, scripted_corpus, tmp_path, capsys):
        from tutorloop.evaluation import load_corpus

        items = load_corpus(scripted_corpus, "plain")
        completions = tmp_path / "completions.jsonl"
        rows = [
            {"id": item.id, "completion": f"The answer is {item.gold}."}
            for item in items[:9]
        ]
        completions.write_text(
            "".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8"
        )
        report_path = tmp_path / "report.json"
        assert (
            main(
                [
                    "eval",
                    "--completions",
                    str(completions),
                    "--corpus",
                    str(scripted_corpus),
                    "--format",
                    "plain",
                    "--out",
                    str(report_path),
                ]
            )
            == 0
        )
        out = capsys.readouterr().out
        assert "accuracy 0.9000" in out
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["total"] == 10
        assert report["correct"] == 9


class TestInspect:
    def test_lineage_and_trace(self, completed_run, capsys):
        questions = jsonio.read_jsonl(completed_run / "questions.jsonl")
        target = next(
            q["id"] for q in questions if q["level"] == 2 and q["variant"] == 1
        )
        assert main(["inspect", "--run", str(completed_run), "--id", target]) == 0
        out = capsys.readouterr().out
        assert "lineage" in out
        assert target in out
        assert "final answer" in out
        # full chain back to the seed: (2,1) -> (2,0) -> (1,0) -> (0,0)
        assert out.count("  [") == 4

    def test_unknown_id(self, completed_run, capsys):
        assert main(["inspect", "--run", str(completed_run), "--id", "nope"]) == 1
        assert "question not found" in capsys.readouterr().err
