"""CLI behavior: run/score/simulate/inspect/simdata, exit codes, manifests."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from ever.cli import main
from ever.trace import manifest_path


@pytest.fixture()
def runner():
    return CliRunner()


def make_dataset(tmp_path, task="shortqa", n=4, seed=5, facts=1) -> Path:
    runner = CliRunner()
    out = tmp_path / f"{task}.jsonl"
    result = runner.invoke(main, [
        "simdata", "--task", task, "--n", str(n), "--seed", str(seed),
        "--facts-per-topic", str(facts), "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    return out


def run_dataset(runner, tmp_path, dataset, extra=()):
    trace = tmp_path / "trace.jsonl"
    result = runner.invoke(main, [
        "run", "--task", "shortqa", "--mode", "nrg+sq", "--backend", "sim",
        "--dataset", str(dataset), "--out", str(trace), *extra,
    ])
    return result, trace


class TestRun:
    def test_writes_trace_and_manifest(self, runner, tmp_path):
        dataset = make_dataset(tmp_path)
        result, trace = run_dataset(runner, tmp_path, dataset)
        assert result.exit_code == 0, result.output
        lines = trace.read_text().strip().splitlines()
        assert len(lines) == 4
        assert all(json.loads(line)["schema"] == "ever-trace/1" for line in lines)
        manifest = json.loads(manifest_path(trace).read_text())
        assert manifest["schema"] == "ever-manifest/1"
        assert manifest["dataset_sha256"]
        assert manifest["prompts_revision"]
        assert manifest["config"]["task"] == "shortqa"

    def test_rerun_reproduces_trace_byte_for_byte(self, runner, tmp_path):
        dataset = make_dataset(tmp_path)
        _, trace_a = run_dataset(runner, tmp_path, dataset)
        first = trace_a.read_bytes()
        _, trace_b = run_dataset(runner, tmp_path, dataset)
        assert trace_b.read_bytes() == first

    def test_parallel_examples_identical_output(self, runner, tmp_path):
        dataset = make_dataset(tmp_path, n=6)
        _, trace_a = run_dataset(runner, tmp_path, dataset)
        serial = trace_a.read_bytes()
        result, trace_b = run_dataset(runner, tmp_path, dataset, extra=("--parallel", "4"))
        assert result.exit_code == 0
        assert trace_b.read_bytes() == serial

    def test_missing_dataset_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(main, [
            "run", "--task", "shortqa", "--mode", "nrg+sq",
            "--dataset", str(tmp_path / "absent.jsonl"),
            "--out", str(tmp_path / "t.jsonl"),
        ])
        assert result.exit_code == 2

    def test_unknown_mode_is_usage_error(self, runner, tmp_path):
        dataset = make_dataset(tmp_path)
        result = runner.invoke(main, [
            "run", "--task", "shortqa", "--mode", "telepathy",
            "--dataset", str(dataset), "--out", str(tmp_path / "t.jsonl"),
        ])
        assert result.exit_code == 2

    def test_backend_hard_error_marks_example_and_exits_1(self, runner, tmp_path, monkeypatch):
        monkeypatch.delenv("EVER_BASE_URL", raising=False)
        monkeypatch.delenv("EVER_MODEL", raising=False)
        dataset = make_dataset(tmp_path, n=2)
        trace = tmp_path / "trace.jsonl"
        # a wire backend with no endpoint configured fails hard per example;
        # the run continues and reports the failures
        result = runner.invoke(main, [
            "run", "--task", "shortqa", "--mode", "nrg+sq", "--backend", "wire",
            "--dataset", str(dataset), "--out", str(trace),
        ])
        assert result.exit_code == 1, result.output
        records = [json.loads(line) for line in trace.read_text().strip().splitlines()]
        assert len(records) == 2
        assert all(r["error"] for r in records)

    def test_config_file_layering(self, runner, tmp_path):
        dataset = make_dataset(tmp_path)
        config = tmp_path / "run.conf"
        config.write_text("# defaults\nseed = 9\nmax_rounds = 2\n")
        trace = tmp_path / "trace.jsonl"
        result = runner.invoke(main, [
            "run", "--task", "shortqa", "--mode", "nrg+sq", "--backend", "sim",
            "--dataset", str(dataset), "--out", str(trace),
            "--config", str(config), "--seed", "3",
        ])
        assert result.exit_code == 0, result.output
        manifest = json.loads(manifest_path(trace).read_text())
        assert manifest["seed"] == 3  # flag beats file
        assert manifest["config"]["max_rounds"] == 2  # file beats default


class TestScore:
    def score(self, runner, trace, dataset, *extra):
        return runner.invoke(main, ["score", str(trace), "--dataset", str(dataset), *extra])

    def test_clean_run_scores_and_writes_report(self, runner, tmp_path):
        dataset = make_dataset(tmp_path)
        _, trace = run_dataset(runner, tmp_path, dataset)
        result = self.score(runner, trace, dataset)
        assert result.exit_code == 0, result.output
        assert "accuracy" in result.output
        report = json.loads(Path(str(trace) + ".report.json").read_text())
        assert report["accuracy"] == 1.0
        assert report["N_all"] == 4

    def test_trace_without_manifest_refused(self, runner, tmp_path):
        dataset = make_dataset(tmp_path)
        _, trace = run_dataset(runner, tmp_path, dataset)
        manifest_path(trace).unlink()
        result = self.score(runner, trace, dataset)
        assert result.exit_code == 2
        assert "manifest" in result.output

    def test_empty_trace_refused(self, runner, tmp_path):
        dataset = make_dataset(tmp_path)
        trace = tmp_path / "empty.jsonl"
        trace.write_text("")
        result = self.score(runner, trace, dataset)
        assert result.exit_code == 2

    def test_id_mismatch_names_offender(self, runner, tmp_path):
        dataset = make_dataset(tmp_path, n=4)
        _, trace = run_dataset(runner, tmp_path, dataset)
        # drop one dataset record so one trace id has no gold
        lines = dataset.read_text().strip().splitlines()
        short = tmp_path / "short.jsonl"
        short.write_text("\n".join(lines[:3]) + "\n")
        result = self.score(runner, trace, short)
        assert result.exit_code == 2
        assert "sim-00003" in result.output


class TestSimulate:
    def test_small_study_prints_table_and_stat(self, runner, tmp_path):
        out = tmp_path / "snowball.json"
        result = runner.invoke(main, [
            "simulate", "--trials", "50", "--sentences", "5", "--seed", "2",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert "paired one-sided t-test" in result.output
        assert json.loads(out.read_text())["trials"] == 50

    def test_single_policy_table(self, runner):
        result = runner.invoke(main, [
            "simulate", "--trials", "30", "--sentences", "4", "--policy", "ever",
        ])
        assert result.exit_code == 0, result.output
        assert "index  rate" in result.output

    def test_probability_out_of_range_is_usage_error(self, runner):
        result = runner.invoke(main, ["simulate", "--p-intrinsic", "1.5"])
        assert result.exit_code == 2

    def test_zero_corruption_zero_errors_both_policies(self, runner):
        result = runner.invoke(main, [
            "simulate", "--trials", "20", "--sentences", "4",
            "--p-intrinsic", "0", "--p-extrinsic", "0",
        ])
        assert result.exit_code == 0
        for line in result.output.splitlines():
            if line.startswith("mean"):
                parts = line.split()
                assert float(parts[1]) == 0.0 and float(parts[2]) == 0.0


class TestInspect:
    def test_summarizes_each_example(self, runner, tmp_path):
        dataset = make_dataset(tmp_path, n=2)
        _, trace = run_dataset(runner, tmp_path, dataset)
        result = runner.invoke(main, ["inspect", str(trace)])
        assert result.exit_code == 0, result.output
        assert "sim-00000" in result.output and "answered" in result.output

    def test_single_example_detail(self, runner, tmp_path):
        dataset = make_dataset(tmp_path, n=2)
        _, trace = run_dataset(runner, tmp_path, dataset)
        result = runner.invoke(main, ["inspect", str(trace), "--example", "sim-00001"])
        assert result.exit_code == 0
        assert '"schema": "ever-trace/1"' in result.output


class TestSimdata:
    def test_reasoning_dataset_shape(self, runner, tmp_path):
        out = tmp_path / "reasoning.jsonl"
        result = runner.invoke(main, [
            "simdata", "--task", "reasoning", "--n", "3", "--out", str(out),
        ])
        assert result.exit_code == 0
        records = [json.loads(line) for line in out.read_text().strip().splitlines()]
        assert len(records) == 3
        assert all(len(r["gold"]) == 1 for r in records)
