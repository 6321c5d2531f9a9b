import json
import logging

import pytest
import yaml
from typer.testing import CliRunner

from cli import app
from gfsid.data_io import load_records
from gfsid.evaluation import EvalReport
from gfsid.gradient_suite import GRADIENT_CHECKS, fixture_project
from gfsid.training import EpochRecord

runner = CliRunner()


@pytest.fixture(autouse=True)
def _restore_root_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


def invoke(log_dir, *args):
    return runner.invoke(app, ["--log-dir", str(log_dir), *[str(a) for a in args]])


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    """Synthetic corpus, small YAML config and a phase-1 checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    logs = root / "logs"
    data = root / "corpus.jsonl"
    result = invoke(logs, "gen-data", "--out", data, "--seen", 3, "--novel", 2, "--per-intent", 30, "--seed", 4)
    assert result.exit_code == 0, result.output

    config = root / "small.yaml"
    config.write_text(yaml.safe_dump({
        "encoder": {"embedding_dim": 8, "hidden_dim": 8},
        "prototype_dim": 8,
        "batch_size": 8,
        "seed": 4,
    }))
    phase1 = root / "p1.ckpt"
    result = invoke(logs, "train", "--phase", 1, "--data", data, "--config", config, "--epochs", 2, "--out", phase1)
    assert result.exit_code == 0, result.output

    root_logger = logging.getLogger()
    for handler in list(root_logger.handlers):
        handler.close()
        root_logger.removeHandler(handler)
    return {"root": root, "logs": logs, "data": data, "config": config, "phase1": phase1}


def _phase2(workflow, mode):
    out = workflow["root"] / f"p2-{mode}.ckpt"
    if not out.exists():
        result = invoke(
            workflow["logs"], "train", "--phase", 2, "--from", workflow["phase1"], "--preserve", mode,
            "--k-shot", 2, "--epochs", 2, "--out", out,
        )
        assert result.exit_code == 0, result.output
    return out


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def test_gen_data_writes_corpus_and_manifest(tmp_path):
    out = tmp_path / "corpus.jsonl"
    result = invoke(tmp_path / "logs", "gen-data", "--out", out, "--seed", 9)
    assert result.exit_code == 0, result.output
    lines = out.read_text().splitlines()
    assert len(lines) == 600
    assert set(json.loads(lines[0])) == {"text", "label"}
    manifest = json.loads((tmp_path / "corpus.manifest.json").read_text())
    assert len(manifest["seen"]) == 8 and len(manifest["novel"]) == 4


def test_gen_data_is_bitwise_reproducible(tmp_path):
    for name in ("a", "b"):
        assert invoke(tmp_path / "logs", "gen-data", "--out", tmp_path / f"{name}.jsonl", "--seed", 3).exit_code == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_gen_data_rejects_out_of_range_counts(tmp_path):
    result = invoke(tmp_path / "logs", "gen-data", "--out", tmp_path / "x.jsonl", "--novel", 0)
    assert result.exit_code == 2


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def test_phase1_writes_checkpoint_and_epoch_report(workflow):
    report = load_records(workflow["root"] / "p1.ckpt.train.jsonl", EpochRecord)
    assert [r.epoch for r in report] == [1, 2]
    assert all(r.phase == 1 for r in report)


def test_phase1_checkpoint_is_deterministic(workflow):
    again = workflow["root"] / "p1-again.ckpt"
    result = invoke(
        workflow["logs"], "train", "--phase", 1, "--data", workflow["data"], "--config", workflow["config"],
        "--epochs", 2, "--out", again,
    )
    assert result.exit_code == 0, result.output
    assert again.read_bytes() == workflow["phase1"].read_bytes()


def test_phase2_and_nonepisodic_eval(workflow):
    ckpt = _phase2(workflow, "dakp")
    out = workflow["root"] / "dakp.eval.jsonl"
    result = invoke(workflow["logs"], "eval", "--from", ckpt, "--mode", "noneps", "--out", out)
    assert result.exit_code == 0, result.output
    report = load_records(out, EvalReport)[0]
    assert report.mode == "noneps"
    assert report.preservation == "dakp"
    assert set(report.per_intent) == {f"Intent{i:02d}" for i in range(5)}
    assert "overall" in result.output


def test_episodic_eval(workflow):
    ckpt = _phase2(workflow, "dakp")
    result = invoke(workflow["logs"], "eval", "--from", ckpt, "--mode", "eps", "--ways", 3, "--shots", 1, "--episodes", 5)
    assert result.exit_code == 0, result.output
    report = load_records(workflow["root"] / "p2-dakp.ckpt.eval.eps.jsonl", EvalReport)[0]
    assert report.episodes == 5
    assert report.n_queries == 5 * 3 * 5


def test_episodic_eval_requires_its_flags(workflow):
    ckpt = _phase2(workflow, "dakp")
    result = invoke(workflow["logs"], "eval", "--from", ckpt, "--mode", "eps", "--ways", 3)
    assert result.exit_code == 2


def test_phase2_requires_checkpoint_and_mode(workflow):
    out = workflow["root"] / "never.ckpt"
    assert invoke(workflow["logs"], "train", "--phase", 2, "--preserve", "none", "--out", out).exit_code == 2
    assert invoke(workflow["logs"], "train", "--phase", 2, "--from", workflow["phase1"], "--out", out).exit_code == 2
    assert not out.exists()


def test_phase2_rejects_a_different_seed(workflow):
    result = invoke(
        workflow["logs"], "train", "--phase", 2, "--from", workflow["phase1"], "--preserve", "none",
        "--seed", 99, "--out", workflow["root"] / "bad.ckpt",
    )
    assert result.exit_code == 1


def test_eval_reports_missing_checkpoint(workflow):
    result = invoke(workflow["logs"], "eval", "--from", workflow["root"] / "missing.ckpt")
    assert result.exit_code == 1
    assert "error:" in result.output


def test_eval_rejects_phase1_checkpoint(workflow):
    assert invoke(workflow["logs"], "eval", "--from", workflow["phase1"]).exit_code == 1


def test_compare_preservation_modes(workflow):
    paths = []
    for mode in ("none", "dakp"):
        out = workflow["root"] / f"cmp-{mode}.eval.jsonl"
        result = invoke(workflow["logs"], "eval", "--from", _phase2(workflow, mode), "--out", out)
        assert result.exit_code == 0, result.output
        paths.append(out)

    diag = workflow["root"] / "diag.jsonl"
    result = invoke(workflow["logs"], "compare", *paths, "--out", diag)
    assert result.exit_code == 0, result.output
    rows = [json.loads(line) for line in diag.read_text().splitlines()]
    assert [r["preservation"] for r in rows] == ["none", "dakp"]
    assert rows[0]["seen_delta"] == 0.0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def test_gradcheck_passes(tmp_path):
    result = invoke(tmp_path / "logs", "gradcheck", "--fixtures", 5)
    assert result.exit_code == 0, result.output
    assert "FAIL" not in result.output


def test_gradcheck_fails_on_corrupted_gradient(tmp_path, monkeypatch):
    def corrupted(rng, max_dims):
        f, analytic, params = fixture_project(rng, max_dims)
        return f, lambda: {k: -v for k, v in analytic().items()}, params

    monkeypatch.setitem(GRADIENT_CHECKS, "project", corrupted)
    result = invoke(tmp_path / "logs", "gradcheck", "--fixtures", 3, "--only", "project")
    assert result.exit_code == 1
    assert "FAIL" in result.output


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

def test_experiment_prints_diagnostics_and_writes_results(tmp_path):
    config = tmp_path / "tiny.yaml"
    config.write_text(yaml.safe_dump({
        "encoder": {"embedding_dim": 4, "hidden_dim": 4},
        "prototype_dim": 4,
        "batch_size": 4,
        "phase1_epochs": 1,
        "phase2_epochs": 1,
    }))
    out = tmp_path / "runs.jsonl"
    result = invoke(
        tmp_path / "logs", "experiment", "--seed", 1, "--k-shot", 1, "--seen", 2, "--novel", 1,
        "--per-intent", 10, "--config", config, "--out", out,
    )
    assert result.exit_code == 0, result.output
    runs = [json.loads(line) for line in out.read_text().splitlines()]
    assert sorted(r["preservation"] for r in runs) == ["dakp", "ddkp", "none"]
    assert "seed 1, 1-shot" in result.output


def test_experiment_adds_episodic_column(tmp_path):
    config = tmp_path / "tiny.yaml"
    config.write_text(yaml.safe_dump({
        "encoder": {"embedding_dim": 4, "hidden_dim": 4},
        "prototype_dim": 4,
        "batch_size": 4,
        "phase1_epochs": 1,
        "phase2_epochs": 1,
    }))
    out = tmp_path / "runs.jsonl"
    result = invoke(
        tmp_path / "logs", "experiment", "--seed", 1, "--k-shot", 1, "--seen", 2, "--novel", 1,
        "--per-intent", 40, "--episodes", 2, "--config", config, "--out", out,
    )
    assert result.exit_code == 0, result.output
    assert "episodic" in result.output
    runs = [json.loads(line) for line in out.read_text().splitlines()]
    assert all(r["episodic_accuracy"] is not None for r in runs)


def test_train_vocab_scope_pins_k_shot(workflow):
    config = workflow["root"] / "train-scope.yaml"
    config.write_text(yaml.safe_dump({**yaml.safe_load(workflow["config"].read_text()), "vocab_scope": "train"}))
    phase1 = workflow["root"] / "p1-train-scope.ckpt"
    result = invoke(
        workflow["logs"], "train", "--phase", 1, "--data", workflow["data"], "--config", config,
        "--epochs", 1, "--k-shot", 2, "--out", phase1,
    )
    assert result.exit_code == 0, result.output
    args = ["train", "--phase", 2, "--from", phase1, "--preserve", "none", "--epochs", 1]
    assert invoke(workflow["logs"], *args, "--k-shot", 1, "--out", workflow["root"] / "x.ckpt").exit_code == 1
    assert invoke(workflow["logs"], *args, "--k-shot", 2, "--out", workflow["root"] / "y.ckpt").exit_code == 0
