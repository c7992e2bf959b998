import json

import pytest
from typer.testing import CliRunner

from main import app
from schemas.acceptance.schemas import ACCEPTANCE_COLUMNS
from schemas.evaluation.schemas import EVAL_COLUMNS

runner = CliRunner()

TINY_MODEL = {"d_model": 8, "n_layers": 1, "n_heads": 2, "n_experts": 4, "top_k": 2, "d_ff": 8, "max_seq_len": 32}


def invoke(out, *args):
    return runner.invoke(app, ["--out", str(out), *args])


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def test_unknown_subcommand_exits_2(tmp_path):
    assert invoke(tmp_path, "train-everything").exit_code == 2


def test_unknown_config_key_exits_2(tmp_path):
    config = write_config(tmp_path / "bad.json", {"stages": 2, "no_such_key": 1})
    result = invoke(tmp_path, "--config", config, "plan-parallel")
    assert result.exit_code == 2


def test_unreadable_config_exits_2(tmp_path):
    (tmp_path / "broken.json").write_text("{not json", encoding="utf-8")
    result = invoke(tmp_path, "--config", str(tmp_path / "broken.json"), "gen-synthetic")
    assert result.exit_code == 2


def test_gen_synthetic_writes_manifest_and_metrics(tmp_path):
    result = invoke(tmp_path, "--seed", "4", "gen-synthetic", "--n-shards", "2", "--n-tokens", "500")
    assert result.exit_code == 0, result.output
    run_dir = tmp_path / "gen-synthetic"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "gen-synthetic"
    assert manifest["seed"] == 4
    assert manifest["config"]["n_shards"] == 2
    assert set(manifest) == {"command", "config", "seed", "git_describe", "metrics"}
    assert (run_dir / "metrics.csv").read_text().splitlines()[0] == "metric,value"
    assert (run_dir / "data" / "shard_01.npy").exists()


def test_plan_parallel_on_shipped_config(tmp_path):
    result = invoke(tmp_path, "plan-parallel")
    assert result.exit_code == 0, result.output
    metrics = json.loads((tmp_path / "plan-parallel" / "manifest.json").read_text())["metrics"]
    assert metrics["uneven_max_stage_time"] <= metrics["uniform_max_stage_time"]
    assert (tmp_path / "plan-parallel" / "trace_interleaved.csv").exists()


def test_acceptance_reruns_are_byte_identical(tmp_path):
    outputs = []
    for name in ("first", "second"):
        result = invoke(tmp_path / name, "--seed", "3", "acceptance", "--quick", "--criteria", "1,3,7")
        assert result.exit_code == 0, result.output
        outputs.append(tmp_path / name / "acceptance")
    first, second = outputs
    for filename in ("acceptance.csv", "metrics.csv", "manifest.json"):
        assert (first / filename).read_bytes() == (second / filename).read_bytes()
    lines = (first / "acceptance.csv").read_text().splitlines()
    assert lines[0] == ",".join(ACCEPTANCE_COLUMNS)
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "3", "7"]


@pytest.mark.parametrize("criteria", ["0", "14", "a,b"])
def test_acceptance_rejects_unknown_criteria(tmp_path, criteria):
    result = invoke(tmp_path, "acceptance", "--quick", "--criteria", criteria)
    assert result.exit_code == 2


def test_eval_without_suites_writes_header_only(tmp_path):
    config = write_config(tmp_path / "eval.json", {"model": TINY_MODEL, "suites": []})
    result = invoke(tmp_path, "--config", config, "eval")
    assert result.exit_code == 0, result.output
    assert (tmp_path / "eval" / "eval_report.csv").read_text() == ",".join(EVAL_COLUMNS) + "\n"


def test_pretrained_checkpoint_feeds_eval(tmp_path):
    pretrain = write_config(
        tmp_path / "pretrain.json",
        {
            "model": TINY_MODEL,
            "pretrain": {"steps": 2, "batch_size": 2, "seq_len": 16},
            "data": {"n_shards": 2, "n_tokens": 2000, "n_sft_records": 0},
            "eval_windows": 2,
        },
    )
    result = invoke(tmp_path, "--config", pretrain, "pretrain")
    assert result.exit_code == 0, result.output
    log = (tmp_path / "pretrain" / "train_log.csv").read_text().splitlines()
    assert len(log) == 3

    evaluation = write_config(
        tmp_path / "eval.json",
        {"suites": ["languages"], "data": {"n_shards": 2, "n_tokens": 2000, "n_sft_records": 0}, "seq_len": 16, "windows": 2},
    )
    result = invoke(
        tmp_path, "--config", evaluation, "eval", "--checkpoint", str(tmp_path / "pretrain" / "model")
    )
    assert result.exit_code == 0, result.output
    rows = (tmp_path / "eval" / "eval_report.csv").read_text().splitlines()
    assert len(rows) == 1 + 2


def test_missing_checkpoint_is_a_config_error(tmp_path):
    result = invoke(tmp_path, "eval", "--checkpoint", str(tmp_path / "nowhere"))
    assert result.exit_code == 2


def test_reward_training_reports_the_analytic_initial_loss(tmp_path):
    config = write_config(
        tmp_path / "rm.json",
        {"model": TINY_MODEL, "reward": {"margin": 0.5, "epochs": 1, "batch_size": 4}, "n_pairs": 8},
    )
    result = invoke(tmp_path, "--config", config, "rm-train")
    assert result.exit_code == 0, result.output
    metrics = json.loads((tmp_path / "rm-train" / "manifest.json").read_text())["metrics"]
    assert metrics["initial_loss"] == pytest.approx(metrics["initial_loss_expected"], abs=1e-6)
    assert metrics["n_train"] == 6 and metrics["n_heldout"] == 2
    assert (tmp_path / "rm-train" / "reward_model.bin").exists()
