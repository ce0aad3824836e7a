import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

from rate_in.cli import cli
from rate_in.utils import read_table, write_table

REGRESSION = {
    "task": "regression",
    "seed": 5,
    "data": {"n_train": 40, "n_test": 20, "sigma": 0.1},
    "model": {"hidden": [8, 8], "epochs": 40},
    "ratein": {"n_max": 5},
    "mc": {"T": 5},
}


@pytest.fixture
def runner():
    return CliRunner()


def write_config(tmp_path, payload, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    return path


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def test_regression_flow(runner, tmp_path):
    out = tmp_path / "run"
    config = write_config(tmp_path, {**REGRESSION, "out": str(out)})

    result = invoke(runner, "train", "--config", config)
    assert result.exit_code == 0, result.output
    for name in ("train.csv", "test.csv", "loss_curve.csv", "model.json"):
        assert (out / name).is_file()
    assert len(read_table(out / "loss_curve.csv")) == 40

    result = invoke(runner, "ratein", "--config", config)
    assert result.exit_code == 0, result.output
    report = read_table(out / "ratein_report.csv")
    assert list(report["site_id"]) == ["h1", "h2"]

    # the saved report feeds the MC run unchanged
    mc_config = write_config(
        tmp_path,
        {**REGRESSION, "out": str(out), "policy": {"kind": "from-report", "report": str(out / "ratein_report.csv")}},
        "mc.yaml",
    )
    result = invoke(runner, "mc", "--config", mc_config)
    assert result.exit_code == 0, result.output
    summaries = read_table(out / "mc_summaries.csv")
    assert list(summaries.columns) == ["instance_id", "mu", "sigma", "lower", "upper"]
    assert len(summaries) == 20
    metrics = (out / "mc_metrics.csv").read_bytes()
    table = read_table(out / "mc_metrics.csv")
    assert set(table["metric"]) == {"mse", "picp", "width", "ier"}

    result = invoke(runner, "evaluate", "--config", mc_config)
    assert result.exit_code == 0, result.output
    assert (out / "mc_metrics.csv").read_bytes() == metrics


def test_identical_configs_give_identical_outputs(runner, tmp_path):
    trees = []
    for name in ("a", "b"):
        config = write_config(tmp_path, REGRESSION, f"{name}.yaml")
        out = tmp_path / name
        assert invoke(runner, "train", "--config", config, "--out", out).exit_code == 0
        assert invoke(runner, "mc", "--config", config, "--out", out).exit_code == 0
        trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert trees[0] == trees[1]


def test_seed_flag_changes_results(runner, tmp_path):
    config = write_config(tmp_path, REGRESSION)
    invoke(runner, "train", "--config", config, "--out", tmp_path / "a")
    invoke(runner, "train", "--config", config, "--out", tmp_path / "b", "--seed", 6)
    assert (tmp_path / "a" / "train.csv").read_bytes() != (tmp_path / "b" / "train.csv").read_bytes()


def test_classification_flow(runner, tmp_path):
    out = tmp_path / "blobs"
    payload = {
        "task": "classification",
        "out": str(out),
        "data": {"n_train": 60, "n_test": 30, "classes": 3},
        "model": {"hidden": [8], "epochs": 50},
        "policy": {"kind": "constant", "p": 0.2},
        "mc": {"T": 4},
    }
    config = write_config(tmp_path, payload)
    assert invoke(runner, "train", "--config", config).exit_code == 0
    result = invoke(runner, "mc", "--config", config)
    assert result.exit_code == 0, result.output
    summaries = read_table(out / "mc_summaries.csv")
    assert {"predicted", "uncertainty", "prob_0", "prob_2"} <= set(summaries.columns)
    assert set(read_table(out / "mc_metrics.csv")["metric"]) == {"acc", "auarc", "ece"}


def test_segmentation_flow(runner, tmp_path):
    out = tmp_path / "shapes"
    payload = {
        "task": "segmentation",
        "out": str(out),
        "data": {"grid_size": 16, "n_images": 2},
        "model": {"hidden": [6], "epochs": 30},
        "policy": {"kind": "rate-in", "p": 0.1},
        "ratein": {"estimator": "ssim", "n_max": 3, "per_instance": True},
        "mc": {"T": 3},
    }
    config = write_config(tmp_path, payload)
    assert invoke(runner, "train", "--config", config).exit_code == 0
    result = invoke(runner, "mc", "--config", config)
    assert result.exit_code == 0, result.output
    summaries = read_table(out / "mc_summaries.csv")
    assert len(summaries) == 2 * 16 * 16
    metrics = read_table(out / "mc_metrics.csv")
    assert set(metrics["scope"]) == {"image_0", "image_1", "all"}


def test_population_mode_writes_population_table(runner, tmp_path):
    out = tmp_path / "pop"
    payload = {
        **REGRESSION,
        "out": str(out),
        "ratein": {"n_max": 3, "per_instance": True, "population_mode": True, "reference": "layer-input"},
    }
    config = write_config(tmp_path, payload)
    assert invoke(runner, "train", "--config", config).exit_code == 0
    assert invoke(runner, "ratein", "--config", config).exit_code == 0
    report = read_table(out / "ratein_report.csv")
    assert report["instance_id"].nunique() == 20
    population = pd.read_csv(out / "ratein_population.csv", comment="#")
    assert list(population["site_id"]) == ["h1", "h2"]


def test_experiment_command(runner, tmp_path):
    payload = {
        "out": str(tmp_path / "exp"),
        "model": {"hidden": [6], "epochs": 20},
        "experiment": {"name": "layer-sensitivity", "repeats": 1, "n_train": 30, "n_test": 10, "rate_grid": [0.2], "mask_repeats": 2},
    }
    result = invoke(runner, "experiment", "--config", write_config(tmp_path, payload))
    assert result.exit_code == 0, result.output
    assert (tmp_path / "exp" / "layer-sensitivity_long.csv").is_file()


def test_dry_run_writes_nothing(runner, tmp_path):
    out = tmp_path / "dry"
    config = write_config(tmp_path, {**REGRESSION, "out": str(out)})
    result = invoke(runner, "train", "--config", config, "--dry-run")
    assert result.exit_code == 0
    assert "config valid" in result.output
    assert not out.exists()


USAGE_FAILURES = [
    ({"colour": "blue"}, "train"),
    ({"ratein": {"epsilon": 1.5}}, "train"),
    ({}, "ratein"),
    ({}, "evaluate"),
    ({}, "experiment"),
]


@pytest.mark.parametrize("payload, command", USAGE_FAILURES)
def test_usage_errors_exit_2(runner, tmp_path, payload, command):
    config = write_config(tmp_path, {**payload, "out": str(tmp_path / "empty")})
    result = invoke(runner, command, "--config", config)
    assert result.exit_code == 2
    assert "error" in result.output


def test_missing_config_file_exits_2(runner, tmp_path):
    assert invoke(runner, "train", "--config", tmp_path / "missing.yaml").exit_code == 2


def test_failure_during_work_exits_3(runner, tmp_path):
    payload = {**REGRESSION, "out": str(tmp_path / "boom"), "model": {"hidden": [4], "epochs": 5, "lr": 1e300}}
    result = invoke(runner, "train", "--config", write_config(tmp_path, payload))
    assert result.exit_code == 3
    assert "diverged" in result.output


def test_evaluate_rejects_a_summaries_table_without_spread(runner, tmp_path):
    out = tmp_path / "run"
    config = write_config(tmp_path, {**REGRESSION, "out": str(out)})
    assert invoke(runner, "train", "--config", config).exit_code == 0
    write_table(pd.DataFrame({"instance_id": range(20), "mu": [0.0] * 20}), out / "mc_summaries.csv")

    result = invoke(runner, "evaluate", "--config", config)
    assert result.exit_code == 2
    assert "not a regression summaries table" in result.output
    assert not (out / "mc_metrics.csv").exists()
