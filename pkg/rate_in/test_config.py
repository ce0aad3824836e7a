from pathlib import Path

import pytest
from pydantic import ValidationError

from rate_in.config import (
    ExperimentSpec,
    PolicySpec,
    RateInSection,
    RunConfig,
    load_run_config,
    provenance_for,
    run_digest,
)
from rate_in.exceptions import ConfigError


def _write(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_without_a_file():
    config = load_run_config(None)
    assert config.version == 1
    assert config.task == "regression"
    assert config.model.hidden == [50, 50]
    assert config.mc.T == 30
    assert config.model_path == Path("results") / "model.json"
    assert config.dataset_path("test") == Path("results") / "test.csv"


def test_file_values_and_overrides(tmp_path):
    path = _write(tmp_path, "seed: 7\nout: runs/a\nmc: {T: 10}\nratein: {epsilon: 0.2}\n")
    config = load_run_config(path, {"seed": 11, "workers": None})
    assert config.seed == 11
    assert config.out == Path("runs/a")
    assert config.mc.T == 10
    assert config.ratein.epsilon == 0.2


INVALID_YAML = [
    "colour: blue\n",
    "mc: {T: 1}\n",
    "ratein: {epsilon: 1.0}\n",
    "ratein: {epsilon: 0.0}\n",
    "version: 2\n",
    "task: detection\n",
    "policy: {kind: from-report}\n",
    "ratein: {per_instance: true}\n",
    "experiment: {name: warp-speed}\n",
    "experiment: {name: noise-sweep, policies: [{kind: constant}]}\n",
    "experiment: {name: convergence, p_inits: [0.1, 0.2]}\n",
    "experiment: {name: layer-sensitivity, rate_grid: [0.0, 0.1]}\n",
]


@pytest.mark.parametrize("text", INVALID_YAML)
def test_invalid_configs_rejected(tmp_path, text):
    with pytest.raises(ValidationError):
        load_run_config(_write(tmp_path, text))


def test_per_instance_allowed_with_a_row_reference(tmp_path):
    config = load_run_config(_write(tmp_path, "ratein: {per_instance: true, reference: layer-input}\n"))
    assert config.ratein.per_instance


@pytest.mark.parametrize("text", ["mc: [unclosed\n", "- just\n- a list\n"])
def test_unreadable_files(tmp_path, text):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "nope.yaml")


def test_digest_ignores_run_plumbing():
    base = RunConfig(seed=5)
    assert run_digest(base) == run_digest(RunConfig(seed=5, workers=4, out=Path("elsewhere"), log_level="DEBUG"))
    assert run_digest(base) != run_digest(RunConfig(seed=6))
    assert provenance_for(base) == f"rate-in config_hash={run_digest(base)} seed=5"


def test_ratein_section_builds_library_config():
    section = RateInSection(estimator="ssim", epsilon=0.3, bins=20, n_max=12, p_max=0.5)
    cfg = section.build(seed=9)
    assert cfg.spec.estimator == "ssim"
    assert cfg.spec.epsilon == 0.3
    assert cfg.spec.mi.bin_count == 20
    assert cfg.p_init == 0.3
    assert cfg.n_max == 12
    assert cfg.seed == 9
    # initial rate is clamped into the rate bounds
    assert section.build(seed=9, p_init=0.9).p_init == 0.5
    assert RateInSection().build(seed=1).spec.epsilon == 0.1


def test_policy_labels():
    assert PolicySpec(kind="constant", p=0.2).label == "constant(p=0.2)"
    assert PolicySpec(kind="rate-in", p=0.1).label == "rate-in(eps=0.1)"
    assert PolicySpec(kind="rate-in", p=0.1, epsilon=0.3).label == "rate-in(eps=0.3)"
    assert PolicySpec(kind="from-report", report=Path("r.csv")).label == "from-report"


def test_sweeps_cannot_use_saved_reports():
    with pytest.raises(ValidationError):
        ExperimentSpec(
            name="noise-sweep",
            policies=[
                PolicySpec(kind="constant"),
                PolicySpec(kind="rate-in"),
                PolicySpec(kind="from-report", report=Path("r.csv")),
            ],
        )
