"""
Run configuration: one YAML file per run, validated up front.

    version: 1
    task: regression            # regression | classification | segmentation
    seed: 123
    out: results/regression
    data:   {n_train: 100, n_test: 100, sigma: 0.1}
    model:  {hidden: [50, 50], epochs: 1000, lr: 0.01}
    policy: {kind: rate-in, p: 0.1}
    ratein: {epsilon: 0.1, delta: 0.01, n_max: 30}
    mc:     {T: 30, z: 1.96}
    experiment: {name: noise-sweep, repeats: 5}

Unknown keys anywhere are rejected. CLI flags override ``seed``, ``workers`` and
``out``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from Config.settings import get_settings

from .exceptions import ConfigError
from .info import InfoLossSpec, MIEstimatorConfig
from .ratein import RateInConfig
from .utils import config_hash, provenance_line

EXPERIMENT_NAMES = ("noise-sweep", "size-sweep", "convergence", "layer-sensitivity", "timing")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Section):
    n_train: int = Field(100, ge=1)
    n_test: int = Field(100, ge=1)
    sigma: float = Field(0.1, ge=0.0)
    classes: int = Field(2, ge=2)
    separation: float = Field(4.0, ge=0.0)
    grid_size: int = Field(32, ge=16)
    n_images: int = Field(8, ge=1)
    noise: float = Field(0.1, ge=0.0)
    blur: float = Field(1.0, ge=0.0)
    # explicit dataset CSVs; default to the files `train` writes into the output dir
    train_path: Path | None = None
    test_path: Path | None = None


class ModelSection(_Section):
    path: Path | None = None
    hidden: list[int] = Field(default_factory=lambda: [50, 50])
    epochs: int = Field(1000, ge=0)
    lr: float = Field(0.01, gt=0.0)

    @field_validator("hidden")
    @classmethod
    def _positive(cls, value: list[int]) -> list[int]:
        if not value or any(w < 1 for w in value):
            raise ValueError("hidden needs at least one positive layer width")
        return value


class RateInSection(_Section):
    estimator: Literal["mi", "ssim"] = "mi"
    mi_mode: Literal["fixed-bins", "entropy-equal-bins"] = "fixed-bins"
    bins: int = Field(30, ge=2)
    normalization: Literal["minmax", "none"] = "minmax"
    reference: Literal["network-input", "layer-input"] = "network-input"
    epsilon: float | None = None
    delta: float = Field(0.01, gt=0.0)
    p_init: float | None = None
    n_max: int = Field(30, ge=1)
    lr: float = Field(0.9, gt=0.0)
    mask_samples: int = Field(1, ge=1)
    p_min: float = 0.0
    p_max: float = 0.95
    epsilon_by_site: dict[str, float] | None = None
    per_instance: bool = False
    population_mode: bool = False

    @field_validator("epsilon")
    @classmethod
    def _open_unit(cls, value: float | None) -> float | None:
        if value is not None and not 0.0 < value < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {value}")
        return value

    def build(self, seed: int, epsilon: float | None = None, p_init: float | None = None, n_max: int | None = None) -> RateInConfig:
        """Library config; ``epsilon`` / ``p_init`` fall back to this section, then to 0.1."""
        eps = epsilon if epsilon is not None else (self.epsilon if self.epsilon is not None else 0.1)
        start = p_init if p_init is not None else (self.p_init if self.p_init is not None else eps)
        spec = InfoLossSpec(
            estimator=self.estimator,
            mi=MIEstimatorConfig(mode=self.mi_mode, bin_count=self.bins, normalization=self.normalization),
            reference=self.reference,
            epsilon=eps,
            delta=self.delta,
        )
        return RateInConfig(
            spec=spec,
            p_init=min(max(start, self.p_min), self.p_max),
            n_max=n_max or self.n_max,
            lr=self.lr,
            mask_samples=self.mask_samples,
            p_min=self.p_min,
            p_max=self.p_max,
            epsilon_by_site=self.epsilon_by_site,
            seed=seed,
        )


class PolicySpec(_Section):
    """Declarative dropout policy; resolved against a trained network at run time."""

    kind: Literal["constant", "scheduled", "activation", "rate-in", "from-report", "from-population"] = "constant"
    p: float = Field(0.1, ge=0.0, lt=1.0)
    # rate-in: target loss, defaults to p
    epsilon: float | None = None
    report: Path | None = None

    @model_validator(mode="after")
    def _needs_file(self) -> "PolicySpec":
        if self.kind in ("from-report", "from-population") and self.report is None:
            raise ValueError(f"policy kind {self.kind!r} needs a report path")
        if self.epsilon is not None and not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        return self

    @property
    def label(self) -> str:
        if self.kind == "rate-in":
            return f"rate-in(eps={self.epsilon if self.epsilon is not None else self.p})"
        if self.kind in ("from-report", "from-population"):
            return self.kind
        return f"{self.kind}(p={self.p})"


class McSection(_Section):
    T: int = Field(30, ge=2)
    z: float = Field(1.96, gt=0.0)
    retain_passes: bool = False


class TimingSection(_Section):
    p_inits: list[float] = Field(default_factory=lambda: [0.05, 0.2, 0.35, 0.5, 0.7])
    epsilons: list[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5])
    instance_counts: list[int] = Field(default_factory=lambda: [10, 100, 1000])
    sigmas: list[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5])
    p_init: float = 0.1
    epsilon: float = 0.1
    n: int = 100
    sigma: float = 0.1


class ExperimentSpec(_Section):
    name: str
    repeats: int = Field(5, ge=1)
    sigmas: list[float] = Field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    sizes: list[int] = Field(default_factory=lambda: [25, 50, 100, 200])
    size_sigma: float = 0.01
    n_train: int = Field(100, ge=1)
    n_test: int = Field(100, ge=4)
    policies: list[PolicySpec] = Field(
        default_factory=lambda: [PolicySpec(kind="constant", p=0.1), PolicySpec(kind="rate-in", p=0.1)]
    )
    # convergence study
    epsilons: list[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5])
    p_inits: list[float] = Field(default_factory=lambda: [0.05, 0.2, 0.35, 0.5, 0.7])
    convergence_sigma: float = 0.5
    convergence_n_max: int = Field(100, ge=1)
    # layer sensitivity
    sensitivity_sigma: float = 0.1
    rate_grid: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])
    estimators: list[Literal["mi", "ssim"]] = Field(default_factory=lambda: ["mi", "ssim"])
    mask_repeats: int = Field(30, ge=1)
    timing: TimingSection = TimingSection()

    @field_validator("name")
    @classmethod
    def _known(cls, value: str) -> str:
        if value not in EXPERIMENT_NAMES:
            raise ValueError(f"unknown experiment {value!r}; valid names: {', '.join(EXPERIMENT_NAMES)}")
        return value

    @model_validator(mode="after")
    def _per_experiment(self) -> "ExperimentSpec":
        if self.name in ("noise-sweep", "size-sweep"):
            kinds = {p.kind for p in self.policies}
            if len(self.policies) < 2 or not {"rate-in", "constant"} <= kinds:
                raise ValueError("sweeps need at least two policies, including rate-in and constant")
            if any(p.kind in ("from-report", "from-population") for p in self.policies):
                raise ValueError("sweeps train a fresh network per cell; report-based policies cannot be used")
        if self.name == "convergence" and len(self.p_inits) < 5:
            raise ValueError("convergence study needs at least 5 p_init values")
        if self.name == "layer-sensitivity" and any(not 0.0 < r <= 0.95 for r in self.rate_grid):
            raise ValueError("rate_grid values must lie in (0, 0.95]")
        for eps in self.epsilons:
            if not 0.0 < eps < 1.0:
                raise ValueError(f"epsilon must be in (0, 1), got {eps}")
        return self


class RunConfig(_Section):
    version: Literal[1] = 1
    task: Literal["regression", "classification", "segmentation"] = "regression"
    seed: int = Field(default_factory=lambda: get_settings().seed)
    workers: int = Field(default_factory=lambda: get_settings().workers, ge=1)
    log_level: str | None = None
    out: Path = Path("results")
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    policy: PolicySpec = PolicySpec()
    ratein: RateInSection = RateInSection()
    mc: McSection = McSection()
    experiment: ExperimentSpec | None = None

    @model_validator(mode="after")
    def _cross_checks(self) -> "RunConfig":
        r = self.ratein
        if r.per_instance and self.task != "segmentation" and r.estimator == "mi" and r.reference == "network-input":
            raise ValueError(
                "per-instance rate-in on single rows needs ratein.reference 'layer-input' or estimator 'ssim' "
                "(network-input MI needs a batch)"
            )
        return self

    @property
    def model_path(self) -> Path:
        return self.model.path or self.out / "model.json"

    def dataset_path(self, split: Literal["train", "test"]) -> Path:
        explicit = self.data.train_path if split == "train" else self.data.test_path
        return explicit or self.out / f"{split}.csv"


def load_run_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read, merge CLI overrides into, and validate a run config."""
    raw: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.model_validate(raw)


def run_digest(config: RunConfig) -> str:
    """Config hash over the fields that affect results (not workers, log level or output dir)."""
    return config_hash(config.model_dump(mode="json", exclude={"workers", "log_level", "out"}))


def provenance_for(config: RunConfig) -> str:
    return provenance_line(run_digest(config), config.seed)
