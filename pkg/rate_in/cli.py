"""
Command-line interface: ``python manage.py <command> --config run.yaml``.

    train       train the task network, save model + datasets + loss curve
    ratein      adapt dropout rates with Rate-In, save per-site reports
    mc          MC-dropout inference under the configured policy + metrics
    evaluate    recompute the metric table from saved MC summaries
    experiment  run one of the experiment studies

Exit codes: 0 success, 2 invalid config / usage / missing or malformed files,
3 failure while working.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from Config.settings import get_settings

from .config import RunConfig, load_run_config, provenance_for, run_digest
from .data import (
    gen_blobs,
    gen_regression_splits,
    gen_shapes,
    load_classification_csv,
    load_regression_csv,
    load_shapes_csv,
    save_classification_csv,
    save_regression_csv,
    save_shapes_csv,
    shapes_to_pixels,
)
from .exceptions import ConfigError, PersistenceError, RateDomainError, ShapeError
from .experiments import build_policy, run_experiment
from .mc import load_summary, mc_classify, mc_run, save_summaries
from .metrics import classification_report, regression_report, segmentation_report
from .nn import (
    Network,
    classifier_architecture,
    load_network,
    regression_architecture,
    save_network,
    train_classifier,
    train_regression,
)
from .policies import DropoutPolicy, policy_from_report
from .ratein import RateInConfig, adapt_rates_batch, load_reports, save_population, save_reports
from .utils import check_writable_dir, derive_seed, read_table, write_table

logger = logging.getLogger(__name__)

USAGE_ERRORS = (ConfigError, PersistenceError, ShapeError, RateDomainError, ValidationError)

SUMMARIES_FILE = "mc_summaries.csv"
METRICS_FILE = "mc_metrics.csv"
REPORT_FILE = "ratein_report.csv"
POPULATION_FILE = "ratein_population.csv"


def configure_logging(level: str | None = None) -> None:
    level = (level or get_settings().log).upper()
    logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    logging.getLogger("rate_in").setLevel(level)


def _describe(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "config"
        return f"{where}: {first['msg']}"
    return str(exc).splitlines()[0] if str(exc) else type(exc).__name__


# ---------------------------------------------------------------- datasets


def _test_data(config: RunConfig, split: str = "test") -> Any:
    path = config.dataset_path(split)
    if config.task == "regression":
        return load_regression_csv(path)
    if config.task == "classification":
        return load_classification_csv(path)
    return load_shapes_csv(path)


def _instances(config: RunConfig, dataset: Any) -> list[np.ndarray]:
    """Rate-In instances: the whole split, or its rows / images one by one."""
    if not config.ratein.per_instance:
        return [_pooled_inputs(config, dataset)]
    if config.task == "segmentation":
        return [shapes_to_pixels([s])[0] for s in dataset]
    return list(_pooled_inputs(config, dataset))


def _pooled_inputs(config: RunConfig, dataset: Any) -> np.ndarray:
    if config.task == "segmentation":
        return shapes_to_pixels(dataset)[0]
    return dataset.inputs if config.task == "regression" else dataset.x


# ---------------------------------------------------------------- commands


def cmd_train(config: RunConfig) -> list[Path]:
    provenance = provenance_for(config)
    m, d, seed = config.model, config.data, config.seed
    out = config.out
    paths = []
    if config.task == "regression":
        train, test = gen_regression_splits(d.n_train, d.n_test, d.sigma, seed)
        net, history = train_regression(
            train.inputs, train.y, regression_architecture(m.hidden), m.epochs, m.lr, seed, return_history=True
        )
        paths += [save_regression_csv(train, out / "train.csv", provenance), save_regression_csv(test, out / "test.csv", provenance)]
    elif config.task == "classification":
        train = gen_blobs(d.n_train, d.classes, d.separation, derive_seed(seed, 0))
        test = gen_blobs(d.n_test, d.classes, d.separation, derive_seed(seed, 1))
        net, history = train_classifier(
            train.x, train.labels, classifier_architecture(2, d.classes, m.hidden), m.epochs, m.lr, seed, return_history=True
        )
        paths += [
            save_classification_csv(train, out / "train.csv", provenance),
            save_classification_csv(test, out / "test.csv", provenance),
        ]
    else:
        train = gen_shapes(d.grid_size, derive_seed(seed, 0), d.n_images, d.noise, d.blur)
        test = gen_shapes(d.grid_size, derive_seed(seed, 1), d.n_images, d.noise, d.blur)
        features, labels = shapes_to_pixels(train)
        net, history = train_classifier(
            features, labels, classifier_architecture(1, 2, m.hidden), m.epochs, m.lr, seed, return_history=True
        )
        paths += [save_shapes_csv(train, out / "train.csv", provenance), save_shapes_csv(test, out / "test.csv", provenance)]

    curve = pd.DataFrame({"epoch": np.arange(1, len(history) + 1), "loss": history})
    paths.append(write_table(curve, out / "loss_curve.csv", provenance))
    meta = {"config_hash": run_digest(config), "seed": seed, "task": config.task}
    paths.append(save_network(net, config.model_path, provenance=meta))
    if len(history):
        logger.info("✅ trained %s network for %d epochs, final loss %.5f", config.task, len(history), history[-1])
    else:
        logger.info("✅ saved untrained %s network (epochs=0)", config.task)
    return paths


def _adapt(config: RunConfig, net: Network, dataset: Any, cfg: RateInConfig | None = None):
    cfg = cfg or config.ratein.build(config.seed)
    return adapt_rates_batch(
        net,
        _instances(config, dataset),
        cfg,
        population_mode=config.ratein.population_mode,
        workers=config.workers,
        progress=get_settings().progress,
    )


def cmd_ratein(config: RunConfig) -> list[Path]:
    provenance = provenance_for(config)
    net = load_network(config.model_path)
    batch = _adapt(config, net, _test_data(config))
    paths = [save_reports(batch.reports, config.out / REPORT_FILE, provenance)]
    if batch.population is not None:
        paths.append(save_population(batch.population, config.out / POPULATION_FILE, provenance))
    adapted = [r for r in batch.reports if r is not None]
    converged = sum(r.n_converged for r in adapted)
    total = sum(len(r.sites) for r in adapted)
    logger.info("✅ rate-in: %d/%d sites converged over %d instances", converged, total, len(adapted))
    if batch.errors:
        logger.warning("⚠️ %d instances could not be adapted", len(batch.errors))
    return paths


def _resolve_policy(config: RunConfig, net: Network, dataset: Any) -> DropoutPolicy | dict[int, DropoutPolicy]:
    """One policy for every instance, or instance index -> policy for per-instance Rate-In."""
    spec = config.policy
    if spec.kind == "rate-in":
        epsilon = spec.epsilon if spec.epsilon is not None else spec.p
        p_init = config.ratein.p_init if config.ratein.p_init is not None else spec.p
        batch = _adapt(config, net, dataset, config.ratein.build(config.seed, epsilon=epsilon, p_init=p_init))
        if batch.errors:
            idx, message = next(iter(batch.errors.items()))
            raise ConfigError(f"rate-in failed for instance {idx}: {message}")
        policies = {i: policy_from_report(r) for i, r in enumerate(batch.reports)}
    elif spec.kind == "from-report":
        policies = {i: policy_from_report(r) for i, r in load_reports(spec.report).items()}
    else:
        calibration_set = _test_data(config, "train") if config.dataset_path("train").is_file() else dataset
        return build_policy(spec, net, _pooled_inputs(config, calibration_set), None, config.ratein, config.seed, config.mc.T)
    if len(policies) == 1 and 0 in policies:
        return policies[0]
    return policies


def _for_instance(policy: DropoutPolicy | dict[int, DropoutPolicy], idx: int) -> DropoutPolicy:
    if isinstance(policy, DropoutPolicy):
        return policy
    if idx not in policy:
        raise ConfigError(f"no rate-in report for instance {idx}")
    return policy[idx]


def _summaries(config: RunConfig, net: Network, dataset: Any, policy) -> pd.DataFrame:
    T, seed = config.mc.T, config.seed
    if config.task == "regression":
        return mc_run(net, dataset.inputs, policy, T=T, z=config.mc.z, seed=seed).to_frame()
    if config.task == "classification":
        return mc_classify(net, dataset.x, policy, T=T, seed=seed).to_frame()
    frames = []
    for idx, sample in enumerate(dataset):
        features, _ = shapes_to_pixels([sample])
        frame = mc_classify(net, features, _for_instance(policy, idx), T=T, seed=seed).to_frame()
        size = sample.image.shape[0]
        frame.insert(0, "image", idx)
        frame.insert(1, "row", frame["instance_id"] // size)
        frame.insert(2, "col", frame["instance_id"] % size)
        frames.append(frame.drop(columns="instance_id"))
    return pd.concat(frames, ignore_index=True)


def evaluate_summaries(config: RunConfig, frame: pd.DataFrame, dataset: Any) -> pd.DataFrame:
    """Flat (scope, metric, value) records for the task's metric set."""
    records: list[dict[str, Any]] = []

    def add(scope: str, values: dict[str, float]) -> None:
        records.extend({"scope": scope, "metric": k, "value": v} for k, v in values.items())

    if config.task == "regression":
        if len(frame) != dataset.n:
            raise ShapeError(f"{len(frame)} summaries for {dataset.n} test targets")
        add("all", regression_report(dataset.y, frame["mu"].to_numpy(), frame["sigma"].to_numpy(), config.mc.z))
    elif config.task == "classification":
        if len(frame) != len(dataset.labels):
            raise ShapeError(f"{len(frame)} summaries for {len(dataset.labels)} test labels")
        add("all", classification_report(dataset.labels, frame["predicted"].to_numpy(), frame["uncertainty"].to_numpy()))
    else:
        per_image = []
        for idx, sample in enumerate(dataset):
            rows = frame[frame["image"] == idx].sort_values(["row", "col"])
            size = sample.mask.shape[0]
            if len(rows) != size * size:
                raise ShapeError(f"image {idx}: {len(rows)} pixel summaries for a {size}x{size} grid")
            pred = rows["predicted"].to_numpy().reshape(size, size).astype(bool)
            uncertainty = rows["uncertainty"].to_numpy().reshape(size, size)
            scores = segmentation_report(sample.mask, pred, uncertainty)
            per_image.append(scores)
            add(f"image_{idx}", scores)
        add("all", {k: float(np.nanmean([s[k] for s in per_image])) for k in per_image[0]})
    return pd.DataFrame(records, columns=["scope", "metric", "value"])


def cmd_mc(config: RunConfig) -> list[Path]:
    provenance = provenance_for(config)
    net = load_network(config.model_path)
    dataset = _test_data(config)
    policy = _resolve_policy(config, net, dataset)
    frame = _summaries(config, net, dataset, policy)
    metrics = evaluate_summaries(config, frame, dataset)
    paths = [
        save_summaries(frame, config.out / SUMMARIES_FILE, provenance),
        write_table(metrics, config.out / METRICS_FILE, provenance),
    ]
    headline = metrics[metrics["scope"] == "all"]
    logger.info("✅ mc (%s, T=%d): %s", config.policy.label, config.mc.T,
                ", ".join(f"{r.metric}={r.value:.4g}" for r in headline.itertuples()))
    return paths


def cmd_evaluate(config: RunConfig) -> list[Path]:
    path = config.out / SUMMARIES_FILE
    if config.task == "regression":
        frame = load_summary(path, config.mc.z).to_frame()
    else:
        frame = read_table(path)
    metrics = evaluate_summaries(config, frame, _test_data(config))
    return [write_table(metrics, config.out / METRICS_FILE, provenance_for(config))]


def cmd_experiment(config: RunConfig) -> list[Path]:
    result = run_experiment(config, provenance_for(config), progress=get_settings().progress)
    return list(result.paths)


# ---------------------------------------------------------------- preflight


def _require_file(path: Path, what: str) -> None:
    if not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}")


def _preflight(command: str, config: RunConfig) -> None:
    """Every path and cross-field check, before anything is written."""
    check_writable_dir(config.out)
    if command == "train":
        check_writable_dir(config.model_path.parent)
        return
    if command == "experiment":
        if config.experiment is None:
            raise ConfigError("config has no experiment section")
        return
    _require_file(config.dataset_path("test"), "test dataset (run `train` first)")
    if command == "evaluate":
        _require_file(config.out / SUMMARIES_FILE, "MC summaries (run `mc` first)")
        return
    _require_file(config.model_path, "model file")
    if command == "mc" and config.policy.report is not None:
        _require_file(config.policy.report, "policy report")


COMMANDS: dict[str, Callable[[RunConfig], list[Path]]] = {
    "train": cmd_train,
    "ratein": cmd_ratein,
    "mc": cmd_mc,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def _execute(command: str, config_path: Path | None, dry_run: bool, **overrides: Any) -> None:
    ctx = click.get_current_context()
    configure_logging()
    try:
        config = load_run_config(config_path, overrides)
        configure_logging(config.log_level)
        _preflight(command, config)
    except (*USAGE_ERRORS, yaml.YAMLError) as exc:
        click.echo(f"❌ error: {_describe(exc)}", err=True)
        ctx.exit(2)
    if dry_run:
        logger.info("✅ %s config is valid (dry run, nothing executed)", command)
        click.echo("✅ config valid")
        ctx.exit(0)

    logger.info("🚀 %s (task=%s, seed=%d, out=%s)", command, config.task, config.seed, config.out)
    try:
        paths = COMMANDS[command](config)
    except (ConfigError, PersistenceError) as exc:
        click.echo(f"❌ error: {_describe(exc)}", err=True)
        ctx.exit(2)
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit code 3
        logger.debug("command %s failed", command, exc_info=True)
        click.echo(f"❌ {command} failed: {_describe(exc)}", err=True)
        ctx.exit(3)
    for path in paths:
        click.echo(str(path))


RUN_OPTIONS = (
    click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="YAML run config."),
    click.option("--seed", type=int, default=None, help="Override the config seed."),
    click.option("--workers", type=click.IntRange(min=1), default=None, help="Parallel workers."),
    click.option("--out", type=click.Path(path_type=Path), default=None, help="Output directory."),
    click.option("--dry-run", is_flag=True, help="Validate the config and exit."),
)


def run_options(func: Callable) -> Callable:
    for option in reversed(RUN_OPTIONS):
        func = option(func)
    return func


@click.group()
def cli() -> None:
    """Rate-In: information-guided inference-time dropout for MC uncertainty."""


@cli.command()
@run_options
def train(config_path: Path | None, seed: int | None, workers: int | None, out: Path | None, dry_run: bool) -> None:
    """Train the task network and write model, datasets and loss curve."""
    _execute("train", config_path, dry_run, seed=seed, workers=workers, out=out)


@cli.command()
@run_options
def ratein(config_path: Path | None, seed: int | None, workers: int | None, out: Path | None, dry_run: bool) -> None:
    """Adapt per-site dropout rates with Rate-In."""
    _execute("ratein", config_path, dry_run, seed=seed, workers=workers, out=out)


@cli.command()
@run_options
def mc(config_path: Path | None, seed: int | None, workers: int | None, out: Path | None, dry_run: bool) -> None:
    """Run MC-dropout inference under the configured policy and score it."""
    _execute("mc", config_path, dry_run, seed=seed, workers=workers, out=out)


@cli.command()
@run_options
def evaluate(config_path: Path | None, seed: int | None, workers: int | None, out: Path | None, dry_run: bool) -> None:
    """Recompute metrics from saved MC summaries."""
    _execute("evaluate", config_path, dry_run, seed=seed, workers=workers, out=out)


@cli.command()
@run_options
def experiment(config_path: Path | None, seed: int | None, workers: int | None, out: Path | None, dry_run: bool) -> None:
    """Run the configured experiment study."""
    _execute("experiment", config_path, dry_run, seed=seed, workers=workers, out=out)
