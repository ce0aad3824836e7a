"""
End-to-end studies on the synthetic regression task.

noise-sweep        IER per noise level and policy
size-sweep         IER per training-set size (sigma fixed)
convergence        final Rate-In rate per (epsilon, initial rate, site)
layer-sensitivity  ΔI per (site, rate, estimator), one site dropped at a time
timing             Rate-In wall time, one factor varied at a time

Every study writes ``<name>.csv`` (summary) and ``<name>_long.csv`` (one row per
repeat) into the run's output directory. Repeat ``k`` uses seed ``seed + k``;
cells run as independent jobs and are merged in cell order.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from .config import ExperimentSpec, PolicySpec, RateInSection, RunConfig
from .data import gen_regression_splits
from .exceptions import ConfigError, PersistenceError, RateInError, TrainingDivergenceError
from .mc import mc_run
from .metrics import regression_report
from .nn import Network, regression_architecture, train_regression
from .policies import (
    DropoutPolicy,
    activation_policy,
    constant_policy,
    policy_from_population,
    policy_from_report,
    scheduled_policy,
)
from .ratein import adapt_rates, clean_reference, load_population, load_reports, measure_site
from .tasks import run_bounded
from .utils import derive_seed, write_table

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    name: str
    summary: pd.DataFrame
    long: pd.DataFrame
    paths: tuple[Path, ...] = ()


def build_policy(
    spec: PolicySpec,
    net: Network,
    calibration: Any,
    instance: Any,
    ratein: RateInSection,
    seed: int,
    T: int,
) -> DropoutPolicy:
    """Resolve a declarative policy against a trained network."""
    if spec.kind == "constant":
        return constant_policy(spec.p)
    if spec.kind == "scheduled":
        return scheduled_policy(spec.p, T)
    if spec.kind == "activation":
        return activation_policy(net, calibration, spec.p)
    if spec.kind == "rate-in":
        epsilon = spec.epsilon if spec.epsilon is not None else spec.p
        p_init = ratein.p_init if ratein.p_init is not None else spec.p
        return policy_from_report(adapt_rates(net, instance, ratein.build(seed, epsilon=epsilon, p_init=p_init)))
    if spec.kind == "from-population":
        return policy_from_population(load_population(spec.report))
    reports = load_reports(spec.report)
    if len(reports) != 1:
        raise ConfigError(f"{spec.report} holds {len(reports)} instance reports; expected one")
    return policy_from_report(next(iter(reports.values())))


def _train(config: RunConfig, x: np.ndarray, y: np.ndarray, seed: int) -> Network:
    m = config.model
    return train_regression(x, y, regression_architecture(m.hidden), epochs=m.epochs, lr=m.lr, seed=seed)


def _spec(config: RunConfig) -> ExperimentSpec:
    if config.experiment is None:
        raise ConfigError("run config has no experiment section")
    return config.experiment


def _nan_scores() -> dict[str, float]:
    return {"picp": np.nan, "width": np.nan, "ier": np.nan, "mse": np.nan}


# ---------------------------------------------------------------- sweeps


def _sweep_cell(config: RunConfig, axis: str, value: float, repeat: int, n_train: int, sigma: float) -> list[dict]:
    spec = _spec(config)
    seed = config.seed + repeat
    train, test = gen_regression_splits(n_train, spec.n_test, sigma, seed)
    base = {axis: value, "repeat": repeat, "seed": seed}
    try:
        net = _train(config, train.inputs, train.y, seed)
    except TrainingDivergenceError as exc:
        logger.warning("❌ %s=%s repeat %d: %s", axis, value, repeat, exc)
        return [{**base, "policy": p.label, **_nan_scores(), "failure": str(exc)} for p in spec.policies]

    rows = []
    for policy_spec in spec.policies:
        row = {**base, "policy": policy_spec.label}
        try:
            policy = build_policy(policy_spec, net, train.inputs, test.inputs, config.ratein, seed, config.mc.T)
            summary = mc_run(net, test.inputs, policy, T=config.mc.T, z=config.mc.z, seed=derive_seed(seed, 1))
            scores = regression_report(test.y, summary.mean[:, 0], summary.std[:, 0], config.mc.z)
            row.update({k: scores[k] for k in ("picp", "width", "ier", "mse")}, failure="")
        except RateInError as exc:
            logger.warning("❌ %s=%s repeat %d %s: %s", axis, value, repeat, policy_spec.label, exc)
            row.update(_nan_scores(), failure=str(exc))
        rows.append(row)
    return rows


def _summarize_sweep(long: pd.DataFrame, axis: str, axis_values: list, labels: list[str]) -> pd.DataFrame:
    rows = []
    for value in axis_values:
        for label in labels:
            cell = long[(long[axis] == value) & (long["policy"] == label)]
            ok = cell[cell["failure"] == ""]
            rows.append(
                {
                    axis: value,
                    "policy": label,
                    "picp": float(ok["picp"].median()) if len(ok) else np.nan,
                    "width": float(ok["width"].median()) if len(ok) else np.nan,
                    "ier": float(ok["ier"].median()) if len(ok) else np.nan,
                    "repeats": len(ok),
                    "std": float(np.std(ok["ier"].to_numpy())) if len(ok) else np.nan,
                    "failures": len(cell) - len(ok),
                }
            )
    return pd.DataFrame(rows)


def _run_sweep(config: RunConfig, axis: str, values: list, progress: bool) -> tuple[pd.DataFrame, pd.DataFrame]:
    spec = _spec(config)
    jobs: list[Callable[[], list[dict]]] = []
    for value in values:
        for repeat in range(spec.repeats):
            if axis == "sigma":
                n_train, sigma = spec.n_train, value
            else:
                n_train, sigma = value, spec.size_sigma
            jobs.append(lambda v=value, r=repeat, n=n_train, s=sigma: _sweep_cell(config, axis, v, r, n, s))
    results = run_bounded(jobs, workers=config.workers, progress=progress, desc=axis)
    long = pd.DataFrame([row for cell in results for row in cell])
    labels = [p.label for p in spec.policies]
    return _summarize_sweep(long, axis, values, labels), long


def run_noise_sweep(config: RunConfig, progress: bool = False) -> ExperimentResult:
    summary, long = _run_sweep(config, "sigma", list(_spec(config).sigmas), progress)
    return ExperimentResult("noise-sweep", summary, long)


def run_size_sweep(config: RunConfig, progress: bool = False) -> ExperimentResult:
    summary, long = _run_sweep(config, "size", list(_spec(config).sizes), progress)
    return ExperimentResult("size-sweep", summary, long)


# ---------------------------------------------------------------- convergence


def _convergence_repeat(config: RunConfig, repeat: int) -> list[dict]:
    spec = _spec(config)
    seed = config.seed + repeat
    train, test = gen_regression_splits(spec.n_train, spec.n_test, spec.convergence_sigma, seed)
    net = _train(config, train.inputs, train.y, seed)
    rows = []
    for eps in spec.epsilons:
        for p_init in spec.p_inits:
            cfg = config.ratein.build(seed, epsilon=eps, p_init=p_init, n_max=spec.convergence_n_max)
            report = adapt_rates(net, test.inputs, cfg)
            for site in report.sites:
                rows.append(
                    {
                        "epsilon": eps,
                        "p_init": p_init,
                        "site_id": site.site_id,
                        "repeat": repeat,
                        "final_rate": site.final_rate,
                        "final_delta_i": site.final_delta_i,
                        "iterations": site.iterations,
                        "converged": site.converged,
                        "failure_reason": site.failure_reason or "",
                    }
                )
    return rows


def run_convergence_study(config: RunConfig, progress: bool = False) -> ExperimentResult:
    spec = _spec(config)
    jobs = [lambda r=r: _convergence_repeat(config, r) for r in range(spec.repeats)]
    long = pd.DataFrame([row for rows in run_bounded(jobs, config.workers, progress, "convergence") for row in rows])
    summary = []
    for (eps, p_init, site_id), cell in long.groupby(["epsilon", "p_init", "site_id"], sort=True):
        done = cell[cell["converged"]]
        summary.append(
            {
                "epsilon": eps,
                "p_init": p_init,
                "site_id": site_id,
                "mean_rate": float(done["final_rate"].mean()) if len(done) else np.nan,
                "std_rate": float(np.std(done["final_rate"].to_numpy())) if len(done) else np.nan,
                "n_converged": len(done),
                "n_failed": len(cell) - len(done),
            }
        )
    return ExperimentResult("convergence", pd.DataFrame(summary), long)


# ---------------------------------------------------------------- layer sensitivity


def _sensitivity_repeat(config: RunConfig, repeat: int) -> list[dict]:
    spec = _spec(config)
    seed = config.seed + repeat
    train, test = gen_regression_splits(spec.n_train, spec.n_test, spec.sensitivity_sigma, seed)
    net = _train(config, train.inputs, train.y, seed)
    x = test.inputs
    base_spec = config.ratein.build(seed).spec
    rows = []
    for estimator in spec.estimators:
        loss_spec = base_spec.model_copy(update={"estimator": estimator})
        references = clean_reference(net, x, loss_spec)
        for site_idx, site_id in enumerate(net.site_ids):
            i_full = references[site_id]
            for rate in spec.rate_grid:
                row = {"site_id": site_id, "rate": rate, "estimator": estimator, "repeat": repeat}
                if i_full is not None and i_full <= 0.0:
                    rows.append({**row, "delta_i": np.nan, "mask_std": np.nan, "failure": "undefined-reference"})
                    continue
                rates = {s: 0.0 for s in net.site_ids}
                rates[site_id] = rate
                values = np.array(
                    [
                        measure_site(net, x, rates, site_id, loss_spec, i_full, [derive_seed(seed, site_idx, k)])
                        for k in range(spec.mask_repeats)
                    ]
                )
                rows.append({**row, "delta_i": float(values.mean()), "mask_std": float(values.std()), "failure": ""})
    return rows


def run_layer_sensitivity(config: RunConfig, progress: bool = False) -> ExperimentResult:
    spec = _spec(config)
    jobs = [lambda r=r: _sensitivity_repeat(config, r) for r in range(spec.repeats)]
    long = pd.DataFrame([row for rows in run_bounded(jobs, config.workers, progress, "sensitivity") for row in rows])
    summary = []
    for (estimator, site_id, rate), cell in long.groupby(["estimator", "site_id", "rate"], sort=True):
        ok = cell[cell["failure"] == ""]
        summary.append(
            {
                "estimator": estimator,
                "site_id": site_id,
                "rate": rate,
                "mean_delta_i": float(ok["delta_i"].mean()) if len(ok) else np.nan,
                "std": float(np.std(ok["delta_i"].to_numpy())) if len(ok) else np.nan,
                "repeats": len(ok),
            }
        )
    return ExperimentResult("layer-sensitivity", pd.DataFrame(summary), long)


# ---------------------------------------------------------------- timing


def _timing_cells(spec: ExperimentSpec) -> list[tuple[str, float, dict[str, float]]]:
    t = spec.timing
    defaults = {"p_init": t.p_init, "epsilon": t.epsilon, "n": t.n, "sigma": t.sigma}
    grids = {"p_init": t.p_inits, "epsilon": t.epsilons, "n": t.instance_counts, "sigma": t.sigmas}
    cells = []
    for factor, grid in grids.items():
        for value in grid:
            cells.append((factor, value, {**defaults, factor: value}))
    return cells


def run_timing(config: RunConfig, progress: bool = False) -> ExperimentResult:
    """Wall time of ``adapt_rates``; cells run one after another so timings do not contend."""
    spec = _spec(config)
    if config.workers > 1:
        logger.info("timing study runs sequentially, ignoring workers=%d", config.workers)
    nets: dict[tuple[float, int], Network] = {}
    rows = []
    for factor, value, setting in _timing_cells(spec):
        for repeat in range(spec.repeats):
            seed = config.seed + repeat
            key = (setting["sigma"], repeat)
            train, test = gen_regression_splits(spec.n_train, int(setting["n"]), setting["sigma"], seed)
            if key not in nets:
                nets[key] = _train(config, train.inputs, train.y, seed)
            cfg = config.ratein.build(seed, epsilon=setting["epsilon"], p_init=setting["p_init"])
            start = time.perf_counter()
            report = adapt_rates(nets[key], test.inputs, cfg)
            seconds = time.perf_counter() - start
            rows.append(
                {"factor": factor, "value": value, "repeat": repeat, "seconds": seconds, "n_converged": report.n_converged}
            )
    long = pd.DataFrame(rows)
    summary = []
    for factor, value, _ in _timing_cells(spec):
        cell = long[(long["factor"] == factor) & (long["value"] == value)]["seconds"].to_numpy()
        summary.append(
            {"factor": factor, "value": value, "mean_s": float(cell.mean()), "std_s": float(cell.std()), "worst_s": float(cell.max())}
        )
    return ExperimentResult("timing", pd.DataFrame(summary), long)


EXPERIMENTS: dict[str, Callable[..., ExperimentResult]] = {
    "noise-sweep": run_noise_sweep,
    "size-sweep": run_size_sweep,
    "convergence": run_convergence_study,
    "layer-sensitivity": run_layer_sensitivity,
    "timing": run_timing,
}

_SWEEP_SUMMARY = ("policy", "picp", "width", "ier", "repeats", "std", "failures")
_SWEEP_LONG = ("repeat", "seed", "policy", "picp", "width", "ier", "mse", "failure")

# (summary, long) columns every study must produce
TABLE_COLUMNS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "noise-sweep": (("sigma", *_SWEEP_SUMMARY), ("sigma", *_SWEEP_LONG)),
    "size-sweep": (("size", *_SWEEP_SUMMARY), ("size", *_SWEEP_LONG)),
    "convergence": (
        ("epsilon", "p_init", "site_id", "mean_rate", "std_rate", "n_converged", "n_failed"),
        ("epsilon", "p_init", "site_id", "repeat", "final_rate", "final_delta_i", "iterations", "converged", "failure_reason"),
    ),
    "layer-sensitivity": (
        ("estimator", "site_id", "rate", "mean_delta_i", "std", "repeats"),
        ("site_id", "rate", "estimator", "repeat", "delta_i", "mask_std", "failure"),
    ),
    "timing": (
        ("factor", "value", "mean_s", "std_s", "worst_s"),
        ("factor", "value", "repeat", "seconds", "n_converged"),
    ),
}


def check_tables(result: ExperimentResult) -> None:
    """Raise if a study's summary or long table lacks its expected columns."""
    summary_cols, long_cols = TABLE_COLUMNS[result.name]
    for kind, frame, expected in (("summary", result.summary, summary_cols), ("long", result.long, long_cols)):
        missing = [c for c in expected if c not in frame.columns]
        if missing:
            raise PersistenceError(f"{result.name} {kind} table is missing columns {missing}")


def run_experiment(config: RunConfig, provenance: str | None = None, progress: bool = False) -> ExperimentResult:
    """Run the configured study and write its summary and long-format tables."""
    spec = _spec(config)
    logger.info("🚀 experiment %s (%d repeats, %d workers)", spec.name, spec.repeats, config.workers)
    result = EXPERIMENTS[spec.name](config, progress=progress)
    check_tables(result)
    paths = (
        write_table(result.summary, config.out / f"{spec.name}.csv", provenance),
        write_table(result.long, config.out / f"{spec.name}_long.csv", provenance),
    )
    logger.info("✅ experiment %s done: %s", spec.name, ", ".join(str(p) for p in paths))
    return ExperimentResult(result.name, result.summary, result.long, paths)
