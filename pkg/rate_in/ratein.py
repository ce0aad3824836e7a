"""
The Rate-In feedback loop.

Dropout sites are tuned one at a time in forward order. While site ``l`` is
being tuned, earlier sites run at their finalized rates and later sites at 0.
Each iteration applies dropout, measures the relative information loss ΔI and
moves the rate toward the target::

    p <- clamp(p - lr * (ΔI - epsilon), p_min, p_max)

until ``|ΔI - epsilon| < delta`` or the iteration budget runs out. Sites that
cannot be tuned are reported (``failure_reason``), never raised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import ConfigError, PersistenceError, RateInError, UndefinedReferenceError
from .info import MIN_MI_SAMPLES, InfoLossSpec, measure_loss, reference_mi
from .nn import Network, forward
from .tasks import run_bounded
from .utils import derive_seed, read_table, write_table

logger = logging.getLogger(__name__)

FAILURE_REASONS = ("hit-n-max", "floor-reached", "undefined-reference")

REPORT_COLUMNS = [
    "instance_id",
    "site_id",
    "epsilon",
    "final_rate",
    "final_delta_i",
    "i_full",
    "iterations",
    "converged",
    "failure_reason",
    "mask_seeds",
]
POPULATION_COLUMNS = ["site_id", "mean_rate", "std_rate", "n_converged", "n_failed"]


class RateInConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    spec: InfoLossSpec = InfoLossSpec()
    # one rate for every site, or a per-site map
    p_init: float | dict[str, float] = 0.1
    n_max: int = Field(30, ge=1)
    lr: float = Field(0.9, gt=0.0)
    mask_samples: int = Field(1, ge=1)
    p_min: float = 0.0
    p_max: float = 0.95
    epsilon_by_site: dict[str, float] | None = None
    seed: int = 123

    @model_validator(mode="after")
    def _check_bounds(self) -> "RateInConfig":
        if not 0.0 <= self.p_min < self.p_max < 1.0:
            raise ValueError(f"p_bounds must satisfy 0 <= p_min < p_max < 1, got [{self.p_min}, {self.p_max}]")
        inits = self.p_init.values() if isinstance(self.p_init, dict) else [self.p_init]
        for p in inits:
            if not self.p_min <= p <= self.p_max:
                raise ValueError(f"p_init {p} outside p_bounds [{self.p_min}, {self.p_max}]")
        for site, eps in (self.epsilon_by_site or {}).items():
            if not 0.0 <= eps < 1.0 or eps + self.spec.delta >= 1.0:
                raise ValueError(f"epsilon for site {site!r} must be in [0, 1 - delta), got {eps}")
        return self

    def initial_rate(self, site_id: str) -> float:
        if isinstance(self.p_init, dict):
            if site_id not in self.p_init:
                raise ConfigError(f"p_init has no entry for site {site_id!r}")
            return float(self.p_init[site_id])
        return float(self.p_init)

    def epsilon_for(self, site_id: str) -> float:
        if self.epsilon_by_site and site_id in self.epsilon_by_site:
            return float(self.epsilon_by_site[site_id])
        return self.spec.epsilon


@dataclass(frozen=True)
class SiteReport:
    site_id: str
    epsilon: float
    final_rate: float
    final_delta_i: float
    i_full: float
    iterations: int
    converged: bool
    failure_reason: str | None
    # seeds of the measurement that produced final_delta_i
    mask_seeds: tuple[int, ...]
    trajectory: tuple[tuple[float, float], ...] = field(default=(), compare=False)


@dataclass(frozen=True, eq=False)
class RateInReport:
    sites: tuple[SiteReport, ...]
    prediction: np.ndarray

    @property
    def rates(self) -> dict[str, float]:
        return {s.site_id: s.final_rate for s in self.sites}

    def site(self, site_id: str) -> SiteReport:
        for s in self.sites:
            if s.site_id == site_id:
                return s
        raise ConfigError(f"report has no site {site_id!r}")

    @property
    def n_converged(self) -> int:
        return sum(s.converged for s in self.sites)


@dataclass(frozen=True)
class SitePopulation:
    site_id: str
    mean_rate: float
    std_rate: float
    n_converged: int
    n_failed: int


@dataclass(frozen=True, eq=False)
class BatchResult:
    reports: list[RateInReport | None]
    # instance index -> error message for instances that could not be adapted at all
    errors: dict[int, str]
    population: tuple[SitePopulation, ...] | None = None


# ---------------------------------------------------------------- measurement


def _site_rates(net: Network, finals: Mapping[str, float], site_id: str, rate: float) -> dict[str, float]:
    rates = {s: 0.0 for s in net.site_ids}
    rates.update(finals)
    rates[site_id] = rate
    return rates


def measure_site(
    net: Network,
    x: Any,
    rates: Mapping[str, float],
    site_id: str,
    spec: InfoLossSpec,
    i_full: float | None,
    seeds: Sequence[int],
) -> float:
    """Mean ΔI at ``site_id`` over one forward pass per mask seed."""
    values = []
    for seed in seeds:
        _, traces = forward(net, x, rates, mask_seed=seed, stop_at=site_id)
        trace = traces[-1]
        reference = x if spec.reference == "network-input" else trace.pre
        values.append(measure_loss(spec, reference, trace.pre, trace.post, i_full=i_full).delta_i)
    return float(np.mean(values))


def clean_reference(net: Network, x: Any, spec: InfoLossSpec) -> dict[str, float | None]:
    """I_full per site from the all-dropout-off pass (``None`` under SSIM)."""
    if spec.estimator == "ssim":
        return {site: None for site in net.site_ids}
    _, traces = forward(net, x)
    out = {}
    for trace in traces:
        reference = x if spec.reference == "network-input" else trace.pre
        out[trace.site_id] = reference_mi(spec, reference, trace.pre)
    return out


def _check_instance(net: Network, x: Any, cfg: RateInConfig) -> np.ndarray:
    if not net.site_ids:
        raise ConfigError("network has no dropout sites")
    arr = np.asarray(x, dtype=np.float64)
    spec = cfg.spec
    if spec.estimator == "mi" and spec.reference == "network-input":
        rows = 1 if arr.ndim == 1 else arr.shape[0]
        if rows < MIN_MI_SAMPLES:
            raise ConfigError(
                f"network-input MI needs a batch of at least {MIN_MI_SAMPLES} rows, got {rows}; "
                "use reference 'layer-input' or the SSIM estimator for single vectors"
            )
    return arr


# ---------------------------------------------------------------- loop


def _adapt_site(
    net: Network,
    x: np.ndarray,
    cfg: RateInConfig,
    site_idx: int,
    site_id: str,
    finals: Mapping[str, float],
    i_full: float | None,
) -> SiteReport:
    spec = cfg.spec
    eps = cfg.epsilon_for(site_id)
    p = cfg.initial_rate(site_id)
    trajectory: list[tuple[float, float]] = []
    seeds: tuple[int, ...] = ()
    reason = "hit-n-max"
    converged = False

    for it in range(cfg.n_max):
        seeds = tuple(derive_seed(cfg.seed, site_idx, it, j) for j in range(cfg.mask_samples))
        delta_i = measure_site(net, x, _site_rates(net, finals, site_id, p), site_id, spec, i_full, seeds)
        trajectory.append((p, delta_i))
        if abs(delta_i - eps) < spec.delta:
            converged, reason = True, None
            break
        if p <= cfg.p_min and delta_i > eps + spec.delta:
            reason = "floor-reached"
            break
        p = min(max(p - cfg.lr * (delta_i - eps), cfg.p_min), cfg.p_max)

    final_rate, final_delta = trajectory[-1]
    if not converged:
        logger.debug("site %s not converged (%s): rate=%.4f ΔI=%.4f", site_id, reason, final_rate, final_delta)
    return SiteReport(
        site_id=site_id,
        epsilon=eps,
        final_rate=final_rate,
        final_delta_i=final_delta,
        i_full=float("nan") if i_full is None else i_full,
        iterations=len(trajectory),
        converged=converged,
        failure_reason=reason,
        mask_seeds=seeds,
        trajectory=tuple(trajectory),
    )


def adapt_rates(net: Network, x: Any, cfg: RateInConfig) -> RateInReport:
    """Tune every dropout site of ``net`` for the instance ``x``."""
    x = _check_instance(net, x, cfg)
    references = clean_reference(net, x, cfg.spec)
    finals: dict[str, float] = {}
    sites = []
    for site_idx, site_id in enumerate(net.site_ids):
        i_full = references[site_id]
        if i_full is not None and i_full <= 0.0:
            logger.warning("⚠️ site %s: I_full is 0, dropout disabled there", site_id)
            report = SiteReport(
                site_id=site_id,
                epsilon=cfg.epsilon_for(site_id),
                final_rate=0.0,
                final_delta_i=0.0,
                i_full=0.0,
                iterations=0,
                converged=False,
                failure_reason="undefined-reference",
                mask_seeds=(),
            )
        else:
            report = _adapt_site(net, x, cfg, site_idx, site_id, finals, i_full)
        finals[site_id] = report.final_rate
        sites.append(report)

    prediction, _ = forward(net, x, finals, mask_seed=derive_seed(cfg.seed, len(net.site_ids)))
    return RateInReport(sites=tuple(sites), prediction=prediction)


def remeasure_site(net: Network, x: Any, cfg: RateInConfig, report: RateInReport, site_id: str) -> float:
    """Recompute ΔI at ``site_id`` from the report's rates and mask seeds."""
    x = _check_instance(net, x, cfg)
    target = report.site(site_id)
    if not target.mask_seeds:
        raise UndefinedReferenceError(f"site {site_id!r} was never measured ({target.failure_reason})")
    idx = net.site_ids.index(site_id)
    finals = {s: report.rates[s] for s in net.site_ids[:idx]}
    i_full = None if cfg.spec.estimator == "ssim" else target.i_full
    rates = _site_rates(net, finals, site_id, target.final_rate)
    return measure_site(net, x, rates, site_id, cfg.spec, i_full, target.mask_seeds)


def population_rates(reports: Sequence[RateInReport | None], site_ids: Sequence[str]) -> tuple[SitePopulation, ...]:
    """Per-site mean / std of converged final rates across instances."""
    out = []
    for site_id in site_ids:
        done = [r.site(site_id) for r in reports if r is not None]
        rates = np.array([s.final_rate for s in done if s.converged])
        out.append(
            SitePopulation(
                site_id=site_id,
                mean_rate=float(rates.mean()) if rates.size else float("nan"),
                std_rate=float(rates.std()) if rates.size else float("nan"),
                n_converged=int(rates.size),
                n_failed=len(done) - int(rates.size),
            )
        )
    return tuple(out)


def adapt_rates_batch(
    net: Network,
    inputs: Sequence[Any],
    cfg: RateInConfig,
    population_mode: bool = False,
    workers: int = 1,
    progress: bool = False,
) -> BatchResult:
    """Adapt every instance independently (same config seed for each)."""
    inputs = list(inputs)
    if not inputs:
        raise ConfigError("adapt_rates_batch needs at least one instance")

    def _job(x: Any):
        def _run():
            try:
                return adapt_rates(net, x, cfg)
            except RateInError as exc:
                return exc
        return _run

    results = run_bounded([_job(x) for x in inputs], workers=workers, progress=progress, desc="rate-in")
    reports: list[RateInReport | None] = []
    errors: dict[int, str] = {}
    for idx, result in enumerate(results):
        if isinstance(result, Exception):
            logger.warning("❌ instance %d: %s", idx, result)
            errors[idx] = str(result)
            reports.append(None)
        else:
            reports.append(result)
    population = population_rates(reports, net.site_ids) if population_mode else None
    return BatchResult(reports=reports, errors=errors, population=population)


# ---------------------------------------------------------------- persistence


def reports_to_frame(reports: Sequence[RateInReport | None]) -> pd.DataFrame:
    rows = []
    for instance_id, report in enumerate(reports):
        if report is None:
            continue
        for s in report.sites:
            rows.append(
                {
                    "instance_id": instance_id,
                    "site_id": s.site_id,
                    "epsilon": s.epsilon,
                    "final_rate": s.final_rate,
                    "final_delta_i": s.final_delta_i,
                    "i_full": s.i_full,
                    "iterations": s.iterations,
                    "converged": s.converged,
                    "failure_reason": s.failure_reason or "",
                    "mask_seeds": ";".join(str(seed) for seed in s.mask_seeds),
                }
            )
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def save_reports(reports: Sequence[RateInReport | None], path: str | Path, provenance: str | None = None) -> Path:
    return write_table(reports_to_frame(reports), path, provenance)


def load_reports(path: str | Path) -> dict[int, RateInReport]:
    """Reports keyed by instance id. Predictions and trajectories are not stored."""
    frame = read_table(path, dtype={"site_id": str, "mask_seeds": str, "failure_reason": str})
    missing = set(REPORT_COLUMNS) - set(frame.columns)
    if missing:
        raise PersistenceError(f"{path}: not a rate-in report (missing columns {sorted(missing)})")
    out = {}
    for instance_id, rows in frame.groupby("instance_id", sort=True):
        sites = []
        for row in rows.itertuples(index=False):
            reason = row.failure_reason if isinstance(row.failure_reason, str) and row.failure_reason else None
            if reason is not None and reason not in FAILURE_REASONS:
                raise PersistenceError(f"{path}: unknown failure reason {reason!r}")
            seeds = str(row.mask_seeds) if isinstance(row.mask_seeds, str) else ""
            sites.append(
                SiteReport(
                    site_id=str(row.site_id),
                    epsilon=float(row.epsilon),
                    final_rate=float(row.final_rate),
                    final_delta_i=float(row.final_delta_i),
                    i_full=float(row.i_full),
                    iterations=int(row.iterations),
                    converged=bool(row.converged),
                    failure_reason=reason,
                    mask_seeds=tuple(int(s) for s in seeds.split(";") if s),
                )
            )
        out[int(instance_id)] = RateInReport(sites=tuple(sites), prediction=np.empty(0))
    return out


def population_to_frame(population: Sequence[SitePopulation]) -> pd.DataFrame:
    return pd.DataFrame([vars(p) for p in population], columns=POPULATION_COLUMNS)


def save_population(population: Sequence[SitePopulation], path: str | Path, provenance: str | None = None) -> Path:
    return write_table(population_to_frame(population), path, provenance)


def load_population(path: str | Path) -> tuple[SitePopulation, ...]:
    frame = read_table(path, dtype={"site_id": str})
    if set(POPULATION_COLUMNS) - set(frame.columns):
        raise PersistenceError(f"{path}: not a population file")
    return tuple(
        SitePopulation(
            site_id=str(row.site_id),
            mean_rate=float(row.mean_rate),
            std_rate=float(row.std_rate),
            n_converged=int(row.n_converged),
            n_failed=int(row.n_failed),
        )
        for row in frame.itertuples(index=False)
    )
