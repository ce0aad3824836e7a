"""
Inference-time dropout-rate policies for MC dropout.

constant       p at every site and pass
scheduled      p * (T - t) / (T - 1), annealed to 0 on the last pass
activation     p_max * CoV(site) / max CoV, from no-dropout activations
from-rate-in   per-site rates adapted by Rate-In for one instance
from-population  per-site mean rates over a Rate-In population
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, RateDomainError
from .nn import Network, forward
from .ratein import RateInReport, SitePopulation

logger = logging.getLogger(__name__)

POLICY_KINDS = ("constant", "scheduled", "activation", "from-rate-in", "from-population")
PER_SITE_KINDS = ("activation", "from-rate-in", "from-population")


def _check_rate(rate: float, what: str) -> float:
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise RateDomainError(f"{what} must be in [0, 1), got {rate}")
    return rate


@dataclass(frozen=True)
class DropoutPolicy:
    kind: str
    base_rate: float = 0.0
    site_rates: Mapping[str, float] = field(default_factory=dict)
    total_iterations: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        _check_rate(self.base_rate, "base rate")
        for site, rate in self.site_rates.items():
            _check_rate(rate, f"rate for site {site!r}")
        if self.kind in PER_SITE_KINDS and not self.site_rates:
            raise ConfigError(f"{self.kind} policy needs per-site rates")
        if self.kind == "scheduled" and (self.total_iterations is None or self.total_iterations < 1):
            raise ConfigError("scheduled policy needs total_iterations >= 1")

    def rate_at(self, site_id: str, t: int) -> float:
        return rate_at(self, site_id, t)

    def rates_at(self, site_ids: Sequence[str], t: int) -> dict[str, float]:
        return {site: rate_at(self, site, t) for site in site_ids}

    def check_sites(self, site_ids: Sequence[str]) -> None:
        """Raise if the policy's per-site rates do not match ``site_ids``."""
        if self.kind not in PER_SITE_KINDS:
            return
        if set(self.site_rates) != set(site_ids):
            raise ConfigError(
                f"{self.kind} policy covers sites {sorted(self.site_rates)} but the network has {list(site_ids)}"
            )


def rate_at(policy: DropoutPolicy, site_id: str, t: int) -> float:
    """Rate at ``site_id`` on MC pass ``t`` (1-based)."""
    if t < 1 or (policy.total_iterations is not None and t > policy.total_iterations):
        raise RateDomainError(f"MC iteration {t} outside 1..{policy.total_iterations or 'T'}")
    if policy.kind == "constant":
        return policy.base_rate
    if policy.kind == "scheduled":
        total = policy.total_iterations
        if total == 1:
            return policy.base_rate
        return float(Fraction(policy.base_rate) * Fraction(total - t, total - 1))
    try:
        return float(policy.site_rates[site_id])
    except KeyError:
        raise ConfigError(f"{policy.kind} policy has no rate for site {site_id!r}") from None


def constant_policy(p: float) -> DropoutPolicy:
    return DropoutPolicy(kind="constant", base_rate=p)


def scheduled_policy(p: float, total_iterations: int) -> DropoutPolicy:
    return DropoutPolicy(kind="scheduled", base_rate=p, total_iterations=total_iterations)


def policy_from_report(report: RateInReport) -> DropoutPolicy:
    return DropoutPolicy(kind="from-rate-in", site_rates=report.rates)


def policy_from_population(population: Sequence[SitePopulation]) -> DropoutPolicy:
    """Mean converged rates; sites without any converged instance get 0."""
    rates = {}
    for site in population:
        if site.n_converged == 0:
            logger.warning("⚠️ site %s never converged in the population, using rate 0", site.site_id)
        rates[site.site_id] = 0.0 if site.n_converged == 0 else site.mean_rate
    return DropoutPolicy(kind="from-population", site_rates=rates)


def activation_rates_from_cov(covs: Mapping[str, float], p_max: float) -> dict[str, float]:
    """p_max * CoV / max CoV per site; every rate is 0 if all CoVs are 0."""
    p_max = _check_rate(p_max, "p_max")
    top = max(covs.values(), default=0.0)
    if top <= 0.0:
        return {site: 0.0 for site in covs}
    return {site: p_max * (cov / top) for site, cov in covs.items()}


def activation_cov(net: Network, calibration_inputs: Any) -> dict[str, float]:
    """CoV = std / mean(|x|) of each site's no-dropout activations, pooled over inputs and units."""
    x = np.asarray(calibration_inputs, dtype=np.float64)
    if x.size == 0:
        raise ConfigError("activation policy needs calibration inputs")
    if not net.site_ids:
        raise ConfigError("network has no dropout sites")
    _, traces = forward(net, x)
    covs = {}
    for trace in traces:
        scale = float(np.mean(np.abs(trace.pre)))
        if scale == 0.0:
            logger.warning("⚠️ site %s has all-zero activations, CoV set to 0", trace.site_id)
            covs[trace.site_id] = 0.0
        else:
            covs[trace.site_id] = float(np.std(trace.pre)) / scale
    return covs


def activation_policy(net: Network, calibration_inputs: Any, p_max: float) -> DropoutPolicy:
    rates = activation_rates_from_cov(activation_cov(net, calibration_inputs), p_max)
    return DropoutPolicy(kind="activation", base_rate=p_max, site_rates=rates)
