import dataclasses
from fractions import Fraction

import numpy as np
import pytest

from rate_in.exceptions import ConfigError, RateDomainError
from rate_in.policies import (
    DropoutPolicy,
    activation_cov,
    activation_policy,
    activation_rates_from_cov,
    constant_policy,
    policy_from_population,
    policy_from_report,
    scheduled_policy,
)
from rate_in.ratein import RateInReport, SitePopulation, SiteReport

SCHEDULE_GRID = [(p, T) for p in (0.1, 0.3, 0.5) for T in (2, 5, 10, 30)]


@pytest.mark.parametrize("p, T", SCHEDULE_GRID)
def test_schedule_is_exact(p, T):
    policy = scheduled_policy(p, T)
    for t in range(1, T + 1):
        rate = policy.rate_at("h1", t)
        assert rate == float(Fraction(p) * Fraction(T - t, T - 1))
        assert rate == pytest.approx(p * (T - t) / (T - 1), abs=1e-15)
    assert policy.rate_at("h1", 1) == p
    assert policy.rate_at("h1", T) == 0.0


def test_single_pass_schedule_keeps_the_base_rate():
    assert scheduled_policy(0.3, 1).rate_at("h1", 1) == 0.3


@pytest.mark.parametrize("t", [0, -1, 11])
def test_iteration_outside_the_schedule(t):
    with pytest.raises(RateDomainError):
        scheduled_policy(0.3, 10).rate_at("h1", t)


def test_constant_policy_ignores_site_and_pass():
    policy = constant_policy(0.2)
    assert policy.rates_at(["h1", "h2"], 7) == {"h1": 0.2, "h2": 0.2}
    with pytest.raises(RateDomainError):
        policy.rate_at("h1", 0)


BAD_POLICIES = [
    (dict(kind="greedy"), ConfigError),
    (dict(kind="constant", base_rate=1.0), RateDomainError),
    (dict(kind="constant", base_rate=-0.1), RateDomainError),
    (dict(kind="scheduled", base_rate=0.1), ConfigError),
    (dict(kind="from-rate-in"), ConfigError),
    (dict(kind="activation", site_rates={"h1": 1.0}), RateDomainError),
    (dict(kind="activation", site_rates={"h1": -0.1}), RateDomainError),
]


@pytest.mark.parametrize("kwargs, error", BAD_POLICIES)
def test_invalid_policies(kwargs, error):
    with pytest.raises(error):
        DropoutPolicy(**kwargs)


def test_rates_just_below_one_are_legal():
    policy = DropoutPolicy(kind="activation", site_rates={"h1": 0.97})
    assert policy.rate_at("h1", 1) == 0.97


def test_cov_rates_scale_to_the_largest():
    assert activation_rates_from_cov({"h1": 0.5, "h2": 1.0}, 0.2) == {"h1": 0.1, "h2": 0.2}


def test_single_site_gets_the_maximum():
    assert activation_rates_from_cov({"h1": 3.7}, 0.4) == {"h1": 0.4}


def test_all_zero_cov_disables_dropout():
    assert activation_rates_from_cov({"h1": 0.0, "h2": 0.0}, 0.4) == {"h1": 0.0, "h2": 0.0}


def test_activation_policy_is_scale_invariant(small_net, rng):
    x = rng.uniform(-3, 3, size=(40, 1))
    c = 3.5
    (w0, b0), (w1, b1), last = small_net.weights
    scaled = dataclasses.replace(small_net, weights=((w0 * c, b0 * c), (w1, b1 * c), last))
    base = activation_policy(small_net, x, 0.3)
    other = activation_policy(scaled, x, 0.3)
    for site in small_net.site_ids:
        assert other.site_rates[site] == pytest.approx(base.site_rates[site], rel=1e-9)
    assert max(base.site_rates.values()) == pytest.approx(0.3)


def test_activation_cov_of_a_dead_layer(small_net, rng):
    (w0, b0), rest = small_net.weights[0], small_net.weights[1:]
    dead = dataclasses.replace(small_net, weights=((np.zeros_like(w0), np.full_like(b0, -1.0)), *rest))
    covs = activation_cov(dead, rng.uniform(size=(10, 1)))
    assert covs["h1"] == 0.0


def _report(rates):
    sites = tuple(
        SiteReport(site, 0.1, rate, 0.1, 1.0, 3, True, None, (1,)) for site, rate in rates.items()
    )
    return RateInReport(sites=sites, prediction=np.zeros(1))


def test_policy_from_report_uses_final_rates():
    policy = policy_from_report(_report({"h1": 0.12, "h2": 0.3}))
    assert policy.rates_at(["h1", "h2"], 5) == {"h1": 0.12, "h2": 0.3}
    policy.check_sites(["h1", "h2"])
    with pytest.raises(ConfigError):
        policy.check_sites(["h1", "h2", "h3"])


def test_population_policy_zeroes_sites_that_never_converged():
    population = (
        SitePopulation("h1", 0.2, 0.05, 4, 1),
        SitePopulation("h2", float("nan"), float("nan"), 0, 5),
    )
    assert policy_from_population(population).site_rates == {"h1": 0.2, "h2": 0.0}


POLICIES = [
    constant_policy(0.1),
    scheduled_policy(0.25, 30),
    DropoutPolicy(kind="activation", base_rate=0.3, site_rates={"h1": 0.3, "h2": 0.15}),
    DropoutPolicy(kind="from-population", site_rates={"h1": 0.05, "h2": 0.0}),
]


@pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.kind)
def test_every_pass_gives_every_site_a_legal_rate(policy):
    for t in (1, 15, 30):
        rates = policy.rates_at(["h1", "h2"], t)
        assert set(rates) == {"h1", "h2"}
        assert all(0.0 <= r < 1.0 for r in rates.values())
