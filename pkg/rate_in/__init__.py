"""
Rate-In: information-guided inference-time dropout rates for MC-dropout
uncertainty estimation, with baseline policies, metrics and experiment drivers.
"""

from .exceptions import RateInError
from .info import InfoLossSpec, MIEstimatorConfig, measure_loss
from .mc import mc_classify, mc_run
from .nn import Network, forward, load_network, save_network
from .policies import DropoutPolicy, activation_policy, constant_policy, policy_from_report, scheduled_policy
from .ratein import RateInConfig, RateInReport, adapt_rates, adapt_rates_batch

__all__ = [
    "DropoutPolicy",
    "InfoLossSpec",
    "MIEstimatorConfig",
    "Network",
    "RateInConfig",
    "RateInError",
    "RateInReport",
    "activation_policy",
    "adapt_rates",
    "adapt_rates_batch",
    "constant_policy",
    "forward",
    "load_network",
    "mc_classify",
    "mc_run",
    "measure_loss",
    "policy_from_report",
    "save_network",
    "scheduled_policy",
]
