"""
Monte Carlo dropout harness.

Pass ``t`` (1..T) runs the network with ``policy.rate_at(site, t)`` at every site
and mask seed ``derive_seed(seed, t)``. Regression summaries hold the mean, the
population std (divide by T) and ``mean -/+ z * std`` bounds; classification
summaries hold the pass-averaged softmax.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd
from scipy.special import softmax

from .exceptions import ConfigError, PersistenceError
from .nn import Network, forward
from .policies import DropoutPolicy
from .utils import derive_seed, read_table, write_table

logger = logging.getLogger(__name__)

PolicyArg = DropoutPolicy | Mapping[int, DropoutPolicy]


@dataclass(frozen=True, eq=False)
class McSummary:
    mean: np.ndarray  # (n, out)
    std: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    z: float
    passes: np.ndarray | None = None  # (T, n, out) when retained

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def rows(self) -> list[dict[str, float]]:
        out_dim = self.mean.shape[1]
        names = [""] if out_dim == 1 else [f"_{k}" for k in range(out_dim)]
        rows = []
        for i in range(self.n):
            row: dict[str, float] = {"instance_id": i}
            for k, suffix in enumerate(names):
                row[f"mu{suffix}"] = float(self.mean[i, k])
                row[f"sigma{suffix}"] = float(self.std[i, k])
                row[f"lower{suffix}"] = float(self.lower[i, k])
                row[f"upper{suffix}"] = float(self.upper[i, k])
            rows.append(row)
        return rows

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows())


@dataclass(frozen=True, eq=False)
class ClassSummary:
    probs: np.ndarray  # (n, classes), mean softmax over passes
    predicted: np.ndarray
    uncertainty: np.ndarray  # 1 - max mean probability

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "instance_id": np.arange(len(self.predicted)),
                "predicted": self.predicted,
                "uncertainty": self.uncertainty,
            }
        )
        for k in range(self.probs.shape[1]):
            frame[f"prob_{k}"] = self.probs[:, k]
        return frame


def _as_rows(x: Any) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def _passes(net: Network, x: np.ndarray, policy: DropoutPolicy, T: int, seed: int) -> np.ndarray:
    if policy.total_iterations is not None and policy.total_iterations != T:
        raise ConfigError(f"scheduled policy was built for T={policy.total_iterations}, run uses T={T}")
    policy.check_sites(net.site_ids)
    outs = []
    for t in range(1, T + 1):
        out, _ = forward(net, x, policy.rates_at(net.site_ids, t), mask_seed=derive_seed(seed, t))
        outs.append(out)
    return np.stack(outs)


def mc_passes(net: Network, x: Any, policy: PolicyArg, T: int, seed: int = 123) -> np.ndarray:
    """Raw outputs of every pass, shape (T, n, out).

    ``policy`` may map instance (row) index to its own policy, e.g. per-instance
    Rate-In rates; each row then runs on its own with the same pass seeds.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    x = _as_rows(x)
    if isinstance(policy, DropoutPolicy):
        return _passes(net, x, policy, T, seed)
    missing = [i for i in range(len(x)) if i not in policy]
    if missing:
        raise ConfigError(f"no policy for instances {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return np.concatenate([_passes(net, x[i : i + 1], policy[i], T, seed) for i in range(len(x))], axis=1)


def summarize_passes(passes: np.ndarray, z: float = 1.96, retain_passes: bool = False) -> McSummary:
    if z <= 0:
        raise ConfigError(f"z must be > 0, got {z}")
    if np.all(passes == passes[0]):
        # identical passes (no dropout anywhere): spread is exactly zero
        mean, std = passes[0].copy(), np.zeros_like(passes[0])
    else:
        mean, std = passes.mean(axis=0), passes.std(axis=0)
    return McSummary(
        mean=mean,
        std=std,
        lower=mean - z * std,
        upper=mean + z * std,
        z=float(z),
        passes=passes if retain_passes else None,
    )


def mc_run(
    net: Network,
    x: Any,
    policy: PolicyArg,
    T: int = 30,
    z: float = 1.96,
    seed: int = 123,
    retain_passes: bool = False,
) -> McSummary:
    if T < 2:
        raise ConfigError(f"T must be >= 2 to estimate a spread, got {T}")
    return summarize_passes(mc_passes(net, x, policy, T, seed), z, retain_passes)


def mc_classify(net: Network, x: Any, policy: PolicyArg, T: int = 30, seed: int = 123) -> ClassSummary:
    """Pass-averaged class probabilities; uncertainty = 1 - max mean probability."""
    if net.out_dim < 2:
        raise ConfigError("mc_classify needs a classifier (output width >= 2)")
    passes = mc_passes(net, x, policy, T, seed)
    probs = softmax(passes, axis=-1).mean(axis=0)
    return ClassSummary(probs=probs, predicted=probs.argmax(axis=1), uncertainty=1.0 - probs.max(axis=1))


def save_summaries(frame: pd.DataFrame, path: str | Path, provenance: str | None = None) -> Path:
    return write_table(frame, path, provenance)


def load_summary(path: str | Path, z: float) -> McSummary:
    """Regression summary back from its table (passes are not stored)."""
    frame = read_table(path)
    if not {"mu", "sigma"} <= set(frame.columns):
        raise PersistenceError(f"{path}: not a regression summaries table")
    mean = frame["mu"].to_numpy(dtype=np.float64)[:, None]
    std = frame["sigma"].to_numpy(dtype=np.float64)[:, None]
    return McSummary(mean=mean, std=std, lower=mean - z * std, upper=mean + z * std, z=z)
