"""
Information-loss estimation.

Mutual information is a plug-in estimate (nats) on a 2-D histogram, with either
fixed equal-width bins on min-max normalized values or equal-mass
("entropy-equal") bins. SSIM compares pre- and post-dropout feature maps.
``measure_loss`` turns either into the relative loss Rate-In controls:

    MI:    delta_i = (I_full - I_drop) / I_full
    SSIM:  delta_i = 1 - SSIM(pre, post)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import entropy

from .exceptions import ConfigError, InsufficientSamplesError, ShapeError, UndefinedReferenceError

logger = logging.getLogger(__name__)

MIN_MI_SAMPLES = 4
SSIM_MIN_SIDE = 7


class MIEstimatorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["fixed-bins", "entropy-equal-bins"] = "fixed-bins"
    # bin count in fixed mode, cap on the number of bins in adaptive mode
    bin_count: int = Field(30, ge=2)
    # "none": units of one layer share bin edges over the pooled layer range
    normalization: Literal["minmax", "none"] = "minmax"


class InfoLossSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    estimator: Literal["mi", "ssim"] = "mi"
    mi: MIEstimatorConfig = MIEstimatorConfig()
    reference: Literal["network-input", "layer-input"] = "network-input"
    epsilon: float = Field(0.1, ge=0.0, lt=1.0)
    delta: float = Field(0.01, gt=0.0)
    ssim_window: int = Field(11, ge=1)
    ssim_sigma: float = Field(1.5, gt=0.0)

    @model_validator(mode="after")
    def _check(self) -> "InfoLossSpec":
        if self.epsilon + self.delta >= 1.0:
            raise ValueError(f"epsilon + delta must be < 1 (got {self.epsilon} + {self.delta})")
        if self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be odd, got {self.ssim_window}")
        return self


@dataclass(frozen=True)
class LossMeasurement:
    i_full: float
    i_drop: float
    delta_i: float


# ---------------------------------------------------------------- binning


def entropy_equal_bins(samples: Any, max_bins: int) -> np.ndarray:
    """
    Equal-mass bin edges (outer edges included) for at most ``max_bins`` bins.

    Cuts sit halfway between neighbouring sorted samples, so for distinct values
    every bin holds floor(n/bins) or ceil(n/bins) samples. A cut landing inside
    a run of tied values moves to the nearer end of the run; cuts pushed to the
    extremes disappear, which merges bins.
    """
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = s.size
    if max_bins < 1:
        raise ConfigError(f"max_bins must be >= 1, got {max_bins}")
    if n < max_bins:
        raise InsufficientSamplesError(f"need at least {max_bins} samples for {max_bins} bins, got {n}")

    cuts = set()
    for k in range(1, max_bins):
        i = (2 * k * n + max_bins) // (2 * max_bins)  # round(k * n / max_bins), half up
        if 0 < i < n and s[i - 1] == s[i]:
            lo = int(np.searchsorted(s, s[i], side="left"))
            hi = int(np.searchsorted(s, s[i], side="right"))
            i = lo if i - lo <= hi - i else hi
        if 0 < i < n:
            cuts.add(i)
    inner = [0.5 * (s[i - 1] + s[i]) for i in sorted(cuts)]
    return np.array([s[0], *inner, s[-1]])


def _discretize(values: np.ndarray, cfg: MIEstimatorConfig, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    if cfg.mode == "entropy-equal-bins":
        edges = entropy_equal_bins(values, min(cfg.bin_count, values.size))
        return np.searchsorted(edges[1:-1], values, side="right")
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(values.size, dtype=np.int64)
    scaled = (values - lo) / (hi - lo)
    return np.clip(np.floor(scaled * cfg.bin_count).astype(np.int64), 0, cfg.bin_count - 1)


def _entropy(counts: np.ndarray) -> float:
    # sorted so the sum does not depend on bin order (keeps MI exactly symmetric)
    return float(entropy(np.sort(counts[counts > 0]).astype(np.float64)))


def _mi_from_bins(ia: np.ndarray, ib: np.ndarray) -> float:
    joint = np.bincount(ia * (int(ib.max()) + 1) + ib)
    raw = (_entropy(np.bincount(ia)) + _entropy(np.bincount(ib))) - _entropy(joint)
    if raw < 0.0:
        logger.debug("clamped negative MI estimate %.3g to 0", raw)
        return 0.0
    return raw


def _check_pair(a: Any, b: Any) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeError(f"sample vectors differ in length ({a.size} vs {b.size})")
    if a.size < MIN_MI_SAMPLES:
        raise InsufficientSamplesError(f"MI needs at least {MIN_MI_SAMPLES} samples, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigError("MI samples must be finite")
    return a, b


def mi_pairwise_histogram(a: Any, b: Any, cfg: MIEstimatorConfig | None = None) -> float:
    """Plug-in MI (nats) between two paired sample vectors; >= 0 and symmetric."""
    cfg = cfg or MIEstimatorConfig()
    a, b = _check_pair(a, b)
    return _mi_from_bins(_discretize(a, cfg), _discretize(b, cfg))


def mi_input_to_layer(inputs: Any, activations: Any, cfg: MIEstimatorConfig | None = None) -> float:
    """
    Batch-level MI between the network input and a layer, averaged over units.

    Rows are samples. Every hidden unit is binned on its own (normalized) range,
    MI is taken against each input column, and the mean over all
    (input column, unit) pairs is returned.
    """
    cfg = cfg or MIEstimatorConfig()
    x = np.asarray(inputs, dtype=np.float64)
    h = np.asarray(activations, dtype=np.float64)
    x = x[:, None] if x.ndim == 1 else x
    h = h[:, None] if h.ndim == 1 else h
    if x.shape[0] != h.shape[0]:
        raise ShapeError(f"batch size {x.shape[0]} does not match activation count {h.shape[0]}")
    if x.shape[0] < MIN_MI_SAMPLES:
        raise InsufficientSamplesError(f"MI needs a batch of at least {MIN_MI_SAMPLES}, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h))):
        raise ConfigError("MI samples must be finite")

    lo = hi = None
    if cfg.normalization == "none" and cfg.mode == "fixed-bins":
        lo, hi = float(h.min()), float(h.max())
    x_bins = [_discretize(x[:, j], cfg) for j in range(x.shape[1])]
    values = [
        _mi_from_bins(xb, _discretize(h[:, u], cfg, lo, hi))
        for u in range(h.shape[1])
        for xb in x_bins
    ]
    return float(np.mean(values))


# ---------------------------------------------------------------- SSIM


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    offsets = np.arange(window) - window // 2
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return g / g.sum()


def _local_mean(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(a: Any, b: Any, window: int = 11, data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Mean Gaussian-weighted SSIM over every valid window position."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"SSIM needs two 2-D maps of the same shape, got {a.shape} and {b.shape}")
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be a positive odd size, got {window}")
    if min(a.shape) < window:
        raise ShapeError(f"maps {a.shape} are smaller than the {window}x{window} window")

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = _gaussian_kernel(window, sigma)
    mu_a = _local_mean(a, g)
    mu_b = _local_mean(b, g)
    var_a = _local_mean(a * a, g) - mu_a * mu_a
    var_b = _local_mean(b * b, g) - mu_b * mu_b
    cov = _local_mean(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _minmax(arr: np.ndarray) -> np.ndarray:
    lo, hi = arr.min(), arr.max()
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def as_feature_map(signal: Any) -> np.ndarray:
    """2-D view of a feature signal for SSIM (most-square grid for vectors)."""
    arr = np.asarray(signal, dtype=np.float64)
    if arr.ndim == 2 and min(arr.shape) >= SSIM_MIN_SIDE:
        return arr
    flat = arr.ravel()
    size = flat.size
    rows = max(d for d in range(1, math.isqrt(size) + 1) if size % d == 0)
    return flat.reshape(rows, size // rows)


def ssim_feature_maps(pre: Any, post: Any, window: int = 11, sigma: float = 1.5) -> float:
    """SSIM of two [0,1]-normalized feature signals, shrinking the window to fit."""
    a = _minmax(as_feature_map(pre))
    b = _minmax(as_feature_map(post))
    if a.shape != b.shape:
        raise ShapeError(f"pre/post signals differ in shape ({a.shape} vs {b.shape})")
    side = min(a.shape)
    fit = side if side % 2 else side - 1
    return ssim(a, b, window=min(window, fit), data_range=1.0, sigma=sigma)


# ---------------------------------------------------------------- loss


def reference_mi(spec: InfoLossSpec, reference: Any, signal: Any) -> float:
    """MI between the reference signal and a site signal under ``spec``."""
    if spec.reference == "network-input":
        return mi_input_to_layer(reference, signal, spec.mi)
    return mi_pairwise_histogram(reference, signal, spec.mi)


def measure_loss(
    spec: InfoLossSpec,
    reference: Any,
    pre: Any,
    post: Any,
    i_full: float | None = None,
) -> LossMeasurement:
    """
    Information loss caused by dropout at one site.

    ``reference`` is the network input batch (network-input) or the site's own
    pre-dropout signal (layer-input). ``i_full`` overrides MI(reference, pre),
    which Rate-In uses to pass the value from the all-dropout-off pass.
    """
    if spec.estimator == "ssim":
        value = ssim_feature_maps(pre, post, spec.ssim_window, spec.ssim_sigma)
        return LossMeasurement(i_full=1.0, i_drop=max(value, 0.0), delta_i=1.0 - value)

    full = reference_mi(spec, reference, pre) if i_full is None else float(i_full)
    if full <= 0.0:
        raise UndefinedReferenceError("I_full is 0: the reference carries no information about this site")
    drop = reference_mi(spec, reference, post)
    return LossMeasurement(i_full=full, i_drop=drop, delta_i=(full - drop) / full)
