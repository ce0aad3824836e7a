"""
Evaluation metrics.

Regression: MSE, PICP, mean interval width, IER = width / PICP.
Classification: ACC, ECE (15 uniform uncertainty bins), AUARC.
Segmentation: DSC, pixel-wise ECE, BUC (boundary share of mean uncertainty).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .exceptions import ConfigError, ShapeError, UndefinedMetricError

logger = logging.getLogger(__name__)

ECE_BINS = 15
BAND_WIDTH = 5


def _pair(a: Any, b: Any, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ ({a.shape} vs {b.shape})")
    if a.size == 0:
        raise UndefinedMetricError(f"{what}: empty input")
    return a, b


def mse(y_true: Any, y_pred: Any) -> float:
    y_true, y_pred = _pair(np.asarray(y_true, dtype=np.float64), np.asarray(y_pred, dtype=np.float64), "mse")
    return float(np.mean((y_true - y_pred) ** 2))


def acc(labels_true: Any, labels_pred: Any) -> float:
    labels_true, labels_pred = _pair(labels_true, labels_pred, "acc")
    return float(np.mean(labels_true == labels_pred))


def dsc(mask_pred: Any, mask_true: Any) -> float:
    """Dice coefficient; two empty masks agree perfectly (1.0)."""
    p, g = _pair(np.asarray(mask_pred, dtype=bool), np.asarray(mask_true, dtype=bool), "dsc")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


@dataclass(frozen=True, eq=False)
class CalibrationBins:
    counts: np.ndarray
    mean_uncertainty: np.ndarray  # 0 for empty bins
    mean_error: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.counts)


def calibration_bins(uncertainty: Any, error: Any, n_bins: int = ECE_BINS) -> CalibrationBins:
    u, e = _pair(np.asarray(uncertainty, dtype=np.float64).ravel(), np.asarray(error, dtype=np.float64).ravel(), "ece")
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    if u.min() < 0.0 or u.max() > 1.0:
        raise ConfigError("uncertainty scores must lie in [0, 1]")
    idx = np.minimum(np.floor(u * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    safe = np.maximum(counts, 1)
    return CalibrationBins(
        counts=counts,
        mean_uncertainty=np.bincount(idx, weights=u, minlength=n_bins) / safe,
        mean_error=np.bincount(idx, weights=e, minlength=n_bins) / safe,
    )


def ece(uncertainty: Any, error: Any, n_bins: int = ECE_BINS) -> float:
    bins = calibration_bins(uncertainty, error, n_bins)
    total = bins.counts.sum()
    return float(np.sum(bins.counts / total * np.abs(bins.mean_uncertainty - bins.mean_error)))


def rejection_curve(correct: Any, uncertainty: Any) -> tuple[np.ndarray, np.ndarray]:
    """
    Accuracy after rejecting the most uncertain fraction r of instances.

    Grid r_j = j/n (j = 0..n-1) plus r = 1, where only the single most certain
    instance is kept. Ties in uncertainty are broken by instance index.
    """
    c, u = _pair(np.asarray(correct, dtype=np.float64).ravel(), np.asarray(uncertainty, dtype=np.float64).ravel(), "auarc")
    n = c.size
    if n < 2:
        raise UndefinedMetricError("auarc needs at least 2 instances")
    order = np.lexsort((np.arange(n), u))  # most certain first
    kept_correct = np.cumsum(c[order])
    kept = np.arange(n, 0, -1)  # n - j retained at r = j / n
    accuracy = kept_correct[kept - 1] / kept
    rates = np.append(np.arange(n) / n, 1.0)
    return rates, np.append(accuracy, c[order][0])


def auarc(correct: Any, uncertainty: Any) -> float:
    rates, accuracy = rejection_curve(correct, uncertainty)
    return float(np.trapezoid(accuracy, rates))


@dataclass(frozen=True, eq=False)
class BoundaryMask:
    boundary: np.ndarray
    interior: np.ndarray


def boundary_mask(mask_true: Any, band_width: int = BAND_WIDTH) -> BoundaryMask:
    """Band of ``band_width`` (odd) pixels around the mask edge, and the mask interior beyond it."""
    mask = np.asarray(mask_true, dtype=bool)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {mask.shape}")
    # odd, so the square is centred on each edge pixel
    if band_width < 1 or band_width % 2 == 0:
        raise ConfigError(f"band_width must be a positive odd size, got {band_width}")
    edge = mask & ~binary_erosion(mask, structure=np.ones((3, 3), dtype=bool), border_value=0)
    band = binary_dilation(edge, structure=np.ones((band_width, band_width), dtype=bool))
    return BoundaryMask(boundary=band, interior=mask & ~band)


def buc(uncertainty_map: Any, mask_true: Any, band_width: int = BAND_WIDTH) -> float:
    u, mask = _pair(np.asarray(uncertainty_map, dtype=np.float64), np.asarray(mask_true, dtype=bool), "buc")
    regions = boundary_mask(mask, band_width)
    if not regions.boundary.any() or not regions.interior.any():
        raise UndefinedMetricError("mask has an empty boundary band or interior")
    on_band = float(u[regions.boundary].mean())
    inside = float(u[regions.interior].mean())
    if on_band + inside == 0.0:
        raise UndefinedMetricError("uncertainty is zero on both boundary and interior")
    return on_band / (on_band + inside)


@dataclass(frozen=True)
class IntervalScores:
    picp: float
    mean_width: float
    ier: float


def picp_and_width(y_true: Any, mean: Any, std: Any, z: float = 1.96) -> IntervalScores:
    """Coverage of the closed intervals [mean - z std, mean + z std] and their mean width."""
    if z <= 0:
        raise ConfigError(f"z must be > 0, got {z}")
    y = np.asarray(y_true, dtype=np.float64).ravel()
    mu, sigma = _pair(np.asarray(mean, dtype=np.float64).ravel(), np.asarray(std, dtype=np.float64).ravel(), "picp")
    if y.shape != mu.shape:
        raise ShapeError(f"picp: {y.size} targets for {mu.size} predictions")
    lower, upper = mu - z * sigma, mu + z * sigma
    picp = float(np.mean((y >= lower) & (y <= upper)))
    width = float(np.mean(2.0 * z * sigma))
    return IntervalScores(picp=picp, mean_width=width, ier=width / picp if picp > 0 else float("inf"))


# ---------------------------------------------------------------- reports


def regression_report(y_true: Any, mean: Any, std: Any, z: float = 1.96) -> dict[str, float]:
    scores = picp_and_width(y_true, mean, std, z)
    return {
        "mse": mse(y_true, np.asarray(mean).ravel()),
        "picp": scores.picp,
        "width": scores.mean_width,
        "ier": scores.ier,
    }


def classification_report(labels_true: Any, predicted: Any, uncertainty: Any, n_bins: int = ECE_BINS) -> dict[str, float]:
    correct = np.asarray(labels_true) == np.asarray(predicted)
    return {
        "acc": acc(labels_true, predicted),
        "auarc": auarc(correct, uncertainty),
        "ece": ece(uncertainty, ~correct, n_bins),
    }


def segmentation_report(
    mask_true: Any,
    mask_pred: Any,
    uncertainty_map: Any,
    n_bins: int = ECE_BINS,
    band_width: int = BAND_WIDTH,
) -> dict[str, float]:
    """DSC, pixel ECE and BUC for one image; BUC is NaN where it is undefined."""
    truth = np.asarray(mask_true, dtype=bool)
    pred = np.asarray(mask_pred, dtype=bool)
    try:
        boundary = buc(uncertainty_map, truth, band_width)
    except UndefinedMetricError as exc:
        logger.warning("⚠️ BUC undefined: %s", exc)
        boundary = float("nan")
    return {
        "dsc": dsc(pred, truth),
        "ece": ece(uncertainty_map, pred != truth, n_bins),
        "buc": boundary,
    }
