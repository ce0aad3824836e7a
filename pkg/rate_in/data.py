"""
Synthetic datasets.

- regression: x ~ U[-3, 3], y = sin(x) + N(0, sigma^2)
- blobs: isotropic unit-variance Gaussian classes on a regular polygon
- shapes: blurred, noisy disks / rectangles with their true masks

Every generator is a pure function of its arguments; train and test splits use
distinct derived seeds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from .exceptions import ConfigError, PersistenceError
from .utils import derive_seed, make_rng, read_table, write_table

logger = logging.getLogger(__name__)

X_RANGE = (-3.0, 3.0)
SHAPE_KINDS = ("disk", "rectangle")
MIN_GRID = 16


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    x: np.ndarray
    y: np.ndarray
    sigma: float
    seed: int

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def inputs(self) -> np.ndarray:
        """Network inputs, shape (n, 1)."""
        return self.x[:, None]


@dataclass(frozen=True, eq=False)
class ClassificationDataset:
    x: np.ndarray  # (n, 2)
    labels: np.ndarray
    centers: np.ndarray
    seed: int

    @property
    def classes(self) -> int:
        return len(self.centers)


@dataclass(frozen=True, eq=False)
class ShapeSample:
    image: np.ndarray
    mask: np.ndarray
    kind: str


def gen_regression(n: int, sigma: float, seed: int = 123) -> RegressionDataset:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    rng = make_rng(seed)
    x = rng.uniform(*X_RANGE, size=n)
    y = np.sin(x)
    if sigma > 0:
        y = y + rng.normal(0.0, sigma, size=n)
    return RegressionDataset(x=x, y=y, sigma=float(sigma), seed=int(seed))


def gen_regression_splits(
    n_train: int, n_test: int, sigma: float, seed: int = 123
) -> tuple[RegressionDataset, RegressionDataset]:
    return (
        gen_regression(n_train, sigma, derive_seed(seed, 0)),
        gen_regression(n_test, sigma, derive_seed(seed, 1)),
    )


def blob_centers(classes: int, separation: float) -> np.ndarray:
    """Vertices of a regular polygon whose neighbouring vertices are ``separation`` apart."""
    if classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    radius = separation / (2.0 * math.sin(math.pi / classes))
    angles = 2.0 * math.pi * np.arange(classes) / classes
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_blobs(n: int, classes: int = 2, separation: float = 4.0, seed: int = 123) -> ClassificationDataset:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if separation < 0:
        raise ConfigError(f"separation must be >= 0, got {separation}")
    centers = blob_centers(classes, separation)
    rng = make_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    x = centers[labels] + rng.normal(size=(n, 2))
    return ClassificationDataset(x=x, labels=labels, centers=centers, seed=int(seed))


def _shape_mask(rng: np.random.Generator, grid_size: int, kind: str) -> np.ndarray:
    yy, xx = np.mgrid[0:grid_size, 0:grid_size]
    if kind == "disk":
        radius = rng.uniform(grid_size / 8, grid_size / 4)
        cy, cx = rng.uniform(radius, grid_size - 1 - radius, size=2)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    h, w = rng.integers(grid_size // 4, grid_size // 2 + 1, size=2)
    top = rng.integers(0, grid_size - h + 1)
    left = rng.integers(0, grid_size - w + 1)
    return (yy >= top) & (yy < top + h) & (xx >= left) & (xx < left + w)


def gen_shapes(
    grid_size: int,
    seed: int = 123,
    count: int = 1,
    noise: float = 0.1,
    blur: float = 1.0,
    kind: str | None = None,
) -> list[ShapeSample]:
    """Binary shape masks rendered as blurred intensity images plus Gaussian noise."""
    if grid_size < MIN_GRID:
        raise ConfigError(f"grid_size must be >= {MIN_GRID}, got {grid_size}")
    if kind is not None and kind not in SHAPE_KINDS:
        raise ConfigError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    if noise < 0 or blur < 0:
        raise ConfigError("noise and blur must be >= 0")
    rng = make_rng(seed)
    samples = []
    for _ in range(count):
        shape_kind = kind or SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
        mask = _shape_mask(rng, grid_size, shape_kind)
        image = mask.astype(np.float64)
        if blur > 0:
            image = gaussian_filter(image, sigma=blur)
        if noise > 0:
            image = image + rng.normal(0.0, noise, size=image.shape)
        samples.append(ShapeSample(image=image, mask=mask, kind=shape_kind))
    return samples


def shapes_to_pixels(samples: Sequence[ShapeSample]) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-wise classification data: intensity feature (N, 1) and 0/1 labels."""
    if not samples:
        raise ConfigError("no shape samples")
    features = np.concatenate([s.image.ravel() for s in samples])[:, None]
    labels = np.concatenate([s.mask.ravel() for s in samples]).astype(np.int64)
    return features, labels


# ---------------------------------------------------------------- CSV


def save_regression_csv(ds: RegressionDataset, path: str | Path, provenance: str | None = None) -> Path:
    return write_table(pd.DataFrame({"x": ds.x, "y": ds.y}), path, provenance)


def load_regression_csv(path: str | Path) -> RegressionDataset:
    frame = read_table(path)
    if list(frame.columns) != ["x", "y"]:
        raise PersistenceError(f"{path}: expected columns x,y, got {list(frame.columns)}")
    return RegressionDataset(
        x=frame["x"].to_numpy(dtype=np.float64),
        y=frame["y"].to_numpy(dtype=np.float64),
        sigma=float("nan"),
        seed=-1,
    )


def save_classification_csv(ds: ClassificationDataset, path: str | Path, provenance: str | None = None) -> Path:
    frame = pd.DataFrame({"x0": ds.x[:, 0], "x1": ds.x[:, 1], "label": ds.labels})
    return write_table(frame, path, provenance)


def load_classification_csv(path: str | Path) -> ClassificationDataset:
    frame = read_table(path)
    if list(frame.columns) != ["x0", "x1", "label"]:
        raise PersistenceError(f"{path}: expected columns x0,x1,label, got {list(frame.columns)}")
    labels = frame["label"].to_numpy(dtype=np.int64)
    x = frame[["x0", "x1"]].to_numpy(dtype=np.float64)
    centers = np.array([x[labels == k].mean(axis=0) for k in range(int(labels.max()) + 1)])
    return ClassificationDataset(x=x, labels=labels, centers=centers, seed=-1)


def save_shapes_csv(samples: Sequence[ShapeSample], path: str | Path, provenance: str | None = None) -> Path:
    """One row per (sample, field) with the grid flattened row-major into p0..pN."""
    rows = []
    for idx, s in enumerate(samples):
        for field, grid in (("image", s.image), ("mask", s.mask.astype(np.float64))):
            row: dict[str, Any] = {"sample": idx, "kind": s.kind, "field": field, "grid_size": s.image.shape[0]}
            row.update({f"p{k}": float(v) for k, v in enumerate(grid.ravel())})
            rows.append(row)
    return write_table(pd.DataFrame(rows), path, provenance)


def load_shapes_csv(path: str | Path) -> list[ShapeSample]:
    frame = read_table(path, dtype={"kind": str, "field": str})
    if not {"sample", "kind", "field", "grid_size"} <= set(frame.columns):
        raise PersistenceError(f"{path}: not a shapes table")
    pixel_cols = [c for c in frame.columns if c.startswith("p") and c[1:].isdigit()]
    samples = []
    for _, rows in frame.groupby("sample", sort=True):
        size = int(rows["grid_size"].iloc[0])
        values = rows[pixel_cols].to_numpy(dtype=np.float64)[:, : size * size]
        grids = {field: v.reshape(size, size) for field, v in zip(rows["field"], values)}
        if set(grids) != {"image", "mask"}:
            raise PersistenceError(f"{path}: each sample needs an image row and a mask row")
        samples.append(ShapeSample(image=grids["image"], mask=grids["mask"] > 0.5, kind=str(rows["kind"].iloc[0])))
    return samples
