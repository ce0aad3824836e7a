import math

import numpy as np
import pytest
from scipy.stats import norm

from rate_in.data import (
    blob_centers,
    gen_blobs,
    gen_regression,
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
from rate_in.exceptions import ConfigError, PersistenceError
from rate_in.metrics import dsc


def test_noiseless_targets_are_exact():
    ds = gen_regression(200, 0.0, seed=4)
    np.testing.assert_array_equal(ds.y, np.sin(ds.x))
    assert ds.x.min() >= -3.0 and ds.x.max() <= 3.0
    assert ds.inputs.shape == (200, 1)


def test_generators_are_reproducible():
    a, b = gen_regression(50, 0.2, seed=9), gen_regression(50, 0.2, seed=9)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    train, test = gen_regression_splits(50, 50, 0.2, seed=9)
    assert not np.array_equal(train.x, test.x)


@pytest.mark.parametrize("sigma", [0.1, 0.3, 0.5])
def test_noise_level(sigma):
    ds = gen_regression(100_000, sigma, seed=1)
    assert np.std(ds.y - np.sin(ds.x)) == pytest.approx(sigma, rel=0.02)


@pytest.mark.parametrize("kwargs", [dict(n=0, sigma=0.1), dict(n=10, sigma=-0.1)])
def test_regression_arguments(kwargs):
    with pytest.raises(ConfigError):
        gen_regression(**kwargs)


@pytest.mark.parametrize("classes", [2, 3, 5])
def test_blob_centers_are_evenly_spaced(classes):
    centers = blob_centers(classes, 4.0)
    gaps = np.linalg.norm(centers - np.roll(centers, 1, axis=0), axis=1)
    np.testing.assert_allclose(gaps, 4.0)


def test_blob_labels_are_balanced():
    ds = gen_blobs(100, classes=3, seed=2)
    assert sorted(np.bincount(ds.labels)) == [33, 33, 34]
    assert ds.x.shape == (100, 2)


def test_blob_overlap_matches_bayes_accuracy():
    ds = gen_blobs(20_000, classes=2, separation=4.0, seed=3)
    nearest = np.linalg.norm(ds.x[:, None, :] - ds.centers[None], axis=2).argmin(axis=1)
    assert np.mean(nearest == ds.labels) == pytest.approx(norm.cdf(2.0), abs=0.01)


def test_single_class_rejected():
    with pytest.raises(ConfigError):
        gen_blobs(10, classes=1)


@pytest.mark.parametrize("kind", ["disk", "rectangle"])
def test_clean_shapes_threshold_to_their_masks(kind):
    for sample in gen_shapes(32, seed=5, count=6, noise=0.0, blur=0.0, kind=kind):
        assert sample.kind == kind
        assert sample.mask.any()
        assert dsc(sample.image > 0.5, sample.mask) == 1.0


def test_shapes_are_reproducible_and_mixed():
    a = gen_shapes(24, seed=8, count=40)
    b = gen_shapes(24, seed=8, count=40)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image, y.image)
    assert {s.kind for s in a} == {"disk", "rectangle"}


@pytest.mark.parametrize("kwargs", [dict(grid_size=8), dict(grid_size=32, kind="star"), dict(grid_size=32, noise=-1.0)])
def test_shape_arguments(kwargs):
    with pytest.raises(ConfigError):
        gen_shapes(**kwargs)


def test_pixels_line_up_with_masks():
    samples = gen_shapes(16, seed=1, count=3)
    features, labels = shapes_to_pixels(samples)
    assert features.shape == (3 * 256, 1)
    assert labels.sum() == sum(int(s.mask.sum()) for s in samples)


def test_regression_csv_round_trip(tmp_path):
    ds = gen_regression(30, 0.3, seed=6)
    loaded = load_regression_csv(save_regression_csv(ds, tmp_path / "train.csv", "rate-in seed=6"))
    np.testing.assert_array_equal(loaded.x, ds.x)
    np.testing.assert_array_equal(loaded.y, ds.y)
    assert math.isnan(loaded.sigma)


def test_classification_csv_round_trip(tmp_path):
    ds = gen_blobs(30, classes=3, seed=6)
    loaded = load_classification_csv(save_classification_csv(ds, tmp_path / "blobs.csv"))
    np.testing.assert_array_equal(loaded.x, ds.x)
    np.testing.assert_array_equal(loaded.labels, ds.labels)


def test_shapes_csv_round_trip(tmp_path):
    samples = gen_shapes(16, seed=2, count=2)
    loaded = load_shapes_csv(save_shapes_csv(samples, tmp_path / "shapes.csv"))
    for a, b in zip(samples, loaded):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.kind == b.kind


def test_wrong_table_rejected(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
    with pytest.raises(PersistenceError):
        load_regression_csv(path)
    with pytest.raises(ConfigError):
        load_regression_csv(tmp_path / "missing.csv")
