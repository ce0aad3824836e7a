import dataclasses

import numpy as np
import pandas as pd
import pytest
from scipy.special import softmax

from rate_in.data import gen_blobs
from rate_in.exceptions import ConfigError, PersistenceError
from rate_in.mc import load_summary, mc_classify, mc_passes, mc_run, save_summaries
from rate_in.nn import classifier_architecture, init_network, predict, train_classifier
from rate_in.policies import DropoutPolicy, constant_policy, scheduled_policy


@pytest.fixture(scope="module")
def blob_classifier():
    train = gen_blobs(200, classes=2, seed=123)
    return train_classifier(train.x, train.labels, classifier_architecture(2, 2, (16,)), epochs=300, seed=123)


@pytest.fixture(scope="module")
def blob_inputs():
    return gen_blobs(100, classes=2, seed=321).x


def test_no_dropout_gives_zero_spread(trained_net, held_out_inputs):
    summary = mc_run(trained_net, held_out_inputs, constant_policy(0.0), T=10)
    assert np.all(summary.std == 0.0)
    np.testing.assert_array_equal(summary.mean, predict(trained_net, held_out_inputs))
    np.testing.assert_array_equal(summary.lower, summary.upper)


def test_mc_mean_tracks_the_deterministic_prediction(trained_net, held_out_inputs):
    # dropout only before the linear head, where it leaves the expected output unchanged
    T = 400
    policy = DropoutPolicy(kind="from-rate-in", site_rates={"h1": 0.0, "h2": 0.1})
    summary = mc_run(trained_net, held_out_inputs, policy, T=T, seed=17)
    drift = np.abs(summary.mean - predict(trained_net, held_out_inputs))
    assert np.mean(drift <= 3 * summary.std / np.sqrt(T) + 1e-12) >= 0.95


def test_runs_are_reproducible(trained_net, held_out_inputs):
    a = mc_run(trained_net, held_out_inputs, constant_policy(0.2), T=10, seed=5, retain_passes=True)
    b = mc_run(trained_net, held_out_inputs, constant_policy(0.2), T=10, seed=5, retain_passes=True)
    np.testing.assert_array_equal(a.passes, b.passes)
    np.testing.assert_array_equal(a.std, b.std)
    c = mc_run(trained_net, held_out_inputs, constant_policy(0.2), T=10, seed=6)
    assert not np.array_equal(a.mean, c.mean)


def test_higher_rate_widens_intervals(trained_net, held_out_inputs):
    narrow = mc_run(trained_net, held_out_inputs, constant_policy(0.1), T=30)
    wide = mc_run(trained_net, held_out_inputs, constant_policy(0.3), T=30)
    assert wide.std.mean() > narrow.std.mean()


def test_interval_bounds(trained_net, held_out_inputs):
    summary = mc_run(trained_net, held_out_inputs, constant_policy(0.2), T=20, z=2.5)
    assert np.all(summary.lower <= summary.mean)
    assert np.all(summary.mean <= summary.upper)
    np.testing.assert_allclose(summary.upper - summary.lower, 5.0 * summary.std)
    assert summary.passes is None
    assert summary.n == held_out_inputs.shape[0]


def test_std_divides_by_pass_count(trained_net, held_out_inputs):
    summary = mc_run(trained_net, held_out_inputs, constant_policy(0.2), T=8, retain_passes=True)
    np.testing.assert_allclose(summary.std, summary.passes.std(axis=0, ddof=0))


def test_single_pass_rejected(trained_net, held_out_inputs):
    with pytest.raises(ConfigError):
        mc_run(trained_net, held_out_inputs, constant_policy(0.1), T=1)


def test_schedule_must_match_pass_count(trained_net, held_out_inputs):
    with pytest.raises(ConfigError):
        mc_run(trained_net, held_out_inputs, scheduled_policy(0.3, 20), T=10)
    summary = mc_run(trained_net, held_out_inputs, scheduled_policy(0.3, 10), T=10)
    assert summary.std.mean() > 0.0


def test_per_instance_policies(trained_net, held_out_inputs):
    x = held_out_inputs[:3]
    policies = {0: constant_policy(0.0), 1: constant_policy(0.3), 2: constant_policy(0.1)}
    passes = mc_passes(trained_net, x, policies, T=12, seed=9)
    assert passes.shape == (12, 3, 1)
    for i, policy in policies.items():
        np.testing.assert_array_equal(passes[:, i], mc_passes(trained_net, x[i], policy, T=12, seed=9)[:, 0])
    assert np.ptp(passes[:, 0]) == 0.0
    assert np.ptp(passes[:, 1]) > 0.0


def test_missing_instance_policy(trained_net, held_out_inputs):
    with pytest.raises(ConfigError):
        mc_passes(trained_net, held_out_inputs[:3], {0: constant_policy(0.1)}, T=5)


def test_uniform_logits_give_maximal_uncertainty():
    net = init_network(classifier_architecture(2, 3), seed=1)
    zeroed = dataclasses.replace(net, weights=tuple((np.zeros_like(w), np.zeros_like(b)) for w, b in net.weights))
    summary = mc_classify(zeroed, np.random.default_rng(0).normal(size=(6, 2)), constant_policy(0.3), T=5)
    np.testing.assert_allclose(summary.probs, 1 / 3)
    np.testing.assert_allclose(summary.uncertainty, 1 - 1 / 3)
    assert list(summary.to_frame().columns) == ["instance_id", "predicted", "uncertainty", "prob_0", "prob_1", "prob_2"]


def test_classify_probabilities_sum_to_one():
    net = init_network(classifier_architecture(2, 4), seed=3)
    summary = mc_classify(net, np.random.default_rng(1).normal(size=(10, 2)), constant_policy(0.2), T=6)
    np.testing.assert_allclose(summary.probs.sum(axis=1), 1.0)
    assert np.all((summary.uncertainty >= 0.0) & (summary.uncertainty <= 1 - 1 / 4 + 1e-12))


def test_classify_needs_a_classifier(trained_net, held_out_inputs):
    with pytest.raises(ConfigError):
        mc_classify(trained_net, held_out_inputs, constant_policy(0.1))


def test_summary_table_round_trip(trained_net, held_out_inputs, tmp_path):
    summary = mc_run(trained_net, held_out_inputs, constant_policy(0.2), T=10)
    frame = summary.to_frame()
    assert list(frame.columns) == ["instance_id", "mu", "sigma", "lower", "upper"]
    loaded = load_summary(save_summaries(frame, tmp_path / "mc_summaries.csv"), z=1.96)
    np.testing.assert_array_equal(loaded.mean, summary.mean)
    np.testing.assert_array_equal(loaded.std, summary.std)


def test_summary_table_needs_mean_and_spread(tmp_path):
    path = save_summaries(pd.DataFrame({"instance_id": [0, 1], "predicted": [1, 0]}), tmp_path / "mc_summaries.csv")
    with pytest.raises(PersistenceError):
        load_summary(path, z=1.96)


def test_classify_uncertainty_grows_with_the_rate(blob_classifier, blob_inputs):
    means = [mc_classify(blob_classifier, blob_inputs, constant_policy(p), T=30).uncertainty.mean() for p in (0.0, 0.2, 0.5)]
    assert means == sorted(means)
    assert means[-1] > means[0]


def test_classify_without_dropout_is_one_minus_max_softmax(blob_classifier, blob_inputs):
    summary = mc_classify(blob_classifier, blob_inputs, constant_policy(0.0), T=5)
    expected = 1.0 - softmax(predict(blob_classifier, blob_inputs), axis=1).max(axis=1)
    np.testing.assert_allclose(summary.uncertainty, expected, atol=1e-12)
    np.testing.assert_array_equal(summary.predicted, predict(blob_classifier, blob_inputs).argmax(axis=1))
