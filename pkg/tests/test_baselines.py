# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Tests for the comparison systems."""

import math

import numpy as np
import pytest

from user_embed.baselines import (
    BaselineConfig,
    LogRegConfig,
    LogRegModel,
    PcaFeatures,
    SoftmaxRegression,
    StackingFeatures,
    build_pca_features,
    build_stacking_features,
    fit_logreg,
    fit_majority,
    logreg_objective,
    predict_logreg,
    predict_majority,
    sequence_to_distribution,
)
from user_embed.data import EncodedDataset, build_vocab, encode, fit_normalizer
from user_embed.errors import ConfigError, NumericsError
from user_embed.numerics import pca_reconstruct, pca_transform


def test_sequence_to_distribution():
    """Test normalized counts and the empty sequence."""
    np.testing.assert_allclose(sequence_to_distribution([0, 0, 2], 3), [2 / 3, 0.0, 1 / 3])
    assert not sequence_to_distribution([], 4).any()


def test_majority_picks_modal_class():
    """Test the modal class per column with ties going to the lowest index."""
    targets = np.array([[0, 1], [1, 1], [1, 0], [0, 2]])
    model = fit_majority(targets, (2, 3))
    assert model.classes.tolist() == [0, 1]
    assert predict_majority(model) == [0, 1]
    assert model.predict(3).shape == (3, 2)


def test_majority_accuracy_equals_modal_share(small_dataset):
    """Test majority accuracy on its fit split is exactly the modal share."""
    train_set, _, _, _ = small_dataset
    model = fit_majority(train_set.targets, train_set.schema.cardinalities)
    preds = model.predict(len(train_set))
    for j, k in enumerate(train_set.schema.cardinalities):
        share = np.bincount(train_set.targets[:, j], minlength=k).max() / len(train_set)
        assert np.mean(preds[:, j] == train_set.targets[:, j]) == share


def test_majority_needs_rows():
    """Test the majority baseline refuses zero rows."""
    with pytest.raises(NumericsError, match="zero rows"):
        fit_majority(np.zeros((0, 2), dtype=np.int64), (2, 3))


def test_stacking_features_match_per_record(make_records, small_schema, small_dataset):
    """Test the batched pipeline equals the per-record feature builder."""
    train_set, _, vocab, normalizer = small_dataset
    features = StackingFeatures().fit(train_set)
    x = features.transform(train_set)
    assert x.shape == (60, features.width)
    assert features.width == sum(train_set.vocab_sizes) + 3
    records = make_records(60, seed=1)
    for row in (0, 17, 59):
        expected = build_stacking_features(
            encode(records[row], vocab, small_schema), train_set.vocab_sizes, normalizer
        )
        np.testing.assert_allclose(x[row], expected, atol=1e-12)


def test_pca_features_clamp_to_vocabulary(small_dataset):
    """Test requested components above the distribution width are clamped."""
    train_set, val_set, _, _ = small_dataset
    features = PcaFeatures(n_components=50).fit(train_set)
    assert features.dims == [min(50, 59, n) for n in train_set.vocab_sizes]
    described = features.describe()
    assert described["components"] == features.dims
    assert described["requested_components"] == 50
    assert features.transform(val_set).shape == (20, sum(features.dims) + 3)


def test_pca_features_jacobi_matches_eigh(small_dataset):
    """Test both solvers give the same projections."""
    train_set, val_set, _, _ = small_dataset
    a = PcaFeatures(n_components=3, solver="eigh").fit(train_set).transform(val_set)
    b = PcaFeatures(n_components=3, solver="jacobi").fit(train_set).transform(val_set)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_logreg_objective_gradient():
    """Test the analytic gradient against central differences."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(12, 4))
    y = rng.integers(0, 3, 12)
    model = SoftmaxRegression(weight=rng.normal(size=(3, 4)), bias=rng.normal(size=3))
    _, grads = logreg_objective(model, x, y, l2=0.1)
    step = 1e-6
    for name in ("weight", "bias"):
        value = getattr(model, name)
        flat = value.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus, _ = logreg_objective(model, x, y, 0.1)
            flat[i] = original - step
            minus, _ = logreg_objective(model, x, y, 0.1)
            flat[i] = original
            assert grads[name].reshape(-1)[i] == pytest.approx((plus - minus) / (2 * step), abs=1e-6)


def test_fit_logreg_separable():
    """Test a linearly separable problem is fitted perfectly."""
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]] * 10)
    y = (x[:, 0] > 0).astype(np.int64)
    model = fit_logreg(x, y, 2, LogRegConfig(learning_rate=0.1, max_epochs=200, batch_size=8))
    assert np.array_equal(model.predict(x), y)
    assert 1 <= model.epochs_run <= 200


def test_fit_logreg_deterministic():
    """Test equal seeds give identical weights."""
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 3))
    y = rng.integers(0, 3, 40)
    cfg = LogRegConfig(max_epochs=10, batch_size=8)
    a = fit_logreg(x, y, 3, cfg)
    b = fit_logreg(x, y, 3, cfg)
    assert np.array_equal(a.weight, b.weight)
    assert np.array_equal(a.bias, b.bias)


@pytest.mark.parametrize("features", [StackingFeatures, lambda: PcaFeatures(n_components=4)])
def test_logreg_model_predicts_every_target(small_dataset, features):
    """Test both feature baselines predict a valid class per target."""
    train_set, val_set, _, _ = small_dataset
    model = LogRegModel(features(), LogRegConfig(max_epochs=5, batch_size=16)).fit(train_set, val_set)
    preds = model.predict(val_set)
    assert preds.shape == (20, 2)
    for j, k in enumerate(val_set.schema.cardinalities):
        assert preds[:, j].min() >= 0 and preds[:, j].max() < k


def test_baseline_config_validation():
    """Test invalid baseline settings."""
    with pytest.raises(ConfigError, match="pca_components"):
        BaselineConfig(pca_components=0)
    with pytest.raises(ConfigError, match="pca_solver"):
        BaselineConfig(pca_solver="svd")
    with pytest.raises(ConfigError, match="l2"):
        LogRegConfig(l2=-1.0)


def test_baseline_config_dict_round_trip():
    """Test BaselineConfig survives to_dict/from_dict."""
    cfg = BaselineConfig(pca_components=7, logreg=LogRegConfig(l2=0.5))
    assert BaselineConfig.from_dict(cfg.to_dict()) == cfg


def test_pca_features_match_per_record(make_records, small_schema, small_dataset):
    """Test the batched PCA pipeline equals the per-record feature builder."""
    train_set, _, vocab, normalizer = small_dataset
    features = PcaFeatures(n_components=4).fit(train_set)
    x = features.transform(train_set)
    records = make_records(60, seed=1)
    for row in (0, 31):
        expected = build_pca_features(
            encode(records[row], vocab, small_schema),
            features.models,
            train_set.vocab_sizes,
            normalizer,
        )
        np.testing.assert_allclose(x[row], expected, atol=1e-12)


def test_predict_logreg_matches_model():
    """Test the functional predictor agrees with the fitted regression."""
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 4))
    y = rng.integers(0, 3, 30)
    model = fit_logreg(x, y, 3, LogRegConfig(max_epochs=5, batch_size=10))
    assert np.array_equal(predict_logreg(model, x), model.predict(x))


def test_sequence_to_distribution_ignores_order_and_repetition():
    """Test permuting or repeating every token leaves the distribution unchanged."""
    tokens = [3, 1, 1, 4, 0, 3]
    base = sequence_to_distribution(tokens, 6)
    assert np.array_equal(sequence_to_distribution(tokens[::-1], 6), base)
    assert np.array_equal(sequence_to_distribution(sorted(tokens), 6), base)
    np.testing.assert_allclose(sequence_to_distribution(tokens * 3, 6), base, atol=1e-15)
    np.testing.assert_allclose(
        sequence_to_distribution([t for t in tokens for _ in range(2)], 6), base, atol=1e-15
    )


def test_pca_features_account_for_top_variance(make_records, small_schema):
    """Test PCA features of 100 users keep the top-k share of distribution variance."""
    records = make_records(100, seed=5, max_len=12)
    vocab = build_vocab(records, small_schema)
    dataset = EncodedDataset(records, vocab, small_schema, fit_normalizer(records, 3))
    features = PcaFeatures(n_components=4).fit(dataset)
    for model, bag in zip(features.models, dataset.batch().bags):
        centered = bag - bag.mean(axis=0)
        total = float(np.sum(centered**2))
        residual = float(np.sum((bag - pca_reconstruct(model, pca_transform(model, bag))) ** 2))
        eigenvalues = np.linalg.eigvalsh(centered.T @ centered)[::-1]
        top_share = float(np.sum(eigenvalues[: model.n_components])) / total
        kept_share = 1.0 - residual / total
        assert kept_share >= top_share - 1e-9
        assert kept_share == pytest.approx(
            float(np.sum(model.explained_variance)) * (len(bag) - 1) / total, rel=1e-6
        )


def test_fit_logreg_identical_features_predict_majority():
    """Test rows that carry no information fall back to the majority class."""
    x = np.tile([0.3, -1.0, 2.0], (100, 1))
    y = np.array([2] * 70 + [0] * 20 + [1] * 10)
    model = fit_logreg(x, y, 3, LogRegConfig(learning_rate=0.05, max_epochs=100, batch_size=100))
    assert np.all(predict_logreg(model, x) == 2)
    assert model.predict_proba(x[:1])[0, 2] == pytest.approx(0.7, abs=0.05)


def test_fit_logreg_converges_to_stationary_point():
    """Test the restored weights have a training gradient norm below 1e-3."""
    rng = np.random.default_rng(4)
    x = rng.normal(size=(200, 2))
    y = (x[:, 0] + rng.normal(size=200) > 0).astype(np.int64)
    cfg = LogRegConfig(
        l2=0.1, learning_rate=3e-4, batch_size=200, max_epochs=10000, patience=10000, min_delta=0.0
    )
    model = fit_logreg(x, y, 2, cfg)
    _, grads = logreg_objective(model, x, y, cfg.l2)
    norm = math.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
    assert norm < 1e-3


def test_fit_logreg_reaches_gaussian_bayes_rate():
    """Test two unit Gaussians at -2 and +2 are classified at the closed-form Bayes rate."""
    rng = np.random.default_rng(6)

    def sample(n):
        y = rng.integers(0, 2, n)
        return (np.where(y == 1, 2.0, -2.0) + rng.standard_normal(n))[:, None], y

    x_train, y_train = sample(200)
    x_test, y_test = sample(20000)
    model = fit_logreg(
        x_train, y_train, 2, LogRegConfig(learning_rate=0.05, max_epochs=300, batch_size=50)
    )
    bayes_rate = 0.5 * (1.0 + math.erf(2.0 / math.sqrt(2.0)))
    assert np.mean(predict_logreg(model, x_test) == y_test) == pytest.approx(bayes_rate, abs=0.02)
