# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Tests for dense numerics, seeded streams and PCA."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from user_embed.errors import NumericsError
from user_embed.numerics import (
    cross_entropy,
    jacobi_eigh,
    make_rng,
    matmul,
    pca_fit,
    pca_reconstruct,
    pca_transform,
    softmax,
)

logits = arrays(
    dtype=np.float64,
    shape=st.integers(1, 20),
    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            total = 0.0
            for k in range(a.shape[1]):
                total += a[i, k] * b[k, j]
            out[i, j] = total
    return out


def test_matmul_identity():
    """Test identity times M gives M."""
    m = np.arange(9, dtype=float).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_example():
    """Test a product small enough to check by hand."""
    result = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
    assert result.tolist() == [[2.0], [4.0]]


@pytest.mark.parametrize("seed", range(20))
def test_matmul_matches_triple_loop(seed):
    """Test random 7x50 by 50x3 products are bit-identical to the naive triple loop."""
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(7, 50)), rng.normal(size=(50, 3))
    assert np.array_equal(matmul(a, b), naive_matmul(a, b))


def test_matmul_empty_inner_dimension():
    """Test a zero-length inner dimension gives zeros."""
    assert np.array_equal(matmul(np.ones((2, 0)), np.ones((0, 3))), np.zeros((2, 3)))


def test_matmul_dimension_mismatch():
    """Test error on incompatible shapes."""
    with pytest.raises(NumericsError, match="Dimension mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_rejects_non_finite():
    """Test NaN inputs are reported instead of propagated."""
    with pytest.raises(NumericsError, match="Non-finite"):
        matmul(np.array([[np.nan]]), np.array([[1.0]]))


def test_softmax_examples():
    """Test symmetric, large and logarithmic inputs."""
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax(np.full(3, 1000.0)), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(
        softmax(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], atol=1e-15
    )


def test_softmax_empty():
    """Test error on empty input."""
    with pytest.raises(NumericsError, match="empty"):
        softmax(np.array([]))


def test_softmax_batch_rows():
    """Test each row of a batch is normalized on its own."""
    probs = softmax(np.array([[0.0, 0.0], [0.0, math.log(3.0)]]))
    np.testing.assert_allclose(probs, [[0.5, 0.5], [0.25, 0.75]], atol=1e-15)


@given(logits)
def test_softmax_sums_to_one(z):
    """Property: outputs are non-negative and sum to one."""
    p = softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


@given(logits, st.floats(-100.0, 100.0))
def test_softmax_shift_invariance(z, c):
    """Property: adding a constant to every logit changes nothing."""
    np.testing.assert_allclose(softmax(z + c), softmax(z), rtol=0, atol=1e-12)


def test_cross_entropy_examples():
    """Test uniform, one-hot and hand-computed cases."""
    assert cross_entropy(np.full(4, 0.25), 2) == pytest.approx(1.386294, abs=1e-6)
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0
    assert cross_entropy(np.array([0.7, 0.3]), 1) == pytest.approx(1.203973, abs=1e-6)


def test_cross_entropy_floor():
    """Test zero probability is clamped before the log."""
    assert cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))


def test_cross_entropy_label_out_of_range():
    """Test error on a label outside the distribution."""
    with pytest.raises(NumericsError, match="out of range"):
        cross_entropy(np.array([0.5, 0.5]), 2)


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(0.0, 1.0)), st.data())
def test_cross_entropy_non_negative(weights, data):
    """Property: cross-entropy is never negative."""
    if weights.sum() == 0:
        weights = np.ones_like(weights)
    probs = weights / weights.sum()
    label = data.draw(st.integers(0, probs.size - 1))
    assert cross_entropy(probs, label) >= 0.0


def test_make_rng_deterministic():
    """Test equal seeds and labels give bit-identical draws."""
    a = make_rng(42, "init").normal(size=100)
    b = make_rng(42, "init").normal(size=100)
    assert np.array_equal(a, b)


def test_make_rng_streams_independent():
    """Test purposes and sub-stream keys select different streams."""
    base = make_rng(42, "init").normal(size=10)
    assert not np.array_equal(base, make_rng(42, "shuffle").normal(size=10))
    assert not np.array_equal(base, make_rng(43, "init").normal(size=10))
    assert not np.array_equal(
        make_rng(42, "shuffle", 1).normal(size=10), make_rng(42, "shuffle", 2).normal(size=10)
    )


def test_jacobi_matches_eigh():
    """Test Jacobi eigenvalues against LAPACK on a random symmetric matrix."""
    rng = np.random.default_rng(0)
    m = rng.normal(size=(6, 6))
    sym = m + m.T
    values, vectors = jacobi_eigh(sym)
    expected = np.sort(np.linalg.eigvalsh(sym))[::-1]
    np.testing.assert_allclose(values, expected, atol=1e-10)
    np.testing.assert_allclose(sym @ vectors, vectors * values, atol=1e-9)


def test_pca_rank_one():
    """Test rank-1 data recovers its direction with the sign rule."""
    v = np.array([0.6, -0.8, 0.0])
    t = np.linspace(-2.0, 3.0, 12)
    model = pca_fit(t[:, None] * v[None, :], 2)
    np.testing.assert_allclose(model.components[0], -v, atol=1e-10)
    assert model.explained_variance[1] == pytest.approx(0.0, abs=1e-12)


def test_pca_axis_aligned():
    """Test covariance diag(4, 1) gives the first axis with variance 4."""
    c, d = math.sqrt(3.0), math.sqrt(3.0) / 2.0
    x = np.array([[c, d], [-c, d], [c, -d], [-c, -d]])
    model = pca_fit(x, 2)
    np.testing.assert_allclose(model.components[0], [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(model.explained_variance, [4.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("solver", ["eigh", "jacobi"])
def test_pca_invariants(solver):
    """Test orthonormality, ordering, sign rule and projected variances."""
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 10)) @ rng.normal(size=(10, 10))
    model = pca_fit(x, 5, solver=solver)
    c = model.components
    np.testing.assert_allclose(c @ c.T, np.eye(5), atol=1e-8)
    assert np.all(np.diff(model.explained_variance) <= 0)
    for row in c:
        assert row[np.argmax(np.abs(row))] > 0
    projected = pca_transform(model, x)
    np.testing.assert_allclose(projected.var(axis=0, ddof=1), model.explained_variance, rtol=1e-6)


def test_pca_subspace_agrees_with_jacobi():
    """Test the default solver against the Jacobi eigendecomposition."""
    rng = np.random.default_rng(2)
    x = rng.normal(size=(40, 10)) * np.arange(1, 11)
    default = pca_fit(x, 3)
    oracle = pca_fit(x, 3, solver="jacobi")
    dots = np.abs(np.sum(default.components * oracle.components, axis=1))
    assert np.all(dots >= 1 - 1e-8)


def test_pca_clamps_components():
    """Test k is clamped to min(N - 1, d)."""
    rng = np.random.default_rng(3)
    model = pca_fit(rng.normal(size=(5, 10)), 50)
    assert model.n_components == 4
    assert model.requested_components == 50
    assert model.clamped


def test_pca_needs_two_rows():
    """Test error on a single row."""
    with pytest.raises(NumericsError, match="at least 2 rows"):
        pca_fit(np.ones((1, 3)), 1)


def test_pca_transform_examples():
    """Test the mean maps to zero and mean + component_1 to e1."""
    rng = np.random.default_rng(4)
    model = pca_fit(rng.normal(size=(30, 6)), 3)
    np.testing.assert_allclose(pca_transform(model, model.mean[None, :]), np.zeros((1, 3)), atol=1e-12)
    shifted = (model.mean + model.components[0])[None, :]
    np.testing.assert_allclose(pca_transform(model, shifted), [[1.0, 0.0, 0.0]], atol=1e-12)


def test_pca_transform_dimension_mismatch():
    """Test error when the column count differs from the fit."""
    model = pca_fit(np.random.default_rng(5).normal(size=(10, 4)), 2)
    with pytest.raises(NumericsError, match="Dimension mismatch"):
        pca_transform(model, np.ones((2, 5)))


def test_pca_reconstruct_round_trip():
    """Test reconstruct-then-transform is idempotent on rank-k data."""
    rng = np.random.default_rng(6)
    x = rng.normal(size=(25, 2)) @ rng.normal(size=(2, 7))
    model = pca_fit(x, 2)
    z = pca_transform(model, x)
    np.testing.assert_allclose(pca_transform(model, pca_reconstruct(model, z)), z, atol=1e-10)
    np.testing.assert_allclose(pca_reconstruct(model, z), x, atol=1e-10)
