# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Dense numerics shared by every other module.

Matrices are plain ``numpy`` float64 arrays. The helpers here add the shape
and finiteness checks the rest of the package relies on, the probability
primitives used by the softmax heads, seeded random streams and PCA.
"""

import logging
import zlib
from dataclasses import dataclass
from typing import Literal

import numpy as np

from user_embed.errors import NumericsError

logger = logging.getLogger(__name__)

FLOAT = np.float64

# Floor applied to probabilities before taking logs
PROB_FLOOR = 1e-12

# Jacobi rotation sweeps
JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100


def ensure_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    """Raise if ``x`` contains NaN or Inf.

    Args:
        x: Array to check.
        what: Name used in the error message.

    Returns:
        The unchanged array, for chaining.

    Raises:
        NumericsError: If any entry is not finite.
    """
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"Non-finite values in {what}")
    return x


def as_matrix(x: object, what: str = "matrix") -> np.ndarray:
    """Convert to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=FLOAT)
    if arr.ndim != 2:
        raise NumericsError(f"{what} must be 2-D, got shape {arr.shape}")
    return ensure_finite(arr, what)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with shape and finiteness checks.

    Each cell is summed over the inner index in increasing order, so the
    result is bit-identical to the textbook triple loop.

    Args:
        a: Left operand (r x k).
        b: Right operand (k x c).

    Returns:
        The (r x c) product.

    Raises:
        NumericsError: On dimension mismatch or non-finite result.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise NumericsError(f"Dimension mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=FLOAT)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return ensure_finite(out, "matmul result")


def softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max-subtraction.

    Accepts a single logit vector or a batch of rows.

    Raises:
        NumericsError: On empty or non-finite input.
    """
    z = np.asarray(z, dtype=FLOAT)
    if z.size == 0 or z.shape[-1] == 0:
        raise NumericsError("softmax of empty input")
    ensure_finite(z, "logits")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable log(sum(exp(z))) along ``axis``; -inf rows stay -inf."""
    z = np.asarray(z, dtype=FLOAT)
    zmax = np.max(z, axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(z - zmax), axis=axis, keepdims=True)) + zmax
    return np.squeeze(out, axis=axis)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Categorical cross-entropy of one distribution against a class index.

    Args:
        probs: Probability vector of length K.
        label: True class index.

    Returns:
        ``-ln(max(probs[label], 1e-12))``.

    Raises:
        NumericsError: If ``label`` is out of range.
    """
    probs = np.asarray(probs, dtype=FLOAT)
    if not 0 <= label < probs.shape[-1]:
        raise NumericsError(f"Label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def cross_entropy_rows(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Row-wise cross-entropy for a batch of distributions."""
    probs = np.asarray(probs, dtype=FLOAT)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] != labels.shape[0]:
        raise NumericsError(f"Batch mismatch: {probs.shape[0]} rows vs {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise NumericsError(f"Labels out of range for {probs.shape[1]} classes")
    picked = probs[np.arange(labels.shape[0]), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def make_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Build an independent random stream for one purpose.

    Streams are derived from the master seed and a fixed label, so the
    draws for e.g. ``"init"`` never depend on how many ``"shuffle"`` draws
    happened before. Extra integer keys (user id, epoch, ...) select
    sub-streams. Philox is counter-based, hence platform independent.

    Args:
        seed: Master seed.
        purpose: Stream label such as ``"init"``, ``"shuffle"`` or ``"synth"``.
        *keys: Optional sub-stream indices.

    Returns:
        A seeded ``numpy.random.Generator``.
    """
    label = zlib.crc32(purpose.encode("utf-8"))
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(label, *map(int, keys)))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class PcaModel:
    """Fitted principal component projection."""

    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing
    requested_components: int

    @property
    def n_components(self) -> int:
        return int(self.components.shape[0])

    @property
    def clamped(self) -> bool:
        return self.n_components < self.requested_components


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS
                ) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Args:
        a: Symmetric (d x d) matrix.
        tol: Stop once the off-diagonal Frobenius norm falls below
            ``tol`` times the matrix norm.
        max_sweeps: Upper bound on full sweeps.

    Returns:
        ``(eigenvalues, eigenvectors)`` sorted by decreasing eigenvalue,
        eigenvectors as columns.
    """
    a = as_matrix(a, "symmetric matrix").copy()
    n = a.shape[0]
    if a.shape[1] != n:
        raise NumericsError(f"Jacobi needs a square matrix, got {a.shape}")
    v = np.eye(n, dtype=FLOAT)
    scale = max(float(np.linalg.norm(a)), np.finfo(FLOAT).tiny)

    for sweep in range(max_sweeps):
        off = float(np.sqrt(np.sum(a * a) - np.sum(np.diag(a) ** 2)))
        if off <= tol * scale:
            logger.debug("Jacobi converged after %d sweeps (d=%d)", sweep, n)
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        logger.warning("Jacobi did not converge within %d sweeps (d=%d)", max_sweeps, n)

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], v[:, order]


def _normalize_signs(components: np.ndarray) -> np.ndarray:
    """Flip rows so the entry of largest magnitude is positive (first on ties)."""
    out = components.copy()
    for i, row in enumerate(out):
        if row[int(np.argmax(np.abs(row)))] < 0:
            out[i] = -row
    return out


def pca_fit(x: np.ndarray, k: int, solver: Literal["eigh", "jacobi"] = "eigh") -> PcaModel:
    """Fit PCA on the rows of ``x``.

    ``k`` is clamped to ``min(N - 1, d)``. The covariance uses the unbiased
    (N - 1) denominator, so projected column variances equal
    ``explained_variance``.

    Args:
        x: Data matrix (N x d).
        k: Requested number of components.
        solver: ``"eigh"`` (LAPACK symmetric solver) or ``"jacobi"``.

    Returns:
        The fitted PcaModel.

    Raises:
        NumericsError: If fewer than two rows are given.
    """
    x = as_matrix(x, "PCA input")
    n, d = x.shape
    if n < 2:
        raise NumericsError(f"PCA needs at least 2 rows, got {n}")
    k_eff = max(0, min(k, n - 1, d))
    if k_eff < k:
        logger.warning("PCA components clamped from %d to %d (N=%d, d=%d)", k, k_eff, n, d)

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    if solver == "jacobi":
        values, vectors = jacobi_eigh(cov)
    elif solver == "eigh":
        values, vectors = np.linalg.eigh(cov)
        values, vectors = values[::-1], vectors[:, ::-1]
    else:
        raise NumericsError(f"Unknown PCA solver: {solver}")

    components = _normalize_signs(np.ascontiguousarray(vectors[:, :k_eff].T))
    variance = np.maximum(values[:k_eff], 0.0)
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=variance,
        requested_components=k,
    )


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project rows of ``x`` onto the fitted components: ``(x - mean) @ C.T``."""
    x = as_matrix(x, "PCA input")
    if x.shape[1] != model.mean.shape[0]:
        raise NumericsError(
            f"Dimension mismatch: PCA fitted on {model.mean.shape[0]} columns, got {x.shape[1]}"
        )
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, z: np.ndarray) -> np.ndarray:
    """Map projected rows back to the input space."""
    z = as_matrix(z, "PCA projection")
    return z @ model.components + model.mean
