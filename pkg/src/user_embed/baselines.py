# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Comparison systems: arg-max, stacked distributions and PCA per sequence.

The two feature baselines describe every sequence by its token distribution
(normalized counts over the vocabulary, UNK included) and fit one
multinomial logistic regression per target.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Literal, Mapping, Sequence

import numpy as np

from user_embed.data import EncodedDataset, EncodedRecord, Normalizer, apply_normalizer, bag_matrix
from user_embed.errors import ConfigError, DivergenceError, NumericsError
from user_embed.numerics import (
    FLOAT,
    PcaModel,
    as_matrix,
    cross_entropy_rows,
    make_rng,
    pca_fit,
    pca_transform,
    softmax,
)
from user_embed.training import EarlyStopping, OptimizerState, adam_step

logger = logging.getLogger(__name__)

# Rows per chunk when building feature matrices
FEATURE_CHUNK = 4096


@dataclass(frozen=True)
class LogRegConfig:
    """Solver settings for the softmax regressions."""

    l2: float = 1e-4
    learning_rate: float = 1e-2
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20
    min_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.l2 < 0:
            raise ConfigError(f"Invalid value for baselines.logreg.l2: {self.l2}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("baselines.logreg needs batch_size, max_epochs, patience >= 1")


@dataclass(frozen=True)
class BaselineConfig:
    pca_components: int = 50
    pca_solver: Literal["eigh", "jacobi"] = "eigh"
    logreg: LogRegConfig = field(default_factory=LogRegConfig)

    def __post_init__(self) -> None:
        if self.pca_components < 1:
            raise ConfigError(
                f"Invalid value for baselines.pca_components: {self.pca_components}"
            )
        if self.pca_solver not in ("eigh", "jacobi"):
            raise ConfigError(f"Invalid value for baselines.pca_solver: {self.pca_solver}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BaselineConfig":
        data = dict(data)
        try:
            if "logreg" in data:
                data["logreg"] = LogRegConfig(**data["logreg"])
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid baselines configuration: {e}") from e


def sequence_to_distribution(indices: Sequence[int] | np.ndarray, vocab_size: int) -> np.ndarray:
    """Normalized token counts over the vocabulary; zeros for an empty sequence."""
    return bag_matrix([np.asarray(indices, dtype=np.int64)], vocab_size)[0]


@dataclass(frozen=True)
class MajorityModel:
    """Modal class per target on the fit split."""

    classes: np.ndarray  # (m,)

    def predict(self, n_rows: int) -> np.ndarray:
        return np.tile(self.classes, (n_rows, 1))


def fit_majority(targets: np.ndarray, cardinalities: Sequence[int]) -> MajorityModel:
    """Pick the most frequent class of every target column (ties → lowest index)."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape[0] == 0:
        raise NumericsError("Cannot fit the majority baseline on zero rows")
    classes = [
        int(np.argmax(np.bincount(targets[:, j], minlength=k)))
        for j, k in enumerate(cardinalities)
    ]
    return MajorityModel(classes=np.asarray(classes, dtype=np.int64))


def predict_majority(model: MajorityModel, record: EncodedRecord | None = None) -> list[int]:
    """Constant prediction; the record is ignored."""
    return [int(c) for c in model.classes]


def build_stacking_features(
    record: EncodedRecord, vocab_sizes: Sequence[int], normalizer: Normalizer
) -> np.ndarray:
    """Per-space distributions (schema order) followed by z-scored numerics."""
    blocks = [sequence_to_distribution(s, n) for s, n in zip(record.sequences, vocab_sizes)]
    blocks.append(apply_normalizer(normalizer, record.numeric))
    return np.concatenate(blocks)


def build_pca_features(
    record: EncodedRecord,
    pca_models: Sequence[PcaModel],
    vocab_sizes: Sequence[int],
    normalizer: Normalizer,
) -> np.ndarray:
    """Per-space PCA projections of the distributions followed by z-scored numerics.

    Raises:
        NumericsError: If a distribution width differs from its PcaModel.
    """
    blocks = [
        pca_transform(m, sequence_to_distribution(s, n)[None, :])[0]
        for s, m, n in zip(record.sequences, pca_models, vocab_sizes)
    ]
    blocks.append(apply_normalizer(normalizer, record.numeric))
    return np.concatenate(blocks)


class StackingFeatures:
    """Feature pipeline of the stacking baseline."""

    name = "stacking"

    def fit(self, dataset: EncodedDataset) -> "StackingFeatures":
        self.vocab_sizes = dataset.vocab_sizes
        self.numeric_dim = dataset.schema.numeric_dim
        return self

    @property
    def width(self) -> int:
        return sum(self.vocab_sizes) + self.numeric_dim

    def transform(self, dataset: EncodedDataset) -> np.ndarray:
        chunks = []
        for start in range(0, len(dataset), FEATURE_CHUNK):
            batch = dataset.batch(np.arange(start, min(start + FEATURE_CHUNK, len(dataset))))
            chunks.append(np.concatenate(list(batch.bags) + [batch.numeric], axis=1))
        return np.concatenate(chunks)

    def describe(self) -> dict[str, Any]:
        return {"pipeline": self.name, "vocab_sizes": list(self.vocab_sizes)}


class PcaFeatures:
    """Feature pipeline of the PCA-per-sequence baseline.

    One PcaModel per sequence space is fitted on the training split's
    distribution matrix; other splits are projected with training statistics.
    """

    name = "pca"

    def __init__(self, n_components: int = 50, solver: Literal["eigh", "jacobi"] = "eigh") -> None:
        self.n_components = n_components
        self.solver = solver
        self.models: list[PcaModel] = []

    def fit(self, dataset: EncodedDataset) -> "PcaFeatures":
        full = dataset.batch()
        self.models = [pca_fit(bag, self.n_components, self.solver) for bag in full.bags]
        logger.info(
            "PCA baseline components per space: %s (requested %d)",
            self.dims,
            self.n_components,
        )
        return self

    @property
    def dims(self) -> list[int]:
        return [m.n_components for m in self.models]

    def transform(self, dataset: EncodedDataset) -> np.ndarray:
        chunks = []
        for start in range(0, len(dataset), FEATURE_CHUNK):
            batch = dataset.batch(np.arange(start, min(start + FEATURE_CHUNK, len(dataset))))
            blocks = [pca_transform(m, bag) for m, bag in zip(self.models, batch.bags)]
            chunks.append(np.concatenate(blocks + [batch.numeric], axis=1))
        return np.concatenate(chunks)

    def describe(self) -> dict[str, Any]:
        return {
            "pipeline": self.name,
            "requested_components": self.n_components,
            "components": self.dims,
            "solver": self.solver,
        }


@dataclass
class SoftmaxRegression:
    """Multinomial logistic regression for one target."""

    weight: np.ndarray  # (K x d)
    bias: np.ndarray  # (K,)
    epochs_run: int = 0
    stop_reason: str = "max_epochs"

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(x @ self.weight.T + self.bias)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1).astype(np.int64)


def logreg_objective(
    model: SoftmaxRegression, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient."""
    n = x.shape[0]
    probs = model.predict_proba(x)
    loss = float(np.mean(cross_entropy_rows(probs, y))) + 0.5 * l2 * float(np.sum(model.weight**2))
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    grads = {"weight": d_logits.T @ x + l2 * model.weight, "bias": d_logits.sum(axis=0)}
    return loss, grads


def fit_logreg(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    cfg: LogRegConfig,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> SoftmaxRegression:
    """Fit a softmax regression with Adam, L2 and early stopping.

    Early stopping watches the validation cross-entropy when a validation
    set is given, otherwise the full training objective. Weights start at
    zero and the best epoch is restored.

    Raises:
        DivergenceError: On a non-finite loss.
    """
    x = as_matrix(x, "features")
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    model = SoftmaxRegression(
        weight=np.zeros((n_classes, d), dtype=FLOAT), bias=np.zeros(n_classes, dtype=FLOAT)
    )
    params = {"weight": model.weight, "bias": model.bias}
    state = OptimizerState.zeros_like(params)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    best = {k: v.copy() for k, v in params.items()}

    for epoch in range(1, cfg.max_epochs + 1):
        order = make_rng(cfg.seed, "logreg-shuffle", epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            loss, grads = logreg_objective(model, x[rows], y[rows], cfg.l2)
            if not math.isfinite(loss):
                raise DivergenceError(f"Non-finite logistic regression loss in epoch {epoch}")
            adam_step(params, grads, state, cfg.learning_rate)

        if x_val is not None and y_val is not None:
            monitored = float(np.mean(cross_entropy_rows(model.predict_proba(x_val), y_val)))
        else:
            monitored, _ = logreg_objective(model, x, y, cfg.l2)
        if not math.isfinite(monitored):
            raise DivergenceError(f"Non-finite logistic regression loss in epoch {epoch}")

        is_best, stop = stopper.update(epoch, monitored)
        if is_best:
            best = {k: v.copy() for k, v in params.items()}
        model.epochs_run = epoch
        if stop:
            model.stop_reason = "early_stop"
            break

    np.copyto(model.weight, best["weight"])
    np.copyto(model.bias, best["bias"])
    logger.debug(
        "Logistic regression (%d x %d, K=%d): %s after %d epochs, best %d",
        n,
        d,
        n_classes,
        model.stop_reason,
        model.epochs_run,
        stopper.best_epoch,
    )
    return model


def predict_logreg(model: SoftmaxRegression, x: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties → lowest index."""
    return model.predict(as_matrix(x, "features"))


class LogRegModel:
    """A feature pipeline plus one softmax regression per target."""

    def __init__(self, features: StackingFeatures | PcaFeatures, cfg: LogRegConfig) -> None:
        self.features = features
        self.cfg = cfg
        self.regressions: list[SoftmaxRegression] = []

    @property
    def name(self) -> str:
        return self.features.name

    def fit(self, train_set: EncodedDataset, val_set: EncodedDataset) -> "LogRegModel":
        self.features.fit(train_set)
        x_train = self.features.transform(train_set)
        x_val = self.features.transform(val_set)
        self.regressions = []
        for j, target in enumerate(train_set.schema.targets):
            logger.info(
                "Fitting %s baseline for '%s' (%d features)",
                self.name,
                target.name,
                x_train.shape[1],
            )
            self.regressions.append(
                fit_logreg(
                    x_train,
                    train_set.targets[:, j],
                    target.cardinality,
                    self.cfg,
                    x_val,
                    val_set.targets[:, j],
                )
            )
        return self

    def predict(self, dataset: EncodedDataset) -> np.ndarray:
        x = self.features.transform(dataset)
        return np.stack([r.predict(x) for r in self.regressions], axis=1)

    def describe(self) -> dict[str, Any]:
        return self.features.describe()
