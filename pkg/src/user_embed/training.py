# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Mini-batch multi-task training with Adam, early stopping and fine-tuning."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from user_embed.data import EncodedDataset
from user_embed.errors import ConfigError, DataError, DivergenceError, NumericsError
from user_embed.model import UserModel, backward, forward, prune_to_single_head
from user_embed.numerics import cross_entropy, cross_entropy_rows, make_rng

logger = logging.getLogger(__name__)

# Users per forward pass when evaluating a whole split
EVAL_CHUNK = 2048

STOP_EARLY = "early_stop"
STOP_MAX_EPOCHS = "max_epochs"


@dataclass(frozen=True)
class FineTuneConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 100
    patience: int = 10


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, batching and early-stopping settings."""

    max_epochs: int = 500
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 20
    min_delta: float = 1e-4
    loss_weights: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    fine_tune: FineTuneConfig = field(default_factory=FineTuneConfig)

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ConfigError(f"Invalid value for train.max_epochs: {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"Invalid value for train.batch_size: {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"Invalid value for train.patience: {self.patience}")
        if self.learning_rate < 0:
            raise ConfigError(f"Invalid value for train.learning_rate: {self.learning_rate}")
        if self.fine_tune.max_epochs < 1 or self.fine_tune.patience < 1:
            raise ConfigError("train.fine_tune needs max_epochs >= 1 and patience >= 1")

    def for_fine_tuning(self, target: str) -> "TrainConfig":
        """Settings for fine-tuning a single head on ``target``."""
        return replace(
            self,
            learning_rate=self.fine_tune.learning_rate,
            max_epochs=self.fine_tune.max_epochs,
            patience=self.fine_tune.patience,
            loss_weights={target: 1.0},
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        data = dict(data)
        try:
            if "fine_tune" in data:
                data["fine_tune"] = FineTuneConfig(**data["fine_tune"])
            if "loss_weights" in data:
                data["loss_weights"] = {k: float(v) for k, v in (data["loss_weights"] or {}).items()}
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid train configuration: {e}") from e


@dataclass
class OptimizerState:
    """Adam moment accumulators, shaped like the parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update, applied in place.

    Raises:
        NumericsError: If gradient or state shapes differ from the parameters.
    """
    if set(grads) != set(params) or set(state.m) != set(params):
        raise NumericsError("Gradient/state keys do not match parameters")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise NumericsError(f"Shape mismatch for '{k}': param {p.shape}, grad {g.shape}")
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return params, state


def multitask_loss(
    probs: Sequence[np.ndarray], targets: Sequence[int], weights: Sequence[float]
) -> float:
    """Weighted sum of per-target cross-entropies for one user.

    Raises:
        NumericsError: If the three sequences differ in length.
    """
    if not len(probs) == len(targets) == len(weights):
        raise NumericsError(
            f"Length mismatch: {len(probs)} heads, {len(targets)} labels, {len(weights)} weights"
        )
    return float(sum(w * cross_entropy(p, t) for p, t, w in zip(probs, targets, weights)))


def batch_loss(
    model: UserModel,
    probs: Mapping[str, np.ndarray],
    targets: np.ndarray,
    weights: Mapping[str, float],
) -> tuple[float, dict[str, float]]:
    """Batch-mean weighted loss and the per-target mean cross-entropies."""
    per_target = {}
    total = 0.0
    for target in model.heads:
        j = model.schema.target_position(target)
        ce = float(np.mean(cross_entropy_rows(probs[target], targets[:, j])))
        per_target[target] = ce
        total += weights.get(target, 1.0) * ce
    return total, per_target


def evaluate(
    model: UserModel, dataset: EncodedDataset, weights: Mapping[str, float] | None = None
) -> tuple[float, dict[str, float]]:
    """Mean weighted loss and per-head accuracy over a whole split."""
    weights = weights or {}
    n = len(dataset)
    loss_sum = 0.0
    correct = {target: 0 for target in model.heads}
    for start in range(0, n, EVAL_CHUNK):
        batch = dataset.batch(np.arange(start, min(start + EVAL_CHUNK, n)))
        probs, _ = forward(model, batch)
        loss, _ = batch_loss(model, probs, batch.targets, weights)
        loss_sum += loss * len(batch)
        for target in model.heads:
            j = model.schema.target_position(target)
            correct[target] += int(np.sum(np.argmax(probs[target], axis=1) == batch.targets[:, j]))
    return loss_sum / n, {target: correct[target] / n for target in model.heads}


class EarlyStopping:
    """Patience counter on a monitored loss.

    ``best`` tracks the strict minimum (the snapshot to restore); patience
    resets only on improvements larger than ``min_delta``.
    """

    def __init__(self, patience: int, min_delta: float) -> None:
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self._reference = math.inf
        self._wait = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Record one epoch.

        Returns:
            ``(is_best, should_stop)``.
        """
        is_best = loss < self.best
        if is_best:
            self.best = loss
            self.best_epoch = epoch
        if loss < self._reference - self.min_delta:
            self._reference = loss
            self._wait = 0
        else:
            self._wait += 1
        return is_best, self._wait >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: dict[str, float]
    wall_time: float


@dataclass
class TrainLog:
    """Per-epoch history of one training run."""

    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = STOP_MAX_EPOCHS
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return min(e.val_loss for e in self.epochs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "epochs": [asdict(e) for e in self.epochs],
        }

    def to_frame(self, include_time: bool = True) -> pd.DataFrame:
        rows = []
        for e in self.epochs:
            row: dict[str, Any] = {
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "val_loss": e.val_loss,
            }
            row.update({f"val_acc_{t}": a for t, a in e.val_accuracy.items()})
            if include_time:
                row["wall_time"] = e.wall_time
            rows.append(row)
        return pd.DataFrame(rows)

    def write(self, stem: str | Path) -> None:
        """Write ``<stem>.json`` and ``<stem>.csv``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        with open(stem.with_suffix(".json"), "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        self.to_frame().to_csv(stem.with_suffix(".csv"), index=False)


def train(
    model: UserModel,
    train_set: EncodedDataset,
    val_set: EncodedDataset,
    cfg: TrainConfig,
) -> tuple[UserModel, TrainLog]:
    """Train ``model`` in place on all of its heads.

    Each epoch shuffles with the ``shuffle`` stream of ``cfg.seed``, runs
    Adam over mini-batches (last partial batch kept) and evaluates the
    weighted validation loss. Training stops after ``patience`` epochs
    without an improvement above ``min_delta`` or at ``max_epochs``; the
    parameters of the lowest-validation-loss epoch are restored.

    Returns:
        ``(model, log)``.

    Raises:
        DataError: If a split is empty.
        DivergenceError: On a non-finite training or validation loss.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("Training needs non-empty train and validation splits")

    weights = {t: cfg.loss_weights.get(t, 1.0) for t in model.heads}
    state = OptimizerState.zeros_like(model.params)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    log = TrainLog()
    best_params = {k: v.copy() for k, v in model.params.items()}

    logger.info(
        "Training heads %s on %d users (val %d), lr=%g, batch=%d, max_epochs=%d",
        model.heads,
        len(train_set),
        len(val_set),
        cfg.learning_rate,
        cfg.batch_size,
        cfg.max_epochs,
    )
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = make_rng(cfg.seed, "shuffle", epoch).permutation(len(train_set))
        loss_sum = 0.0
        for batch in train_set.batches(cfg.batch_size, order):
            probs, trace = forward(model, batch)
            loss, _ = batch_loss(model, probs, batch.targets, weights)
            if not math.isfinite(loss):
                raise DivergenceError(f"Non-finite training loss in epoch {epoch}")
            grads = backward(model, trace, batch.targets, weights)
            adam_step(
                model.params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon
            )
            model.touch()
            loss_sum += loss * len(batch)
            logger.debug("epoch %d step %d loss %.6f", epoch, state.step, loss)

        val_loss, val_acc = evaluate(model, val_set, weights)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"Non-finite validation loss in epoch {epoch}")
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / len(train_set),
            val_loss=val_loss,
            val_accuracy=val_acc,
            wall_time=time.perf_counter() - started,
        )
        log.epochs.append(record)
        logger.info(
            "Epoch %d: train %.5f, val %.5f, acc %s",
            epoch,
            record.train_loss,
            val_loss,
            {t: round(a, 4) for t, a in val_acc.items()},
        )

        is_best, stop = stopper.update(epoch, val_loss)
        if is_best:
            best_params = {k: v.copy() for k, v in model.params.items()}
        if stop:
            log.stop_reason = STOP_EARLY
            break

    log.best_epoch = stopper.best_epoch
    model.load_params(best_params)
    logger.info(
        "Training stopped (%s) after %d epochs; best epoch %d, val loss %.5f",
        log.stop_reason,
        len(log.epochs),
        log.best_epoch,
        stopper.best,
    )
    return model, log


def fine_tune(
    model: UserModel,
    target: str,
    train_set: EncodedDataset,
    val_set: EncodedDataset,
    cfg: TrainConfig,
) -> tuple[UserModel, TrainLog]:
    """Prune to the head of ``target`` and keep training every remaining parameter.

    Uses the ``fine_tune`` learning rate, epoch budget and patience; early
    stopping monitors the target's own validation loss. ``model`` itself
    is left untouched.
    """
    pruned = prune_to_single_head(model, target)
    return train(pruned, train_set, val_set, cfg.for_fine_tuning(target))
