# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Multi-sequence user model: embedding bags, fully-connected trunk, softmax heads.

Each sequence space i owns an embedding table G_i of shape (l_i x |S_i|);
column c embeds token c. A sequence is represented by the mean of its
token columns. The pooled vectors of all spaces, in schema order, followed by
the normalized numeric features form the raw user representation. The trunk
(rectifier after every layer) turns it into the deep representation, which
every softmax head reads.
"""

import itertools
import logging
from dataclasses import asdict, dataclass
from typing import Any, Mapping

import numpy as np

from user_embed.data import Batch, DatasetSchema, Normalizer, Vocabulary, bag_matrix
from user_embed.errors import ConfigError, NumericsError, StaleTraceError
from user_embed.numerics import FLOAT, make_rng, softmax

logger = logging.getLogger(__name__)

EMBEDDING_INIT_RANGE = 0.05
ACTIVATION = "relu"

_STATE_IDS = itertools.count(1)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters."""

    embedding_dims: tuple[int, ...] = (100, 100)
    trunk_depth: int = 1
    trunk_width: int = 128
    activation: str = ACTIVATION
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.embedding_dims or any(d < 1 for d in self.embedding_dims):
            raise ConfigError(f"Invalid value for model.embedding_dims: {self.embedding_dims}")
        if self.trunk_depth < 0:
            raise ConfigError(f"Invalid value for model.trunk_depth: {self.trunk_depth}")
        if self.trunk_depth >= 1 and self.trunk_width < 1:
            raise ConfigError(f"Invalid value for model.trunk_width: {self.trunk_width}")
        if self.activation != ACTIVATION:
            raise ConfigError(f"Unsupported activation '{self.activation}' (only '{ACTIVATION}')")

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["embedding_dims"] = list(self.embedding_dims)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        data = dict(data)
        try:
            if "embedding_dims" in data:
                data["embedding_dims"] = tuple(int(d) for d in data["embedding_dims"])
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid model configuration: {e}") from e


def embedding_key(space: str) -> str:
    return f"embedding.{space}"


def trunk_keys(layer: int) -> tuple[str, str]:
    return f"trunk.{layer}.weight", f"trunk.{layer}.bias"


def head_keys(target: str) -> tuple[str, str]:
    return f"head.{target}.weight", f"head.{target}.bias"


class UserModel:
    """Parameters plus the schema, vocabulary and normalizer they were built for."""

    def __init__(
        self,
        config: ModelConfig,
        schema: DatasetSchema,
        vocab: Vocabulary,
        normalizer: Normalizer,
        heads: list[str],
        params: dict[str, np.ndarray],
    ) -> None:
        self.config = config
        self.schema = schema
        self.vocab = vocab
        self.normalizer = normalizer
        self.heads = list(heads)
        self.params = params
        self.state_id = next(_STATE_IDS)

    def touch(self) -> None:
        """Mark parameters as changed; invalidates outstanding traces."""
        self.state_id = next(_STATE_IDS)

    @property
    def raw_width(self) -> int:
        return sum(self.config.embedding_dims) + self.schema.numeric_dim

    @property
    def deep_width(self) -> int:
        return self.config.trunk_width if self.config.trunk_depth else self.raw_width

    def copy(self) -> "UserModel":
        """Deep copy sharing no parameter storage with ``self``."""
        return UserModel(
            config=self.config,
            schema=self.schema,
            vocab=self.vocab,
            normalizer=self.normalizer,
            heads=list(self.heads),
            params={k: v.copy() for k, v in self.params.items()},
        )

    def load_params(self, params: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values in place (e.g. restoring a snapshot)."""
        for name, value in params.items():
            np.copyto(self.params[name], value)
        self.touch()


def init_model(
    cfg: ModelConfig,
    schema: DatasetSchema,
    vocab: Vocabulary,
    normalizer: Normalizer | None = None,
) -> UserModel:
    """Initialize a multi-task model for ``schema``.

    Embeddings ~ Uniform(-0.05, 0.05); trunk and head weights ~
    Normal(0, 2 / fan_in); biases zero. Every parameter draws from its own
    stream derived from ``cfg.seed`` and the parameter name.

    Raises:
        ConfigError: If ``embedding_dims`` does not match the schema.
    """
    if len(cfg.embedding_dims) != len(schema.sequence_names):
        raise ConfigError(
            f"model.embedding_dims has {len(cfg.embedding_dims)} entries, "
            f"schema has {len(schema.sequence_names)} sequence spaces"
        )
    if normalizer is None:
        normalizer = Normalizer(
            mean=np.zeros(schema.numeric_dim, dtype=FLOAT),
            std=np.ones(schema.numeric_dim, dtype=FLOAT),
        )

    params: dict[str, np.ndarray] = {}
    for space, dim in zip(schema.sequence_names, cfg.embedding_dims):
        key = embedding_key(space)
        rng = make_rng(cfg.seed, "init/" + key)
        params[key] = rng.uniform(
            -EMBEDDING_INIT_RANGE, EMBEDDING_INIT_RANGE, size=(dim, vocab.size(space))
        )

    fan_in = sum(cfg.embedding_dims) + schema.numeric_dim
    for layer in range(cfg.trunk_depth):
        w_key, b_key = trunk_keys(layer)
        rng = make_rng(cfg.seed, "init/" + w_key)
        params[w_key] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cfg.trunk_width, fan_in))
        params[b_key] = np.zeros(cfg.trunk_width, dtype=FLOAT)
        fan_in = cfg.trunk_width

    for target in schema.targets:
        w_key, b_key = head_keys(target.name)
        rng = make_rng(cfg.seed, "init/" + w_key)
        params[w_key] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(target.cardinality, fan_in))
        params[b_key] = np.zeros(target.cardinality, dtype=FLOAT)

    model = UserModel(
        config=cfg,
        schema=schema,
        vocab=vocab,
        normalizer=normalizer,
        heads=list(schema.target_names),
        params=params,
    )
    logger.debug("Initialized model with %d parameters", param_count(model))
    return model


def embed_sequence(g: np.ndarray, indices: np.ndarray | list[int]) -> np.ndarray:
    """Mean of the selected columns of ``g``; the zero vector for no indices.

    Raises:
        NumericsError: If an index is outside ``[0, g.shape[1])``.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= g.shape[1]):
        raise NumericsError(f"Token index out of range for embedding with {g.shape[1]} columns")
    return (bag_matrix([idx], g.shape[1]) @ g.T)[0]


@dataclass
class ForwardTrace:
    """Everything backward needs from one forward pass."""

    state_id: int
    batch: Batch
    activations: list[np.ndarray]  # raw representation, then each trunk output
    pre_activations: list[np.ndarray]  # trunk pre-rectifier values
    probs: dict[str, np.ndarray]


def _check_batch(model: UserModel, batch: Batch) -> None:
    if len(batch.bags) != len(model.schema.sequence_names):
        raise NumericsError(
            f"Batch has {len(batch.bags)} sequence spaces, model expects "
            f"{len(model.schema.sequence_names)}"
        )
    for space, bag in zip(model.schema.sequence_names, batch.bags):
        cols = model.params[embedding_key(space)].shape[1]
        if bag.shape[1] != cols:
            raise NumericsError(f"Space '{space}': batch width {bag.shape[1]} != vocabulary {cols}")
    if batch.numeric.shape[1] != model.schema.numeric_dim:
        raise NumericsError(
            f"Numeric width {batch.numeric.shape[1]} != schema {model.schema.numeric_dim}"
        )


def forward(model: UserModel, batch: Batch) -> tuple[dict[str, np.ndarray], ForwardTrace]:
    """Compute per-head class distributions for a batch.

    Returns:
        ``(probs, trace)`` with ``probs[target]`` of shape (B x |Y_j|).

    Raises:
        NumericsError: If the batch does not match the model's schema.
    """
    _check_batch(model, batch)
    pooled = [
        bag @ model.params[embedding_key(space)].T
        for space, bag in zip(model.schema.sequence_names, batch.bags)
    ]
    h = np.concatenate(pooled + [batch.numeric], axis=1)
    activations = [h]
    pre_activations = []
    for layer in range(model.config.trunk_depth):
        w_key, b_key = trunk_keys(layer)
        z = h @ model.params[w_key].T + model.params[b_key]
        pre_activations.append(z)
        h = np.maximum(z, 0.0)
        activations.append(h)

    probs = {}
    for target in model.heads:
        w_key, b_key = head_keys(target)
        probs[target] = softmax(h @ model.params[w_key].T + model.params[b_key])

    trace = ForwardTrace(
        state_id=model.state_id,
        batch=batch,
        activations=activations,
        pre_activations=pre_activations,
        probs=probs,
    )
    return probs, trace


def backward(
    model: UserModel,
    trace: ForwardTrace,
    targets: np.ndarray,
    loss_weights: Mapping[str, float] | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of the batch-mean weighted cross-entropy.

    The loss is ``mean_r sum_j w_j * CE_j(r)`` over the model's heads.

    Args:
        model: Model the trace was produced with (unchanged since).
        trace: Trace from ``forward``.
        targets: Class indices (B x m) in schema target order.
        loss_weights: Per-target weights, default 1.

    Returns:
        Gradients keyed like ``model.params``. Embedding columns of tokens
        absent from the batch get exactly zero.

    Raises:
        StaleTraceError: If the model changed after the forward pass.
    """
    if trace.state_id != model.state_id:
        raise StaleTraceError("Trace does not belong to the current model state")
    weights = dict(loss_weights or {})
    targets = np.asarray(targets, dtype=np.int64)
    n = targets.shape[0]
    grads = {}

    h = trace.activations[-1]
    d_h = np.zeros_like(h)
    for target in model.heads:
        j = model.schema.target_position(target)
        w_key, b_key = head_keys(target)
        d_logits = trace.probs[target].copy()
        d_logits[np.arange(n), targets[:, j]] -= 1.0
        d_logits *= weights.get(target, 1.0) / n
        grads[w_key] = d_logits.T @ h
        grads[b_key] = d_logits.sum(axis=0)
        d_h += d_logits @ model.params[w_key]

    for layer in reversed(range(model.config.trunk_depth)):
        w_key, b_key = trunk_keys(layer)
        d_z = d_h * (trace.pre_activations[layer] > 0.0)
        grads[w_key] = d_z.T @ trace.activations[layer]
        grads[b_key] = d_z.sum(axis=0)
        d_h = d_z @ model.params[w_key]

    offset = 0
    for space, bag in zip(model.schema.sequence_names, trace.batch.bags):
        key = embedding_key(space)
        dim = model.params[key].shape[0]
        grads[key] = d_h[:, offset : offset + dim].T @ bag
        offset += dim

    return {k: grads[k] for k in model.params}


def param_count(model: UserModel) -> int:
    """Number of trainable floats."""
    return int(sum(p.size for p in model.params.values()))


def prune_to_single_head(model: UserModel, target: str) -> UserModel:
    """Copy of ``model`` keeping only the head for ``target``.

    Embeddings and trunk keep their values but share no storage with the
    source model.

    Raises:
        DataError: If ``target`` is not part of the schema.
    """
    model.schema.target(target)
    if target not in model.heads:
        raise NumericsError(f"Model has no head for '{target}' (heads: {model.heads})")
    pruned = model.copy()
    for other in model.heads:
        if other != target:
            for key in head_keys(other):
                del pruned.params[key]
    pruned.heads = [target]
    logger.info(
        "Pruned model to head '%s' (%d -> %d parameters)",
        target,
        param_count(model),
        param_count(pruned),
    )
    return pruned


def represent(model: UserModel, batch: Batch) -> np.ndarray:
    """Deep user representation (raw representation when trunk depth is 0)."""
    _, trace = forward(model, batch)
    return trace.activations[-1]


def predict(model: UserModel, batch: Batch) -> dict[str, np.ndarray]:
    """Argmax class index per head; ties resolve to the lowest index."""
    probs, _ = forward(model, batch)
    return {target: np.argmax(p, axis=1).astype(np.int64) for target, p in probs.items()}