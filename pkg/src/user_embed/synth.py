# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Synthetic transaction data with a planted signal and its exact Bayes oracle.

Each user draws every target class independently from its marginal. Tokens
of a sequence space come from a mixture of a background distribution and the
mean of the topic distributions of the user's classes; numeric features are
the sum of the class means plus Gaussian noise. Since the generator is
known, the posterior over all target tuples is computable exactly.
"""

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from user_embed.data import DatasetSchema, TargetSpec, UserRecord, bag_matrix
from user_embed.errors import ConfigError, DataError
from user_embed.numerics import FLOAT, logsumexp, make_rng

logger = logging.getLogger(__name__)

# Upper bound on the number of enumerated target tuples
MAX_TUPLES = 10**6

# Users per chunk when scoring with the oracle
ORACLE_CHUNK = 1024

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SynthTarget:
    name: str
    labels: tuple[str, ...]
    marginal: tuple[float, ...]


@dataclass(frozen=True)
class SynthSequence:
    name: str
    vocab_size: int
    mean_length: float
    background_weight: float  # lambda: 1.0 means tokens carry no target signal


# Marginals follow the demographic shape of the reference population: a 68/32
# gender skew, rare divorced status, and the modal shares of the arg-max row.
DEFAULT_TARGETS = (
    SynthTarget("gender", ("M", "F"), (0.68, 0.32)),
    SynthTarget("marital_status", ("S", "D", "P", "M"), (0.32, 0.035, 0.19, 0.455)),
    SynthTarget("household_adults", ("1", "2", "3", "4+"), (0.28, 0.576, 0.10, 0.044)),
    SynthTarget("household_children", ("0", "1", "2", "3+"), (0.501, 0.22, 0.19, 0.089)),
    SynthTarget("education", ("HS", "P", "C", "C+"), (0.12, 0.08, 0.686, 0.114)),
    SynthTarget("residential_status", ("own", "rent", "family", "other"), (0.428, 0.35, 0.15, 0.072)),
)

DEFAULT_SEQUENCES = (
    SynthSequence("category", vocab_size=50, mean_length=40.0, background_weight=0.5),
    SynthSequence("merchant", vocab_size=500, mean_length=40.0, background_weight=0.5),
)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator.

    ``background``, ``topics`` and ``class_means`` may be given explicitly;
    whatever is missing is drawn from the seed by ``resolve``.
    """

    seed: int = 0
    n_users: int = 20000
    targets: tuple[SynthTarget, ...] = DEFAULT_TARGETS
    sequences: tuple[SynthSequence, ...] = DEFAULT_SEQUENCES
    numeric_dim: int = 8
    numeric_noise: float = 1.0
    topic_concentration: float = 0.1
    class_mean_scale: float = 0.5
    background: dict[str, list[float]] | None = None
    topics: dict[str, dict[str, list[list[float]]]] | None = None
    class_means: dict[str, list[list[float]]] | None = None

    def __post_init__(self) -> None:
        if self.n_users < 1:
            raise ConfigError(f"Invalid value for synth.n_users: {self.n_users}")
        if self.numeric_dim < 0:
            raise ConfigError(f"Invalid value for synth.numeric_dim: {self.numeric_dim}")
        if self.numeric_noise < 0:
            raise ConfigError(f"Invalid value for synth.numeric_noise: {self.numeric_noise}")
        if self.topic_concentration <= 0:
            raise ConfigError("synth.topic_concentration must be > 0")
        for target in self.targets:
            _check_distribution(target.marginal, f"synth.targets.{target.name}.marginal")
            if len(target.marginal) != len(target.labels) or len(target.labels) < 2:
                raise ConfigError(f"synth target '{target.name}' needs one marginal per label")
        for seq in self.sequences:
            if seq.vocab_size < 1:
                raise ConfigError(f"synth sequence '{seq.name}' needs vocab_size >= 1")
            if seq.mean_length <= 0:
                raise ConfigError(f"synth sequence '{seq.name}' needs mean_length > 0")
            if not 0.0 <= seq.background_weight <= 1.0:
                raise ConfigError(f"synth sequence '{seq.name}' needs background_weight in [0, 1]")

    @property
    def schema(self) -> DatasetSchema:
        return DatasetSchema(
            sequence_names=tuple(s.name for s in self.sequences),
            numeric_dim=self.numeric_dim,
            targets=tuple(TargetSpec(t.name, t.labels) for t in self.targets),
        )

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key in ("background", "topics", "class_means"):
            if data[key] is None:
                del data[key]
        return _lists(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SynthConfig":
        data = dict(data)
        try:
            if "targets" in data:
                data["targets"] = tuple(
                    SynthTarget(t["name"], tuple(t["labels"]), tuple(t["marginal"]))
                    for t in data["targets"]
                )
            if "sequences" in data:
                data["sequences"] = tuple(SynthSequence(**s) for s in data["sequences"])
            return cls(**data)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid synth configuration: {e}") from e


def _lists(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


def _check_distribution(p: Sequence[float], what: str) -> None:
    arr = np.asarray(p, dtype=FLOAT)
    if arr.ndim != 1 or arr.size == 0 or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-6:
        raise ConfigError(f"Invalid value for {what}: not a probability distribution")


def normalized(p: Sequence[float]) -> np.ndarray:
    """Rescale a validated distribution to sum to 1 within float rounding."""
    arr = np.asarray(p, dtype=FLOAT)
    return arr / arr.sum()


def token_name(space: str, index: int) -> str:
    return f"{space}_{index:04d}"


@dataclass
class SynthTruth:
    """Fully materialized generative parameters (the ground-truth sidecar)."""

    config: SynthConfig
    background: dict[str, np.ndarray]  # space -> (V,)
    topics: dict[str, list[np.ndarray]]  # space -> per target (K_j x V)
    class_means: list[np.ndarray]  # per target (K_j x p)
    _token_index: dict[str, dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._token_index = {
            s.name: {token_name(s.name, i): i for i in range(s.vocab_size)}
            for s in self.config.sequences
        }

    def token_index(self, space: str, token: str) -> int:
        try:
            return self._token_index[space][token]
        except KeyError:
            raise DataError(f"Token {token!r} is not part of synthetic space '{space}'") from None

    def token_distribution(self, space_pos: int, classes: Sequence[int]) -> np.ndarray:
        """Token distribution of a space for one tuple of target classes."""
        seq = self.config.sequences[space_pos]
        topic = np.mean(
            [self.topics[seq.name][j][k] for j, k in enumerate(classes)], axis=0
        )
        lam = seq.background_weight
        return lam * self.background[seq.name] + (1.0 - lam) * topic

    def to_dict(self) -> dict[str, Any]:
        cfg = self.config.to_dict()
        cfg["background"] = {k: v.tolist() for k, v in self.background.items()}
        cfg["topics"] = {
            space: {t.name: m.tolist() for t, m in zip(self.config.targets, mats)}
            for space, mats in self.topics.items()
        }
        cfg["class_means"] = {
            t.name: m.tolist() for t, m in zip(self.config.targets, self.class_means)
        }
        return cfg


def resolve(cfg: SynthConfig) -> SynthTruth:
    """Materialize any generator parameter not given explicitly.

    Background distributions are Dirichlet(1), topics Dirichlet(alpha) with
    ``alpha = topic_concentration`` and class means Normal(0, scale^2), all
    drawn from the ``synth-params`` stream of the seed.

    Raises:
        ConfigError: If explicit parameters have wrong shapes or are not
            distributions.
    """
    rng = make_rng(cfg.seed, "synth-params")
    background: dict[str, np.ndarray] = {}
    topics: dict[str, list[np.ndarray]] = {}
    for seq in cfg.sequences:
        v = seq.vocab_size
        if cfg.background and seq.name in cfg.background:
            bg = np.asarray(cfg.background[seq.name], dtype=FLOAT)
            if bg.shape != (v,):
                raise ConfigError(f"synth.background.{seq.name} must have {v} entries")
            _check_distribution(bg, f"synth.background.{seq.name}")
        else:
            bg = rng.dirichlet(np.ones(v))
        background[seq.name] = bg

        per_target = []
        for target in cfg.targets:
            k = len(target.labels)
            given = (cfg.topics or {}).get(seq.name, {}).get(target.name)
            if given is not None:
                mat = np.asarray(given, dtype=FLOAT)
                if mat.shape != (k, v):
                    raise ConfigError(f"synth.topics.{seq.name}.{target.name} must be {k}x{v}")
                for row in mat:
                    _check_distribution(row, f"synth.topics.{seq.name}.{target.name}")
            else:
                mat = rng.dirichlet(np.full(v, cfg.topic_concentration), size=k)
            per_target.append(mat)
        topics[seq.name] = per_target

    class_means = []
    for target in cfg.targets:
        k = len(target.labels)
        given = (cfg.class_means or {}).get(target.name)
        if given is not None:
            mat = np.asarray(given, dtype=FLOAT).reshape(k, cfg.numeric_dim)
        else:
            mat = rng.normal(0.0, cfg.class_mean_scale, size=(k, cfg.numeric_dim))
        class_means.append(mat)

    return SynthTruth(config=cfg, background=background, topics=topics, class_means=class_means)


def truth_from_dict(data: dict[str, Any]) -> SynthTruth:
    """Rebuild a SynthTruth from its sidecar document."""
    return resolve(SynthConfig.from_dict(data))


def save_truth(truth: SynthTruth, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(truth.to_dict(), f, sort_keys=True)
        f.write("\n")


def load_truth(path: str | Path) -> SynthTruth:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return truth_from_dict(json.load(f))
    except json.JSONDecodeError as e:
        raise DataError(f"Ground-truth file {path} is not valid JSON: {e}") from e


def synth_generate(cfg: SynthConfig) -> tuple[list[UserRecord], DatasetSchema, SynthTruth]:
    """Generate ``cfg.n_users`` synthetic users.

    Each user draws from its own sub-stream indexed by user id, so any
    shard of users can be regenerated independently.

    Returns:
        ``(records, schema, truth)``.
    """
    truth = resolve(cfg)
    records = []
    for user in range(cfg.n_users):
        rng = make_rng(cfg.seed, "synth-user", user)
        classes = [int(rng.choice(len(t.labels), p=normalized(t.marginal))) for t in cfg.targets]

        sequences = {}
        for pos, seq in enumerate(cfg.sequences):
            dist = truth.token_distribution(pos, classes)
            length = int(rng.poisson(seq.mean_length))
            draws = rng.choice(seq.vocab_size, size=length, p=dist / dist.sum())
            sequences[seq.name] = [token_name(seq.name, int(i)) for i in draws]

        numeric = np.zeros(cfg.numeric_dim, dtype=FLOAT)
        for j, k in enumerate(classes):
            numeric += truth.class_means[j][k]
        if cfg.numeric_dim:
            numeric += cfg.numeric_noise * rng.standard_normal(cfg.numeric_dim)

        records.append(
            UserRecord(
                sequences=sequences,
                numeric=[float(v) for v in numeric],
                targets={t.name: t.labels[k] for t, k in zip(cfg.targets, classes)},
            )
        )

    logger.info(
        "Generated %d synthetic users (seed=%d, lambda=%s)",
        cfg.n_users,
        cfg.seed,
        [s.background_weight for s in cfg.sequences],
    )
    return records, cfg.schema, truth


class BayesOracle:
    """Exact posterior-argmax classifier under a known SynthTruth."""

    def __init__(self, truth: SynthTruth) -> None:
        """Enumerate all target tuples and precompute their log-likelihood tables.

        Raises:
            ConfigError: If the number of tuples exceeds ``MAX_TUPLES``.
        """
        cfg = truth.config
        n_tuples = int(np.prod([len(t.labels) for t in cfg.targets]))
        if n_tuples > MAX_TUPLES:
            raise ConfigError(f"Oracle enumeration bound exceeded: {n_tuples} > {MAX_TUPLES}")

        self.truth = truth
        self.tuples = np.array(
            list(itertools.product(*(range(len(t.labels)) for t in cfg.targets))), dtype=np.int64
        )
        with np.errstate(divide="ignore"):
            log_marginals = [np.log(normalized(t.marginal)) for t in cfg.targets]
        self.log_prior = np.sum(
            [log_marginals[j][self.tuples[:, j]] for j in range(len(cfg.targets))], axis=0
        )

        self.log_token_probs = []
        for pos, seq in enumerate(cfg.sequences):
            topic = np.mean(
                [truth.topics[seq.name][j][self.tuples[:, j]] for j in range(len(cfg.targets))],
                axis=0,
            )
            lam = seq.background_weight
            probs = lam * truth.background[seq.name][None, :] + (1.0 - lam) * topic
            self.log_token_probs.append(np.log(np.maximum(probs, LOG_FLOOR)))

        self.numeric_means = np.sum(
            [truth.class_means[j][self.tuples[:, j]] for j in range(len(cfg.targets))], axis=0
        ).reshape(n_tuples, cfg.numeric_dim)
        logger.debug("Bayes oracle over %d target tuples", n_tuples)

    def _counts(self, records: Sequence[UserRecord], pos: int) -> np.ndarray:
        seq = self.truth.config.sequences[pos]
        idx = [
            np.array([self.truth.token_index(seq.name, tok) for tok in r.sequences[seq.name]],
                     dtype=np.int64)
            for r in records
        ]
        lengths = np.array([len(i) for i in idx], dtype=FLOAT)
        return bag_matrix(idx, seq.vocab_size) * lengths[:, None]

    def log_joint(self, records: Sequence[UserRecord]) -> np.ndarray:
        """Unnormalized log p(tuple, observations) for each record (N x T)."""
        cfg = self.truth.config
        out = np.tile(self.log_prior, (len(records), 1))
        for pos in range(len(cfg.sequences)):
            out += self._counts(records, pos) @ self.log_token_probs[pos].T

        if cfg.numeric_dim:
            x = np.asarray([r.numeric for r in records], dtype=FLOAT)
            sq = (
                np.sum(x * x, axis=1)[:, None]
                - 2.0 * x @ self.numeric_means.T
                + np.sum(self.numeric_means**2, axis=1)[None, :]
            )
            sq = np.maximum(sq, 0.0)
            if cfg.numeric_noise > 0:
                out += -sq / (2.0 * cfg.numeric_noise**2)
            else:
                out = np.where(sq <= 1e-12 * (1.0 + np.max(sq)), out, -np.inf)
        return out

    def posteriors(self, records: Sequence[UserRecord]) -> list[np.ndarray]:
        """Per-target marginal log posteriors (unnormalized), each (N x K_j)."""
        joint = self.log_joint(records)
        out = []
        for j, target in enumerate(self.truth.config.targets):
            cols = [
                logsumexp(joint[:, self.tuples[:, j] == k], axis=1)
                for k in range(len(target.labels))
            ]
            out.append(np.stack(cols, axis=1))
        return out

    def predict(self, records: Sequence[UserRecord]) -> np.ndarray:
        """Per-target posterior argmax class indices (N x m), ties → lowest index."""
        chunks = []
        for start in range(0, len(records), ORACLE_CHUNK):
            part = records[start : start + ORACLE_CHUNK]
            chunks.append(np.stack([np.argmax(p, axis=1) for p in self.posteriors(part)], axis=1))
        if not chunks:
            return np.zeros((0, len(self.truth.config.targets)), dtype=np.int64)
        return np.concatenate(chunks).astype(np.int64)


def bayes_oracle(truth: SynthTruth, record: UserRecord) -> list[int]:
    """Posterior-argmax class index for each target of one record."""
    return [int(k) for k in BayesOracle(truth).predict([record])[0]]
