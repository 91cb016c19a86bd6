# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Dataset schema, JSONL ingestion, vocabularies, encoding and splitting."""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from user_embed.errors import DataError
from user_embed.numerics import FLOAT, make_rng

logger = logging.getLogger(__name__)

UNK_INDEX = 0
UNK_TOKEN = "<unk>"

# Floor for per-feature standard deviation in the numeric normalizer
STD_FLOOR = 1e-8

RECORD_KEYS = {"sequences", "numeric", "targets"}


@dataclass(frozen=True)
class TargetSpec:
    """One categorical target Y_j with its ordered class labels."""

    name: str
    labels: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class DatasetSchema:
    """Names of the sequence spaces, numeric width and targets."""

    sequence_names: tuple[str, ...]
    numeric_dim: int
    targets: tuple[TargetSpec, ...]

    def __post_init__(self) -> None:
        if len(self.sequence_names) < 1:
            raise DataError("Schema needs at least one sequence space")
        if len(self.targets) < 1:
            raise DataError("Schema needs at least one target")
        if self.numeric_dim < 0:
            raise DataError(f"numeric_dim must be >= 0, got {self.numeric_dim}")
        names = list(self.sequence_names) + [t.name for t in self.targets]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise DataError(f"Duplicate schema names: {duplicates}")
        for target in self.targets:
            if target.cardinality < 2:
                raise DataError(f"Target '{target.name}' needs at least 2 classes")
            if len(set(target.labels)) != target.cardinality:
                raise DataError(f"Target '{target.name}' has duplicate class labels")

    @property
    def target_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.targets)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(t.cardinality for t in self.targets)

    def target(self, name: str) -> TargetSpec:
        for target in self.targets:
            if target.name == name:
                return target
        raise DataError(f"Unknown target '{name}'; valid targets: {list(self.target_names)}")

    def target_position(self, name: str) -> int:
        return self.target_names.index(self.target(name).name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence_names": list(self.sequence_names),
            "numeric_dim": self.numeric_dim,
            "targets": [{"name": t.name, "labels": list(t.labels)} for t in self.targets],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatasetSchema":
        try:
            return cls(
                sequence_names=tuple(data["sequence_names"]),
                numeric_dim=int(data["numeric_dim"]),
                targets=tuple(
                    TargetSpec(name=t["name"], labels=tuple(t["labels"]))
                    for t in data["targets"]
                ),
            )
        except (KeyError, TypeError) as e:
            raise DataError(f"Invalid schema document: missing or malformed {e}") from e


def load_schema(path: str | Path) -> DatasetSchema:
    """Read a schema JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return DatasetSchema.from_dict(json.load(f))
    except json.JSONDecodeError as e:
        raise DataError(f"Schema file {path} is not valid JSON: {e}") from e


def save_schema(schema: DatasetSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=2)
        f.write("\n")


@dataclass
class UserRecord:
    """One user: token sequences, numeric features and target labels."""

    sequences: dict[str, list[str]]
    numeric: list[float]
    targets: dict[str, str]

    def to_dict(self) -> dict[str, Any]:
        return {"sequences": self.sequences, "numeric": self.numeric, "targets": self.targets}

    @classmethod
    def from_dict(cls, obj: Any, schema: DatasetSchema) -> "UserRecord":
        """Build a record from a parsed JSON object, validating against ``schema``.

        Raises:
            DataError: Naming the offending field.
        """
        if not isinstance(obj, dict):
            raise DataError("record must be a JSON object")
        unknown = set(obj) - RECORD_KEYS
        if unknown:
            raise DataError(f"unknown field(s): {sorted(unknown)}")
        for key in sorted(RECORD_KEYS):
            if key not in obj:
                raise DataError(f"missing field: {key}")

        sequences = obj["sequences"]
        if not isinstance(sequences, dict):
            raise DataError("field 'sequences' must be an object")
        unknown = set(sequences) - set(schema.sequence_names)
        if unknown:
            raise DataError(f"unknown sequence(s): {sorted(unknown)}")
        for name in schema.sequence_names:
            if name not in sequences:
                raise DataError(f"missing sequence: {name}")
            tokens = sequences[name]
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise DataError(f"sequence '{name}' must be a list of strings")

        numeric = obj["numeric"]
        if not isinstance(numeric, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in numeric
        ):
            raise DataError("field 'numeric' must be a list of numbers")
        if len(numeric) != schema.numeric_dim:
            raise DataError(
                f"field 'numeric' has length {len(numeric)}, expected {schema.numeric_dim}"
            )
        try:
            values = [float(v) for v in numeric]
        except OverflowError as e:
            raise DataError("field 'numeric' contains a number too large for a float") from e
        if not all(math.isfinite(v) for v in values):
            raise DataError("field 'numeric' contains non-finite values")

        targets = obj["targets"]
        if not isinstance(targets, dict):
            raise DataError("field 'targets' must be an object")
        unknown = set(targets) - set(schema.target_names)
        if unknown:
            raise DataError(f"unknown target(s): {sorted(unknown)}")
        for spec in schema.targets:
            if spec.name not in targets:
                raise DataError(f"missing target: {spec.name}")
            if targets[spec.name] not in spec.labels:
                raise DataError(
                    f"target '{spec.name}' has label {targets[spec.name]!r}, "
                    f"expected one of {list(spec.labels)}"
                )

        return cls(
            sequences={name: list(sequences[name]) for name in schema.sequence_names},
            numeric=values,
            targets={spec.name: targets[spec.name] for spec in schema.targets},
        )


def load_jsonl(path: str | Path, schema: DatasetSchema) -> list[UserRecord]:
    """Load and validate a JSONL dataset.

    Args:
        path: Dataset file, one JSON object per line (blank lines skipped).
        schema: Schema each record must satisfy.

    Returns:
        Records in file order.

    Raises:
        FileNotFoundError: If the file is missing.
        DataError: With the 1-based line number of the first bad line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")

    records = []
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid UTF-8") from e
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: parse error: {e.msg}") from e
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: parse error: {e}") from e
            try:
                records.append(UserRecord.from_dict(obj, schema))
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e

    logger.info("Loaded %d records from %s", len(records), path)
    return records


def write_jsonl(records: Iterable[UserRecord], path: str | Path) -> int:
    """Write records as JSONL with sorted keys; returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":")))
            f.write("\n")
            count += 1
    return count


@dataclass(frozen=True)
class Vocabulary:
    """Per-space token tables; index 0 is reserved for UNK."""

    tokens: dict[str, tuple[str, ...]]
    _lookup: dict[str, dict[str, int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name, table in self.tokens.items():
            if not table or table[0] != UNK_TOKEN:
                raise DataError(f"Vocabulary for '{name}' must start with {UNK_TOKEN}")
        lookup = {name: {tok: i for i, tok in enumerate(table)} for name, table in self.tokens.items()}
        object.__setattr__(self, "_lookup", lookup)

    def size(self, name: str) -> int:
        return len(self.tokens[name])

    def sizes(self, schema: DatasetSchema) -> tuple[int, ...]:
        return tuple(self.size(name) for name in schema.sequence_names)

    def index(self, name: str, token: str) -> int:
        return self._lookup[name].get(token, UNK_INDEX)

    def to_dict(self) -> dict[str, list[str]]:
        return {name: list(table) for name, table in self.tokens.items()}

    @classmethod
    def from_dict(cls, data: dict[str, list[str]]) -> "Vocabulary":
        return cls(tokens={name: tuple(table) for name, table in data.items()})


def build_vocab(
    records: Sequence[UserRecord], schema: DatasetSchema, min_freq: int = 1
) -> Vocabulary:
    """Build per-space vocabularies from training records.

    Tokens occurring at least ``min_freq`` times get indices 1.. in
    frequency-descending order, ties broken lexicographically. Everything
    else maps to UNK.
    """
    if not records:
        raise DataError("Cannot build a vocabulary from zero records")
    tokens = {}
    for name in schema.sequence_names:
        counts = Counter(tok for record in records for tok in record.sequences[name])
        kept = sorted(
            (tok for tok, c in counts.items() if c >= min_freq and tok != UNK_TOKEN),
            key=lambda tok: (-counts[tok], tok),
        )
        tokens[name] = (UNK_TOKEN, *kept)
        logger.debug("Vocabulary '%s': %d tokens (+UNK), min_freq=%d", name, len(kept), min_freq)
    return Vocabulary(tokens=tokens)


@dataclass(frozen=True)
class EncodedRecord:
    """Index form of a UserRecord."""

    sequences: tuple[np.ndarray, ...]
    numeric: np.ndarray
    targets: np.ndarray


def encode(record: UserRecord, vocab: Vocabulary, schema: DatasetSchema) -> EncodedRecord:
    """Map tokens to indices (unseen → UNK) and labels to class indices."""
    sequences = tuple(
        np.array([vocab.index(name, tok) for tok in record.sequences[name]], dtype=np.int64)
        for name in schema.sequence_names
    )
    targets = np.array(
        [spec.index_of(record.targets[spec.name]) for spec in schema.targets], dtype=np.int64
    )
    return EncodedRecord(
        sequences=sequences, numeric=np.asarray(record.numeric, dtype=FLOAT), targets=targets
    )


def split(
    records: Sequence[UserRecord], fractions: tuple[float, float, float], seed: int
) -> tuple[list[UserRecord], list[UserRecord], list[UserRecord]]:
    """Seeded shuffle followed by contiguous train/val/test slicing.

    Validation and test sizes are floored; train receives the remainder.

    Raises:
        DataError: On invalid fractions or an empty slice.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError(f"Split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"Split fractions must sum to 1, got {sum(fractions)}")

    n = len(records)
    n_val = math.floor(n * fractions[1])
    n_test = math.floor(n * fractions[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DataError(
            f"Split of {n} records into {fractions} leaves an empty slice "
            f"({n_train}/{n_val}/{n_test})"
        )

    order = make_rng(seed, "split").permutation(n)
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train : n_train + n_val]]
    test = [records[i] for i in order[n_train + n_val :]]
    logger.info("Split %d records into %d/%d/%d", n, len(train), len(val), len(test))
    return train, val, test


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension z-score parameters for the numeric features."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply_normalizer(self, x)

    def to_dict(self) -> dict[str, list[float]]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, list[float]]) -> "Normalizer":
        return cls(mean=np.asarray(data["mean"], dtype=FLOAT), std=np.asarray(data["std"], dtype=FLOAT))


def fit_normalizer(records: Sequence[UserRecord], numeric_dim: int) -> Normalizer:
    """Fit z-score parameters on the training split (population std, floored)."""
    if not records:
        raise DataError("Cannot fit a normalizer on zero records")
    if numeric_dim == 0:
        return Normalizer(mean=np.zeros(0, dtype=FLOAT), std=np.ones(0, dtype=FLOAT))
    x = np.asarray([r.numeric for r in records], dtype=FLOAT)
    return Normalizer(mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), STD_FLOOR))


def apply_normalizer(normalizer: Normalizer, x: np.ndarray) -> np.ndarray:
    """Map ``x`` to ``(x - mean) / std``; a no-op for zero-width features."""
    x = np.asarray(x, dtype=FLOAT)
    if normalizer.mean.shape[0] == 0:
        return x.copy()
    return (x - normalizer.mean) / normalizer.std


def bag_matrix(sequences: Sequence[np.ndarray], size: int) -> np.ndarray:
    """Row-normalized token counts, one row per index list.

    Row r holds ``count(c) / len`` for each token index c of sequence r, so
    multiplying by an embedding table gives the mean-pooled embedding and
    the row itself is the token distribution. Empty sequences give zero rows.

    Raises:
        DataError: If an index is outside ``[0, size)``.
    """
    out = np.zeros((len(sequences), size), dtype=FLOAT)
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    if lengths.sum() == 0:
        return out
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in sequences])
    if flat.min() < 0 or flat.max() >= size:
        raise DataError(f"Token index out of range for vocabulary of size {size}")
    rows = np.repeat(np.arange(len(sequences)), lengths)
    np.add.at(out, (rows, flat), 1.0)
    nonempty = lengths > 0
    out[nonempty] /= lengths[nonempty, None]
    return out


@dataclass(frozen=True)
class Batch:
    """Model-ready inputs for a set of users."""

    bags: tuple[np.ndarray, ...]  # per space: (B x |S_i|) bag matrices
    numeric: np.ndarray  # (B x p), normalized
    targets: np.ndarray  # (B x m) class indices

    def __len__(self) -> int:
        return int(self.numeric.shape[0])


class EncodedDataset:
    """Encoded, normalized records stored as flat index arrays per space."""

    def __init__(
        self,
        records: Sequence[UserRecord],
        vocab: Vocabulary,
        schema: DatasetSchema,
        normalizer: Normalizer,
    ) -> None:
        """Encode ``records`` against ``vocab`` and normalize their numerics.

        Args:
            records: Schema-valid user records.
            vocab: Vocabulary built on the training split.
            schema: Dataset schema.
            normalizer: Numeric normalizer fitted on the training split.
        """
        self.schema = schema
        self.vocab_sizes = vocab.sizes(schema)
        encoded = [encode(r, vocab, schema) for r in records]

        self._indices: list[np.ndarray] = []
        self._offsets: list[np.ndarray] = []
        for i in range(len(schema.sequence_names)):
            lengths = np.array([len(e.sequences[i]) for e in encoded], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
            flat = (
                np.concatenate([e.sequences[i] for e in encoded])
                if encoded
                else np.zeros(0, dtype=np.int64)
            )
            self._indices.append(flat.astype(np.int64))
            self._offsets.append(offsets)

        raw = np.asarray([e.numeric for e in encoded], dtype=FLOAT).reshape(
            len(encoded), schema.numeric_dim
        )
        self.numeric = apply_normalizer(normalizer, raw)
        self.targets = np.asarray([e.targets for e in encoded], dtype=np.int64).reshape(
            len(encoded), len(schema.targets)
        )

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    def sequences(self, space: int, rows: Sequence[int] | np.ndarray) -> list[np.ndarray]:
        """Index lists of space ``space`` for the given rows."""
        indices, offsets = self._indices[space], self._offsets[space]
        return [indices[offsets[r] : offsets[r + 1]] for r in rows]

    def batch(self, rows: Sequence[int] | np.ndarray | None = None) -> Batch:
        """Assemble a Batch for ``rows`` (all rows when omitted)."""
        if rows is None:
            rows = np.arange(len(self))
        rows = np.asarray(rows, dtype=np.int64)
        bags = tuple(
            bag_matrix(self.sequences(i, rows), size)
            for i, size in enumerate(self.vocab_sizes)
        )
        return Batch(bags=bags, numeric=self.numeric[rows], targets=self.targets[rows])

    def batches(self, batch_size: int, order: np.ndarray | None = None) -> Iterable[Batch]:
        """Yield consecutive batches in ``order``; the last partial batch is kept."""
        if order is None:
            order = np.arange(len(self))
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start : start + batch_size])
