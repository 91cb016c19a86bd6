# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Pytest configuration and shared fixtures."""

import numpy as np
import pytest

from user_embed.data import (
    Batch,
    UNK_TOKEN,
    DatasetSchema,
    EncodedDataset,
    TargetSpec,
    UserRecord,
    Vocabulary,
    bag_matrix,
    build_vocab,
    fit_normalizer,
)
from user_embed.model import ModelConfig, init_model
from user_embed.synth import SynthConfig, SynthSequence, SynthTarget


@pytest.fixture
def small_schema():
    """Two sequence spaces, three numerics, a binary and a ternary target."""
    return DatasetSchema(
        sequence_names=("a", "b"),
        numeric_dim=3,
        targets=(
            TargetSpec("t2", ("no", "yes")),
            TargetSpec("t3", ("x", "y", "z")),
        ),
    )


@pytest.fixture
def small_vocab():
    """Vocabulary sizes 10 and 20 (UNK included)."""
    return Vocabulary(
        tokens={
            "a": (UNK_TOKEN, *(f"a{i}" for i in range(1, 10))),
            "b": (UNK_TOKEN, *(f"b{i}" for i in range(1, 20))),
        }
    )


@pytest.fixture
def small_config():
    """Reference architecture: l = (4, 4), one trunk layer of width 8."""
    return ModelConfig(embedding_dims=(4, 4), trunk_depth=1, trunk_width=8, seed=0)


@pytest.fixture
def small_model(small_config, small_schema, small_vocab):
    """The 261-parameter reference model."""
    return init_model(small_config, small_schema, small_vocab)


@pytest.fixture
def make_records(small_schema):
    """Factory for random records of ``small_schema``."""

    def factory(n, seed=0, max_len=6):
        rng = np.random.default_rng(seed)
        records = []
        for _ in range(n):
            records.append(
                UserRecord(
                    sequences={
                        "a": [f"a{int(i)}" for i in rng.integers(1, 10, rng.integers(0, max_len))],
                        "b": [f"b{int(i)}" for i in rng.integers(1, 20, rng.integers(0, max_len))],
                    },
                    numeric=[float(v) for v in rng.normal(0.0, 2.0, small_schema.numeric_dim)],
                    targets={
                        "t2": ("no", "yes")[int(rng.integers(0, 2))],
                        "t3": ("x", "y", "z")[int(rng.integers(0, 3))],
                    },
                )
            )
        return records

    return factory


@pytest.fixture
def small_dataset(make_records, small_schema):
    """Encoded train/val splits of random small-schema records."""
    train_records = make_records(60, seed=1)
    val_records = make_records(20, seed=2)
    vocab = build_vocab(train_records, small_schema)
    normalizer = fit_normalizer(train_records, small_schema.numeric_dim)
    return (
        EncodedDataset(train_records, vocab, small_schema, normalizer),
        EncodedDataset(val_records, vocab, small_schema, normalizer),
        vocab,
        normalizer,
    )


@pytest.fixture
def tiny_synth_config():
    """Small synthetic generator with a strong planted signal."""
    return SynthConfig(
        seed=3,
        n_users=300,
        targets=(
            SynthTarget("gender", ("M", "F"), (0.68, 0.32)),
            SynthTarget("size", ("s", "m", "l"), (0.5, 0.3, 0.2)),
        ),
        sequences=(
            SynthSequence("category", vocab_size=8, mean_length=12.0, background_weight=0.3),
            SynthSequence("merchant", vocab_size=30, mean_length=12.0, background_weight=0.3),
        ),
        numeric_dim=2,
    )


@pytest.fixture
def make_batch():
    """Factory for random reference-model batches (first user has an empty sequence)."""

    def factory(seed, sizes=(10, 20), numeric_dim=3, rows=5):
        rng = np.random.default_rng(seed)
        sequences = [
            [rng.integers(0, size, rng.integers(0, 7)) for _ in range(rows)] for size in sizes
        ]
        sequences[0][0] = np.zeros(0, dtype=np.int64)
        targets = np.stack([rng.integers(0, 2, rows), rng.integers(0, 3, rows)], axis=1)
        return Batch(
            bags=tuple(bag_matrix(seqs, size) for seqs, size in zip(sequences, sizes)),
            numeric=rng.normal(size=(rows, numeric_dim)),
            targets=targets,
        )

    return factory


@pytest.fixture
def tiny_overrides():
    """Dotted overrides that keep every training loop to a few epochs."""
    return [
        "model.embedding_dims=4",
        "model.trunk_width=8",
        "train.max_epochs=3",
        "train.batch_size=32",
        "train.fine_tune.max_epochs=2",
        "baselines.pca_components=3",
        "baselines.logreg.max_epochs=5",
        "baselines.logreg.batch_size=32",
        "eval.seeds=[0]",
        "eval.embedding_grid=[2,4]",
        "eval.depth_grid=[0,1]",
        "eval.sweep_embedding_size=4",
    ]
