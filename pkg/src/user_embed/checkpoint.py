# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""JSON checkpoints for UserModel.

Floats are written with Python's shortest round-trip representation, so a
save/load cycle restores every parameter bit for bit.
"""

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from user_embed.data import DatasetSchema, Normalizer, Vocabulary
from user_embed.errors import CheckpointError, UserEmbedError
from user_embed.model import ModelConfig, UserModel, param_count
from user_embed.numerics import FLOAT

logger = logging.getLogger(__name__)

# Current checkpoint format version
FORMAT_VERSION = 1


def checkpoint_to_dict(model: UserModel) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "schema": model.schema.to_dict(),
        "vocab": model.vocab.to_dict(),
        "config": model.config.to_dict(),
        "normalizer": model.normalizer.to_dict(),
        "heads": list(model.heads),
        "param_count": param_count(model),
        "weights": {
            name: {"shape": list(value.shape), "data": value.ravel().tolist()}
            for name, value in model.params.items()
        },
    }


def save_checkpoint(model: UserModel, path: str | Path) -> None:
    """Write ``model`` as a single JSON document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(checkpoint_to_dict(model), f)
        f.write("\n")
    logger.info("Saved checkpoint %s (%d parameters)", path, param_count(model))


def load_checkpoint(path: str | Path) -> UserModel:
    """Read a checkpoint written by ``save_checkpoint``.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        CheckpointError: If the file is truncated, malformed, of another
            format version, or its stored float count disagrees with
            ``param_count``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e

    if not isinstance(doc, dict):
        raise CheckpointError(f"Corrupt checkpoint {path}: top level is not an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has format version {version}, expected {FORMAT_VERSION}"
        )

    try:
        params = {}
        for name, entry in doc["weights"].items():
            data = np.asarray(entry["data"], dtype=FLOAT)
            params[name] = data.reshape([int(s) for s in entry["shape"]])
        model = UserModel(
            config=ModelConfig.from_dict(doc["config"]),
            schema=DatasetSchema.from_dict(doc["schema"]),
            vocab=Vocabulary.from_dict(doc["vocab"]),
            normalizer=Normalizer.from_dict(doc["normalizer"]),
            heads=list(doc["heads"]),
            params=params,
        )
    except (KeyError, TypeError, ValueError, UserEmbedError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e

    stored = int(doc.get("param_count", -1))
    if stored != param_count(model):
        raise CheckpointError(
            f"Corrupt checkpoint {path}: param_count {stored} != stored floats "
            f"{param_count(model)}"
        )
    logger.info("Loaded checkpoint %s (heads: %s)", path, model.heads)
    return model
