# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Run configuration: YAML loading, defaults, dotted overrides and validation."""

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from user_embed.baselines import BaselineConfig
from user_embed.errors import ConfigError
from user_embed.model import ModelConfig
from user_embed.synth import SynthConfig
from user_embed.training import TrainConfig

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_NAME = "effective_config.yaml"

SYSTEMS = ("argmax", "stacking", "pca", "model", "finetuned", "oracle")

DEFAULT_CONFIG: dict[str, Any] = {
    "log_level": "INFO",
    "seed": 0,
    "output_dir": "runs/default",
    "data": {
        "dataset": None,
        "schema": None,
        "truth": None,
        "min_freq": 1,
        "split": [0.8, 0.1, 0.1],
    },
    "synth": SynthConfig().to_dict() | {"seed": None},
    "model": ModelConfig().to_dict() | {"seed": None},
    "train": TrainConfig().to_dict() | {"seed": None},
    "baselines": BaselineConfig().to_dict(),
    "eval": {
        "systems": list(SYSTEMS),
        "seeds": [0, 1, 2],
        "embedding_grid": [10, 50, 100],
        "depth_grid": [0, 1, 2],
        "sweep_embedding_size": 50,
        "jobs": 1,
    },
}

# Keys accepted although absent from the defaults
FREEFORM_KEYS = {
    "synth": {"background", "topics", "class_means"},
}

# Mappings whose keys are user data rather than settings
OPAQUE_PATHS = {
    ("train", "loss_weights"),
    ("synth", "background"),
    ("synth", "topics"),
    ("synth", "class_means"),
}

LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


@dataclass(frozen=True)
class DataConfig:
    dataset: str | None = None
    schema: str | None = None
    truth: str | None = None
    min_freq: int = 1
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class EvalConfig:
    systems: tuple[str, ...] = SYSTEMS
    seeds: tuple[int, ...] = (0, 1, 2)
    embedding_grid: tuple[int, ...] = (10, 50, 100)
    depth_grid: tuple[int, ...] = (0, 1, 2)
    sweep_embedding_size: int = 50
    jobs: int = 1


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of one command invocation."""

    raw: dict[str, Any]
    log_level: str
    seed: int
    output_dir: Path
    data: DataConfig
    synth: SynthConfig
    train: TrainConfig
    baselines: BaselineConfig
    eval: EvalConfig
    model_settings: dict[str, Any] = field(default_factory=dict)

    def model_config(self, n_spaces: int, **changes: Any) -> ModelConfig:
        """ModelConfig for a schema with ``n_spaces`` sequence spaces.

        A scalar ``embedding_dims`` is broadcast to every space.
        """
        settings = dict(self.model_settings) | changes
        dims = settings.get("embedding_dims")
        if isinstance(dims, int):
            settings["embedding_dims"] = [dims] * n_spaces
        return ModelConfig.from_dict(settings)

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self.raw)


def _deep_merge(base: dict[str, Any], update: dict[str, Any], path: tuple[str, ...] = ()) -> None:
    """Merge ``update`` into ``base`` in place, rejecting unknown keys."""
    for key, value in update.items():
        here = path + (key,)
        allowed = key in base or key in FREEFORM_KEYS.get(".".join(path), set())
        if not allowed:
            raise ConfigError(f"Unknown configuration key: {'.'.join(here)}")
        if (
            isinstance(value, dict)
            and isinstance(base.get(key), dict)
            and here not in OPAQUE_PATHS
        ):
            _deep_merge(base[key], value, here)
        else:
            base[key] = copy.deepcopy(value)


def load_config(config_path: str | Path | None = None) -> dict[str, Any]:
    """Load a YAML (or JSON) config and merge it over the defaults.

    Args:
        config_path: Path to the config file; ``None`` gives the defaults.

    Returns:
        The merged configuration dictionary (not yet validated).

    Raises:
        FileNotFoundError: If the config file doesn't exist.
        ConfigError: If the file is malformed or contains unknown keys.
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is None:
        return config

    path = Path(config_path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    logger.debug("Loading config from %s", config_path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            user = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {config_path} is not valid YAML: {e}") from e

    if user is None:
        return config
    if not isinstance(user, dict):
        raise ConfigError(f"Config file {config_path} must contain a mapping")
    _deep_merge(config, user)
    logger.info("Config loaded from %s", config_path)
    return config


def apply_override(config: dict[str, Any], override: str) -> None:
    """Apply one ``dotted.path=value`` override in place.

    The value is parsed as YAML, so numbers, booleans and lists keep their
    natural types.

    Raises:
        ConfigError: On a malformed override or an unknown path.
    """
    if "=" not in override:
        raise ConfigError(f"Override must look like key.path=value, got '{override}'")
    dotted, raw_value = override.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid value in override '{override}': {e}") from e

    node = config
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"Unknown configuration key: {'.'.join(keys[: i + 1])}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        parent = ".".join(keys[:-1])
        if not (isinstance(node, dict) and keys[-1] in FREEFORM_KEYS.get(parent, set())):
            raise ConfigError(f"Unknown configuration key: {dotted}")
    node[keys[-1]] = value


def _as_int(value: Any, key: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"Invalid value for {key}: {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {value!r}") from e


def _as_ints(values: Any, key: str) -> tuple[int, ...]:
    if not isinstance(values, (list, tuple)):
        raise ConfigError(f"Invalid value for {key}: expected a list, got {values!r}")
    return tuple(_as_int(v, key) for v in values)


def _as_float(value: Any, key: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {value!r}") from e


def resolve_config(config: dict[str, Any]) -> RunConfig:
    """Validate a merged config and build typed settings.

    Section seeds left as ``null`` inherit the top-level ``seed``; the
    returned ``raw`` mapping has them filled in, so echoing it reproduces
    the run.

    Raises:
        ConfigError: If any section is missing or invalid.
    """
    raw = copy.deepcopy(config)
    for section in DEFAULT_CONFIG:
        if section not in raw:
            raise ConfigError(f"Missing required section: {section}")

    if not isinstance(raw["seed"], int):
        raise ConfigError(f"Invalid value for seed: {raw['seed']!r}")
    level = str(raw["log_level"]).upper()
    if level not in LOG_LEVELS:
        raise ConfigError(f"Invalid value for log_level: {raw['log_level']!r}")
    raw["log_level"] = level
    for section in ("synth", "model", "train"):
        if raw[section].get("seed") is None:
            raw[section]["seed"] = raw["seed"]
    if raw["baselines"].get("logreg", {}).get("seed") is None:
        raw["baselines"].setdefault("logreg", {})["seed"] = raw["seed"]

    data = raw["data"]
    split = data["split"]
    if not isinstance(split, (list, tuple)) or len(split) != 3:
        raise ConfigError(f"Invalid value for data.split: {split!r}")
    if not isinstance(data["min_freq"], int) or data["min_freq"] < 1:
        raise ConfigError(f"Invalid value for data.min_freq: {data['min_freq']!r}")
    data_cfg = DataConfig(
        dataset=data["dataset"],
        schema=data["schema"],
        truth=data["truth"],
        min_freq=data["min_freq"],
        split=tuple(_as_float(f, "data.split") for f in split),  # type: ignore[arg-type]
    )

    ev = raw["eval"]
    if not isinstance(ev["systems"], (list, tuple)):
        raise ConfigError(f"Invalid value for eval.systems: expected a list, got {ev['systems']!r}")
    unknown_systems = set(ev["systems"]) - set(SYSTEMS)
    if unknown_systems:
        raise ConfigError(
            f"Invalid value for eval.systems: {sorted(unknown_systems)} (valid: {list(SYSTEMS)})"
        )
    if not ev["seeds"]:
        raise ConfigError("Invalid value for eval.seeds: at least one seed is required")
    if not ev["embedding_grid"] or not ev["depth_grid"]:
        raise ConfigError("Sweep grids must be non-empty")
    jobs = _as_int(ev["jobs"], "eval.jobs")
    if jobs < 1:
        raise ConfigError(f"Invalid value for eval.jobs: {ev['jobs']!r}")
    eval_cfg = EvalConfig(
        systems=tuple(ev["systems"]),
        seeds=_as_ints(ev["seeds"], "eval.seeds"),
        embedding_grid=_as_ints(ev["embedding_grid"], "eval.embedding_grid"),
        depth_grid=_as_ints(ev["depth_grid"], "eval.depth_grid"),
        sweep_embedding_size=_as_int(ev["sweep_embedding_size"], "eval.sweep_embedding_size"),
        jobs=jobs,
    )

    synth_cfg = SynthConfig.from_dict(raw["synth"])
    run = RunConfig(
        raw=raw,
        log_level=level,
        seed=raw["seed"],
        output_dir=Path(raw["output_dir"]),
        data=data_cfg,
        synth=synth_cfg,
        train=TrainConfig.from_dict(raw["train"]),
        baselines=BaselineConfig.from_dict(raw["baselines"]),
        eval=eval_cfg,
        model_settings=dict(raw["model"]),
    )
    # Fail early on invalid architecture settings
    run.model_config(len(synth_cfg.sequences))
    return run


def save_effective_config(run: RunConfig, output_dir: str | Path | None = None) -> Path:
    """Echo the resolved configuration as YAML into the output directory."""
    out = Path(output_dir) if output_dir is not None else run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    path = out / EFFECTIVE_CONFIG_NAME
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(run.to_dict(), f, sort_keys=False)
    logger.debug("Wrote effective config to %s", path)
    return path
