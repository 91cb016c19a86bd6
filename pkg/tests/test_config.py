# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Tests for run configuration loading and validation."""

from pathlib import Path

import pytest
import yaml

from user_embed.config import (
    DEFAULT_CONFIG,
    EFFECTIVE_CONFIG_NAME,
    apply_override,
    load_config,
    resolve_config,
    save_effective_config,
)
from user_embed.errors import ConfigError


@pytest.fixture
def config_file(tmp_path):
    """Factory writing a YAML config file."""

    def write(content):
        path = tmp_path / "config.yaml"
        path.write_text(content)
        return path

    return write


def test_defaults_resolve():
    """Test the built-in defaults form a valid configuration."""
    run = resolve_config(load_config())
    assert run.seed == 0
    assert run.data.split == (0.8, 0.1, 0.1)
    assert run.train.learning_rate == pytest.approx(1e-3)
    assert run.train.batch_size == 256
    assert run.baselines.pca_components == 50
    assert run.eval.embedding_grid == (10, 50, 100)
    assert run.model_config(2).embedding_dims == (100, 100)


def test_load_config_merges_over_defaults(config_file):
    """Test a partial file only changes the keys it names."""
    path = config_file("seed: 7\ntrain:\n  max_epochs: 3\n")
    config = load_config(path)
    assert config["seed"] == 7
    assert config["train"]["max_epochs"] == 3
    assert config["train"]["batch_size"] == DEFAULT_CONFIG["train"]["batch_size"]


def test_load_config_missing_file(tmp_path):
    """Test error when the config file doesn't exist."""
    with pytest.raises(FileNotFoundError, match="Config file not found"):
        load_config(tmp_path / "missing.yaml")


def test_load_config_invalid_yaml(config_file):
    """Test malformed YAML is a configuration error."""
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(config_file("train: [unclosed\n"))


def test_load_config_unknown_key(config_file):
    """Test unknown keys are rejected with their dotted path."""
    with pytest.raises(ConfigError, match="train.momentum"):
        load_config(config_file("train:\n  momentum: 0.9\n"))


def test_load_config_empty_file(config_file):
    """Test an empty file gives the defaults."""
    assert load_config(config_file("")) == DEFAULT_CONFIG


def test_load_config_json(tmp_path):
    """Test JSON is accepted as YAML."""
    path = tmp_path / "config.json"
    path.write_text('{"seed": 3, "model": {"trunk_depth": 2}}')
    assert resolve_config(load_config(path)).model_config(2).trunk_depth == 2


def test_apply_override_parses_values():
    """Test overrides keep natural YAML types."""
    config = load_config()
    apply_override(config, "train.learning_rate=0.01")
    apply_override(config, "eval.seeds=[4, 5]")
    apply_override(config, "model.embedding_dims=20")
    run = resolve_config(config)
    assert run.train.learning_rate == pytest.approx(0.01)
    assert run.eval.seeds == (4, 5)
    assert run.model_config(3).embedding_dims == (20, 20, 20)


def test_apply_override_errors():
    """Test malformed and unknown overrides."""
    config = load_config()
    with pytest.raises(ConfigError, match="key.path=value"):
        apply_override(config, "train.learning_rate")
    with pytest.raises(ConfigError, match="Unknown configuration key: train.nope"):
        apply_override(config, "train.nope=1")
    with pytest.raises(ConfigError, match="Unknown configuration key: nope"):
        apply_override(config, "nope.deeper=1")


def test_loss_weights_accept_any_target():
    """Test loss weights are keyed by user target names."""
    config = load_config()
    apply_override(config, "train.loss_weights={gender: 2.0}")
    assert resolve_config(config).train.loss_weights == {"gender": 2.0}


def test_section_seeds_inherit_master_seed():
    """Test unset section seeds follow the top-level seed."""
    config = load_config()
    config["seed"] = 11
    config["model"]["seed"] = 5
    run = resolve_config(config)
    assert run.train.seed == 11
    assert run.synth.seed == 11
    assert run.baselines.logreg.seed == 11
    assert run.model_config(2).seed == 5
    assert run.to_dict()["train"]["seed"] == 11


def test_missing_section():
    """Test error when a required section is missing."""
    config = load_config()
    del config["train"]
    with pytest.raises(ConfigError, match="Missing required section: train"):
        resolve_config(config)


@pytest.mark.parametrize(
    "override, message",
    [
        ("data.split=[0.5, 0.5]", "data.split"),
        ("data.min_freq=0", "data.min_freq"),
        ("eval.systems=[argmax, magic]", "eval.systems"),
        ("eval.seeds=[]", "eval.seeds"),
        ("eval.jobs=0", "eval.jobs"),
        ("log_level=LOUD", "log_level"),
        ("train.batch_size=0", "train.batch_size"),
        ("baselines.pca_solver=svd", "baselines.pca_solver"),
        ("model.activation=tanh", "activation"),
        ("eval.jobs=many", "eval.jobs"),
        ("eval.seeds=[a]", "eval.seeds"),
        ("eval.seeds=3", "eval.seeds"),
        ("eval.sweep_embedding_size=big", "eval.sweep_embedding_size"),
        ("eval.systems=argmax", "eval.systems"),
        ("data.split=[a, b, c]", "data.split"),
        ("train.loss_weights={gender: heavy}", "train"),
        ("model.embedding_dims=[x, y]", "model"),
        ("baselines.logreg.l2=lots", "baselines"),
    ],
)
def test_invalid_values(override, message):
    """Test invalid settings name the offending key."""
    config = load_config()
    apply_override(config, override)
    with pytest.raises(ConfigError, match=message):
        resolve_config(config)


def test_effective_config_echo(tmp_path):
    """Test the echoed config resolves to the same run."""
    config = load_config()
    apply_override(config, "seed=9")
    run = resolve_config(config)
    path = save_effective_config(run, tmp_path)
    assert path.name == EFFECTIVE_CONFIG_NAME
    echoed = yaml.safe_load(path.read_text())
    again = resolve_config(echoed)
    assert again.to_dict() == run.to_dict()
    assert again.train == run.train


def test_example_config_resolves():
    """Test the annotated example config in the repository root is valid."""
    path = Path(__file__).parent.parent / "config.yaml"
    run = resolve_config(load_config(path))
    assert run.synth.n_users == 20000
    assert [s.name for s in run.synth.sequences] == ["category", "merchant"]
    assert run.baselines.pca_solver == "eigh"
