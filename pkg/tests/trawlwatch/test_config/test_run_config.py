#!/usr/bin/env python3
"""Tests for layered run configuration"""

import pytest
import yaml

from trawlwatch.config.run_config import ConfigManager, EffortConfig, ModelConfig, ThresholdSettings, load_em_config
from trawlwatch.errors import ConfigError


@pytest.fixture
def config_file(tmp_path):
    def write(data):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(data))
        return str(path)
    return write


def test_defaults_from_bundled_file():
    config = ConfigManager(load_env_file=False).load_config()
    assert config.em.max_iter == 500
    assert config.em.n_restarts == 5
    assert config.model.k == 3
    assert config.trajectory.gap_threshold_hours == 24.0
    assert config.jobs >= 1


def test_file_overrides_defaults(config_file):
    path = config_file({"em": {"tol": 1e-4}, "model": {"grouping": "trip"}, "runtime": {"jobs": 3}})
    config = ConfigManager(path, load_env_file=False).load_config()
    assert config.em.tol == 1e-4
    assert config.em.max_iter == 500
    assert config.model.grouping == "trip"
    assert config.jobs == 3


def test_environment_overrides_file(config_file, monkeypatch):
    path = config_file({"em": {"seed": 1}, "model": {"k": 4}})
    monkeypatch.setenv("TRAWLWATCH_SEED", "9")
    monkeypatch.setenv("TRAWLWATCH_USE_REPORTED_SPEED", "yes")
    config = ConfigManager(path, load_env_file=False).load_config()
    assert config.seed == 9
    assert config.model.k == 4
    assert config.trajectory.use_reported_speed


def test_overrides_win_and_none_is_ignored(config_file, monkeypatch):
    monkeypatch.setenv("TRAWLWATCH_K", "5")
    path = config_file({"em": {"seed": 1}})
    config = ConfigManager(path, load_env_file=False).load_config(
        {"model": {"k": 2, "grouping": None}, "em": {"seed": None}})
    assert config.model.k == 2
    assert config.model.grouping == "all"
    assert config.seed == 1


def test_variable_substitution(config_file, monkeypatch):
    monkeypatch.setenv("CELL", "0.25")
    path = config_file({"effort": {"cell_degrees": "${CELL}"}, "em": {"max_iter": "${ITERATIONS:42}"}})
    config = ConfigManager(path, load_env_file=False).load_config()
    assert config.effort.cell_degrees == 0.25
    assert config.em.max_iter == 42


def test_required_variable_missing(config_file):
    path = config_file({"em": {"max_iter": "${TRAWLWATCH_TEST_UNSET_VARIABLE}"}})
    with pytest.raises(ConfigError, match="not set"):
        ConfigManager(path, load_env_file=False).load_config()


@pytest.mark.parametrize("data,message", [
    ({"modle": {"k": 3}}, "Unknown config sections"),
    ({"em": {"restarts": 2}}, "Unknown EM settings"),
    ({"model": {"k": 1}}, "k must be"),
    ({"model": {"method": "kmeans"}}, "Unknown method"),
    ({"runtime": {"jobs": -2}}, "jobs"),
    ({"thresholds": {"lo": 2.0}}, "both lo and hi"),
])
def test_invalid_configuration(config_file, data, message):
    with pytest.raises(ConfigError, match=message):
        ConfigManager(config_file(data), load_env_file=False).load_config()


def test_bad_environment_value(monkeypatch):
    monkeypatch.setenv("TRAWLWATCH_K", "three")
    with pytest.raises(ConfigError, match="TRAWLWATCH_K"):
        ConfigManager(load_env_file=False).load_config()


def test_missing_explicit_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        ConfigManager(str(tmp_path / "absent.yaml"), load_env_file=False).load_config()


def test_section_validation():
    assert ThresholdSettings(2.0, 4.0).to_config().hi == 4.0
    assert ThresholdSettings().to_config() is None
    with pytest.raises(ConfigError):
        ThresholdSettings(4.0, 2.0)
    with pytest.raises(ConfigError):
        EffortConfig(bbox=[56.0, 55.0, 11.0, 12.0])
    with pytest.raises(ConfigError):
        ModelConfig(decoder="greedy")


def test_em_config_file(tmp_path):
    flat = tmp_path / "flat.yaml"
    flat.write_text("max_iter: 50\ntol: 1.0e-5\n")
    nested = tmp_path / "nested.yaml"
    nested.write_text("em:\n  n_restarts: 2\n")
    assert load_em_config(str(flat)).max_iter == 50
    assert load_em_config(str(nested)).n_restarts == 2
    with pytest.raises(ConfigError):
        load_em_config(str(tmp_path / "missing.yaml"))
