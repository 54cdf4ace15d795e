"""Tests for config layering: defaults, file, environment, dotted overrides, master seed."""

import json

import pytest

from config import (
    DEFAULTS,
    ENV_SEED,
    ENV_WORKERS,
    ConfigError,
    PipelineConfig,
    apply_overrides,
    load_config,
    parse_override_value,
)
from seeding import derive_seed


@pytest.fixture(autouse=True)
def isolated(monkeypatch, tmp_path):
    for name in ("TURNOVER_WORKDIR", ENV_WORKERS, ENV_SEED):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)


def test_defaults():
    cfg = load_config()
    assert cfg.n_trees == 500
    assert cfg.split.train_fraction == 0.6
    assert cfg.boruta.max_iterations == 100
    assert cfg.feature_exclusions == ("total_turnover", "date")
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


def test_file_then_environment_then_overrides(tmp_path, monkeypatch):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"workers": 2, "forest": {"n_trees": 40}}), encoding="utf-8")
    assert load_config(str(path)).workers == 2
    monkeypatch.setenv(ENV_WORKERS, "3")
    cfg = load_config(str(path))
    assert (cfg.workers, cfg.n_trees) == (3, 40)
    cfg = load_config(str(path), [("workers", "5"), ("forest.n_trees", "60")])
    assert (cfg.workers, cfg.n_trees) == (5, 60)


def test_dotenv_file_is_read(tmp_path):
    (tmp_path / ".env").write_text(f"{ENV_WORKERS}=6\n", encoding="utf-8")
    assert load_config().workers == 6


def test_override_values_are_json_literals():
    assert parse_override_value("50") == 50
    assert parse_override_value("false") is False
    assert parse_override_value("sequential") == "sequential"
    data = apply_overrides({}, [("split.strategy", "sequential"), ("gd.batch", "32")])
    assert data == {"split": {"strategy": "sequential"}, "gd": {"batch": 32}}


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError):
        apply_overrides(DEFAULTS, [("forest.colour", "red")])
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"trees": 5})
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))


def test_invalid_values_become_config_errors():
    with pytest.raises(ConfigError):
        load_config(overrides=[("forest.n_trees", "0")])
    with pytest.raises(ConfigError):
        load_config(overrides=[("split.train_fraction", "1.5")])
    with pytest.raises(ConfigError):
        load_config(seed=-1)


def test_master_seed_fans_out(monkeypatch):
    cfg = load_config(seed=7)
    assert cfg.split.seed == derive_seed(7, "split")
    assert cfg.boruta.seed == derive_seed(7, "boruta")
    assert cfg.forest_seed == derive_seed(7, "forest")
    assert cfg.gd.seed == derive_seed(7, "gd")
    monkeypatch.setenv(ENV_SEED, "7")
    assert load_config() == cfg
    assert load_config(seed=8) != cfg
