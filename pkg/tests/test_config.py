from pathlib import Path

import pytest
import yaml

from afglosa.config import (ConfigError, RunConfig, load_run_config, load_scenario,
                            scenario_from_dict, scenario_to_dict)
from afglosa.env import Scenario

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_shipped_configs_load():
    cfg = load_run_config(CONFIGS / "run.yaml")
    assert cfg.seed == 7 and cfg.episodes == 5000
    assert cfg.scenario == load_scenario(CONFIGS / "scenario.yaml")


def test_scenario_round_trip_matches_defaults():
    assert scenario_from_dict(scenario_to_dict(Scenario())) == Scenario()


@pytest.mark.parametrize("data", [
    {"road": {"route_lenght": 900}},
    {"signal": {"green": 20}},
    {"extra": 1},
    {"hdv_classes": [{"name": "A", "accel_max": 1, "decel_max": 1, "colour": "red"}]},
])
def test_unknown_scenario_fields_are_rejected(data):
    with pytest.raises(ConfigError, match="unknown field"):
        scenario_from_dict(data)


def test_spawn_probabilities_must_sum_to_one():
    cls = [{"name": "A", "accel_max": 1, "decel_max": 1, "spawn_probability": 0.4}]
    with pytest.raises(ConfigError, match="sum"):
        scenario_from_dict({"hdv_classes": cls})


@pytest.mark.parametrize("section,data", [
    ("env", {"controlstep": 2}),
    ("trainer", {"adam": {"lr": 1}}),
    ("run", {"repeats": 3}),
    ("reward", {"gamma": 0.5}),
])
def test_unknown_run_fields_are_rejected(tmp_path, section, data):
    with pytest.raises(ConfigError, match="unknown field"):
        load_run_config(write(tmp_path, "r.yaml", {section: data}))


def test_invalid_values_are_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, "r.yaml", {"env": {"control_step": 0}}))
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, "r.yaml", {"run": {"method": "magic"}}))
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.yaml")


def test_env_var_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("AFGLOSA_SEED", "42")
    monkeypatch.setenv("AFGLOSA_OUT", str(tmp_path / "o"))
    cfg = load_run_config(write(tmp_path, "r.yaml", {"run": {"seed": 1}}))
    assert cfg.seed == 42 and cfg.out_dir == str(tmp_path / "o")


def test_relative_scenario_path(tmp_path):
    write(tmp_path, "sc.yaml", {"signal": {"green_duration": 25, "red_duration": 15}})
    cfg = load_run_config(write(tmp_path, "r.yaml", {"scenario": "sc.yaml"}))
    assert cfg.scenario.green_duration == 25.0


def test_digest_tracks_content():
    a, b = RunConfig(), RunConfig()
    assert a.digest() == b.digest()
    b.seed = 8
    assert a.digest() != b.digest()
