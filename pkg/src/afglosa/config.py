"""YAML config files for scenarios and runs.

Every section maps onto a dataclass; unknown keys are rejected so a typo
cannot silently fall back to a default. Scenario file layout::

    road:      {route_length, stop_line_position, speed_limit, lanes,
                detector_length, guidance_zone_length}
    signal:    {green_duration, red_duration}
    idm:       {delta, time_headway}
    emission:  {idle_rate, c1, c2, c3, c4, c5, co2_per_fuel}
    hdv_classes: [{name, accel_max, decel_max, length, min_gap, spawn_probability}, ...]
    densities: [300, 1200, 2700]

A run file has the sections ``scenario`` (path or inline mapping), ``env``,
``reward``, ``trainer`` (with optional nested ``adam``) and ``run``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .env import EnvConfig, RewardConfig, Scenario
from .hppo import TrainerConfig
from .nets import AdamConfig
from .sim import EmissionModel, IDMParams, RoadConfig, VehicleClass

METHODS = ("af_glosa", "l_glosa", "rule_glosa", "benchmark")
LEARNABLE = ("af_glosa", "l_glosa")


class ConfigError(ValueError):
    pass


def build(cls, data: Optional[dict], where: str):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_keys(data: dict, allowed, where: str):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")


def scenario_from_dict(data: Optional[dict]) -> Scenario:
    data = dict(data or {})
    _check_keys(data, ("road", "signal", "idm", "emission", "hdv_classes", "densities"), "scenario")
    sig = data.get("signal") or {}
    _check_keys(sig, ("green_duration", "red_duration"), "scenario.signal")
    sc = Scenario(
        road=build(RoadConfig, data.get("road"), "scenario.road"),
        green_duration=float(sig.get("green_duration", 20.0)),
        red_duration=float(sig.get("red_duration", 20.0)),
        idm=build(IDMParams, data.get("idm"), "scenario.idm"),
        emission=build(EmissionModel, data.get("emission"), "scenario.emission"),
    )
    if sc.green_duration <= 0 or sc.red_duration <= 0:
        raise ConfigError("scenario.signal: durations must be positive")
    if "hdv_classes" in data:
        classes = tuple(build(VehicleClass, c, f"scenario.hdv_classes[{i}]")
                        for i, c in enumerate(data["hdv_classes"]))
        total = sum(c.spawn_probability for c in classes)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"scenario.hdv_classes: spawn probabilities sum to {total}")
        sc.classes = classes
    if "densities" in data:
        dens = tuple(data["densities"])
        if not dens or any(d < 0 for d in dens):
            raise ConfigError("scenario.densities must be a non-empty list of flows >= 0")
        sc.densities = dens
    return sc


def load_scenario(path) -> Scenario:
    return scenario_from_dict(_read(path))


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "road": dataclasses.asdict(sc.road),
        "signal": {"green_duration": sc.green_duration, "red_duration": sc.red_duration},
        "idm": dataclasses.asdict(sc.idm),
        "emission": dataclasses.asdict(sc.emission),
        "hdv_classes": [dataclasses.asdict(c) for c in sc.classes],
        "densities": list(sc.densities),
    }


@dataclass
class RunConfig:
    method: str = "af_glosa"
    densities: tuple = (300, 1200, 2700)
    eval_repeats: int = 100
    seed: int = 7
    episodes: int = 5000
    out_dir: str = "runs"
    scenario_path: Optional[str] = None
    scenario: Scenario = field(default_factory=Scenario)
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(total_episodes=5000))

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.eval_repeats < 1:
            raise ConfigError("eval_repeats must be >= 1")
        if not self.densities:
            raise ConfigError("densities must be non-empty")
        missing = [d for d in self.densities if d not in self.scenario.densities]
        if missing:
            raise ConfigError(f"densities {missing} not configured in the scenario")
        if self.scenario_path and not Path(self.scenario_path).exists():
            raise ConfigError(f"scenario file not found: {self.scenario_path}")
        return self

    def as_dict(self) -> dict:
        return {
            "method": self.method, "densities": list(self.densities),
            "eval_repeats": self.eval_repeats, "seed": self.seed, "episodes": self.episodes,
            "scenario": scenario_to_dict(self.scenario),
            "env": dataclasses.asdict(self.env), "reward": dataclasses.asdict(self.reward),
            "trainer": dataclasses.asdict(self.trainer),
        }

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _read(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_run_config(path=None) -> RunConfig:
    """Read a run file (or defaults when ``path`` is None), then apply the
    ``AFGLOSA_SEED`` / ``AFGLOSA_OUT`` environment overrides."""
    data = _read(path) if path else {}
    _check_keys(data, ("scenario", "env", "reward", "trainer", "run"), str(path))
    cfg = RunConfig()
    scen = data.get("scenario")
    if isinstance(scen, str):
        p = Path(scen)
        if path and not p.is_absolute():
            p = Path(path).parent / p
        cfg.scenario_path = str(p)
        if not p.exists():
            raise ConfigError(f"scenario file not found: {p}")
        cfg.scenario = load_scenario(p)
    elif scen is not None:
        cfg.scenario = scenario_from_dict(scen)
    cfg.env = build(EnvConfig, data.get("env"), "env")
    cfg.reward = build(RewardConfig, data.get("reward"), "reward")
    tr = dict(data.get("trainer") or {})
    adam = build(AdamConfig, tr.pop("adam", None), "trainer.adam")
    tr.setdefault("total_episodes", 5000)
    cfg.trainer = build(TrainerConfig, {**tr, "adam": adam}, "trainer")
    run = data.get("run") or {}
    _check_keys(run, ("method", "densities", "eval_repeats", "seed", "out_dir", "episodes"), "run")
    for k, v in run.items():
        setattr(cfg, k, tuple(v) if k == "densities" else v)
    if "episodes" not in run:
        cfg.episodes = cfg.trainer.total_episodes
    if "AFGLOSA_SEED" in os.environ:
        cfg.seed = int(os.environ["AFGLOSA_SEED"])
    if "AFGLOSA_OUT" in os.environ:
        cfg.out_dir = os.environ["AFGLOSA_OUT"]
    return cfg.validate()


def replace(obj, **changes):
    return dataclasses.replace(obj, **changes)
