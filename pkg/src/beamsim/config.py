"""Experiment configuration: one YAML document with three blocks.

Unknown keys are a hard error, anywhere; the error names the offending key.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import yaml

from .learning import LearningSchedule
from .scenario import ConfigError, RadioParams, ScenarioConfig

POLICY_NAMES = ("parallel_ql", "ql", "max_rate", "blockage_aware", "upper_bound")
SWEEP_PARAMETERS = ("mean_speed", "handover_time", "arrival_prob", "learner_cap")


@dataclass
class SweepSpec:
    parameter: str
    values: list

    def validate(self, scenario: ScenarioConfig) -> None:
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep.parameter must be one of {SWEEP_PARAMETERS}")
        if not self.values:
            raise ConfigError("sweep.values must not be empty")
        for v in self.values:
            if self.parameter == "mean_speed":
                if not isinstance(v, int) or not (1 <= v <= scenario.max_speed_mps):
                    raise ConfigError(f"sweep value {v!r} invalid for mean_speed")
            elif self.parameter == "handover_time":
                if not isinstance(v, (int, float)) or v < 0:
                    raise ConfigError(f"sweep value {v!r} invalid for handover_time")
            elif self.parameter == "arrival_prob":
                if not isinstance(v, (int, float)) or not (0 < v <= 1):
                    raise ConfigError(f"sweep value {v!r} invalid for arrival_prob")
            else:  # learner_cap
                if v in (None, "inf"):
                    continue
                if not isinstance(v, int) or v < 1:
                    raise ConfigError(f"sweep value {v!r} invalid for learner_cap")

    def normalized_values(self) -> list:
        if self.parameter == "learner_cap":
            return [None if v in (None, "inf") else v for v in self.values]
        return list(self.values)


@dataclass
class ExperimentSettings:
    policy: str = "parallel_ql"
    mode: str = "event_serial"
    learner_cap: Optional[int] = None
    max_updates: Optional[int] = None
    max_sim_time_s: Optional[float] = None
    eval_trips: int = 1000
    seeds: list[int] = field(default_factory=lambda: [1])
    sweep: Optional[SweepSpec] = None
    log_every: int = 100
    ma_window: int = 2000

    def validate(self, scenario: ScenarioConfig) -> None:
        if self.policy not in POLICY_NAMES:
            raise ConfigError(f"experiment.policy must be one of {POLICY_NAMES}")
        if self.mode not in ("event_serial", "concurrent"):
            raise ConfigError("experiment.mode must be event_serial or concurrent")
        if self.learner_cap is not None and self.learner_cap < 1:
            raise ConfigError("experiment.learner_cap must be >= 1 (or null for unlimited)")
        if not self.seeds:
            raise ConfigError("experiment.seeds must not be empty")
        if self.eval_trips < 1:
            raise ConfigError("experiment.eval_trips must be >= 1")
        if self.max_updates is not None and self.max_updates <= 0:
            raise ConfigError("experiment.max_updates must be positive")
        if self.max_sim_time_s is not None and self.max_sim_time_s <= 0:
            raise ConfigError("experiment.max_sim_time_s must be positive")
        if self.max_updates is not None and self.max_sim_time_s is not None:
            raise ConfigError("set only one of max_updates / max_sim_time_s")
        if self.max_updates is None and self.max_sim_time_s is None:
            self.max_updates = 10_000  # default iteration-axis budget
        if self.sweep is not None:
            self.sweep.validate(scenario)


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    schedule: LearningSchedule
    experiment: ExperimentSettings

    def validate(self) -> None:
        self.scenario.validate()
        self.schedule.validate()
        self.experiment.validate(self.scenario)


def _build(cls, data: dict, path: str, nested: Optional[dict] = None):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]}")
    kwargs = {}
    for key, value in data.items():
        builder = (nested or {}).get(key)
        kwargs[key] = builder(value, f"{path}.{key}") if builder else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {path} block: {exc}") from exc


def _radio(value, path):
    return _build(RadioParams, value, path)


def _sweep(value, path):
    if value is None:
        return None
    return _build(SweepSpec, value, path)


def _rates(value, path):
    if value is None:
        return None
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path} must be a list of rates")
    return tuple(float(v) for v in value)


def _learner_cap(value, path):
    if value in (None, "inf"):
        return None
    if not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer, null, or 'inf'")
    return value


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(data) - {"scenario", "schedule", "experiment"})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    scenario = _build(ScenarioConfig, data.get("scenario", {}), "scenario",
                      nested={"radio": _radio, "rates_by_level": lambda v, p: _rates(v, p)})
    schedule = _build(LearningSchedule, data.get("schedule", {}), "schedule")
    experiment = _build(ExperimentSettings, data.get("experiment", {}), "experiment",
                        nested={"sweep": _sweep, "learner_cap": _learner_cap})
    cfg = ExperimentConfig(scenario, schedule, experiment)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return parse_config(data)
