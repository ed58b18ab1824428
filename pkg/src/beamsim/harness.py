"""Experiment harness: trials, comparison sweeps, and file outputs.

A sweep crosses sweep values x seeds x the four comparison policies on one
pinned world; policies within a (seed, value) cell share random streams so
every comparison is paired.  Cells are independent, so the sweep can fan out
over worker processes and still write byte-identical CSVs (records are
ordered deterministically before writing).
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig
from .evaluate import evaluate_policy, make_policy
from .learning import ConvergenceLog, QTable, run_training, save_snapshot
from .scenario import ConfigError, Scenario, build_scenario

COMPARISON_POLICIES = ("parallel_ql", "max_rate", "blockage_aware", "upper_bound")
METRICS_HEADER = "seed,sweep_param,sweep_value,policy,avg_rate_gbps,handovers,disconn_prob,trips,updates,sim_time_s"


@dataclass
class MetricsRecord:
    seed: int
    sweep_param: str
    sweep_value: str
    policy: str
    avg_rate_gbps: float
    handovers: float
    disconn_prob: float
    trips: int
    updates: int
    sim_time_s: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.disconn_prob <= 1.0):
            raise ValueError("disconnection probability out of [0,1]")
        if self.avg_rate_gbps < 0.0:
            raise ValueError("average data rate cannot be negative")

    def csv_row(self) -> str:
        return (f"{self.seed},{self.sweep_param},{self.sweep_value},{self.policy},"
                f"{self.avg_rate_gbps:.6f},{self.handovers:.6f},{self.disconn_prob:.6f},"
                f"{self.trips},{self.updates},{self.sim_time_s:.6f}")


def format_sweep_value(value) -> str:
    if value is None:
        return "inf"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def apply_sweep_value(scenario: Scenario, parameter: str, value) -> Scenario:
    """Vary a dynamics knob on a pinned world (beam layout untouched)."""
    if parameter == "mean_speed":
        return dataclasses.replace(scenario, mean_speed_mps=value)
    if parameter == "handover_time":
        return dataclasses.replace(scenario, handover_time_s=float(value))
    if parameter == "arrival_prob":
        return dataclasses.replace(scenario, arrival_prob=float(value))
    if parameter == "learner_cap":
        return scenario
    raise ConfigError(f"unknown sweep parameter {parameter!r}")


def train_policy(config: ExperimentConfig, scenario: Scenario, seed: int,
                 policy_name: str, learner_cap: Optional[int]) -> tuple[QTable, ConvergenceLog]:
    exp = config.experiment
    cap = 1 if policy_name == "ql" else learner_cap
    return run_training(
        scenario, config.schedule, mode=exp.mode, learner_cap=cap,
        max_updates=exp.max_updates, max_sim_time_s=exp.max_sim_time_s,
        seed=seed, log_every=exp.log_every, ma_window=exp.ma_window)


def run_trial(config: ExperimentConfig, seed: int, policy_name: Optional[str] = None,
              scenario: Optional[Scenario] = None, sweep_param: str = "none",
              sweep_value=None, learner_cap: Optional[int] = "unset",
              ) -> tuple[MetricsRecord, Optional[QTable], Optional[ConvergenceLog]]:
    """Train (when the policy learns), freeze, then evaluate paired trips."""
    exp = config.experiment
    policy_name = policy_name or exp.policy
    if scenario is None:
        scenario = build_scenario(config.scenario)
    cap = exp.learner_cap if learner_cap == "unset" else learner_cap
    table = None
    log = None
    if policy_name in ("parallel_ql", "ql"):
        table, log = train_policy(config, scenario, seed, policy_name, cap)
        policy = make_policy(policy_name, table=table)
    else:
        policy = make_policy(policy_name, seed=seed)
    totals = evaluate_policy(scenario, policy, exp.eval_trips, seed)
    record = MetricsRecord(
        seed=seed,
        sweep_param=sweep_param,
        sweep_value=format_sweep_value(sweep_value),
        policy=policy_name,
        avg_rate_gbps=totals.avg_rate_gbps,
        handovers=totals.handovers_per_trip,
        disconn_prob=totals.disconnection_prob,
        trips=totals.trips,
        updates=table.update_count if table is not None else 0,
        sim_time_s=log.rows[-1][1] if log is not None and log.rows else 0.0,
    )
    return record, table, log


def _cell_label(sweep_param: str, sweep_value, seed: int, policy: str) -> str:
    parts = []
    if sweep_param != "none":
        parts.append(f"{sweep_param}_{format_sweep_value(sweep_value)}")
    parts.append(f"seed{seed}")
    parts.append(policy)
    return "_".join(parts)


def _run_sweep_cell(scenario_json: str, config: ExperimentConfig, parameter: str,
                    value, seed: int) -> list[tuple[str, MetricsRecord, Optional[QTable],
                                                    Optional[ConvergenceLog]]]:
    base = Scenario.from_json(scenario_json)
    scenario = apply_sweep_value(base, parameter, value)
    cap = value if parameter == "learner_cap" else config.experiment.learner_cap
    out = []
    for policy_name in COMPARISON_POLICIES:
        record, table, log = run_trial(
            config, seed, policy_name=policy_name, scenario=scenario,
            sweep_param=parameter, sweep_value=value, learner_cap=cap)
        out.append((_cell_label(parameter, value, seed, policy_name), record, table, log))
    return out


def run_sweep(config: ExperimentConfig, workers: Optional[int] = None):
    """All sweep cells; returns (records, artifacts, pinned scenario).

    ``artifacts`` maps cell label -> (table, log) for trained cells.
    """
    exp = config.experiment
    if exp.sweep is None:
        raise ConfigError("run_sweep needs a sweep block in the experiment config")
    if workers is None:
        workers = int(os.environ.get("BEAMSIM_WORKERS", "1"))
    scenario = build_scenario(config.scenario)
    scenario_json = scenario.to_json()
    values = exp.sweep.normalized_values()
    cells = [(value, seed) for value in values for seed in exp.seeds]

    results = {}
    if workers <= 1:
        for value, seed in cells:
            results[(format_sweep_value(value), seed)] = _run_sweep_cell(
                scenario_json, config, exp.sweep.parameter, value, seed)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_sweep_cell, scenario_json, config,
                            exp.sweep.parameter, value, seed): (value, seed)
                for value, seed in cells
            }
            for fut, (value, seed) in futures.items():
                results[(format_sweep_value(value), seed)] = fut.result()

    records: list[MetricsRecord] = []
    artifacts: dict[str, tuple[QTable, ConvergenceLog]] = {}
    for value in values:  # deterministic emission order
        for seed in exp.seeds:
            for label, record, table, log in results[(format_sweep_value(value), seed)]:
                records.append(record)
                if table is not None:
                    artifacts[label] = (table, log)
    return records, artifacts, scenario


def write_outputs(records: list[MetricsRecord], artifacts: dict, out_dir,
                  scenario: Optional[Scenario] = None) -> list[Path]:
    """Emit metrics.csv, per-cell convergence CSVs and snapshots, scenario.lock."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    metrics = out / "metrics.csv"
    with open(metrics, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")
    written.append(metrics)

    for label in sorted(artifacts):
        table, log = artifacts[label]
        conv = out / f"convergence_{label}.csv"
        log.to_csv(conv)
        snap = out / f"qtable_{label}.snapshot"
        save_snapshot(table, snap)
        written.extend([conv, snap])

    if scenario is not None:
        lock = out / "scenario.lock"
        lock.write_text(scenario.to_json())
        written.append(lock)
    return written
