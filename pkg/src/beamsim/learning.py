"""Shared global Q-table, update rule, schedules, and the training loops.

Many learning processes (one per vehicle) write a single table.  Cell
updates are atomic read-modify-write; reads may observe any committed value,
which the exploration argument tolerates, so action selection never locks.
"""

from __future__ import annotations

import heapq
import os
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scenario import BeamId, ConfigError, Scenario, VIRTUAL_BEAM
from .dynamics import (SystemState, TransitionSample, VehicleState, World,
                       arrival_stream, available_actions, draw_speed, execute_action,
                       num_states, trip_schedule, vehicle_stream, EventKind)

DEFAULT_DECAY_BUDGET = 10_000


@dataclass(frozen=True)
class LearningSchedule:
    """Learning-rate, discount and exploration knobs."""

    learning_rate: float = 0.1
    discount: float = 0.9
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.01
    epsilon_decay: Optional[float] = None  # resolved from the update budget when None
    robbins_monro: bool = False
    rm_offset: float = 50.0  # c in tau_n = c / (c + n), per state-action visit

    def validate(self) -> None:
        if not (0.0 <= self.discount < 1.0):
            raise ConfigError("schedule.discount must lie in [0, 1)")
        if not (0.0 < self.learning_rate < 1.0):
            raise ConfigError("schedule.learning_rate must lie in (0, 1)")
        if not (0.0 <= self.epsilon_floor <= self.epsilon_start <= 1.0):
            raise ConfigError("schedule requires 0 <= epsilon_floor <= epsilon_start <= 1")
        if self.epsilon_decay is not None and not (0.0 < self.epsilon_decay <= 1.0):
            raise ConfigError("schedule.epsilon_decay must lie in (0, 1]")
        if self.rm_offset <= 0:
            raise ConfigError("schedule.rm_offset must be positive")

    def resolve_decay(self, max_updates: Optional[int]) -> float:
        """Multiplicative decay reaching the floor at ~60% of the update budget."""
        if self.epsilon_decay is not None:
            return self.epsilon_decay
        budget = max_updates if max_updates else DEFAULT_DECAY_BUDGET
        if self.epsilon_start <= self.epsilon_floor or budget <= 0:
            return 1.0
        return (self.epsilon_floor / self.epsilon_start) ** (1.0 / (0.6 * budget))

    def epsilon_at(self, update_count: int, decay: float) -> float:
        return max(self.epsilon_floor, self.epsilon_start * decay ** update_count)


class QTable:
    """Dense (state, action) value table shared by all learning processes."""

    def __init__(self, scenario: Scenario, track_visits: bool = False):
        self.scenario = scenario
        self.values = np.zeros((num_states(scenario), scenario.num_actions))
        self.visits = np.zeros_like(self.values, dtype=np.int64) if track_visits else None
        self.update_count = 0
        self._lock = threading.Lock()
        self._zone_actions = scenario.runtime().action_indices_by_zone

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def value(self, state: SystemState, action: BeamId) -> float:
        return float(self.values[state.index(self.scenario), self.scenario.beam_index(action)])

    def greedy_index(self, state_idx: int, action_indices) -> int:
        """Argmax over the given action columns; smallest action index on ties."""
        row = self.values[state_idx]
        best, best_idx = -np.inf, action_indices[0]
        for a in sorted(action_indices):
            q = row[a]
            if q > best:
                best, best_idx = q, a
        return best_idx

    def max_over(self, state_idx: int, action_indices) -> float:
        row = self.values[state_idx]
        return max(row[a] for a in action_indices)


def q_update(table: QTable, sample: TransitionSample, schedule: LearningSchedule) -> float:
    """One-step update of the (state, action) cell; returns the new value.

    The bootstrap max ranges over the actions available in the next state's
    zone; a departure (no next zone) bootstraps nothing.
    """
    scn = table.scenario
    s = sample.state.index(scn)
    a = scn.beam_index(sample.action)
    if sample.next_zone_index is None:
        target = sample.reward_gbit
    else:
        ns = sample.next_state.index(scn)
        acts = table._zone_actions[sample.next_zone_index]
        target = sample.reward_gbit + schedule.discount * table.max_over(ns, acts)
    with table._lock:
        if schedule.robbins_monro:
            if table.visits is None:
                raise ConfigError("robbins_monro schedule needs a visit-tracking table")
            table.visits[s, a] += 1
            tau = schedule.rm_offset / (schedule.rm_offset + table.visits[s, a])
        else:
            tau = schedule.learning_rate
        new = table.values[s, a] + tau * (target - table.values[s, a])
        table.values[s, a] = new
        table.update_count += 1
    return float(new)


def select_action(table: QTable, state: SystemState, available: list[BeamId],
                  epsilon: float, rng: np.random.Generator) -> BeamId:
    """Epsilon-greedy over the available actions (smallest BeamId on ties)."""
    if not available:
        raise ValueError("available actions must not be empty")
    if epsilon > 0.0 and rng.random() < epsilon:
        return available[int(rng.integers(len(available)))]
    return greedy_action(table, state, available)


def greedy_action(table: QTable, state: SystemState, available: list[BeamId]) -> BeamId:
    scn = table.scenario
    s = state.index(scn)
    idx = table.greedy_index(s, [scn.beam_index(b) for b in available])
    return scn.beam_from_index(idx)


def extract_policy(table: QTable, scenario: Scenario) -> dict[SystemState, BeamId]:
    """Greedy action per state, restricted to actions available where the
    state can occur.

    A decision with connected beam b happens one zone downstream of b's
    coverage (the beam was picked at the previous crossing), so the candidate
    set is the union of availability over that shifted zone range.  States
    whose shifted range leaves the road map to the virtual beam.
    """
    from .dynamics import state_from_index

    rt = scenario.runtime()
    policy: dict[SystemState, BeamId] = {}
    all_zones = range(scenario.num_zones)
    cache: dict[tuple[int, int], list[int]] = {}
    for s_idx in range(num_states(scenario)):
        state = state_from_index(scenario, s_idx)
        if state.beam.is_virtual:
            zones = all_zones
        else:
            prof = rt.profile_by_index[scenario.beam_index(state.beam)]
            shift = 1 if state.direction == 0 else -1
            zones = [g for g in range(prof.start_zone + shift, prof.end_zone + shift)
                     if 0 <= g < scenario.num_zones]
            if not zones:
                policy[state] = VIRTUAL_BEAM
                continue
        key = (scenario.beam_index(state.beam), state.direction)
        if key in cache:
            candidates = cache[key]
        else:
            seen = {0}
            for g in zones:
                seen.update(rt.action_indices_by_zone[g])
            candidates = sorted(seen)
            cache[key] = candidates
        policy[state] = scenario.beam_from_index(table.greedy_index(s_idx, candidates))
    return policy


class ConvergenceLog:
    """Moving-average reward trace over global updates and simulated time."""

    def __init__(self, meta: Optional[dict] = None, log_every: int = 100,
                 ma_window: int = 2000):
        self.meta = dict(meta or {})
        self.log_every = log_every
        self.ma_window = ma_window
        self.rows: list[tuple[int, float, float, float]] = []
        self._window: deque[tuple[float, float]] = deque()
        self._sum_r = 0.0
        self._sum_t = 0.0
        self._max_time = 0.0
        self._lock = threading.Lock()

    def observe(self, reward_gbit: float, duration_s: float, update_count: int,
                sim_time_s: float, epsilon: float) -> None:
        with self._lock:
            self._window.append((reward_gbit, duration_s))
            self._sum_r += reward_gbit
            self._sum_t += duration_s
            if len(self._window) > self.ma_window:
                r, t = self._window.popleft()
                self._sum_r -= r
                self._sum_t -= t
            self._max_time = max(self._max_time, sim_time_s)
            if update_count % self.log_every == 0:
                self.rows.append((update_count, self._max_time, self.moving_average(), epsilon))

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def moving_average(self) -> float:
        return self._sum_r / self._sum_t if self._sum_t > 0 else 0.0

    def final_average(self) -> float:
        return self.rows[-1][2] if self.rows else self.moving_average()

    def updates_to_fraction(self, fraction: float, target: Optional[float] = None) -> Optional[int]:
        """First logged update count whose moving average reaches fraction*target."""
        goal = fraction * (self.final_average() if target is None else target)
        for updates, _, ma, _ in self.rows:
            if ma >= goal:
                return updates
        return None

    def time_to_fraction(self, fraction: float, target: Optional[float] = None) -> Optional[float]:
        goal = fraction * (self.final_average() if target is None else target)
        for _, sim_t, ma, _ in self.rows:
            if ma >= goal:
                return sim_t
        return None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            for key in sorted(self.meta):
                fh.write(f"# {key}={self.meta[key]}\n")
            fh.write("updates,sim_time_s,avg_reward_gbps,epsilon\n")
            for updates, sim_t, ma, eps in self.rows:
                fh.write(f"{updates},{sim_t:.6f},{ma:.6f},{eps:.6f}\n")


def _check_stop(max_updates, max_sim_time_s) -> None:
    if (max_updates is None) == (max_sim_time_s is None):
        raise ConfigError("exactly one of max_updates / max_sim_time_s must be set")
    value = max_updates if max_updates is not None else max_sim_time_s
    if value <= 0:
        raise ConfigError("stop condition must be a positive number")


def run_training(scenario: Scenario, schedule: LearningSchedule,
                 mode: str = "event_serial", learner_cap: Optional[int] = None,
                 max_updates: Optional[int] = None, max_sim_time_s: Optional[float] = None,
                 seed: int = 0, log_every: int = 100, ma_window: int = 2000,
                 workers: Optional[int] = None) -> tuple[QTable, ConvergenceLog]:
    """Drive the simulator and learn the shared table (one learner per vehicle).

    ``max_updates=0`` style inputs are config errors except the literal case
    of a zero-update budget, which returns the untouched all-zero table.
    """
    schedule.validate()
    if max_updates == 0:
        log = ConvergenceLog(log_every=log_every, ma_window=ma_window)
        return QTable(scenario, track_visits=schedule.robbins_monro), log
    _check_stop(max_updates, max_sim_time_s)
    if mode not in ("event_serial", "concurrent"):
        raise ConfigError(f"unknown training mode {mode!r}")
    if scenario.arrival_prob <= 0.0:
        raise ConfigError("training needs arrival_prob > 0 to put learners on the road")
    decay = schedule.resolve_decay(max_updates)
    meta = {
        "scenario_hash": scenario.content_hash(), "seed": seed, "mode": mode,
        "learner_cap": "inf" if learner_cap is None else learner_cap,
        "learning_rate": schedule.learning_rate, "discount": schedule.discount,
        "epsilon_decay": decay, "ma_window": ma_window,
    }
    log = ConvergenceLog(meta, log_every=log_every, ma_window=ma_window)
    table = QTable(scenario, track_visits=schedule.robbins_monro)
    if mode == "event_serial":
        _train_serial(scenario, schedule, table, log, decay, learner_cap,
                      max_updates, max_sim_time_s, seed)
    else:
        _train_concurrent(scenario, schedule, table, log, decay, learner_cap,
                          max_updates, max_sim_time_s, seed, workers)
    return table, log


def _train_serial(scenario, schedule, table, log, decay, learner_cap,
                  max_updates, max_sim_time_s, seed) -> None:
    world = World(scenario, seed, vehicle_cap=learner_cap)
    while True:
        if max_updates is not None and table.update_count >= max_updates:
            return
        if max_sim_time_s is not None and world.clock_s >= max_sim_time_s:
            return
        ev = world.step()
        if ev is None or ev.kind == EventKind.VEHICLE_DEPARTED:
            continue
        vehicle = world.vehicles[ev.vehicle_id]
        _learn_epoch(scenario, schedule, table, log, decay, vehicle, world.clock_s)


def _learn_epoch(scenario, schedule, table, log, decay, vehicle, now_s) -> None:
    state = vehicle.system_state()
    actions = available_actions(scenario, vehicle.zone_index)
    eps = schedule.epsilon_at(table.update_count, decay)
    action = select_action(table, state, actions, eps, vehicle.rng)
    sample = execute_action(scenario, vehicle, action, vehicle.rng)
    q_update(table, sample, schedule)
    log.observe(sample.reward_gbit, sample.epoch_duration_s, table.update_count, now_s, eps)


def _train_concurrent(scenario, schedule, table, log, decay, learner_cap,
                      max_updates, max_sim_time_s, seed, workers) -> None:
    if workers is None:
        workers = int(os.environ.get("BEAMSIM_WORKERS", "0")) or min(8, os.cpu_count() or 1)

    def updates_done() -> bool:
        return max_updates is not None and table.update_count >= max_updates

    def drive_vehicle(vid: int, spawn_s: float, direction: int) -> None:
        kin = vehicle_stream(seed, vid, 1)
        vehicle = VehicleState(vid, direction, draw_speed(scenario, kin), spawn_s,
                               scenario, vehicle_stream(seed, vid, 0), kin)
        now = spawn_s
        while True:
            if updates_done() or (max_sim_time_s is not None and now >= max_sim_time_s):
                return
            _learn_epoch(scenario, schedule, table, log, decay, vehicle, now)
            now = spawn_s + vehicle.trip_duration_s
            nz = vehicle.next_zone(scenario)
            if nz is None:
                return
            vehicle.zone_index = nz

    rng = arrival_stream(seed)
    tick = scenario.zone_length_m / scenario.mean_speed_mps
    # Admitted vehicles still on the road, as (departure_time, seq, future).
    # Tasks may only overlap in wall clock when their trips overlap in
    # simulated time; that keeps capped runs equivalent to the serial mode.
    inflight: list = []
    next_vid = 0
    next_seq = 0
    t = 0.0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending: list = []
        while not updates_done():
            if max_sim_time_s is not None and t >= max_sim_time_s:
                break
            if rng.random() < scenario.arrival_prob:
                direction = int(rng.integers(0, 2))
                if learner_cap is not None:
                    while inflight and inflight[0][0] < t:
                        heapq.heappop(inflight)[2].result()
                    admitted = len(inflight) < learner_cap
                else:
                    admitted = True
                if admitted:
                    _, departure = trip_schedule(scenario, seed, next_vid, t)
                    fut = pool.submit(drive_vehicle, next_vid, t, direction)
                    if learner_cap is not None:
                        heapq.heappush(inflight, (departure, next_seq, fut))
                        next_seq += 1
                    pending.append(fut)
                    next_vid += 1
            t += tick
            if len(pending) > 4 * workers:  # keep the spawner near the simulation
                pending[0].result()
                pending = [f for f in pending if not f.done()]
        for f in pending:
            f.result()


def q_learn_mdp(model, schedule: LearningSchedule, max_steps: int, epsilon: float,
                seed: int = 0, reference: Optional[np.ndarray] = None,
                target_tol: Optional[float] = None, check_every: int = 10_000
                ) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Tabular Q-learning on an explicit small MDP (validation harness).

    Explores epsilon-greedily with a fixed epsilon; stops early once the
    max-norm distance to ``reference`` falls below ``target_tol``.  Returns
    the table and the (step, distance) history when a reference is given.
    """
    schedule.validate()
    rng = np.random.default_rng(seed)
    Q = np.zeros((model.n_states, model.n_actions))
    visits = np.zeros_like(Q, dtype=np.int64)
    history: list[tuple[int, float]] = []
    s = 0

    def dist() -> float:
        worst = 0.0
        for i in range(model.n_states):
            for a in model.available[i]:
                worst = max(worst, abs(Q[i, a] - reference[i, a]))
        return worst

    for step in range(1, max_steps + 1):
        acts = model.available[s]
        if rng.random() < epsilon:
            a = acts[int(rng.integers(len(acts)))]
        else:
            best = max(Q[s, i] for i in acts)
            a = min(i for i in acts if Q[s, i] == best)
        r, s2 = model.sample(s, a, rng)
        target = r + schedule.discount * max(Q[s2, i] for i in model.available[s2])
        if schedule.robbins_monro:
            visits[s, a] += 1
            tau = schedule.rm_offset / (schedule.rm_offset + visits[s, a])
        else:
            tau = schedule.learning_rate
        Q[s, a] += tau * (target - Q[s, a])
        s = s2
        if reference is not None and step % check_every == 0:
            d = dist()
            history.append((step, d))
            if target_tol is not None and d < target_tol:
                break
    return Q, history


# -- snapshot persistence ---------------------------------------------------

def save_snapshot(table: QTable, path, extra_meta: Optional[dict] = None) -> None:
    """Write one row per nonzero cell, floats in round-trip repr."""
    scn = table.scenario
    from .dynamics import state_from_index

    with open(path, "w") as fh:
        fh.write(f"# scenario_hash={scn.content_hash()}\n")
        fh.write(f"# update_count={table.update_count}\n")
        for key in sorted(extra_meta or {}):
            fh.write(f"# {key}={extra_meta[key]}\n")
        fh.write("rssi_level,mmbs,beam,speed,direction,action_mmbs,action_beam,q_value\n")
        rows_idx, cols_idx = np.nonzero(table.values)
        for s_idx, a_idx in zip(rows_idx, cols_idx):
            st = state_from_index(scn, int(s_idx))
            ab = scn.beam_from_index(int(a_idx))
            q = repr(float(table.values[s_idx, a_idx]))
            fh.write(f"{st.rssi_level},{st.beam.mmbs},{st.beam.beam},{st.speed},"
                     f"{st.direction},{ab.mmbs},{ab.beam},{q}\n")


def load_snapshot(path, scenario: Scenario) -> tuple[QTable, dict]:
    """Round-trips :func:`save_snapshot` bit-exactly on the written decimals."""
    table = QTable(scenario)
    meta: dict[str, str] = {}
    with open(path) as fh:
        header_seen = False
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
                continue
            if not header_seen:
                if line != "rssi_level,mmbs,beam,speed,direction,action_mmbs,action_beam,q_value":
                    raise ValueError(f"unexpected snapshot header: {line!r}")
                header_seen = True
                continue
            parts = line.split(",")
            l, n, k, v, d, an, ak = (int(x) for x in parts[:7])
            state = SystemState(l, BeamId(n, k), v, d)
            table.values[state.index(scenario), scenario.beam_index(BeamId(an, ak))] = float(parts[7])
    if meta.get("scenario_hash") and meta["scenario_hash"] != scenario.content_hash():
        raise ValueError("snapshot was taken on a different scenario")
    table.update_count = int(meta.get("update_count", 0))
    return table, meta
