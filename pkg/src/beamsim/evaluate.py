"""Frozen-policy evaluation with paired randomness.

Vehicles never interact, so evaluation runs trips one at a time.  Every
epoch realizes the outcome of every available beam from a per-trip stream
whose draw count is policy independent; competing policies therefore face
identical worlds and comparisons are paired.  A policy only ever sees the
view its declared observation privilege entitles it to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .baselines import (BlockageAwarePolicy, EpochView, MaxRatePolicy,
                        ObservationPrivilege, PrivilegeError, UpperBoundPolicy)
from .dynamics import (VehicleState, apply_connection, available_actions, draw_speed,
                       realize_zone, sample_connection)
from .learning import QTable, greedy_action
from .scenario import Scenario, VIRTUAL_BEAM

EXPECTED_PRIVILEGE = {
    "max_rate": ObservationPrivilege.REALIZED_RATES,
    "blockage_aware": ObservationPrivilege.BLOCKAGE_PROBS,
    "upper_bound": ObservationPrivilege.REALIZED_RATES,
    "parallel_ql": ObservationPrivilege.NONE,
    "ql": ObservationPrivilege.NONE,
    "random": ObservationPrivilege.NONE,
}


class GreedyTablePolicy:
    """Frozen learned policy: greedy over the trained table, zone-restricted."""

    privilege = ObservationPrivilege.NONE
    trainable = True

    def __init__(self, table: QTable, name: str = "parallel_ql"):
        self.table = table
        self.name = name

    def select(self, state, actions, view):
        return greedy_action(self.table, state, actions)


class RandomPolicy:
    """Uniform over the available actions; used for reachability studies."""

    name = "random"
    privilege = ObservationPrivilege.NONE
    trainable = False
    uniform_random = True

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def select(self, state, actions, view):
        return actions[int(self.rng.integers(len(actions)))]


def make_policy(name: str, table: Optional[QTable] = None, seed: int = 0):
    if name in ("parallel_ql", "ql"):
        if table is None:
            raise ValueError(f"policy {name!r} needs a trained table")
        return GreedyTablePolicy(table, name)
    cls = {"max_rate": MaxRatePolicy, "blockage_aware": BlockageAwarePolicy,
           "upper_bound": UpperBoundPolicy}.get(name)
    if cls is not None:
        return cls()
    if name == "random":
        return RandomPolicy(seed)
    raise ValueError(f"unknown policy {name!r}")


def check_privilege(policy) -> None:
    """Refuse wiring when a policy claims a privilege its name is not due."""
    expected = EXPECTED_PRIVILEGE.get(policy.name)
    if expected is None:
        raise PrivilegeError(f"policy {policy.name!r} has no registered privilege")
    if policy.privilege is not expected:
        raise PrivilegeError(
            f"policy {policy.name!r} declares {policy.privilege.value}, "
            f"but is registered for {expected.value}")


def trip_stream(seed: int, trip: int, kind: int) -> np.random.Generator:
    # kinds 100/101 keep evaluation streams disjoint from training streams
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 + trip, 100 + kind)))


@dataclass
class TripResult:
    reward_gbit: float
    duration_s: float
    disconnected_s: float
    handovers: int
    epochs: int


def _view_for(policy, scenario: Scenario, realized, omega_by_beam, actions,
              epoch_s: float) -> EpochView:
    if policy.privilege is ObservationPrivilege.REALIZED_RATES:
        return EpochView(realized=realized, epoch_s=epoch_s,
                         handover_time_s=scenario.handover_time_s)
    if policy.privilege is ObservationPrivilege.BLOCKAGE_PROBS:
        return EpochView(blockage={b: omega_by_beam[b] for b in actions})
    return EpochView()


def _omega_map(scenario: Scenario) -> dict:
    rt = scenario.runtime()
    out = {bp.id: float(rt.omega[scenario.beam_index(bp.id)]) for bp in scenario.beams}
    out[VIRTUAL_BEAM] = 1.0
    return out


def run_trip(scenario: Scenario, policy, trip_index: int, seed: int,
             direction: Optional[int] = None) -> TripResult:
    """Simulate one full trip under a frozen policy (no exploration, no writes).

    Probe-based policies (MaxRate) select on a measurement stream of their
    own; the epoch outcome always comes from the shared realization, so the
    shared streams stay identical across competing policies.
    """
    channel = trip_stream(seed, trip_index, 0)
    kin = trip_stream(seed, trip_index, 1)
    probe_rng = trip_stream(seed, trip_index, 2) if getattr(policy, "probe_based", False) else None
    if direction is None:
        direction = trip_index % 2  # balanced and policy independent
    vehicle = VehicleState(trip_index, direction, draw_speed(scenario, kin), 0.0,
                           scenario, channel, kin)
    omega_by_beam = _omega_map(scenario)
    rt = scenario.runtime()
    for _ in range(scenario.num_zones):
        zone = vehicle.zone_index
        actions = rt.actions_by_zone[zone]
        realized = realize_zone(scenario, zone, channel)
        visible = realize_zone(scenario, zone, probe_rng) if probe_rng is not None else realized
        view = _view_for(policy, scenario, visible, omega_by_beam, actions,
                         scenario.zone_length_m / vehicle.speed_mps)
        action = policy.select(vehicle.system_state(), list(actions), view)
        level, rate = realized[action]
        apply_connection(scenario, vehicle, action, level, rate, channel)
        nz = vehicle.next_zone(scenario)
        if nz is None:
            break
        vehicle.zone_index = nz
    return TripResult(vehicle.trip_reward_gbit, vehicle.trip_duration_s,
                      vehicle.trip_disconnected_s, vehicle.trip_handovers,
                      vehicle.trip_epochs)


@dataclass
class EvaluationTotals:
    trips: int
    reward_gbit: float
    duration_s: float
    disconnected_s: float
    handovers: int

    @property
    def avg_rate_gbps(self) -> float:
        return self.reward_gbit / self.duration_s if self.duration_s else 0.0

    @property
    def disconnection_prob(self) -> float:
        return self.disconnected_s / self.duration_s if self.duration_s else 0.0

    @property
    def handovers_per_trip(self) -> float:
        return self.handovers / self.trips if self.trips else 0.0


def evaluate_policy(scenario: Scenario, policy, trips: int, seed: int) -> EvaluationTotals:
    """Aggregate ``trips`` completed paired trips for one policy."""
    check_privilege(policy)
    if trips <= 0:
        raise ValueError("evaluation needs at least one completed trip")
    totals = EvaluationTotals(0, 0.0, 0.0, 0.0, 0)
    for trip in range(trips):
        res = run_trip(scenario, policy, trip, seed)
        totals.trips += 1
        totals.reward_gbit += res.reward_gbit
        totals.duration_s += res.duration_s
        totals.disconnected_s += res.disconnected_s
        totals.handovers += res.handovers
    return totals


def simulate_long_run(scenario: Scenario, policy, epochs: int, seed: int) -> float:
    """Long-run Gbit/s of one perpetual vehicle over back-to-back trips.

    This is the simulation-side estimate paired against the enumerated
    chain's exact average; respawn draws a fresh uniform direction, matching
    the chain's wrap-around law.
    """
    check_privilege(policy)
    channel = trip_stream(seed, 0, 0)
    kin = trip_stream(seed, 0, 1)
    probe_rng = trip_stream(seed, 0, 2)
    omega_by_beam = _omega_map(scenario)
    rt = scenario.runtime()
    needs_real = policy.privilege is ObservationPrivilege.REALIZED_RATES
    probe_based = getattr(policy, "probe_based", False)
    total_r = 0.0
    total_t = 0.0
    vehicle = None
    for _ in range(epochs):
        if vehicle is None:
            direction = int(kin.integers(0, 2))
            vehicle = VehicleState(0, direction, draw_speed(scenario, kin), 0.0,
                                   scenario, channel, kin)
        zone = vehicle.zone_index
        actions = rt.actions_by_zone[zone]
        xi = scenario.zone_length_m / vehicle.speed_mps
        if needs_real:
            realized = realize_zone(scenario, zone, channel)
            visible = realize_zone(scenario, zone, probe_rng) if probe_based else realized
            view = EpochView(realized=visible, epoch_s=xi,
                             handover_time_s=scenario.handover_time_s)
            action = policy.select(vehicle.system_state(), list(actions), view)
            level, rate = realized[action]
        else:
            view = _view_for(policy, scenario, None, omega_by_beam, actions, xi)
            action = policy.select(vehicle.system_state(), list(actions), view)
            level, rate = sample_connection(scenario, action, zone, channel)
        sample = apply_connection(scenario, vehicle, action, level, rate, channel)
        total_r += sample.reward_gbit
        total_t += sample.epoch_duration_s
        nz = vehicle.next_zone(scenario)
        if nz is None:
            vehicle = None
        else:
            vehicle.zone_index = nz
    return total_r / total_t
