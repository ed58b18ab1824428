"""Event-driven vehicle kinematics and the decision-epoch mechanics.

A decision epoch fires every time a vehicle enters a new zone; the epoch
lasts z / v seconds with v constant within the epoch.  Rewards follow the
handover accounting: switching mmBS costs h seconds of interruption, beam
switching within one mmBS is free, and unfinished handover time is carried
into the next epoch as a residual.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .scenario import BeamId, Scenario, VIRTUAL_BEAM, sample_connection

ARRIVAL_TICK_ID = -1


@dataclass(frozen=True)
class SystemState:
    """The learner-visible state tuple (rssi level, beam, speed, direction)."""

    rssi_level: int
    beam: BeamId
    speed: int
    direction: int

    def index(self, scenario: Scenario) -> int:
        """Dense row index over M x (N*K+1) x (v_max+1) x 2 states."""
        b = scenario.beam_index(self.beam)
        v_card = scenario.max_speed_mps + 1
        return ((self.rssi_level * scenario.num_actions + b) * v_card + self.speed) * 2 + self.direction


def num_states(scenario: Scenario) -> int:
    return scenario.num_rssi_levels * scenario.num_actions * (scenario.max_speed_mps + 1) * 2


def state_from_index(scenario: Scenario, idx: int) -> SystemState:
    idx, d = divmod(idx, 2)
    idx, v = divmod(idx, scenario.max_speed_mps + 1)
    l, b = divmod(idx, scenario.num_actions)
    return SystemState(l, scenario.beam_from_index(b), v, d)


class EventKind(Enum):
    ZONE_ENTERED = "ZoneEntered"
    VEHICLE_ARRIVED = "VehicleArrived"
    VEHICLE_DEPARTED = "VehicleDeparted"


@dataclass(frozen=True)
class EpochEvent:
    timestamp_s: float
    vehicle_id: int
    kind: EventKind


@dataclass
class TransitionSample:
    """One learner experience flowing from a vehicle to the shared table."""

    state: SystemState
    action: BeamId
    reward_gbit: float
    next_state: SystemState
    epoch_duration_s: float
    handover_occurred: bool
    disconnected_time_s: float
    next_zone_index: Optional[int]  # None when the vehicle leaves the road


class VehicleState:
    """Mutable per-vehicle kinematic and connection state."""

    __slots__ = ("vehicle_id", "position_m", "zone_index", "direction", "speed_mps",
                 "connected_beam", "rssi_level", "handover_residual_s", "spawn_time_s",
                 "rng", "kin_rng", "arrived", "trip_reward_gbit", "trip_duration_s",
                 "trip_disconnected_s", "trip_handovers", "trip_epochs")

    def __init__(self, vehicle_id: int, direction: int, speed_mps: int,
                 spawn_time_s: float, scenario: Scenario,
                 rng: Optional[np.random.Generator] = None,
                 kin_rng: Optional[np.random.Generator] = None):
        self.vehicle_id = vehicle_id
        self.direction = direction
        self.speed_mps = speed_mps
        self.spawn_time_s = spawn_time_s
        self.rng = rng
        self.kin_rng = kin_rng
        z = scenario.zone_length_m
        if direction == 0:
            self.zone_index = 0
            self.position_m = 0.0
        else:
            self.zone_index = scenario.num_zones - 1
            self.position_m = scenario.num_zones * z
        self.connected_beam = VIRTUAL_BEAM
        self.rssi_level = 0
        self.handover_residual_s = 0.0
        self.arrived = False
        self.trip_reward_gbit = 0.0
        self.trip_duration_s = 0.0
        self.trip_disconnected_s = 0.0
        self.trip_handovers = 0
        self.trip_epochs = 0

    def system_state(self) -> SystemState:
        return SystemState(self.rssi_level, self.connected_beam, self.speed_mps, self.direction)

    def next_zone(self, scenario: Scenario) -> Optional[int]:
        nz = self.zone_index + (1 if self.direction == 0 else -1)
        return nz if 0 <= nz < scenario.num_zones else None


def draw_speed(scenario: Scenario, rng: np.random.Generator) -> int:
    """Per-epoch speed: uniform integer within +/-2 m/s of the mean, clamped."""
    lo = max(1, scenario.mean_speed_mps - 2)
    hi = min(scenario.max_speed_mps, scenario.mean_speed_mps + 2)
    return int(rng.integers(lo, hi + 1))


def available_actions(scenario: Scenario, zone_index: int) -> list[BeamId]:
    """Covering beams sorted lexicographically, virtual beam last."""
    if not (0 <= zone_index < scenario.num_zones):
        raise ValueError(f"zone_index {zone_index} out of range")
    return list(scenario.runtime().actions_by_zone[zone_index])


def apply_connection(scenario: Scenario, vehicle: VehicleState, action: BeamId,
                     level: int, rate: float, rng: np.random.Generator) -> TransitionSample:
    """Settle one epoch given an already-realized connection outcome.

    Mutates the vehicle: connection fields, handover residual, and the speed
    staged for the next zone crossing (the returned sample's next_state
    carries that next-epoch speed).
    """
    state = vehicle.system_state()
    xi = scenario.zone_length_m / vehicle.speed_mps

    # A residual only survives while the pending handover's target still
    # covers the zone being entered; otherwise the new epoch decides afresh.
    if not vehicle.connected_beam.is_virtual:
        profile = scenario.runtime().profile_by_index[scenario.beam_index(vehicle.connected_beam)]
        if not profile.covers(vehicle.zone_index):
            vehicle.handover_residual_s = 0.0

    handover = (not action.is_virtual and not vehicle.connected_beam.is_virtual
                and action.mmbs != vehicle.connected_beam.mmbs)
    if action.is_virtual:
        cost = xi  # never connected this epoch
        vehicle.handover_residual_s = 0.0
    elif handover:
        pending = scenario.handover_time_s + vehicle.handover_residual_s
        cost = min(xi, pending)
        vehicle.handover_residual_s = min(scenario.handover_time_s, max(0.0, pending - xi))
    else:
        pending = vehicle.handover_residual_s
        cost = min(xi, pending)
        vehicle.handover_residual_s = max(0.0, pending - xi)

    effective = xi - cost
    reward = effective * rate
    disconnected = xi - (effective if rate > 0.0 else 0.0)

    vehicle.connected_beam = action
    vehicle.rssi_level = level
    next_speed = draw_speed(scenario, vehicle.kin_rng if vehicle.kin_rng is not None else rng)
    next_state = SystemState(level, action, next_speed, vehicle.direction)
    vehicle.speed_mps = next_speed

    vehicle.trip_reward_gbit += reward
    vehicle.trip_duration_s += xi
    vehicle.trip_disconnected_s += disconnected
    vehicle.trip_handovers += int(handover)
    vehicle.trip_epochs += 1

    return TransitionSample(
        state=state,
        action=action,
        reward_gbit=reward,
        next_state=next_state,
        epoch_duration_s=xi,
        handover_occurred=handover,
        disconnected_time_s=disconnected,
        next_zone_index=vehicle.next_zone(scenario),
    )


def execute_action(scenario: Scenario, vehicle: VehicleState, action: BeamId,
                   rng: np.random.Generator) -> TransitionSample:
    """Realize the connection for the chosen beam and settle the epoch."""
    level, rate = sample_connection(scenario, action, vehicle.zone_index, rng)
    return apply_connection(scenario, vehicle, action, level, rate, rng)


def realize_zone(scenario: Scenario, zone_index: int,
                 rng: np.random.Generator) -> dict[BeamId, tuple[int, float]]:
    """Realize this epoch's (level, rate) for every available beam.

    One common-random-numbers draw block per epoch: the draw count depends on
    the zone only, never on the policy, so paired policy comparisons see
    identical streams.
    """
    rt = scenario.runtime()
    out: dict[BeamId, tuple[int, float]] = {}
    for beam in rt.covering_ids[zone_index]:
        bi = scenario.beam_index(beam)
        blocked = rng.random() < rt.omega[bi]
        point = rt.point_level.get((bi, zone_index))
        if point is not None:
            level = point
        else:
            levels, cums = rt.level_law[(bi, zone_index)]
            level = int(levels[np.searchsorted(cums, rng.random(), side="right")])
        if scenario.rate_jitter:
            jitter = int(rng.integers(-1, 2))
            level = min(scenario.num_rssi_levels - 1, max(1, level + jitter))
        if blocked:
            out[beam] = (0, 0.0)
        else:
            out[beam] = (level, float(rt.rates[level]))
    out[VIRTUAL_BEAM] = (0, 0.0)
    return out


def vehicle_stream(seed: int, vehicle_id: int, kind: int = 0) -> np.random.Generator:
    """Deterministic per-vehicle substream; kind 0 = channel, 1 = kinematics."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 + vehicle_id, kind)))


def arrival_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, 0)))


def trip_schedule(scenario: Scenario, seed: int, vehicle_id: int,
                  spawn_time_s: float) -> tuple[int, float]:
    """Replay a vehicle's kinematics stream: (initial speed, departure time).

    Speeds are drawn from a stream of their own, so a trip's timing is fixed
    at spawn regardless of which beams any policy later picks.  Departure
    accumulates exactly like the event queue does, so the two agree bitwise.
    """
    rng = vehicle_stream(seed, vehicle_id, kind=1)
    v = draw_speed(scenario, rng)
    v0 = v
    departure = spawn_time_s
    z = scenario.zone_length_m
    for _ in range(scenario.num_zones):
        departure = departure + z / v
        v = draw_speed(scenario, rng)
    return v0, departure


class World:
    """Event-serial simulation driver: one queue, deterministic replay per seed.

    Arrival trials run on a global tick of z / mean_speed seconds; ties at
    equal timestamps pop by vehicle id (the arrival tick uses id -1).  When
    ``vehicle_cap`` is set, arrivals beyond the cap are not materialized:
    vehicles never interact, so surplus traffic cannot influence learners and
    is elided for speed.
    """

    def __init__(self, scenario: Scenario, seed: int, vehicle_cap: Optional[int] = None):
        self.scenario = scenario
        self.seed = seed
        self.vehicle_cap = vehicle_cap
        self.clock_s = 0.0
        self.vehicles: dict[int, VehicleState] = {}
        self.last_departed: Optional[VehicleState] = None
        self.trips_completed = 0
        self._queue: list[tuple[float, int, int]] = []
        self._seq = 0
        self._arrival_rng = arrival_stream(seed)
        self._next_vehicle_id = 0
        self._tick_period = scenario.zone_length_m / scenario.mean_speed_mps
        self._push(0.0, ARRIVAL_TICK_ID)

    def _push(self, t: float, vid: int) -> None:
        heapq.heappush(self._queue, (t, vid, self._seq))
        self._seq += 1

    def add_vehicle(self, direction: int, speed_mps: Optional[int] = None,
                    at_time: Optional[float] = None) -> VehicleState:
        """Spawn a vehicle explicitly (used by arrivals, tests and drivers)."""
        vid = self._next_vehicle_id
        self._next_vehicle_id += 1
        rng = vehicle_stream(self.seed, vid, kind=0)
        kin_rng = vehicle_stream(self.seed, vid, kind=1)
        v = VehicleState(vid, direction, speed_mps or draw_speed(self.scenario, kin_rng),
                         self.clock_s if at_time is None else at_time, self.scenario,
                         rng, kin_rng)
        self.vehicles[vid] = v
        self._push(v.spawn_time_s, vid)
        return v

    def step(self) -> Optional[EpochEvent]:
        """Process one queue entry; None for a silent arrival tick.

        A vehicle's first popped entry is its arrival (first decision epoch);
        later entries are zone crossings.  The next crossing is scheduled
        here, at +z/v with v the vehicle's current per-epoch speed.
        """
        if not self._queue:
            return None
        t, vid, _ = heapq.heappop(self._queue)
        self.clock_s = t
        if vid == ARRIVAL_TICK_ID:
            self._push(t + self._tick_period, ARRIVAL_TICK_ID)
            if self._arrival_rng.random() >= self.scenario.arrival_prob:
                return None
            direction = int(self._arrival_rng.integers(0, 2))
            if self.vehicle_cap is not None and len(self.vehicles) >= self.vehicle_cap:
                return None  # elided non-learner arrival
            self.add_vehicle(direction)
            return None  # the vehicle's own arrival event pops next
        v = self.vehicles[vid]
        if not v.arrived:
            v.arrived = True
            kind = EventKind.VEHICLE_ARRIVED
        else:
            kind = EventKind.ZONE_ENTERED
            nz = v.next_zone(self.scenario)
            if nz is None:
                del self.vehicles[vid]
                self.last_departed = v
                self.trips_completed += 1
                return EpochEvent(t, vid, EventKind.VEHICLE_DEPARTED)
            v.zone_index = nz
            z = self.scenario.zone_length_m
            v.position_m = nz * z if v.direction == 0 else (nz + 1) * z
        self._push(t + self.scenario.zone_length_m / v.speed_mps, vid)
        return EpochEvent(t, vid, kind)

    def advance_clock(self, max_silent_ticks: int = 1_000_000) -> EpochEvent:
        """Pop queue entries until a vehicle event occurs."""
        for _ in range(max_silent_ticks):
            ev = self.step()
            if ev is not None:
                return ev
        raise RuntimeError("no vehicle event within the silent-tick budget")
