"""Static world model: road geometry, beams, blockage, RSSI profiles and rates.

Everything here is immutable after construction.  Sampling helpers take a
caller-owned numpy Generator so the same scenario can be shared by any number
of concurrent workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, asdict
from typing import NamedTuple, Optional

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration value is missing, unknown or out of range."""


class BeamId(NamedTuple):
    """Beam handle (mmbs, beam).  (0, 0) is the virtual ``not connected`` beam."""

    mmbs: int
    beam: int

    @property
    def is_virtual(self) -> bool:
        return self.mmbs == 0 and self.beam == 0


VIRTUAL_BEAM = BeamId(0, 0)


@dataclass
class RadioParams:
    """Log-distance channel parameters (60 GHz defaults)."""

    reference_distance_m: float = 1.0
    pathloss_exponent: float = 2.0
    carrier_wavelength_m: float = 0.005
    shadowing_sigma_db: float = 0.0

    def validate(self) -> None:
        for name in ("reference_distance_m", "pathloss_exponent", "carrier_wavelength_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"radio.{name} must be strictly positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("radio.shadowing_sigma_db must be >= 0")


def pathloss_db(distance_m: float, radio: RadioParams, shadowing_draw_db: float = 0.0) -> float:
    """Log-distance pathloss in dB.

    PL(d) = 20*log10(4*pi*d0/lambda) + 10*n*log10(d/d0) + psi, with psi
    supplied by the caller so the function itself is deterministic.
    """
    radio.validate()
    d0 = radio.reference_distance_m
    if distance_m < d0:
        raise ValueError(f"distance_m={distance_m} below reference distance {d0}")
    free_space = 20.0 * math.log10(4.0 * math.pi * d0 / radio.carrier_wavelength_m)
    return free_space + 10.0 * radio.pathloss_exponent * math.log10(distance_m / d0) + shadowing_draw_db


@dataclass
class BeamProfile:
    """One directional beam: coverage zones, blockage probability, RSSI law.

    ``rssi_dist[i]`` is the probability vector over the nonzero levels
    {1..M-1} for covered zone ``start_zone + i``, conditional on no blockage.
    """

    id: BeamId
    start_zone: int
    end_zone: int  # half-open
    blockage_prob: float
    rssi_dist: tuple[tuple[float, ...], ...]

    def covers(self, zone: int) -> bool:
        return self.start_zone <= zone < self.end_zone

    @property
    def coverage_zones(self) -> range:
        return range(self.start_zone, self.end_zone)

    def validate(self, num_zones: int, num_levels: int) -> None:
        if not (0.0 <= self.blockage_prob <= 1.0):
            raise ConfigError(f"beam {self.id}: blockage_prob out of [0,1]")
        if not (0 <= self.start_zone < self.end_zone <= num_zones):
            raise ConfigError(f"beam {self.id}: coverage [{self.start_zone},{self.end_zone}) off road")
        if len(self.rssi_dist) != self.end_zone - self.start_zone:
            raise ConfigError(f"beam {self.id}: rssi_dist length != coverage length")
        for vec in self.rssi_dist:
            if len(vec) != num_levels - 1:
                raise ConfigError(f"beam {self.id}: rssi_dist vector must cover levels 1..{num_levels - 1}")
            if abs(sum(vec) - 1.0) > 1e-9:
                raise ConfigError(f"beam {self.id}: rssi_dist vector does not sum to 1")


@dataclass
class RateTable:
    """Data rate (Gbit/s) per RSSI level; level 0 means blocked/disconnected."""

    rates_by_level: tuple[float, ...]

    def __post_init__(self) -> None:
        rates = self.rates_by_level
        if len(rates) < 2:
            raise ConfigError("rate table needs at least levels 0 and 1")
        if rates[0] != 0.0:
            raise ConfigError("rate for level 0 must be 0")
        if any(b < a for a, b in zip(rates, rates[1:])):
            raise ConfigError("rates must be nondecreasing in the RSSI level")

    @property
    def max_rate(self) -> float:
        return self.rates_by_level[-1]

    def rate(self, level: int) -> float:
        return self.rates_by_level[level]


@dataclass
class ScenarioConfig:
    """Generator input for :func:`build_scenario`."""

    road_length_m: float = 1000.0
    zone_length_m: float = 5.0
    num_mmbs: int = 10
    beams_per_mmbs: int = 10
    num_rssi_levels: int = 10
    min_coverage_m: float = 20.0
    max_coverage_m: float = 50.0
    handover_time_s: float = 0.5
    arrival_prob: float = 0.5
    mean_speed_mps: int = 7
    max_speed_mps: int = 9
    generation_seed: int = 0
    rssi_profile: str = "random"  # "random" | "pathloss"
    rate_jitter: bool = False
    rates_by_level: Optional[tuple[float, ...]] = None
    tx_power_dbm: float = 30.0
    radio: RadioParams = field(default_factory=RadioParams)

    def validate(self) -> None:
        positive = ("road_length_m", "zone_length_m", "num_mmbs", "beams_per_mmbs",
                    "min_coverage_m", "max_coverage_m", "tx_power_dbm")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"scenario.{name} must be strictly positive")
        if self.num_rssi_levels < 2:
            raise ConfigError("scenario.num_rssi_levels must be >= 2")
        if self.handover_time_s < 0:
            raise ConfigError("scenario.handover_time_s must be >= 0")
        if not (0.0 <= self.arrival_prob <= 1.0):
            raise ConfigError("scenario.arrival_prob must lie in [0,1]")
        if not (1 <= self.mean_speed_mps <= self.max_speed_mps):
            raise ConfigError("scenario requires max_speed_mps >= mean_speed_mps >= 1")
        if self.min_coverage_m > self.max_coverage_m:
            raise ConfigError("scenario.min_coverage_m must not exceed max_coverage_m")
        if self.rssi_profile not in ("random", "pathloss"):
            raise ConfigError(f"scenario.rssi_profile unknown: {self.rssi_profile!r}")
        num_zones = int(self.road_length_m // self.zone_length_m)
        if num_zones < 1:
            raise ConfigError("road shorter than one zone")
        min_zones = math.ceil(self.min_coverage_m / self.zone_length_m)
        max_zones = int(self.max_coverage_m // self.zone_length_m)
        if min_zones < 1 or max_zones < min_zones:
            raise ConfigError("coverage bounds leave no admissible zone count")
        if max_zones > num_zones:
            raise ConfigError("scenario.max_coverage_m exceeds the road length in zones")
        self.radio.validate()


@dataclass
class Scenario:
    """A fully realized world, immutable once built."""

    road_length_m: float
    zone_length_m: float
    num_mmbs: int
    beams_per_mmbs: int
    num_rssi_levels: int
    beams: tuple[BeamProfile, ...]
    rate_table: RateTable
    radio: RadioParams
    handover_time_s: float
    arrival_prob: float
    mean_speed_mps: int
    max_speed_mps: int
    generation_seed: int
    rate_jitter: bool = False

    _runtime: Optional["ScenarioRuntime"] = field(default=None, repr=False, compare=False)

    @property
    def num_zones(self) -> int:
        return int(self.road_length_m // self.zone_length_m)

    @property
    def num_real_beams(self) -> int:
        return self.num_mmbs * self.beams_per_mmbs

    @property
    def num_actions(self) -> int:
        return self.num_real_beams + 1

    @property
    def max_rate(self) -> float:
        return self.rate_table.max_rate

    def beam_index(self, beam: BeamId) -> int:
        """Dense action index: 0 for the virtual beam, then lexicographic."""
        if beam.is_virtual:
            return 0
        return (beam.mmbs - 1) * self.beams_per_mmbs + beam.beam

    def beam_from_index(self, idx: int) -> BeamId:
        if idx == 0:
            return VIRTUAL_BEAM
        n, k = divmod(idx - 1, self.beams_per_mmbs)
        return BeamId(n + 1, k + 1)

    def runtime(self) -> "ScenarioRuntime":
        if self._runtime is None:
            self._runtime = ScenarioRuntime(self)
        return self._runtime

    def validate(self) -> None:
        if self.num_zones < 1:
            raise ConfigError("road shorter than one zone")
        if len(self.beams) != self.num_real_beams:
            raise ConfigError("beam count does not match num_mmbs * beams_per_mmbs")
        seen = set()
        for bp in self.beams:
            if bp.id.is_virtual or not (1 <= bp.id.mmbs <= self.num_mmbs and 1 <= bp.id.beam <= self.beams_per_mmbs):
                raise ConfigError(f"beam id {bp.id} out of range")
            if bp.id in seen:
                raise ConfigError(f"duplicate beam id {bp.id}")
            seen.add(bp.id)
            bp.validate(self.num_zones, self.num_rssi_levels)
        if len(self.rate_table.rates_by_level) != self.num_rssi_levels:
            raise ConfigError("rate table length must equal num_rssi_levels")
        if not (1 <= self.mean_speed_mps <= self.max_speed_mps):
            raise ConfigError("max_speed_mps >= mean_speed_mps >= 1 required")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "road_length_m": self.road_length_m,
            "zone_length_m": self.zone_length_m,
            "num_mmbs": self.num_mmbs,
            "beams_per_mmbs": self.beams_per_mmbs,
            "num_rssi_levels": self.num_rssi_levels,
            "handover_time_s": self.handover_time_s,
            "arrival_prob": self.arrival_prob,
            "mean_speed_mps": self.mean_speed_mps,
            "max_speed_mps": self.max_speed_mps,
            "generation_seed": self.generation_seed,
            "rate_jitter": self.rate_jitter,
            "rates_by_level": list(self.rate_table.rates_by_level),
            "radio": asdict(self.radio),
            "beams": [
                {
                    "mmbs": bp.id.mmbs,
                    "beam": bp.id.beam,
                    "start_zone": bp.start_zone,
                    "end_zone": bp.end_zone,
                    "blockage_prob": bp.blockage_prob,
                    "rssi_dist": [list(v) for v in bp.rssi_dist],
                }
                for bp in self.beams
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        beams = tuple(
            BeamProfile(
                id=BeamId(b["mmbs"], b["beam"]),
                start_zone=b["start_zone"],
                end_zone=b["end_zone"],
                blockage_prob=b["blockage_prob"],
                rssi_dist=tuple(tuple(v) for v in b["rssi_dist"]),
            )
            for b in data["beams"]
        )
        scn = cls(
            road_length_m=data["road_length_m"],
            zone_length_m=data["zone_length_m"],
            num_mmbs=data["num_mmbs"],
            beams_per_mmbs=data["beams_per_mmbs"],
            num_rssi_levels=data["num_rssi_levels"],
            beams=beams,
            rate_table=RateTable(tuple(data["rates_by_level"])),
            radio=RadioParams(**data["radio"]),
            handover_time_s=data["handover_time_s"],
            arrival_prob=data["arrival_prob"],
            mean_speed_mps=data["mean_speed_mps"],
            max_speed_mps=data["max_speed_mps"],
            generation_seed=data["generation_seed"],
            rate_jitter=data.get("rate_jitter", False),
        )
        scn.validate()
        return scn

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def content_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


class ScenarioRuntime:
    """Precomputed lookup tables for the hot simulation loops."""

    def __init__(self, scn: Scenario):
        M = scn.num_rssi_levels
        self.rates = np.asarray(scn.rate_table.rates_by_level, dtype=float)
        self.num_zones = scn.num_zones

        by_id = {bp.id: bp for bp in scn.beams}
        self.profile_by_index: list[Optional[BeamProfile]] = [None] * scn.num_actions
        for bp in scn.beams:
            self.profile_by_index[scn.beam_index(bp.id)] = bp

        # Per covered (beam, zone): omega plus either a point level or a
        # general sampling law (support levels, cumulative probabilities).
        self.omega = np.zeros(scn.num_actions)
        self.point_level: dict[tuple[int, int], int] = {}
        self.level_law: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        covering: list[list[BeamId]] = [[] for _ in range(scn.num_zones)]
        for bp in scn.beams:
            bi = scn.beam_index(bp.id)
            self.omega[bi] = bp.blockage_prob
            for zone in bp.coverage_zones:
                covering[zone].append(bp.id)
                vec = np.asarray(bp.rssi_dist[zone - bp.start_zone])
                support = np.nonzero(vec)[0]
                if support.size == 1:
                    self.point_level[(bi, zone)] = int(support[0]) + 1
                else:
                    levels = support + 1
                    cums = np.cumsum(vec[support])
                    cums[-1] = 1.0
                    self.level_law[(bi, zone)] = (levels, cums)

        self.covering_ids: list[tuple[BeamId, ...]] = [tuple(sorted(v)) for v in covering]
        # Action order of Eq-style availability: real beams lexicographic, virtual last.
        self.actions_by_zone: list[tuple[BeamId, ...]] = [
            v + (VIRTUAL_BEAM,) for v in self.covering_ids
        ]
        self.action_indices_by_zone: list[tuple[int, ...]] = [
            tuple(scn.beam_index(b) for b in acts) for acts in self.actions_by_zone
        ]
        self.mmbs_of_action = np.zeros(scn.num_actions, dtype=int)
        for idx in range(1, scn.num_actions):
            self.mmbs_of_action[idx] = scn.beam_from_index(idx).mmbs


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Realize a world from generator parameters; deterministic per generation_seed."""
    config.validate()
    rng = np.random.default_rng(config.generation_seed)
    z = config.zone_length_m
    num_zones = int(config.road_length_m // z)
    M = config.num_rssi_levels
    min_zones = math.ceil(config.min_coverage_m / z)
    max_zones = int(config.max_coverage_m // z)

    placements = []
    for n in range(1, config.num_mmbs + 1):
        for k in range(1, config.beams_per_mmbs + 1):
            cov = int(rng.integers(min_zones, max_zones + 1))
            start = int(rng.integers(0, num_zones - cov + 1))
            omega = float(rng.uniform(0.0, 1.0))
            peak = int(rng.integers(min(3, M - 1), M))
            placements.append((BeamId(n, k), start, start + cov, omega, peak))

    if config.rssi_profile == "random":
        beams = tuple(
            BeamProfile(bid, start, end, omega,
                        _peaked_point_profile(start, end, peak, M))
            for bid, start, end, omega, peak in placements
        )
    else:
        beams = _pathloss_profiles(placements, config, num_zones)

    rates = config.rates_by_level
    if rates is None:
        rates = tuple(float(l) for l in range(M))
    scn = Scenario(
        road_length_m=config.road_length_m,
        zone_length_m=config.zone_length_m,
        num_mmbs=config.num_mmbs,
        beams_per_mmbs=config.beams_per_mmbs,
        num_rssi_levels=M,
        beams=beams,
        rate_table=RateTable(tuple(rates)),
        radio=config.radio,
        handover_time_s=config.handover_time_s,
        arrival_prob=config.arrival_prob,
        mean_speed_mps=config.mean_speed_mps,
        max_speed_mps=config.max_speed_mps,
        generation_seed=config.generation_seed,
        rate_jitter=config.rate_jitter,
    )
    scn.validate()
    return scn


def _peaked_point_profile(start: int, end: int, peak: int, M: int) -> tuple[tuple[float, ...], ...]:
    """Point-mass RSSI per zone: peak at the beam center, one level lost per two zones."""
    center = (start + end - 1) / 2.0
    vectors = []
    for zone in range(start, end):
        level = max(1, peak - int(abs(zone - center) / 2.0))
        vec = [0.0] * (M - 1)
        vec[level - 1] = 1.0
        vectors.append(tuple(vec))
    return tuple(vectors)


def _pathloss_profiles(placements, config: ScenarioConfig, num_zones: int) -> tuple[BeamProfile, ...]:
    """Quantize zone-center received power (tx minus pathloss at psi=0) into M-1 levels.

    The mmBS sits at the midpoint of the union of its beams' coverage.
    """
    z = config.zone_length_m
    M = config.num_rssi_levels
    spans: dict[int, list[int]] = {}
    for bid, start, end, _, _ in placements:
        lo, hi = spans.get(bid.mmbs, [start, end])
        spans[bid.mmbs] = [min(lo, start), max(hi, end)]
    pos = {n: (lo + hi) / 2.0 * z for n, (lo, hi) in spans.items()}

    d0 = config.radio.reference_distance_m
    power: dict[tuple[BeamId, int], float] = {}
    for bid, start, end, _, _ in placements:
        for zone in range(start, end):
            d = max(d0, abs((zone + 0.5) * z - pos[bid.mmbs]))
            power[(bid, zone)] = config.tx_power_dbm - pathloss_db(d, config.radio)
    pmin, pmax = min(power.values()), max(power.values())

    def quantize(p: float) -> int:
        if pmax == pmin:
            return M - 1
        return min(M - 1, 1 + int((p - pmin) / (pmax - pmin) * (M - 1)))

    beams = []
    for bid, start, end, omega, _ in placements:
        vectors = []
        for zone in range(start, end):
            vec = [0.0] * (M - 1)
            vec[quantize(power[(bid, zone)]) - 1] = 1.0
            vectors.append(tuple(vec))
        beams.append(BeamProfile(bid, start, end, omega, tuple(vectors)))
    return tuple(beams)


def beams_covering(scenario: Scenario, zone_index: int) -> set[BeamId]:
    """All real beams whose coverage contains the zone, plus the virtual beam."""
    if not (0 <= zone_index < scenario.num_zones):
        raise ValueError(f"zone_index {zone_index} out of range [0, {scenario.num_zones})")
    rt = scenario.runtime()
    return set(rt.covering_ids[zone_index]) | {VIRTUAL_BEAM}


def sample_connection(scenario: Scenario, beam: BeamId, zone_index: int,
                      rng: np.random.Generator) -> tuple[int, float]:
    """Realize one connection attempt: (rssi_level, rate_gbps).

    Virtual or non-covering beam -> (0, 0).  Otherwise blocked with
    probability omega, else the level is drawn from the zone's RSSI law.
    """
    rt = scenario.runtime()
    if beam.is_virtual:
        return 0, 0.0
    bi = scenario.beam_index(beam)
    profile = rt.profile_by_index[bi]
    if profile is None or not profile.covers(zone_index):
        return 0, 0.0
    if rng.random() < rt.omega[bi]:
        return 0, 0.0
    key = (bi, zone_index)
    point = rt.point_level.get(key)
    if point is not None:
        level = point
    else:
        levels, cums = rt.level_law[key]
        level = int(levels[np.searchsorted(cums, rng.random(), side="right")])
    if scenario.rate_jitter:
        level = min(scenario.num_rssi_levels - 1, max(1, level + int(rng.integers(-1, 2))))
    return level, float(rt.rates[level])
