"""Run configuration: versioned schema, loading, validation, hashing.

A run is described by one structured-text file (YAML). Everything the
simulation consumes — fleet make-up, station layout, battery constants,
demand source, travel-model options, reward weights — lives here so a
config plus a seed pins a run exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import yaml

from .battery import (
    DEFAULT_STAGES,
    REFERENCE_CYCLE_COUNT,
    REFERENCE_TEMP_K,
    SOC_HEADROOM_FLOOR,
    AgingStage,
)

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FleetConfig:
    count: int = 50
    pack_kwh: float = 71.7
    kwh_per_km: float = 0.171          # drivetrain draw per km
    max_c_rate: float = 1.0            # pack-side limit, capacity multiples/h
    depot_zones: tuple[int, ...] = (1, 208)  # assigned round-robin
    temperature_k: float = REFERENCE_TEMP_K


@dataclass(frozen=True)
class StationLayout:
    zone: int
    ports: int = 10
    port_kw: float = 50.0
    station_kw: float = 500.0
    efficiency: float = 0.9


@dataclass(frozen=True)
class BatteryModelConfig:
    reference_cycles: float = REFERENCE_CYCLE_COUNT
    headroom_floor: float = SOC_HEADROOM_FLOOR
    stages: tuple[AgingStage, ...] = DEFAULT_STAGES


@dataclass(frozen=True)
class PoissonDemandConfig:
    rate_per_hour: float = 10.0
    zones: tuple[int, ...] = (1, 208)
    mean_trip_h: float = 0.25
    speed_kmh: float = 18.0


@dataclass(frozen=True)
class FileDemandConfig:
    path: str = ""
    pickup_time: str = "tpep_pickup_datetime"
    dropoff_time: str = "tpep_dropoff_datetime"
    pickup_zone: str = "PULocationID"
    dropoff_zone: str = "DOLocationID"
    distance: str = "trip_distance"
    fare: str = "fare_amount"
    time_format: str = "%Y-%m-%d %H:%M:%S"
    distance_to_km: float = 1.609344
    zone_filter: Optional[tuple[int, ...]] = None


@dataclass(frozen=True)
class DemandSource:
    kind: str = "poisson"  # "poisson" | "file"
    poisson: PoissonDemandConfig = field(default_factory=PoissonDemandConfig)
    file: FileDemandConfig = field(default_factory=FileDemandConfig)


@dataclass(frozen=True)
class TrafficOptions:
    cache_path: Optional[str] = None
    min_pair_count: int = 5
    fallback_duration_h: float = 0.1
    fallback_distance_km: float = 1.0


@dataclass(frozen=True)
class RewardWeights:
    degradation_weight: float = 100.0  # per kWh of capacity retired this tick
    power_cap_kw: float = 500.0        # soft fleet-draw threshold
    overpower_weight: float = 1.0      # per kW above the threshold


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    dt_h: float = 1.0
    horizon_ticks: int = 43800  # five years, hourly
    request_timeout_h: float = 1.0
    recovery_h: float = 24.0
    retirement_soh: float = 0.80
    retirement_mode: str = "retire"  # "retire" | "keep"
    audit: bool = True
    fleet: FleetConfig = field(default_factory=FleetConfig)
    stations: tuple[StationLayout, ...] = (StationLayout(zone=1), StationLayout(zone=208))
    battery: BatteryModelConfig = field(default_factory=BatteryModelConfig)
    demand: DemandSource = field(default_factory=DemandSource)
    traffic: TrafficOptions = field(default_factory=TrafficOptions)
    reward: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self) -> None:
        if self.dt_h <= 0:
            raise ConfigError("dt_h must be positive")
        if self.horizon_ticks <= 0:
            raise ConfigError("horizon_ticks must be positive")
        if self.retirement_mode not in ("retire", "keep"):
            raise ConfigError(f"retirement_mode must be 'retire' or 'keep', got {self.retirement_mode!r}")
        if not 0.0 <= self.retirement_soh <= 1.0:
            raise ConfigError("retirement_soh must sit in [0, 1]")
        if self.fleet.count <= 0:
            raise ConfigError("fleet.count must be positive")
        if not self.stations:
            raise ConfigError("at least one station is required")
        if self.demand.kind not in ("poisson", "file"):
            raise ConfigError(f"demand.kind must be 'poisson' or 'file', got {self.demand.kind!r}")
        if self.demand.kind == "file" and not self.demand.file.path:
            raise ConfigError("demand.kind 'file' needs demand.file.path")


def _build_stages(raw) -> tuple[AgingStage, ...]:
    stages = []
    for entry in raw:
        stages.append(
            AgingStage(
                index=int(entry["index"]),
                soh_low=float(entry["soh_low"]),
                soh_high=float(entry["soh_high"]),
                alpha=float(entry["alpha"]),
                beta=float(entry["beta"]),
                psi=float(entry["psi"]),
            )
        )
    return tuple(stages)


def config_from_dict(raw: dict) -> SimConfig:
    """Build and validate a SimConfig from parsed YAML/JSON."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    version = raw.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version!r} unsupported (want {CONFIG_VERSION})")

    def section(name):
        value = raw.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        return dict(value)

    try:
        fleet_raw = section("fleet")
        if "depot_zones" in fleet_raw:
            fleet_raw["depot_zones"] = tuple(fleet_raw["depot_zones"])
        fleet = FleetConfig(**fleet_raw)

        stations_raw = raw.get("stations", None)
        if stations_raw is None:
            stations = SimConfig.__dataclass_fields__["stations"].default
        else:
            stations = tuple(StationLayout(**entry) for entry in stations_raw)

        battery_raw = section("battery")
        if "stages" in battery_raw:
            battery_raw["stages"] = _build_stages(battery_raw["stages"])
        battery = BatteryModelConfig(**battery_raw)

        demand_raw = section("demand")
        poisson_raw = demand_raw.pop("poisson", {})
        if "zones" in poisson_raw:
            poisson_raw["zones"] = tuple(poisson_raw["zones"])
        file_raw = demand_raw.pop("file", {})
        if file_raw.get("zone_filter") is not None:
            file_raw["zone_filter"] = tuple(file_raw["zone_filter"])
        demand = DemandSource(
            kind=demand_raw.pop("kind", "poisson"),
            poisson=PoissonDemandConfig(**poisson_raw),
            file=FileDemandConfig(**file_raw),
        )
        if demand_raw:
            raise ConfigError(f"unknown demand keys: {sorted(demand_raw)}")

        traffic = TrafficOptions(**section("traffic"))
        reward = RewardWeights(**section("reward"))

        sim_raw = section("sim")
        return SimConfig(
            fleet=fleet,
            stations=stations,
            battery=battery,
            demand=demand,
            traffic=traffic,
            reward=reward,
            **sim_raw,
        )
    except TypeError as err:
        raise ConfigError(f"bad config field: {err}") from err
    except (KeyError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"bad config value: {err}") from err


def load_config(path: str) -> SimConfig:
    try:
        with open(path) as handle:
            raw = yaml.safe_load(handle)
    except OSError as err:
        raise ConfigError(f"cannot read config {path!r}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse config {path!r}: {err}") from err
    return config_from_dict(raw)


def config_digest(config: SimConfig) -> str:
    """Stable content hash of the full configuration."""
    canonical = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()
