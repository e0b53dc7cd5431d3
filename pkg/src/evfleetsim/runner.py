"""Glue from a configuration to a finished run with exported artifacts."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from typing import Optional

import numpy as np

from .config import SimConfig, config_digest
from .demand import (
    ColumnMapping,
    IngestStats,
    TripRecord,
    jobs_from_records,
    make_poisson_records,
    read_trip_records,
)
from .engine import Simulation
from .metrics import MetricsBundle
from .policies import NeuralPolicy, ThresholdPolicy, load_weights
from .traffic import FitOptions, TrafficModel, dataset_content_hash, load_or_fit

POLICY_NAMES = ("baseline", "neural")


def demand_records(config: SimConfig) -> tuple[list[TripRecord], str, IngestStats]:
    """Materialize the demand source: (records, content hash, ingest stats)."""
    stats = IngestStats()
    if config.demand.kind == "poisson":
        spec = config.demand.poisson
        seq = np.random.SeedSequence(config.seed)
        rng = np.random.default_rng(seq.spawn(3)[2])
        records = make_poisson_records(
            rate_per_hour=spec.rate_per_hour,
            horizon_h=config.horizon_ticks * config.dt_h,
            zones=spec.zones,
            rng=rng,
            mean_trip_h=spec.mean_trip_h,
            speed_kmh=spec.speed_kmh,
        )
        stats.rows_read = stats.rows_kept = len(records)
        key = json.dumps(
            {
                "kind": "poisson",
                "seed": config.seed,
                "rate": spec.rate_per_hour,
                "zones": list(spec.zones),
                "mean_trip_h": spec.mean_trip_h,
                "speed_kmh": spec.speed_kmh,
                "horizon_h": config.horizon_ticks * config.dt_h,
            },
            sort_keys=True,
        )
        return records, hashlib.sha256(key.encode()).hexdigest(), stats

    spec = config.demand.file
    mapping = ColumnMapping(
        pickup_time=spec.pickup_time,
        dropoff_time=spec.dropoff_time,
        pickup_zone=spec.pickup_zone,
        dropoff_zone=spec.dropoff_zone,
        distance=spec.distance,
        fare=spec.fare,
        time_format=spec.time_format,
        distance_to_km=spec.distance_to_km,
    )
    zone_filter = set(spec.zone_filter) if spec.zone_filter is not None else None
    records = list(read_trip_records(spec.path, mapping, zone_filter, stats))
    return records, dataset_content_hash(spec.path), stats


def model_zones(config: SimConfig, records) -> list[int]:
    """Zones the travel model must cover: everywhere the fleet can stand
    plus everywhere the data mention."""
    zones = {s.zone for s in config.stations}
    zones.update(config.fleet.depot_zones)
    for rec in records:
        zones.add(rec.pickup_zone)
        zones.add(rec.dropoff_zone)
    return sorted(zones)


def build_traffic(config: SimConfig, records, dataset_hash: str) -> TrafficModel:
    options = FitOptions(
        min_pair_count=config.traffic.min_pair_count,
        fallback_duration_h=config.traffic.fallback_duration_h,
        fallback_distance_km=config.traffic.fallback_distance_km,
    )
    return load_or_fit(
        config.traffic.cache_path,
        lambda: records,
        zones=model_zones(config, records),
        options=options,
        dataset_hash=dataset_hash,
    )


def build_simulation(config: SimConfig) -> tuple[Simulation, str]:
    """World assembly: demand, travel model, fleet. Returns (sim, data hash)."""
    records, dataset_hash, _stats = demand_records(config)
    traffic = build_traffic(config, records, dataset_hash)
    jobs = jobs_from_records(records)
    return Simulation(config, traffic, jobs), dataset_hash


def make_policy(
    name: str,
    traffic: TrafficModel,
    n_vehicles: int,
    weights_path: Optional[str] = None,
):
    if name == "baseline":
        return ThresholdPolicy(traffic)
    if name == "neural":
        if not weights_path:
            raise ValueError("the neural policy needs a weights file")
        network = load_weights(weights_path)
        if network.n_vehicles != n_vehicles:
            raise ValueError(
                f"weights are for {network.n_vehicles} vehicles, fleet has {n_vehicles}"
            )
        return NeuralPolicy(network, traffic)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")


def run_to_directory(
    config: SimConfig,
    policy_name: str,
    out_dir: str,
    weights_path: Optional[str] = None,
) -> dict:
    """Execute a full run and write the artifact set into ``out_dir``.

    Files: timeseries.csv, power_histogram.csv, retirements.csv,
    summary.json. Returns the summary dict.
    """
    sim, dataset_hash = build_simulation(config)
    policy = make_policy(policy_name, sim.traffic, config.fleet.count, weights_path)
    bundle = MetricsBundle()
    sim.run(policy, observers=[bundle.record])

    os.makedirs(out_dir, exist_ok=True)
    bundle.write_timeseries_csv(os.path.join(out_dir, "timeseries.csv"))
    bundle.write_histogram_csv(os.path.join(out_dir, "power_histogram.csv"))
    bundle.write_retirements_csv(os.path.join(out_dir, "retirements.csv"))
    extra = {
        "policy": policy_name,
        "seed": config.seed,
        "config_digest": config_digest(config),
        "dataset_hash": dataset_hash,
    }
    bundle.write_summary_json(os.path.join(out_dir, "summary.json"), extra)
    return bundle.summary(extra)


def with_overrides(
    config: SimConfig,
    *,
    seed: Optional[int] = None,
    mode: Optional[str] = None,
) -> SimConfig:
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    if mode is not None:
        config = dataclasses.replace(config, retirement_mode=mode)
    return config
