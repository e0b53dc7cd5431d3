"""Config-to-artifacts pipeline: reproducibility and file layout."""

import json
import os

import pytest

from evfleetsim.battery import AgingStage
from evfleetsim.config import (
    BatteryModelConfig,
    DemandSource,
    FleetConfig,
    PoissonDemandConfig,
    SimConfig,
    StationLayout,
    TrafficOptions,
)
from evfleetsim.policies import NeuralPolicy, PolicyNetwork, ThresholdPolicy, save_weights
from evfleetsim.runner import (
    build_simulation,
    demand_records,
    make_policy,
    model_zones,
    run_to_directory,
    with_overrides,
)

EXPECTED_FILES = ("timeseries.csv", "power_histogram.csv", "retirements.csv", "summary.json")

# Flat, gentle wear curve so plumbing tests exercise the pipeline rather than
# pack chemistry: roughly capacity/1e9 lost per cycling tick.
GENTLE_BATTERY = BatteryModelConfig(
    reference_cycles=1e9,
    stages=(AgingStage(index=1, soh_low=0.0, soh_high=1.0, alpha=1e9, beta=1e9, psi=0.0),),
)


def small_config(seed=11, horizon=48, cache_path=None, zones=(1, 2, 3), **sim_kw) -> SimConfig:
    return SimConfig(
        seed=seed,
        horizon_ticks=horizon,
        fleet=FleetConfig(count=3, pack_kwh=60.0, kwh_per_km=0.15, depot_zones=(1, 2)),
        stations=(
            StationLayout(zone=1, ports=2, port_kw=50.0, station_kw=120.0),
            StationLayout(zone=2, ports=2, port_kw=50.0, station_kw=120.0),
        ),
        battery=GENTLE_BATTERY,
        demand=DemandSource(
            kind="poisson",
            poisson=PoissonDemandConfig(rate_per_hour=4.0, zones=zones),
        ),
        traffic=TrafficOptions(cache_path=cache_path),
        **sim_kw,
    )


class TestDemand:
    def test_poisson_demand_is_seed_deterministic(self):
        a, hash_a, stats_a = demand_records(small_config(seed=5))
        b, hash_b, _ = demand_records(small_config(seed=5))
        assert hash_a == hash_b
        assert [
            (r.pickup_zone, r.dropoff_zone, r.pickup_time, r.distance_km) for r in a
        ] == [(r.pickup_zone, r.dropoff_zone, r.pickup_time, r.distance_km) for r in b]
        assert stats_a.rows_kept == len(a)

    def test_demand_hash_tracks_seed(self):
        _, hash_a, _ = demand_records(small_config(seed=5))
        _, hash_b, _ = demand_records(small_config(seed=6))
        assert hash_a != hash_b

    def test_model_zones_union_sorted(self):
        config = small_config()
        records, _, _ = demand_records(config)
        zones = model_zones(config, records)
        assert zones == sorted(zones)
        assert {1, 2, 3} <= set(zones)  # stations, depots, and data zones


class TestPolicySelection:
    def test_baseline_and_neural_dispatch(self, tmp_path):
        sim, _ = build_simulation(small_config(horizon=6, zones=(1, 2)))
        assert isinstance(make_policy("baseline", sim.traffic, 3), ThresholdPolicy)

        path = str(tmp_path / "w.evpw")
        save_weights(PolicyNetwork.build(3), path)
        policy = make_policy("neural", sim.traffic, 3, weights_path=path)
        assert isinstance(policy, NeuralPolicy)

    def test_neural_requires_weights(self):
        sim, _ = build_simulation(small_config(horizon=6, zones=(1, 2)))
        with pytest.raises(ValueError, match="weights"):
            make_policy("neural", sim.traffic, 3)

    def test_neural_rejects_fleet_size_mismatch(self, tmp_path):
        sim, _ = build_simulation(small_config(horizon=6, zones=(1, 2)))
        path = str(tmp_path / "w.evpw")
        save_weights(PolicyNetwork.build(5), path)
        with pytest.raises(ValueError, match="vehicles"):
            make_policy("neural", sim.traffic, 3, weights_path=path)

    def test_unknown_policy_name(self):
        sim, _ = build_simulation(small_config(horizon=6, zones=(1, 2)))
        with pytest.raises(ValueError, match="unknown policy"):
            make_policy("optimal", sim.traffic, 3)


class TestRunToDirectory:
    def test_writes_artifact_set(self, tmp_path):
        out = tmp_path / "run"
        summary = run_to_directory(small_config(horizon=24), "baseline", str(out))
        for name in EXPECTED_FILES:
            assert (out / name).exists(), name
        assert summary["ticks"] == 24
        assert summary["policy"] == "baseline"
        assert summary["seed"] == 11
        assert len(summary["config_digest"]) == 64
        assert len(summary["dataset_hash"]) == 64
        on_disk = json.loads((out / "summary.json").read_text())
        assert on_disk == json.loads(json.dumps(summary))

    def test_identical_config_gives_identical_bytes(self, tmp_path):
        cache = str(tmp_path / "traffic_cache.json")
        config = small_config(horizon=24, cache_path=cache)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_to_directory(config, "baseline", str(out_a))
        assert os.path.exists(cache)  # first run populates the travel-model cache
        run_to_directory(config, "baseline", str(out_b))  # second run reads it back
        for name in EXPECTED_FILES:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_stale_cache_is_refit_on_new_data(self, tmp_path):
        cache = str(tmp_path / "traffic_cache.json")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        sum_a = run_to_directory(small_config(seed=3, horizon=12, zones=(1, 2), cache_path=cache), "baseline", str(out_a))
        sum_b = run_to_directory(small_config(seed=4, horizon=12, zones=(1, 2), cache_path=cache), "baseline", str(out_b))
        assert sum_a["dataset_hash"] != sum_b["dataset_hash"]

    def test_neural_run_completes(self, tmp_path):
        path = str(tmp_path / "w.evpw")
        save_weights(PolicyNetwork.build(3), path)
        summary = run_to_directory(
            small_config(horizon=12, zones=(1, 2)), "neural", str(tmp_path / "run"), weights_path=path
        )
        assert summary["policy"] == "neural"
        assert summary["ticks"] == 12

    def test_baseline_run_actually_serves_jobs(self, tmp_path):
        summary = run_to_directory(small_config(horizon=48), "baseline", str(tmp_path / "run"))
        assert summary["releases"] > 0
        assert summary["completions"] > 0
        assert summary["revenue"] > 0.0


class TestOverrides:
    def test_seed_and_mode_replaced(self):
        base = small_config(seed=1)
        changed = with_overrides(base, seed=9, mode="keep")
        assert changed.seed == 9
        assert changed.retirement_mode == "keep"
        assert base.seed == 1 and base.retirement_mode == "retire"

    def test_none_means_keep(self):
        base = small_config(seed=7)
        assert with_overrides(base) == base
