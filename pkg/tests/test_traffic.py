"""Travel-model tests: bandwidths, sampling, routing, serialization."""

import numpy as np
import pytest

from evfleetsim.traffic import (
    FitOptions,
    TrafficFitError,
    TrafficModel,
    TravelDistribution,
    UnknownZoneError,
    fit_traffic_model,
    load_or_fit,
    silverman_bandwidth,
)

from util import (
    min_duration_by_enumeration,
    random_leg_graph,
    records_for_pairs,
)


# =====================================================================
# Bandwidth rule
# =====================================================================

def test_silverman_bandwidth_matches_hand_computation():
    values = np.array([1.0, 1.2, 0.9, 1.5, 1.1, 1.3])
    std = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75, 25])
    expected = 0.9 * min(std, (q75 - q25) / 1.34) * values.size ** (-0.2)
    assert silverman_bandwidth(values) == pytest.approx(expected, rel=1e-12)


def test_silverman_bandwidth_degenerate_cases():
    assert silverman_bandwidth(np.array([2.0])) == 0.0
    assert silverman_bandwidth(np.array([3.0, 3.0, 3.0])) == 0.0


def test_silverman_falls_back_when_iqr_collapses():
    # heavy ties kill the IQR but not the std; the rule should still width up
    values = np.array([1.0, 1.0, 1.0, 1.0, 5.0])
    assert silverman_bandwidth(values) > 0.0


# =====================================================================
# Fitting
# =====================================================================

def pair_fixture():
    return {
        (1, 2): [(0.5, 5.0), (0.6, 6.0), (0.4, 4.5), (0.55, 5.2), (0.5, 5.1)],
        (2, 1): [(0.7, 5.5), (0.8, 6.5), (0.75, 6.0), (0.7, 5.8), (0.72, 5.9)],
        (2, 3): [(0.3, 3.0), (0.35, 3.2), (0.32, 3.1), (0.3, 2.9), (0.31, 3.0)],
        (3, 2): [(0.3, 3.0), (0.36, 3.3), (0.33, 3.1), (0.29, 2.8), (0.30, 3.0)],
        # (1, 3) and (3, 1) deliberately sparse: routed via zone 2
        (1, 3): [(1.0, 9.0)],
    }


def test_fit_builds_direct_and_routed_pairs():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    assert model.zones == (1, 2, 3)
    assert (1, 2) in model.direct
    assert (1, 3) not in model.direct  # below the five-trip threshold
    assert model.routes[(1, 3)] == (1, 2, 3)
    assert model.routes[(3, 1)] == (3, 2, 1)


def test_expected_leg_is_the_training_mean():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    leg = model.expected_leg(1, 2)
    durs = [s[0] for s in pair_fixture()[(1, 2)]]
    dists = [s[1] for s in pair_fixture()[(1, 2)]]
    assert leg.duration_h == pytest.approx(np.mean(durs), rel=1e-9)
    assert leg.distance_km == pytest.approx(np.mean(dists), rel=1e-9)


def test_routed_expectation_adds_leg_means():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    via = model.expected_leg(1, 3)
    first = model.expected_leg(1, 2)
    second = model.expected_leg(2, 3)
    assert via.duration_h == pytest.approx(first.duration_h + second.duration_h, rel=1e-9)
    assert via.distance_km == pytest.approx(first.distance_km + second.distance_km, rel=1e-9)


def test_intra_zone_fallback_point_mass():
    options = FitOptions(fallback_duration_h=0.2, fallback_distance_km=2.0)
    model = fit_traffic_model(records_for_pairs(pair_fixture()), options=options)
    leg = model.expected_leg(1, 1)
    assert leg.duration_h == 0.2
    assert leg.distance_km == 2.0
    draw = model.sample_leg(1, 1, np.random.default_rng(0))
    assert (draw.duration_h, draw.distance_km) == (0.2, 2.0)


def test_unreachable_pairs_fail_the_fit():
    # zone 4 exists but nothing connects it
    with pytest.raises(TrafficFitError, match="unreachable"):
        fit_traffic_model(records_for_pairs(pair_fixture()), zones=[1, 2, 3, 4])


def test_empty_fit_is_an_error():
    with pytest.raises(TrafficFitError):
        fit_traffic_model([])


def test_unknown_zone_is_an_error():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    with pytest.raises(UnknownZoneError):
        model.expected_leg(1, 99)


# =====================================================================
# Sampling
# =====================================================================

def test_single_point_distribution_samples_exactly_that_point():
    dist = TravelDistribution.fit([0.4], [3.5])
    assert dist.bw_duration == 0.0 and dist.bw_distance == 0.0
    rng = np.random.default_rng(1)
    for _ in range(5):
        draw = dist.sample(rng)
        assert (draw.duration_h, draw.distance_km) == (0.4, 3.5)


def test_sampling_is_deterministic_under_a_seed():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    a = [model.sample_leg(1, 2, np.random.default_rng(42)) for _ in range(1)]
    draws1 = [model.sample_leg(1, 2, rng) for rng in [np.random.default_rng(42)]][0]
    rng1, rng2 = np.random.default_rng(7), np.random.default_rng(7)
    seq1 = [model.sample_leg(1, 2, rng1) for _ in range(50)]
    seq2 = [model.sample_leg(1, 2, rng2) for _ in range(50)]
    assert seq1 == seq2
    assert a[0] == draws1


def test_routed_sampling_sums_one_draw_per_leg():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    combined = model.sample_leg(1, 3, np.random.default_rng(11))
    rng = np.random.default_rng(11)
    first = model.sample_leg(1, 2, rng)
    second = model.sample_leg(2, 3, rng)
    assert combined.duration_h == pytest.approx(first.duration_h + second.duration_h, rel=1e-12)
    assert combined.distance_km == pytest.approx(first.distance_km + second.distance_km, rel=1e-12)


def test_samples_are_always_positive():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    rng = np.random.default_rng(3)
    for _ in range(2000):
        draw = model.sample_leg(2, 3, rng)
        assert draw.duration_h > 0.0
        assert draw.distance_km > 0.0


class _StubRng:
    """Generator stand-in whose normals always push draws negative."""

    def integers(self, n):
        return 0

    def normal(self, size):
        return np.array([-10.0, -10.0])


def test_exhausted_retries_clamp_to_floors():
    dist = TravelDistribution(
        durations_h=np.array([0.05]),
        distances_km=np.array([0.5]),
        bw_duration=1.0,
        bw_distance=1.0,
    )
    options = FitOptions(min_duration_h=1e-3, min_distance_km=1e-2)
    draw = dist.sample(_StubRng(), options)
    assert draw.duration_h == options.min_duration_h
    assert draw.distance_km == options.min_distance_km


def test_sample_mean_converges_to_expected_leg():
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    expected = model.expected_leg(2, 1)
    rng = np.random.default_rng(5)
    draws = [model.sample_leg(2, 1, rng) for _ in range(100_000)]
    mean_d = float(np.mean([d.duration_h for d in draws]))
    mean_x = float(np.mean([d.distance_km for d in draws]))
    assert mean_d == pytest.approx(expected.duration_h, rel=0.02)
    assert mean_x == pytest.approx(expected.distance_km, rel=0.02)


# =====================================================================
# Route optimality
# =====================================================================

def test_routes_minimise_total_expected_duration_on_random_graphs():
    rng = np.random.default_rng(2024)
    checked = 0
    for trial in range(20):
        n_zones = int(rng.integers(3, 9))
        records, zones, direct_pairs, _means = random_leg_graph(rng, n_zones)
        model = fit_traffic_model(records, zones=zones)
        edge_means = {
            pair: model.direct[pair].mean().duration_h
            for pair in model.direct
            if pair[0] != pair[1]
        }
        for (a, b), path in model.routes.items():
            got = model.expected_leg(a, b).duration_h
            best = min_duration_by_enumeration(zones, edge_means, a, b)
            assert got == pytest.approx(best, rel=1e-9), f"suboptimal route {a}->{b}: {path}"
            checked += 1
    assert checked > 0


# =====================================================================
# Serialization and caching
# =====================================================================

def test_round_trip_preserves_behaviour(tmp_path):
    model = fit_traffic_model(records_for_pairs(pair_fixture()), dataset_hash="abc123")
    path = str(tmp_path / "cache.json")
    model.save(path)
    loaded = TrafficModel.load(path)
    assert loaded.zones == model.zones
    assert loaded.dataset_hash == "abc123"
    assert set(loaded.direct) == set(model.direct)
    assert loaded.routes == model.routes
    for pair in model.direct:
        a = model.sample_leg(*pair, np.random.default_rng(9))
        b = loaded.sample_leg(*pair, np.random.default_rng(9))
        assert a == b


def test_version_mismatch_is_rejected(tmp_path):
    model = fit_traffic_model(records_for_pairs(pair_fixture()))
    payload = model.to_dict()
    payload["format_version"] = 999
    import json

    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(TrafficFitError, match="version"):
        TrafficModel.load(str(path))


def test_cache_hit_skips_refitting(tmp_path):
    cache = str(tmp_path / "model.json")
    calls = []

    def factory():
        calls.append(1)
        return records_for_pairs(pair_fixture())

    first = load_or_fit(cache, factory, dataset_hash="h1")
    assert calls == [1]

    def exploding_factory():
        raise AssertionError("cache should have been used")

    second = load_or_fit(cache, exploding_factory, dataset_hash="h1")
    assert second.zones == first.zones


def test_cache_miss_on_changed_dataset(tmp_path):
    cache = str(tmp_path / "model.json")
    load_or_fit(cache, lambda: records_for_pairs(pair_fixture()), dataset_hash="h1")
    calls = []

    def factory():
        calls.append(1)
        return records_for_pairs(pair_fixture())

    load_or_fit(cache, factory, dataset_hash="h2")
    assert calls == [1]
