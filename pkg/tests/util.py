"""Shared fixture builders for the test suite."""

from datetime import datetime, timedelta

import numpy as np

from evfleetsim.demand import TripRecord

EPOCH = datetime(2024, 1, 1)


def trip(pickup_h, duration_h, a, b, distance_km, fare=10.0):
    start = EPOCH + timedelta(hours=pickup_h)
    return TripRecord(
        pickup_time=start,
        dropoff_time=start + timedelta(hours=duration_h),
        pickup_zone=a,
        dropoff_zone=b,
        distance_km=distance_km,
        fare=fare,
    )


def records_for_pairs(pair_samples):
    """pair_samples: {(a, b): [(duration_h, distance_km), ...]} -> records."""
    records = []
    t = 0.0
    for (a, b), samples in sorted(pair_samples.items()):
        for duration, distance in samples:
            records.append(trip(t, duration, a, b, distance))
            t += 0.1
    return records


def random_leg_graph(rng, n_zones, n_samples=5):
    """A strongly connected random zone graph with some pairs left sparse.

    Returns (records, zones, direct_pairs, mean_duration map). Every zone
    sits on a random ring so each ordered pair is reachable; roughly half
    the remaining ordered pairs also get direct data.
    """
    zones = list(range(1, n_zones + 1))
    order = list(zones)
    rng.shuffle(order)
    direct_pairs = set()
    for i in range(len(order)):
        direct_pairs.add((order[i], order[(i + 1) % len(order)]))
    for a in zones:
        for b in zones:
            if a != b and (a, b) not in direct_pairs and rng.random() < 0.4:
                direct_pairs.add((a, b))
    pair_samples = {}
    means = {}
    for (a, b) in sorted(direct_pairs):
        base_d = float(rng.uniform(0.1, 2.0))
        base_x = float(rng.uniform(1.0, 30.0))
        samples = [
            (base_d * float(rng.uniform(0.9, 1.1)), base_x * float(rng.uniform(0.9, 1.1)))
            for _ in range(n_samples)
        ]
        pair_samples[(a, b)] = samples
        means[(a, b)] = sum(s[0] for s in samples) / n_samples
    return records_for_pairs(pair_samples), zones, direct_pairs, means


def min_duration_by_enumeration(zones, edge_means, origin, destination):
    """Brute-force least-total-duration over all simple paths of direct legs."""
    best = [float("inf")]

    def walk(node, visited, cost):
        if cost >= best[0]:
            return
        if node == destination:
            best[0] = cost
            return
        for nxt in zones:
            if nxt not in visited and (node, nxt) in edge_means:
                walk(nxt, visited | {nxt}, cost + edge_means[(node, nxt)])

    walk(origin, {origin}, 0.0)
    return best[0]
