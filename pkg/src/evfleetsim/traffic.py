"""Zone-to-zone travel model fitted from observed trips.

Each ordered zone pair with enough observations gets a two-dimensional
kernel density estimate over (duration, distance): Gaussian kernels centred
on the training points with an independent Silverman bandwidth per
dimension. Pairs without enough data are routed along the
least-expected-time chain of directly estimated legs; pairs that cannot be
chained are a fit error.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .demand import TripRecord

FORMAT_VERSION = 2


class TrafficFitError(ValueError):
    pass


class UnknownZoneError(KeyError):
    pass


@dataclass(frozen=True)
class LegEstimate:
    duration_h: float
    distance_km: float


@dataclass(frozen=True)
class FitOptions:
    min_pair_count: int = 5           # direct estimate needs at least this many trips
    fallback_duration_h: float = 0.1  # intra-zone default when a zone has no self trips
    fallback_distance_km: float = 1.0
    min_duration_h: float = 1e-3      # truncation floors for sampled legs
    min_distance_km: float = 1e-2
    max_sample_retries: int = 16


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb kernel width for one dimension.

    0.9 * min(sample std, IQR/1.34) * n^(-1/5), falling back to whichever
    spread measure is positive; zero when the data carry no spread.
    """
    n = values.size
    if n < 2:
        return 0.0
    std = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75.0, 25.0])
    iqr_spread = float(q75 - q25) / 1.34
    spreads = [s for s in (std, iqr_spread) if s > 0.0]
    if not spreads:
        return 0.0
    return 0.9 * min(spreads) * n ** (-0.2)


@dataclass(frozen=True)
class TravelDistribution:
    """KDE over (duration, distance) for one ordered zone pair."""

    durations_h: np.ndarray
    distances_km: np.ndarray
    bw_duration: float
    bw_distance: float

    @classmethod
    def fit(cls, durations: Sequence[float], distances: Sequence[float]) -> "TravelDistribution":
        dur = np.asarray(durations, dtype=float)
        dist = np.asarray(distances, dtype=float)
        if dur.size == 0 or dur.size != dist.size:
            raise TrafficFitError("distribution needs matching, non-empty samples")
        return cls(dur, dist, silverman_bandwidth(dur), silverman_bandwidth(dist))

    @property
    def n_samples(self) -> int:
        return int(self.durations_h.size)

    def mean(self) -> LegEstimate:
        return LegEstimate(float(self.durations_h.mean()), float(self.distances_km.mean()))

    def sample(self, rng: np.random.Generator, options: FitOptions = FitOptions()) -> LegEstimate:
        """One draw: a training point plus per-dimension Gaussian noise.

        Non-positive draws are retried up to ``max_sample_retries`` times,
        after which each offending coordinate is clamped to its floor.
        """
        dur = dist = 0.0
        for _ in range(max(options.max_sample_retries, 1)):
            idx = int(rng.integers(self.n_samples))
            noise = rng.normal(size=2)
            dur = float(self.durations_h[idx] + noise[0] * self.bw_duration)
            dist = float(self.distances_km[idx] + noise[1] * self.bw_distance)
            if dur > 0.0 and dist > 0.0:
                return LegEstimate(dur, dist)
        return LegEstimate(
            max(dur, options.min_duration_h), max(dist, options.min_distance_km)
        )


def _dijkstra(
    weights: dict[tuple[int, int], float], nodes: Sequence[int], source: int
) -> tuple[dict[int, float], dict[int, int]]:
    """Least-total-weight distances and predecessors from ``source``."""
    adjacency: dict[int, list[tuple[int, float]]] = {n: [] for n in nodes}
    for (a, b), w in weights.items():
        adjacency[a].append((b, w))
    dist = {source: 0.0}
    prev: dict[int, int] = {}
    heap: list[tuple[float, int]] = [(0.0, source)]
    seen: set[int] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in seen:
            continue
        seen.add(node)
        for nxt, w in adjacency[node]:
            cand = d + w
            if nxt not in dist or cand < dist[nxt]:
                dist[nxt] = cand
                prev[nxt] = node
                heapq.heappush(heap, (cand, nxt))
    return dist, prev


@dataclass
class TrafficModel:
    """Per-pair travel distributions routed for least expected duration.

    ``direct`` holds fitted distributions for pairs with enough data;
    ``routes`` holds the chained path for every pair where hopping through
    intermediate zones beats (or substitutes for) the direct estimate.
    """

    zones: tuple[int, ...]
    direct: dict[tuple[int, int], TravelDistribution]
    routes: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict)
    options: FitOptions = field(default_factory=FitOptions)
    dataset_hash: str = ""

    def _legs(self, origin: int, destination: int) -> list[TravelDistribution]:
        if origin not in self.zones or destination not in self.zones:
            raise UnknownZoneError(f"zone pair ({origin}, {destination}) outside model")
        key = (origin, destination)
        route = self.routes.get(key)
        if route is not None:
            return [self.direct[(a, b)] for a, b in zip(route, route[1:])]
        if key in self.direct:
            return [self.direct[key]]
        raise UnknownZoneError(f"no direct estimate or route for pair {key}")

    def expected_leg(self, origin: int, destination: int) -> LegEstimate:
        """Mean travel cost: training-sample mean, summed along the route."""
        if origin == destination and (origin, destination) not in self.direct:
            raise UnknownZoneError(f"no intra-zone estimate for zone {origin}")
        total_d = total_x = 0.0
        for leg in self._legs(origin, destination):
            m = leg.mean()
            total_d += m.duration_h
            total_x += m.distance_km
        return LegEstimate(total_d, total_x)

    def sample_leg(
        self, origin: int, destination: int, rng: np.random.Generator
    ) -> LegEstimate:
        """Draw one trip; routed pairs sum an independent draw per leg."""
        total_d = total_x = 0.0
        for leg in self._legs(origin, destination):
            draw = leg.sample(rng, self.options)
            total_d += draw.duration_h
            total_x += draw.distance_km
        return LegEstimate(total_d, total_x)

    # ---------------- serialization ----------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "dataset_hash": self.dataset_hash,
            "zones": list(self.zones),
            "options": {
                "min_pair_count": self.options.min_pair_count,
                "fallback_duration_h": self.options.fallback_duration_h,
                "fallback_distance_km": self.options.fallback_distance_km,
                "min_duration_h": self.options.min_duration_h,
                "min_distance_km": self.options.min_distance_km,
                "max_sample_retries": self.options.max_sample_retries,
            },
            "direct": [
                {
                    "from": a,
                    "to": b,
                    "durations_h": dist.durations_h.tolist(),
                    "distances_km": dist.distances_km.tolist(),
                    "bw_duration": dist.bw_duration,
                    "bw_distance": dist.bw_distance,
                }
                for (a, b), dist in sorted(self.direct.items())
            ],
            "routes": [
                {"from": a, "to": b, "path": list(path)}
                for (a, b), path in sorted(self.routes.items())
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TrafficModel":
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise TrafficFitError(
                f"travel-model cache version {version!r} unsupported (want {FORMAT_VERSION})"
            )
        options = FitOptions(**payload["options"])
        direct = {
            (entry["from"], entry["to"]): TravelDistribution(
                np.asarray(entry["durations_h"], dtype=float),
                np.asarray(entry["distances_km"], dtype=float),
                entry["bw_duration"],
                entry["bw_distance"],
            )
            for entry in payload["direct"]
        }
        routes = {
            (entry["from"], entry["to"]): tuple(entry["path"]) for entry in payload["routes"]
        }
        return cls(
            zones=tuple(payload["zones"]),
            direct=direct,
            routes=routes,
            options=options,
            dataset_hash=payload.get("dataset_hash", ""),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_dict(), handle, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path: str) -> "TrafficModel":
        with open(path) as handle:
            return cls.from_dict(json.load(handle))


def dataset_content_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fit_traffic_model(
    records: Iterable[TripRecord],
    zones: Optional[Sequence[int]] = None,
    options: FitOptions = FitOptions(),
    dataset_hash: str = "",
) -> TrafficModel:
    """Fit per-pair travel distributions and pick best routes.

    Records with non-positive duration or distance are skipped. When
    ``zones`` is omitted the zone set is whatever the data mention. Every
    ordered pair of distinct zones gets the least-expected-duration path
    over the directly estimated legs, so a chained route replaces a direct
    estimate the data show to be slower; pairs reachable neither way fail
    the fit with the gaps listed. Intra-zone pairs always resolve directly,
    through a configured fallback point mass when the data are silent.
    """
    samples: dict[tuple[int, int], tuple[list[float], list[float]]] = {}
    observed: set[int] = set()
    for rec in records:
        if rec.duration_h <= 0.0 or rec.distance_km <= 0.0:
            continue
        observed.update((rec.pickup_zone, rec.dropoff_zone))
        bucket = samples.setdefault((rec.pickup_zone, rec.dropoff_zone), ([], []))
        bucket[0].append(rec.duration_h)
        bucket[1].append(rec.distance_km)

    zone_tuple = tuple(sorted(zones)) if zones is not None else tuple(sorted(observed))
    if not zone_tuple:
        raise TrafficFitError("no zones to fit: empty zone set and no usable records")
    zone_set = set(zone_tuple)

    direct: dict[tuple[int, int], TravelDistribution] = {}
    for (a, b), (durs, dists) in samples.items():
        if a not in zone_set or b not in zone_set:
            continue
        if len(durs) >= options.min_pair_count:
            direct[(a, b)] = TravelDistribution.fit(durs, dists)

    # intra-zone fallback: a zone with no usable self trips gets a point mass
    for z in zone_tuple:
        if (z, z) not in direct:
            direct[(z, z)] = TravelDistribution(
                np.array([options.fallback_duration_h]),
                np.array([options.fallback_distance_km]),
                0.0,
                0.0,
            )

    edge_weights = {
        (a, b): dist.mean().duration_h for (a, b), dist in direct.items() if a != b
    }
    routes: dict[tuple[int, int], tuple[int, ...]] = {}
    unreachable: list[tuple[int, int]] = []
    for a in zone_tuple:
        dist_map, prev = _dijkstra(edge_weights, zone_tuple, a)
        for b in zone_tuple:
            if b == a:
                continue
            if b not in dist_map:
                unreachable.append((a, b))
                continue
            path = [b]
            while path[-1] != a:
                path.append(prev[path[-1]])
            path.reverse()
            # a chained path can undercut a slow direct estimate; a route is
            # stored only when chaining wins, so direct stays the fast path
            if len(path) > 2:
                routes[(a, b)] = tuple(path)
    if unreachable:
        raise TrafficFitError(
            f"{len(unreachable)} zone pair(s) unreachable through direct legs: "
            f"{sorted(unreachable)[:20]}"
        )

    return TrafficModel(
        zones=zone_tuple,
        direct=direct,
        routes=routes,
        options=options,
        dataset_hash=dataset_hash,
    )


def load_or_fit(
    cache_path: Optional[str],
    records_factory,
    zones: Optional[Sequence[int]] = None,
    options: FitOptions = FitOptions(),
    dataset_hash: str = "",
) -> TrafficModel:
    """Reuse a cached fit when its dataset hash matches, else refit and save."""
    if cache_path is not None:
        try:
            cached = TrafficModel.load(cache_path)
        except (OSError, ValueError, KeyError):
            cached = None
        if cached is not None and cached.dataset_hash == dataset_hash and dataset_hash:
            return cached
    model = fit_traffic_model(records_factory(), zones, options, dataset_hash)
    if cache_path is not None:
        model.save(cache_path)
    return model
