"""Trip demand: dataset ingestion, job lifecycle, and synthetic generators.

A trip dataset row becomes a ``TripRecord``; records become ``Job`` entries
released into the simulation at their pickup time. Job states follow a fixed
transition graph and every transition is logged so runs can be audited for
conservation (nothing created or destroyed) and legality (no undeclared
edges).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

MILES_TO_KM = 1.609344


class JobState(Enum):
    ARRIVED = "arrived"
    ASSIGNED = "assigned"
    IN_PROGRESS = "in_progress"
    COMPLETE = "complete"
    REJECTED = "rejected"
    FAILED = "failed"


# Legal lifecycle edges. ASSIGNED -> ARRIVED is preemption: the job returns
# to the open pool with its original release time.
ALLOWED_TRANSITIONS: frozenset[tuple[JobState, JobState]] = frozenset(
    {
        (JobState.ARRIVED, JobState.ASSIGNED),
        (JobState.ARRIVED, JobState.REJECTED),
        (JobState.ASSIGNED, JobState.IN_PROGRESS),
        (JobState.ASSIGNED, JobState.ARRIVED),
        (JobState.ASSIGNED, JobState.FAILED),
        (JobState.IN_PROGRESS, JobState.COMPLETE),
        (JobState.IN_PROGRESS, JobState.FAILED),
    }
)

TERMINAL_STATES = frozenset({JobState.COMPLETE, JobState.REJECTED, JobState.FAILED})

# How long an open request waits before the rider gives up (hours).
DEFAULT_REQUEST_TIMEOUT_H = 1.0


@dataclass(frozen=True)
class TripRecord:
    """One observed trip: when and where it ran, how far, and the fare."""

    pickup_time: datetime
    dropoff_time: datetime
    pickup_zone: int
    dropoff_zone: int
    distance_km: float
    fare: float

    @property
    def duration_h(self) -> float:
        return (self.dropoff_time - self.pickup_time).total_seconds() / 3600.0


@dataclass
class Job:
    """A ride request inside the simulation clock (hours from run start)."""

    job_id: int
    release_h: float
    pickup_zone: int
    dropoff_zone: int
    service_duration_h: float
    service_distance_km: float
    fare: float
    state: JobState = JobState.ARRIVED
    assigned_vehicle: Optional[int] = None


@dataclass(frozen=True)
class ColumnMapping:
    """Names and units of the dataset columns to ingest.

    Defaults match the New York yellow-cab schema (datetimes as
    ``YYYY-MM-DD HH:MM:SS``, distances in miles). Other city schemas need
    only a different mapping, not code changes.
    """

    pickup_time: str = "tpep_pickup_datetime"
    dropoff_time: str = "tpep_dropoff_datetime"
    pickup_zone: str = "PULocationID"
    dropoff_zone: str = "DOLocationID"
    distance: str = "trip_distance"
    fare: str = "fare_amount"
    time_format: str = "%Y-%m-%d %H:%M:%S"
    distance_to_km: float = MILES_TO_KM


@dataclass
class IngestStats:
    rows_read: int = 0
    rows_kept: int = 0
    rows_malformed: int = 0
    rows_zone_filtered: int = 0


class IngestError(ValueError):
    pass


def _parse_row(row: dict, mapping: ColumnMapping) -> TripRecord:
    pickup = datetime.strptime(row[mapping.pickup_time].strip(), mapping.time_format)
    dropoff = datetime.strptime(row[mapping.dropoff_time].strip(), mapping.time_format)
    pickup_zone = int(row[mapping.pickup_zone])
    dropoff_zone = int(row[mapping.dropoff_zone])
    distance = float(row[mapping.distance]) * mapping.distance_to_km
    fare = float(row[mapping.fare])
    if dropoff < pickup:
        raise ValueError("dropoff precedes pickup")
    if not math.isfinite(distance) or distance < 0.0:
        raise ValueError(f"bad distance {distance!r}")
    if not math.isfinite(fare) or fare < 0.0:
        raise ValueError(f"bad fare {fare!r}")
    return TripRecord(pickup, dropoff, pickup_zone, dropoff_zone, distance, fare)


def read_trip_records(
    path: str,
    mapping: ColumnMapping = ColumnMapping(),
    zones: Optional[set[int]] = None,
    stats: Optional[IngestStats] = None,
) -> Iterator[TripRecord]:
    """Stream trip records out of a delimited-text file.

    Malformed rows (unparsable fields, negative distance or fare, dropoff
    before pickup) are counted in ``stats`` and skipped rather than raised.
    When ``zones`` is given, rows whose endpoints fall outside it are
    dropped and counted separately.
    """
    stats = stats if stats is not None else IngestStats()
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty file, no header row")
        missing = [
            col
            for col in (
                mapping.pickup_time,
                mapping.dropoff_time,
                mapping.pickup_zone,
                mapping.dropoff_zone,
                mapping.distance,
                mapping.fare,
            )
            if col not in reader.fieldnames
        ]
        if missing:
            raise IngestError(f"{path}: missing mapped columns {missing}")
        for row in reader:
            stats.rows_read += 1
            try:
                record = _parse_row(row, mapping)
            except (ValueError, KeyError, TypeError):
                stats.rows_malformed += 1
                continue
            if zones is not None and (
                record.pickup_zone not in zones or record.dropoff_zone not in zones
            ):
                stats.rows_zone_filtered += 1
                continue
            stats.rows_kept += 1
            yield record


def _floor_to_hour(moment: datetime) -> datetime:
    return moment.replace(minute=0, second=0, microsecond=0)


def jobs_from_records(
    records: Iterable[TripRecord],
    origin: Optional[datetime] = None,
) -> list[Job]:
    """Turn trip records into release-ordered jobs.

    Job ids number the records in input order; the returned list is stably
    sorted by release time, so simultaneous releases keep input order. The
    clock origin defaults to the earliest pickup, floored to the hour.
    """
    materialised = list(records)
    if not materialised:
        return []
    if origin is None:
        origin = _floor_to_hour(min(r.pickup_time for r in materialised))
    jobs = [
        Job(
            job_id=idx,
            release_h=(rec.pickup_time - origin).total_seconds() / 3600.0,
            pickup_zone=rec.pickup_zone,
            dropoff_zone=rec.dropoff_zone,
            service_duration_h=rec.duration_h,
            service_distance_km=rec.distance_km,
            fare=rec.fare,
        )
        for idx, rec in enumerate(materialised)
    ]
    jobs.sort(key=lambda j: j.release_h)  # stable: ties keep id (input) order
    return jobs


def ingest(
    path: str,
    mapping: ColumnMapping = ColumnMapping(),
    zones: Optional[set[int]] = None,
    origin: Optional[datetime] = None,
    stats: Optional[IngestStats] = None,
) -> list[Job]:
    """File-to-jobs convenience: stream, filter, convert, order."""
    return jobs_from_records(read_trip_records(path, mapping, zones, stats), origin)


class TransitionError(RuntimeError):
    pass


@dataclass
class JobBoard:
    """Holds every job over its lifecycle and logs each transition.

    Jobs enter via :meth:`release_due` once the clock reaches their release
    time. The transition log plus counters let a run prove, tick by tick,
    that released jobs are exactly partitioned into open and terminal
    states.
    """

    pending: list[Job] = field(default_factory=list)  # release-ordered, unreleased
    jobs: dict[int, Job] = field(default_factory=dict)  # released, by id
    transition_log: list[tuple[int, int, JobState, JobState]] = field(default_factory=list)
    released_count: int = 0
    _cursor: int = 0

    @classmethod
    def from_jobs(cls, ordered_jobs: Sequence[Job]) -> "JobBoard":
        board = cls(pending=list(ordered_jobs))
        for earlier, later in zip(board.pending, board.pending[1:]):
            if later.release_h < earlier.release_h:
                raise ValueError("jobs must be release-ordered")
        return board

    def release_due(self, now_h: float, tick: int) -> list[Job]:
        """Release every pending job whose time has come (boundary inclusive)."""
        released = []
        while self._cursor < len(self.pending) and self.pending[self._cursor].release_h <= now_h:
            job = self.pending[self._cursor]
            self._cursor += 1
            job.state = JobState.ARRIVED
            self.jobs[job.job_id] = job
            self.released_count += 1
            released.append(job)
        return released

    def exhausted(self) -> bool:
        return self._cursor >= len(self.pending)

    def transition(self, job_id: int, new_state: JobState, tick: int) -> Job:
        job = self.jobs[job_id]
        if (job.state, new_state) not in ALLOWED_TRANSITIONS:
            raise TransitionError(
                f"job {job_id}: illegal transition {job.state.value} -> {new_state.value}"
            )
        self.transition_log.append((tick, job_id, job.state, new_state))
        job.state = new_state
        if new_state != JobState.ASSIGNED:
            job.assigned_vehicle = None
        return job

    def expire_stale(self, now_h: float, timeout_h: float, tick: int) -> list[Job]:
        """Reject open requests that waited at least ``timeout_h`` hours."""
        expired = []
        for job in self.jobs.values():
            if job.state is JobState.ARRIVED and now_h - job.release_h >= timeout_h:
                self.transition(job.job_id, JobState.REJECTED, tick)
                expired.append(job)
        return expired

    def open_jobs(self) -> list[Job]:
        return [
            j
            for j in self.jobs.values()
            if j.state in (JobState.ARRIVED, JobState.ASSIGNED, JobState.IN_PROGRESS)
        ]

    def count(self, state: JobState) -> int:
        return sum(1 for j in self.jobs.values() if j.state is state)

    def conservation_holds(self) -> bool:
        """released == terminal + in flight, with no job unaccounted."""
        terminal = sum(1 for j in self.jobs.values() if j.state in TERMINAL_STATES)
        in_flight = len(self.jobs) - terminal
        return self.released_count == terminal + in_flight == len(self.jobs)

    def audit_transitions(self) -> None:
        for tick, job_id, src, dst in self.transition_log:
            if (src, dst) not in ALLOWED_TRANSITIONS:
                raise TransitionError(
                    f"audit: job {job_id} took illegal edge {src.value} -> {dst.value} at tick {tick}"
                )


def make_poisson_records(
    rate_per_hour: float,
    horizon_h: float,
    zones: Sequence[int],
    rng: np.random.Generator,
    *,
    start: datetime = datetime(2024, 1, 1),
    mean_trip_h: float = 0.25,
    speed_kmh: float = 18.0,
    fare_flag: float = 3.0,
    fare_per_km: float = 1.75,
) -> list[TripRecord]:
    """Synthetic Poisson demand for tests and demos.

    Arrivals follow an exponential-gap process at ``rate_per_hour``; origins
    and destinations are drawn uniformly over ``zones`` (ordered pairs,
    intra-zone included); trip durations are exponential around
    ``mean_trip_h`` with distance tied to an urban cruising speed.
    """
    if rate_per_hour <= 0.0:
        raise ValueError("rate must be positive")
    records = []
    t = 0.0
    while True:
        t += float(rng.exponential(1.0 / rate_per_hour))
        if t >= horizon_h:
            break
        duration = max(float(rng.exponential(mean_trip_h)), 0.02)
        distance = max(duration * speed_kmh * float(rng.uniform(0.8, 1.2)), 0.05)
        a = int(rng.choice(zones))
        b = int(rng.choice(zones))
        pickup = start + timedelta(hours=t)
        records.append(
            TripRecord(
                pickup_time=pickup,
                dropoff_time=pickup + timedelta(hours=duration),
                pickup_zone=a,
                dropoff_zone=b,
                distance_km=distance,
                fare=fare_flag + fare_per_km * distance,
            )
        )
    return records
