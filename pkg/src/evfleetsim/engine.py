"""Tick-based fleet simulation core.

One tick covers the half-open interval [t*dt, (t+1)*dt). Within a tick the
engine applies, in order: the policy schedule, vehicle movement, charging,
battery aging, request timeouts, recovery/retirement, and new request
releases. Every stochastic draw is consumed in vehicle-id order from a
dedicated generator, so a (config, seed, policy) triple replays exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .battery import (
    BatteryState,
    RateSignal,
    apply_capacity_loss,
    apply_soc_delta,
    capacity_loss_step,
)
from .config import SimConfig
from .demand import Job, JobBoard, JobState
from .grid import (
    Station,
    attach as grid_attach,
    battery_c_rate_for_grid_kw,
    command_power,
    detach as grid_detach,
    grid_kw_for_c_rate,
    total_power_kw,
)
from .traffic import TrafficModel

_EPS = 1e-9


class VehicleState(enum.Enum):
    IDLE = "idle"
    TO_PICKUP = "to_pickup"
    IN_SERVICE = "in_service"
    TO_CHARGER = "to_charger"
    CHARGING = "charging"
    RECOVERY = "recovery"


class ScheduleRejected(Exception):
    """Raised when a schedule fails validation; the world is untouched."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class InvariantViolation(RuntimeError):
    """An internal audit failed. Indicates an engine bug, not bad input."""


@dataclass(frozen=True)
class Serve:
    vehicle_id: int
    job_id: int


@dataclass(frozen=True)
class Charge:
    vehicle_id: int
    station_id: int
    c_rate: float  # battery-side, capacity multiples per hour, >= 0


@dataclass(frozen=True)
class Idle:
    vehicle_id: int


Action = Union[Serve, Charge, Idle]
Schedule = Sequence[Action]


@dataclass
class Leg:
    origin: int
    destination: int
    duration_h: float
    distance_km: float
    elapsed_h: float = 0.0
    covered_km: float = 0.0


@dataclass
class EnergyLedger:
    """Per-vehicle running energy account, battery side, in kWh.

    Invariant: soc == soc_start + charged - driven + recovery_refill
    + capacity_clamp, within float slack. capacity_clamp is the (negative)
    charge written off when a capacity drop undercuts the stored level.
    """

    soc_start_kwh: float
    charged_kwh: float = 0.0
    driven_kwh: float = 0.0
    recovery_refill_kwh: float = 0.0
    capacity_clamp_kwh: float = 0.0

    def expected_soc(self) -> float:
        return (
            self.soc_start_kwh
            + self.charged_kwh
            - self.driven_kwh
            + self.recovery_refill_kwh
            + self.capacity_clamp_kwh
        )


@dataclass
class ChargingSession:
    vehicle_id: int
    station_id: int
    attach_tick: int
    soc_at_attach_kwh: float
    capacity_at_attach_kwh: float
    grid_kwh: float = 0.0
    battery_kwh: float = 0.0
    detach_tick: Optional[int] = None
    # state-of-charge fraction observed at the start of each charging tick
    tick_start_soc_fracs: list[float] = field(default_factory=list)


@dataclass
class Vehicle:
    vehicle_id: int
    battery: BatteryState
    zone: int
    depot_zone: int
    kwh_per_km: float
    max_c_rate: float
    state: VehicleState = VehicleState.IDLE
    leg: Optional[Leg] = None
    job_id: Optional[int] = None
    charge_station_id: Optional[int] = None
    charge_c_rate: float = 0.0
    recovery_until_h: Optional[float] = None
    retired: bool = False
    below_threshold: bool = False
    ledger: EnergyLedger = field(default_factory=lambda: EnergyLedger(0.0))
    session: Optional[ChargingSession] = None
    # total |battery throughput| this tick in capacity multiples per hour;
    # drives the aging step
    tick_c_rate_mag: float = 0.0

    @property
    def soh(self) -> float:
        return self.battery.soh


@dataclass(frozen=True)
class Event:
    tick: int
    kind: str
    data: dict


@dataclass
class TickResult:
    tick: int
    events: list[Event]
    completions: int = 0
    failures: int = 0
    rejections: int = 0
    releases: int = 0
    revenue_delta: float = 0.0
    capacity_loss_kwh: float = 0.0
    total_power_kw: float = 0.0
    # realized capacity drop per vehicle this tick; capacity_loss_kwh is their
    # exactly-summed total so degradation penalties telescope over a run
    capacity_loss_by_vehicle: dict[int, float] = field(default_factory=dict)


# --- read-only views handed to policies -----------------------------------

@dataclass(frozen=True)
class VehicleView:
    vehicle_id: int
    state: VehicleState
    zone: int
    soc_kwh: float
    capacity_kwh: float
    initial_capacity_kwh: float
    max_c_rate: float
    retired: bool
    job_id: Optional[int]
    station_id: Optional[int]

    @property
    def soh(self) -> float:
        if self.initial_capacity_kwh <= 0:
            return 0.0
        return self.capacity_kwh / self.initial_capacity_kwh

    @property
    def soc_fraction(self) -> float:
        if self.capacity_kwh <= 0:
            return 0.0
        return self.soc_kwh / self.capacity_kwh


@dataclass(frozen=True)
class JobView:
    job_id: int
    pickup_zone: int
    dropoff_zone: int
    release_h: float


@dataclass(frozen=True)
class StationView:
    station_id: int
    zone: int
    n_ports: int
    port_kw: float
    station_kw: float
    efficiency: float
    free_ports: int
    queue_length: int
    attached: tuple[tuple[int, float], ...]  # (vehicle_id, commanded c_rate)


@dataclass(frozen=True)
class Snapshot:
    """World state at a tick boundary, before that tick runs.

    Fares are deliberately absent: dispatch decisions key off logistics,
    never prices.
    """

    tick: int
    time_h: float
    dt_h: float
    vehicles: tuple[VehicleView, ...]
    open_jobs: tuple[JobView, ...]
    stations: tuple[StationView, ...]


class Simulation:
    def __init__(
        self,
        config: SimConfig,
        traffic: TrafficModel,
        jobs: Sequence[Job],
        *,
        track_sessions: bool = True,
    ):
        self.config = config
        self.traffic = traffic
        self.board = JobBoard.from_jobs(jobs)
        self.tick_index = 0
        self.track_sessions = track_sessions
        self.sessions: list[ChargingSession] = []
        self.events: list[Event] = []
        self._exhaust_logged = False

        seq = np.random.SeedSequence(config.seed)
        self._leg_rng = np.random.default_rng(seq.spawn(1)[0])

        fleet = config.fleet
        self.vehicles: list[Vehicle] = []
        for i in range(fleet.count):
            depot = fleet.depot_zones[i % len(fleet.depot_zones)]
            battery = BatteryState(
                soc_kwh=fleet.pack_kwh,
                capacity_kwh=fleet.pack_kwh,
                initial_capacity_kwh=fleet.pack_kwh,
                temperature_k=fleet.temperature_k,
            )
            vehicle = Vehicle(
                vehicle_id=i,
                battery=battery,
                zone=depot,
                depot_zone=depot,
                kwh_per_km=fleet.kwh_per_km,
                max_c_rate=fleet.max_c_rate,
            )
            vehicle.ledger = EnergyLedger(soc_start_kwh=battery.soc_kwh)
            self.vehicles.append(vehicle)

        self.stations: list[Station] = [
            Station.build(
                station_id=idx,
                zone=layout.zone,
                n_ports=layout.ports,
                port_kw=layout.port_kw,
                station_kw=layout.station_kw,
                efficiency=layout.efficiency,
            )
            for idx, layout in enumerate(config.stations)
        ]
        self._stations_by_id = {s.station_id: s for s in self.stations}

        # requests already due at t=0 are visible before the first tick
        self._release_jobs(end_time=0.0, result=None)

    # -- public api ----------------------------------------------------------

    @property
    def time_h(self) -> float:
        return self.tick_index * self.config.dt_h

    def vehicle(self, vehicle_id: int) -> Vehicle:
        return self.vehicles[vehicle_id]

    def station(self, station_id: int) -> Station:
        return self._stations_by_id[station_id]

    def snapshot(self) -> Snapshot:
        vehicles = tuple(
            VehicleView(
                vehicle_id=v.vehicle_id,
                state=v.state,
                zone=v.zone,
                soc_kwh=v.battery.soc_kwh,
                capacity_kwh=v.battery.capacity_kwh,
                initial_capacity_kwh=v.battery.initial_capacity_kwh,
                max_c_rate=v.max_c_rate,
                retired=v.retired,
                job_id=v.job_id,
                station_id=v.charge_station_id,
            )
            for v in self.vehicles
        )
        jobs = tuple(
            JobView(
                job_id=j.job_id,
                pickup_zone=j.pickup_zone,
                dropoff_zone=j.dropoff_zone,
                release_h=j.release_h,
            )
            for j in self.board.jobs.values()
            if j.state is JobState.ARRIVED
        )
        stations = []
        for s in self.stations:
            attached = [
                (port.occupant, self.vehicles[port.occupant].charge_c_rate)
                for port in s.ports
                if port.occupant is not None
            ]
            stations.append(
                StationView(
                    station_id=s.station_id,
                    zone=s.zone,
                    n_ports=len(s.ports),
                    port_kw=s.ports[0].max_kw if s.ports else 0.0,
                    station_kw=s.max_kw,
                    efficiency=s.efficiency,
                    free_ports=sum(1 for p in s.ports if p.occupant is None),
                    queue_length=len(s.queue),
                    attached=tuple(attached),
                )
            )
        return Snapshot(
            tick=self.tick_index,
            time_h=self.time_h,
            dt_h=self.config.dt_h,
            vehicles=vehicles,
            open_jobs=jobs,
            stations=tuple(stations),
        )

    def validate_schedule(self, schedule: Schedule) -> list[str]:
        """Return violations; empty means the schedule applies as-is."""
        violations: list[str] = []
        seen_vehicles: set[int] = set()
        seen_jobs: set[int] = set()
        redirected: set[int] = set()  # vehicles given charge/idle this schedule

        for action in schedule:
            if isinstance(action, (Charge, Idle)):
                redirected.add(action.vehicle_id)

        for action in schedule:
            vid = action.vehicle_id
            if vid < 0 or vid >= len(self.vehicles):
                violations.append(f"unknown vehicle {vid}")
                continue
            if vid in seen_vehicles:
                violations.append(f"vehicle {vid} given more than one action")
                continue
            seen_vehicles.add(vid)
            v = self.vehicles[vid]
            if v.retired:
                violations.append(f"vehicle {vid} is retired")
                continue
            if v.state == VehicleState.RECOVERY:
                violations.append(f"vehicle {vid} is in recovery")
                continue

            if isinstance(action, Serve):
                if v.state != VehicleState.IDLE:
                    violations.append(f"vehicle {vid} cannot serve while {v.state.value}")
                    continue
                job = self.board.jobs.get(action.job_id)
                if job is None:
                    violations.append(f"unknown job {action.job_id}")
                    continue
                if action.job_id in seen_jobs:
                    violations.append(f"job {action.job_id} assigned twice")
                    continue
                seen_jobs.add(action.job_id)
                if job.state is JobState.ARRIVED:
                    pass
                elif job.state is JobState.ASSIGNED and job.assigned_vehicle in redirected:
                    pass  # holder is pulled off it within this same schedule
                else:
                    violations.append(
                        f"job {action.job_id} not open for assignment ({job.state.value})"
                    )
            elif isinstance(action, Charge):
                if v.state == VehicleState.IN_SERVICE:
                    violations.append(f"vehicle {vid} is carrying a rider")
                    continue
                if action.station_id not in self._stations_by_id:
                    violations.append(f"unknown station {action.station_id}")
                    continue
                if not 0.0 <= action.c_rate <= v.max_c_rate * (1 + _EPS):
                    violations.append(
                        f"vehicle {vid} charge rate {action.c_rate} outside [0, {v.max_c_rate}]"
                    )
            elif isinstance(action, Idle):
                if v.state == VehicleState.IN_SERVICE:
                    violations.append(f"vehicle {vid} is carrying a rider")
            else:
                violations.append(f"unrecognized action {action!r}")

        violations.extend(self._validate_attached_power(schedule))
        return violations

    def _validate_attached_power(self, schedule: Schedule) -> list[str]:
        """Commanded draw on already-attached vehicles must fit the caps."""
        violations: list[str] = []
        moves: dict[int, Action] = {
            a.vehicle_id: a for a in schedule if isinstance(a, (Charge, Idle))
        }
        for station in self.stations:
            total_kw = 0.0
            for port in station.ports:
                vid = port.occupant
                if vid is None or not (0 <= vid < len(self.vehicles)):
                    continue
                act = moves.get(vid)
                if isinstance(act, Idle):
                    continue  # detaching
                if isinstance(act, Charge) and act.station_id != station.station_id:
                    continue  # moving away
                v = self.vehicles[vid]
                c_rate = act.c_rate if isinstance(act, Charge) else v.charge_c_rate
                kw = grid_kw_for_c_rate(c_rate, v.battery.capacity_kwh, station.efficiency)
                if isinstance(act, Charge) and kw > port.max_kw * (1 + _EPS):
                    violations.append(
                        f"vehicle {vid} commanded {kw:.3f} kW over port limit {port.max_kw} kW"
                    )
                total_kw += min(kw, port.max_kw)
            if total_kw > station.max_kw * (1 + _EPS):
                violations.append(
                    f"station {station.station_id} commanded {total_kw:.3f} kW "
                    f"over limit {station.max_kw} kW"
                )
        return violations

    def tick(self, schedule: Schedule = ()) -> TickResult:
        violations = self.validate_schedule(schedule)
        if violations:
            raise ScheduleRejected(violations)

        result = TickResult(tick=self.tick_index, events=[])
        end_time = (self.tick_index + 1) * self.config.dt_h

        for v in self.vehicles:
            v.tick_c_rate_mag = 0.0

        self._apply_schedule(schedule, result)
        self._move_vehicles(result, end_time)
        self._charge_vehicles(result)
        self._age_batteries(result)
        self._expire_requests(result, end_time)
        self._recover_and_retire(result, end_time)
        self._release_jobs(end_time, result)

        result.total_power_kw = total_power_kw(self.stations)
        if self.config.audit:
            self._audit()
        self.events.extend(result.events)
        self.tick_index += 1
        return result

    def run(self, policy, observers: Sequence = ()) -> None:
        """Drive the simulation to the horizon under ``policy``.

        Each observer is called as observer(snapshot_after_tick, result).
        """
        for _ in range(self.config.horizon_ticks):
            schedule = policy.decide(self.snapshot())
            result = self.tick(schedule)
            if observers:
                after = self.snapshot()
                for observer in observers:
                    observer(after, result)

    # -- schedule application --------------------------------------------------

    def _emit(self, result: TickResult, kind: str, **data) -> None:
        result.events.append(Event(tick=self.tick_index, kind=kind, data=data))

    def _apply_schedule(self, schedule: Schedule, result: TickResult) -> None:
        serves = [a for a in schedule if isinstance(a, Serve)]
        others = [a for a in schedule if not isinstance(a, Serve)]
        # releases (charge/idle on assigned vehicles) run first so a serve
        # may re-dispatch a job freed within this same schedule
        for action in others:
            v = self.vehicles[action.vehicle_id]
            if isinstance(action, Charge):
                self._apply_charge_command(v, action, result)
            else:
                self._apply_idle_command(v, result)
        for action in serves:
            self._apply_serve_command(action, result)

    def _preempt_assignment(self, v: Vehicle, result: TickResult) -> None:
        # rider not yet aboard; hand the request back untouched
        job_id = v.job_id
        self.board.transition(job_id, JobState.ARRIVED, tick=self.tick_index)
        self._emit(result, "job_preempted", job_id=job_id, vehicle_id=v.vehicle_id)
        v.job_id = None
        v.leg = None

    def _leave_charging_infrastructure(self, v: Vehicle, result: TickResult) -> None:
        sid = v.charge_station_id
        if sid is None:
            return
        station = self._stations_by_id[sid]
        if v.state == VehicleState.CHARGING:
            grid_detach(station, v.vehicle_id)
            self._close_session(v, result)
        elif v.vehicle_id in station.queue:
            station.queue.remove(v.vehicle_id)
        v.charge_station_id = None
        v.charge_c_rate = 0.0

    def _close_session(self, v: Vehicle, result: TickResult) -> None:
        if v.session is None:
            return
        v.session.detach_tick = self.tick_index
        self.sessions.append(v.session)
        self._emit(
            result,
            "charge_session_closed",
            vehicle_id=v.vehicle_id,
            station_id=v.session.station_id,
            grid_kwh=v.session.grid_kwh,
            battery_kwh=v.session.battery_kwh,
        )
        v.session = None

    def _apply_charge_command(self, v: Vehicle, action: Charge, result: TickResult) -> None:
        if v.state == VehicleState.TO_PICKUP:
            self._preempt_assignment(v, result)
            v.state = VehicleState.IDLE
        if v.state == VehicleState.CHARGING:
            if v.charge_station_id == action.station_id:
                v.charge_c_rate = action.c_rate  # re-command in place
                return
            self._leave_charging_infrastructure(v, result)
        elif v.state == VehicleState.TO_CHARGER:
            if v.charge_station_id == action.station_id:
                v.charge_c_rate = action.c_rate  # keep traveling/queueing
                return
            self._leave_charging_infrastructure(v, result)

        station = self._stations_by_id[action.station_id]
        v.charge_station_id = action.station_id
        v.charge_c_rate = action.c_rate
        v.state = VehicleState.TO_CHARGER
        v.leg = self._new_leg(v.zone, station.zone)
        self._emit(
            result,
            "charge_dispatched",
            vehicle_id=v.vehicle_id,
            station_id=action.station_id,
            c_rate=action.c_rate,
            soc_kwh=v.battery.soc_kwh,
        )

    def _apply_idle_command(self, v: Vehicle, result: TickResult) -> None:
        if v.state == VehicleState.TO_PICKUP:
            self._preempt_assignment(v, result)
        self._leave_charging_infrastructure(v, result)
        v.state = VehicleState.IDLE
        v.leg = None

    def _apply_serve_command(self, action: Serve, result: TickResult) -> None:
        v = self.vehicles[action.vehicle_id]
        job = self.board.transition(action.job_id, JobState.ASSIGNED, tick=self.tick_index)
        job.assigned_vehicle = v.vehicle_id
        v.job_id = job.job_id
        v.state = VehicleState.TO_PICKUP
        v.leg = self._new_leg(v.zone, job.pickup_zone)
        self._emit(result, "job_assigned", job_id=job.job_id, vehicle_id=v.vehicle_id)

    def _new_leg(self, origin: int, destination: int) -> Leg:
        estimate = self.traffic.sample_leg(origin, destination, self._leg_rng)
        return Leg(
            origin=origin,
            destination=destination,
            duration_h=estimate.duration_h,
            distance_km=estimate.distance_km,
        )

    # -- movement ----------------------------------------------------------------

    def _move_vehicles(self, result: TickResult, end_time: float) -> None:
        dt = self.config.dt_h
        moving = (VehicleState.TO_PICKUP, VehicleState.TO_CHARGER, VehicleState.IN_SERVICE)
        for v in self.vehicles:
            if v.retired or v.state not in moving or v.leg is None:
                continue
            leg = v.leg
            remaining_h = max(leg.duration_h - leg.elapsed_h, 0.0)
            hours = min(dt, remaining_h)
            fraction = 1.0 if leg.duration_h <= 0.0 else hours / leg.duration_h
            step_km = min(leg.distance_km * fraction, leg.distance_km - leg.covered_km)
            step_km = max(step_km, 0.0)
            leg.elapsed_h += dt
            arrived = leg.elapsed_h >= leg.duration_h - _EPS

            needed_kwh = step_km * v.kwh_per_km
            before_soc = v.battery.soc_kwh
            new_state, residual = self._apply_soc(v, -needed_kwh)
            delivered_kwh = before_soc - new_state.soc_kwh
            v.battery = new_state
            v.ledger.driven_kwh += delivered_kwh
            if dt > 0 and v.battery.capacity_kwh > 0:
                v.tick_c_rate_mag += delivered_kwh / (v.battery.capacity_kwh * dt)
            if needed_kwh > 0:
                leg.covered_km += step_km * (delivered_kwh / needed_kwh)
            else:
                leg.covered_km += step_km

            if residual < -_EPS:
                self._fail_en_route(v, result, end_time)
            elif arrived:
                self._arrive(v, result)

    def _apply_soc(self, v: Vehicle, delta_kwh: float) -> tuple[BatteryState, float]:
        dt = self.config.dt_h
        if v.battery.capacity_kwh <= 0:
            # nothing stored, nothing storable: any draw is a full shortfall
            return v.battery, min(delta_kwh, 0.0)
        rate = RateSignal(c_rate=delta_kwh / (v.battery.capacity_kwh * dt), duration_h=dt)
        return apply_soc_delta(v.battery, rate)

    def _fail_en_route(self, v: Vehicle, result: TickResult, end_time: float) -> None:
        if v.job_id is not None:
            job_id = v.job_id
            self.board.transition(job_id, JobState.FAILED, tick=self.tick_index)
            self._emit(result, "job_failed", job_id=job_id, vehicle_id=v.vehicle_id)
            result.failures += 1
            v.job_id = None
        self._leave_charging_infrastructure(v, result)
        v.leg = None
        v.state = VehicleState.RECOVERY
        v.recovery_until_h = end_time + self.config.recovery_h
        self._emit(
            result,
            "vehicle_stranded",
            vehicle_id=v.vehicle_id,
            zone=v.zone,
            until_h=v.recovery_until_h,
        )

    def _arrive(self, v: Vehicle, result: TickResult) -> None:
        leg = v.leg
        v.zone = leg.destination
        v.leg = None
        if v.state == VehicleState.TO_PICKUP:
            job = self.board.transition(v.job_id, JobState.IN_PROGRESS, tick=self.tick_index)
            v.state = VehicleState.IN_SERVICE
            v.leg = Leg(
                origin=job.pickup_zone,
                destination=job.dropoff_zone,
                duration_h=job.service_duration_h,
                distance_km=job.service_distance_km,
            )
            self._emit(result, "job_started", job_id=job.job_id, vehicle_id=v.vehicle_id)
        elif v.state == VehicleState.IN_SERVICE:
            job = self.board.transition(v.job_id, JobState.COMPLETE, tick=self.tick_index)
            result.completions += 1
            result.revenue_delta += job.fare
            self._emit(
                result,
                "job_completed",
                job_id=job.job_id,
                vehicle_id=v.vehicle_id,
                fare=job.fare,
            )
            v.job_id = None
            v.state = VehicleState.IDLE
        elif v.state == VehicleState.TO_CHARGER:
            station = self._stations_by_id[v.charge_station_id]
            port = station.free_port()
            if port is not None and not station.queue:
                self._attach(v, station, port.index, result)
            else:
                station.queue.append(v.vehicle_id)
                self._emit(
                    result,
                    "charge_queued",
                    vehicle_id=v.vehicle_id,
                    station_id=station.station_id,
                )

    def _attach(self, v: Vehicle, station: Station, port_index: int, result: TickResult) -> None:
        grid_attach(station, port_index, v.vehicle_id)
        v.state = VehicleState.CHARGING
        if self.track_sessions:
            v.session = ChargingSession(
                vehicle_id=v.vehicle_id,
                station_id=station.station_id,
                attach_tick=self.tick_index,
                soc_at_attach_kwh=v.battery.soc_kwh,
                capacity_at_attach_kwh=v.battery.capacity_kwh,
            )
        self._emit(
            result,
            "charge_attached",
            vehicle_id=v.vehicle_id,
            station_id=station.station_id,
            port=port_index,
            soc_kwh=v.battery.soc_kwh,
        )

    # -- charging -------------------------------------------------------------------

    def _charge_vehicles(self, result: TickResult) -> None:
        dt = self.config.dt_h
        for station in self.stations:
            for port in station.ports:
                port.power_kw = 0.0
            # waiting vehicles claim freed ports in arrival order
            while station.queue and station.free_port() is not None:
                vid = station.queue.popleft()
                self._attach(self.vehicles[vid], station, station.free_port().index, result)

            allocated = 0.0
            for port in station.ports:
                if port.occupant is None:
                    continue
                v = self.vehicles[port.occupant]
                cap = v.battery.capacity_kwh
                if v.session is not None:
                    v.session.tick_start_soc_fracs.append(v.battery.soc_fraction)
                requested = grid_kw_for_c_rate(v.charge_c_rate, cap, station.efficiency)
                headroom = station.max_kw - allocated
                taper = max(cap - v.battery.soc_kwh, 0.0) / (station.efficiency * dt)
                applied = max(min(requested, port.max_kw, headroom, taper), 0.0)
                if applied <= 0.0:
                    continue
                command_power(station, port.index, applied)
                allocated += applied
                before = v.battery.soc_kwh
                c_rate = battery_c_rate_for_grid_kw(applied, cap, station.efficiency)
                new_state, _residual = self._apply_soc(v, c_rate * cap * dt)
                gained = new_state.soc_kwh - before
                v.battery = new_state
                v.ledger.charged_kwh += gained
                if cap > 0 and dt > 0:
                    v.tick_c_rate_mag += gained / (cap * dt)
                if v.session is not None:
                    v.session.grid_kwh += applied * dt
                    v.session.battery_kwh += gained

    # -- aging --------------------------------------------------------------------------

    def _age_batteries(self, result: TickResult) -> None:
        cfg = self.config.battery
        dt = self.config.dt_h
        for v in self.vehicles:
            if v.retired or v.tick_c_rate_mag <= 0.0 or v.battery.capacity_kwh <= 0.0:
                continue
            raw_loss = capacity_loss_step(
                v.battery,
                RateSignal(c_rate=v.tick_c_rate_mag, duration_h=dt),
                stages=cfg.stages,
                reference_cycles=cfg.reference_cycles,
                headroom_floor=cfg.headroom_floor,
            )
            loss = min(raw_loss, v.battery.capacity_kwh)
            if loss <= 0.0:
                continue
            before_cap = v.battery.capacity_kwh
            before_soc = v.battery.soc_kwh
            v.battery = apply_capacity_loss(v.battery, loss)
            v.ledger.capacity_clamp_kwh += v.battery.soc_kwh - before_soc
            result.capacity_loss_by_vehicle[v.vehicle_id] = before_cap - v.battery.capacity_kwh
            if not v.below_threshold and v.soh < self.config.retirement_soh:
                v.below_threshold = True
                self._emit(
                    result,
                    "soh_below_threshold",
                    vehicle_id=v.vehicle_id,
                    soh=v.soh,
                    capacity_kwh=v.battery.capacity_kwh,
                )
        if result.capacity_loss_by_vehicle:
            result.capacity_loss_kwh = math.fsum(result.capacity_loss_by_vehicle.values())

    # -- lifecycle upkeep -------------------------------------------------------------------

    def _expire_requests(self, result: TickResult, end_time: float) -> None:
        expired = self.board.expire_stale(
            now_h=end_time, timeout_h=self.config.request_timeout_h, tick=self.tick_index
        )
        for job in expired:
            self._emit(result, "job_rejected", job_id=job.job_id)
        result.rejections += len(expired)

    def _recover_and_retire(self, result: TickResult, end_time: float) -> None:
        for v in self.vehicles:
            if v.retired:
                continue
            if (
                v.state == VehicleState.RECOVERY
                and v.recovery_until_h is not None
                and end_time >= v.recovery_until_h - _EPS
            ):
                refill = v.battery.capacity_kwh - v.battery.soc_kwh
                v.battery = BatteryState(
                    soc_kwh=v.battery.capacity_kwh,
                    capacity_kwh=v.battery.capacity_kwh,
                    initial_capacity_kwh=v.battery.initial_capacity_kwh,
                    temperature_k=v.battery.temperature_k,
                )
                v.ledger.recovery_refill_kwh += refill
                v.zone = v.depot_zone
                v.state = VehicleState.IDLE
                v.recovery_until_h = None
                self._emit(result, "vehicle_recovered", vehicle_id=v.vehicle_id, zone=v.zone)

            if (
                self.config.retirement_mode == "retire"
                and v.below_threshold
                and not v.retired
                and v.state not in (VehicleState.IN_SERVICE, VehicleState.RECOVERY)
            ):
                if v.state == VehicleState.TO_PICKUP:
                    self._preempt_assignment(v, result)
                self._leave_charging_infrastructure(v, result)
                v.leg = None
                v.state = VehicleState.IDLE
                v.retired = True
                self._emit(
                    result,
                    "vehicle_retired",
                    vehicle_id=v.vehicle_id,
                    soh=v.soh,
                    zone=v.zone,
                )

    def _release_jobs(self, end_time: float, result: Optional[TickResult]) -> None:
        released = self.board.release_due(end_time, tick=self.tick_index)
        if result is not None:
            result.releases += len(released)
            for job in released:
                self._emit(result, "job_released", job_id=job.job_id)
            if self.board.exhausted() and not self._exhaust_logged:
                self._exhaust_logged = True
                self._emit(result, "demand_exhausted", released_total=self.board.released_count)

    # -- audits ---------------------------------------------------------------------------------

    def _audit(self) -> None:
        for v in self.vehicles:
            expected = v.ledger.expected_soc()
            turnover = (
                v.ledger.charged_kwh
                + v.ledger.driven_kwh
                + v.ledger.recovery_refill_kwh
                + abs(v.ledger.capacity_clamp_kwh)
            )
            scale = max(abs(v.battery.soc_kwh), abs(expected), turnover, 1.0)
            if abs(v.battery.soc_kwh - expected) > 1e-9 * scale:
                raise InvariantViolation(
                    f"vehicle {v.vehicle_id} energy ledger drift: "
                    f"soc={v.battery.soc_kwh!r} expected={expected!r}"
                )
            if v.battery.soc_kwh > v.battery.capacity_kwh * (1 + 1e-9) + 1e-12:
                raise InvariantViolation(f"vehicle {v.vehicle_id} charge exceeds capacity")
        for station in self.stations:
            if station.total_power_kw() > station.max_kw * (1 + 1e-9):
                raise InvariantViolation(
                    f"station {station.station_id} draw {station.total_power_kw()} kW "
                    f"exceeds {station.max_kw} kW"
                )
            for port in station.ports:
                if port.power_kw > port.max_kw * (1 + 1e-9):
                    raise InvariantViolation(
                        f"station {station.station_id} port {port.index} over limit"
                    )
        if not self.board.conservation_holds():
            raise InvariantViolation("job conservation broken")
