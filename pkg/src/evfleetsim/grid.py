"""Charging stations: ports, power caps, queueing, and grid accounting.

Power is tracked on the grid side of the charger. A commanded battery-side
C-rate maps to grid draw through the conversion efficiency: the battery
receives ``efficiency * grid_kw``. Two hard limits apply, per port and per
station; anything softer (time-varying grid stress) is the policy layer's
concern.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

# Relative slack for cap comparisons so a rate computed *from* a cap is not
# rejected for one bit of float noise.
_CAP_SLACK = 1e-9


class GridError(RuntimeError):
    pass


class CapacityExceeded(GridError):
    """A power command that would break a hard cap; names which one."""

    def __init__(self, limit: str, requested_kw: float, cap_kw: float):
        self.limit = limit
        super().__init__(
            f"{limit} cap exceeded: requested {requested_kw:.6f} kW > {cap_kw:.6f} kW"
        )


@dataclass
class ChargePort:
    index: int
    max_kw: float
    occupant: Optional[int] = None  # vehicle id
    power_kw: float = 0.0           # grid-side draw this tick


@dataclass
class Station:
    station_id: int
    zone: int
    max_kw: float
    efficiency: float  # grid -> battery conversion, in (0, 1]
    ports: list[ChargePort]
    queue: deque = field(default_factory=deque)  # vehicle ids waiting, FIFO

    def __post_init__(self) -> None:
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError(f"efficiency must be in (0, 1], got {self.efficiency!r}")

    @classmethod
    def build(cls, station_id: int, zone: int, n_ports: int, port_kw: float,
              station_kw: float, efficiency: float) -> "Station":
        return cls(
            station_id=station_id,
            zone=zone,
            max_kw=station_kw,
            efficiency=efficiency,
            ports=[ChargePort(index=i, max_kw=port_kw) for i in range(n_ports)],
        )

    def total_power_kw(self) -> float:
        return sum(p.power_kw for p in self.ports)

    def free_port(self) -> Optional[ChargePort]:
        """Lowest-indexed unoccupied port, or None when full."""
        for port in self.ports:
            if port.occupant is None:
                return port
        return None

    def port_of(self, vehicle_id: int) -> Optional[ChargePort]:
        for port in self.ports:
            if port.occupant == vehicle_id:
                return port
        return None

    def headroom_kw(self) -> float:
        return self.max_kw - self.total_power_kw()


def attach(station: Station, port_index: int, vehicle_id: int) -> ChargePort:
    """Seat a vehicle on a port. Occupied ports and double-seating are errors."""
    port = station.ports[port_index]
    if port.occupant is not None:
        raise GridError(
            f"port {port_index} at station {station.station_id} already holds "
            f"vehicle {port.occupant}"
        )
    if station.port_of(vehicle_id) is not None:
        raise GridError(
            f"vehicle {vehicle_id} already attached at station {station.station_id}"
        )
    port.occupant = vehicle_id
    port.power_kw = 0.0
    return port


def detach(station: Station, vehicle_id: int) -> ChargePort:
    port = station.port_of(vehicle_id)
    if port is None:
        raise GridError(
            f"vehicle {vehicle_id} is not attached at station {station.station_id}"
        )
    port.occupant = None
    port.power_kw = 0.0
    return port


def command_power(station: Station, port_index: int, grid_kw: float) -> None:
    """Set one port's grid draw, enforcing both hard caps atomically.

    Raises ``CapacityExceeded`` naming the violated limit; on error nothing
    changes.
    """
    port = station.ports[port_index]
    if port.occupant is None:
        raise GridError(f"port {port_index} is vacant; cannot draw power")
    if grid_kw < 0.0:
        raise GridError(f"power must be non-negative, got {grid_kw!r}")
    if grid_kw > port.max_kw * (1.0 + _CAP_SLACK):
        raise CapacityExceeded("port", grid_kw, port.max_kw)
    others = station.total_power_kw() - port.power_kw
    if others + grid_kw > station.max_kw * (1.0 + _CAP_SLACK):
        raise CapacityExceeded("station", others + grid_kw, station.max_kw)
    port.power_kw = min(grid_kw, port.max_kw)


def total_power_kw(stations: list[Station]) -> float:
    """Fleet-wide grid draw this tick (kW, grid side)."""
    return sum(s.total_power_kw() for s in stations)


def grid_kw_for_c_rate(c_rate: float, capacity_kwh: float, efficiency: float) -> float:
    """Grid draw needed so the battery sees ``c_rate`` (capacity multiples/h)."""
    return c_rate * capacity_kwh / efficiency


def battery_c_rate_for_grid_kw(grid_kw: float, capacity_kwh: float, efficiency: float) -> float:
    """Battery-side C-rate produced by a given grid draw."""
    if capacity_kwh <= 0.0:
        return 0.0
    return efficiency * grid_kw / capacity_kwh
