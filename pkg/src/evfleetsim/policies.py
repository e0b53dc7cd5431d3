"""Dispatch policies, the shared schedule assembler, and the reward signal.

Two policy families ship with the simulator: a threshold rule (charge below
20%, stop above 80%) and a small feed-forward network whose weights travel
in a portable file format so externally trained controllers can drive the
same fleet.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import RewardWeights
from .engine import (
    Action,
    Charge,
    Idle,
    Serve,
    Snapshot,
    TickResult,
    VehicleState,
    VehicleView,
)
from .traffic import TrafficModel, UnknownZoneError

WEIGHTS_MAGIC = b"EVPW"
WEIGHTS_VERSION = 1
ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid", "clip01")


def reward_step(result: TickResult, weights: RewardWeights) -> float:
    """Scalar feedback for one tick.

    completions - degradation_weight * capacity retired (kWh)
    - overpower_weight * fleet draw above the soft cap (kW).
    """
    overpower = max(result.total_power_kw - weights.power_cap_kw, 0.0)
    return (
        float(result.completions)
        - weights.degradation_weight * result.capacity_loss_kwh
        - weights.overpower_weight * overpower
    )


# --- travel helpers ---------------------------------------------------------


def _expected_duration(traffic: TrafficModel, origin: int, destination: int) -> float:
    try:
        return traffic.expected_leg(origin, destination).duration_h
    except UnknownZoneError:
        return math.inf


def nearest_station(snapshot: Snapshot, traffic: TrafficModel, zone: int):
    """Station with the least expected travel time from ``zone``; ties go to
    the lower station id. None when no station is reachable."""
    best = None
    best_key = (math.inf, math.inf)
    for station in snapshot.stations:
        key = (_expected_duration(traffic, zone, station.zone), station.station_id)
        if key < best_key:
            best_key = key
            best = station
    if best is None or math.isinf(best_key[0]):
        return None
    return best


def greedy_assignments(
    snapshot: Snapshot,
    traffic: TrafficModel,
    vehicles: Sequence[VehicleView],
    used_jobs: Optional[set[int]] = None,
) -> list[Serve]:
    """Match idle vehicles to open requests, shortest expected approach
    first; ties break on vehicle id then job id."""
    used_jobs = set() if used_jobs is None else used_jobs
    pairs = []
    for v in vehicles:
        for job in snapshot.open_jobs:
            if job.job_id in used_jobs:
                continue
            eta = _expected_duration(traffic, v.zone, job.pickup_zone)
            if math.isinf(eta):
                continue
            pairs.append((eta, v.vehicle_id, job.job_id))
    pairs.sort()
    taken_vehicles: set[int] = set()
    serves = []
    for _eta, vid, jid in pairs:
        if vid in taken_vehicles or jid in used_jobs:
            continue
        taken_vehicles.add(vid)
        used_jobs.add(jid)
        serves.append(Serve(vehicle_id=vid, job_id=jid))
    return serves


def _fit_attached_rates(snapshot: Snapshot, charges: list[Charge]) -> list[Charge]:
    """Scale charge commands for already-attached vehicles so the per-port
    and per-station limits hold; the engine would throttle anyway, but
    emitted schedules must already be feasible."""
    attached_station = {}
    for station in snapshot.stations:
        for vid, _rate in station.attached:
            attached_station[vid] = station.station_id
    by_station: dict[int, list[int]] = {}
    for idx, action in enumerate(charges):
        sid = attached_station.get(action.vehicle_id)
        if sid is not None and sid == action.station_id:
            by_station.setdefault(sid, []).append(idx)

    views = {s.station_id: s for s in snapshot.stations}
    vehicles = {v.vehicle_id: v for v in snapshot.vehicles}
    for sid, indices in by_station.items():
        station = views[sid]
        headroom = station.station_kw
        indices.sort(key=lambda i: charges[i].vehicle_id)
        for i in indices:
            action = charges[i]
            v = vehicles[action.vehicle_id]
            cap = v.capacity_kwh
            if cap <= 0:
                charges[i] = Charge(action.vehicle_id, sid, 0.0)
                continue
            requested_kw = action.c_rate * cap / station.efficiency
            granted_kw = max(min(requested_kw, station.port_kw, headroom), 0.0)
            headroom -= granted_kw
            fitted = min(granted_kw * station.efficiency / cap, v.max_c_rate)
            charges[i] = Charge(action.vehicle_id, sid, fitted)
    return charges


def assemble_schedule(
    snapshot: Snapshot,
    traffic: TrafficModel,
    charge_flags: Sequence[bool],
    rate_fractions: Sequence[float],
) -> list[Action]:
    """Turn per-vehicle (charge?, rate in [0,1] of the vehicle limit) pairs
    into a valid schedule.

    Vehicles that are serving a rider, recovering, or retired are skipped,
    so the result always passes validation. Vehicles flagged off while
    heading to a request keep driving; flagged off while charging or
    heading to a charger, they stand down. Idle unflagged vehicles are
    matched to open requests.
    """
    if len(charge_flags) != len(snapshot.vehicles) or len(rate_fractions) != len(
        snapshot.vehicles
    ):
        raise ValueError("one decision pair per vehicle is required")

    charges: list[Charge] = []
    idles: list[Idle] = []
    free: list[VehicleView] = []
    for v, flag, fraction in zip(snapshot.vehicles, charge_flags, rate_fractions):
        if v.retired or v.state in (VehicleState.IN_SERVICE, VehicleState.RECOVERY):
            continue
        if flag:
            station = None
            if v.state in (VehicleState.CHARGING, VehicleState.TO_CHARGER):
                station_view = next(
                    (s for s in snapshot.stations if s.station_id == v.station_id), None
                )
                station = station_view
            if station is None:
                station = nearest_station(snapshot, traffic, v.zone)
            if station is None:
                continue  # nowhere to charge from here
            rate = min(max(float(fraction), 0.0), 1.0) * v.max_c_rate
            charges.append(Charge(v.vehicle_id, station.station_id, rate))
        else:
            if v.state in (VehicleState.CHARGING, VehicleState.TO_CHARGER):
                idles.append(Idle(v.vehicle_id))
            elif v.state == VehicleState.IDLE:
                free.append(v)
            # TO_PICKUP and unflagged: continue the mission untouched
    charges = _fit_attached_rates(snapshot, charges)
    serves = greedy_assignments(snapshot, traffic, free)
    return [*charges, *idles, *serves]


# --- threshold policy ---------------------------------------------------------


class ThresholdPolicy:
    """Charge when stored energy falls to ``low`` of current capacity, stop
    once it reaches ``high``; otherwise chase the nearest open request."""

    def __init__(self, traffic: TrafficModel, low: float = 0.2, high: float = 0.8):
        if not 0.0 <= low < high <= 1.0:
            raise ValueError("need 0 <= low < high <= 1")
        self.traffic = traffic
        self.low = low
        self.high = high

    def decide(self, snapshot: Snapshot) -> list[Action]:
        flags = []
        fractions = []
        for v in snapshot.vehicles:
            if v.capacity_kwh <= 0:
                flags.append(False)  # nothing left to store
                fractions.append(0.0)
                continue
            frac = v.soc_fraction
            if v.state in (VehicleState.CHARGING, VehicleState.TO_CHARGER):
                flags.append(frac < self.high)
            elif v.state == VehicleState.IDLE:
                flags.append(frac <= self.low)
            else:
                flags.append(False)  # never abandons a pickup run
            fractions.append(1.0)
        return assemble_schedule(snapshot, self.traffic, flags, fractions)


# --- feed-forward controller ---------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACTIVATION_FNS = {
    "identity": lambda x: x,
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "sigmoid": _sigmoid,
    "clip01": lambda x: np.clip(x, 0.0, 1.0),
}


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in _ACTIVATION_FNS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be 2-d and bias 1-d")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("bias length must match output rows")


class PolicyNetwork:
    """Plain fully-connected float64 network.

    Observation layout is interleaved per vehicle: (health fraction, stored
    energy fraction) pairs, 2n inputs. The output is likewise interleaved:
    (charge decision in [0,1], rate fraction in [0,1]) pairs, 2n outputs.
    """

    def __init__(self, n_vehicles: int, layers: Sequence[Layer]):
        if n_vehicles <= 0:
            raise ValueError("n_vehicles must be positive")
        layers = tuple(layers)
        if not layers:
            raise ValueError("at least one layer is required")
        if layers[0].weights.shape[1] != 2 * n_vehicles:
            raise ValueError("first layer must accept 2 inputs per vehicle")
        if layers[-1].weights.shape[0] != 2 * n_vehicles:
            raise ValueError("last layer must emit 2 outputs per vehicle")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise ValueError("layer shapes do not chain")
        self.n_vehicles = n_vehicles
        self.layers = layers

    @classmethod
    def build(
        cls,
        n_vehicles: int,
        hidden: Sequence[int] = (64, 64),
        rng: Optional[np.random.Generator] = None,
    ) -> "PolicyNetwork":
        """Fresh network: tanh hidden layers, sigmoid output. Zero weights
        unless an rng is given (then scaled-normal init)."""
        sizes = [2 * n_vehicles, *hidden, 2 * n_vehicles]
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            if rng is None:
                w = np.zeros((n_out, n_in))
            else:
                w = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_out, n_in))
            b = np.zeros(n_out)
            act = "sigmoid" if i == len(sizes) - 2 else "tanh"
            layers.append(Layer(weights=w, bias=b, activation=act))
        return cls(n_vehicles, layers)

    def forward(self, observation: np.ndarray) -> np.ndarray:
        x = np.asarray(observation, dtype=np.float64)
        if x.shape != (2 * self.n_vehicles,):
            raise ValueError(
                f"observation must have shape ({2 * self.n_vehicles},), got {x.shape}"
            )
        for layer in self.layers:
            x = _ACTIVATION_FNS[layer.activation](layer.weights @ x + layer.bias)
        return x


def observation_vector(snapshot: Snapshot) -> np.ndarray:
    """Interleaved (health, stored-energy) fractions, one pair per vehicle."""
    obs = np.empty(2 * len(snapshot.vehicles))
    for i, v in enumerate(snapshot.vehicles):
        obs[2 * i] = v.soh
        obs[2 * i + 1] = v.soc_fraction
    return obs


class NeuralPolicy:
    """Drives the fleet with a PolicyNetwork: decision >= 0.5 sends the
    vehicle to charge at the emitted fraction of its rate limit."""

    def __init__(self, network: PolicyNetwork, traffic: TrafficModel):
        self.network = network
        self.traffic = traffic

    def decide(self, snapshot: Snapshot) -> list[Action]:
        if len(snapshot.vehicles) != self.network.n_vehicles:
            raise ValueError(
                f"network sized for {self.network.n_vehicles} vehicles, "
                f"snapshot has {len(snapshot.vehicles)}"
            )
        out = self.network.forward(observation_vector(snapshot))
        flags = [bool(out[2 * i] >= 0.5) for i in range(self.network.n_vehicles)]
        fractions = [float(out[2 * i + 1]) for i in range(self.network.n_vehicles)]
        return assemble_schedule(snapshot, self.traffic, flags, fractions)


# --- weight files -----------------------------------------------------------------


def save_weights(network: PolicyNetwork, path: str, fmt: str = "binary") -> None:
    if fmt == "binary":
        _save_weights_binary(network, path)
    elif fmt == "json":
        _save_weights_json(network, path)
    else:
        raise ValueError(f"fmt must be 'binary' or 'json', got {fmt!r}")


def _save_weights_binary(network: PolicyNetwork, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<III", WEIGHTS_VERSION, network.n_vehicles, len(network.layers)))
        for layer in network.layers:
            rows, cols = layer.weights.shape
            name = layer.activation.encode()
            fh.write(struct.pack("<III", rows, cols, len(name)))
            fh.write(name)
            fh.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def _save_weights_json(network: PolicyNetwork, path: str) -> None:
    doc = {
        "format": "evpw",
        "version": WEIGHTS_VERSION,
        "n_vehicles": network.n_vehicles,
        "layers": [
            {
                "activation": layer.activation,
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in network.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


class WeightFormatError(ValueError):
    pass


def load_weights(path: str) -> PolicyNetwork:
    """Read a controller from disk; the two on-disk formats are told apart
    by the leading magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == WEIGHTS_MAGIC:
            return _load_weights_binary(fh)
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except (ValueError, UnicodeDecodeError) as err:
            raise WeightFormatError(f"{path!r} is neither binary nor JSON weights") from err
    return _network_from_dict(doc)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise WeightFormatError("weight file truncated")
    return data


def _load_weights_binary(fh) -> PolicyNetwork:
    version, n_vehicles, n_layers = struct.unpack("<III", _read_exact(fh, 12))
    if version != WEIGHTS_VERSION:
        raise WeightFormatError(f"unsupported weight file version {version}")
    layers = []
    for _ in range(n_layers):
        rows, cols, name_len = struct.unpack("<III", _read_exact(fh, 12))
        activation = _read_exact(fh, name_len).decode()
        w = np.frombuffer(_read_exact(fh, 8 * rows * cols), dtype="<f8").reshape(rows, cols)
        b = np.frombuffer(_read_exact(fh, 8 * rows), dtype="<f8")
        layers.append(Layer(weights=w.copy(), bias=b.copy(), activation=activation))
    trailing = fh.read(1)
    if trailing:
        raise WeightFormatError("trailing bytes after weight payload")
    return PolicyNetwork(n_vehicles, layers)


def _network_from_dict(doc: dict) -> PolicyNetwork:
    if not isinstance(doc, dict) or doc.get("format") != "evpw":
        raise WeightFormatError("missing 'evpw' format marker")
    if doc.get("version") != WEIGHTS_VERSION:
        raise WeightFormatError(f"unsupported weight file version {doc.get('version')!r}")
    layers = [
        Layer(
            weights=np.asarray(entry["weights"], dtype=np.float64),
            bias=np.asarray(entry["bias"], dtype=np.float64),
            activation=entry["activation"],
        )
        for entry in doc["layers"]
    ]
    return PolicyNetwork(int(doc["n_vehicles"]), layers)
