"""Multi-stage thermal cycle-aging model for lithium-ion traction packs.

Pure functions over immutable value types. Capacity fade is evaluated one
tick at a time from the pack's state of charge, its state of health, the
applied C-rate, and the cell temperature. The fade law is piecewise: three
parameter stages keyed on state of health, with the boundary belonging to
the more degraded stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

# Reference cycle count at nominal conditions (cycles).
REFERENCE_CYCLE_COUNT = 513.0
# Reference cell temperature (Kelvin), 25 degrees C.
REFERENCE_TEMP_K = 298.15
# Lower clamp on (1 - soc/capacity); keeps the fade factor finite at full charge.
SOC_HEADROOM_FLOOR = 1e-3

_REL_SLACK = 1e-9


@dataclass(frozen=True)
class AgingStage:
    """One stage of the piecewise aging law.

    ``soh_low``/``soh_high`` bound the state-of-health interval the stage
    covers; ``soh_low`` itself belongs to this stage, ``soh_high`` to the
    healthier neighbour (the most-degraded stage also owns its upper bound's
    complement at 0).
    """

    index: int
    soh_low: float
    soh_high: float
    alpha: float   # exponent parameter on state-of-charge headroom
    beta: float    # exponent parameter on C-rate
    psi: float     # Arrhenius-style temperature coefficient (Kelvin)


# Fitted stage parameters. Stage 1 covers the healthiest band, stage 3 the
# tail down to zero health.
DEFAULT_STAGES: tuple[AgingStage, ...] = (
    AgingStage(1, 0.933, 1.000, alpha=0.2171, beta=24.2535, psi=-12.0051),
    AgingStage(2, 0.866, 0.933, alpha=0.2652, beta=9.9653, psi=-29.0049),
    AgingStage(3, 0.000, 0.866, alpha=0.2611, beta=-15.1963, psi=-22.5247),
)


@dataclass(frozen=True)
class BatteryState:
    """Pack state: charge held, usable capacity, nameplate capacity, cell temp.

    Invariants: ``0 <= soc_kwh <= capacity_kwh <= initial_capacity_kwh`` and
    ``initial_capacity_kwh > 0``. Violations raise ``ValueError`` at
    construction.
    """

    soc_kwh: float
    capacity_kwh: float
    initial_capacity_kwh: float
    temperature_k: float = REFERENCE_TEMP_K

    def __post_init__(self) -> None:
        if not self.initial_capacity_kwh > 0.0:
            raise ValueError(
                f"initial capacity must be positive, got {self.initial_capacity_kwh!r}"
            )
        slack = _REL_SLACK * self.initial_capacity_kwh
        if self.capacity_kwh < -slack or self.capacity_kwh > self.initial_capacity_kwh + slack:
            raise ValueError(
                f"capacity {self.capacity_kwh!r} outside [0, {self.initial_capacity_kwh!r}]"
            )
        if self.soc_kwh < -slack or self.soc_kwh > self.capacity_kwh + slack:
            raise ValueError(
                f"soc {self.soc_kwh!r} outside [0, capacity={self.capacity_kwh!r}]"
            )
        if not self.temperature_k > 0.0:
            raise ValueError(f"temperature must be positive Kelvin, got {self.temperature_k!r}")

    @property
    def soh(self) -> float:
        """State of health: usable capacity as a fraction of nameplate."""
        return self.capacity_kwh / self.initial_capacity_kwh

    @property
    def soc_fraction(self) -> float:
        """State of charge as a fraction of current usable capacity."""
        if self.capacity_kwh <= 0.0:
            return 0.0
        return self.soc_kwh / self.capacity_kwh


@dataclass(frozen=True)
class RateSignal:
    """A constant C-rate applied for a duration.

    ``c_rate`` is signed (positive charges, negative discharges) in units of
    capacity multiples per hour; ``duration_h`` is the tick length in hours
    and must be positive.
    """

    c_rate: float
    duration_h: float

    def __post_init__(self) -> None:
        if not self.duration_h > 0.0:
            raise ValueError(f"duration must be positive, got {self.duration_h!r}")
        if not math.isfinite(self.c_rate):
            raise ValueError(f"c_rate must be finite, got {self.c_rate!r}")


def stage_for_soh(soh: float, stages: tuple[AgingStage, ...] = DEFAULT_STAGES) -> AgingStage:
    """Return the aging stage covering a state of health in [0, 1].

    A value sitting exactly on a stage boundary belongs to the more degraded
    stage (e.g. the stage-1/stage-2 boundary resolves to stage 2).
    """
    if not 0.0 <= soh <= 1.0:
        raise ValueError(f"state of health {soh!r} outside [0, 1]")
    for stage in sorted(stages, key=lambda s: s.soh_high, reverse=True):
        if soh > stage.soh_low or stage.soh_low == 0.0:
            return stage
    raise ValueError(f"no stage covers state of health {soh!r}")  # pragma: no cover


def capacity_loss_step(
    state: BatteryState,
    rate: RateSignal,
    *,
    stages: tuple[AgingStage, ...] = DEFAULT_STAGES,
    reference_cycles: float = REFERENCE_CYCLE_COUNT,
    headroom_floor: float = SOC_HEADROOM_FLOOR,
) -> float:
    """Capacity fade (kWh) caused by one tick of cycling.

    Evaluates the staged fade law at the pack's current state. The law's
    dimensionless output is a fraction of nameplate capacity; the return
    value is that fraction times ``initial_capacity_kwh``. Charging and
    discharging age symmetrically (the magnitude of ``c_rate`` is used).
    An idle tick (``c_rate == 0``) costs exactly nothing.

    Parameters
    ----------
    state : BatteryState
        Pack state during the tick.
    rate : RateSignal
        Applied C-rate and tick duration.
    stages, reference_cycles, headroom_floor
        Model constants; defaults are the fitted values.

    Returns
    -------
    float
        Non-negative capacity fade in kWh.
    """
    c_mag = abs(rate.c_rate)
    if c_mag == 0.0:
        return 0.0
    if state.capacity_kwh <= 0.0:
        return 0.0  # nothing left to fade
    stage = stage_for_soh(state.soh, stages)
    headroom = 1.0 - state.soc_fraction
    headroom = min(max(headroom, headroom_floor), 1.0)
    soc_factor = headroom ** (-1.0 / stage.alpha)
    rate_factor = (2.0 * c_mag / rate.duration_h) ** (-1.0 / stage.beta)
    temp_factor = math.exp(
        -stage.psi * (1.0 / state.temperature_k - 1.0 / REFERENCE_TEMP_K)
    )
    fraction = soc_factor * rate_factor * temp_factor / reference_cycles
    return fraction * state.initial_capacity_kwh


def apply_soc_delta(state: BatteryState, rate: RateSignal) -> tuple[BatteryState, float]:
    """Move charge in or out of the pack for one tick.

    The energy moved is ``c_rate * capacity_kwh * duration_h``; the resulting
    state of charge is clamped to ``[0, capacity_kwh]``.

    Returns
    -------
    (BatteryState, float)
        The updated state and the signed clamp residual in kWh: positive
        when the command overflowed a full pack, negative when it drew past
        empty, zero when the command fit.
    """
    delta = rate.c_rate * state.capacity_kwh * rate.duration_h
    raw = state.soc_kwh + delta
    clamped = min(max(raw, 0.0), state.capacity_kwh)
    return replace(state, soc_kwh=clamped), raw - clamped


def apply_capacity_loss(state: BatteryState, loss_kwh: float) -> BatteryState:
    """Retire ``loss_kwh`` of usable capacity.

    The stored charge is re-clamped so it never exceeds the shrunk capacity.
    Raises ``ValueError`` for a negative loss or one larger than the usable
    capacity remaining.
    """
    if loss_kwh < 0.0:
        raise ValueError(f"capacity loss must be non-negative, got {loss_kwh!r}")
    if loss_kwh > state.capacity_kwh * (1.0 + _REL_SLACK):
        raise ValueError(
            f"capacity loss {loss_kwh!r} exceeds remaining capacity {state.capacity_kwh!r}"
        )
    new_capacity = max(state.capacity_kwh - loss_kwh, 0.0)
    return replace(
        state,
        capacity_kwh=new_capacity,
        soc_kwh=min(state.soc_kwh, new_capacity),
    )
