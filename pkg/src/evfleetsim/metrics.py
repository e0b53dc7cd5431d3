"""Run instrumentation: per-tick series, aggregates, and stable exports.

Exports are byte-reproducible: floats are written with ``repr`` (shortest
round-trip form), JSON keys are sorted, and nothing time- or host-dependent
goes into the files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import Snapshot, TickResult

POWER_BIN_KW = 10.0


@dataclass
class RetirementRecord:
    tick: int
    vehicle_id: int
    soh: float
    removed: bool  # False when the run keeps degraded vehicles in service


@dataclass
class TickRow:
    tick: int
    soh_median: float
    soh_q25: float
    soh_q75: float
    fleet_empty: bool
    revenue_cum: float
    power_kw: float
    capacity_loss_kwh: float
    completions: int
    rejections: int
    failures: int
    releases: int


@dataclass
class MetricsBundle:
    rows: list[TickRow] = field(default_factory=list)
    retirements: list[RetirementRecord] = field(default_factory=list)
    revenue_total: float = 0.0
    completions_total: int = 0
    rejections_total: int = 0
    failures_total: int = 0
    releases_total: int = 0
    capacity_loss_total: float = 0.0
    fleet_empty_ticks: int = 0

    def record(self, snapshot: Snapshot, result: TickResult) -> None:
        """Observer hook: call with the post-tick snapshot and its result."""
        soh_values = [v.soh for v in snapshot.vehicles if not v.retired]
        if soh_values:
            q25, q50, q75 = np.percentile(np.asarray(soh_values), [25.0, 50.0, 75.0])
            empty = False
        else:
            q25 = q50 = q75 = float("nan")
            empty = True
            self.fleet_empty_ticks += 1

        self.revenue_total += result.revenue_delta
        self.completions_total += result.completions
        self.rejections_total += result.rejections
        self.failures_total += result.failures
        self.releases_total += result.releases
        self.capacity_loss_total += result.capacity_loss_kwh

        self.rows.append(
            TickRow(
                tick=result.tick,
                soh_median=float(q50),
                soh_q25=float(q25),
                soh_q75=float(q75),
                fleet_empty=empty,
                revenue_cum=self.revenue_total,
                power_kw=result.total_power_kw,
                capacity_loss_kwh=result.capacity_loss_kwh,
                completions=result.completions,
                rejections=result.rejections,
                failures=result.failures,
                releases=result.releases,
            )
        )

        for event in result.events:
            if event.kind == "soh_below_threshold":
                self.retirements.append(
                    RetirementRecord(
                        tick=event.tick,
                        vehicle_id=event.data["vehicle_id"],
                        soh=event.data["soh"],
                        removed=False,
                    )
                )
            elif event.kind == "vehicle_retired":
                for rec in reversed(self.retirements):
                    if rec.vehicle_id == event.data["vehicle_id"]:
                        rec.removed = True
                        break

    # -- aggregation -------------------------------------------------------

    def power_histogram(self) -> list[tuple[float, float, int]]:
        """(bin_low_kw, bin_high_kw, tick_count) in fixed 10 kW bins."""
        counts: dict[int, int] = {}
        for row in self.rows:
            idx = int(row.power_kw // POWER_BIN_KW)
            counts[idx] = counts.get(idx, 0) + 1
        return [
            (idx * POWER_BIN_KW, (idx + 1) * POWER_BIN_KW, counts[idx])
            for idx in sorted(counts)
        ]

    def summary(self, extra: Optional[dict] = None) -> dict:
        doc = {
            "ticks": len(self.rows),
            "releases": self.releases_total,
            "completions": self.completions_total,
            "rejections": self.rejections_total,
            "failures": self.failures_total,
            "revenue": self.revenue_total,
            "capacity_loss_kwh": self.capacity_loss_total,
            "threshold_crossings": len(self.retirements),
            "vehicles_removed": sum(1 for r in self.retirements if r.removed),
            "fleet_empty_ticks": self.fleet_empty_ticks,
            "final_soh_median": self.rows[-1].soh_median if self.rows else None,
            "peak_power_kw": max((r.power_kw for r in self.rows), default=0.0),
        }
        if extra:
            doc.update(extra)
        return doc

    # -- exports --------------------------------------------------------------

    def write_timeseries_csv(self, path: str) -> None:
        header = (
            "tick,soh_median,soh_q25,soh_q75,fleet_empty,revenue_cum,"
            "power_kw,capacity_loss_kwh,completions,rejections,failures,releases"
        )
        lines = [header]
        for r in self.rows:
            lines.append(
                ",".join(
                    (
                        str(r.tick),
                        repr(r.soh_median),
                        repr(r.soh_q25),
                        repr(r.soh_q75),
                        "1" if r.fleet_empty else "0",
                        repr(r.revenue_cum),
                        repr(r.power_kw),
                        repr(r.capacity_loss_kwh),
                        str(r.completions),
                        str(r.rejections),
                        str(r.failures),
                        str(r.releases),
                    )
                )
            )
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_histogram_csv(self, path: str) -> None:
        lines = ["bin_low_kw,bin_high_kw,ticks"]
        for low, high, count in self.power_histogram():
            lines.append(f"{repr(low)},{repr(high)},{count}")
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_retirements_csv(self, path: str) -> None:
        lines = ["tick,vehicle_id,soh,removed"]
        for rec in self.retirements:
            lines.append(
                f"{rec.tick},{rec.vehicle_id},{repr(rec.soh)},{'1' if rec.removed else '0'}"
            )
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_summary_json(self, path: str, extra: Optional[dict] = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(extra), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
