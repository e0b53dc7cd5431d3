"""Overview figures rendered from an exported run directory."""

from __future__ import annotations

import csv
import math
import os


def read_timeseries(path: str) -> dict[str, list[float]]:
    columns: dict[str, list[float]] = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            for key, value in row.items():
                columns.setdefault(key, []).append(float(value))
    return columns


def read_histogram(path: str) -> list[tuple[float, float, int]]:
    bins = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            bins.append((float(row["bin_low_kw"]), float(row["bin_high_kw"]), int(row["ticks"])))
    return bins


def render_overview(run_dir: str, out_path: str | None = None) -> str:
    """Draw the four-panel run overview PNG; returns the written path."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = read_timeseries(os.path.join(run_dir, "timeseries.csv"))
    bins = read_histogram(os.path.join(run_dir, "power_histogram.csv"))
    if out_path is None:
        out_path = os.path.join(run_dir, "overview.png")

    ticks = series["tick"]
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))

    ax = axes[0][0]
    ax.plot(ticks, series["soh_median"], color="tab:blue", lw=1.2, label="median")
    ax.fill_between(
        ticks, series["soh_q25"], series["soh_q75"],
        color="tab:blue", alpha=0.25, linewidth=0, label="interquartile",
    )
    ax.set_title("Fleet state of health")
    ax.set_xlabel("tick")
    ax.set_ylabel("capacity fraction")
    ax.legend(loc="best", fontsize=8)

    ax = axes[0][1]
    ax.plot(ticks, series["power_kw"], color="tab:red", lw=0.8)
    ax.set_title("Grid draw")
    ax.set_xlabel("tick")
    ax.set_ylabel("kW")

    ax = axes[1][0]
    if bins:
        ax.bar(
            [low for low, _, _ in bins],
            [count for _, _, count in bins],
            width=[high - low for low, high, _ in bins],
            align="edge", color="tab:gray",
        )
    ax.set_title("Draw distribution")
    ax.set_xlabel("kW")
    ax.set_ylabel("ticks")

    ax = axes[1][1]
    ax.plot(ticks, series["revenue_cum"], color="tab:green", lw=1.2)
    ax.set_title("Cumulative revenue")
    ax.set_xlabel("tick")
    ax.set_ylabel("fare units")
    served = _cumsum(series.get("completions", []))
    if served:
        twin = ax.twinx()
        twin.plot(ticks, served, color="tab:olive", lw=0.9, ls="--")
        twin.set_ylabel("rides served")

    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def _cumsum(values: list[float]) -> list[float]:
    total, out = 0.0, []
    for value in values:
        if not math.isnan(value):
            total += value
        out.append(total)
    return out
