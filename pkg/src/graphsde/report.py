"""CSV result emission and report figures.

CSV is the machine-readable contract: densities use the shared per-edge bin
schema ``edge_id,bin_index,x_left,x_right,density`` with 17-significant-digit
decimal text so values round-trip losslessly.  Figures are rendered next to
the CSVs as PNGs for human inspection; they carry no information the CSVs do
not.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .analysis import (
    CrossingBoundReport,
    ExitProbabilityReport,
    Histogram,
)
from .engine import BounceStats
from .fvm import FvmState
from .grids import EdgeGrid

DENSITY_HEADER = ["edge_id", "bin_index", "x_left", "x_right", "density"]


class IoError(OSError):
    pass


def format_value(x: float) -> str:
    """17 significant digits: enough to reproduce any double exactly."""
    return format(float(x), ".17g")


def _density_of(obj, grid: EdgeGrid | None):
    if isinstance(obj, Histogram):
        return obj.grid, obj.density()
    if isinstance(obj, FvmState):
        return obj.grid, obj.rho
    if grid is None:
        raise IoError("raw density arrays need an explicit grid")
    return grid, np.asarray(obj, dtype=np.float64)


def write_density_csv(path, obj, grid: EdgeGrid | None = None) -> Path:
    """Emit a histogram, FVM state, or raw density array as density CSV."""
    grid, density = _density_of(obj, grid)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DENSITY_HEADER)
        for e in range(grid.n_edges):
            w = float(grid.dx[e])
            sl = grid.edge_slice(e)
            for i, rho in enumerate(density[sl]):
                writer.writerow(
                    [e, i, format_value(i * w), format_value((i + 1) * w), format_value(rho)]
                )
    return path


def read_density_csv(path):
    """Read a density CSV back into (edge_id, bin_index, x_left, x_right, density) arrays."""
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != DENSITY_HEADER:
            raise IoError(f"unexpected density header {header!r}")
        for row in reader:
            rows.append(
                (int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4]))
            )
    if not rows:
        return (
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
            np.zeros(0),
            np.zeros(0),
        )
    cols = list(zip(*rows))
    return (
        np.asarray(cols[0], dtype=np.int64),
        np.asarray(cols[1], dtype=np.int64),
        np.asarray(cols[2]),
        np.asarray(cols[3]),
        np.asarray(cols[4]),
    )


def write_bounces_csv(path, stats: BounceStats) -> Path:
    """M-histogram rows ``m,count`` over vertex-touching steps."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "count"])
        for m, count in enumerate(stats.m_histogram):
            if m == 0:
                continue
            writer.writerow([m, int(count)])
    return path


def write_summary_csv(path, entries: dict) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in entries.items():
            if isinstance(value, float):
                value = format_value(value)
            writer.writerow([key, value])
    return path


def write_error_table_csv(path, rows: list[dict]) -> Path:
    """Rows with keys method, dt, cells_per_edge, l2_error."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "dt", "cells_per_edge", "l2_error"])
        for row in rows:
            writer.writerow(
                [
                    row["method"],
                    format_value(row["dt"]),
                    row["cells_per_edge"],
                    format_value(row["l2_error"]),
                ]
            )
    return path


def write_exit_prob_csv(path, report: ExitProbabilityReport) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dt", "slot", "frequency", "expected", "binomial_se", "max_deviation"])
        for row in report.rows:
            for slot in range(len(row.frequencies)):
                writer.writerow(
                    [
                        format_value(row.dt),
                        slot,
                        format_value(row.frequencies[slot]),
                        format_value(row.expected[slot]),
                        format_value(row.binomial_se[slot]),
                        format_value(row.max_deviation),
                    ]
                )
    return path


def write_bound_check_csv(path, report: CrossingBoundReport) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["k", "empirical_cdf", "bound", "chi2_tail", "std_error", "bound_violated"]
        )
        for row in report.rows:
            writer.writerow(
                [
                    row.k,
                    format_value(row.empirical),
                    format_value(row.bound),
                    format_value(row.chi2_tail),
                    format_value(row.std_error),
                    int(row.bound_violated),
                ]
            )
    return path


def _plot_density_axes(ax, grid: EdgeGrid, series, e: int, oracle=None):
    for label, density, style in series:
        sl = grid.edge_slice(e)
        ax.plot(grid.centers(e), density[sl], style, label=label, linewidth=1.0)
    if oracle is not None:
        xs = np.linspace(0.0, float(grid.lengths[e]), 200)
        ax.plot(xs, oracle.density(e, xs), "k--", label="analytic", linewidth=1.0)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title(f"edge {e}")


def save_density_figure(path, grid: EdgeGrid, series, oracle=None) -> Path:
    """Per-edge density panels.  ``series`` is a list of (label, flat density,
    matplotlib style) triples sharing ``grid``."""
    n = grid.n_edges
    ncols = min(n, 3)
    nrows = math.ceil(n / ncols)
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(4.2 * ncols, 3.2 * nrows), squeeze=False
    )
    for e in range(n):
        _plot_density_axes(axes[e // ncols][e % ncols], grid, series, e, oracle)
    for idx in range(n, nrows * ncols):
        axes[idx // ncols][idx % ncols].axis("off")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def save_exit_prob_figure(path, report: ExitProbabilityReport) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    dts = [row.dt for row in report.rows]
    for slot in range(len(report.rows[0].frequencies)):
        ax1.plot(dts, [row.frequencies[slot] for row in report.rows], "o-", label=f"slot {slot}")
    ax1.axhline(report.rows[0].expected[0], color="k", linestyle="--", linewidth=0.8)
    ax1.set_xscale("log")
    ax1.set_xlabel("dt")
    ax1.set_ylabel("exit frequency")
    ax1.legend(fontsize=7)
    ax2.plot(dts, report.max_deviations, "s-")
    ax2.set_xscale("log")
    ax2.set_yscale("log")
    ax2.set_xlabel("dt")
    ax2.set_ylabel("max |freq - b|")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def save_bounce_figure(path, stats: BounceStats, report: CrossingBoundReport | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ms = np.nonzero(stats.m_histogram)[0]
    ax.bar(ms, stats.m_histogram[ms], width=0.8, label="steps with M crossings")
    ax.set_xlabel("vertex crossings per step M")
    ax.set_ylabel("count")
    ax.set_yscale("log")
    title = f"gamma = {stats.gamma:.4g}"
    if report is not None:
        title += f", bound violations: {int(report.any_bound_violation)}"
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)
