"""Figure rendering for run and bench reports.

Every function takes data plus an output path and writes one PNG; no
figure state leaks between calls.  Rendering uses the Agg backend so
reports build on headless machines.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .connectivity import GridSpec, KernelSpec, compute_stencil, stencil_count_matrix
from .metrics import RateStats, ScalingRow

__all__ = [
    "raster_figure",
    "rate_figure",
    "scaling_figure",
    "stencil_figure",
]


def raster_figure(gids: np.ndarray, times_ms: np.ndarray, grid: GridSpec,
                  path: str, max_points: int = 200_000) -> None:
    """Spike raster, excitatory and inhibitory populations color-split."""
    fig, ax = plt.subplots(figsize=(9, 5))
    if len(gids):
        idx = np.arange(len(gids))
        if len(idx) > max_points:   # thin huge rasters, keep both ends visible
            idx = np.linspace(0, len(idx) - 1, max_points).astype(np.int64)
        g = np.asarray(gids)[idx]
        t = np.asarray(times_ms)[idx]
        exc = grid.is_excitatory(g.astype(np.int64))
        ax.plot(t[exc], g[exc], ",", color="tab:blue", label="excitatory")
        ax.plot(t[~exc], g[~exc], ",", color="tab:red", label="inhibitory")
        ax.legend(loc="upper right", markerscale=20)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("neuron gid")
    ax.set_title(f"spike raster, {grid.nx}x{grid.ny} grid")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def rate_figure(stats: RateStats, path: str) -> None:
    """Network firing rate over time with the run mean marked."""
    fig, ax = plt.subplots(figsize=(9, 3.5))
    if len(stats.bin_centers_ms):
        ax.plot(stats.bin_centers_ms, stats.rate_series_hz, lw=0.8,
                color="tab:blue")
        ax.axhline(stats.network_hz, color="tab:gray", ls="--", lw=0.8,
                   label=f"mean {stats.network_hz:.2f} Hz")
        ax.legend(loc="upper right")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("network rate (Hz)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def scaling_figure(rows: Sequence[ScalingRow], path: str) -> None:
    """Wall time and speedup against worker count."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    workers = [r.workers for r in rows]
    ax1.plot(workers, [r.wall_seconds for r in rows], "o-",
             color="tab:blue")
    ax1.set_xlabel("workers")
    ax1.set_ylabel("simulation wall time (s)")
    ax1.set_xscale("log", base=2)
    ax1.set_yscale("log")
    have = [(w, r.speedup) for w, r in zip(workers, rows)
            if r.speedup is not None]
    if have:
        ws, sp = zip(*have)
        ax2.plot(ws, sp, "o-", color="tab:green", label="measured")
        ax2.plot(ws, np.asarray(ws) / ws[0], "--", color="tab:gray",
                 label="ideal")
        ax2.legend()
    ax2.set_xlabel("workers")
    ax2.set_ylabel("speedup")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def stencil_figure(kernel: KernelSpec, grid: GridSpec, path: str) -> None:
    """Heat map of expected per-column synapse counts (thousands)."""
    m = stencil_count_matrix(kernel, grid) / 1000.0
    r = compute_stencil(kernel, grid).radius
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(m, origin="lower", cmap="viridis",
                   extent=(-r - .5, r + .5, -r - .5, r + .5))
    fig.colorbar(im, ax=ax, label="expected synapses (thousands)")
    ax.set_xlabel("column offset di")
    ax.set_ylabel("column offset dj")
    side = 2 * r + 1
    ax.set_title(f"{kernel.kind} stencil, {side}x{side}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
