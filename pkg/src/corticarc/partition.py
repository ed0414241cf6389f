"""Spatially contiguous mapping of grid columns onto workers.

Workers tile the column grid with px * py rectangles (px horizontal
strips along x, py along y), px * py = worker_count, chosen as the most
square factorization that fits the grid. Strips are split as evenly as
possible, so worker loads differ by at most one row or column strip.
Contiguity keeps stencil traffic between grid-adjacent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .connectivity import GridSpec

__all__ = ["ProcessMap", "map_columns_to_workers"]


def _strip_starts(extent: int, parts: int) -> np.ndarray:
    # near-even integer split: strip k covers [k*extent//parts, (k+1)*extent//parts)
    return (np.arange(parts + 1) * extent) // parts


@dataclass(frozen=True)
class ProcessMap:
    """Column ownership table for a fixed worker count."""

    grid: GridSpec
    worker_count: int
    px: int
    py: int
    x_starts: np.ndarray   # px + 1 strip boundaries along x
    y_starts: np.ndarray   # py + 1 strip boundaries along y

    def owner_of_column(self, col) -> np.ndarray:
        """Worker id owning each column (vectorized)."""
        col = np.asarray(col)
        ix = col % self.grid.nx
        iy = col // self.grid.nx
        wx = np.searchsorted(self.x_starts, ix, side="right") - 1
        wy = np.searchsorted(self.y_starts, iy, side="right") - 1
        return wy * self.px + wx

    def owner_of_gid(self, gid) -> np.ndarray:
        return self.owner_of_column(np.asarray(gid) // self.grid.neurons_per_column)

    def owned_columns(self, worker: int) -> np.ndarray:
        """Columns of one worker, ascending column index."""
        if not (0 <= worker < self.worker_count):
            raise ValueError(f"worker {worker} out of range")
        wx, wy = worker % self.px, worker // self.px
        xs = np.arange(self.x_starts[wx], self.x_starts[wx + 1])
        ys = np.arange(self.y_starts[wy], self.y_starts[wy + 1])
        return np.sort((ys[:, None] * self.grid.nx + xs[None, :]).ravel())

    def owned_gids(self, worker: int) -> np.ndarray:
        """Global neuron ids of one worker, ascending."""
        n = self.grid.neurons_per_column
        cols = self.owned_columns(worker)
        return (cols[:, None] * n + np.arange(n)[None, :]).ravel()

    def local_index_of(self, worker: int, gid) -> np.ndarray:
        """Position of gid within the worker's ascending-gid state arrays."""
        gid = np.asarray(gid)
        n = self.grid.neurons_per_column
        cols = self.owned_columns(worker)
        rank = np.searchsorted(cols, gid // n)
        if __debug__ and gid.size:
            assert np.all(cols[np.minimum(rank, len(cols) - 1)] == gid // n), \
                "gid not owned by worker"
        return rank * n + gid % n

    def block_shape(self, worker: int) -> Tuple[int, int]:
        wx, wy = worker % self.px, worker // self.px
        return (int(self.x_starts[wx + 1] - self.x_starts[wx]),
                int(self.y_starts[wy + 1] - self.y_starts[wy]))


def map_columns_to_workers(grid: GridSpec, worker_count: int) -> ProcessMap:
    """Tile the grid into worker_count contiguous rectangles.

    Picks px * py = worker_count minimizing |px - py| among the
    factorizations whose strip counts fit the grid (px <= nx, py <= ny),
    preferring px >= py on ties. Rejects worker counts that cannot tile.
    """
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    if worker_count > grid.n_columns:
        raise ValueError(
            f"worker_count {worker_count} exceeds {grid.n_columns} columns")
    best = None
    for py in range(1, int(math.isqrt(worker_count)) + 1):
        if worker_count % py:
            continue
        px = worker_count // py
        for cx, cy in ((px, py), (py, px)):
            if cx <= grid.nx and cy <= grid.ny:
                cand = (abs(cx - cy), -cx, cx, cy)   # prefer square, then wide
                if best is None or cand < best:
                    best = cand
    if best is None:
        raise ValueError(
            f"no rectangular {worker_count}-worker tiling fits a "
            f"{grid.nx}x{grid.ny} grid")
    px, py = best[2], best[3]
    return ProcessMap(grid=grid, worker_count=worker_count, px=px, py=py,
                      x_starts=_strip_starts(grid.nx, px),
                      y_starts=_strip_starts(grid.ny, py))
