"""Grid geometry, distance-decay kernels, and deterministic synapse generation.

Neurons live in columns arranged on a 2D grid with spacing alpha (um).
Within a column every ordered pair connects with probability local_p;
across columns only excitatory neurons project, with a probability that
decays with the physical distance r between the columns:

    gaussian:     p(r) = A * exp(-r^2 / (2 sigma^2))
    exponential:  p(r) = A * exp(-r / lambda)

Projections are restricted to the stencil of columns whose connection
probability exceeds cutoff_p (default 1/1000); the stencil is clipped at
the grid border, no wraparound.

Synapse generation is a pure function of (seed, source_gid): every draw
comes from a counter-based stream keyed by the source neuron, so any
worker can (re)generate any neuron's outgoing synapses bit-exactly,
independent of partitioning and iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .rng import Purpose, stream

__all__ = [
    "GridSpec",
    "KernelSpec",
    "SynapseGenSpec",
    "Stencil",
    "FanoutExpectation",
    "GridTotals",
    "SYNAPSE_DTYPE",
    "kernel_probability",
    "compute_stencil",
    "expected_fanout",
    "expected_fanout_at",
    "grid_totals",
    "generate_outgoing_synapses",
    "column_outgoing_synapses",
    "stencil_count_matrix",
    "stencil_text_matrix",
]

# Persistent (target-side) synapse record: 4 + 2 + 2 + 4 = 12 bytes.
SYNAPSE_DTYPE = np.dtype([
    ("target", "<u4"),
    ("delay", "<u2"),
    ("flags", "<u2"),
    ("weight", "<f4"),
])

# flags bit 0: source neuron is excitatory
FLAG_EXC_SOURCE = 0x0001


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the column grid and the population split per column."""

    nx: int
    ny: int
    neurons_per_column: int = 1240
    excitatory_fraction: float = 0.8
    spacing_alpha: float = 100.0   # inter-column spacing, um

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one column per axis")
        if self.neurons_per_column < 1:
            raise ValueError("neurons_per_column must be positive")
        if not (0.0 < self.excitatory_fraction <= 1.0):
            raise ValueError("excitatory_fraction must be in (0, 1]")
        if self.spacing_alpha <= 0:
            raise ValueError("spacing_alpha must be positive")

    @property
    def n_columns(self) -> int:
        return self.nx * self.ny

    @property
    def n_neurons(self) -> int:
        return self.n_columns * self.neurons_per_column

    @property
    def n_excitatory_per_column(self) -> int:
        # excitatory neurons occupy the first floor(fraction*n) local slots
        return int(math.floor(self.excitatory_fraction * self.neurons_per_column))

    def column_index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def column_coords(self, col: int) -> Tuple[int, int]:
        return col % self.nx, col // self.nx

    def gid_range(self, col: int) -> Tuple[int, int]:
        n = self.neurons_per_column
        return col * n, (col + 1) * n

    def column_of(self, gid: int) -> int:
        return gid // self.neurons_per_column

    def local_index(self, gid: int) -> int:
        return gid % self.neurons_per_column

    def is_excitatory(self, gid) -> np.ndarray:
        """Vectorized population test by global id."""
        return (np.asarray(gid) % self.neurons_per_column) < self.n_excitatory_per_column


@dataclass(frozen=True)
class KernelSpec:
    """Distance-decay connection kernel plus the local (r = 0) rule."""

    kind: str                   # "gaussian" | "exponential"
    amplitude_A: float
    scale: float                # sigma (gaussian) or lambda (exponential), um
    cutoff_p: float = 1e-3
    local_p: float = 0.8

    def __post_init__(self):
        if self.kind not in ("gaussian", "exponential"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not (0.0 < self.amplitude_A <= 1.0):
            raise ValueError("amplitude_A must be in (0, 1]")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.cutoff_p <= 0:
            raise ValueError("cutoff_p must be positive")
        if not (0.0 <= self.local_p <= 1.0):
            raise ValueError("local_p must be a probability")

    @classmethod
    def gaussian(cls, amplitude_A: float = 0.05, sigma: float = 100.0,
                 **kw) -> "KernelSpec":
        return cls(kind="gaussian", amplitude_A=amplitude_A, scale=sigma, **kw)

    @classmethod
    def exponential(cls, amplitude_A: float = 0.03, lam: float = 290.0,
                    **kw) -> "KernelSpec":
        return cls(kind="exponential", amplitude_A=amplitude_A, scale=lam, **kw)

    def cutoff_distance(self) -> float:
        """Largest r with p(r) >= cutoff_p; 0 if the kernel never reaches it."""
        if self.cutoff_p >= self.amplitude_A:
            return 0.0
        ratio = math.log(self.amplitude_A / self.cutoff_p)
        if self.kind == "gaussian":
            return self.scale * math.sqrt(2.0 * ratio)
        return self.scale * ratio


def kernel_probability(kernel: KernelSpec, r) -> np.ndarray:
    """Connection probability at distance r > 0 (um).

    r = 0 is the local rule's territory (local_p) and is rejected here.
    """
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("kernel_probability requires r > 0")
    if kernel.kind == "gaussian":
        return kernel.amplitude_A * np.exp(-(r * r) / (2.0 * kernel.scale ** 2))
    return kernel.amplitude_A * np.exp(-r / kernel.scale)


@dataclass(frozen=True)
class Stencil:
    """Square neighborhood of candidate target columns around a source.

    The bounding box has side 2*radius + 1 where radius covers the
    kernel's cutoff distance in grid steps.  Offsets inside the box
    whose exact probability falls below cutoff_p carry probability 0:
    they are enumerated but can never draw a synapse, which keeps the
    candidate layout square while respecting the cutoff.
    """

    radius: int
    offsets: np.ndarray        # (k, 2) int array of (di, dj), center excluded
    probabilities: np.ndarray  # (k,) filtered probabilities, 0 below cutoff

    @property
    def shape(self) -> Tuple[int, int]:
        side = 2 * self.radius + 1
        return side, side

    def active(self) -> Tuple[np.ndarray, np.ndarray]:
        """Offsets with nonzero probability, in canonical (dj, di) order."""
        mask = self.probabilities > 0
        return self.offsets[mask], self.probabilities[mask]

    @property
    def remote_probability_sum(self) -> float:
        return float(self.probabilities.sum())


def compute_stencil(kernel: KernelSpec, grid: GridSpec) -> Stencil:
    """Candidate column offsets for remote projections.

    The radius is ceil(r_cut / alpha) with r_cut the analytic cutoff
    distance, so the box side matches the kernel's reach in grid steps;
    per-offset probabilities are then cut at cutoff_p individually.
    Offsets are listed in row-major (dj, then di) order, which is the
    canonical enumeration order for all downstream draws.
    """
    alpha = grid.spacing_alpha
    r_cut = kernel.cutoff_distance()
    radius = int(math.ceil(r_cut / alpha)) if r_cut > 0 else 0
    if radius == 0:
        return Stencil(radius=0,
                       offsets=np.empty((0, 2), dtype=np.int64),
                       probabilities=np.empty(0))
    rng_1d = np.arange(-radius, radius + 1)
    dj, di = np.meshgrid(rng_1d, rng_1d, indexing="ij")
    di = di.ravel()
    dj = dj.ravel()
    center = (di == 0) & (dj == 0)
    di, dj = di[~center], dj[~center]
    r = alpha * np.hypot(di, dj)
    p = kernel_probability(kernel, r)
    p = np.where(p > kernel.cutoff_p, p, 0.0)
    return Stencil(radius=radius,
                   offsets=np.column_stack([di, dj]),
                   probabilities=p)


@dataclass(frozen=True)
class FanoutExpectation:
    """Analytic per-neuron synapse budgets (unclipped interior column)."""

    local: float                # per neuron, any population
    remote_excitatory: float    # per excitatory neuron
    remote_average: float       # population-weighted
    average_total: float


def expected_fanout(kernel: KernelSpec, grid: GridSpec) -> FanoutExpectation:
    """Expected synapse counts for a neuron in an interior column.

    local = local_p * (n - 1): autapses excluded.  Remote counts apply
    to excitatory sources only; inhibitory neurons project nothing
    beyond their own column, so the population average scales the
    remote term by the excitatory fraction.
    """
    n = grid.neurons_per_column
    stencil = compute_stencil(kernel, grid)
    local = kernel.local_p * (n - 1)
    remote_exc = n * stencil.remote_probability_sum
    frac = grid.n_excitatory_per_column / n
    remote_avg = frac * remote_exc
    return FanoutExpectation(local=local,
                             remote_excitatory=remote_exc,
                             remote_average=remote_avg,
                             average_total=local + remote_avg)


def expected_fanout_at(kernel: KernelSpec, grid: GridSpec,
                       col: int) -> FanoutExpectation:
    """Same as expected_fanout but clipped at the border for one column."""
    n = grid.neurons_per_column
    ix, iy = grid.column_coords(col)
    stencil = compute_stencil(kernel, grid)
    offs, probs = stencil.active()
    inside = ((ix + offs[:, 0] >= 0) & (ix + offs[:, 0] < grid.nx) &
              (iy + offs[:, 1] >= 0) & (iy + offs[:, 1] < grid.ny))
    local = kernel.local_p * (n - 1)
    remote_exc = n * float(probs[inside].sum())
    frac = grid.n_excitatory_per_column / n
    remote_avg = frac * remote_exc
    return FanoutExpectation(local=local,
                             remote_excitatory=remote_exc,
                             remote_average=remote_avg,
                             average_total=local + remote_avg)


@dataclass(frozen=True)
class GridTotals:
    """Whole-grid expected sizes with border clipping, for forecasts."""

    n_neurons: int
    local_synapses: float
    remote_synapses: float

    @property
    def total_synapses(self) -> float:
        return self.local_synapses + self.remote_synapses


def grid_totals(kernel: KernelSpec, grid: GridSpec) -> GridTotals:
    """Expected synapse totals over the whole grid.

    Clipping is cheap to account analytically: an offset (di, dj) is
    usable from exactly (nx - |di|)(ny - |dj|) source columns.
    """
    n = grid.neurons_per_column
    n_exc = grid.n_excitatory_per_column
    stencil = compute_stencil(kernel, grid)
    offs, probs = stencil.active()
    pairs = (np.maximum(grid.nx - np.abs(offs[:, 0]), 0) *
             np.maximum(grid.ny - np.abs(offs[:, 1]), 0))
    remote = float(np.sum(pairs * probs)) * n_exc * n
    local = grid.n_columns * n * kernel.local_p * (n - 1)
    return GridTotals(n_neurons=grid.n_neurons,
                      local_synapses=local,
                      remote_synapses=remote)


@dataclass(frozen=True)
class SynapseGenSpec:
    """Weight and delay distributions for generated synapses.

    Weights are Gaussian(J, weight_sd_frac * |J|) with J chosen by the
    (source, target) population pair, then truncated to preserve the
    sign of J (excitatory weights >= 0, inhibitory <= 0).  Delays are
    drawn in ms (uniform or exponential), quantized to the timestep and
    clamped to [1, d_max_steps].
    """

    j_exc_exc: float = 0.4
    j_exc_inh: float = 0.4
    j_inh_exc: float = -1.6
    j_inh_inh: float = -1.6
    weight_sd_frac: float = 0.25
    delay_kind: str = "uniform"      # "uniform" | "exponential"
    delay_min_ms: float = 1.0
    delay_max_ms: float = 8.0
    delay_mean_ms: float = 3.0       # exponential kind only
    timestep_ms: float = 1.0
    d_max_steps: int = 8

    def __post_init__(self):
        if self.delay_kind not in ("uniform", "exponential"):
            raise ValueError(f"unknown delay kind {self.delay_kind!r}")
        if self.timestep_ms <= 0:
            raise ValueError("timestep_ms must be positive")
        if self.d_max_steps < 1:
            raise ValueError("d_max_steps must be >= 1")
        if self.delay_kind == "uniform" and not (0 < self.delay_min_ms <= self.delay_max_ms):
            raise ValueError("need 0 < delay_min_ms <= delay_max_ms")
        if self.delay_kind == "exponential" and self.delay_mean_ms <= 0:
            raise ValueError("delay_mean_ms must be positive")
        if self.j_exc_exc < 0 or self.j_exc_inh < 0:
            raise ValueError("excitatory mean weights must be >= 0")
        if self.j_inh_exc > 0 or self.j_inh_inh > 0:
            raise ValueError("inhibitory mean weights must be <= 0")

    def mean_weights(self, source_exc: bool, target_exc: np.ndarray) -> np.ndarray:
        if source_exc:
            return np.where(target_exc, self.j_exc_exc, self.j_exc_inh)
        return np.where(target_exc, self.j_inh_exc, self.j_inh_inh)


def _candidate_layout(grid: GridSpec, kernel: KernelSpec, col: int,
                      source_exc: bool):
    """Candidate target gids and probabilities for one source column.

    Canonical order: the local column first (all n slots, the autapse
    slot is zeroed per source later), then each in-grid active stencil
    offset in (dj, di) order.  Identical layout for every source in the
    column, so regeneration from a single gid consumes the same draws.
    """
    n = grid.neurons_per_column
    ix, iy = grid.column_coords(col)
    lo, _ = grid.gid_range(col)
    gid_blocks = [np.arange(lo, lo + n, dtype=np.uint32)]
    p_blocks = [np.full(n, kernel.local_p)]
    if source_exc:
        stencil = compute_stencil(kernel, grid)
        offs, probs = stencil.active()
        for (di, dj), p in zip(offs, probs):
            tx, ty = ix + di, iy + dj
            if 0 <= tx < grid.nx and 0 <= ty < grid.ny:
                tlo, _ = grid.gid_range(grid.column_index(tx, ty))
                gid_blocks.append(np.arange(tlo, tlo + n, dtype=np.uint32))
                p_blocks.append(np.full(n, p))
    return np.concatenate(gid_blocks), np.concatenate(p_blocks)


def _draw_synapses(source_gid: int, cand_gids: np.ndarray, cand_p: np.ndarray,
                   grid: GridSpec, genspec: SynapseGenSpec,
                   seed: int) -> np.ndarray:
    """All stochastic draws for one source neuron, from entity-keyed streams."""
    p = cand_p.copy()
    self_pos = np.searchsorted(cand_gids[:grid.neurons_per_column], source_gid)
    p[self_pos] = 0.0   # no autapses; the slot stays to keep the layout fixed
    conn = stream(seed, Purpose.CONNECTIVITY, a=source_gid)
    sel = conn.random(len(p)) < p
    targets = cand_gids[sel]
    n_sel = int(targets.size)

    out = np.empty(n_sel, dtype=SYNAPSE_DTYPE)
    out["target"] = targets
    source_exc = bool(grid.is_excitatory(source_gid))
    out["flags"] = FLAG_EXC_SOURCE if source_exc else 0

    j = genspec.mean_weights(source_exc, grid.is_excitatory(targets))
    z = stream(seed, Purpose.WEIGHT, a=source_gid).standard_normal(n_sel)
    w = j * (1.0 + genspec.weight_sd_frac * z)
    # truncate to preserve the sign of the mean
    if source_exc:
        w = np.maximum(w, 0.0)
    else:
        w = np.minimum(w, 0.0)
    out["weight"] = w.astype(np.float32)

    drng = stream(seed, Purpose.DELAY, a=source_gid)
    if genspec.delay_kind == "uniform":
        d_ms = drng.uniform(genspec.delay_min_ms, genspec.delay_max_ms, n_sel)
    else:
        d_ms = drng.exponential(genspec.delay_mean_ms, n_sel)
    steps = np.rint(d_ms / genspec.timestep_ms).astype(np.int64)
    out["delay"] = np.clip(steps, 1, genspec.d_max_steps).astype(np.uint16)
    return out


def generate_outgoing_synapses(source_gid: int, grid: GridSpec,
                               kernel: KernelSpec, genspec: SynapseGenSpec,
                               seed: int) -> np.ndarray:
    """Outgoing synapses of one neuron as a structured array (SYNAPSE_DTYPE).

    Pure in (seed, source_gid): safe to call from any worker in any
    order, and calling twice returns bit-identical arrays.  Inhibitory
    sources only see their own column as candidates.
    """
    if not (0 <= source_gid < grid.n_neurons):
        raise ValueError(f"source_gid {source_gid} outside grid")
    col = grid.column_of(source_gid)
    source_exc = bool(grid.is_excitatory(source_gid))
    cand_gids, cand_p = _candidate_layout(grid, kernel, col, source_exc)
    return _draw_synapses(source_gid, cand_gids, cand_p, grid, genspec, seed)


def column_outgoing_synapses(col: int, grid: GridSpec, kernel: KernelSpec,
                             genspec: SynapseGenSpec, seed: int
                             ) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (source_gid, synapses) for every neuron of one column.

    Shares the candidate layout across the column's sources; the draws
    themselves stay per-source, so the output matches per-gid
    generation exactly.
    """
    n = grid.neurons_per_column
    n_exc = grid.n_excitatory_per_column
    lo, hi = grid.gid_range(col)
    exc_layout = _candidate_layout(grid, kernel, col, True)
    inh_layout = _candidate_layout(grid, kernel, col, False)
    for gid in range(lo, hi):
        layout = exc_layout if (gid - lo) < n_exc else inh_layout
        yield gid, _draw_synapses(gid, layout[0], layout[1], grid, genspec, seed)


def stencil_count_matrix(kernel: KernelSpec, grid: GridSpec) -> np.ndarray:
    """Expected synapse counts per stencil column from one excitatory source.

    Center cell holds the local count; zeros mark cells inside the
    bounding box but below the probability cutoff.
    """
    stencil = compute_stencil(kernel, grid)
    side = 2 * stencil.radius + 1
    m = np.zeros((side, side))
    n = grid.neurons_per_column
    for (di, dj), p in zip(stencil.offsets, stencil.probabilities):
        m[dj + stencil.radius, di + stencil.radius] = p * n
    m[stencil.radius, stencil.radius] = kernel.local_p * (n - 1)
    return m


def stencil_text_matrix(kernel: KernelSpec, grid: GridSpec) -> str:
    """The count matrix rendered as text, in thousands of synapses."""
    m = stencil_count_matrix(kernel, grid) / 1000.0
    rows = []
    for row in m:
        rows.append(" ".join(f"{v:6.3f}" if v else "  .   " for v in row))
    return "\n".join(rows)
