"""Event accounting, normalized cost, memory accounting, and scaling runs.

The cross-configuration figure of merit is the normalized cost per
synaptic event: wall-clock seconds of the simulation phase (explicitly
excluding construction) divided by the total number of equivalent
synaptic events, i.e. delivered recurrent events plus generated
external events.  Event counts are exactly reproducible run to run;
timings of course are not.

The scaling harness drives the engine across worker counts (strong
scaling: fixed model) or across proportionally grown grids (weak
scaling: fixed per-worker load) and emits one CSV row per run with a
fixed header so downstream tooling never guesses column meanings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .connectivity import GridSpec
from .engine import RunResult, SimConfig
from .network import WorkerNetwork

__all__ = [
    "SimReport",
    "MemoryAccount",
    "RateStats",
    "ScalingRow",
    "ScalingTable",
    "CSV_HEADER",
    "report_from_run",
    "normalized_cost",
    "memory_accounting",
    "firing_rate_stats",
    "slowdown_comparison",
    "scaling_harness",
    "scaled_grid",
    "calibration_sweep",
    "emit_csv",
    "parse_csv",
]

CSV_HEADER = ("grid,workers,kernel,sim_seconds,wall_seconds,"
              "recurrent_events,external_events,ns_per_event,speedup,"
              "efficiency,bytes_per_synapse_steady,bytes_per_synapse_peak,"
              "mean_rate_hz")


@dataclass(frozen=True)
class SimReport:
    """Merged per-run accounting, the input to all derived metrics."""

    grid_label: str
    kernel_kind: str
    worker_count: int
    sim_seconds: float
    construction_seconds: float
    wall_seconds: float                  # simulation phase only
    substep_seconds: Dict[str, float]
    n_neurons: int
    recurrent_synapses: int
    recurrent_events: int
    external_events: int
    n_spikes: int
    steady_bytes_per_worker: Tuple[int, ...]
    peak_bytes_per_worker: Tuple[int, ...]

    @property
    def total_equivalent_events(self) -> int:
        return self.recurrent_events + self.external_events

    @property
    def mean_rate_hz(self) -> float:
        denom = self.n_neurons * self.sim_seconds
        return self.n_spikes / denom if denom else 0.0

    @property
    def bytes_per_synapse_steady(self) -> float:
        if not self.recurrent_synapses:
            return 0.0
        return sum(self.steady_bytes_per_worker) / self.recurrent_synapses

    @property
    def bytes_per_synapse_peak(self) -> float:
        if not self.recurrent_synapses:
            return 0.0
        return sum(self.peak_bytes_per_worker) / self.recurrent_synapses


def report_from_run(result: RunResult) -> SimReport:
    grid = result.config.grid
    return SimReport(
        grid_label=f"{grid.nx}x{grid.ny}",
        kernel_kind=result.config.kernel.kind,
        worker_count=result.worker_count,
        sim_seconds=result.config.duration_s,
        construction_seconds=result.construction_seconds,
        wall_seconds=result.sim_seconds_wall,
        substep_seconds=dict(result.substep_seconds),
        n_neurons=grid.n_neurons,
        recurrent_synapses=result.recurrent_synapses,
        recurrent_events=result.recurrent_events,
        external_events=result.external_events,
        n_spikes=result.n_spikes,
        steady_bytes_per_worker=tuple(result.steady_bytes_per_worker),
        peak_bytes_per_worker=tuple(result.peak_bytes_per_worker),
    )


def normalized_cost(report: SimReport) -> Optional[float]:
    """ns of simulation wall time per equivalent synaptic event.

    Zero-event runs have no defined cost and return None rather than a
    misleading 0.
    """
    events = report.total_equivalent_events
    if events == 0:
        return None
    return report.wall_seconds * 1e9 / events


@dataclass(frozen=True)
class MemoryAccount:
    """Analytic memory cost of one worker's synapse store.

    Counts model-defined record sizes, not process RSS: the persistent
    record is 12 bytes (4 target + 2 delay + 4 weight + 2 flags), and
    during construction each synapse exists at both the source and the
    target, so the floor for the peak is 24 bytes per synapse; real
    peaks add the wire source id and the index structures on top.
    """

    n_synapses: int
    steady_bytes: int
    peak_bytes: int
    index_bytes: int

    @property
    def steady_per_synapse(self) -> float:
        return self.steady_bytes / self.n_synapses if self.n_synapses else 0.0

    @property
    def peak_per_synapse(self) -> float:
        return self.peak_bytes / self.n_synapses if self.n_synapses else 0.0


def memory_accounting(network: WorkerNetwork) -> MemoryAccount:
    return MemoryAccount(
        n_synapses=network.stats.n_incoming,
        steady_bytes=network.stats.steady_bytes,
        peak_bytes=network.stats.peak_bytes,
        index_bytes=network.incoming.index_bytes(),
    )


@dataclass(frozen=True)
class RateStats:
    """Firing rates per population plus a rate-vs-time series."""

    network_hz: float
    excitatory_hz: float
    inhibitory_hz: float
    bin_centers_ms: np.ndarray
    rate_series_hz: np.ndarray


def firing_rate_stats(gids: np.ndarray, times_ms: np.ndarray,
                      grid: GridSpec, duration_s: float,
                      bin_ms: float = 10.0) -> RateStats:
    """Mean rates over the run and a binned network-rate time series."""
    n = grid.n_neurons
    dur = duration_s if duration_s > 0 else 0.0
    if dur == 0 or n == 0:
        return RateStats(0.0, 0.0, 0.0, np.empty(0), np.empty(0))
    exc_mask = grid.is_excitatory(np.asarray(gids, dtype=np.int64)) \
        if len(gids) else np.empty(0, dtype=bool)
    n_exc = grid.n_excitatory_per_column * grid.n_columns
    n_inh = n - n_exc
    network = len(gids) / (n * dur)
    exc = int(exc_mask.sum()) / (n_exc * dur) if n_exc else 0.0
    inh = int((~exc_mask).sum()) / (n_inh * dur) if n_inh else 0.0
    edges = np.arange(0.0, dur * 1000.0 + bin_ms, bin_ms)
    hist, _ = np.histogram(times_ms, bins=edges)
    series = hist / (n * bin_ms * 1e-3)
    centers = (edges[:-1] + edges[1:]) / 2.0
    return RateStats(network_hz=network, excitatory_hz=exc,
                     inhibitory_hz=inh, bin_centers_ms=centers,
                     rate_series_hz=series)


def slowdown_comparison(report_gaussian: SimReport,
                        report_exponential: SimReport) -> float:
    """Normalized-cost ratio, exponential over Gaussian, same grid/workers."""
    if (report_gaussian.grid_label != report_exponential.grid_label
            or report_gaussian.worker_count != report_exponential.worker_count):
        raise ValueError("slowdown comparison needs matching grid and workers")
    a = normalized_cost(report_exponential)
    b = normalized_cost(report_gaussian)
    if a is None or b is None or b == 0:
        raise ValueError("slowdown undefined for zero-event runs")
    return a / b


# ----------------------------------------------------------------------
# scaling harness

@dataclass(frozen=True)
class ScalingRow:
    """One CSV row; field order matches CSV_HEADER exactly."""

    grid: str
    workers: int
    kernel: str
    sim_seconds: float
    wall_seconds: float
    recurrent_events: int
    external_events: int
    ns_per_event: Optional[float]
    speedup: Optional[float]
    efficiency: Optional[float]
    bytes_per_synapse_steady: float
    bytes_per_synapse_peak: float
    mean_rate_hz: float


@dataclass
class ScalingTable:
    rows: List[ScalingRow] = field(default_factory=list)
    failures: List[Tuple[int, str]] = field(default_factory=list)
    reports: List[SimReport] = field(default_factory=list)


def scaling_row(report: SimReport, speedup: Optional[float] = None,
                efficiency: Optional[float] = None) -> ScalingRow:
    """One report rendered as a CSV row; scaling columns may be empty."""
    return ScalingRow(
        grid=report.grid_label,
        workers=report.worker_count,
        kernel=report.kernel_kind,
        sim_seconds=report.sim_seconds,
        wall_seconds=report.wall_seconds,
        recurrent_events=report.recurrent_events,
        external_events=report.external_events,
        ns_per_event=normalized_cost(report),
        speedup=speedup,
        efficiency=efficiency,
        bytes_per_synapse_steady=report.bytes_per_synapse_steady,
        bytes_per_synapse_peak=report.bytes_per_synapse_peak,
        mean_rate_hz=report.mean_rate_hz,
    )


def scaled_grid(base: GridSpec, factor: int) -> GridSpec:
    """Grow a grid to roughly ``factor`` times the columns (weak scaling)."""
    from dataclasses import replace
    s = math.sqrt(factor)
    return replace(base, nx=max(1, round(base.nx * s)),
                   ny=max(1, round(base.ny * s)))


def scaling_harness(config: SimConfig, worker_counts: Sequence[int],
                    mode: str = "strong",
                    runner: Optional[Callable[[SimConfig, int], RunResult]] = None
                    ) -> ScalingTable:
    """Run the model across worker counts and tabulate cost and scaling.

    strong: identical model every run; speedup(k) = T(ref)/T(k) with the
    smallest worker count as reference, efficiency = speedup * ref / k.
    weak: the grid grows with k so columns per worker stay constant;
    efficiency(k) = T(ref)/T(k) (ideal weak scaling holds wall time
    flat), speedup = efficiency * k / ref.

    Failed runs are recorded and skipped; the table is still emitted.
    """
    if mode not in ("strong", "weak"):
        raise ValueError(f"unknown scaling mode {mode!r}")
    if runner is None:
        from .engine import run as runner
    from dataclasses import replace

    table = ScalingTable()
    ref_workers: Optional[int] = None
    ref_wall: Optional[float] = None
    for k in worker_counts:
        cfg = config
        if mode == "weak":
            cfg = replace(config, grid=scaled_grid(config.grid, k))
        try:
            result = runner(cfg, k)
        except Exception as err:
            table.failures.append((k, f"{type(err).__name__}: {err}"))
            continue
        report = report_from_run(result)
        if ref_workers is None:
            ref_workers, ref_wall = k, report.wall_seconds
        if report.wall_seconds > 0 and ref_wall:
            ratio = ref_wall / report.wall_seconds
        else:
            ratio = None
        if ratio is None:
            speedup = efficiency = None
        elif mode == "strong":
            speedup = ratio
            efficiency = ratio * ref_workers / k
        else:
            efficiency = ratio
            speedup = ratio * k / ref_workers
        table.reports.append(report)
        table.rows.append(scaling_row(report, speedup, efficiency))
    return table


def calibration_sweep(config: SimConfig,
                      rates_hz: Sequence[float],
                      runner: Optional[Callable[[SimConfig, int], RunResult]] = None
                      ) -> List[Tuple[float, float]]:
    """Mean firing rate per external drive rate (the calibration tool)."""
    from dataclasses import replace
    if runner is None:
        from .engine import run as runner
    out = []
    for rate in rates_hz:
        cfg = replace(config,
                      external=replace(config.external,
                                       rate_per_synapse_hz=rate))
        result = runner(cfg, 1)
        out.append((rate, result.mean_rate_hz))
    return out


# ----------------------------------------------------------------------
# CSV emit/parse (round-trip exact)

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(table_or_rows) -> str:
    rows = getattr(table_or_rows, "rows", table_or_rows)
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, name))
                              for name in CSV_HEADER.split(",")))
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> List[ScalingRow]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("bad or missing CSV header")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(CSV_HEADER.split(",")):
            raise ValueError(f"malformed CSV row: {ln!r}")
        (grid, workers, kernel, sim_s, wall_s, rec, ext, nspe, speed, eff,
         b_steady, b_peak, rate) = parts
        opt = lambda s: None if s == "" else float(s)
        out.append(ScalingRow(
            grid=grid, workers=int(workers), kernel=kernel,
            sim_seconds=float(sim_s), wall_seconds=float(wall_s),
            recurrent_events=int(rec), external_events=int(ext),
            ns_per_event=opt(nspe), speedup=opt(speed), efficiency=opt(eff),
            bytes_per_synapse_steady=float(b_steady),
            bytes_per_synapse_peak=float(b_peak),
            mean_rate_hz=float(rate),
        ))
    return out
