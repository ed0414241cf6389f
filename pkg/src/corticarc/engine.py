"""Time-driven simulation loop over the distributed network.

Each timestep runs six substeps per worker: (1) collect the spikes the
owned neurons emitted during the previous step, (2) pack them into
per-target-worker AER messages and run the two-phase exchange, (3)
expand every received event through the incoming-synapse store and
queue (target, weight, arrival time) into the delay ring, (4, 5) drain
the ring bucket of the current step and merge it with the external
Poisson events, sorted per neuron by (time, source id), (6) integrate
every owned neuron through its event queue, recording new spikes for
the next step's exchange.

Spikes emitted during step t travel at step t+1; with synaptic delays
of at least one timestep the bulk-synchronous exchange is causally
safe.  Exact emission times ride in the AER payload end to end, so
integration is event-driven inside the step while communication stays
time-driven.

Workers can be threads (InProcessGroup) or separate processes
(SocketTransport); the loop is identical, and for a fixed seed the
resulting raster is bit-identical for any worker count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .connectivity import GridSpec, KernelSpec, SynapseGenSpec, grid_totals
from .model import NeuronBlock, NeuronParams
from .network import (AER_DTYPE, DeliveryCounters, construct_network,
                      deliver_spikes, raster_checksum)
from .partition import map_columns_to_workers
from .rng import Purpose, counter_uniforms
from .transport import (InProcessGroup, SocketTransport, Transport,
                        free_local_endpoints)

__all__ = [
    "ExternalInputSpec",
    "SimConfig",
    "DelayRing",
    "RunResult",
    "MemoryBudgetError",
    "generate_external_events",
    "initialize_potentials",
    "run_worker",
    "run",
    "run_multiprocess",
    "write_raster",
]

# source id carried by external events in the per-neuron sort; above any
# real gid, so externals come last among simultaneous inputs
EXTERNAL_SOURCE_ID = np.uint64(0xFFFFFFFF)


class MemoryBudgetError(ValueError):
    """Estimated memory exceeds the configured budget; nothing allocated."""


@dataclass(frozen=True)
class ExternalInputSpec:
    """Poisson drive standing in for afferent input from outside the grid.

    Every neuron owns ``synapses_per_neuron`` external synapses firing
    independently at ``rate_per_synapse_hz``; events arrive with a fixed
    weight.  Expected events per neuron and step:
    synapses_per_neuron * rate * timestep.
    """

    synapses_per_neuron: float = 800.0
    rate_per_synapse_hz: float = 3.0
    weight_mv: float = 0.2

    def __post_init__(self):
        if (self.synapses_per_neuron < 0 or self.rate_per_synapse_hz < 0
                or self.weight_mv < 0):
            raise ValueError("external input parameters must be non-negative")

    def mean_per_step(self, timestep_ms: float) -> float:
        return (self.synapses_per_neuron * self.rate_per_synapse_hz
                * timestep_ms * 1e-3)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one run."""

    grid: GridSpec
    kernel: KernelSpec
    genspec: SynapseGenSpec = SynapseGenSpec()
    exc_params: NeuronParams = NeuronParams(is_excitatory=True)
    inh_params: NeuronParams = NeuronParams(is_excitatory=False)
    external: ExternalInputSpec = ExternalInputSpec()
    timestep_ms: float = 1.0
    duration_s: float = 1.0
    seed: int = 1
    record_raster: bool = True
    memory_budget_bytes: int = 4 << 30

    def __post_init__(self):
        if self.timestep_ms <= 0:
            raise ValueError("timestep_ms must be positive")
        if self.duration_s < 0:
            raise ValueError("duration_s must be non-negative")
        if self.genspec.timestep_ms != self.timestep_ms:
            raise ValueError("genspec timestep differs from simulation timestep")
        if self.d_max < 1:
            raise ValueError("need d_max >= 1")

    @property
    def d_max(self) -> int:
        return self.genspec.d_max_steps

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s * 1000.0 / self.timestep_ms))


class DelayRing:
    """d_max circular buckets of pending synaptic events.

    An event inserted with arrival step t lands in bucket t mod d_max
    and is drained exactly at step t; since delays satisfy
    1 <= d <= d_max, an arrival can never wrap onto a bucket that has
    not been drained yet.
    """

    def __init__(self, d_max: int):
        self.d_max = d_max
        self._buckets: List[List[Tuple[np.ndarray, ...]]] = [
            [] for _ in range(d_max)]

    def insert(self, arrival_step: np.ndarray, tgt_local: np.ndarray,
               weight: np.ndarray, t_ms: np.ndarray, src: np.ndarray) -> None:
        if len(arrival_step) == 0:
            return
        order = np.argsort(arrival_step, kind="stable")
        steps = arrival_step[order]
        cuts = np.searchsorted(steps, np.unique(steps))
        bounds = np.append(cuts, len(steps))
        for i, s in enumerate(np.unique(steps)):
            sel = order[bounds[i]:bounds[i + 1]]
            self._buckets[int(s) % self.d_max].append(
                (int(s), tgt_local[sel], weight[sel], t_ms[sel], src[sel]))

    def drain(self, t_step: int) -> Tuple[np.ndarray, ...]:
        """All events queued for t_step; empties the bucket."""
        chunks = self._buckets[t_step % self.d_max]
        self._buckets[t_step % self.d_max] = []
        if not chunks:
            z = np.empty(0)
            return (z.astype(np.int64), z, z, z.astype(np.uint64))
        assert all(c[0] == t_step for c in chunks), "delay ring wrapped"
        tgt = np.concatenate([c[1] for c in chunks]).astype(np.int64)
        w = np.concatenate([c[2] for c in chunks]).astype(np.float64)
        tm = np.concatenate([c[3] for c in chunks])
        src = np.concatenate([c[4] for c in chunks]).astype(np.uint64)
        return tgt, w, tm, src


# ----------------------------------------------------------------------
# external Poisson drive, addressable per (seed, gid, step)

_POISSON_TAIL_PAD = 20


def _poisson_counts(seed: int, gids: np.ndarray, t_step: int,
                    lam: float) -> np.ndarray:
    """Poisson counts per gid via the product-of-uniforms method.

    Each uniform is addressed by (seed, gid, step, draw index), so the
    count for one (gid, step) never depends on any other entity.
    """
    if lam <= 0 or len(gids) == 0:
        return np.zeros(len(gids), dtype=np.int64)
    m = int(math.ceil(lam + 12.0 * math.sqrt(lam))) + _POISSON_TAIL_PAD
    u = counter_uniforms(seed, Purpose.EXTERNAL,
                         np.asarray(gids, dtype=np.uint64)[:, None],
                         t_step, np.arange(m, dtype=np.uint64)[None, :])
    counts = np.sum(np.cumprod(u, axis=1) > math.exp(-lam), axis=1)
    # the draw budget covers lam + 12 sigma; overflowing it is a bug
    assert counts.max(initial=0) < m, "Poisson draw budget exceeded"
    return counts.astype(np.int64)


def _external_events(seed: int, gids: np.ndarray, t_step: int,
                     spec: ExternalInputSpec, timestep_ms: float
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """(repeated gid index, time ms) for all external events of one step."""
    lam = spec.mean_per_step(timestep_ms)
    counts = _poisson_counts(seed, gids, t_step, lam)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    which = np.repeat(np.arange(len(gids)), counts)
    # ragged per-event index j = 0..count-1 within each neuron
    j = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    u = counter_uniforms(seed, Purpose.EXTERNAL_TIME,
                         np.asarray(gids, dtype=np.uint64)[which], t_step, j)
    times = (t_step + u) * timestep_ms
    return which, times


def generate_external_events(gid: int, t_step: int, spec: ExternalInputSpec,
                             seed: int, timestep_ms: float = 1.0
                             ) -> List[Tuple[float, float]]:
    """External (time, weight) events of one neuron for one step."""
    which, times = _external_events(seed, np.array([gid], dtype=np.uint64),
                                    t_step, spec, timestep_ms)
    return [(float(t), spec.weight_mv) for t in times]


def initialize_potentials(seed: int, gids: np.ndarray,
                          params: NeuronParams) -> np.ndarray:
    """Initial V per gid, uniform in [V_r, V_theta); c starts at 0."""
    u = counter_uniforms(seed, Purpose.INIT_STATE,
                         np.asarray(gids, dtype=np.uint64), 0, 0)
    return params.V_r + u * (params.V_theta - params.V_r)


# ----------------------------------------------------------------------
# per-worker loop

@dataclass
class WorkerResult:
    """Everything one worker reports back after a run."""

    rank: int
    n_local: int
    raster_gids: np.ndarray
    raster_times: np.ndarray
    n_spikes: int
    recurrent_events: int
    external_events: int
    construction_checksum: int
    construction_seconds: float
    sim_seconds_wall: float
    substep_seconds: Dict[str, float]
    steady_bytes: int
    peak_bytes: int
    n_incoming_synapses: int
    n_generated_synapses: int
    delivery: DeliveryCounters


@dataclass
class RunResult:
    """Merged outcome of all workers for one run."""

    config: SimConfig
    worker_count: int
    raster_gids: np.ndarray       # merged, sorted by (time, gid)
    raster_times: np.ndarray
    n_spikes: int
    recurrent_events: int
    external_events: int
    recurrent_synapses: int
    construction_checksum: int
    raster_checksum: int
    construction_seconds: float   # max over workers (critical path)
    sim_seconds_wall: float
    substep_seconds: Dict[str, float]
    steady_bytes_per_worker: List[int]
    peak_bytes_per_worker: List[int]
    workers: List[WorkerResult]

    @property
    def mean_rate_hz(self) -> float:
        denom = self.config.grid.n_neurons * self.config.duration_s
        return self.n_spikes / denom if denom else 0.0


def estimate_worker_bytes(config: SimConfig, worker_count: int) -> int:
    """Coarse pre-allocation estimate of the peak bytes on one worker."""
    totals = grid_totals(config.kernel, config.grid)
    syn = totals.total_synapses / worker_count
    state = config.grid.n_neurons / worker_count * 13 * 8
    return int(syn * 32 + state)


def run_worker(transport: Transport, config: SimConfig) -> WorkerResult:
    """Execute construction plus the full step loop on one worker."""
    grid = config.grid
    rank = transport.rank
    pmap = map_columns_to_workers(grid, transport.size)

    net = construct_network(grid, config.kernel, config.genspec, pmap,
                            config.seed, transport)
    owned_gids = pmap.owned_gids(rank).astype(np.uint64)
    n_local = len(owned_gids)

    block = NeuronBlock(config.exc_params, config.inh_params,
                        grid.is_excitatory(owned_gids))
    # same uniform draw as initialize_potentials, but honoring per-
    # population V_r/V_theta when the two parameter sets differ
    u0 = counter_uniforms(config.seed, Purpose.INIT_STATE, owned_gids, 0, 0)
    block.set_potentials(block.V_r + u0 * (block.V_theta - block.V_r))

    ring = DelayRing(config.d_max)
    delivery = DeliveryCounters()
    dt = config.timestep_ms
    timers = {"deliver": 0.0, "expand": 0.0, "external": 0.0,
              "integrate": 0.0}

    raster_g: List[np.ndarray] = []
    raster_t: List[np.ndarray] = []
    prev_idx = np.empty(0, dtype=np.int64)
    prev_times = np.empty(0)
    n_spikes = 0
    recurrent_events = 0
    external_events = 0

    t_sim0 = time.perf_counter()
    for t in range(config.n_steps):
        # (1)+(2) ship the previous step's spikes as AER messages
        tic = time.perf_counter()
        outgoing: Dict[int, np.ndarray] = {}
        if len(prev_idx):
            gids = owned_gids[prev_idx]
            order = np.lexsort((gids, prev_times))
            gids, times = gids[order], prev_times[order]
            for w in net.directory.target_workers:
                mask = np.isin(gids, net.source_masks.get(int(w), ()))
                if np.any(mask):
                    msg = np.empty(int(mask.sum()), dtype=AER_DTYPE)
                    msg["source"] = gids[mask]
                    msg["time"] = times[mask]
                    outgoing[int(w)] = msg
        incoming = deliver_spikes(transport, t, outgoing, net.directory,
                                  delivery)
        timers["deliver"] += time.perf_counter() - tic

        # (3) arborize received events into the delay ring
        tic = time.perf_counter()
        for _, events in incoming:
            if not len(events):
                continue
            src = events["source"].astype(np.uint64)
            rows = net.incoming.rows_for(src)
            hit = rows >= 0
            rows = rows[hit]
            ev_t = events["time"][hit]
            src = src[hit]
            starts = net.incoming.offsets[rows]
            ends = net.incoming.offsets[rows + 1]
            lens = ends - starts
            total = int(lens.sum())
            if total == 0:
                continue
            flat = (np.arange(total)
                    - np.repeat(np.cumsum(lens) - lens, lens)
                    + np.repeat(starts, lens))
            delays = net.incoming.delay[flat].astype(np.int64)
            # emission step is t-1: spikes always travel one step later
            arrival = (t - 1) + delays
            ring.insert(arrival,
                        net.incoming.target_local[flat].astype(np.int64),
                        net.incoming.weight[flat].astype(np.float64),
                        np.repeat(ev_t, lens) + delays * dt,
                        np.repeat(src, lens))
            recurrent_events += total
        timers["expand"] += time.perf_counter() - tic

        # (4)+(5) current step's queue: ring bucket plus external drive
        tic = time.perf_counter()
        tgt, w, tm, src = ring.drain(t)
        which, ext_t = _external_events(config.seed, owned_gids, t,
                                        config.external, dt)
        if len(which):
            external_events += len(which)
            tgt = np.concatenate([tgt, which])
            w = np.concatenate([w, np.full(len(which),
                                           config.external.weight_mv)])
            tm = np.concatenate([tm, ext_t])
            src = np.concatenate([src, np.full(len(which),
                                               EXTERNAL_SOURCE_ID)])
        timers["external"] += time.perf_counter() - tic

        # (6) integrate; the sort is total so results are order-independent
        tic = time.perf_counter()
        order = np.lexsort((w, src, tm, tgt))
        prev_idx, prev_times = block.integrate_sorted(tgt[order], tm[order],
                                                      w[order])
        if len(prev_idx):
            n_spikes += len(prev_idx)
            if config.record_raster:
                raster_g.append(owned_gids[prev_idx])
                raster_t.append(prev_times.copy())
        timers["integrate"] += time.perf_counter() - tic
    sim_wall = time.perf_counter() - t_sim0

    gids = (np.concatenate(raster_g) if raster_g
            else np.empty(0, dtype=np.uint64))
    times = np.concatenate(raster_t) if raster_t else np.empty(0)
    return WorkerResult(
        rank=rank, n_local=n_local,
        raster_gids=gids, raster_times=times, n_spikes=n_spikes,
        recurrent_events=recurrent_events, external_events=external_events,
        construction_checksum=net.stats.checksum,
        construction_seconds=net.stats.wall_seconds,
        sim_seconds_wall=sim_wall, substep_seconds=timers,
        steady_bytes=net.stats.steady_bytes, peak_bytes=net.stats.peak_bytes,
        n_incoming_synapses=net.stats.n_incoming,
        n_generated_synapses=net.stats.n_generated,
        delivery=delivery,
    )


def _merge_results(config: SimConfig, results: List[WorkerResult]
                   ) -> RunResult:
    results = sorted(results, key=lambda r: r.rank)
    gids = np.concatenate([r.raster_gids for r in results]) \
        if results else np.empty(0, dtype=np.uint64)
    times = np.concatenate([r.raster_times for r in results]) \
        if results else np.empty(0)
    order = np.lexsort((gids, times))
    gids, times = gids[order], times[order]
    checksum = sum(r.construction_checksum for r in results) & 0xFFFFFFFFFFFFFFFF
    substeps: Dict[str, float] = {}
    for r in results:
        for k, v in r.substep_seconds.items():
            substeps[k] = max(substeps.get(k, 0.0), v)
    return RunResult(
        config=config,
        worker_count=len(results),
        raster_gids=gids, raster_times=times,
        n_spikes=sum(r.n_spikes for r in results),
        recurrent_events=sum(r.recurrent_events for r in results),
        external_events=sum(r.external_events for r in results),
        recurrent_synapses=sum(r.n_incoming_synapses for r in results),
        construction_checksum=checksum,
        raster_checksum=raster_checksum(gids, times),
        construction_seconds=max((r.construction_seconds for r in results),
                                 default=0.0),
        sim_seconds_wall=max((r.sim_seconds_wall for r in results),
                             default=0.0),
        substep_seconds=substeps,
        steady_bytes_per_worker=[r.steady_bytes for r in results],
        peak_bytes_per_worker=[r.peak_bytes for r in results],
        workers=results,
    )


def run(config: SimConfig, workers: int = 1,
        transport_timeout: float = 60.0) -> RunResult:
    """Run with thread workers over the in-process transport."""
    est = estimate_worker_bytes(config, workers)
    if est > config.memory_budget_bytes:
        raise MemoryBudgetError(
            f"estimated {est / 1e9:.2f} GB per worker exceeds the "
            f"{config.memory_budget_bytes / 1e9:.2f} GB budget")
    group = InProcessGroup(workers, timeout=transport_timeout)
    results: List[Optional[WorkerResult]] = [None] * workers
    errors: List[BaseException] = []

    if workers == 1:
        results[0] = run_worker(group.endpoint(0), config)
    else:
        import threading

        def work(r):
            try:
                results[r] = run_worker(group.endpoint(r), config)
            except BaseException as err:
                errors.append(err)

        threads = [threading.Thread(target=work, args=(r,), daemon=True)
                   for r in range(workers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    if errors:
        raise errors[0]
    return _merge_results(config, [r for r in results if r is not None])


def _mp_worker(rank: int, size: int, hosts, config: SimConfig, queue) -> None:
    transport = SocketTransport(rank, size, hosts)
    try:
        result = run_worker(transport, config)
        queue.put(result)
    except BaseException as err:
        queue.put(err)
    finally:
        transport.close()


def run_multiprocess(config: SimConfig, workers: int,
                     hosts: Optional[Sequence[Tuple[str, int]]] = None
                     ) -> RunResult:
    """Run with one OS process per worker over the socket transport."""
    import multiprocessing as mp

    est = estimate_worker_bytes(config, workers)
    if est > config.memory_budget_bytes:
        raise MemoryBudgetError(
            f"estimated {est / 1e9:.2f} GB per worker exceeds the "
            f"{config.memory_budget_bytes / 1e9:.2f} GB budget")
    ctx = mp.get_context("fork")
    if hosts is None:
        hosts = free_local_endpoints(workers)
    q = ctx.Queue()
    procs = [ctx.Process(target=_mp_worker, args=(r, workers, hosts, config, q),
                         daemon=True)
             for r in range(workers)]
    for p in procs:
        p.start()
    results: List[WorkerResult] = []
    first_error: Optional[BaseException] = None
    for _ in range(workers):
        item = q.get()
        if isinstance(item, BaseException):
            first_error = first_error or item
        else:
            results.append(item)
    for p in procs:
        p.join(timeout=30.0)
        if p.is_alive():
            p.terminate()
    if first_error is not None:
        raise first_error
    return _merge_results(config, results)


def write_raster(path, gids: np.ndarray, times_ms: np.ndarray) -> None:
    """Dump a raster as `time_ms<TAB>neuron_gid` lines, ascending time."""
    order = np.lexsort((gids, times_ms))
    with open(path, "w") as fh:
        for t, g in zip(times_ms[order], gids[order]):
            fh.write(f"{t:.9f}\t{int(g)}\n")
