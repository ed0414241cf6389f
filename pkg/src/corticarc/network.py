"""Distributed network construction and per-timestep spike delivery.

Construction runs in two steps over the transport: every worker
generates the outgoing synapses of its owned neurons, tallies them per
target worker, exchanges the tallies as single count words (all-to-all),
then ships the synapse records themselves (variable all-to-all).  Each
worker keeps only the incoming side, indexed by source neuron id and by
delay; the outgoing copies are dropped right after the exchange.

Spike delivery per timestep is two-phase over the connectivity
directory built during construction: first one counter word to every
directory target (zero allowed), then payloads only on pairs whose
counter is nonzero.  Spikes travel as AER pairs; fanning an event out
to its synapses happens at the target (deferred arborization).

Wire formats are little-endian and fixed:

* synapse record: u32 source gid, u32 target gid, u16 delay steps,
  u16 flags, f32 weight (16 bytes);
* spike event: u32 source gid, f64 emission time ms (12 bytes);
* counter: u32.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .connectivity import (GridSpec, KernelSpec, SynapseGenSpec,
                           column_outgoing_synapses)
from .partition import ProcessMap
from .rng import splitmix64
from .transport import Transport, TransportError

__all__ = [
    "WIRE_SYNAPSE_DTYPE",
    "AER_DTYPE",
    "ConnectivityDirectory",
    "IncomingSynapses",
    "ConstructionStats",
    "WorkerNetwork",
    "ProtocolViolation",
    "construct_network",
    "deliver_spikes",
    "synapse_wire_checksum",
    "raster_checksum",
]

WIRE_SYNAPSE_DTYPE = np.dtype([
    ("source", "<u4"),
    ("target", "<u4"),
    ("delay", "<u2"),
    ("flags", "<u2"),
    ("weight", "<f4"),
])   # 16 bytes

AER_DTYPE = np.dtype([
    ("source", "<u4"),
    ("time", "<f8"),
])   # 12 bytes


class ProtocolViolation(TransportError):
    """Payload does not match its announced counter."""


def _mix_records_u64(lo: np.ndarray, hi: np.ndarray) -> int:
    """Order-independent digest of (lo, hi) 64-bit record halves."""
    mixed = splitmix64(lo ^ splitmix64(hi))
    return int(np.sum(mixed, dtype=np.uint64))


def synapse_wire_checksum(records: np.ndarray) -> int:
    """Order-independent checksum over wire synapse records.

    Summing per-record mixes modulo 2^64 makes the result independent
    of both iteration order and partitioning; per-worker partial sums
    simply add up to the global value.
    """
    if records.size == 0:
        return 0
    raw = np.ascontiguousarray(records).view(np.uint8).reshape(-1, 16)
    lo = raw[:, :8].copy().view(np.uint64).ravel()
    hi = raw[:, 8:].copy().view(np.uint64).ravel()
    return _mix_records_u64(lo, hi)


def raster_checksum(gids: np.ndarray, times_ms: np.ndarray) -> int:
    """Order-independent checksum of a spike raster."""
    if len(gids) == 0:
        return 0
    lo = np.asarray(gids, dtype=np.uint64)
    hi = np.asarray(times_ms, dtype=np.float64).view(np.uint64)
    return _mix_records_u64(lo, hi)


@dataclass
class ConnectivityDirectory:
    """Who talks to whom, from this worker's point of view."""

    rank: int
    size: int
    target_workers: np.ndarray          # workers we send spikes to
    source_workers: np.ndarray          # workers we receive spikes from
    incoming_counts: np.ndarray         # per source worker, synapse count

    def is_target(self, w: int) -> bool:
        return bool(np.isin(w, self.target_workers))


@dataclass
class IncomingSynapses:
    """Target-side synapse store, CSR over source neuron id.

    Records are sorted by (source gid, delay); ``slice_of`` returns the
    row of one source.  Per-record storage is the model-defined 12
    bytes (target, delay, weight, flags word); the CSR index is the
    reported overhead.
    """

    sources: np.ndarray        # unique source gids, ascending
    offsets: np.ndarray        # len(sources) + 1 row offsets
    target_local: np.ndarray   # u32 local index of target neuron
    delay: np.ndarray          # u16 timesteps
    weight: np.ndarray         # f32 mV

    @property
    def n_synapses(self) -> int:
        return int(self.target_local.size)

    def rows_for(self, gids: np.ndarray) -> np.ndarray:
        """CSR row index per gid, -1 where a gid has no synapses here."""
        if len(self.sources) == 0:
            return np.full(len(gids), -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.sources, gids),
                         len(self.sources) - 1)
        return np.where(self.sources[pos] == gids, pos, -1)

    def index_bytes(self) -> int:
        return int(self.sources.nbytes + self.offsets.nbytes)

    def fanout_of(self, gids: np.ndarray) -> np.ndarray:
        """Synapse count stored here per source gid (0 when absent)."""
        rows = self.rows_for(np.asarray(gids, dtype=np.uint64))
        counts = (self.offsets[1:] - self.offsets[:-1])
        out = np.zeros(len(rows), dtype=np.int64)
        hit = rows >= 0
        out[hit] = counts[rows[hit]]
        return out


@dataclass
class ConstructionStats:
    """Per-worker construction accounting (analytic byte counts)."""

    n_generated: int                # outgoing records generated here
    n_incoming: int                 # records stored here after exchange
    steady_bytes: int               # 12 B/record + CSR index
    peak_bytes: int                 # live-at-once maximum during build
    wire_bytes_sent: int
    checksum: int                   # partial, summed over workers -> global
    wall_seconds: float

    @property
    def bytes_per_synapse_steady(self) -> float:
        return self.steady_bytes / self.n_incoming if self.n_incoming else 0.0

    @property
    def bytes_per_synapse_peak(self) -> float:
        return self.peak_bytes / self.n_incoming if self.n_incoming else 0.0


@dataclass
class WorkerNetwork:
    """Everything one worker knows after construction."""

    rank: int
    pmap: ProcessMap
    incoming: IncomingSynapses
    directory: ConnectivityDirectory
    # per directory target worker: sorted owned gids with >=1 synapse there
    source_masks: Dict[int, np.ndarray]
    stats: ConstructionStats


def construct_network(grid: GridSpec, kernel: KernelSpec,
                      genspec: SynapseGenSpec, pmap: ProcessMap,
                      seed: int, transport: Transport) -> WorkerNetwork:
    """Two-step construction exchange for this worker (collective call)."""
    t0 = time.perf_counter()
    rank, size = transport.rank, transport.size
    n_col = grid.neurons_per_column

    # generate outgoing synapses for owned neurons, bucketed by target worker
    out_parts: List[List[np.ndarray]] = [[] for _ in range(size)]
    n_generated = 0
    for col in pmap.owned_columns(rank):
        for gid, syn in column_outgoing_synapses(col, grid, kernel, genspec, seed):
            if not syn.size:
                continue
            n_generated += len(syn)
            wire = np.empty(len(syn), dtype=WIRE_SYNAPSE_DTYPE)
            wire["source"] = gid
            for f in ("target", "delay", "flags", "weight"):
                wire[f] = syn[f]
            owners = pmap.owner_of_gid(syn["target"])
            if size == 1:
                out_parts[0].append(wire)
            else:
                order = np.argsort(owners, kind="stable")
                wire = wire[order]
                owners = owners[order]
                cut = np.searchsorted(owners, np.arange(size + 1))
                for w in range(size):
                    if cut[w + 1] > cut[w]:
                        out_parts[w].append(wire[cut[w]:cut[w + 1]])

    out_bufs = [np.concatenate(p) if p else np.empty(0, dtype=WIRE_SYNAPSE_DTYPE)
                for p in out_parts]
    del out_parts
    checksum = 0
    for buf in out_bufs:
        checksum = (checksum + synapse_wire_checksum(buf)) & 0xFFFFFFFFFFFFFFFF

    # source masks must be captured before the outgoing copies are dropped
    source_masks = {w: np.unique(out_bufs[w]["source"]).astype(np.uint64)
                    for w in range(size) if out_bufs[w].size}

    out_counts = [len(b) for b in out_bufs]
    if max(out_counts, default=0) >= 1 << 32:
        raise TransportError("per-pair synapse count exceeds the 32-bit counter")

    # step 1: single count words; step 2: the records themselves
    in_counts = transport.alltoall_words(out_counts)
    payloads = transport.alltoallv_bytes([b.tobytes() for b in out_bufs])
    wire_bytes_sent = sum(len(b) * 16 for b in out_bufs)
    peak_bytes = 16 * n_generated + 16 * sum(in_counts)

    for w, (pay, announced) in enumerate(zip(payloads, in_counts)):
        if len(pay) != announced * WIRE_SYNAPSE_DTYPE.itemsize:
            raise ProtocolViolation(
                f"construction: worker {w} -> {rank} announced {announced} "
                f"records but sent {len(pay)} bytes")
    del out_bufs   # "memory is released on the source process"

    incoming_wire = (np.concatenate([np.frombuffer(p, dtype=WIRE_SYNAPSE_DTYPE)
                                     for p in payloads])
                     if sum(in_counts) else np.empty(0, dtype=WIRE_SYNAPSE_DTYPE))
    del payloads

    # index by (source, delay); ties keep generation order (stable sort),
    # which is partition-invariant because one source is generated by
    # exactly one worker
    order = np.lexsort((incoming_wire["delay"], incoming_wire["source"]))
    incoming_wire = incoming_wire[order]
    sources, starts = np.unique(incoming_wire["source"], return_index=True)
    offsets = np.concatenate([starts, [len(incoming_wire)]]).astype(np.int64)
    if incoming_wire.size:
        assert int(incoming_wire["delay"].max()) <= genspec.d_max_steps, \
            "generated delay exceeds D_max"
    incoming = IncomingSynapses(
        sources=sources.astype(np.uint64),
        offsets=offsets,
        target_local=pmap.local_index_of(
            rank, incoming_wire["target"].astype(np.int64)).astype(np.uint32),
        delay=incoming_wire["delay"].copy(),
        weight=incoming_wire["weight"].copy(),
    )
    del incoming_wire

    directory = ConnectivityDirectory(
        rank=rank, size=size,
        target_workers=np.flatnonzero(np.asarray(out_counts) > 0),
        source_workers=np.flatnonzero(np.asarray(in_counts) > 0),
        incoming_counts=np.asarray(in_counts, dtype=np.int64),
    )
    _check_directory_symmetry(transport, directory)

    n_in = incoming.n_synapses
    steady_bytes = 12 * n_in + incoming.index_bytes()
    stats = ConstructionStats(
        n_generated=n_generated,
        n_incoming=n_in,
        steady_bytes=steady_bytes,
        peak_bytes=max(peak_bytes, steady_bytes + 16 * n_in),
        wire_bytes_sent=wire_bytes_sent,
        checksum=checksum,
        wall_seconds=time.perf_counter() - t0,
    )
    return WorkerNetwork(rank=rank, pmap=pmap, incoming=incoming,
                         directory=directory, source_masks=source_masks,
                         stats=stats)


def _check_directory_symmetry(transport: Transport,
                              directory: ConnectivityDirectory) -> None:
    """Cross-check: w1 lists w2 as target iff w2 lists w1 as source."""
    size = transport.size
    am_target = [1 if np.isin(w, directory.target_workers) else 0
                 for w in range(size)]
    their_view = transport.alltoall_words(am_target)
    for w in range(size):
        expect = 1 if np.isin(w, directory.source_workers) else 0
        if their_view[w] != expect:
            raise TransportError(
                f"directory asymmetry between workers {w} and "
                f"{directory.rank}: target={their_view[w]} source={expect}")


@dataclass
class DeliveryCounters:
    """Per-call accounting used by the protocol conservation checks."""

    spikes_sent: int = 0
    spikes_received: int = 0
    payload_messages_sent: int = 0
    payload_messages_received: int = 0
    counter_words_sent: int = 0
    payload_bytes_sent: int = 0


def deliver_spikes(transport: Transport, t_step: int,
                   outgoing: Dict[int, np.ndarray],
                   directory: ConnectivityDirectory,
                   counters: Optional[DeliveryCounters] = None
                   ) -> List[Tuple[int, np.ndarray]]:
    """Two-phase AER spike exchange for one timestep (collective call).

    ``outgoing`` maps directory target workers to AER_DTYPE arrays
    sorted ascending by (emission time, source gid); missing keys mean
    no spikes for that pair.  Phase 1 sends one u32 counter to every
    directory target, zero allowed.  Phase 2 sends payloads only where
    the counter is positive.  Returns (source worker, events) for every
    directory source, zero-length arrays included.

    Raises ProtocolViolation when a payload length disagrees with its
    announced counter, naming the pair and the timestep.
    """
    rank = transport.rank
    empty = np.empty(0, dtype=AER_DTYPE)

    for w in directory.target_workers:
        msg = outgoing.get(int(w))
        n = 0 if msg is None else len(msg)
        transport.send(int(w), np.uint32(n).tobytes())
        if counters:
            counters.counter_words_sent += 1
            counters.spikes_sent += n
    for w in directory.target_workers:
        msg = outgoing.get(int(w))
        if msg is not None and len(msg):
            transport.send(int(w), msg.tobytes())
            if counters:
                counters.payload_messages_sent += 1
                counters.payload_bytes_sent += msg.nbytes

    announced = []
    for w in directory.source_workers:
        word = transport.recv(int(w))
        announced.append(int(np.frombuffer(word, dtype="<u4")[0]))
    incoming: List[Tuple[int, np.ndarray]] = []
    for w, n in zip(directory.source_workers, announced):
        if n == 0:
            incoming.append((int(w), empty))
            continue
        payload = transport.recv(int(w))
        if len(payload) != n * AER_DTYPE.itemsize:
            raise ProtocolViolation(
                f"step {t_step}: worker {int(w)} -> {rank} announced {n} "
                f"spikes but sent {len(payload)} bytes")
        events = np.frombuffer(payload, dtype=AER_DTYPE)
        incoming.append((int(w), events))
        if counters:
            counters.payload_messages_received += 1
            counters.spikes_received += n
    return incoming
