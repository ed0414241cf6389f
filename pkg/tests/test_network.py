"""Construction exchange and two-phase spike delivery."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from corticarc.connectivity import (
    GridSpec,
    KernelSpec,
    SynapseGenSpec,
    generate_outgoing_synapses,
)
from corticarc.network import (
    AER_DTYPE,
    WIRE_SYNAPSE_DTYPE,
    ConnectivityDirectory,
    DeliveryCounters,
    ProtocolViolation,
    construct_network,
    deliver_spikes,
    raster_checksum,
    synapse_wire_checksum,
)
from corticarc.partition import map_columns_to_workers
from corticarc.transport import InProcessGroup

GRID = GridSpec(nx=6, ny=5, neurons_per_column=20)
GAUSS = KernelSpec.gaussian()
GEN = SynapseGenSpec(j_exc_exc=1.0, j_exc_inh=1.0,
                     j_inh_exc=-4.0, j_inh_inh=-4.0)
SEED = 23


def build_networks(workers, grid=GRID, kernel=GAUSS, gen=GEN, seed=SEED):
    group = InProcessGroup(workers, timeout=30.0)
    pmap = map_columns_to_workers(grid, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(construct_network, grid, kernel, gen, pmap,
                               seed, group.endpoint(r))
                   for r in range(workers)]
        return [f.result(timeout=60) for f in futures]


class TestWireFormats:
    def test_wire_synapse_record_is_16_bytes(self):
        assert WIRE_SYNAPSE_DTYPE.itemsize == 16
        assert WIRE_SYNAPSE_DTYPE.names == ("source", "target", "delay",
                                            "flags", "weight")

    def test_aer_event_is_12_bytes(self):
        assert AER_DTYPE.itemsize == 12
        assert AER_DTYPE.names == ("source", "time")

    def test_little_endian_layout(self):
        for dt in (WIRE_SYNAPSE_DTYPE, AER_DTYPE):
            for name in dt.names:
                assert dt[name].byteorder in ("<", "|", "=")


class TestChecksums:
    def _records(self, n, seed=0):
        rng = np.random.default_rng(seed)
        rec = np.zeros(n, dtype=WIRE_SYNAPSE_DTYPE)
        rec["source"] = rng.integers(0, 1000, n)
        rec["target"] = rng.integers(0, 1000, n)
        rec["delay"] = rng.integers(1, 8, n)
        rec["weight"] = rng.normal(size=n).astype(np.float32)
        return rec

    def test_order_independent(self):
        rec = self._records(500)
        shuffled = rec[np.random.default_rng(1).permutation(len(rec))]
        assert synapse_wire_checksum(rec) == synapse_wire_checksum(shuffled)

    def test_splittable_by_addition(self):
        rec = self._records(500)
        whole = synapse_wire_checksum(rec)
        parts = (synapse_wire_checksum(rec[:123])
                 + synapse_wire_checksum(rec[123:])) % 2**64
        assert whole == parts

    def test_sensitive_to_content(self):
        rec = self._records(100)
        mod = rec.copy()
        mod["weight"][50] += 1e-3
        assert synapse_wire_checksum(rec) != synapse_wire_checksum(mod)

    def test_raster_checksum_order_independent(self):
        gids = np.arange(100, dtype=np.uint64)
        times = np.linspace(0, 10, 100)
        perm = np.random.default_rng(2).permutation(100)
        assert raster_checksum(gids, times) == raster_checksum(gids[perm],
                                                               times[perm])

    def test_raster_checksum_pairs_matter(self):
        gids = np.array([1, 2], dtype=np.uint64)
        times = np.array([1.0, 2.0])
        swapped = np.array([2.0, 1.0])
        assert raster_checksum(gids, times) != raster_checksum(gids, swapped)


class TestConstruction:
    def test_conservation_generated_equals_stored(self):
        for workers in (1, 2, 4):
            nets = build_networks(workers)
            generated = sum(n.stats.n_generated for n in nets)
            stored = sum(n.stats.n_incoming for n in nets)
            assert generated == stored

    def test_partition_invariant_checksum(self):
        sums = []
        for workers in (1, 2, 4):
            nets = build_networks(workers)
            sums.append(sum(n.stats.checksum for n in nets) % 2**64)
        assert sums[0] == sums[1] == sums[2]

    def test_generated_counts_match_generation(self):
        nets = build_networks(2)
        for net in nets:
            expect = sum(
                len(generate_outgoing_synapses(int(g), GRID, GAUSS, GEN,
                                               SEED))
                for g in net.pmap.owned_gids(net.rank))
            assert net.stats.n_generated == expect

    def test_incoming_fanout_matches_generation(self):
        nets = build_networks(4)
        # every source's synapses land somewhere, split across workers
        for gid in (0, 7, 153, 300, GRID.n_neurons - 1):
            expect = len(generate_outgoing_synapses(gid, GRID, GAUSS, GEN,
                                                    SEED))
            got = sum(int(n.incoming.fanout_of(np.array([gid]))[0])
                      for n in nets)
            assert got == expect

    def test_incoming_sorted_by_source(self):
        for net in build_networks(2):
            src = net.incoming.sources
            assert np.all(np.diff(src.astype(np.int64)) > 0)
            assert net.incoming.offsets[0] == 0
            assert net.incoming.offsets[-1] == net.incoming.n_synapses

    def test_rows_for_misses_give_minus_one(self):
        net = build_networks(1)[0]
        gids = np.array([GRID.n_neurons + 5, GRID.n_neurons + 6],
                        dtype=np.uint64)
        assert np.all(net.incoming.rows_for(gids) == -1)

    def test_steady_bytes_are_exactly_12_per_record_plus_index(self):
        for net in build_networks(2):
            n = net.stats.n_incoming
            assert net.stats.steady_bytes == 12 * n + net.incoming.index_bytes()

    def test_peak_at_least_24_per_synapse(self):
        for net in build_networks(2):
            assert net.stats.bytes_per_synapse_peak >= 24.0

    def test_directory_symmetry_across_group(self):
        nets = build_networks(4)
        for a in nets:
            for b in nets:
                a_sends_b = b.rank in a.directory.target_workers
                b_hears_a = a.rank in b.directory.source_workers
                assert a_sends_b == b_hears_a

    def test_directory_counts_match_stores(self):
        nets = build_networks(4)
        for net in nets:
            assert net.directory.incoming_counts.sum() == net.stats.n_incoming

    def test_all_pairs_reachable_on_adjacent_blocks(self):
        # 2x2 tiling of 24x24: blocks are 12 columns wide, the 7x7
        # stencil (radius 3) reaches only adjacent blocks, and all four
        # blocks are mutually adjacent, corners included
        grid = GridSpec(nx=24, ny=24, neurons_per_column=40)
        nets = build_networks(4, grid=grid)
        for net in nets:
            assert set(net.directory.target_workers.tolist()) == {0, 1, 2, 3}
            assert set(net.directory.source_workers.tolist()) == {0, 1, 2, 3}

    def test_strip_tiling_disconnects_distant_workers(self):
        # 8 strips of 3 columns on a 24-wide grid: radius 3 cannot jump
        # a 3-column strip, so worker 0 never reaches worker 2
        grid = GridSpec(nx=24, ny=1, neurons_per_column=40)
        nets = build_networks(8, grid=grid)
        assert 0 not in nets[3].directory.source_workers


def make_directory(rank, size, targets, sources, counts=None):
    return ConnectivityDirectory(
        rank=rank, size=size,
        target_workers=np.asarray(targets, dtype=np.int64),
        source_workers=np.asarray(sources, dtype=np.int64),
        incoming_counts=np.zeros(size, dtype=np.int64) if counts is None
        else np.asarray(counts),
    )


def aer(pairs):
    ev = np.zeros(len(pairs), dtype=AER_DTYPE)
    for i, (gid, t) in enumerate(pairs):
        ev[i] = (gid, t)
    return ev


class TestDelivery:
    def test_round_trip_content(self):
        group = InProcessGroup(2, timeout=10.0)
        # 0 -> 1 only
        d0 = make_directory(0, 2, targets=[1], sources=[])
        d1 = make_directory(1, 2, targets=[], sources=[0])
        ev = aer([(3, 1.25), (9, 1.5)])

        with ThreadPoolExecutor(max_workers=2) as pool:
            f0 = pool.submit(deliver_spikes, group.endpoint(0), 7,
                             {1: ev}, d0)
            f1 = pool.submit(deliver_spikes, group.endpoint(1), 7, {}, d1)
            assert f0.result(timeout=30) == []
            (src, got), = f1.result(timeout=30)
        assert src == 0
        assert np.array_equal(got, ev)

    def test_zero_counter_sends_no_payload(self):
        group = InProcessGroup(2, timeout=10.0)
        d0 = make_directory(0, 2, targets=[1], sources=[])
        d1 = make_directory(1, 2, targets=[], sources=[0])
        t0, t1 = group.endpoint(0), group.endpoint(1)

        with ThreadPoolExecutor(max_workers=2) as pool:
            pool.submit(deliver_spikes, t0, 1, {}, d0).result(timeout=30)
            (src, got), = pool.submit(deliver_spikes, t1, 1, {},
                                      d1).result(timeout=30)
        assert src == 0 and len(got) == 0
        assert t0.stats["frames_sent"] == 1          # the counter word only
        assert t0.stats["bytes_sent"] == 4

    def test_non_directory_pair_exchanges_nothing(self):
        group = InProcessGroup(3, timeout=10.0)
        dirs = [make_directory(0, 3, targets=[1], sources=[]),
                make_directory(1, 3, targets=[], sources=[0]),
                make_directory(2, 3, targets=[], sources=[])]
        ev = aer([(1, 0.5)])
        with ThreadPoolExecutor(max_workers=3) as pool:
            futures = [pool.submit(deliver_spikes, group.endpoint(r), 2,
                                   {1: ev} if r == 0 else {}, dirs[r])
                       for r in range(3)]
            results = [f.result(timeout=30) for f in futures]
        assert results[2] == []
        t2 = group.endpoint(2)
        assert t2.stats["frames_sent"] == 0
        assert t2.stats["frames_received"] == 0

    def test_counter_payload_mismatch_raises(self):
        group = InProcessGroup(2, timeout=10.0)
        d1 = make_directory(1, 2, targets=[], sources=[0])
        t0, t1 = group.endpoint(0), group.endpoint(1)
        # a lying sender: counter says 3, payload carries 2 events
        t0.send(1, np.uint32(3).tobytes())
        t0.send(1, aer([(1, 0.5), (2, 0.75)]).tobytes())
        with pytest.raises(ProtocolViolation) as err:
            deliver_spikes(t1, 5, {}, d1)
        msg = str(err.value)
        assert "step 5" in msg and "0" in msg and "3" in msg

    def test_counters_account_spikes(self):
        group = InProcessGroup(2, timeout=10.0)
        d0 = make_directory(0, 2, targets=[1], sources=[1])
        d1 = make_directory(1, 2, targets=[0], sources=[0])
        ev0 = aer([(1, 0.5), (2, 0.5), (3, 0.5)])
        ev1 = aer([(40, 0.25)])
        c0, c1 = DeliveryCounters(), DeliveryCounters()
        with ThreadPoolExecutor(max_workers=2) as pool:
            f0 = pool.submit(deliver_spikes, group.endpoint(0), 3,
                             {1: ev0}, d0, c0)
            f1 = pool.submit(deliver_spikes, group.endpoint(1), 3,
                             {0: ev1}, d1, c1)
            f0.result(timeout=30), f1.result(timeout=30)
        assert c0.spikes_sent == 3 and c1.spikes_sent == 1
        assert c0.spikes_received == 1 and c1.spikes_received == 3
        assert (c0.spikes_sent + c1.spikes_sent
                == c0.spikes_received + c1.spikes_received)
