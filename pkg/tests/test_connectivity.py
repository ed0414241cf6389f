"""Kernels, stencils, analytic fanout, and synapse generation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corticarc.connectivity import (
    FLAG_EXC_SOURCE,
    SYNAPSE_DTYPE,
    GridSpec,
    KernelSpec,
    SynapseGenSpec,
    column_outgoing_synapses,
    compute_stencil,
    expected_fanout,
    expected_fanout_at,
    generate_outgoing_synapses,
    grid_totals,
    kernel_probability,
)

GAUSS = KernelSpec.gaussian()
EXP = KernelSpec.exponential()
REF_GRID = GridSpec(nx=24, ny=24, neurons_per_column=1240)


class TestKernel:
    def test_gaussian_value_at_sigma(self):
        # 0.05 * exp(-1/2)
        assert kernel_probability(GAUSS, 100.0) == pytest.approx(
            0.030326532985631672, rel=1e-12)

    def test_exponential_value_at_lambda(self):
        # 0.03 * exp(-1)
        assert kernel_probability(EXP, 290.0) == pytest.approx(
            0.011036383235143269, rel=1e-12)

    def test_gaussian_far_tail(self):
        assert kernel_probability(GAUSS, 400.0) == pytest.approx(
            0.05 * math.exp(-8.0), rel=1e-12)

    def test_rejects_zero_distance(self):
        with pytest.raises(ValueError):
            kernel_probability(GAUSS, 0.0)

    def test_cutoff_distance_inverts_kernel(self):
        for k in (GAUSS, EXP):
            r = k.cutoff_distance()
            assert kernel_probability(k, r) == pytest.approx(k.cutoff_p,
                                                             rel=1e-9)

    def test_cutoff_distances(self):
        assert GAUSS.cutoff_distance() == pytest.approx(279.71, abs=0.01)
        assert EXP.cutoff_distance() == pytest.approx(986.35, abs=0.01)

    def test_cutoff_above_amplitude_collapses_stencil(self):
        k = KernelSpec(kind="gaussian", amplitude_A=0.05, scale=100.0,
                       cutoff_p=0.06)
        assert k.cutoff_distance() == 0.0
        st = compute_stencil(k, REF_GRID)
        assert st.radius == 0
        offs, probs = st.active()
        assert len(offs) == 0

    def test_validation(self):
        with pytest.raises(ValueError):
            KernelSpec(kind="bogus", amplitude_A=0.05, scale=100.0)
        with pytest.raises(ValueError):
            KernelSpec(kind="gaussian", amplitude_A=0.0, scale=100.0)
        with pytest.raises(ValueError):
            KernelSpec(kind="gaussian", amplitude_A=0.05, scale=-1.0)


class TestStencil:
    def test_gaussian_box_7x7(self):
        st_ = compute_stencil(GAUSS, REF_GRID)
        assert st_.radius == 3
        assert st_.shape == (7, 7)

    def test_exponential_box_21x21(self):
        st_ = compute_stencil(EXP, REF_GRID)
        assert st_.radius == 10
        assert st_.shape == (21, 21)

    def test_active_cell_counts(self):
        # corners of the gaussian box fall outside the cutoff circle
        offs, _ = compute_stencil(GAUSS, REF_GRID).active()
        assert len(offs) == 20
        offs, _ = compute_stencil(EXP, REF_GRID).active()
        assert len(offs) == 300

    def test_center_excluded(self):
        offs, _ = compute_stencil(GAUSS, REF_GRID).active()
        assert not (offs == 0).all(axis=1).any()

    def test_probabilities_match_kernel(self):
        st_ = compute_stencil(EXP, REF_GRID)
        offs, probs = st_.active()
        r = 100.0 * np.hypot(offs[:, 0], offs[:, 1])
        assert np.allclose(probs, kernel_probability(EXP, r), rtol=1e-12)

    @staticmethod
    def _box(stencil):
        r = stencil.radius
        m = np.zeros(stencil.shape)
        m[stencil.offsets[:, 1] + r,
          stencil.offsets[:, 0] + r] = stencil.probabilities
        return m

    def test_eight_fold_symmetry(self):
        # p depends only on distance: all 8 square symmetries preserved
        m = self._box(compute_stencil(GAUSS, REF_GRID))
        assert np.allclose(m, m[::-1, :])
        assert np.allclose(m, m[:, ::-1])
        assert np.allclose(m, m.T)

    def test_below_cutoff_cells_are_exactly_zero(self):
        m = self._box(compute_stencil(GAUSS, REF_GRID))
        assert m[0, 0] == 0.0          # corner at r = 3*sqrt(2)*100 um
        assert np.all(m[m > 0] >= GAUSS.cutoff_p)


class TestFanout:
    def test_gaussian_interior_budget(self):
        fan = expected_fanout(GAUSS, REF_GRID)
        assert fan.local == pytest.approx(991.2, abs=0.05)
        assert fan.remote_excitatory == pytest.approx(315.9, abs=0.05)
        assert fan.remote_average == pytest.approx(252.7, abs=0.05)
        assert fan.average_total == pytest.approx(1243.9, abs=0.1)

    def test_exponential_interior_budget(self):
        fan = expected_fanout(EXP, REF_GRID)
        assert fan.local == pytest.approx(991.2, abs=0.05)
        assert fan.remote_average == pytest.approx(1309.8, abs=0.1)
        assert fan.average_total == pytest.approx(2301.0, abs=0.1)

    def test_border_clipping_strictly_reduces_remote(self):
        corner = expected_fanout_at(GAUSS, REF_GRID, 0)
        interior = expected_fanout(GAUSS, REF_GRID)
        assert corner.remote_excitatory < interior.remote_excitatory
        assert corner.local == interior.local

    def test_interior_column_matches_unclipped(self):
        mid = REF_GRID.column_index(12, 12)
        at = expected_fanout_at(GAUSS, REF_GRID, mid)
        fan = expected_fanout(GAUSS, REF_GRID)
        assert at.average_total == pytest.approx(fan.average_total, rel=1e-12)


class TestGridTotals:
    # forecast table: (nx, kernel) -> (neurons M, synapses G)
    TABLE = {
        (24, "gaussian"): (0.7142, 0.8762),
        (24, "exponential"): (0.7142, 1.4320),
        (48, "gaussian"): (2.8570, 3.5292),
        (48, "exponential"): (2.8570, 6.1374),
        (96, "gaussian"): (11.4278, 14.1660),
        (96, "exponential"): (11.4278, 25.4089),
    }

    @pytest.mark.parametrize("key", sorted(TABLE))
    def test_forecast_table(self, key):
        n, kind = key
        neurons_m, synapses_g = self.TABLE[key]
        grid = GridSpec(nx=n, ny=n, neurons_per_column=1240)
        kernel = GAUSS if kind == "gaussian" else EXP
        tot = grid_totals(kernel, grid)
        assert tot.n_neurons / 1e6 == pytest.approx(neurons_m, abs=5e-5)
        assert tot.total_synapses / 1e9 == pytest.approx(synapses_g, abs=5e-5)

    def test_kernel_cost_ratio_at_24(self):
        grid = GridSpec(nx=24, ny=24, neurons_per_column=1240)
        ratio = (grid_totals(EXP, grid).total_synapses
                 / grid_totals(GAUSS, grid).total_synapses)
        assert ratio == pytest.approx(1.6343, abs=5e-4)

    def test_single_column_grid_is_local_only(self):
        grid = GridSpec(nx=1, ny=1, neurons_per_column=100)
        tot = grid_totals(GAUSS, grid)
        assert tot.remote_synapses == 0.0
        assert tot.local_synapses == pytest.approx(100 * 0.8 * 99)


class TestGridSpec:
    def test_gid_layout_roundtrip(self):
        grid = GridSpec(nx=6, ny=5, neurons_per_column=40)
        for col in (0, 7, 29):
            lo, hi = grid.gid_range(col)
            assert hi - lo == 40
            gids = np.arange(lo, hi)
            assert np.all(grid.column_of(gids) == col)
            assert np.array_equal(grid.local_index(gids), np.arange(40))

    def test_excitatory_split(self):
        grid = GridSpec(nx=2, ny=2, neurons_per_column=40)
        gids = np.arange(grid.n_neurons)
        exc = grid.is_excitatory(gids)
        # 80/20 split within each column, excitatory first
        assert exc.reshape(4, 40)[:, :32].all()
        assert not exc.reshape(4, 40)[:, 32:].any()

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(nx=0, ny=4, neurons_per_column=10)
        with pytest.raises(ValueError):
            GridSpec(nx=4, ny=4, neurons_per_column=10,
                     excitatory_fraction=1.5)


class TestGeneration:
    GRID = GridSpec(nx=6, ny=5, neurons_per_column=40)
    GEN = SynapseGenSpec(j_exc_exc=1.0, j_exc_inh=1.0,
                         j_inh_exc=-4.0, j_inh_inh=-4.0)

    def _gen(self, gid, seed=3, kernel=GAUSS):
        return generate_outgoing_synapses(gid, self.GRID, kernel,
                                          self.GEN, seed)

    def test_record_layout(self):
        assert SYNAPSE_DTYPE.itemsize == 12
        syn = self._gen(5)
        assert syn.dtype == SYNAPSE_DTYPE

    def test_bit_identical_regeneration(self):
        a, b = self._gen(17), self._gen(17)
        assert np.array_equal(a, b)

    def test_different_sources_differ(self):
        assert not np.array_equal(self._gen(17), self._gen(18))

    def test_no_autapses(self):
        for gid in (0, 5, 39, 40, 1199):
            assert not np.any(self._gen(gid)["target"] == gid)

    def test_no_duplicate_targets(self):
        for gid in (0, 21, 800):
            tgt = self._gen(gid)["target"]
            assert len(np.unique(tgt)) == len(tgt)

    def test_targets_in_grid(self):
        tgt = self._gen(100)["target"]
        assert np.all(tgt < self.GRID.n_neurons)

    def test_delays_in_range(self):
        for gid in range(0, 200, 7):
            d = self._gen(gid)["delay"]
            assert np.all(d >= 1)
            assert np.all(d <= self.GEN.d_max_steps)

    def test_exponential_delay_kind_also_bounded(self):
        gen = SynapseGenSpec(delay_kind="exponential")
        syn = generate_outgoing_synapses(8, self.GRID, GAUSS, gen, 3)
        assert np.all((syn["delay"] >= 1) & (syn["delay"] <= gen.d_max_steps))

    def test_weight_sign_follows_population(self):
        exc_gid = 0                      # first neuron is excitatory
        inh_gid = 39                     # last neuron of column is inhibitory
        assert np.all(self._gen(exc_gid)["weight"] >= 0)
        assert np.all(self._gen(inh_gid)["weight"] <= 0)

    def test_flags_mark_source_population(self):
        assert np.all(self._gen(0)["flags"] & FLAG_EXC_SOURCE)
        assert not np.any(self._gen(39)["flags"] & FLAG_EXC_SOURCE)

    def test_inhibitory_projects_only_locally(self):
        syn = self._gen(39)
        assert np.all(self.GRID.column_of(syn["target"]) == 0)

    def test_excitatory_reaches_neighbor_columns(self):
        # center column, plenty of remote candidates
        col = self.GRID.column_index(3, 2)
        lo, _ = self.GRID.gid_range(col)
        syn = self._gen(lo)
        assert len(np.unique(self.GRID.column_of(syn["target"]))) > 1

    def test_column_batch_matches_per_gid(self):
        col = 7
        batch = dict(column_outgoing_synapses(col, self.GRID, GAUSS,
                                              self.GEN, 3))
        lo, hi = self.GRID.gid_range(col)
        assert sorted(batch) == list(range(lo, hi))
        for gid in range(lo, hi):
            assert np.array_equal(batch[gid], self._gen(gid))

    def test_weight_mean_tracks_target_population(self):
        gen = SynapseGenSpec(j_exc_exc=0.4, j_exc_inh=0.8,
                             j_inh_exc=-1.6, j_inh_inh=-1.6)
        grid = GridSpec(nx=1, ny=1, neurons_per_column=1240)
        syn = generate_outgoing_synapses(0, grid, GAUSS, gen, 3)
        exc_tgt = grid.is_excitatory(syn["target"].astype(np.int64))
        w = syn["weight"]
        assert w[exc_tgt].mean() == pytest.approx(0.4, rel=0.1)
        assert w[~exc_tgt].mean() == pytest.approx(0.8, rel=0.1)

    def test_local_fanout_monte_carlo(self):
        # local out-degree is Binomial(n-1, 0.8) per source
        grid = GridSpec(nx=1, ny=1, neurons_per_column=200)
        gen = self.GEN
        counts = [len(generate_outgoing_synapses(g, grid, GAUSS, gen, 5))
                  for g in range(200)]
        mean = np.mean(counts)
        expect = 0.8 * 199
        sd = math.sqrt(199 * 0.8 * 0.2 / 200)
        assert abs(mean - expect) < 4 * sd

    @given(seed=st.integers(0, 2**31 - 1), gid=st.integers(0, 1199))
    @settings(max_examples=25, deadline=None)
    def test_generation_invariants_hold_for_any_source(self, seed, gid):
        syn = generate_outgoing_synapses(gid, self.GRID, GAUSS,
                                         self.GEN, seed)
        assert not np.any(syn["target"] == gid)
        assert np.all(syn["target"] < self.GRID.n_neurons)
        assert np.all((syn["delay"] >= 1)
                      & (syn["delay"] <= self.GEN.d_max_steps))
        exc = self.GRID.is_excitatory(np.int64(gid))
        assert np.all(syn["weight"] >= 0) if exc \
            else np.all(syn["weight"] <= 0)


class TestGenSpecValidation:
    def test_rejects_wrong_signs(self):
        with pytest.raises(ValueError):
            SynapseGenSpec(j_exc_exc=-0.4)
        with pytest.raises(ValueError):
            SynapseGenSpec(j_inh_exc=1.6)

    def test_rejects_bad_delay_bounds(self):
        with pytest.raises(ValueError):
            SynapseGenSpec(delay_min_ms=5.0, delay_max_ms=2.0)

    def test_rejects_unknown_delay_kind(self):
        with pytest.raises(ValueError):
            SynapseGenSpec(delay_kind="bimodal")
