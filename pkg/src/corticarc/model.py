"""Leaky integrate-and-fire neurons with spike-frequency adaptation.

Membrane potential V and fatigue c evolve between synaptic events as

    dV/dt = -(V - E)/tau_m - g_c * c / C_m
    dc/dt = -c / tau_c

and a synaptic spike arriving at time t adds its weight to V
instantaneously.  When V crosses the threshold V_theta the neuron emits
a spike, V is reset to V_r for an absolute refractory period tau_arp,
and c is incremented by alpha_c (the adaptation kick; inhibitory
neurons have adaptation disabled).

Because the free dynamics always decays toward E < V_theta and the
adaptation current only hyperpolarizes, threshold crossings can only
happen at input times, so the solver is purely event-driven: closed-form
decay between events, instantaneous jumps at events.

This module holds the scalar reference operations plus ``NeuronBlock``,
the struct-of-arrays twin the engine uses; both share the same closed
form and are cross-checked in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "NeuronParams",
    "NeuronState",
    "SpikeEvent",
    "SynapseRecord",
    "decay_state",
    "apply_synaptic_input",
    "integrate_input_queue",
    "NeuronBlock",
]


@dataclass(frozen=True)
class NeuronParams:
    """Constants of the membrane/fatigue equations for one population.

    Defaults are engine defaults chosen for a generic cortical
    excitatory cell; they are not measured values and every one of them
    can be overridden per population in the run config.
    """

    tau_m: float = 20.0        # membrane time constant, ms
    C_m: float = 1.0           # membrane capacitance, model units
    E: float = -65.0           # resting potential, mV
    tau_c: float = 150.0       # fatigue decay time, ms
    g_c: float = 0.5           # fatigue->membrane coupling, model units
    V_theta: float = -50.0     # spike threshold, mV
    V_r: float = -65.0         # reset potential, mV
    tau_arp: float = 2.0       # absolute refractory period, ms
    alpha_c: float = 1.0       # fatigue increment per emitted spike
    is_excitatory: bool = True

    def __post_init__(self):
        if self.tau_m <= 0 or self.tau_c <= 0 or self.C_m <= 0:
            raise ValueError("tau_m, tau_c and C_m must be positive")
        if self.tau_arp < 0:
            raise ValueError("tau_arp must be non-negative")
        if not (self.V_r < self.V_theta):
            raise ValueError("V_r must lie below V_theta")
        if not (self.E < self.V_theta):
            raise ValueError("E must lie below V_theta (no spontaneous firing)")
        if not self.is_excitatory:
            # Adaptation is an excitatory-cell mechanism here; inhibitory
            # populations run with the fatigue branch switched off.
            object.__setattr__(self, "g_c", 0.0)
            object.__setattr__(self, "alpha_c", 0.0)

    @property
    def sfa_over_cm(self) -> float:
        """Effective fatigue-to-voltage gain g_c / C_m."""
        return self.g_c / self.C_m


@dataclass
class NeuronState:
    """Dynamic state of a single neuron."""

    V: float                       # membrane potential, mV
    c: float = 0.0                 # fatigue variable, >= 0
    last_update: float = 0.0       # time the state refers to, ms
    refractory_until: float = -math.inf   # end of current refractory window, ms


@dataclass(frozen=True)
class SpikeEvent:
    """Address-event pair: who spiked and exactly when."""

    source_neuron: int
    emission_time: float


@dataclass(frozen=True)
class SynapseRecord:
    """One synapse as stored at the target side.

    ``delay`` is an integer number of timesteps; the persistent storage
    cost of (target, delay, weight, flags) is accounted as 12 bytes.
    """

    target_neuron: int
    delay: int
    weight: float


def _voltage_decay(V, c, dt, E, tau_m, tau_c, sfa_over_cm):
    """Closed-form free evolution of (V, c) over dt >= 0.

    The fatigue coupling integrates to c * f(dt) with

        f(dt) = tau_m*tau_c/(tau_c - tau_m) * (e^{-dt/tau_c} - e^{-dt/tau_m})

    which cancels catastrophically as tau_c -> tau_m.  With
    x = dt*(tau_c - tau_m)/(tau_m*tau_c) the same quantity is
    dt*e^{-dt/tau_m}*expm1(x)/x, exact in the confluent limit x -> 0 but
    overflowing for huge dt.  We use the expm1 form for |x| <= 1 and the
    plain difference elsewhere; both are well conditioned on their side
    of the split.  Accepts scalars or arrays.
    """
    dt = np.asarray(dt, dtype=np.float64)
    em = np.exp(-dt / tau_m)
    ec = np.exp(-dt / tau_c)
    x = dt * (tau_c - tau_m) / (tau_m * tau_c)
    small = np.abs(x) <= 1.0
    xs = np.where(x == 0.0, 1.0, x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        f_small = np.where(x == 0.0, dt * em,
                           dt * em * np.expm1(np.where(small, x, 0.0)) / xs)
        f_large = dt * (ec - em) / xs
    f = np.where(small, f_small, f_large)
    V_out = E + (V - E) * em - sfa_over_cm * c * f
    c_out = c * ec
    return V_out, c_out


def decay_state(state: NeuronState, params: NeuronParams, dt: float) -> NeuronState:
    """Advance a state by dt of free (input-less) dynamics.

    Pure exponential relaxation: c decays with tau_c, V relaxes toward E
    with tau_m while the fatigue current drags it down.  The caller
    guarantees no synaptic event falls inside the window; refractory
    clamping is the integrator's job, not this primitive's.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    V, c = _voltage_decay(state.V, state.c, dt, params.E, params.tau_m,
                          params.tau_c, params.sfa_over_cm)
    return replace(state, V=float(V), c=float(c),
                   last_update=state.last_update + dt)


def apply_synaptic_input(
    state: NeuronState,
    params: NeuronParams,
    weight: float,
    t: float,
) -> Tuple[NeuronState, Optional[SpikeEvent]]:
    """Apply one instantaneous synaptic jump at time t.

    The state must already be decayed to t.  Inputs landing inside the
    refractory window are discarded (V held at V_r).  A threshold
    crossing emits a spike, resets V, opens a new refractory window and
    bumps the fatigue variable.
    """
    if t < state.refractory_until:
        return replace(state, V=params.V_r, last_update=t), None
    V = state.V + weight
    if V > params.V_theta:
        spike = SpikeEvent(source_neuron=-1, emission_time=t)
        new = replace(state, V=params.V_r, c=state.c + params.alpha_c,
                      last_update=t, refractory_until=t + params.tau_arp)
        return new, spike
    return replace(state, V=V, last_update=t), None


def _advance_exact(state: NeuronState, params: NeuronParams, t: float) -> NeuronState:
    """Advance to t with the refractory clamp handled piecewise.

    c decays over the whole window; V is pinned at V_r until the
    refractory window closes and only then resumes free evolution.
    """
    if t < state.last_update:
        raise ValueError("time runs backwards")
    if t < state.refractory_until:
        c = state.c * math.exp(-(t - state.last_update) / params.tau_c)
        return replace(state, V=params.V_r, c=c, last_update=t)
    free_from = max(state.last_update, min(state.refractory_until, t))
    if state.last_update < state.refractory_until:
        c = state.c * math.exp(-(free_from - state.last_update) / params.tau_c)
        st = replace(state, V=params.V_r, c=c, last_update=free_from)
    else:
        st = state
    return decay_state(st, params, t - st.last_update)


def integrate_input_queue(
    state: NeuronState,
    params: NeuronParams,
    events: Sequence[Tuple[float, float]],
    t_end: Optional[float] = None,
) -> Tuple[NeuronState, List[SpikeEvent]]:
    """Drive one neuron through a time-sorted queue of (time, weight) inputs.

    Alternates closed-form decay with instantaneous jumps; optionally
    settles to t_end after the last input.  Ties must already be broken
    by the caller (ascending source id); unsorted input is a contract
    violation and is asserted in debug runs.
    """
    if __debug__:
        times = [t for t, _ in events]
        assert all(t0 <= t1 for t0, t1 in zip(times, times[1:])), \
            "input queue must be sorted by time"
    spikes: List[SpikeEvent] = []
    for t, w in events:
        state = _advance_exact(state, params, t)
        state, spike = apply_synaptic_input(state, params, w, t)
        if spike is not None:
            spikes.append(spike)
    if t_end is not None and t_end > state.last_update:
        state = _advance_exact(state, params, t_end)
    return state, spikes


class NeuronBlock:
    """Struct-of-arrays state for all neurons owned by one worker.

    Mirrors the scalar operations exactly but processes one "event
    round" (the k-th input of every neuron that has one) per vector
    sweep, which is what makes millisecond steps over 10^4..10^5 neurons
    tractable.
    """

    def __init__(self, exc_params: NeuronParams, inh_params: NeuronParams,
                 is_excitatory: np.ndarray):
        n = len(is_excitatory)
        self.n = n
        self.is_excitatory = np.asarray(is_excitatory, dtype=bool)
        inh = ~self.is_excitatory

        def per_neuron(attr):
            out = np.full(n, getattr(exc_params, attr), dtype=np.float64)
            out[inh] = getattr(inh_params, attr)
            return out

        self.tau_m = per_neuron("tau_m")
        self.tau_c = per_neuron("tau_c")
        self.E = per_neuron("E")
        self.V_theta = per_neuron("V_theta")
        self.V_r = per_neuron("V_r")
        self.tau_arp = per_neuron("tau_arp")
        self.alpha_c = per_neuron("alpha_c")
        self.sfa = per_neuron("g_c") / per_neuron("C_m")

        self.V = self.E.copy()
        self.c = np.zeros(n)
        self.last_t = np.zeros(n)
        self.refr_until = np.full(n, -np.inf)

    def set_potentials(self, V: np.ndarray) -> None:
        self.V[:] = V

    def advance(self, idx: np.ndarray, t: np.ndarray) -> None:
        """Vectorized twin of the piecewise refractory-aware decay."""
        V = self.V[idx]
        c = self.c[idx]
        last = self.last_t[idx]
        ru = self.refr_until[idx]
        in_refr = t < ru
        free_from = np.minimum(np.maximum(last, ru), t)
        c_s = c * np.exp(-(free_from - last) / self.tau_c[idx])
        V_s = np.where(last < ru, self.V_r[idx], V)
        dt = t - free_from
        V_t, c_t = _voltage_decay(V_s, c_s, dt, self.E[idx], self.tau_m[idx],
                                  self.tau_c[idx], self.sfa[idx])
        self.V[idx] = np.where(in_refr, self.V_r[idx], V_t)
        self.c[idx] = c_t
        self.last_t[idx] = t

    def integrate_sorted(
        self,
        tgt: np.ndarray,
        t_ev: np.ndarray,
        w_ev: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Integrate events already sorted by (target, time, tie-break).

        Returns (spiking neuron indices, emission times), in the order
        the spikes were produced within this call.
        """
        if len(tgt) == 0:
            return (np.empty(0, dtype=np.int64), np.empty(0))
        if __debug__:
            same = tgt[1:] == tgt[:-1]
            assert np.all(t_ev[1:][same] >= t_ev[:-1][same]), \
                "per-neuron input queues must be time-sorted"
        counts = np.bincount(tgt, minlength=self.n)
        with_events = np.flatnonzero(counts)
        base = np.zeros(self.n, dtype=np.int64)
        base[with_events] = np.concatenate(
            ([0], np.cumsum(counts[with_events])[:-1]))
        k = counts[with_events]
        max_k = int(k.max())

        spike_idx: List[np.ndarray] = []
        spike_t: List[np.ndarray] = []
        for r in range(max_k):
            sel = k > r
            idx = with_events[sel]
            ev = base[idx] + r
            t = t_ev[ev]
            self.advance(idx, t)
            not_refr = t >= self.refr_until[idx]
            # refractory neurons discard the input and stay clamped at V_r
            V = np.where(not_refr, self.V[idx] + w_ev[ev], self.V_r[idx])
            crossed = not_refr & (V > self.V_theta[idx])
            V = np.where(crossed, self.V_r[idx], V)
            self.V[idx] = V
            if np.any(crossed):
                who = idx[crossed]
                when = t[crossed]
                self.c[who] += self.alpha_c[who]
                self.refr_until[who] = when + self.tau_arp[who]
                spike_idx.append(who)
                spike_t.append(when)
        if spike_idx:
            return np.concatenate(spike_idx), np.concatenate(spike_t)
        return (np.empty(0, dtype=np.int64), np.empty(0))

    def settle(self, t: float) -> None:
        """Advance every neuron to a common time (end-of-run bookkeeping)."""
        self.advance(np.arange(self.n), np.full(self.n, float(t)))
