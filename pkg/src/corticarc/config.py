"""Run configuration: INI-style files, validation, overrides, echo.

A config file has up to eight sections ([grid], [kernel], [neuron],
[synapse], [external], [run], [transport], [output]); every key is
named after the corresponding model parameter.  Physical quantities
must carry their unit suffix (ms, um, Hz, mV, s) and the suffix is
checked at parse time; counts and ratios are bare numbers.  Unknown
sections or keys are hard errors: a typo must never silently fall back
to a default.

``echo_config`` renders the fully resolved settings back to INI text;
the echo is written next to every report so any result can be re-run
from its own provenance.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from .connectivity import GridSpec, KernelSpec, SynapseGenSpec
from .engine import ExternalInputSpec, SimConfig
from .model import NeuronParams

__all__ = [
    "ConfigError",
    "RunSettings",
    "parse_config",
    "load_config",
    "echo_config",
    "default_config_text",
]


class ConfigError(ValueError):
    """Invalid configuration file or overrides (CLI exit code 2)."""


@dataclass(frozen=True)
class RunSettings:
    """Fully resolved settings: the SimConfig plus orchestration knobs."""

    sim: SimConfig
    workers: int = 1
    transport_backend: str = "inprocess"       # inprocess | multiprocess
    transport_timeout_s: float = 60.0
    output_dir: Optional[str] = None
    write_raster: bool = False
    write_figures: bool = True


# (unit, converter); unit None means a bare number or word
_UNIT_KEYS: Dict[Tuple[str, str], Optional[str]] = {
    ("grid", "nx"): None,
    ("grid", "ny"): None,
    ("grid", "neurons_per_column"): None,
    ("grid", "excitatory_fraction"): None,
    ("grid", "spacing_alpha"): "um",
    ("kernel", "kind"): None,
    ("kernel", "amplitude_A"): None,
    ("kernel", "scale"): "um",
    ("kernel", "cutoff_p"): None,
    ("kernel", "local_p"): None,
    ("neuron", "tau_m"): "ms",
    ("neuron", "C_m"): None,
    ("neuron", "E"): "mV",
    ("neuron", "tau_c"): "ms",
    ("neuron", "g_c"): None,
    ("neuron", "V_theta"): "mV",
    ("neuron", "V_r"): "mV",
    ("neuron", "tau_arp"): "ms",
    ("neuron", "alpha_c"): None,
    ("synapse", "j_exc_exc"): "mV",
    ("synapse", "j_exc_inh"): "mV",
    ("synapse", "j_inh_exc"): "mV",
    ("synapse", "j_inh_inh"): "mV",
    ("synapse", "weight_sd_frac"): None,
    ("synapse", "delay_kind"): None,
    ("synapse", "delay_min"): "ms",
    ("synapse", "delay_max"): "ms",
    ("synapse", "delay_mean"): "ms",
    ("synapse", "d_max_steps"): None,
    ("external", "synapses_per_neuron"): None,
    ("external", "rate_per_synapse"): "Hz",
    ("external", "weight"): "mV",
    ("run", "timestep"): "ms",
    ("run", "duration"): "s",
    ("run", "seed"): None,
    ("run", "record_raster"): None,
    ("run", "memory_budget_gb"): None,
    ("run", "workers"): None,
    ("transport", "backend"): None,
    ("transport", "timeout"): "s",
    ("output", "dir"): None,
    ("output", "raster"): None,
    ("output", "figures"): None,
}

_SECTIONS = sorted({s for s, _ in _UNIT_KEYS})


def _number(section: str, key: str, raw: str, unit: Optional[str]) -> float:
    """Parse a numeric value, enforcing the unit suffix when one applies."""
    text = raw.strip()
    if unit is not None:
        if not text.endswith(unit):
            raise ConfigError(
                f"[{section}] {key}: expected a value in {unit} "
                f"(e.g. '20 {unit}'), got {raw!r}")
        text = text[:-len(unit)].strip()
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: not a number: {raw!r}") from None


def _boolean(section: str, key: str, raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"[{section}] {key}: not a boolean: {raw!r}")


def parse_config(text: str) -> RunSettings:
    """Parse INI text into RunSettings; every problem raises ConfigError."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str    # keys are case-sensitive (amplitude_A, V_theta)
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"config syntax: {err}") from None

    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if (section, key) not in _UNIT_KEYS:
                raise ConfigError(f"unknown key '{key}' in [{section}]")

    def num(section, key, default):
        if cp.has_option(section, key):
            return _number(section, key, cp[section][key],
                           _UNIT_KEYS[(section, key)])
        return default

    def word(section, key, default):
        return cp[section][key].strip() if cp.has_option(section, key) else default

    def flag(section, key, default):
        if cp.has_option(section, key):
            return _boolean(section, key, cp[section][key])
        return default

    try:
        grid = GridSpec(
            nx=int(num("grid", "nx", 12)),
            ny=int(num("grid", "ny", 12)),
            neurons_per_column=int(num("grid", "neurons_per_column", 124)),
            excitatory_fraction=num("grid", "excitatory_fraction", 0.8),
            spacing_alpha=num("grid", "spacing_alpha", 100.0),
        )
        kind = word("kernel", "kind", "gaussian")
        if kind == "gaussian":
            default_A, default_scale = 0.05, 100.0
        elif kind == "exponential":
            default_A, default_scale = 0.03, 290.0
        else:
            raise ConfigError(f"[kernel] kind: unknown kernel {kind!r}")
        kernel = KernelSpec(
            kind=kind,
            amplitude_A=num("kernel", "amplitude_A", default_A),
            scale=num("kernel", "scale", default_scale),
            cutoff_p=num("kernel", "cutoff_p", 1e-3),
            local_p=num("kernel", "local_p", 0.8),
        )
        timestep = num("run", "timestep", 1.0)
        genspec = SynapseGenSpec(
            j_exc_exc=num("synapse", "j_exc_exc", 1.0),
            j_exc_inh=num("synapse", "j_exc_inh", 1.0),
            j_inh_exc=num("synapse", "j_inh_exc", -4.0),
            j_inh_inh=num("synapse", "j_inh_inh", -4.0),
            weight_sd_frac=num("synapse", "weight_sd_frac", 0.25),
            delay_kind=word("synapse", "delay_kind", "uniform"),
            delay_min_ms=num("synapse", "delay_min", 1.0),
            delay_max_ms=num("synapse", "delay_max", 8.0),
            delay_mean_ms=num("synapse", "delay_mean", 3.0),
            timestep_ms=timestep,
            d_max_steps=int(num("synapse", "d_max_steps", 8)),
        )
        neuron_common = dict(
            tau_m=num("neuron", "tau_m", 20.0),
            C_m=num("neuron", "C_m", 1.0),
            E=num("neuron", "E", -65.0),
            tau_c=num("neuron", "tau_c", 150.0),
            g_c=num("neuron", "g_c", 0.5),
            V_theta=num("neuron", "V_theta", -50.0),
            V_r=num("neuron", "V_r", -65.0),
            tau_arp=num("neuron", "tau_arp", 2.0),
            alpha_c=num("neuron", "alpha_c", 1.0),
        )
        external = ExternalInputSpec(
            synapses_per_neuron=num("external", "synapses_per_neuron", 80.0),
            rate_per_synapse_hz=num("external", "rate_per_synapse", 20.0),
            weight_mv=num("external", "weight", 0.5),
        )
        sim = SimConfig(
            grid=grid, kernel=kernel, genspec=genspec,
            exc_params=NeuronParams(is_excitatory=True, **neuron_common),
            inh_params=NeuronParams(is_excitatory=False, **neuron_common),
            external=external,
            timestep_ms=timestep,
            duration_s=num("run", "duration", 1.0),
            seed=int(num("run", "seed", 1)),
            record_raster=True,
            memory_budget_bytes=int(num("run", "memory_budget_gb", 4.0)
                                    * (1 << 30)),
        )
        backend = word("transport", "backend", "inprocess")
        if backend not in ("inprocess", "multiprocess"):
            raise ConfigError(f"[transport] backend: unknown {backend!r}")
        return RunSettings(
            sim=sim,
            workers=int(num("run", "workers", 1)),
            transport_backend=backend,
            transport_timeout_s=num("transport", "timeout", 60.0),
            output_dir=word("output", "dir", None),
            write_raster=flag("output", "raster", False),
            write_figures=flag("output", "figures", True),
        )
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None


def load_config(path: str) -> RunSettings:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None


def echo_config(settings: RunSettings) -> str:
    """Resolved settings as canonical INI text (provenance record)."""
    sim = settings.sim
    g, k, gs, ex = sim.grid, sim.kernel, sim.genspec, sim.external
    p = sim.exc_params
    out = io.StringIO()

    def sec(name, pairs):
        out.write(f"[{name}]\n")
        for key, val in pairs:
            out.write(f"{key} = {val}\n")
        out.write("\n")

    sec("grid", [("nx", g.nx), ("ny", g.ny),
                 ("neurons_per_column", g.neurons_per_column),
                 ("excitatory_fraction", g.excitatory_fraction),
                 ("spacing_alpha", f"{g.spacing_alpha} um")])
    sec("kernel", [("kind", k.kind), ("amplitude_A", k.amplitude_A),
                   ("scale", f"{k.scale} um"), ("cutoff_p", k.cutoff_p),
                   ("local_p", k.local_p)])
    sec("neuron", [("tau_m", f"{p.tau_m} ms"), ("C_m", p.C_m),
                   ("E", f"{p.E} mV"), ("tau_c", f"{p.tau_c} ms"),
                   ("g_c", p.g_c), ("V_theta", f"{p.V_theta} mV"),
                   ("V_r", f"{p.V_r} mV"), ("tau_arp", f"{p.tau_arp} ms"),
                   ("alpha_c", p.alpha_c)])
    sec("synapse", [("j_exc_exc", f"{gs.j_exc_exc} mV"),
                    ("j_exc_inh", f"{gs.j_exc_inh} mV"),
                    ("j_inh_exc", f"{gs.j_inh_exc} mV"),
                    ("j_inh_inh", f"{gs.j_inh_inh} mV"),
                    ("weight_sd_frac", gs.weight_sd_frac),
                    ("delay_kind", gs.delay_kind),
                    ("delay_min", f"{gs.delay_min_ms} ms"),
                    ("delay_max", f"{gs.delay_max_ms} ms"),
                    ("delay_mean", f"{gs.delay_mean_ms} ms"),
                    ("d_max_steps", gs.d_max_steps)])
    sec("external", [("synapses_per_neuron", ex.synapses_per_neuron),
                     ("rate_per_synapse", f"{ex.rate_per_synapse_hz} Hz"),
                     ("weight", f"{ex.weight_mv} mV")])
    sec("run", [("timestep", f"{sim.timestep_ms} ms"),
                ("duration", f"{sim.duration_s} s"),
                ("seed", sim.seed),
                ("workers", settings.workers),
                ("memory_budget_gb",
                 sim.memory_budget_bytes / (1 << 30))])
    sec("transport", [("backend", settings.transport_backend),
                      ("timeout", f"{settings.transport_timeout_s} s")])
    pairs = [("raster", str(settings.write_raster).lower()),
             ("figures", str(settings.write_figures).lower())]
    if settings.output_dir:
        pairs.insert(0, ("dir", settings.output_dir))
    sec("output", pairs)
    return out.getvalue()


def default_config_text() -> str:
    """A complete example config at desk scale."""
    return echo_config(parse_config(""))
