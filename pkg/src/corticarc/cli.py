"""Command line interface.

Subcommands:

* ``analyze``  stencil geometry, expected fanout, and network totals
  for the configured grid and kernel, without building anything.
* ``build``    construct the network only (duration 0) and report
  construction time and memory accounting per worker.
* ``run``      simulate; writes report.csv, config_echo.ini, and
  optionally raster.txt plus figures into the output directory.
* ``bench``    strong or weak scaling sweep over worker counts;
  writes scaling.csv and a scaling figure.
* ``sweep``    external drive calibration: mean firing rate as a
  function of the per-synapse external rate.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
faults (transport failures, memory budget, worker crashes).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import connectivity, engine, figures, metrics
from .config import ConfigError, RunSettings, echo_config, load_config, parse_config
from .transport import TransportError

__all__ = ["main"]


def _parse_duration(text: str) -> float:
    """Accept '10s', '10 s', '0.5s', or a bare number of seconds."""
    t = text.strip()
    if t.endswith("s"):
        t = t[:-1].strip()
    try:
        value = float(t)
    except ValueError:
        raise ConfigError(f"--duration: not a duration: {text!r}") from None
    if value < 0:
        raise ConfigError("--duration: must be >= 0")
    return value


def _parse_workers_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--workers: not a worker list: {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError("--workers: counts must be >= 1")
    return values


def _parse_grid(text: str):
    try:
        nx, ny = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"not a grid (expected NXxNY): {text!r}") from None
    return nx, ny


def _load_settings(args) -> RunSettings:
    settings = load_config(args.config) if args.config else parse_config("")
    sim = settings.sim
    if getattr(args, "seed", None) is not None:
        sim = replace(sim, seed=args.seed)
    if getattr(args, "duration", None) is not None:
        sim = replace(sim, duration_s=_parse_duration(args.duration))
    if getattr(args, "grid", None) is not None:
        nx, ny = _parse_grid(args.grid)
        sim = replace(sim, grid=replace(sim.grid, nx=nx, ny=ny))
    if getattr(args, "kernel", None) is not None:
        if args.kernel == "gaussian":
            kernel = connectivity.KernelSpec.gaussian()
        elif args.kernel == "exponential":
            kernel = connectivity.KernelSpec.exponential()
        else:
            raise ConfigError(f"--kernel: unknown kernel {args.kernel!r}")
        sim = replace(sim, kernel=kernel)
    settings = replace(settings, sim=sim)
    if getattr(args, "workers", None) is not None:
        counts = _parse_workers_list(args.workers)
        if len(counts) != 1:
            raise ConfigError("--workers: this command takes one count")
        settings = replace(settings, workers=counts[0])
    if getattr(args, "transport", None) is not None:
        if args.transport not in ("inprocess", "multiprocess"):
            raise ConfigError(f"--transport: unknown {args.transport!r}")
        settings = replace(settings, transport_backend=args.transport)
    if getattr(args, "output", None) is not None:
        settings = replace(settings, output_dir=args.output)
    return settings


def _ensure_output(settings: RunSettings) -> Optional[str]:
    if settings.output_dir is None:
        return None
    os.makedirs(settings.output_dir, exist_ok=True)
    return settings.output_dir


def _write_echo(settings: RunSettings, outdir: str) -> None:
    with open(os.path.join(outdir, "config_echo.ini"), "w") as fh:
        fh.write(echo_config(settings))


def _make_runner(settings: RunSettings):
    if settings.transport_backend == "multiprocess":
        return lambda cfg, k: engine.run_multiprocess(cfg, k)
    timeout = settings.transport_timeout_s
    return lambda cfg, k: engine.run(cfg, k, transport_timeout=timeout)


def _launch(settings: RunSettings) -> engine.RunResult:
    return _make_runner(settings)(settings.sim, settings.workers)


def _cmd_analyze(args) -> int:
    settings = _load_settings(args)
    sim = settings.sim
    grid, kernel = sim.grid, sim.kernel
    stencil = connectivity.compute_stencil(kernel, grid)
    fan = connectivity.expected_fanout(kernel, grid)
    totals = connectivity.grid_totals(kernel, grid)

    side = 2 * stencil.radius + 1
    print(f"grid {grid.nx}x{grid.ny}, {grid.neurons_per_column} "
          f"neurons/column ({grid.n_neurons} neurons)")
    print(f"kernel {kernel.kind}: A={kernel.amplitude_A}, "
          f"scale={kernel.scale} um, cutoff_p={kernel.cutoff_p}")
    print(f"cutoff distance {kernel.cutoff_distance():.2f} um "
          f"-> stencil {side}x{side} "
          f"({int(np.count_nonzero(stencil.probabilities))} active offsets)")
    print("expected fanout per source (interior column):")
    print(f"  local            {fan.local:10.1f}")
    print(f"  remote (exc src) {fan.remote_excitatory:10.1f}")
    print(f"  remote (average) {fan.remote_average:10.1f}")
    print(f"  total average    {fan.average_total:10.1f}")
    print("grid totals (border-clipped):")
    print(f"  neurons          {totals.n_neurons / 1e6:10.4f} M")
    print(f"  local synapses   {totals.local_synapses / 1e9:10.4f} G")
    print(f"  remote synapses  {totals.remote_synapses / 1e9:10.4f} G")
    print(f"  total synapses   {totals.total_synapses / 1e9:10.4f} G")
    print("memory forecast (12 B/synapse steady, 24 B/synapse build floor):")
    print(f"  steady           {totals.total_synapses * 12 / 2**30:10.2f} GiB")
    print(f"  build peak       {totals.total_synapses * 24 / 2**30:10.2f} GiB")

    outdir = _ensure_output(settings)
    if outdir is not None:
        with open(os.path.join(outdir, "stencil.txt"), "w") as fh:
            fh.write(connectivity.stencil_text_matrix(kernel, grid) + "\n")
        if settings.write_figures:
            figures.stencil_figure(kernel, grid,
                                   os.path.join(outdir, "stencil.png"))
        _write_echo(settings, outdir)
    return 0


def _cmd_build(args) -> int:
    settings = _load_settings(args)
    settings = replace(settings, sim=replace(settings.sim, duration_s=0.0))
    result = _launch(settings)
    report = metrics.report_from_run(result)
    print(f"built {report.recurrent_synapses} synapses on "
          f"{settings.workers} worker(s) in "
          f"{report.construction_seconds:.2f} s")
    for rank, (steady, peak) in enumerate(
            zip(result.steady_bytes_per_worker,
                result.peak_bytes_per_worker)):
        print(f"  worker {rank}: steady {steady} B, peak {peak} B")
    if report.recurrent_synapses:
        print(f"  per synapse: steady {report.bytes_per_synapse_steady:.2f} B,"
              f" peak {report.bytes_per_synapse_peak:.2f} B")
    outdir = _ensure_output(settings)
    if outdir is not None:
        with open(os.path.join(outdir, "report.csv"), "w") as fh:
            fh.write(metrics.emit_csv([metrics.scaling_row(report)]))
        _write_echo(settings, outdir)
    return 0


def _cmd_run(args) -> int:
    settings = _load_settings(args)
    result = _launch(settings)
    report = metrics.report_from_run(result)
    cost = metrics.normalized_cost(report)
    print(f"simulated {report.sim_seconds:.3f} s on {settings.workers} "
          f"worker(s) in {report.wall_seconds:.2f} s wall")
    print(f"  spikes {report.n_spikes}, mean rate "
          f"{report.mean_rate_hz:.2f} Hz")
    print(f"  events: recurrent {report.recurrent_events}, "
          f"external {report.external_events}")
    if cost is not None:
        print(f"  normalized cost {cost:.1f} ns/event")
    outdir = _ensure_output(settings)
    if outdir is not None:
        with open(os.path.join(outdir, "report.csv"), "w") as fh:
            fh.write(metrics.emit_csv([metrics.scaling_row(report)]))
        _write_echo(settings, outdir)
        if settings.write_raster:
            engine.write_raster(os.path.join(outdir, "raster.txt"),
                                result.raster_gids, result.raster_times)
        if settings.write_figures:
            figures.raster_figure(result.raster_gids, result.raster_times,
                                  settings.sim.grid,
                                  os.path.join(outdir, "raster.png"))
            stats = metrics.firing_rate_stats(
                result.raster_gids, result.raster_times,
                settings.sim.grid, settings.sim.duration_s)
            figures.rate_figure(stats, os.path.join(outdir, "rate.png"))
        print(f"  wrote {outdir}/")
    return 0


def _cmd_bench(args) -> int:
    # bench takes a worker list, not the single count _load_settings expects
    workers_text, args.workers = args.workers, None
    settings = _load_settings(args)
    counts = _parse_workers_list(workers_text) if workers_text else [1, 2, 4]
    if getattr(args, "base_grid", None) is not None:
        nx, ny = _parse_grid(args.base_grid)
        settings = replace(settings, sim=replace(
            settings.sim, grid=replace(settings.sim.grid, nx=nx, ny=ny)))
    table = metrics.scaling_harness(settings.sim, counts, mode=args.mode,
                                    runner=_make_runner(settings))
    csv_text = metrics.emit_csv(table.rows)
    print(csv_text, end="")
    for workers, message in table.failures:
        print(f"FAILED workers={workers}: {message}", file=sys.stderr)
    outdir = _ensure_output(settings)
    if outdir is not None:
        with open(os.path.join(outdir, "scaling.csv"), "w") as fh:
            fh.write(csv_text)
        if settings.write_figures and table.rows:
            figures.scaling_figure(table.rows,
                                   os.path.join(outdir, "scaling.png"))
        _write_echo(settings, outdir)
    if not table.rows:
        return 3
    return 0


def _cmd_sweep(args) -> int:
    settings = _load_settings(args)
    try:
        rates = [float(part) for part in args.rates.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--rates: not a rate list: {args.rates!r}") from None
    if not rates:
        raise ConfigError("--rates: at least one rate required")
    points = metrics.calibration_sweep(settings.sim, rates,
                                       runner=_make_runner(settings))
    lines = ["rate_per_synapse_hz,mean_rate_hz"]
    lines += [f"{drive!r},{rate!r}" for drive, rate in points]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    outdir = _ensure_output(settings)
    if outdir is not None:
        with open(os.path.join(outdir, "sweep.csv"), "w") as fh:
            fh.write(text)
        _write_echo(settings, outdir)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corticarc",
        description="columnar spiking network simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers_help="worker count"):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="override RNG seed")
        p.add_argument("--duration", help="override duration, e.g. 10s")
        p.add_argument("--grid", help="override grid, e.g. 12x12")
        p.add_argument("--kernel", help="override kernel: gaussian|exponential")
        p.add_argument("--workers", help=workers_help)
        p.add_argument("--transport", help="inprocess|multiprocess")
        p.add_argument("--output", help="output directory")

    p = sub.add_parser("analyze", help="stencil, fanout, and size forecast")
    common(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("build", help="construct only, report memory")
    common(p)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("run", help="simulate and write reports")
    common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", help="scaling sweep over worker counts")
    common(p, workers_help="comma list of worker counts, e.g. 1,2,4")
    p.add_argument("--mode", choices=("strong", "weak"), default="strong")
    p.add_argument("--base-grid", help="weak-scaling base grid, e.g. 6x6")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("sweep", help="external drive calibration")
    common(p)
    p.add_argument("--rates", required=True,
                   help="comma list of per-synapse rates in Hz")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (TransportError, engine.MemoryBudgetError) as err:
        print(f"runtime fault: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
