"""Command-line front end.

Subcommands: ensemble | scan | feasibility | event-sim | cross-check.
Exit codes: 0 success, 1 runtime failure, 2 configuration problem (bad
flags, unreadable or inconsistent config files).  Every file written
carries the run manifest as comment lines; pinning --timestamp makes
outputs byte-reproducible for a given seed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .ensemble import (
    class_probabilities,
    density_grid,
    mean_final_p2,
    mean_population_curve,
    regime_scan,
    run_ensemble,
    weighted_ks_distance,
)
from .errors import ConfigurationError, DegenerateMeasurementError
from .events import (
    EventParams,
    comparison_process,
    cross_check,
    energy_readout_from_events,
    estimate_sigma,
    longest_valid_run,
    run_event_ensemble,
    run_event_trajectory,
)
from .io import (
    Manifest,
    float_list,
    load_run_settings,
    load_setup,
    write_density_csv,
    write_density_pgm,
    write_event_csv,
    write_records_csv,
    write_table_csv,
    write_text,
)
from .readout import ReadoutClass, ReadoutCurve, write_curve_csv
from .scattering import derived_dipoles, feasibility_report


def _uint64(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {raw!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_common(parser, with_out=True):
    parser.add_argument("--seed", type=_uint64, default=0,
                        help="master seed (u64, default 0)")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: FUZZWATCH_THREADS or 1)")
    parser.add_argument("--timestamp", default=None,
                        help="pin the manifest timestamp (ISO text) for "
                             "byte-reproducible outputs")
    if with_out:
        parser.add_argument("--out", default=".",
                            help="output directory (default: current)")


def _manifest(subcommand, args, config_paths) -> Manifest:
    return Manifest(subcommand=subcommand, config_paths=tuple(config_paths),
                    master_seed=args.seed, out_dir=args.out,
                    timestamp=args.timestamp or "")


def _outpath(args, name) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _emit(path):
    print(f"wrote {path}")


# -- ensemble ------------------------------------------------------------------


def cmd_ensemble(args) -> int:
    settings = load_run_settings(args.config)
    manifest = _manifest("ensemble", args, [args.config])
    result = run_ensemble(settings.config, process=settings.process,
                          n=args.n, master_seed=args.seed, mode=args.mode,
                          smoothing_window=settings.smoothing_window,
                          threads=args.threads)
    probs = class_probabilities(result)
    mean, se = mean_final_p2(result)
    proc = result.process
    lines = [
        f"n = {result.n}",
        f"mode = {result.mode}",
        f"ess = {result.ess:.6g}",
        f"prior_mean = {proc.mean:.6g}",
        f"prior_stddev = {proc.stddev:.6g}",
        f"prior_correlation_time = {proc.correlation_time:.6g}",
        f"prior_bounds = {proc.bounds[0]:.6g} {proc.bounds[1]:.6g}",
        f"smoothing_window = {result.smoothing_window:.6g}",
    ]
    lines += [f"P({cls.value}) = {p:.6g} +- {err:.6g}"
              for cls, (p, err) in probs.items()]
    lines.append(f"mean_final_p2 = {mean:.6g} +- {se:.6g}")
    path = _outpath(args, "summary.txt")
    write_text(path, manifest, lines)
    _emit(path)
    path = _outpath(args, "records.csv")
    write_records_csv(path, manifest, result)
    _emit(path)
    selections = (("all", None), ("E12", ReadoutClass.E12), ("E11", ReadoutClass.E11))
    for field in ("readout", "population"):
        for tag, cls in selections:
            grid = density_grid(result, field=field, readout_class=cls)
            path = _outpath(args, f"density_{field}_{tag}.csv")
            write_density_csv(path, manifest, grid)
            _emit(path)
            path = _outpath(args, f"density_{field}_{tag}.pgm")
            write_density_pgm(path, manifest, grid)
            _emit(path)
    for line in lines:
        print(line)
    return 0


# -- scan ----------------------------------------------------------------------


def cmd_scan(args) -> int:
    settings = load_run_settings(args.config)
    tlr_values = float_list(args.tlr_list, what="--tlr-list")
    if len(tlr_values) < 2:
        raise ConfigurationError("--tlr-list needs at least two values to scan")
    manifest = _manifest("scan", args, [args.config])
    rabi = settings.config.rabi_period
    ratios = [4.0 * math.pi * t / rabi for t in tlr_values]
    rows = regime_scan(settings.config, ratios, n=args.n,
                       master_seed=args.seed, process=settings.process,
                       threads=args.threads)
    columns = [
        ("t_lr", tlr_values),
        ("fuzziness_ratio", [r["fuzziness_ratio"] for r in rows]),
        ("kappa", [r["kappa"] for r in rows]),
        ("mean_final_p2", [r["mean_final_p2"] for r in rows]),
        ("se", [r["se"] for r in rows]),
        ("ess", [r["ess"] for r in rows]),
        ("n", [r["n"] for r in rows]),
    ]
    extra = ["t_lr in drive-period time units; fuzziness_ratio = 4*pi*t_lr/T_Rabi",
             "mean_final_p2: weighted mean final upper-level occupation"]
    path = _outpath(args, "scan.csv")
    write_table_csv(path, manifest, columns, extra_header=extra)
    _emit(path)
    print("t_lr  ratio  mean_final_p2  se  ess")
    for t, row in zip(tlr_values, rows):
        print(f"{t:.6g}  {row['fuzziness_ratio']:.6g}  "
              f"{row['mean_final_p2']:.6g}  {row['se']:.3g}  {row['ess']:.4g}")
    return 0


# -- feasibility ---------------------------------------------------------------


def cmd_feasibility(args) -> int:
    setup = load_setup(args.setup)
    report = feasibility_report(setup, transition_time=args.transition_time,
                                level_splitting_ev=args.level_splitting_ev)
    derived = derived_dipoles(setup)
    lines = [
        f"sigma0 = {report.sigma0:.6g} cm ({report.sigma0 * 1e-2:.6g} m)",
        f"chi = {report.chi:.6g} cm",
        f"gamma = {report.gamma:.6g}",
        f"born_ratio = {report.born:.6g}",
        f"electron_velocity = {report.electron_velocity:.6g} cm/s",
        f"rate_scale_g = {report.rate_scale:.6g} 1/(cm s)",
        f"arrival_rate_gq = {report.arrival_rate:.6g} 1/s",
        f"deflection_rate_F = {report.deflection_rate:.6g} 1/s",
        f"sigma0_over_beam_width = {report.sigma0_over_width:.6g}",
        f"level_resolution_time = {report.level_resolution_time:.6g} s",
        f"fuzziness_ratio = {report.fuzziness_ratio:.6g} "
        f"(transition_time = {args.transition_time:.6g} s)",
        f"events_per_pulse_FT = {report.events_per_pulse:.6g}",
        f"collimation_product = {report.collimation_product:.6g}",
        f"selectivity_target = {report.selectivity_target:.6g}",
    ]
    for name, ok in report.checks.items():
        lines.append(f"{'PASS' if ok else 'WARN'} {name}")
    if derived.delta_d == 0.0:
        lines.append("WARN measurement conveys no information (delta_d = 0)")
    for note in report.notes:
        lines.append(f"note: {note}")
    for line in lines:
        print(line)
    if args.out is not None:
        manifest = _manifest("feasibility", args, [args.setup])
        path = _outpath(args, "feasibility.txt")
        write_text(path, manifest, lines)
        _emit(path)
    return 0


# -- event-sim -----------------------------------------------------------------


def cmd_event_sim(args) -> int:
    settings = load_run_settings(args.config)
    cfg = settings.config
    paths = [args.config] + ([args.setup] if args.setup else [])
    manifest = _manifest("event-sim", args, paths)
    if args.setup:
        if args.time_unit is None:
            raise ConfigurationError(
                "--time-unit (seconds per config time unit) is required "
                "with a setup file")
        params = EventParams.from_setup(load_setup(args.setup), args.time_unit)
    else:
        if cfg.kappa == 0.0:
            raise ConfigurationError(
                "config has kappa = 0, so there is no resolution time to "
                "match; give a setup file instead")
        params = EventParams.matched_to_fuzziness(
            cfg.level_resolution_time, args.dd_ratio, args.sigma0_over_q)

    ensemble = run_event_ensemble(cfg, params, n=args.n,
                                  master_seed=args.seed, threads=args.threads)
    trajectory = run_event_trajectory(cfg, params, master_seed=args.seed, index=0)
    path = _outpath(args, "events.csv")
    write_event_csv(path, manifest, trajectory)
    _emit(path)

    recon = estimate_sigma(trajectory, window=args.window, n_min=args.n_min)
    notes = []
    try:
        curve = energy_readout_from_events(recon, params, cfg.e1, cfg.e2)
    except DegenerateMeasurementError:
        if params.chi != 0.0:
            raise
        lo, hi = longest_valid_run(recon.valid)
        if hi - lo < 2:
            raise
        curve = ReadoutCurve(recon.times[lo:hi], np.full(hi - lo, cfg.e_mid))
        notes.append("levels scatter identically (delta_d = 0); the readout "
                     "carries no information and is pinned at the midline")
    path = _outpath(args, "readout_events.csv")
    write_curve_csv(path, curve, header_lines=manifest.header_lines() + notes)
    _emit(path)

    times, event_mean = ensemble.mean_population_curve()
    path = _outpath(args, "mean_population.csv")
    write_table_csv(path, manifest, [("time", times), ("mean_p2", event_mean)])
    _emit(path)

    # curve-model prediction at the event process's resolution time
    t_lr = params.resolution_time()
    kappa = 0.0 if math.isinf(t_lr) else 1.0 / (t_lr * cfg.delta_e**2)
    matched = replace(cfg, kappa=kappa)
    rpi = run_ensemble(matched, process=comparison_process(matched),
                       n=args.n, master_seed=args.seed, threads=args.threads)
    _, rpi_mean = mean_population_curve(rpi)
    rms = float(np.sqrt(np.mean((event_mean - rpi_mean) ** 2)))
    ks = weighted_ks_distance(rpi.final_p2, rpi.weights,
                              ensemble.final_p2, np.ones(ensemble.n))
    path = _outpath(args, "comparison.csv")
    write_table_csv(path, manifest,
                    [("time", times), ("event_mean_p2", event_mean),
                     ("rpi_mean_p2", rpi_mean)],
                    footer=[f"rms_gap = {rms:.17g}", f"ks_final = {ks:.17g}"])
    _emit(path)

    lines = [
        f"n = {ensemble.n}",
        f"d0 = {params.d0:.6g}",
        f"delta_d = {params.delta_d:.6g}",
        f"sigma0 = {params.sigma0:.6g}",
        f"beam_width = {params.beam_width:.6g}",
        f"arrival_rate = {params.arrival_rate:.6g}",
        f"level_resolution_time = {t_lr:.6g}",
        f"matched_kappa = {kappa:.6g}",
        f"window = {recon.window:.6g}",
        f"n_min = {recon.n_min}",
        f"event_mean_final_p2 = {float(event_mean[-1]):.6g}",
        f"rpi_mean_final_p2 = {float(rpi_mean[-1]):.6g}",
        f"rms_gap = {rms:.6g}",
        f"ks_final = {ks:.6g}",
    ] + notes
    path = _outpath(args, "summary.txt")
    write_text(path, manifest, lines)
    _emit(path)
    for line in lines:
        print(line)
    return 0


# -- cross-check ---------------------------------------------------------------


def cmd_cross_check(args) -> int:
    settings = load_run_settings(args.config)
    manifest = _manifest("cross-check", args, [args.config])
    result = cross_check(settings.config, n=args.n, master_seed=args.seed,
                         dd_ratio=args.dd_ratio,
                         sigma0_over_q=args.sigma0_over_q,
                         process=settings.process, threads=args.threads)
    path = _outpath(args, "comparison.csv")
    write_table_csv(path, manifest,
                    [("time", result.times),
                     ("curve_mean_p2", result.curve_mean_p2),
                     ("event_mean_p2", result.event_mean_p2)],
                    footer=[f"rms_gap = {result.rms_gap:.17g}",
                            f"ks_final = {result.ks_final:.17g}"])
    _emit(path)
    proc = result.process
    lines = [
        f"n = {result.n}",
        f"arrival_rate = {result.params.arrival_rate:.6g}",
        f"delta_d = {result.params.delta_d:.6g}",
        f"sigma0_over_q = {result.params.sigma0 / result.params.beam_width:.6g}",
        f"level_resolution_time = {result.params.resolution_time():.6g}",
        f"prior_mean = {proc.mean:.6g}",
        f"prior_stddev = {proc.stddev:.6g}",
        f"prior_correlation_time = {proc.correlation_time:.6g}",
        f"prior_bounds = {proc.bounds[0]:.6g} {proc.bounds[1]:.6g}",
        f"curve_ess = {result.curve_ess:.6g}",
        f"rms_gap = {result.rms_gap:.6g}",
        f"ks_final = {result.ks_final:.6g}",
    ]
    path = _outpath(args, "summary.txt")
    write_text(path, manifest, lines)
    _emit(path)
    for line in lines:
        print(line)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzzwatch",
        description="Continuous fuzzy monitoring of a driven two-level "
                    "system: readout ensembles, regime scans, and the "
                    "electron-scattering event simulation.")
    parser.add_argument("--version", action="version",
                        version=f"fuzzwatch {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ensemble", help="run a readout ensemble and export "
                                        "summary, records and density grids")
    p.add_argument("config", help="measurement run file")
    p.add_argument("--n", type=_positive_int, default=2000)
    p.add_argument("--mode", choices=("guided", "prior"), default="guided")
    _add_common(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("scan", help="mean transition probability across "
                                    "level-resolution times")
    p.add_argument("config", help="measurement run file")
    p.add_argument("--tlr-list", required=True,
                   help="comma-separated resolution times in drive-period "
                        "units ('inf' = no monitoring)")
    p.add_argument("--n", type=_positive_int, default=2000)
    _add_common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("feasibility", help="derived numbers and go/no-go "
                                           "checks for a physical setup")
    p.add_argument("setup", help="scattering setup file (SI units)")
    p.add_argument("--transition-time", type=float, default=1e-6,
                   help="drive pulse duration in seconds (default 1e-6)")
    p.add_argument("--level-splitting-ev", type=float, default=1e-5,
                   help="level splitting the filter must resolve (default 1e-5)")
    p.add_argument("--out", default=None,
                   help="also write feasibility.txt into this directory")
    p.add_argument("--seed", type=_uint64, default=0, help=argparse.SUPPRESS)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=argparse.SUPPRESS)
    p.add_argument("--timestamp", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("event-sim", help="discrete scattering-event Monte "
                                         "Carlo with readout reconstruction")
    p.add_argument("config", help="measurement run file")
    p.add_argument("setup", nargs="?", default=None,
                   help="optional scattering setup file; omitted = event "
                        "process matched to the config's resolution time")
    p.add_argument("--time-unit", type=float, default=None,
                   help="seconds per config time unit (required with setup)")
    p.add_argument("--n", type=_positive_int, default=500)
    p.add_argument("--window", type=float, default=None,
                   help="sliding estimation window (default: pulse/5)")
    p.add_argument("--n-min", type=_positive_int, default=20)
    p.add_argument("--dd-ratio", type=float, default=0.05)
    p.add_argument("--sigma0-over-q", type=float, default=0.01)
    _add_common(p)
    p.set_defaults(func=cmd_event_sim)

    p = sub.add_parser("cross-check", help="curve-model vs event-model "
                                           "comparison at matched resolution")
    p.add_argument("config", help="measurement run file")
    p.add_argument("--n", type=_positive_int, default=2000)
    p.add_argument("--dd-ratio", type=float, default=0.05)
    p.add_argument("--sigma0-over-q", type=float, default=0.01)
    _add_common(p)
    p.set_defaults(func=cmd_cross_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DegenerateMeasurementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
