"""Command-line entry point: ``qmemsim <subcommand> ...``.

Experiment subcommands take an optional JSON config, write CSV tables into
``--out-dir`` and print the JSON summary to stdout. Calculator subcommands
(``etalon``, ``thermal``, ``fidelity``) take unit-suffixed flags.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .exceptions import NumericalError, QMemError
from .fidelity import RailPair, combined_fidelity, measurement_fidelity, snr_single_photon
from .filters import (EtalonSpec, ThermalParams, airy_transmission, band_suppression_db,
                      cascade_insertion_loss_db, cascade_suppression_db, fit_thermal, load_stack,
                      read_room_csv, relative_std, transmission_trace)

logger = logging.getLogger("qmemsim")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3

#: Subcommand -> harness experiment id.
EXPERIMENT_COMMANDS = {
    "eit-scan": "eit-scan", "store": "store", "optimize-pulse": "optimize-pulse",
    "decay": "storage-decay", "fit-decay": "decay-fit", "pressure-sweep": "pressure-sweep",
    "od-sweep": "od-sweep", "bandwidth-sweep": "bandwidth-sweep", "single-photon": "single-photon",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _print_json(obj):
    sys.stdout.write(harness.dumps(obj) + "\n")


def _add_common(p):
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def _add_experiment_args(p):
    p.add_argument("--config", type=Path, help="JSON experiment config (defaults used when omitted)")
    p.add_argument("--out-dir", type=Path, default=None, help="directory for CSV/JSON outputs")
    p.add_argument("--seed", type=int, default=None, help="override the config RNG seed")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for sweeps (default: QMEMSIM_JOBS or cores)")
    _add_common(p)


def _add_etalon_args(p):
    p.add_argument("--stack", type=Path, help="JSON list of etalons")
    p.add_argument("--fsr-ghz", type=float, help="free spectral range of a single etalon")
    p.add_argument("--finesse", type=float, help="finesse of a single etalon")
    p.add_argument("--linewidth-mhz", type=float, help="linewidth of a single etalon (instead of finesse)")
    p.add_argument("--peak-transmission", type=float, default=1.0)


def build_parser():
    parser = _Parser(prog="qmemsim", description="Warm-vapour EIT quantum memory simulator")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, exp in EXPERIMENT_COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {exp} experiment")
        _add_experiment_args(p)
        if name == "fit-decay":
            p.add_argument("--data", type=Path, help="CSV with columns w_m,P_torr,T1e_s")

    p = sub.add_parser("etalon", help="etalon / cascade transmission and suppression")
    _add_etalon_args(p)
    p.add_argument("--detuning-ghz", type=float, required=True, help="detuning from the comb line")
    p.add_argument("--band-width-mhz", type=float, help="also report band-averaged suppression over this width")
    _add_common(p)

    p = sub.add_parser("thermal", help="etalon drift driven by a room-temperature trace, or step-response fit")
    _add_etalon_args(p)
    p.add_argument("--room-csv", type=Path, help="room trace CSV with columns t_seconds,temp_kelvin")
    p.add_argument("--xi", type=float, help="thermal isolation factor (dimensionless)")
    p.add_argument("--tau-s", type=float, help="thermal time constant")
    p.add_argument("--probe-detuning-mhz", type=float, default=0.0)
    p.add_argument("--thermal-tuning-mhz-per-k", type=float, default=None)
    p.add_argument("--reference", default="first", help="room reference: first, mean, or a value in kelvin")
    p.add_argument("--step-csv", type=Path, help="fit (xi, tau) to a step response with columns t_seconds,dT_kelvin")
    p.add_argument("--room-step-k", type=float, help="room temperature step used for --step-csv")
    p.add_argument("--out-dir", type=Path, default=None, help="directory for the transmission trace CSV")
    _add_common(p)

    p = sub.add_parser("fidelity", help="measurement and operation fidelity")
    p.add_argument("--snr", type=float, help="single-photon signal-to-noise ratio")
    p.add_argument("--snr-measured", type=float, help="SNR measured with --mean-photons input photons")
    p.add_argument("--mean-photons", type=float, help="mean input photon number of --snr-measured")
    p.add_argument("--transmission-ratio", type=float, help="dual-rail intensity transmission ratio")
    p.add_argument("--phase-rad", type=float, default=0.0, help="dual-rail differential phase")
    p.add_argument("--digits", type=int, default=4, help="decimal places in the output")
    _add_common(p)
    return parser


def _setup_logging(verbosity):
    level = logging.WARNING - 10 * min(verbosity, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _run_experiment(args):
    exp = EXPERIMENT_COMMANDS[args.command]
    if args.config is not None:
        raw = harness.load_config_json(args.config)
    else:
        raw = {"experiment": exp}
        if exp == "single-photon":
            raw["seed"] = 0
    # the override must be in place before validation, which may require a seed
    if args.seed is not None and isinstance(raw, dict):
        raw = {**raw, "seed": args.seed}
    cfg = harness.ExperimentConfig.from_dict(raw, experiment=exp)
    if exp == "decay-fit":
        data = harness.read_decay_csv(args.data) if args.data is not None else None
        result = harness.run_decay_fit(cfg, data)
    else:
        result = harness.run_experiment(cfg, jobs=args.jobs)
    out_dir = args.out_dir if args.out_dir is not None else cfg.get("outputs", "dir", ".")
    harness.write_outputs(result, cfg, out_dir)
    _print_json(result.summary)


def _single_etalon(args):
    if args.fsr_ghz is None:
        raise UsageError("give --stack or --fsr-ghz with --finesse/--linewidth-mhz")
    if (args.finesse is None) == (args.linewidth_mhz is None):
        raise UsageError("give exactly one of --finesse or --linewidth-mhz")
    kw = {"peak_transmission": args.peak_transmission}
    if getattr(args, "thermal_tuning_mhz_per_k", None) is not None:
        kw["thermal_tuning"] = args.thermal_tuning_mhz_per_k * 1e6
    if args.finesse is not None:
        return EtalonSpec(args.fsr_ghz * 1e9, args.finesse, **kw)
    return EtalonSpec.from_linewidth(args.fsr_ghz * 1e9, args.linewidth_mhz * 1e6, **kw)


def _stack_from_args(args):
    if args.stack is not None:
        if args.fsr_ghz is not None:
            raise UsageError("--stack and --fsr-ghz are mutually exclusive")
        try:
            return load_stack(args.stack)
        except OSError as exc:
            raise harness.ConfigError(f"{args.stack}: cannot read stack ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise harness.ConfigError(f"{args.stack}: invalid JSON ({exc})") from None
    return [_single_etalon(args)]


def _run_etalon(args):
    stack = _stack_from_args(args)
    det = args.detuning_ghz * 1e9
    out = {
        "detuning_ghz": args.detuning_ghz,
        "transmission": float(np.prod([airy_transmission(e, det) for e in stack])),
        "suppression_db": cascade_suppression_db(stack, det),
        "insertion_loss_db": cascade_insertion_loss_db(stack),
        "etalons": [{"fsr_ghz": e.fsr / 1e9, "finesse": e.finesse, "fwhm_mhz": e.fwhm / 1e6,
                     "suppression_db": cascade_suppression_db([e], det)} for e in stack],
    }
    if args.band_width_mhz is not None:
        out["band_width_mhz"] = args.band_width_mhz
        out["band_suppression_db"] = band_suppression_db(stack, det, args.band_width_mhz * 1e6)
    _print_json(out)


def _run_thermal(args):
    if args.step_csv is not None:
        if args.room_step_k is None:
            raise UsageError("--step-csv needs --room-step-k")
        data = np.genfromtxt(args.step_csv, delimiter=",", names=True)
        names = data.dtype.names or ()
        if set(names) != {"t_seconds", "dT_kelvin"}:
            raise harness.ConfigError(f"{args.step_csv}: expected columns t_seconds,dT_kelvin; got {names}")
        trace = np.column_stack([np.atleast_1d(data["t_seconds"]), np.atleast_1d(data["dT_kelvin"])])
        _, _, rep = fit_thermal(trace, args.room_step_k)
        _print_json(rep.to_dict())
        return
    if args.room_csv is None:
        raise UsageError("thermal needs --room-csv (drift) or --step-csv (fit)")
    if args.xi is None or args.tau_s is None:
        raise UsageError("--room-csv needs --xi and --tau-s")
    stack = _stack_from_args(args)
    if len(stack) != 1:
        raise harness.ConfigError("thermal drift is computed for a single etalon")
    ref = args.reference
    if ref not in ("first", "mean"):
        try:
            ref = float(ref)
        except ValueError:
            raise harness.ConfigError(f"--reference: expected first, mean or kelvin, got {ref!r}") from None
    tp = ThermalParams(args.xi, args.tau_s)
    trace = transmission_trace(stack[0], tp, read_room_csv(args.room_csv), args.probe_detuning_mhz * 1e6, ref)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        harness.write_table(args.out_dir / "thermal_transmission.csv", ("t_seconds", "transmission"),
                            [tuple(r) for r in trace.tolist()])
    tr = trace[:, 1]
    _print_json({"relative_std": relative_std(trace), "mean": float(tr.mean()), "min": float(tr.min()),
                 "max": float(tr.max()), "samples": int(tr.size)})


def _run_fidelity(args):
    if (args.snr is None) == (args.snr_measured is None):
        raise UsageError("give exactly one of --snr or --snr-measured")
    if args.snr is not None:
        snr = args.snr
    else:
        if args.mean_photons is None:
            raise UsageError("--snr-measured needs --mean-photons")
        snr = snr_single_photon(args.snr_measured, args.mean_photons)
    digits = args.digits

    def r(x):
        return round(float(x), digits)

    f_m = measurement_fidelity(snr)
    out = {"f_m": r(f_m)}
    if args.snr is None:
        out["snr_single_photon"] = r(snr)
    if args.transmission_ratio is not None:
        rail = RailPair(args.transmission_ratio, args.phase_rad)
        out["f_o"] = r(rail.f_o)
        out["fidelity"] = r(combined_fidelity(rail.f_o, f_m))
    elif args.phase_rad:
        raise UsageError("--phase-rad needs --transmission-ratio")
    sys.stdout.write(json.dumps(out) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        _setup_logging(args.verbose)
        if args.command in EXPERIMENT_COMMANDS:
            _run_experiment(args)
        elif args.command == "etalon":
            _run_etalon(args)
        elif args.command == "thermal":
            _run_thermal(args)
        elif args.command == "fidelity":
            _run_fidelity(args)
        return EXIT_OK
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (QMemError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
