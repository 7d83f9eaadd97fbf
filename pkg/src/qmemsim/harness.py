"""Experiment recipes composing the solver, shaping, dephasing, noise and filter models.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentResult` holding a table (written as CSV) and a summary
(written as JSON). All outputs are deterministic given the config and seed.

Config keys carry their unit in the name. ``*_2pi_mhz`` values are
multiplied by 2 pi x 1e6 to give rad/s; ``*_per_s`` values are rad/s.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import curve_fit

from .bloch import (auto_grid, default_nz, eit_scan, group_delay, simulate, storage_efficiency, write_record_csv)
from .core import (TWO_PI, ControlTiming, MediumSpec, ProbePulse, SimGrid,
                   gaussian_pulse, mhz, normalize, pulse_bandwidth, read_pulse_csv, square_pulse,
                   to_mhz, write_pulse_csv)
from .dephasing import (DiffusionParams, GradientParams, SpinWaveDecayRegressor, combined_decay,
                        storage_time_1e)
from .exceptions import DomainError, InvalidInputError, QMemError, RangeError
from .fidelity import (NoiseModel, RailPair, combined_fidelity, evaluate_window, simulate_counts,
                       window_tradeoff)
from .filters import etalon_from_dict
from .shaping import extraction_window, optimize_pulse, storable_seed

logger = logging.getLogger(__name__)

#: Excited-state hyperfine splitting of the Rb-87 D1 line, 2pi x MHz.
D1_HYPERFINE_SPLITTING_MHZ = 814.5


class ConfigError(InvalidInputError):
    """Invalid experiment configuration; the message names the offending key."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_NUM, _LIST, _INT, _STR, _BOOL, _ANY = "number", "list", "int", "str", "bool", "any"

SCHEMA = {
    "medium": {
        "od": _NUM, "gamma_e_2pi_mhz": _LIST, "level_offsets_2pi_mhz": _LIST, "coupling_signs": _LIST,
        "gamma_s0_per_s": _NUM, "gamma_s_density_coeff_per_s": _NUM, "buffer_pressure_torr": _NUM,
        "pressure_broadening_2pi_mhz_per_torr": _NUM,
    },
    "control": {
        "power_mw": _NUM, "rabi_2pi_mhz_per_sqrt_mw": _NUM, "off_time_us": _NUM, "on_time_us": _NUM,
        "ramp_time_ns": _NUM, "single_photon_detuning_2pi_mhz": _NUM, "two_photon_detuning_2pi_mhz": _NUM,
    },
    "pulse": {
        "kind": _STR, "fwhm_ns": _NUM, "center_us": _NUM, "dt_ns": _NUM, "duration_ns": _NUM,
        "path": _STR, "mean_photons": _NUM,
    },
    "grid": {"nz": _INT, "dt_ns": _NUM, "t_end_us": _NUM},
    "shaping": {"max_iters": _INT, "tol": _NUM, "seed_kind": _STR, "seed_duration_ns": _NUM, "enabled": _BOOL},
    "dephasing": {
        "w_mm": _NUM, "d0_cm2_per_s": _NUM, "p0_torr": _NUM, "b_prime_t_per_m": _NUM,
        "e_b_2pi_hz_per_t": _NUM, "cell_len_cm": _NUM, "b0_t": _NUM, "storage_times_us": _LIST,
        "rail_w_mm": _LIST, "measured": _LIST, "measured_csv": _STR, "prediction_w_mm": _LIST,
    },
    "noise": {
        "floor_per_trial": _NUM, "reference_window_ns": _NUM, "c_srs": _NUM, "c_fwm": _NUM,
        "window_ns": _NUM, "snr_peak_od": _NUM, "windows_ns": _LIST, "trials": _INT,
        "detection_efficiency": _NUM, "operating_eta": _NUM,
    },
    "filter": {"stack": _ANY, "transmission_ratio": _NUM, "differential_phase_rad": _NUM},
    "memory": {"transmission_ratio": _NUM, "differential_phase_rad": _NUM},
    "bandwidth": {"ramps_ns": _LIST, "delta_span_2pi_mhz": _NUM, "delta_points": _INT},
    "outputs": {"dir": _STR, "prefix": _STR, "write_record": _BOOL},
}

_TOP_KEYS = {"experiment", "name", "seed", "sweep"} | set(SCHEMA)

EXPERIMENTS = ("eit-scan", "store", "optimize-pulse", "storage-decay", "pressure-sweep", "od-sweep",
               "bandwidth-sweep", "single-photon", "decay-fit")

DEFAULTS = {
    "medium": {"od": 2.0, "buffer_pressure_torr": 10.0},
    "control": {"power_mw": 20.0, "rabi_2pi_mhz_per_sqrt_mw": 20.0 / math.sqrt(20.0),
                "off_time_us": 1.2, "on_time_us": 1.5, "ramp_time_ns": 0.0},
    "pulse": {"kind": "storable-gaussian", "duration_ns": 40.0, "dt_ns": 2.0, "mean_photons": 1.0},
    "grid": {},
    "shaping": {"max_iters": 5, "tol": 1e-3, "seed_kind": "gaussian", "enabled": True},
    "dephasing": {"w_mm": 1.6, "d0_cm2_per_s": 0.3, "p0_torr": 760.0, "b_prime_t_per_m": 3e-6,
                  "e_b_2pi_hz_per_t": 1.4e10, "cell_len_cm": 8.0, "b0_t": 0.0},
    "noise": {"floor_per_trial": 1.9e-3, "reference_window_ns": 200.0, "c_srs": 0.0, "c_fwm": 0.0,
              "window_ns": 200.0, "trials": 100000, "detection_efficiency": 1.0},
    "filter": {"transmission_ratio": 1.0, "differential_phase_rad": 0.0},
    "memory": {"transmission_ratio": 1.0, "differential_phase_rad": 0.0},
    "bandwidth": {"ramps_ns": [100.0, 0.0], "delta_span_2pi_mhz": 60.0, "delta_points": 6001},
    "outputs": {"dir": ".", "write_record": True},
}

#: Per-experiment overrides of :data:`DEFAULTS` and the implied sweep axis.
EXPERIMENT_DEFAULTS = {
    "pressure-sweep": ({"medium": {"gamma_e_2pi_mhz": [5.75 / 2, 5.75 / 2],
                                   "level_offsets_2pi_mhz": [0.0, D1_HYPERFINE_SPLITTING_MHZ],
                                   "coupling_signs": [1.0, -1.0]},
                        "dephasing": {"w_mm": 1.1}},
                       ("medium.buffer_pressure_torr", [2.0, 10.0, 30.0])),
    "od-sweep": ({"medium": {"gamma_s_density_coeff_per_s": 2.5e5}, "noise": {"snr_peak_od": 2.0}},
                 ("medium.od", [0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0])),
    "bandwidth-sweep": ({"control": {"ramp_time_ns": 100.0}},
                        ("control.power_mw", [1.25, 2.5, 5.0, 10.0, 20.0, 40.0])),
    "storage-decay": ({}, None),
    "single-photon": ({"pulse": {"mean_photons": 2.74}}, None),
}


def _deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_value(where, kind, value):
    if kind == _NUM:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where}: expected a finite number, got {value!r}")
    elif kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif kind == _LIST:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
    elif kind == _STR:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif kind == _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")


def _parse_sweep(raw):
    if raw is None:
        return []
    axes = raw if isinstance(raw, list) else [raw]
    out = []
    for i, ax in enumerate(axes):
        if not isinstance(ax, dict) or set(ax) - {"path", "values"} or "path" not in ax or "values" not in ax:
            raise ConfigError(f"sweep[{i}]: expected an object with keys 'path' and 'values'")
        path = ax["path"]
        parts = path.split(".") if isinstance(path, str) else []
        if len(parts) != 2 or parts[0] not in SCHEMA or parts[1] not in SCHEMA[parts[0]]:
            raise ConfigError(f"sweep[{i}].path: {path!r} does not name a config field")
        if SCHEMA[parts[0]][parts[1]] not in (_NUM, _INT):
            raise ConfigError(f"sweep[{i}].path: {path!r} is not a numeric field")
        values = ax["values"]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep[{i}].values: expected a non-empty list")
        for v in values:
            _check_value(f"sweep[{i}].values", SCHEMA[parts[0]][parts[1]], v)
        out.append((path, list(values)))
    return out


def load_config_json(path):
    """Raw JSON config document, with read and parse errors as :class:`ConfigError`."""
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    ``sections`` holds the merged (defaults + user) values per section;
    ``sweep`` is a list of ``(path, values)`` axes.
    """

    experiment: str
    sections: dict
    sweep: list = field(default_factory=list)
    seed: int | None = None
    name: str = ""

    # -- construction --------------------------------------------------------

    @classmethod
    def from_dict(cls, raw, experiment=None):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level config key(s): {', '.join(sorted(unknown))}")
        exp = experiment or raw.get("experiment")
        if exp is None:
            raise ConfigError("config needs an 'experiment' id")
        if raw.get("experiment") not in (None, exp):
            raise ConfigError(f"experiment: config declares {raw['experiment']!r} but {exp!r} was requested")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown id {exp!r}; expected one of {', '.join(EXPERIMENTS)}")
        user = {}
        for sec in SCHEMA:
            vals = raw.get(sec, {})
            if not isinstance(vals, dict):
                raise ConfigError(f"{sec}: expected an object")
            for key, value in vals.items():
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown config key {sec}.{key}")
                _check_value(f"{sec}.{key}", SCHEMA[sec][key], value)
            user[sec] = vals
        over, axis = EXPERIMENT_DEFAULTS.get(exp, ({}, None))
        sections = _deep_merge(_deep_merge(DEFAULTS, over), user)
        sweep = _parse_sweep(raw.get("sweep"))
        if axis is not None:
            if not sweep:
                sweep = [axis]
            elif len(sweep) != 1 or sweep[0][0] != axis[0]:
                raise ConfigError(f"sweep: {exp} sweeps exactly one axis, {axis[0]!r}")
        seed = raw.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
            raise ConfigError(f"seed: expected an integer, got {seed!r}")
        if exp == "single-photon" and sections["noise"].get("trials", 0) > 0 and seed is None:
            raise ConfigError("seed: required when Monte Carlo counting is enabled (noise.trials > 0)")
        name = raw.get("name", exp)
        if not isinstance(name, str):
            raise ConfigError("name: expected a string")
        return cls(experiment=exp, sections=sections, sweep=sweep, seed=seed, name=name)

    @classmethod
    def from_json(cls, path, experiment=None):
        return cls.from_dict(load_config_json(path), experiment)

    def to_dict(self):
        d = {"experiment": self.experiment, "name": self.name, **copy.deepcopy(self.sections)}
        if self.seed is not None:
            d["seed"] = self.seed
        if self.sweep:
            d["sweep"] = [{"path": p, "values": list(v)} for p, v in self.sweep]
        return d

    def with_value(self, path, value):
        sec, key = path.split(".")
        sections = copy.deepcopy(self.sections)
        sections[sec][key] = value
        return ExperimentConfig(self.experiment, sections, [], self.seed, self.name)

    def with_seed(self, seed):
        return ExperimentConfig(self.experiment, self.sections, self.sweep, seed, self.name)

    def get(self, section, key, default=None):
        return self.sections[section].get(key, default)

    # -- builders ------------------------------------------------------------

    def medium(self) -> MediumSpec:
        m = self.sections["medium"]
        kw = {"od": m["od"], "buffer_pressure": m.get("buffer_pressure_torr", 0.0)}
        if "gamma_e_2pi_mhz" in m:
            kw["gamma_e"] = tuple(mhz(v) for v in m["gamma_e_2pi_mhz"])
        if "level_offsets_2pi_mhz" in m:
            kw["level_offsets"] = tuple(mhz(v) for v in m["level_offsets_2pi_mhz"])
        if "coupling_signs" in m:
            kw["coupling_signs"] = tuple(float(v) for v in m["coupling_signs"])
        if "gamma_s0_per_s" in m:
            kw["gamma_s0"] = m["gamma_s0_per_s"]
        if "gamma_s_density_coeff_per_s" in m:
            kw["gamma_s_density_coeff"] = m["gamma_s_density_coeff_per_s"]
        if "pressure_broadening_2pi_mhz_per_torr" in m:
            kw["pressure_broadening_slope"] = mhz(m["pressure_broadening_2pi_mhz_per_torr"])
        return _wrap("medium", MediumSpec, **kw)

    def control(self) -> ControlTiming:
        c = self.sections["control"]
        kw = {
            "power": c["power_mw"] * 1e-3,
            "rabi_per_sqrt_power": mhz(c["rabi_2pi_mhz_per_sqrt_mw"]) / math.sqrt(1e-3),
            "off_time": c["off_time_us"] * 1e-6,
            "on_time": c["on_time_us"] * 1e-6,
            "ramp_time": c.get("ramp_time_ns", 0.0) * 1e-9,
        }
        if "single_photon_detuning_2pi_mhz" in c:
            kw["single_photon_detuning"] = mhz(c["single_photon_detuning_2pi_mhz"])
        if "two_photon_detuning_2pi_mhz" in c:
            kw["two_photon_detuning"] = mhz(c["two_photon_detuning_2pi_mhz"])
        return _wrap("control", ControlTiming, **kw)

    def pulse(self, control=None) -> ProbePulse:
        p = self.sections["pulse"]
        kind = p.get("kind", "gaussian")
        dt = p.get("dt_ns", 2.0) * 1e-9
        n_bar = p.get("mean_photons", 1.0)
        control = control or self.control()
        if kind == "gaussian":
            pulse = gaussian_pulse(_need(p, "pulse", "fwhm_ns") * 1e-9, center=_need(p, "pulse", "center_us") * 1e-6, dt=dt, mean_photons=n_bar)
            if pulse.t0 < 0:
                pulse = pulse.shifted(-pulse.t0)
            return normalize(pulse)
        if kind == "square":
            dur = _need(p, "pulse", "duration_ns") * 1e-9
            start = p.get("center_us", 0.5 * control.off_time * 1e6) * 1e-6 - dur / 2
            return normalize(square_pulse(dur, t0=max(start, 0.0), dt=dt, mean_photons=n_bar))
        if kind == "csv":
            return normalize(read_pulse_csv(_need(p, "pulse", "path"), mean_photons=n_bar))
        if kind.startswith("storable-"):
            dur = p.get("duration_ns")
            seed = storable_seed(control, dt, None if dur is None else dur * 1e-9, kind=kind.split("-", 1)[1])
            return ProbePulse(seed.t0, seed.dt, seed.samples, mean_photons=n_bar)
        raise ConfigError(f"pulse.kind: unknown kind {kind!r} (gaussian, square, csv, storable-<shape>)")

    def seed_pulse(self, control):
        s = self.sections["shaping"]
        dt = self.sections["pulse"].get("dt_ns", 2.0) * 1e-9
        dur = s.get("seed_duration_ns")
        return storable_seed(control, dt, None if dur is None else dur * 1e-9, kind=s.get("seed_kind", "gaussian"))

    def grid(self, medium, control, pulse, t_end=None):
        g = self.sections["grid"]
        if t_end is None:
            t_end = g["t_end_us"] * 1e-6 if "t_end_us" in g else extraction_window(medium, control, pulse)[1]
        if "dt_ns" in g:
            return SimGrid.covering(t_end - pulse.t0, g["dt_ns"] * 1e-9, nz=g.get("nz", default_nz(medium.od)))
        return auto_grid(medium, control, pulse, t_end, nz=g.get("nz"))

    def diffusion(self, pressure=None, w=None) -> DiffusionParams:
        d = self.sections["dephasing"]
        P = pressure if pressure is not None else self.sections["medium"].get("buffer_pressure_torr", 0.0)
        if not P > 0:
            raise ConfigError("medium.buffer_pressure_torr: diffusion model needs a buffer pressure > 0")
        return _wrap("dephasing", DiffusionParams, w=(w if w is not None else d["w_mm"] * 1e-3),
                     D0=d["d0_cm2_per_s"] * 1e-4, P=P, P0=d.get("p0_torr", 760.0))

    def gradient(self) -> GradientParams:
        d = self.sections["dephasing"]
        return _wrap("dephasing", GradientParams, b_prime=d["b_prime_t_per_m"],
                     e_b=TWO_PI * d["e_b_2pi_hz_per_t"], cell_len=d["cell_len_cm"] * 1e-2, b0=d.get("b0_t", 0.0))

    def noise(self) -> NoiseModel:
        n = self.sections["noise"]
        return _wrap("noise", NoiseModel, floor_per_trial=n["floor_per_trial"], c_srs=n.get("c_srs", 0.0),
                     c_fwm=n.get("c_fwm", 0.0), reference_window=n["reference_window_ns"] * 1e-9)

    def f_o(self):
        """Operation fidelity from the memory and filter rail imbalances."""
        out = 1.0
        for sec in ("memory", "filter"):
            s = self.sections[sec]
            rp = _wrap(sec, RailPair, s.get("transmission_ratio", 1.0), s.get("differential_phase_rad", 0.0))
            out *= rp.f_o
        return out

    def filter_stack(self):
        stack = self.sections["filter"].get("stack")
        if stack is None:
            return []
        if not isinstance(stack, list):
            raise ConfigError("filter.stack: expected a list of etalon objects")
        try:
            return [etalon_from_dict(e) for e in stack]
        except QMemError as exc:
            raise ConfigError(f"filter.stack: {exc}") from None


def _wrap(section, ctor, *args, **kwargs):
    try:
        return ctor(*args, **kwargs)
    except (InvalidInputError, DomainError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _need(d, section, key):
    if key not in d:
        raise ConfigError(f"{section}.{key} is required here")
    return d[key]


# ---------------------------------------------------------------------------
# results and output
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    experiment: str
    columns: tuple
    rows: list
    summary: dict
    extra_tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    records: dict = field(default_factory=dict)  # name -> FieldRecord or ProbePulse

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


@dataclass(frozen=True)
class MemoryResult:
    eta_total: float
    eta_storage: float
    snr_1: float
    f_m: float
    f_o: float
    fidelity: float
    retrieved: ProbePulse
    t1e: float | None = None
    window: float = math.nan
    noise_rate: float = math.nan
    snr_1_counts: float = math.nan
    snr_1_counts_stderr: float = math.nan

    def to_dict(self):
        d = {"eta_total": self.eta_total, "eta_storage": self.eta_storage, "snr_single_photon": self.snr_1,
             "f_m": self.f_m, "f_o": self.f_o, "fidelity": self.fidelity, "window_s": self.window,
             "noise_rate_hz": self.noise_rate, "snr_single_photon_counts": self.snr_1_counts,
             "snr_single_photon_counts_stderr": self.snr_1_counts_stderr}
        if self.t1e is not None:
            d["t1e_s"] = self.t1e
        return d


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(summary):
    return json.dumps(_clean(summary), sort_keys=True, indent=2, allow_nan=False)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(path, columns, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig, out_dir=None):
    """Write ``<prefix>.csv``, extra tables and ``<prefix>_summary.json``; return the paths."""
    out = Path(out_dir if out_dir is not None else cfg.get("outputs", "dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg.get("outputs", "prefix") or result.experiment.replace("-", "_")
    paths = [write_table(out / f"{prefix}.csv", result.columns, result.rows)]
    for name, (cols, rows) in sorted(result.extra_tables.items()):
        paths.append(write_table(out / f"{prefix}_{name}.csv", cols, rows))
    if cfg.get("outputs", "write_record", False):
        for name, rec in sorted(result.records.items()):
            if isinstance(rec, ProbePulse):
                paths.append(write_pulse_csv(rec, out / f"{prefix}_{name}.csv"))
            else:
                paths.append(write_record_csv(rec, out / f"{prefix}_{name}.csv"))
    summary_path = out / f"{prefix}_summary.json"
    summary_path.write_text(dumps(result.summary) + "\n")
    paths.append(summary_path)
    return paths


# ---------------------------------------------------------------------------
# parallel sweeps
# ---------------------------------------------------------------------------

def resolve_jobs(jobs=None):
    if jobs is None:
        env = os.environ.get("QMEMSIM_JOBS")
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise ConfigError(f"QMEMSIM_JOBS must be an integer, got {env!r}") from None
        else:
            jobs = os.cpu_count() or 1
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    return int(jobs)


def parallel_map(fn, items, jobs=None):
    """``[fn(x) for x in items]``, evaluated in worker processes when ``jobs > 1``; order preserved."""
    items = list(items)
    jobs = min(resolve_jobs(jobs), len(items)) if items else 1
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _sorted_axis(values):
    return sorted(values, key=float)


# ---------------------------------------------------------------------------
# single-run experiments
# ---------------------------------------------------------------------------

def _optimized_run(cfg: ExperimentConfig, medium, control):
    """Pulse-shaped storage: returns (report, record of the final pulse)."""
    s = cfg.sections["shaping"]
    seed = cfg.seed_pulse(control)
    rep = optimize_pulse(medium, control, seed, max_iters=s["max_iters"], tol=s["tol"], nz=cfg.get("grid", "nz"))
    pulse = rep.final_pulse
    window = extraction_window(medium, control, pulse)
    grid = auto_grid(medium, control, pulse, window[1], nz=cfg.get("grid", "nz"))
    rec = simulate(medium, control, pulse, grid, retrieval_window=window)
    return rep, rec


def run_store(cfg: ExperimentConfig) -> ExperimentResult:
    medium, control = cfg.medium(), cfg.control()
    pulse = cfg.pulse(control)
    grid = cfg.grid(medium, control, pulse)
    t_store = control.off_time + 2 * control.ramp_time
    rec = simulate(medium, control, pulse, grid, snapshot_times=(t_store,))
    rows = [(float(t), float(abs(e) ** 2), float(s), float(p))
            for t, e, s, p in zip(rec.times, rec.e_out, rec.spinwave_norm, rec.polarization_norm)]
    summary = {"experiment": "store", "eta_storage": rec.eta_storage, "eta_total": rec.eta_total,
               "retrieval_window_s": list(rec.retrieval_window), "nz": grid.nz, "nt": grid.nt, "dt_s": grid.dt,
               "max_norm_residual": float(np.max(np.abs(rec.norm_residual())))}
    snap = rec.spinwave_snapshots[t_store]
    spinwave = (("z_normalized", "re", "im"),
                [(float(z), float(v.real), float(v.imag)) for z, v in zip(rec.z, snap)])
    return ExperimentResult("store", ("t_seconds", "output_intensity", "spinwave_norm", "polarization_norm"),
                            rows, summary, extra_tables={"spinwave": spinwave}, records={"record": rec})


def run_optimize_pulse(cfg: ExperimentConfig) -> ExperimentResult:
    medium, control = cfg.medium(), cfg.control()
    s = cfg.sections["shaping"]
    seed = cfg.seed_pulse(control)
    rep = optimize_pulse(medium, control, seed, max_iters=s["max_iters"], tol=s["tol"], nz=cfg.get("grid", "nz"))
    rows = [(i, eta) for i, (_, eta) in enumerate(rep.iterations)]
    summary = {"experiment": "optimize-pulse", "eta": rep.eta, "iterations": len(rep.iterations),
               "converged": rep.converged, "etas": list(rep.etas)}
    return ExperimentResult("optimize-pulse", ("iteration", "eta"), rows, summary,
                            records={"final_pulse": rep.final_pulse})


def run_eit_scan(cfg: ExperimentConfig) -> ExperimentResult:
    medium, control = cfg.medium(), cfg.control()
    bw = cfg.sections["bandwidth"]
    powers = [v for v in (cfg.sweep[0][1] if cfg.sweep else [cfg.get("control", "power_mw")])]
    if cfg.sweep and cfg.sweep[0][0] != "control.power_mw":
        raise ConfigError("sweep: eit-scan sweeps control.power_mw only")
    span = bw["delta_span_2pi_mhz"]
    deltas = mhz(np.linspace(-span / 2, span / 2, bw["delta_points"]))
    scan = eit_scan(medium, control, np.array(_sorted_axis(powers)) * 1e-3, deltas)
    rows = [(p * 1e3, to_mhz(d), t) for p, d, t in scan.rows()]
    widths = {repr(float(p * 1e3)): (None if w is None else to_mhz(w)) for p, w in zip(scan.powers, scan.fwhm)}
    summary = {"experiment": "eit-scan", "baseline_transmission": scan.baseline, "fwhm_2pi_mhz_by_power_mw": widths}
    return ExperimentResult("eit-scan", ("power_mw", "delta_2pi_mhz", "transmission"), rows, summary)


# ---------------------------------------------------------------------------
# storage decay
# ---------------------------------------------------------------------------

def _exp_decay(t, a, rate):
    return a * np.exp(-rate * t)


def fit_exponential(times, values):
    """Fit ``a exp(-t/T)``; returns ``(T, a)`` with ``T = inf`` for a flat curve."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 3:
        raise InvalidInputError("exponential fit needs at least 3 points")
    span = float(times.max() - times.min())
    if np.allclose(values, values[0], rtol=1e-12, atol=0.0):
        return math.inf, float(values[0])
    pos = values > 0
    slope = -np.polyfit(times[pos], np.log(values[pos]), 1)[0] if pos.sum() >= 2 else 1.0 / span
    (a, rate), _ = curve_fit(_exp_decay, times, values, p0=(values[0], max(slope, 1e-12 / span)), maxfev=20000)
    if not rate * span > 1e-9:
        return math.inf, float(a)
    return 1.0 / rate, float(a)


def run_storage_decay(cfg: ExperimentConfig) -> ExperimentResult:
    """Normalised efficiency vs storage time from a single solver baseline run.

    Dephasing during storage multiplies the baseline efficiency by
    :func:`combined_decay`. Dual-rail configs (``dephasing.rail_w_mm``)
    evaluate each rail independently.
    """
    medium, control = cfg.medium(), cfg.control()
    pulse = cfg.pulse(control)
    grid = cfg.grid(medium, control, pulse)
    base = simulate(medium, control, pulse, grid)
    eta0 = base.eta_total
    dep = cfg.sections["dephasing"]
    rails = dep.get("rail_w_mm") or [dep["w_mm"]]
    g = cfg.gradient()
    diffs = [cfg.diffusion(w=w * 1e-3) for w in rails]
    predicted = []
    for d in diffs:
        try:
            predicted.append(storage_time_1e(d, g))
        except RangeError:
            predicted.append(math.inf)
    if "storage_times_us" in dep:
        times = np.array(dep["storage_times_us"], dtype=float) * 1e-6
        if np.any(times < 0):
            raise ConfigError("dephasing.storage_times_us: times must be >= 0")
    else:
        finite = [t for t in predicted if math.isfinite(t)]
        # stays inside the first gradient zero at ~1.9 T1e
        t_max = 1.5 * max(finite) if finite else 1e-3
        times = np.linspace(0.0, t_max, 21)
    rows = []
    rail_out = []
    for i, d in enumerate(diffs):
        norm = np.asarray(combined_decay(d, g, times), dtype=float).reshape(-1)
        for t, v in zip(times, norm):
            rows.append((i, float(t), float(v), float(v * eta0)))
        T_fit, _ = fit_exponential(times, norm)
        rail_out.append({"rail": i, "w_m": d.w, "t1e_fit_s": T_fit, "t1e_model_s": predicted[i],
                         "t1e_unbounded": not math.isfinite(T_fit)})
    summary = {"experiment": "storage-decay", "eta0": eta0, "rails": rail_out}
    return ExperimentResult("storage-decay", ("rail", "storage_time_s", "eta_normalized", "eta"), rows, summary)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _pressure_point(args):
    cfg_dict, P = args
    cfg = ExperimentConfig.from_dict(cfg_dict).with_value("medium.buffer_pressure_torr", P)
    medium, control = cfg.medium(), cfg.control()
    rep, _ = _optimized_run(cfg, medium, control)
    try:
        t1e = storage_time_1e(cfg.diffusion(pressure=P), cfg.gradient())
    except RangeError:
        t1e = math.inf
    return (float(P), rep.eta, t1e, to_mhz(medium.gamma_eff[0]), len(rep.iterations))


def run_pressure_sweep(cfg: ExperimentConfig, jobs=None) -> ExperimentResult:
    """Optimised efficiency and 1/e storage time vs buffer-gas pressure."""
    medium = cfg.medium()
    if medium.n_levels != 2:
        raise ConfigError("medium: pressure-sweep needs a two-excited-level medium")
    path, values = cfg.sweep[0]
    if any(v <= 0 for v in values):
        raise ConfigError(f"sweep.values: pressures must be > 0 for {path}")
    base = cfg.to_dict()
    base.pop("sweep", None)
    rows = parallel_map(_pressure_point, [(base, v) for v in _sorted_axis(values)], jobs)
    eta = np.array([r[1] for r in rows])
    t1e = np.array([r[2] for r in rows])
    summary = {"experiment": "pressure-sweep",
               "eta_non_increasing": bool(np.all(np.diff(eta) <= 1e-4)),
               "t1e_non_decreasing": bool(np.all(np.diff(t1e) >= 0))}
    return ExperimentResult("pressure-sweep",
                            ("pressure_torr", "eta_opt", "t1e_s", "gamma_eff_2pi_mhz", "iterations"),
                            rows, summary)


def _od_point(args):
    cfg_dict, od = args
    cfg = ExperimentConfig.from_dict(cfg_dict).with_value("medium.od", od)
    medium, control = cfg.medium(), cfg.control()
    rep, _ = _optimized_run(cfg, medium, control)
    return float(od), rep.eta, len(rep.iterations)


def calibrate_srs(ods, etas, target_od, noise: NoiseModel, p_c, window):
    """Raman coefficient that puts the single-photon SNR maximum at ``target_od``.

    With ``snr(od) = eta(od) / ((r0 + c od P_c) W)`` stationarity at ``od*``
    gives ``c P_c = r0 L / (1 - L od*)`` where ``L = d ln(eta)/d od`` at
    ``od*``; ``L`` comes from a cubic spline through ``ln eta``.
    """
    ods = np.asarray(ods, dtype=float)
    etas = np.asarray(etas, dtype=float)
    if not ods.min() <= target_od <= ods.max():
        raise RangeError(f"target od {target_od} lies outside the swept range")
    if np.any(etas <= 0):
        raise DomainError("efficiencies must be > 0 to calibrate the noise model")
    if p_c <= 0:
        raise DomainError("control power must be > 0 to calibrate the Raman term")
    L = float(CubicSpline(ods, np.log(etas))(target_od, 1))
    if not 0 < L * target_od < 1:
        raise RangeError(f"no Raman coefficient puts the SNR peak at od={target_od} "
                         f"(d ln eta / d od = {L:.4g} there)")
    c = noise.floor_per_trial * L / (1.0 - L * target_od) / p_c
    return noise.replace(c_srs=c)


def run_od_sweep(cfg: ExperimentConfig, jobs=None) -> ExperimentResult:
    """Optimised efficiency, noise and single-photon SNR vs optical depth."""
    path, values = cfg.sweep[0]
    if any(v <= 0 for v in values):
        raise ConfigError(f"sweep.values: optical depths must be > 0 for {path}")
    base = cfg.to_dict()
    base.pop("sweep", None)
    pts = parallel_map(_od_point, [(base, v) for v in _sorted_axis(values)], jobs)
    ods = np.array([p[0] for p in pts])
    etas = np.array([p[1] for p in pts])
    noise = cfg.noise()
    p_c = cfg.control().power
    W = cfg.get("noise", "window_ns") * 1e-9
    target = cfg.get("noise", "snr_peak_od")
    if target is not None:
        noise = calibrate_srs(ods, etas, target, noise, p_c, W)
    rows = []
    for (od, eta, iters) in pts:
        n = noise.noise(od, p_c, W)
        rows.append((od, eta, n, eta / n if n > 0 else math.inf, iters))
    snr = np.array([r[3] for r in rows])
    i_eta, i_snr = int(np.argmax(etas)), int(np.argmax(snr))
    summary = {"experiment": "od-sweep", "od_at_eta_max": ods[i_eta], "od_at_snr_max": ods[i_snr],
               "eta_max": etas[i_eta], "interior_eta_max": bool(0 < i_eta < len(ods) - 1),
               "c_srs": noise.c_srs, "noise_rate_hz_at_unit_od": noise.rate(1.0, p_c),
               "axis_note": "optical depth swept directly"}
    return ExperimentResult("od-sweep", ("od", "eta_opt", "noise_photons", "snr_single_photon", "iterations"),
                            rows, summary)


def bandwidth_timing(medium, control, min_duration=50e-9, min_gap=300e-9):
    """Control schedule scaled to the slow-light delay at this power.

    The storable pulse spans ``max(2 tau_g, 2 ramp, min_duration)``, the
    control switches off three pulse lengths after t = 0 and back on after a
    gap of ``max(min_gap, 2 ramp)``.
    """
    tg = group_delay(medium, control.rabi, control.single_photon_detuning)
    dur = max(2.0 * tg, 2.0 * control.ramp_time, min_duration)
    off = 3.0 * dur
    on = off + max(min_gap, 2.0 * control.ramp_time)
    return control.replace(off_time=off, on_time=on), dur


def _bandwidth_point(args):
    cfg_dict, power_mw, ramp_ns = args
    cfg = ExperimentConfig.from_dict(cfg_dict).with_value("control.power_mw", power_mw)
    cfg = cfg.with_value("control.ramp_time_ns", ramp_ns)
    medium = cfg.medium()
    control, dur = bandwidth_timing(medium, cfg.control())
    s = cfg.sections["shaping"]
    seed = storable_seed(control, min(dur / 64, cfg.get("pulse", "dt_ns") * 1e-9), duration=dur,
                         kind=s.get("seed_kind", "gaussian"))
    rep = optimize_pulse(medium, control, seed, max_iters=s["max_iters"], tol=s["tol"], nz=cfg.get("grid", "nz"))
    pulse = rep.final_pulse
    a, b = extraction_window(medium, control, pulse)
    rec = simulate(medium, control, pulse, auto_grid(medium, control, pulse, b, nz=cfg.get("grid", "nz")),
                   retrieval_window=(a, b))
    bw = pulse_bandwidth(rec.output_pulse(a, b))
    return float(ramp_ns), float(power_mw), to_mhz(bw), rep.eta


def _linear_fit(x, y):
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    return float(slope), float(icpt), (1.0 - float(np.sum(resid ** 2)) / ss) if ss > 0 else 1.0


def run_bandwidth_sweep(cfg: ExperimentConfig, jobs=None) -> ExperimentResult:
    """EIT window width and retrieved-photon bandwidth vs control power.

    The EIT width comes from the steady-state response; the retrieved
    bandwidth from a pulse-shaped storage run at each power and ramp time.
    """
    medium, control = cfg.medium(), cfg.control()
    _, powers = cfg.sweep[0]
    powers = _sorted_axis(powers)
    if any(p <= 0 for p in powers):
        raise ConfigError("sweep.values: control powers must be > 0")
    bw = cfg.sections["bandwidth"]
    span = bw["delta_span_2pi_mhz"]
    scan = eit_scan(medium, control, np.array(powers) * 1e-3, mhz(np.linspace(-span / 2, span / 2, bw["delta_points"])))
    eit = [to_mhz(w) if w is not None else math.nan for w in scan.fwhm]
    ramps = [float(r) for r in bw["ramps_ns"]]
    base = cfg.to_dict()
    base.pop("sweep", None)
    tasks = [(base, p, r) for r in ramps for p in powers]
    pts = parallel_map(_bandwidth_point, tasks, jobs)
    rows = []
    by_ramp = {}
    for (ramp, p, ret, eta) in pts:
        e = eit[powers.index(p)]
        rows.append((ramp, p, e, ret, ret / e, eta))
        by_ramp.setdefault(ramp, []).append(ret)
    slope, icpt, r2 = _linear_fit(np.array(powers), np.array(eit))
    logp = np.log(powers)
    exponents = {repr(r): float(np.polyfit(logp, np.log(v), 1)[0]) for r, v in by_ramp.items()}
    summary = {"experiment": "bandwidth-sweep", "eit_slope_2pi_mhz_per_mw": slope,
               "eit_intercept_2pi_mhz": icpt, "eit_linear_r2": r2,
               "retrieved_power_law_exponent_by_ramp_ns": exponents}
    return ExperimentResult("bandwidth-sweep",
                            ("ramp_time_ns", "power_mw", "eit_fwhm_2pi_mhz", "retrieved_fwhm_2pi_mhz",
                             "ratio", "eta"), rows, summary)


def _generic_point(args):
    cfg_dict, path, value = args
    cfg = ExperimentConfig.from_dict(cfg_dict).with_value(path, value)
    medium, control = cfg.medium(), cfg.control()
    if cfg.get("shaping", "enabled"):
        rep, rec = _optimized_run(cfg, medium, control)
    else:
        pulse = cfg.pulse(control)
        rec = simulate(medium, control, pulse, cfg.grid(medium, control, pulse))
    return float(value), rec.eta_storage, rec.eta_total


def run_generic_sweep(cfg: ExperimentConfig, jobs=None) -> ExperimentResult:
    """Storage efficiency along an arbitrary numeric config axis."""
    if len(cfg.sweep) != 1:
        raise ConfigError("sweep: exactly one axis is supported for this experiment")
    path, values = cfg.sweep[0]
    base = cfg.to_dict()
    base.pop("sweep", None)
    rows = parallel_map(_generic_point, [(base, path, v) for v in _sorted_axis(values)], jobs)
    return ExperimentResult(cfg.experiment, (path, "eta_storage", "eta_total"), rows,
                            {"experiment": cfg.experiment, "sweep_path": path})


# ---------------------------------------------------------------------------
# single-photon protocol and decay fit
# ---------------------------------------------------------------------------

def run_single_photon_protocol(cfg: ExperimentConfig) -> tuple[MemoryResult, ExperimentResult]:
    """Solver, detection-window trade-off and photon counting at the single-photon level.

    ``noise.operating_eta`` replaces the simulated detected efficiency in the
    main window (used to evaluate the noise model at a measured operating
    point); the window scan still uses the simulated record.
    """
    medium, control = cfg.medium(), cfg.control()
    n_bar = cfg.get("pulse", "mean_photons")
    if cfg.get("shaping", "enabled"):
        _, rec = _optimized_run(cfg, medium, control)
    else:
        pulse = cfg.pulse(control)
        rec = simulate(medium, control, pulse, cfg.grid(medium, control, pulse))
    noise = cfg.noise()
    p_c = control.power
    f_o = cfg.f_o()
    det = cfg.get("noise", "detection_efficiency")
    W = cfg.get("noise", "window_ns") * 1e-9
    t_end = rec.times[-1] - control.on_time
    if "windows_ns" in cfg.sections["noise"]:
        windows = np.array(cfg.get("noise", "windows_ns"), dtype=float) * 1e-9
    else:
        windows = np.linspace(t_end / 40, t_end, 40)
    pts = window_tradeoff(rec, noise, medium.od, p_c, n_bar, f_o, windows, detection_efficiency=det)
    rate = noise.rate(medium.od, p_c)
    op_eta = cfg.get("noise", "operating_eta")
    if op_eta is None:
        if W > t_end * (1 + 1e-9):
            raise ConfigError(f"noise.window_ns: {W * 1e9:g} ns runs past the simulated record")
        op_eta = det * storage_efficiency(rec, control.on_time, W)
    main = evaluate_window(op_eta, rate * W, n_bar, f_o, window=W, noise_rate=rate)
    trials = cfg.get("noise", "trials")
    snr_c, snr_err = math.nan, math.nan
    hist_rows = []
    if trials and trials > 0:
        counts = simulate_counts(n_bar * op_eta, rate * W, trials, cfg.seed)
        snr_c, snr_err = counts.snr / n_bar, counts.stderr / n_bar
        n = max(len(counts.histogram), len(counts.noise_histogram))
        h = np.pad(counts.histogram, (0, n - len(counts.histogram)))
        hn = np.pad(counts.noise_histogram, (0, n - len(counts.noise_histogram)))
        hist_rows = [(k, int(h[k]), int(hn[k])) for k in range(n)]
    try:
        t1e = storage_time_1e(cfg.diffusion(), cfg.gradient())
    except (RangeError, ConfigError):
        t1e = None
    a, b = rec.retrieval_window
    mem = MemoryResult(eta_total=float(op_eta), eta_storage=rec.eta_storage, snr_1=main.snr_1, f_m=main.f_m,
                       f_o=f_o, fidelity=combined_fidelity(f_o, main.f_m), retrieved=rec.output_pulse(a, b),
                       t1e=t1e, window=W, noise_rate=rate, snr_1_counts=snr_c, snr_1_counts_stderr=snr_err)
    rows = [(p.window, p.eta, p.snr_1, p.f_m, p.fidelity, p.f_o, p.noise_rate) for p in pts]
    summary = {"experiment": "single-photon", **mem.to_dict(), "mean_photons": n_bar,
               "simulated_eta_total": rec.eta_total, "report": main.to_dict()}
    res = ExperimentResult("single-photon",
                           ("window_s", "eta", "snr_single_photon", "f_m", "fidelity", "f_o", "noise_rate_hz"),
                           rows, summary, records={"retrieved": mem.retrieved})
    if hist_rows:
        res.extra_tables["counts"] = (("counts", "trials_signal_window", "trials_noise_window"), hist_rows)
    return mem, res


def read_decay_csv(path):
    """Rows ``(w_m, P_torr, T1e_s)`` from a CSV with that header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["w_m", "P_torr", "T1e_s"]:
            raise InvalidInputError(f"{path}: expected header w_m,P_torr,T1e_s, got {','.join(header)}")
        rows = []
        for i, r in enumerate(reader, start=2):
            if not r:
                continue
            try:
                rows.append(tuple(float(x) for x in r))
            except ValueError:
                raise InvalidInputError(f"{path}:{i}: non-numeric value in {r}") from None
            if len(rows[-1]) != 3:
                raise InvalidInputError(f"{path}:{i}: expected 3 columns")
    return np.array(rows, dtype=float).reshape(-1, 3)


def run_decay_fit(cfg: ExperimentConfig, data=None) -> ExperimentResult:
    """Collective (D0, gradient) fit plus fitted and gradient-free predictions on a waist grid."""
    dep = cfg.sections["dephasing"]
    if data is None:
        if "measured" in dep:
            data = np.array(dep["measured"], dtype=float)
        elif "measured_csv" in dep:
            data = read_decay_csv(dep["measured_csv"])
        else:
            raise ConfigError("dephasing.measured or dephasing.measured_csv is required for decay-fit")
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ConfigError("dephasing.measured: expected rows of [w_m, P_torr, T1e_s]")
    g0 = cfg.gradient()
    model = SpinWaveDecayRegressor(P0=dep.get("p0_torr", 760.0), e_b=g0.e_b, cell_len=g0.cell_len)
    model.fit(data[:, :2], data[:, 2])
    rep = model.report_
    ws = (np.array(dep["prediction_w_mm"], dtype=float) * 1e-3 if "prediction_w_mm" in dep
          else np.linspace(data[:, 0].min() * 0.5, data[:, 0].max() * 2.0, 16))
    rows = []
    for P in sorted(set(data[:, 1].tolist())):
        X = np.column_stack([ws, np.full_like(ws, P)])
        for w, ts, td in zip(ws, model.predict(X), model.predict_no_gradient(X)):
            rows.append((float(w), float(P), float(ts), float(td)))
    fitted = model.predict(data[:, :2])
    summary = {"experiment": "decay-fit", **rep.to_dict(),
               "max_relative_residual": float(np.max(np.abs(fitted - data[:, 2]) / data[:, 2]))}
    return ExperimentResult("decay-fit", ("w_m", "P_torr", "t1e_fit_s", "t1e_no_gradient_s"), rows, summary)


def run_experiment(cfg: ExperimentConfig, jobs=None) -> ExperimentResult:
    exp = cfg.experiment
    if exp == "pressure-sweep":
        return run_pressure_sweep(cfg, jobs)
    if exp == "od-sweep":
        return run_od_sweep(cfg, jobs)
    if exp == "bandwidth-sweep":
        return run_bandwidth_sweep(cfg, jobs)
    if exp == "single-photon":
        return run_single_photon_protocol(cfg)[1]
    if exp == "storage-decay":
        return run_storage_decay(cfg)
    if exp == "decay-fit":
        return run_decay_fit(cfg)
    if exp == "eit-scan":
        return run_eit_scan(cfg)
    if cfg.sweep:
        return run_generic_sweep(cfg, jobs)
    if exp == "store":
        return run_store(cfg)
    if exp == "optimize-pulse":
        return run_optimize_pulse(cfg)
    raise ConfigError(f"experiment: {exp!r} is not runnable")
