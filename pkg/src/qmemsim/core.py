"""Shared domain types, unit helpers and pulse utilities.

Units
-----
Everything internal is SI with angular frequencies in rad/s. Linewidths are
*half* widths, i.e. the decay rate of an optical coherence, not of a
population. ``mhz(x)`` converts a "2pi x x MHz" figure into rad/s.

Probe envelopes are complex amplitudes sampled on uniform grids and scaled so
that ``sum(|E|^2) * dt`` is the photon number (or any energy-like quantity;
only ratios are ever used).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import AmbiguityError, DomainError, InvalidInputError

TWO_PI = 2.0 * math.pi

#: Rb D1 natural linewidth (FWHM 2pi x 5.75 MHz) expressed as a half width.
RB_D1_HALF_WIDTH = TWO_PI * 5.75e6 / 2.0
#: Ne pressure broadening of the D1 line, FWHM per Torr.
NE_BROADENING_PER_TORR = TWO_PI * 9.8e6
#: Probe single-photon detuning used throughout the experiment.
DEFAULT_SINGLE_PHOTON_DETUNING = -TWO_PI * 120e6


def mhz(value):
    """``2pi x value MHz`` in rad/s."""
    return TWO_PI * 1e6 * np.asarray(value, dtype=float) if np.ndim(value) else TWO_PI * 1e6 * float(value)


def to_mhz(omega):
    """Inverse of :func:`mhz`."""
    return np.asarray(omega, dtype=float) / (TWO_PI * 1e6) if np.ndim(omega) else float(omega) / (TWO_PI * 1e6)


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def check_finite(name, value, *, positive=False, nonnegative=False):
    """Validate a scalar and return it as ``float``."""
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(x):
        raise InvalidInputError(f"{name} must be finite, got {x}")
    if positive and x <= 0:
        raise DomainError(f"{name} must be > 0, got {x}")
    if nonnegative and x < 0:
        raise DomainError(f"{name} must be >= 0, got {x}")
    return x


def check_1d(name, values, *, dtype=float, min_len=1):
    """Validate a 1-D sequence and return a read-only copy."""
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_len:
        raise InvalidInputError(f"{name} needs at least {min_len} element(s), got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _as_tuple(values, name):
    arr = check_1d(name, values)
    return tuple(float(v) for v in arr)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MediumSpec:
    """Atomic ensemble seen by the probe.

    ``od`` is the resonant weak-probe optical depth: with the control off a
    long resonant probe is transmitted with intensity ``exp(-od)``. One or two
    excited levels are supported; the second one (``level_offsets[1]`` away)
    couples to the control with relative sign ``coupling_signs[1]``.
    """

    od: float
    gamma_e: tuple = (RB_D1_HALF_WIDTH,)
    level_offsets: tuple = (0.0,)
    coupling_signs: tuple = (1.0,)
    gamma_s0: float = 0.0
    gamma_s_density_coeff: float = 0.0
    buffer_pressure: float = 0.0
    pressure_broadening_slope: float = NE_BROADENING_PER_TORR

    def __post_init__(self):
        object.__setattr__(self, "od", check_finite("od", self.od, nonnegative=True))
        gam = _as_tuple(self.gamma_e, "gamma_e")
        offs = _as_tuple(self.level_offsets, "level_offsets")
        signs = _as_tuple(self.coupling_signs, "coupling_signs")
        if not 1 <= len(gam) <= 2:
            raise InvalidInputError(f"1 or 2 excited levels supported, got {len(gam)}")
        if len(offs) != len(gam) or len(signs) != len(gam):
            raise InvalidInputError("gamma_e, level_offsets and coupling_signs must have equal length")
        if any(g <= 0 for g in gam):
            raise DomainError(f"gamma_e must be > 0, got {gam}")
        if offs[0] != 0.0:
            raise InvalidInputError("level_offsets[0] must be 0 (reference level)")
        if signs[0] != 1.0:
            raise InvalidInputError("coupling_signs[0] must be +1")
        if all(s == 0 for s in signs):
            raise InvalidInputError("coupling_signs must not all vanish")
        object.__setattr__(self, "gamma_e", gam)
        object.__setattr__(self, "level_offsets", offs)
        object.__setattr__(self, "coupling_signs", signs)
        for name in ("gamma_s0", "gamma_s_density_coeff", "buffer_pressure", "pressure_broadening_slope"):
            object.__setattr__(self, name, check_finite(name, getattr(self, name), nonnegative=True))

    @property
    def n_levels(self):
        return len(self.gamma_e)

    @property
    def gamma_eff(self):
        """Pressure-broadened half widths, rad/s."""
        extra = self.pressure_broadening_slope * self.buffer_pressure / 2.0
        return np.array(self.gamma_e) + extra

    @property
    def gamma_s_eff(self):
        """Spin-wave decoherence including the density-dependent part, rad/s."""
        return self.gamma_s0 + self.gamma_s_density_coeff * self.od

    @property
    def od_fractions(self):
        """Share of the optical depth carried by each excited level."""
        f2 = np.array(self.coupling_signs) ** 2
        return f2 / f2.sum()

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class ControlTiming:
    """Control field amplitude and switching schedule.

    The Rabi frequency is ``rabi_per_sqrt_power * sqrt(power)`` while the
    field is on. Switching edges are raised-cosine ramps that span
    ``ramp_time`` fully (the 10-90 % time of such a ramp is 0.59 ramp_time).
    """

    power: float
    rabi_per_sqrt_power: float
    off_time: float
    on_time: float
    ramp_time: float = 0.0
    single_photon_detuning: float = DEFAULT_SINGLE_PHOTON_DETUNING
    two_photon_detuning: float = 0.0

    def __post_init__(self):
        for name in ("power", "rabi_per_sqrt_power", "ramp_time"):
            object.__setattr__(self, name, check_finite(name, getattr(self, name), nonnegative=True))
        for name in ("off_time", "on_time", "single_photon_detuning", "two_photon_detuning"):
            object.__setattr__(self, name, check_finite(name, getattr(self, name)))
        if not self.off_time < self.on_time:
            raise InvalidInputError(f"off_time ({self.off_time}) must precede on_time ({self.on_time})")
        if self.off_time + self.ramp_time > self.on_time:
            raise InvalidInputError("switch-off ramp overlaps the switch-on ramp")

    @property
    def rabi(self):
        """Peak control Rabi frequency, rad/s."""
        return self.rabi_per_sqrt_power * math.sqrt(self.power)

    @property
    def mirror_time(self):
        """Time about which the switching schedule is symmetric (times two)."""
        return self.off_time + self.on_time + self.ramp_time

    def envelope(self, t):
        """Normalised control amplitude in [0, 1] at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        out = np.ones_like(t)
        r = self.ramp_time
        if r > 0:
            x = np.clip((t - self.off_time) / r, 0.0, 1.0)
            down = 0.5 * (1.0 + np.cos(np.pi * x))
            y = np.clip((t - self.on_time) / r, 0.0, 1.0)
            up = 0.5 * (1.0 - np.cos(np.pi * y))
            out = np.where(t < self.on_time, down, up)
        else:
            out = np.where((t >= self.off_time) & (t < self.on_time), 0.0, 1.0)
        return out if out.ndim else float(out)

    def rabi_at(self, t):
        return self.rabi * self.envelope(t)

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class ProbePulse:
    """Complex probe envelope on a uniform time grid starting at ``t0``."""

    t0: float
    dt: float
    samples: np.ndarray
    mean_photons: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "t0", check_finite("t0", self.t0))
        object.__setattr__(self, "dt", check_finite("dt", self.dt, positive=True))
        s = np.array(self.samples, dtype=complex, copy=True)
        if s.ndim != 1:
            raise InvalidInputError(f"samples must be one-dimensional, got shape {s.shape}")
        if s.size == 0:
            raise InvalidInputError("pulse has no samples")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("pulse samples contain non-finite values")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "mean_photons",
                           check_finite("mean_photons", self.mean_photons, nonnegative=True))

    def __len__(self):
        return self.samples.size

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def duration(self):
        return self.dt * self.samples.size

    @property
    def t_end(self):
        return self.t0 + self.dt * (self.samples.size - 1)

    def with_samples(self, samples):
        return replace(self, samples=samples)

    def shifted(self, delta_t):
        return replace(self, t0=self.t0 + delta_t)

    def __eq__(self, other):
        if not isinstance(other, ProbePulse):
            return NotImplemented
        return (self.t0 == other.t0 and self.dt == other.dt and self.mean_photons == other.mean_photons
                and np.array_equal(self.samples, other.samples))

    __hash__ = None


@dataclass(frozen=True)
class SimGrid:
    """Space-time grid of a solver run: ``nz`` nodes over z in [0, 1]."""

    nz: int
    nt: int
    dt: float

    def __post_init__(self):
        for name in ("nz", "nt"):
            v = getattr(self, name)
            if int(v) != v or v < 2:
                raise InvalidInputError(f"{name} must be an integer >= 2, got {v!r}")
            object.__setattr__(self, name, int(v))
        object.__setattr__(self, "dt", check_finite("dt", self.dt, positive=True))

    @property
    def dz(self):
        return 1.0 / (self.nz - 1)

    @property
    def duration(self):
        return self.dt * (self.nt - 1)

    def refined(self, factor=2):
        """Grid with ``factor`` times finer spacing in both z and t."""
        return SimGrid(nz=(self.nz - 1) * factor + 1, nt=(self.nt - 1) * factor + 1, dt=self.dt / factor)

    @classmethod
    def covering(cls, duration, dt, nz=41):
        """Smallest grid with spacing ``dt`` that spans ``duration``."""
        nt = int(math.ceil(duration / dt - 1e-9)) + 1
        return cls(nz=nz, nt=max(nt, 2), dt=dt)


# ---------------------------------------------------------------------------
# pulse utilities
# ---------------------------------------------------------------------------

def pulse_energy(p: ProbePulse) -> float:
    """``sum(|samples|^2) * dt``."""
    if len(p) == 0:
        raise InvalidInputError("pulse has no samples")
    return float(np.sum(np.abs(p.samples) ** 2) * p.dt)


def normalize(p: ProbePulse) -> ProbePulse:
    """Rescale ``p`` to unit energy."""
    e = pulse_energy(p)
    if e <= 0:
        raise DomainError("cannot normalise an all-zero pulse")
    return p.with_samples(p.samples / math.sqrt(e))


def _half_max_width(x, y):
    """Full width at half maximum of samples ``y(x)`` by linear interpolation.

    The global maximum must be attained on one contiguous block, and the
    profile must fall below half of it on both sides inside the data.
    """
    y = np.asarray(y, dtype=float)
    peak = y.max()
    if not peak > 0:
        raise AmbiguityError("profile has no positive maximum")
    at_max = np.flatnonzero(y >= peak * (1.0 - 1e-12))
    if at_max[-1] - at_max[0] + 1 != at_max.size:
        raise AmbiguityError("global maximum is attained at separated points")
    half = 0.5 * peak
    below = np.flatnonzero(y[: at_max[0]] < half)
    if below.size == 0:
        raise AmbiguityError("profile does not drop below half maximum before the left edge")
    i = below[-1]
    xl = x[i] + (half - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i])
    below = np.flatnonzero(y[at_max[-1] + 1:] < half)
    if below.size == 0:
        raise AmbiguityError("profile does not drop below half maximum before the right edge")
    j = at_max[-1] + 1 + below[0]
    xr = x[j - 1] + (half - y[j - 1]) * (x[j] - x[j - 1]) / (y[j] - y[j - 1])
    return float(xr - xl)


def pulse_fwhm(p: ProbePulse) -> float:
    """Intensity FWHM of the envelope, seconds."""
    return _half_max_width(p.times, np.abs(p.samples) ** 2)


def pulse_spectrum(p: ProbePulse, oversample=16):
    """Angular frequency axis and power spectrum ``|FFT|^2`` (zero padded)."""
    n = len(p)
    nfft = 1 << int(math.ceil(math.log2(max(n * oversample, 2))))
    spec = np.fft.fftshift(np.fft.fft(p.samples, nfft))
    omega = TWO_PI * np.fft.fftshift(np.fft.fftfreq(nfft, d=p.dt))
    return omega, np.abs(spec) ** 2


def pulse_bandwidth(p: ProbePulse) -> float:
    """FWHM of the power spectrum, rad/s."""
    if not np.any(p.samples):
        raise DomainError("pulse is identically zero")
    omega, power = pulse_spectrum(p)
    return _half_max_width(omega, power)


def gaussian_pulse(fwhm, *, center=0.0, t0=None, dt=None, span=6.0, mean_photons=1.0):
    """Unit-energy Gaussian whose *intensity* FWHM is ``fwhm``.

    The grid runs from ``t0`` (default ``center - span*fwhm/2``) over
    ``span * fwhm`` with spacing ``dt`` (default ``fwhm / 64``).
    """
    fwhm = check_finite("fwhm", fwhm, positive=True)
    dt = fwhm / 64.0 if dt is None else check_finite("dt", dt, positive=True)
    if t0 is None:
        t0 = center - 0.5 * span * fwhm
    n = int(round(span * fwhm / dt)) + 1
    t = t0 + dt * np.arange(n)
    # |E|^2 = exp(-(t-c)^2 / (2 s_I^2)), s_I = fwhm / (2 sqrt(2 ln 2))
    s_int = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    amp = np.exp(-((t - center) ** 2) / (4.0 * s_int ** 2))
    return normalize(ProbePulse(t0=t0, dt=dt, samples=amp, mean_photons=mean_photons))


def square_pulse(duration, *, t0=0.0, dt, pad=0.0, mean_photons=1.0):
    """Unit-energy flat-top pulse of ``duration`` preceded/followed by ``pad`` of zeros."""
    n_on = int(round(duration / dt))
    n_pad = int(round(pad / dt))
    s = np.concatenate([np.zeros(n_pad), np.ones(n_on), np.zeros(n_pad)])
    return normalize(ProbePulse(t0=t0, dt=dt, samples=s, mean_photons=mean_photons))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

PULSE_HEADER = ("t_seconds", "re", "im")


def write_pulse_csv(p: ProbePulse, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PULSE_HEADER)
        for t, s in zip(p.times, p.samples):
            w.writerow((repr(float(t)), repr(float(s.real)), repr(float(s.imag))))
    return path


def read_pulse_csv(path, mean_photons=1.0) -> ProbePulse:
    """Read a ``t_seconds, re, im`` CSV. Times must be uniformly spaced."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != PULSE_HEADER:
        raise InvalidInputError(f"{path}: expected header {','.join(PULSE_HEADER)}")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    if data.shape[0] < 2 or data.shape[1] != 3:
        raise InvalidInputError(f"{path}: need at least two rows of three columns")
    t = data[:, 0]
    steps = np.diff(t)
    dt = float(steps.mean())
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise InvalidInputError(f"{path}: time column is not uniformly spaced")
    return ProbePulse(t0=float(t[0]), dt=dt, samples=data[:, 1] + 1j * data[:, 2], mean_photons=mean_photons)


@dataclass(frozen=True)
class ODTable:
    """Optional temperature -> optical depth lookup (CSV ``temp_celsius, od``)."""

    temps: np.ndarray = field(repr=False)
    ods: np.ndarray = field(repr=False)

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        body = rows[1:] if rows and not _is_number(rows[0][0]) else rows
        data = np.array([[float(c) for c in r[:2]] for r in body])
        order = np.argsort(data[:, 0])
        return cls(temps=data[order, 0], ods=data[order, 1])

    def od_at(self, temp_celsius):
        if not self.temps[0] <= temp_celsius <= self.temps[-1]:
            raise DomainError(f"temperature {temp_celsius} outside table range")
        return float(np.interp(temp_celsius, self.temps, self.ods))


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True

