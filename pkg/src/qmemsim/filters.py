"""Fabry-Perot etalon cascades and their thermal drift.

Etalon transmission is the lossless Airy function scaled by a separate peak
transmission. The effective cavity temperature follows room temperature
through a single-pole low-pass with static gain ``1/xi`` and time constant
``tau``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.integrate import quad
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin

from .core import check_finite
from .exceptions import DomainError, FitError, InvalidInputError

logger = logging.getLogger(__name__)

#: Default thermal tuning of the resonance, Hz/K (-2.4 MHz/mK).
DEFAULT_THERMAL_TUNING = -2.4e9


@dataclass(frozen=True)
class EtalonSpec:
    fsr: float
    finesse: float
    peak_transmission: float = 1.0
    thermal_tuning: float = DEFAULT_THERMAL_TUNING
    detuning_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "fsr", check_finite("fsr", self.fsr, positive=True))
        finesse = check_finite("finesse", self.finesse)
        if finesse <= 1:
            raise DomainError(f"finesse must be > 1, got {finesse}")
        object.__setattr__(self, "finesse", finesse)
        pk = check_finite("peak_transmission", self.peak_transmission)
        if not 0 < pk <= 1:
            raise DomainError(f"peak_transmission must lie in (0, 1], got {pk}")
        object.__setattr__(self, "peak_transmission", pk)
        object.__setattr__(self, "thermal_tuning", check_finite("thermal_tuning", self.thermal_tuning))
        object.__setattr__(self, "detuning_offset", check_finite("detuning_offset", self.detuning_offset))

    @property
    def fwhm(self):
        return self.fsr / self.finesse

    @classmethod
    def from_linewidth(cls, fsr, linewidth, **kwargs):
        return cls(fsr=fsr, finesse=fsr / check_finite("linewidth", linewidth, positive=True), **kwargs)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


_ETALON_KEYS = {
    "fsr_hz": ("fsr", 1.0), "fsr_ghz": ("fsr", 1e9),
    "finesse": ("finesse", 1.0),
    "linewidth_hz": ("linewidth", 1.0), "linewidth_mhz": ("linewidth", 1e6),
    "peak_transmission": ("peak_transmission", 1.0),
    "thermal_tuning_hz_per_k": ("thermal_tuning", 1.0),
    "detuning_offset_hz": ("detuning_offset", 1.0), "detuning_offset_mhz": ("detuning_offset", 1e6),
}


def etalon_from_dict(d) -> EtalonSpec:
    """Build an :class:`EtalonSpec` from a unit-suffixed mapping; unknown keys are rejected."""
    if not isinstance(d, dict):
        raise InvalidInputError(f"etalon entry must be an object, got {type(d).__name__}")
    kw = {}
    for key, value in d.items():
        if key not in _ETALON_KEYS:
            raise InvalidInputError(f"unknown etalon key {key!r}")
        name, scale = _ETALON_KEYS[key]
        if name in kw:
            raise InvalidInputError(f"etalon field {name!r} given twice")
        kw[name] = float(value) * scale
    if "fsr" not in kw:
        raise InvalidInputError("etalon entry needs fsr_hz or fsr_ghz")
    if ("finesse" in kw) == ("linewidth" in kw):
        raise InvalidInputError("etalon entry needs exactly one of finesse or linewidth")
    if "linewidth" in kw:
        return EtalonSpec.from_linewidth(kw.pop("fsr"), kw.pop("linewidth"), **kw)
    return EtalonSpec(**kw)


def load_stack(path):
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict) and "stack" in data:
        data = data["stack"]
    if not isinstance(data, list):
        raise InvalidInputError("stack file must hold a JSON list of etalons")
    return [etalon_from_dict(d) for d in data]


def airy_transmission(e: EtalonSpec, detuning):
    """Intensity transmission at ``detuning`` (Hz) from the nearest comb line."""
    d = np.asarray(detuning, dtype=float) - e.detuning_offset
    coef = (2.0 * e.finesse / math.pi) ** 2
    out = e.peak_transmission / (1.0 + coef * np.sin(math.pi * d / e.fsr) ** 2)
    return float(out) if out.ndim == 0 else out


def _check_stack(stack):
    stack = list(stack)
    if not stack:
        raise InvalidInputError("etalon stack is empty")
    return stack


def cascade_suppression_db(stack, detuning):
    """Suppression in dB of the cascade relative to its peak (insertion loss excluded)."""
    stack = _check_stack(stack)
    total = 0.0
    for e in stack:
        total = total - 10.0 * np.log10(airy_transmission(e.replace(peak_transmission=1.0), detuning))
    return float(total) if np.ndim(total) == 0 else total


def cascade_insertion_loss_db(stack):
    return float(sum(-10.0 * math.log10(e.peak_transmission) for e in _check_stack(stack)))


def band_suppression_db(stack, center, width):
    """Suppression of a flat band ``[center - width/2, center + width/2]`` (Hz).

    The mean cascade transmission over the band is found by adaptive
    quadrature; the result is ``-10 log10`` of that mean.
    """
    stack = _check_stack(stack)
    width = check_finite("width", width, positive=True)
    unit = [e.replace(peak_transmission=1.0) for e in stack]

    def trans(f):
        return math.prod(airy_transmission(e, f) for e in unit)

    lo, hi = center - width / 2.0, center + width / 2.0
    # tell quad where the narrow transmission lines are
    points = set()
    for e in unit:
        k0, k1 = math.ceil((lo - e.detuning_offset) / e.fsr), math.floor((hi - e.detuning_offset) / e.fsr)
        points.update(e.detuning_offset + k * e.fsr for k in range(k0, k1 + 1))
    val, _ = quad(trans, lo, hi, points=sorted(p for p in points if lo < p < hi) or None,
                  limit=500, epsabs=0.0, epsrel=1e-9)
    return float(-10.0 * math.log10(val / width))


# ---------------------------------------------------------------------------
# thermal model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalParams:
    xi: float
    tau: float
    t_set: float = 0.0

    def __post_init__(self):
        xi = float(self.xi)
        if not xi > 0 or math.isnan(xi):
            raise DomainError(f"xi must be > 0, got {self.xi}")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "tau", check_finite("tau", self.tau, positive=True))
        object.__setattr__(self, "t_set", check_finite("t_set", self.t_set))

    def replace(self, **changes):
        return replace(self, **changes)


def thermal_step(tp: ThermalParams, dT_room, t):
    """Cavity temperature change after a room step ``dT_room`` applied at t = 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("thermal_step needs t >= 0")
    out = dT_room / tp.xi * -np.expm1(-t / tp.tau)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ThermalFitReport:
    xi: float
    tau: float
    residuals: np.ndarray
    converged: bool
    unbounded: bool
    message: str

    def to_dict(self):
        return {"xi": self.xi, "tau_s": self.tau, "converged": self.converged,
                "xi_unbounded": self.unbounded,
                "rms_residual_k": float(np.sqrt(np.mean(self.residuals ** 2))) if len(self.residuals) else 0.0}


class ThermalStepRegressor(RegressorMixin, BaseEstimator):
    """Fits ``(xi, tau)`` to a cavity step response ``dT_cavity(t)``.

    ``X`` holds the times (shape (n,) or (n, 1)), ``y`` the cavity temperature
    change. A trace with no response is reported with ``xi_ = inf``.
    """

    def __init__(self, dT_room=1.0, max_nfev=2000):
        self.dT_room = dT_room
        self.max_nfev = max_nfev

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float)
        if t.shape != y.shape:
            raise InvalidInputError("times and temperatures must have the same length")
        if t.size < 3:
            raise InvalidInputError("need at least 3 points")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))) or np.any(t < 0):
            raise InvalidInputError("trace must be finite with t >= 0")
        dT = float(self.dT_room)
        if dT == 0 or not math.isfinite(dT):
            raise DomainError("dT_room must be finite and non-zero")
        if not np.any(y):
            self.xi_, self.tau_ = math.inf, math.nan
            self.report_ = ThermalFitReport(math.inf, math.nan, np.zeros_like(y), True, True,
                                            "no cavity response: isolation unbounded")
            logger.warning("flat thermal trace: xi is unbounded")
            return self

        # amplitude A = dT/xi is linear, tau enters through exp; fit (log A', log tau) with sign of A fixed
        sign = math.copysign(1.0, float(np.mean(y)) * dT)
        span = float(t.max() - t.min()) or 1.0
        a0 = max(abs(float(y[np.argmax(np.abs(y))])), 1e-300)
        t_half = t[np.argmax(np.abs(y) >= 0.63 * a0)]
        tau0 = max(float(t_half), span / 10.0)

        def resid(theta):
            a, tau = np.exp(theta)
            return sign * a * -np.expm1(-t / tau) - y

        scale = a0
        res = least_squares(lambda th: resid(th) / scale, x0=np.log([a0, tau0]), method="lm",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=int(self.max_nfev))
        a, tau = np.exp(res.x)
        xi = abs(dT) / a
        if sign * dT < 0:
            logger.warning("cavity response has the opposite sign to the room step")
        self.xi_, self.tau_ = float(xi), float(tau)
        self.report_ = ThermalFitReport(self.xi_, self.tau_, resid(res.x), bool(res.success), False,
                                        str(res.message))
        if not res.success:
            raise FitError(f"thermal fit did not converge: {res.message}", best=self.report_)
        return self

    def predict(self, X):
        t = np.asarray(X, dtype=float).reshape(-1)
        if math.isinf(self.xi_):
            return np.zeros_like(t)
        return thermal_step(ThermalParams(self.xi_, self.tau_), float(self.dT_room), t)


def fit_thermal(step_trace, dT_room):
    """Fit ``(xi, tau)`` to rows of ``(t, dT_cavity)``."""
    arr = np.asarray(step_trace, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError("step trace must be rows of (t, dT_cavity)")
    m = ThermalStepRegressor(dT_room=dT_room).fit(arr[:, 0], arr[:, 1])
    return m.xi_, m.tau_, m.report_


def _uniform_step(t):
    if t.size < 2:
        return 1.0
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if not dt > 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise InvalidInputError("room trace must be uniformly sampled; resample it first")
    return dt


def cavity_temperature(tp: ThermalParams, room_trace, room_reference=None):
    """Cavity temperature change driven by a room-temperature trace.

    Deviations are taken relative to ``room_reference``, the room
    temperature at which the cavity sits on the probe: ``"first"`` (first
    sample, the default), ``"mean"`` (trace average) or a value in K.
    The cavity starts in equilibrium at the reference; the room temperature
    is then held constant over each interval and the low-pass is integrated
    exactly across it, so long traces accumulate no error.

    Returns
    -------
    t, dT_cavity : ndarray
    """
    arr = np.asarray(room_trace, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise InvalidInputError("room trace must be rows of (t, temperature)")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("room trace contains non-finite values")
    t, room = arr[:, 0], arr[:, 1]
    dt = _uniform_step(t)
    if room_reference is None or room_reference == "first":
        ref = room[0]
    elif room_reference == "mean":
        ref = float(np.mean(room))
    else:
        ref = check_finite("room_reference", room_reference)
    u = room - ref
    out = np.zeros_like(u)
    if math.isinf(tp.xi):
        return t, out
    a = math.exp(-dt / tp.tau)
    y = 0.0
    for i in range(1, len(u)):
        y = a * y + (1.0 - a) * u[i - 1] / tp.xi
        out[i] = y
    return t, out


def transmission_trace(e: EtalonSpec, tp: ThermalParams, room_trace, probe_detuning, room_reference=None):
    """Transmission of one etalon vs time as it drifts with the room.

    A cavity temperature change ``dT`` moves the probe to an effective
    detuning ``probe_detuning + thermal_tuning * dT`` from the comb.

    Returns
    -------
    ndarray of rows ``(t, transmission)``
    """
    t, dT = cavity_temperature(tp, room_trace, room_reference)
    tr = airy_transmission(e, probe_detuning + e.thermal_tuning * dT)
    return np.column_stack([t, np.atleast_1d(tr)])


def square_wave_room(amplitude, period, duration, dt, base=293.15):
    """Room-temperature square wave rows ``(t, K)``, starting on the upper half period."""
    t = np.arange(0.0, duration + 0.5 * dt, dt)
    phase = np.floor(2.0 * t / period).astype(int) % 2
    return np.column_stack([t, base + np.where(phase == 0, amplitude, -amplitude)])


def relative_std(trace):
    tr = np.asarray(trace, dtype=float)[:, 1]
    return float(np.std(tr) / np.mean(tr))


def read_room_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names or ()
    if set(names) != {"t_seconds", "temp_kelvin"}:
        raise InvalidInputError(f"room trace CSV needs columns t_seconds,temp_kelvin; got {names}")
    return np.column_stack([np.atleast_1d(data["t_seconds"]), np.atleast_1d(data["temp_kelvin"])])
