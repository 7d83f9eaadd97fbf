"""Signal-to-noise and fidelity bookkeeping for single-photon storage.

Noise is a flat count rate while the control field is on. Its strength is
given in photons per reference window, so that a floor measured over some
window converts to a rate by dividing by that window::

    rate = (floor + c_srs * od * P_c + c_fwm * od**2 * P_c**2) / reference_window

Fidelity factors into an operation part ``f_o`` (state distortion by the
optics) and a measurement part ``f_m`` set by the single-photon SNR.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .bloch import FieldRecord, storage_efficiency
from .core import check_finite
from .exceptions import DomainError, InvalidInputError, RangeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    """Phenomenological noise: floor plus Raman and four-wave-mixing terms.

    Parameters
    ----------
    floor_per_trial : float
        Photons detected per ``reference_window`` with no input and no OD or
        power dependence.
    c_srs : float
        Photons per reference window per (OD x control power [W]).
    c_fwm : float
        Photons per reference window per (OD x control power [W])^2.
    reference_window : float
        Window (s) over which the coefficients are counted.
    """

    floor_per_trial: float
    c_srs: float = 0.0
    c_fwm: float = 0.0
    reference_window: float = 2e-6

    def __post_init__(self):
        for name in ("floor_per_trial", "c_srs", "c_fwm"):
            object.__setattr__(self, name, check_finite(name, getattr(self, name), nonnegative=True))
        object.__setattr__(self, "reference_window",
                           check_finite("reference_window", self.reference_window, positive=True))

    @property
    def window_rate(self):
        """Floor rate in photons/s."""
        return self.floor_per_trial / self.reference_window

    def rate(self, od=0.0, p_c=0.0):
        od = check_finite("od", od, nonnegative=True)
        p_c = check_finite("p_c", p_c, nonnegative=True)
        x = od * p_c
        return (self.floor_per_trial + self.c_srs * x + self.c_fwm * x * x) / self.reference_window

    def noise(self, od, p_c, window):
        """Mean noise photons in a detection window of length ``window`` (s)."""
        window = check_finite("window", window, nonnegative=True)
        return self.rate(od, p_c) * window

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class RailPair:
    """Two dual-rail paths with intensity transmission ratio ``T`` and relative phase ``phi``."""

    transmission_ratio: float
    differential_phase: float = 0.0

    def __post_init__(self):
        T = check_finite("transmission_ratio", self.transmission_ratio)
        if not 0 < T <= 1:
            raise DomainError(f"transmission_ratio must lie in (0, 1], got {T}")
        object.__setattr__(self, "transmission_ratio", T)
        object.__setattr__(self, "differential_phase", check_finite("differential_phase", self.differential_phase))

    @classmethod
    def from_transmissions(cls, t_a, t_b, differential_phase=0.0):
        t_a = check_finite("t_a", t_a, positive=True)
        t_b = check_finite("t_b", t_b, positive=True)
        return cls(min(t_a, t_b) / max(t_a, t_b), differential_phase)

    @property
    def f_amplitude(self):
        return worst_case_amplitude_fidelity(self.transmission_ratio)

    @property
    def f_phase(self):
        return worst_case_phase_fidelity(self.differential_phase)

    @property
    def f_o(self):
        return self.f_amplitude * self.f_phase


def measurement_fidelity(snr):
    """``1 - 1/(2(1 + snr))``: a fraction ``1/(1+snr)`` of clicks is unpolarised noise."""
    snr = float(snr)
    if math.isnan(snr) or snr < 0:
        raise DomainError(f"snr must be >= 0, got {snr}")
    if math.isinf(snr):
        return 1.0
    return 1.0 - 0.5 / (1.0 + snr)


def snr_single_photon(snr_measured, mean_photons):
    """Scale an SNR measured with ``mean_photons`` input photons to one photon."""
    mean_photons = float(mean_photons)
    if not mean_photons > 0:
        raise DomainError(f"mean_photons must be > 0, got {mean_photons}")
    snr_measured = check_finite("snr_measured", snr_measured, nonnegative=True)
    return snr_measured / mean_photons


def amplitude_fidelity(T, b):
    """Fidelity of a dual-rail state with rail weight ``b`` after unequal rail transmission ``T``.

    The second rail, carrying weight ``b``, has amplitude transmission
    ``sqrt(T)`` relative to the first.
    """
    t = math.sqrt(T)
    b = np.asarray(b, dtype=float)
    return (1.0 + b * (t - 1.0)) ** 2 / (1.0 + b * (t * t - 1.0))


def worst_case_amplitude_fidelity(T):
    """Minimum of :func:`amplitude_fidelity` over input states, ``4 sqrt(T) / (1 + sqrt(T))^2``."""
    T = float(T)
    if not 0 < T <= 1:
        raise DomainError(f"transmission ratio must lie in (0, 1], got {T}")
    t = math.sqrt(T)
    return 4.0 * t / (1.0 + t) ** 2


def worst_case_phase_fidelity(phi):
    """Overlap of an equal superposition with its copy after a relative phase ``phi``."""
    return math.cos(0.5 * float(phi)) ** 2


def combined_fidelity(f_o, f_m):
    for name, v in (("f_o", f_o), ("f_m", f_m)):
        v = float(v)
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {v}")
    return float(f_o) * float(f_m)


def _psd_sqrt(m):
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def state_fidelity(rho, sigma):
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`` of two density matrices."""
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidInputError("density matrices must be square and of equal shape")
    s = _psd_sqrt(rho)
    w = np.linalg.eigvalsh(0.5 * (s @ sigma @ s + (s @ sigma @ s).conj().T))
    # round-off eigenvalues of rank-deficient products would otherwise add O(sqrt(eps))
    w[w < len(w) * np.finfo(float).eps * max(w.max(), 0.0)] = 0.0
    return float(np.sum(np.sqrt(w)) ** 2)


def noisy_state(rho_signal, snr):
    """Detected polarisation state: signal with weight ``snr/(1+snr)``, rest unpolarised."""
    rho_signal = np.asarray(rho_signal, dtype=complex)
    a = snr / (1.0 + snr)
    return a * rho_signal + (1.0 - a) * np.eye(rho_signal.shape[0]) / rho_signal.shape[0]


# ---------------------------------------------------------------------------
# detection-window trade-off
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowPoint:
    window: float
    eta: float
    snr_1: float
    f_m: float
    fidelity: float
    f_o: float
    noise_rate: float

    def to_dict(self):
        return {"window_s": self.window, "eta": self.eta, "snr_single_photon": self.snr_1,
                "fidelity": self.fidelity, "f_o": self.f_o, "noise_rate_hz": self.noise_rate}


def evaluate_window(eta, noise_photons, n_in, f_o, window=math.nan, noise_rate=math.nan):
    """SNR and fidelity for one detection window given efficiency and mean noise."""
    n_in = float(n_in)
    if not n_in > 0:
        raise DomainError(f"mean input photon number must be > 0, got {n_in}")
    signal = n_in * eta
    if noise_photons > 0:
        snr_measured = signal / noise_photons
    else:
        snr_measured = math.inf if signal > 0 else 0.0
    snr_1 = snr_measured / n_in if math.isfinite(snr_measured) else math.inf
    f_m = measurement_fidelity(snr_1)
    return WindowPoint(window=float(window), eta=float(eta), snr_1=float(snr_1), f_m=f_m,
                       fidelity=combined_fidelity(f_o, f_m), f_o=float(f_o), noise_rate=float(noise_rate))


def window_tradeoff(record: FieldRecord, noise: NoiseModel, od, p_c, n_in, f_o, windows,
                    detection_efficiency=1.0, start=None):
    """Efficiency, single-photon SNR and fidelity for detection windows opening at ``start``.

    ``start`` defaults to the control switch-on. The detected efficiency is
    ``detection_efficiency`` times the retrieved fraction inside the window.
    """
    windows = np.asarray(windows, dtype=float).reshape(-1)
    if windows.size == 0:
        raise InvalidInputError("no detection windows given")
    if np.any(windows <= 0) or not np.all(np.isfinite(windows)):
        raise DomainError("detection windows must be finite and > 0")
    detection_efficiency = check_finite("detection_efficiency", detection_efficiency, positive=True)
    if start is None:
        start = record.control.on_time
    t_end = record.times[-1]
    rate = noise.rate(od, p_c)
    out = []
    for w in windows:
        if start + w > t_end + 1e-9 * record.dt:
            raise RangeError(f"window {w:.6g} s runs past the end of the record ({t_end:.6g} s)")
        eta = detection_efficiency * storage_efficiency(record, start, w)
        out.append(evaluate_window(eta, rate * w, n_in, f_o, window=w, noise_rate=rate))
    return out


# ---------------------------------------------------------------------------
# counting statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CountStats:
    histogram: np.ndarray
    noise_histogram: np.ndarray
    snr: float
    stderr: float
    trials: int

    def to_dict(self):
        return {"trials": self.trials, "snr": self.snr, "stderr": self.stderr,
                "histogram": self.histogram.tolist(), "noise_histogram": self.noise_histogram.tolist()}


def simulate_counts(signal, noise, trials, seed):
    """Poisson photon counting for ``trials`` storage attempts.

    Each trial draws counts in the detection window (mean ``signal + noise``)
    and in a noise-only window of equal length (mean ``noise``). The SNR
    estimate is ``(mean_signal_window - mean_noise_window) / mean_noise_window``
    with a delta-method standard error.
    """
    signal = check_finite("signal", signal, nonnegative=True)
    noise = check_finite("noise", noise, nonnegative=True)
    if int(trials) != trials or trials < 1:
        raise InvalidInputError(f"trials must be a positive integer, got {trials!r}")
    trials = int(trials)
    rng = np.random.default_rng(seed)
    on = rng.poisson(signal + noise, size=trials)
    off = rng.poisson(noise, size=trials)
    m_on, m_off = on.mean(), off.mean()
    if m_off == 0:
        snr, err = (math.inf if m_on > 0 else 0.0), math.nan
    else:
        snr = (m_on - m_off) / m_off
        ddof = 1 if trials > 1 else 0
        var_on, var_off = on.var(ddof=ddof) / trials, off.var(ddof=ddof) / trials
        err = math.sqrt(var_on / m_off ** 2 + (m_on ** 2) * var_off / m_off ** 4)
    return CountStats(histogram=np.bincount(on), noise_histogram=np.bincount(off),
                      snr=float(snr), stderr=float(err), trials=trials)
