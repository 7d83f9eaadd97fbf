"""Weak-probe Maxwell-Bloch propagation through a Lambda-type medium.

Model (co-moving frame, z normalised to the cell length)::

    dE/dz   = i sum_k g_k P_k
    dP_k/dt = -(gamma_k + i (Delta - s_k)) P_k + i g_k E + i f_k Omega(t) S
    dS/dt   = -(gamma_s + i delta) S + i Omega(t) sum_k f_k P_k

with ``g_k**2 = d_k * gamma_bar / 2`` and ``d_k = od * f_k**2 / sum(f**2)``.
``gamma_bar`` is the broadened half width of the first excited level, which
makes the resonant control-off intensity transmission ``exp(-od)`` for a
single level. ``E`` is scaled so that ``|E|^2 dt`` counts photons and the
atomic amplitudes so that ``int |S|^2 dz`` does; without decay the total
``int |E_in|^2 dt = int |E_out|^2 dt + int (|S|^2 + sum|P_k|^2) dz``.

Integration: method of lines. Each RK4 stage rebuilds E(z) from the current
polarisations by a cumulative trapezoid in z, so the scheme is 4th order in
t and 2nd order in z.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .core import ControlTiming, MediumSpec, ProbePulse, SimGrid, check_1d, check_finite
from .exceptions import (DivergenceError, InvalidInputError, RangeError,
                         ResolutionError)

logger = logging.getLogger(__name__)

#: Minimum number of time steps per physical time scale.
STEPS_PER_SCALE = 8
#: RK4 stability bound used for the fastest eigenvalue estimate.
RK4_STABILITY = 2.5


@dataclass(frozen=True)
class FieldRecord:
    """Output of :func:`simulate`.

    ``times`` is the simulation clock; ``e_out``/``e_in`` the probe envelope
    at the cell exit and entrance. ``spinwave_norm``/``polarization_norm``
    are ``int |S|^2 dz`` and ``sum_k int |P_k|^2 dz`` at each step, in the
    same units as the pulse energy.
    """

    grid: SimGrid
    times: np.ndarray = field(repr=False)
    e_in: np.ndarray = field(repr=False)
    e_out: np.ndarray = field(repr=False)
    spinwave_norm: np.ndarray = field(repr=False)
    polarization_norm: np.ndarray = field(repr=False)
    spinwave_snapshots: dict = field(repr=False)
    polarization_snapshots: dict = field(repr=False)
    energy_in: float
    eta_storage: float
    eta_total: float
    retrieval_window: tuple
    control: ControlTiming
    medium: MediumSpec

    @property
    def z(self):
        return np.linspace(0.0, 1.0, self.grid.nz)

    @property
    def dt(self):
        return self.grid.dt

    def output_pulse(self, start=None, stop=None):
        """Exit envelope between ``start`` and ``stop`` as a :class:`ProbePulse`."""
        i0, i1 = self._index_range(start, stop)
        return ProbePulse(t0=float(self.times[i0]), dt=self.dt, samples=self.e_out[i0:i1])

    def cumulative_output(self):
        """Trapezoidal running integral of ``|e_out|^2``."""
        return _cumtrapz(np.abs(self.e_out) ** 2, self.dt)

    def cumulative_input(self):
        return _cumtrapz(np.abs(self.e_in) ** 2, self.dt)

    def norm_residual(self):
        """Relative photon-number bookkeeping error at each step."""
        stored = self.spinwave_norm + self.polarization_norm
        return (self.cumulative_input() - self.cumulative_output() - stored) / self.energy_in

    def _index_range(self, start, stop):
        t = self.times
        i0 = 0 if start is None else int(np.searchsorted(t, start - 1e-9 * self.dt))
        i1 = t.size if stop is None else int(np.searchsorted(t, stop + 1e-9 * self.dt, side="right"))
        return i0, max(i1, i0)


def _cumtrapz(y, dx):
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1])) * dx
    return out


def coupling_constants(medium: MediumSpec):
    """``g_k`` (units sqrt(rad/s)) for the probe coupling of each excited level."""
    gamma_bar = medium.gamma_eff[0]
    return np.sqrt(medium.od * medium.od_fractions * gamma_bar / 2.0)


def _complex_rates(medium, control):
    return medium.gamma_eff + 1j * (control.single_photon_detuning - np.array(medium.level_offsets))


def pulse_scale(pulse: ProbePulse) -> float:
    """Gaussian-equivalent FWHM ``2 sqrt(2 ln 2) sigma`` from the rms width of ``|E|^2``.

    Unlike the peak-based FWHM this does not collapse onto a narrow ripple
    riding on a long pulse (e.g. switching transients in a retrieved photon).
    """
    w = np.abs(pulse.samples) ** 2
    total = w.sum()
    if total == 0:
        return pulse.duration
    t = pulse.times
    mean = np.dot(w, t) / total
    sigma = math.sqrt(max(np.dot(w, (t - mean) ** 2) / total, 0.0))
    return 2.0 * math.sqrt(2.0 * math.log(2.0)) * sigma if sigma > 0 else pulse.dt


def check_resolution(medium, control, grid, pulse=None):
    """Raise :class:`ResolutionError` if ``grid`` under-resolves any scale."""
    dt = grid.dt
    scales = {f"1/gamma_{k + 1} (excited half width)": 1.0 / g for k, g in enumerate(medium.gamma_eff)}
    if control.rabi > 0:
        scales["1/Omega (control Rabi frequency)"] = 1.0 / control.rabi
    if control.ramp_time > 0:
        scales["control ramp time"] = control.ramp_time
    if pulse is not None:
        scales["input pulse width"] = pulse_scale(pulse)
    for name, scale in scales.items():
        if dt * STEPS_PER_SCALE > scale * (1 + 1e-9):
            raise ResolutionError(
                f"dt={dt:.3e} s under-resolves {name}={scale:.3e} s; need dt <= {scale / STEPS_PER_SCALE:.3e} s")
    g = coupling_constants(medium)
    f = np.array(medium.coupling_signs)
    lam = (np.max(np.abs(_complex_rates(medium, control))) + control.rabi * np.sqrt(np.sum(f ** 2))
           + np.sum(g ** 2) + medium.gamma_s_eff + abs(control.two_photon_detuning))
    if dt * lam > RK4_STABILITY:
        raise ResolutionError(
            f"dt={dt:.3e} s exceeds the RK4 stability limit {RK4_STABILITY / lam:.3e} s "
            f"set by the fastest atomic rate {lam:.3e} rad/s")
    if (grid.nz - 1) < 4.0 * medium.od:
        raise ResolutionError(f"nz={grid.nz} under-resolves the absorption length at od={medium.od}; "
                              f"need nz >= {int(math.ceil(4 * medium.od)) + 1}")


def auto_grid(medium, control, pulse, t_end, nz=None, safety=1.0):
    """Coarsest grid that passes :func:`check_resolution` and reaches ``t_end``."""
    scales = [1.0 / g for g in medium.gamma_eff]
    if control.rabi > 0:
        scales.append(1.0 / control.rabi)
    if control.ramp_time > 0:
        scales.append(control.ramp_time)
    scales.append(pulse_scale(pulse))
    dt = min(scales) / STEPS_PER_SCALE
    g = coupling_constants(medium)
    f = np.array(medium.coupling_signs)
    lam = (np.max(np.abs(_complex_rates(medium, control))) + control.rabi * np.sqrt(np.sum(f ** 2))
           + np.sum(g ** 2) + medium.gamma_s_eff + abs(control.two_photon_detuning))
    dt = min(dt, RK4_STABILITY / lam) * safety
    if nz is None:
        nz = default_nz(medium.od)
    return SimGrid.covering(t_end - pulse.t0, dt, nz=nz)


def default_nz(od):
    """z nodes keeping ``od * dz <= 1/15``; the photon-number error is then below 1e-3."""
    return max(31, int(math.ceil(15.0 * od)) + 1)


def _input_interpolant(pulse):
    """Callable returning the input envelope at arbitrary times (zero outside)."""
    t = pulse.times
    if t.size >= 4:
        spline_re = CubicSpline(t, pulse.samples.real)
        spline_im = CubicSpline(t, pulse.samples.imag)

        def ein(tt):
            tt = np.asarray(tt, dtype=float)
            inside = (tt >= t[0]) & (tt <= t[-1])
            return np.where(inside, spline_re(tt) + 1j * spline_im(tt), 0.0)
    else:
        def ein(tt):
            tt = np.asarray(tt, dtype=float)
            inside = (tt >= t[0]) & (tt <= t[-1])
            v = np.interp(tt, t, pulse.samples.real) + 1j * np.interp(tt, t, pulse.samples.imag)
            return np.where(inside, v, 0.0)
    return ein


def simulate(medium: MediumSpec, control: ControlTiming, input: ProbePulse, grid: SimGrid,
             snapshot_times=(), retrieval_window=None, check=True, lossless=False) -> FieldRecord:
    """Propagate ``input`` through the medium and return the full record.

    The simulation clock starts at ``input.t0`` and runs for ``grid.nt`` steps.
    ``retrieval_window`` is ``(start, stop)``; it defaults to
    ``(control.on_time, end of record)``.

    ``lossless=True`` drops the decay rates (gamma_k, gamma_s) from the
    dynamics while keeping the probe coupling fixed by ``gamma_bar``; the
    photon number is then conserved, which makes a convenient accuracy probe.
    """
    if check:
        check_resolution(medium, control, grid, input)
    nz, nt, dt = grid.nz, grid.nt, grid.dt
    dz = grid.dz
    times = input.t0 + dt * np.arange(nt)
    ein_fn = _input_interpolant(input)
    e_in = ein_fn(times)
    e_half = ein_fn(times[:-1] + 0.5 * dt)
    om = control.rabi_at(times)
    om_half = control.rabi_at(times[:-1] + 0.5 * dt)

    g = coupling_constants(medium)[:, None]
    f = np.array(medium.coupling_signs)[:, None]
    rates = _complex_rates(medium, control)[:, None]
    rate_s = medium.gamma_s_eff + 1j * control.two_photon_detuning
    if lossless:
        rates = 1j * rates.imag
        rate_s = 1j * control.two_photon_detuning
    nlev = medium.n_levels

    snap_idx = {}
    for ts in snapshot_times:
        ts = float(ts)
        if not times[0] - 0.5 * dt <= ts <= times[-1] + 0.5 * dt:
            raise RangeError(f"snapshot time {ts} outside simulated span [{times[0]}, {times[-1]}]")
        snap_idx[ts] = int(round((ts - times[0]) / dt))

    def field_at(P, e0):
        src = np.sum(g * P, axis=0)
        acc = np.empty(nz, dtype=complex)
        acc[0] = 0.0
        np.cumsum(0.5 * (src[1:] + src[:-1]) * dz, out=acc[1:])
        return e0 + 1j * acc

    def rhs(P, S, e0, w):
        E = field_at(P, e0)
        dP = -rates * P + 1j * g * E + 1j * (f * w) * S
        dS = -rate_s * S + 1j * w * np.sum(f * P, axis=0)
        return dP, dS

    def trapz_z(y):
        return float(dz * (np.sum(y) - 0.5 * (y[0] + y[-1])))

    P = np.zeros((nlev, nz), dtype=complex)
    S = np.zeros(nz, dtype=complex)
    e_out = np.empty(nt, dtype=complex)
    sw_norm = np.empty(nt)
    pol_norm = np.empty(nt)
    sw_snaps, pol_snaps = {}, {}

    def record(n):
        e_out[n] = field_at(P, e_in[n])[-1]
        sw_norm[n] = trapz_z(np.abs(S) ** 2)
        pol_norm[n] = sum(trapz_z(np.abs(P[k]) ** 2) for k in range(nlev))
        for ts, idx in snap_idx.items():
            if idx == n:
                sw_snaps[ts] = S.copy()
                pol_snaps[ts] = P.copy()

    record(0)
    h = dt
    for n in range(nt - 1):
        e0, eh, e1 = e_in[n], e_half[n], e_in[n + 1]
        w0, wh, w1 = om[n], om_half[n], om[n + 1]
        k1p, k1s = rhs(P, S, e0, w0)
        k2p, k2s = rhs(P + 0.5 * h * k1p, S + 0.5 * h * k1s, eh, wh)
        k3p, k3s = rhs(P + 0.5 * h * k2p, S + 0.5 * h * k2s, eh, wh)
        k4p, k4s = rhs(P + h * k3p, S + h * k3s, e1, w1)
        P = P + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        S = S + (h / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
        record(n + 1)
        if n % 256 == 0 and not (np.all(np.isfinite(S)) and np.all(np.isfinite(P))):
            raise DivergenceError(f"non-finite atomic state at step {n + 1}", step=n + 1)
    if not (np.all(np.isfinite(e_out)) and np.all(np.isfinite(sw_norm))):
        bad = int(np.flatnonzero(~np.isfinite(e_out) | ~np.isfinite(sw_norm))[0])
        raise DivergenceError(f"non-finite field at step {bad}", step=bad)

    energy_in = float(_cumtrapz(np.abs(e_in) ** 2, dt)[-1])
    if energy_in <= 0:
        raise InvalidInputError("input pulse carries no energy on the simulation grid")
    t_store = control.off_time + 2.0 * control.ramp_time
    i_store = int(np.clip(round((t_store - times[0]) / dt), 0, nt - 1))
    eta_storage = sw_norm[i_store] / energy_in

    if retrieval_window is None:
        t_last = float(times[-1])
        retrieval_window = (min(max(control.on_time, float(times[0])), t_last), t_last)
    rec = FieldRecord(grid=grid, times=times, e_in=e_in, e_out=e_out, spinwave_norm=sw_norm,
                      polarization_norm=pol_norm, spinwave_snapshots=sw_snaps,
                      polarization_snapshots=pol_snaps, energy_in=energy_in,
                      eta_storage=float(eta_storage), eta_total=0.0,
                      retrieval_window=tuple(float(x) for x in retrieval_window),
                      control=control, medium=medium)
    start, stop = rec.retrieval_window
    eta_total = storage_efficiency(rec, start, stop - start)
    object.__setattr__(rec, "eta_total", eta_total)
    return rec


def storage_efficiency(record: FieldRecord, window_start, window_len) -> float:
    """Output energy inside ``[window_start, window_start + window_len]`` over input energy."""
    window_start = check_finite("window_start", window_start)
    window_len = check_finite("window_len", window_len, nonnegative=True)
    t = record.times
    tol = 1e-9 * record.dt
    if window_start < t[0] - tol or window_start + window_len > t[-1] + tol:
        raise RangeError(f"window [{window_start}, {window_start + window_len}] outside record "
                         f"[{t[0]}, {t[-1]}]")
    if window_len == 0:
        return 0.0
    cum = record.cumulative_output()
    # intensity is linear between samples -> integrate the interpolant exactly enough
    a = np.interp(window_start, t, cum)
    b = np.interp(min(window_start + window_len, t[-1]), t, cum)
    return float(max(b - a, 0.0) / record.energy_in)


# ---------------------------------------------------------------------------
# steady state (independent analytic route)
# ---------------------------------------------------------------------------

def field_decay_rate(medium: MediumSpec, omega_c, delta, Delta):
    """Amplitude attenuation per unit od, ``kappa / od``, of a CW weak probe.

    Obtained by setting the time derivatives of the model equations to zero
    and eliminating P and S.
    """
    omega_c = np.asarray(omega_c, dtype=float)
    delta = np.asarray(delta, dtype=float)
    f = np.array(medium.coupling_signs)
    gamma_bar = medium.gamma_eff[0]
    g2 = medium.od_fractions * gamma_bar / 2.0  # per unit od
    gk = np.sqrt(g2)
    gam = medium.gamma_eff + 1j * (Delta - np.array(medium.level_offsets))
    C = np.sum(g2 / gam)
    A = np.sum(f * gk / gam)
    B = np.sum(f ** 2 / gam)
    w2 = omega_c ** 2
    denom = medium.gamma_s_eff + 1j * delta + w2 * B
    # od-independent part of the A^2 term: A is per sqrt(od), A^2 per od
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = C - np.where(w2 > 0, w2 * A ** 2 / denom, 0.0)
    return kappa


def group_delay(medium: MediumSpec, omega_c, Delta):
    """Slow-light delay through the cell at two-photon resonance, s.

    From the slope of the transmitted phase at ``delta = 0`` with no spin
    decoherence: ``od * Re(A^2 / B^2) / Omega^2``.
    """
    omega_c = check_finite("omega_c", omega_c, positive=True)
    f = np.array(medium.coupling_signs)
    g2 = medium.od_fractions * medium.gamma_eff[0] / 2.0
    gam = medium.gamma_eff + 1j * (Delta - np.array(medium.level_offsets))
    A = np.sum(f * np.sqrt(g2) / gam)
    B = np.sum(f ** 2 / gam)
    return float(medium.od * np.real(A ** 2 / B ** 2) / omega_c ** 2)


def linear_susceptibility(medium: MediumSpec, omega_c, delta, Delta):
    """Normalised complex response ``chi`` of the medium to a weak CW probe.

    Intensity transmission is ``exp(-od * chi.imag)``; ``chi.imag == 1`` on a
    single resonant level with the control off.
    """
    return 2j * field_decay_rate(medium, omega_c, delta, Delta)


def cw_transmission(medium, omega_c, delta, Delta):
    """Steady-state intensity transmission from :func:`linear_susceptibility`."""
    chi = linear_susceptibility(medium, omega_c, delta, Delta)
    return np.exp(-medium.od * np.imag(chi))


@dataclass(frozen=True)
class EITScan:
    powers: np.ndarray
    deltas: np.ndarray
    transmission: np.ndarray  # shape (n_powers, n_deltas)
    fwhm: tuple  # rad/s, None where no transparency peak exists
    baseline: float

    def rows(self):
        for i, p in enumerate(self.powers):
            for j, d in enumerate(self.deltas):
                yield float(p), float(d), float(self.transmission[i, j])


def transparency_fwhm(deltas, trans, baseline, *, rel_height=1e-9):
    """Width of the transparency peak measured halfway between peak and baseline.

    Returns ``None`` if there is no peak above ``baseline``.
    """
    deltas = np.asarray(deltas, dtype=float)
    trans = np.asarray(trans, dtype=float)
    i = int(np.argmax(trans))
    height = trans[i] - baseline
    if height <= rel_height * max(baseline, 1e-300):
        return None
    half = baseline + 0.5 * height
    left = np.flatnonzero(trans[:i] < half)
    right = np.flatnonzero(trans[i + 1:] < half)
    if left.size == 0 or right.size == 0:
        raise RangeError("delta range does not bracket the transparency peak at half height")
    a = left[-1]
    xl = deltas[a] + (half - trans[a]) * (deltas[a + 1] - deltas[a]) / (trans[a + 1] - trans[a])
    b = i + 1 + right[0]
    xr = deltas[b - 1] + (half - trans[b - 1]) * (deltas[b] - deltas[b - 1]) / (trans[b] - trans[b - 1])
    return float(xr - xl)


def eit_scan(medium: MediumSpec, control: ControlTiming, powers, deltas) -> EITScan:
    """Steady-state transmission vs two-photon detuning for several control powers."""
    powers = check_1d("powers", powers)
    deltas = check_1d("deltas", deltas, min_len=3)
    if np.any(powers < 0):
        raise InvalidInputError("control powers must be >= 0")
    if np.any(np.diff(deltas) <= 0):
        raise InvalidInputError("deltas must be strictly increasing")
    Delta = control.single_photon_detuning
    base = float(cw_transmission(medium, 0.0, 0.0, Delta))
    table = np.empty((powers.size, deltas.size))
    widths = []
    for i, p in enumerate(powers):
        om = control.rabi_per_sqrt_power * math.sqrt(p)
        table[i] = cw_transmission(medium, om, deltas, Delta)
        widths.append(transparency_fwhm(deltas, table[i], base) if om > 0 else None)
    return EITScan(powers=powers, deltas=deltas, transmission=table, fwhm=tuple(widths), baseline=base)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def write_record_csv(record: FieldRecord, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t_seconds", "re_eout", "im_eout"))
        for t, e in zip(record.times, record.e_out):
            w.writerow((repr(float(t)), repr(float(e.real)), repr(float(e.imag))))
    return path


def write_snapshot_csv(record: FieldRecord, time, path, which="spinwave", level=0):
    snaps = record.spinwave_snapshots if which == "spinwave" else record.polarization_snapshots
    if time not in snaps:
        raise RangeError(f"no {which} snapshot recorded at t={time}")
    data = snaps[time] if which == "spinwave" else snaps[time][level]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("z_normalized", "re", "im"))
        for z, v in zip(record.z, data):
            w.writerow((repr(float(z)), repr(float(v.real)), repr(float(v.imag))))
    return path
