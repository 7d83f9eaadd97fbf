"""Iterative time-reversal optimisation of the probe shape.

Each pass stores and retrieves the current pulse, cuts the retrieved photon
out of the output, mirrors it in time about the control schedule, conjugates
and renormalises it, and sends that back in. For a time-symmetric control
schedule the round trip is its own adjoint under this mirror operation, so
the pass is a power-iteration step and the efficiency cannot decrease.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .bloch import auto_grid, simulate
from .core import ControlTiming, MediumSpec, ProbePulse, check_finite, normalize, pulse_energy
from .exceptions import DegenerateSeedError, DomainError, InvalidInputError

logger = logging.getLogger(__name__)

#: First-pass efficiency below which a seed is treated as orthogonal to the storable mode.
DEGENERATE_ETA = 1e-9


def time_reverse(p: ProbePulse, center=None) -> ProbePulse:
    """Mirror ``p`` in time and conjugate it.

    Without ``center`` the reversed pulse occupies the same time span. With
    ``center`` the sample at time ``t`` moves to ``center - t``.
    """
    if not np.any(p.samples):
        raise DomainError("cannot time-reverse an all-zero pulse")
    samples = np.conj(p.samples[::-1])
    t0 = p.t0 if center is None else center - p.t_end
    return ProbePulse(t0=t0, dt=p.dt, samples=samples, mean_photons=p.mean_photons)


def pulse_distance(a: ProbePulse, b: ProbePulse) -> float:
    """L2 distance between two unit-energy envelopes on the same grid, minimised over global phase."""
    if len(a) != len(b) or a.dt != b.dt:
        raise InvalidInputError("pulses must share a grid")
    ov = abs(np.vdot(a.samples, b.samples)) * a.dt
    return math.sqrt(max(2.0 - 2.0 * ov, 0.0))


def extraction_window(medium: MediumSpec, control: ControlTiming, seed: ProbePulse):
    """Time span of the output that is treated as the retrieved photon."""
    start = control.on_time
    return start, start + seed.duration + 5.0 / medium.gamma_eff[0]


def retrieve_and_reverse(record, medium, control, template: ProbePulse) -> ProbePulse:
    """Retrieved photon from ``record``, time-reversed onto ``template``'s grid."""
    start, stop = extraction_window(medium, control, template)
    t_src = control.mirror_time - template.times
    inside = (t_src >= start) & (t_src <= stop)
    re = np.interp(t_src, record.times, record.e_out.real, left=0.0, right=0.0)
    im = np.interp(t_src, record.times, record.e_out.imag, left=0.0, right=0.0)
    samples = np.where(inside, np.conj(re + 1j * im), 0.0)
    if not np.any(samples):
        raise DegenerateSeedError("no retrieved light inside the extraction window")
    return normalize(template.with_samples(samples))


@dataclass(frozen=True)
class ShapingReport:
    iterations: tuple  # of (ProbePulse, eta)
    converged: bool
    final_pulse: ProbePulse

    @property
    def etas(self):
        return np.array([eta for _, eta in self.iterations])

    @property
    def eta(self):
        return float(self.iterations[-1][1])


def _record_end(medium, control, seed):
    return extraction_window(medium, control, seed)[1]


def optimize_pulse(medium: MediumSpec, control: ControlTiming, seed_pulse: ProbePulse,
                   max_iters=5, tol=1e-3, grid=None, nz=None) -> ShapingReport:
    """Run the time-reversal loop until ``|delta eta| < tol`` or ``max_iters`` passes.

    ``iterations[i]`` holds the pulse sent in pass ``i`` and its storage-and-
    retrieval efficiency; ``final_pulse`` is the last pulse sent.
    """
    if int(max_iters) != max_iters or max_iters < 1:
        raise InvalidInputError(f"max_iters must be a positive integer, got {max_iters!r}")
    tol = float(tol)
    if not tol > 0:
        raise DomainError(f"tol must be > 0, got {tol}")
    pulse = normalize(seed_pulse)
    if grid is None:
        grid = auto_grid(medium, control, pulse, _record_end(medium, control, pulse), nz=nz)
    window = extraction_window(medium, control, pulse)

    history = []
    converged = False
    for it in range(int(max_iters)):
        rec = simulate(medium, control, pulse, grid, retrieval_window=window)
        eta = rec.eta_total
        logger.debug("shaping pass %d: eta=%.6f", it, eta)
        if it == 0 and eta < DEGENERATE_ETA:
            raise DegenerateSeedError(f"seed pulse retrieves eta={eta:.3e}; no overlap with storable mode")
        history.append((pulse, eta))
        if it > 0 and abs(eta - history[-2][1]) < tol:
            converged = True
            break
        if math.isinf(tol):
            converged = True
            break
        if it + 1 < max_iters:
            pulse = retrieve_and_reverse(rec, medium, control, pulse)
    return ShapingReport(iterations=tuple(history), converged=converged, final_pulse=history[-1][0])


class PulseShaper(BaseEstimator):
    """Estimator wrapper around :func:`optimize_pulse`.

    ``fit(seed)`` runs the optimisation; ``transform(seed)`` returns the
    optimised pulse for a seed (fitting first if needed).

    Attributes
    ----------
    report_ : ShapingReport
    eta_ : float
        Efficiency of the final pulse.
    pulse_ : ProbePulse
    """

    def __init__(self, medium=None, control=None, max_iters=5, tol=1e-3, nz=None):
        self.medium = medium
        self.control = control
        self.max_iters = max_iters
        self.tol = tol
        self.nz = nz

    def fit(self, X, y=None):
        if not isinstance(X, ProbePulse):
            raise InvalidInputError("PulseShaper.fit expects a ProbePulse seed")
        if self.medium is None or self.control is None:
            raise InvalidInputError("PulseShaper needs both medium and control")
        self.report_ = optimize_pulse(self.medium, self.control, X, self.max_iters, self.tol, nz=self.nz)
        self.pulse_ = self.report_.final_pulse
        self.eta_ = self.report_.eta
        self.n_iter_ = len(self.report_.iterations)
        return self

    def transform(self, X):
        if not hasattr(self, "pulse_"):
            self.fit(X)
        return self.pulse_

    def score(self, X, y=None):
        """Storage-and-retrieval efficiency of pulse ``X`` in this medium."""
        pulse = normalize(X)
        grid = auto_grid(self.medium, self.control, pulse, _record_end(self.medium, self.control, pulse),
                         nz=self.nz)
        rec = simulate(self.medium, self.control, pulse, grid,
                       retrieval_window=extraction_window(self.medium, self.control, pulse))
        return rec.eta_total


def storable_seed(control: ControlTiming, dt, duration=None, kind="square"):
    """Seed pulse that ends at the control switch-off, on a grid spanning [0, off_time]."""
    dt = check_finite("dt", dt, positive=True)
    n = int(round(control.off_time / dt)) + 1
    t = dt * np.arange(n)
    if duration is None:
        duration = control.off_time / 3.0
    if kind == "square":
        s = ((t > control.off_time - 1.5 * duration) & (t <= control.off_time - 0.5 * duration)).astype(float)
    elif kind == "gaussian":
        c = control.off_time - duration
        s = np.exp(-((t - c) ** 2) / (2 * (duration / 2.355) ** 2))
    elif kind == "rising":
        c = control.off_time - 0.5 * duration
        s = np.where(t <= c, np.exp((t - c) / (duration / 3)), 0.0)
    else:
        raise InvalidInputError(f"unknown seed kind {kind!r}")
    p = ProbePulse(t0=0.0, dt=dt, samples=s)
    if pulse_energy(p) == 0:
        raise DomainError("seed pulse is empty on this grid")
    return normalize(p)
