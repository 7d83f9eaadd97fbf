import math

import numpy as np
import pytest

from conftest import make_control
from qmemsim.core import MediumSpec, ProbePulse, gaussian_pulse, pulse_energy
from qmemsim.exceptions import DegenerateSeedError, DomainError, InvalidInputError
from qmemsim.shaping import (PulseShaper, optimize_pulse, pulse_distance, storable_seed, time_reverse)

TOL = 1e-3


@pytest.fixture(scope="module")
def setup():
    return MediumSpec(od=2.0, buffer_pressure=10.0, gamma_s0=0.0), make_control()


@pytest.fixture(scope="module")
def square_report(setup):
    m, c = setup
    return optimize_pulse(m, c, storable_seed(c, 2e-9, 400e-9, kind="square"), max_iters=5, tol=TOL)


def test_time_reverse_symmetric_gaussian_is_fixed():
    p = gaussian_pulse(50e-9, center=0.3e-6, dt=1e-9)
    r = time_reverse(p)
    assert np.allclose(r.samples, p.samples, atol=1e-15)
    assert r.t0 == p.t0


def test_time_reverse_rising_to_decaying():
    t = np.arange(200)
    p = ProbePulse(0.0, 1.0, np.exp(t / 40.0))
    r = time_reverse(p)
    assert np.all(np.diff(np.abs(r.samples)) < 0)
    assert np.allclose(r.samples, np.exp((199 - t) / 40.0))


def test_time_reverse_conjugates_and_is_involution():
    rng = np.random.default_rng(3)
    s = rng.normal(size=64) + 1j * rng.normal(size=64)
    p = ProbePulse(1e-6, 1e-9, s)
    r = time_reverse(p)
    assert np.array_equal(r.samples, np.conj(s[::-1]))
    assert pulse_energy(r) == pulse_energy(p)
    assert np.array_equal(time_reverse(r).samples, s)


def test_time_reverse_about_center():
    p = ProbePulse(1e-6, 1e-9, np.ones(11))
    r = time_reverse(p, center=3e-6)
    assert r.t0 == pytest.approx(3e-6 - p.t_end)


def test_time_reverse_rejects_zero():
    with pytest.raises(DomainError):
        time_reverse(ProbePulse(0.0, 1.0, np.zeros(4)))


def test_square_seed_eta_non_decreasing(square_report):
    etas = square_report.etas
    assert np.all(np.diff(etas) >= -1e-4)
    assert square_report.converged
    assert len(etas) <= 5
    assert etas[-1] > etas[0]


def test_pulses_unit_energy(square_report):
    for p, _ in square_report.iterations:
        assert pulse_energy(p) == pytest.approx(1.0, rel=1e-12)


def test_final_pulse_is_fixed_point(setup, square_report):
    m, c = setup
    final = square_report.final_pulse
    again = optimize_pulse(m, c, final, max_iters=2, tol=TOL)
    assert abs(again.etas[1] - again.etas[0]) < TOL
    assert abs(again.etas[0] - square_report.eta) < 1e-12
    assert pulse_distance(again.iterations[1][0], final) < 10 * TOL


def test_seed_independence(setup, square_report):
    m, c = setup
    other = optimize_pulse(m, c, storable_seed(c, 2e-9, 40e-9, kind="gaussian"), max_iters=8, tol=TOL)
    assert other.etas[0] > 0.1 * square_report.eta
    assert abs(other.eta - square_report.eta) < 2 * TOL


def test_infinite_tol_single_pass(setup):
    m, c = setup
    rep = optimize_pulse(m, c, storable_seed(c, 2e-9, 40e-9, kind="gaussian"), max_iters=5, tol=math.inf)
    assert len(rep.iterations) == 1 and rep.converged


def test_degenerate_seed(setup):
    _, c = setup
    # an empty medium stores nothing, so no seed overlaps the storable mode
    with pytest.raises(DegenerateSeedError):
        optimize_pulse(MediumSpec(od=0.0), c, storable_seed(c, 2e-9, 40e-9), max_iters=3, tol=TOL)


def test_argument_validation(setup):
    m, c = setup
    seed = storable_seed(c, 2e-9, 40e-9)
    with pytest.raises(InvalidInputError):
        optimize_pulse(m, c, seed, max_iters=0)
    with pytest.raises(DomainError):
        optimize_pulse(m, c, seed, tol=0.0)
    with pytest.raises(InvalidInputError):
        storable_seed(c, 2e-9, kind="triangle")


def test_pulse_shaper_estimator(setup, square_report):
    m, c = setup
    seed = storable_seed(c, 2e-9, 400e-9, kind="square")
    est = PulseShaper(medium=m, control=c, max_iters=5, tol=TOL)
    assert est.get_params()["tol"] == TOL
    est.fit(seed)
    assert est.eta_ == pytest.approx(square_report.eta, abs=1e-12)
    assert est.transform(seed) is est.pulse_
    assert est.score(est.pulse_) == pytest.approx(est.eta_, abs=1e-12)
    with pytest.raises(InvalidInputError):
        PulseShaper().fit(seed)
