import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_control
from qmemsim.bloch import auto_grid, simulate
from qmemsim.core import MediumSpec, gaussian_pulse
from qmemsim.exceptions import DomainError, InvalidInputError, RangeError
from qmemsim.fidelity import (NoiseModel, RailPair, amplitude_fidelity, combined_fidelity, evaluate_window,
                              measurement_fidelity, noisy_state, simulate_counts, snr_single_photon,
                              state_fidelity, window_tradeoff, worst_case_amplitude_fidelity,
                              worst_case_phase_fidelity)


def brute_amplitude_fidelity(T, n=1000):
    # dual-rail input sqrt(1-b)|0> + sqrt(b)|1>; rail 1 transmits amplitude sqrt(T) relative to rail 0
    b = np.linspace(0.0, 1.0, n)
    psi = np.stack([np.sqrt(1 - b), np.sqrt(b)])
    out = psi * np.array([[1.0], [math.sqrt(T)]])
    out /= np.linalg.norm(out, axis=0)
    return float(np.min(np.sum(psi * out, axis=0) ** 2))


@pytest.fixture(scope="module")
def record():
    m = MediumSpec(od=2.0, buffer_pressure=10.0)
    c = make_control(ramp=20e-9)
    p = gaussian_pulse(30e-9, center=1.1e-6, dt=1e-9, span=8)
    return simulate(m, c, p, auto_grid(m, c, p, 2.5e-6))


def test_measurement_fidelity_examples():
    assert measurement_fidelity(8.63) == pytest.approx(0.9481, abs=5e-5)
    assert measurement_fidelity(0.0) == 0.5
    assert measurement_fidelity(17.3) == pytest.approx(0.9727, abs=5e-5)
    assert measurement_fidelity(math.inf) == 1.0
    with pytest.raises(DomainError):
        measurement_fidelity(-0.1)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_measurement_fidelity_monotone(a, b):
    lo, hi = sorted((a, b))
    assert 0.5 <= measurement_fidelity(lo) <= measurement_fidelity(hi) < 1.0 or hi > 1e15


def test_snr_scaling_examples():
    assert snr_single_photon(23.65, 2.74) == pytest.approx(8.63, abs=5e-3)
    assert snr_single_photon(5.5, 1.0) == 5.5
    assert snr_single_photon(0.0, 2.74) == 0.0
    with pytest.raises(DomainError):
        snr_single_photon(1.0, 0.0)


@pytest.mark.parametrize("T", [0.25, 0.5, 0.81, 0.95])
def test_amplitude_bound_is_grid_minimum(T):
    assert brute_amplitude_fidelity(T) == pytest.approx(worst_case_amplitude_fidelity(T), abs=1e-6)


def test_amplitude_fidelity_matches_state_overlap():
    b = np.linspace(0, 1, 11)
    for T in (0.3, 0.9):
        psi = np.stack([np.sqrt(1 - b), np.sqrt(b)])
        out = psi * np.array([[1.0], [math.sqrt(T)]])
        out /= np.linalg.norm(out, axis=0)
        assert np.allclose(amplitude_fidelity(T, b), np.sum(psi * out, axis=0) ** 2, atol=1e-14)


def test_amplitude_bound_examples():
    assert worst_case_amplitude_fidelity(1.0) == 1.0
    assert worst_case_amplitude_fidelity(0.81) == pytest.approx(4 * 0.9 / 1.9 ** 2, rel=1e-14)
    assert worst_case_amplitude_fidelity(0.81) == pytest.approx(0.99723, abs=1e-5)
    err = 1 - worst_case_amplitude_fidelity(0.9)
    assert err == pytest.approx(6.9e-4, abs=5e-6) and err < 0.002
    # minimum sits at b = 1/(1 + t)
    t = math.sqrt(0.81)
    assert amplitude_fidelity(0.81, 1 / (1 + t)) == pytest.approx(worst_case_amplitude_fidelity(0.81), abs=1e-14)
    for bad in (0.0, 1.1):
        with pytest.raises(DomainError):
            worst_case_amplitude_fidelity(bad)


def test_phase_fidelity_examples():
    assert worst_case_phase_fidelity(0.0) == 1.0
    assert worst_case_phase_fidelity(math.pi) == pytest.approx(0.0, abs=1e-30)
    assert worst_case_phase_fidelity(0.284) == pytest.approx(0.98, abs=2e-4)
    # overlap of an equal superposition with its phase-shifted copy
    phi = 0.7
    psi = np.array([1, 1]) / math.sqrt(2)
    assert worst_case_phase_fidelity(phi) == pytest.approx(
        abs(np.vdot(psi, psi * np.array([1, np.exp(1j * phi)]))) ** 2, abs=1e-14)


def test_combined_fidelity_examples():
    assert combined_fidelity(1.0, 0.93) == 0.93
    assert combined_fidelity(0.93, 1.0) == 0.93
    assert combined_fidelity(0.998 * 0.98, 0.948) == pytest.approx(0.927, abs=5e-4)
    with pytest.raises(DomainError):
        combined_fidelity(1.2, 0.5)


def test_rail_pair():
    r = RailPair.from_transmissions(0.45, 0.5, differential_phase=0.1)
    assert r.transmission_ratio == pytest.approx(0.9)
    assert r.f_o == pytest.approx(worst_case_amplitude_fidelity(0.9) * math.cos(0.05) ** 2)
    with pytest.raises(DomainError):
        RailPair(0.0)


@settings(max_examples=30)
@given(st.floats(0, 100), st.floats(0, 2 * math.pi), st.floats(0, math.pi))
def test_density_matrix_composition(snr, phi, theta):
    psi = np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])
    rho = np.outer(psi, psi.conj())
    assert state_fidelity(rho, noisy_state(rho, snr)) == pytest.approx(measurement_fidelity(snr), abs=1e-12)


def test_state_fidelity_shape_check():
    with pytest.raises(InvalidInputError):
        state_fidelity(np.eye(2), np.eye(3))


def test_noise_model():
    nm = NoiseModel(1.9e-3, c_srs=0.1, c_fwm=0.01, reference_window=200e-9)
    assert nm.window_rate == pytest.approx(1.9e-3 / 200e-9)
    assert nm.noise(0, 0, 200e-9) == pytest.approx(1.9e-3)
    assert nm.noise(2, 0.02, 200e-9) == pytest.approx(1.9e-3 + 0.1 * 0.04 + 0.01 * 0.04 ** 2)
    assert nm.rate(3, 0.02) > nm.rate(2, 0.02) and nm.rate(2, 0.03) > nm.rate(2, 0.02)
    with pytest.raises(DomainError):
        NoiseModel(-1.0)


def test_evaluate_window_operating_point():
    # noise in the 200 ns window equals the quoted floor
    wp = evaluate_window(eta=8.63 * 1.9e-3, noise_photons=1.9e-3, n_in=2.74, f_o=1.0)
    assert wp.snr_1 == pytest.approx(8.63, rel=1e-12)
    assert wp.f_m == pytest.approx(0.9481, abs=5e-5)
    assert wp.fidelity == wp.f_o * wp.f_m


def test_window_tradeoff_shape(record):
    nm = NoiseModel(1.9e-3, reference_window=200e-9)
    on = record.control.on_time
    windows = np.linspace(20e-9, record.times[-1] - on, 40)
    pts = window_tradeoff(record, nm, 2.0, 0.02, 2.74, 0.99, windows)
    eta = np.array([p.eta for p in pts])
    fid = np.array([p.fidelity for p in pts])
    assert np.all(np.diff(eta) >= 0)
    # past the retrieved pulse the signal is constant while noise keeps growing
    captured = eta >= 0.99 * eta[-1]
    assert captured.sum() >= 5
    assert np.all(np.diff(fid[captured]) < 0)
    for p in pts:
        assert p.fidelity == p.f_o * p.f_m


def test_window_tradeoff_errors(record):
    nm = NoiseModel(1.9e-3)
    with pytest.raises(RangeError):
        window_tradeoff(record, nm, 2.0, 0.02, 1.0, 1.0, [1.0])
    with pytest.raises(DomainError):
        window_tradeoff(record, nm, 2.0, 0.02, 1.0, 1.0, [0.0])
    with pytest.raises(InvalidInputError):
        window_tradeoff(record, nm, 2.0, 0.02, 1.0, 1.0, [])


def test_counts_examples():
    zero = simulate_counts(0.0, 0.05, 100_000, seed=1)
    assert abs(zero.snr) <= 3 * zero.stderr
    big = simulate_counts(8.63 * 0.01, 0.01, 1_000_000, seed=2)
    assert abs(big.snr - 8.63) <= 3 * big.stderr
    a, b = simulate_counts(0.1, 0.01, 10_000, seed=5), simulate_counts(0.1, 0.01, 10_000, seed=5)
    assert np.array_equal(a.histogram, b.histogram) and a.snr == b.snr
    with pytest.raises(InvalidInputError):
        simulate_counts(0.1, 0.01, 0, seed=1)
