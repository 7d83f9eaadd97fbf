import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmemsim.core import (ControlTiming, MediumSpec, ODTable, ProbePulse, SimGrid, gaussian_pulse, mhz,
                          normalize, pulse_bandwidth, pulse_energy, pulse_fwhm, read_pulse_csv, square_pulse,
                          to_mhz, write_pulse_csv)
from qmemsim.exceptions import AmbiguityError, DomainError, InvalidInputError


def test_energy_of_zero_pulse_is_zero():
    assert pulse_energy(ProbePulse(0.0, 1.0, np.zeros(5))) == 0.0


def test_energy_single_unit_sample():
    assert pulse_energy(ProbePulse(0.0, 1.0, [1.0])) == 1.0


def test_energy_gaussian_matches_sqrt_pi():
    t = np.arange(-8.0, 8.0 + 5e-4, 1e-3)
    p = ProbePulse(-8.0, 1e-3, np.exp(-t ** 2 / 2))
    # oracle: integral of exp(-t^2) over the real line
    assert pulse_energy(p) == pytest.approx(math.sqrt(math.pi), rel=1e-6)


def test_empty_pulse_rejected():
    with pytest.raises(InvalidInputError):
        ProbePulse(0.0, 1.0, [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
                min_size=1, max_size=40),
       st.floats(1e-12, 1e-3))
def test_normalize_gives_unit_energy(values, dt):
    s = np.array(values)
    if not np.any(np.abs(s) > 1e-100):
        return
    assert pulse_energy(normalize(ProbePulse(0.0, dt, s))) == pytest.approx(1.0, rel=1e-12)


def test_normalize_zero_pulse_rejected():
    with pytest.raises(DomainError):
        normalize(ProbePulse(0.0, 1.0, np.zeros(3)))


def test_gaussian_fwhm_matches_dense_scan():
    sigma_i = 50e-9
    dt = 0.05e-9
    t = np.arange(-400e-9, 400e-9, dt)
    p = ProbePulse(t[0], dt, np.exp(-t ** 2 / (4 * sigma_i ** 2)))
    # dense direct scan of the half-maximum crossings
    inten = np.abs(p.samples) ** 2
    above = t[inten >= 0.5 * inten.max()]
    scan = above[-1] - above[0]
    assert pulse_fwhm(p) == pytest.approx(2 * math.sqrt(2 * math.log(2)) * sigma_i, rel=1e-4)
    assert pulse_fwhm(p) == pytest.approx(scan, abs=2 * dt)


def test_gaussian_pulse_builder_has_requested_fwhm():
    p = gaussian_pulse(218e-9, center=1e-6)
    assert pulse_fwhm(p) == pytest.approx(218e-9, rel=1e-3)
    assert pulse_energy(p) == pytest.approx(1.0, rel=1e-12)


def test_square_fwhm_is_duration():
    p = square_pulse(100e-9, dt=1e-9, pad=50e-9)
    assert pulse_fwhm(p) == pytest.approx(100e-9, abs=1e-9)


def test_two_equal_maxima_ambiguous():
    s = np.zeros(50)
    s[10] = s[30] = 1.0
    with pytest.raises(AmbiguityError):
        pulse_fwhm(ProbePulse(0.0, 1.0, s))


def test_max_at_boundary_ambiguous():
    with pytest.raises(AmbiguityError):
        pulse_fwhm(ProbePulse(0.0, 1.0, np.linspace(0, 1, 20)))


def test_gaussian_time_bandwidth_product():
    p = gaussian_pulse(100e-9, dt=100e-9 / 64, span=12)
    tbp = pulse_fwhm(p) * pulse_bandwidth(p) / (2 * math.pi)
    assert tbp == pytest.approx(4 * math.log(2) / (2 * math.pi), rel=0.01)


def test_gaussian_spectral_sigma_is_inverse_time_sigma():
    # amplitude exp(-t^2/(2 s^2)) has amplitude spectrum exp(-w^2 s^2 / 2): power sigma 1/(sqrt2 s)
    s = 30e-9
    dt = s / 100
    t = np.arange(-12 * s, 12 * s, dt)
    p = ProbePulse(t[0], dt, np.exp(-t ** 2 / (2 * s ** 2)))
    sigma_w = pulse_bandwidth(p) / (2 * math.sqrt(2 * math.log(2)))
    assert sigma_w == pytest.approx(1 / (math.sqrt(2) * s), rel=2e-3)


def test_bandwidth_of_long_carrier_shrinks():
    widths = [pulse_bandwidth(square_pulse(T, dt=1e-9, pad=T)) for T in (1e-7, 1e-6, 1e-5)]
    assert widths[0] > widths[1] > widths[2]
    assert widths[2] < 2 * math.pi * 0.1e6


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e-6, 1e-6), st.floats(0, 2 * math.pi))
def test_widths_invariant_under_shift_and_phase(shift, phase):
    p = gaussian_pulse(80e-9, center=0.0)
    q = p.shifted(shift).with_samples(p.samples * np.exp(1j * phase))
    assert pulse_fwhm(q) == pytest.approx(pulse_fwhm(p), rel=1e-9)
    assert pulse_bandwidth(q) == pytest.approx(pulse_bandwidth(p), rel=1e-9)


def test_mhz_round_trip():
    assert mhz(1.0) == pytest.approx(2 * math.pi * 1e6)
    assert to_mhz(mhz(12.5)) == pytest.approx(12.5)


def test_medium_broadening_and_validation():
    m = MediumSpec(od=2.0, buffer_pressure=10.0)
    assert m.gamma_eff[0] == pytest.approx(mhz(5.75 / 2 + 9.8 * 10 / 2))
    assert MediumSpec(od=2.0, buffer_pressure=20.0).gamma_eff[0] > m.gamma_eff[0]
    with pytest.raises(DomainError):
        MediumSpec(od=-1.0)
    with pytest.raises(InvalidInputError):
        MediumSpec(od=1.0, gamma_e=(1.0, 1.0, 1.0), level_offsets=(0, 1, 2), coupling_signs=(1, 1, 1))
    with pytest.raises(InvalidInputError):
        MediumSpec(od=1.0, level_offsets=(5.0,))
    assert MediumSpec(od=3.0, gamma_s0=10.0, gamma_s_density_coeff=2.0).gamma_s_eff == pytest.approx(16.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 50e-9), st.lists(st.floats(-1e-6, 3e-6), min_size=1, max_size=20))
def test_control_envelope_invariants(ramp, times):
    c = ControlTiming(0.02, 1e9, off_time=0.5e-6, on_time=1.0e-6, ramp_time=ramp)
    env = np.atleast_1d(c.envelope(np.array(times)))
    assert np.all((env >= 0) & (env <= 1))
    assert c.envelope(0.4e-6) == 1.0
    assert c.envelope(0.5e-6 + ramp + 1e-9) == pytest.approx(0.0, abs=1e-12)
    assert c.envelope(1.0e-6 + ramp + 1e-9) == 1.0


def test_control_envelope_continuous():
    c = ControlTiming(0.02, 1e9, off_time=0.5e-6, on_time=1.0e-6, ramp_time=100e-9)
    t = np.linspace(0, 1.5e-6, 150001)
    assert np.max(np.abs(np.diff(c.envelope(t)))) < 1e-3


def test_control_ordering_validated():
    with pytest.raises(InvalidInputError):
        ControlTiming(0.02, 1e9, off_time=1e-6, on_time=0.5e-6)


def test_simgrid_validation():
    with pytest.raises(InvalidInputError):
        SimGrid(nz=1, nt=10, dt=1e-9)
    g = SimGrid.covering(10e-9, 1e-9, nz=5)
    assert g.nt == 11 and g.duration == pytest.approx(10e-9)


def test_pulse_csv_round_trip(tmp_path):
    p = gaussian_pulse(50e-9, center=200e-9).with_samples(
        gaussian_pulse(50e-9, center=200e-9).samples * np.exp(0.3j))
    path = write_pulse_csv(p, tmp_path / "p.csv")
    assert path.read_text().splitlines()[0] == "t_seconds,re,im"
    q = read_pulse_csv(path)
    assert np.allclose(q.samples, p.samples, rtol=0, atol=1e-15)
    assert q.dt == pytest.approx(p.dt, rel=1e-9)


def test_pulse_csv_bad_header(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,a,b\n0,1,0\n1,1,0\n")
    with pytest.raises(InvalidInputError):
        read_pulse_csv(f)


def test_od_table_interpolates(tmp_path):
    f = tmp_path / "od.csv"
    f.write_text("temp_celsius,od\n60,1.0\n80,3.0\n")
    t = ODTable.from_csv(f)
    assert t.od_at(70) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        t.od_at(90)
