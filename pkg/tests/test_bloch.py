import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_control
from qmemsim.bloch import (auto_grid, check_resolution, cw_transmission, eit_scan, field_decay_rate,
                           group_delay, linear_susceptibility, simulate, storage_efficiency, write_record_csv,
                           write_snapshot_csv)
from qmemsim.core import MediumSpec, ProbePulse, SimGrid, gaussian_pulse, mhz
from qmemsim.exceptions import DivergenceError, RangeError, ResolutionError
from qmemsim.shaping import storable_seed


def cw_probe(t_end, rise, dt):
    t = np.arange(0.0, t_end + dt / 2, dt)
    return ProbePulse(0.0, dt, np.where(t < rise, 0.5 * (1 - np.cos(np.pi * t / rise)), 1.0))


def smooth_setup(od=2.0):
    m = MediumSpec(od=od, buffer_pressure=10.0)
    c = make_control(ramp=20e-9)
    p = gaussian_pulse(30e-9, center=1.1e-6, dt=1e-9, span=8)
    return m, c, p


# -- steady-state oracle ------------------------------------------------------

def test_susceptibility_two_level_normalisation():
    m = MediumSpec(od=1.0)
    assert linear_susceptibility(m, 0.0, 0.0, 0.0).imag == pytest.approx(1.0, rel=1e-12)


def test_susceptibility_dark_state():
    m = MediumSpec(od=1.0)
    chi = linear_susceptibility(m, mhz(10.0), 0.0, mhz(-120.0))
    assert abs(chi) < 1e-12


def test_susceptibility_off_resonant_lorentzian():
    m = MediumSpec(od=1.0)
    g = m.gamma_eff[0]
    Delta = mhz(-120.0)
    # two-level Lorentzian: absorption g^2 / (g^2 + Delta^2)
    assert linear_susceptibility(m, 0.0, 0.0, Delta).imag == pytest.approx(g ** 2 / (g ** 2 + Delta ** 2), rel=1e-12)


def test_eit_fwhm_linear_in_power(medium, control):
    deltas = mhz(np.linspace(-30, 30, 6001))
    scan = eit_scan(medium, control, [0.01, 0.02, 0.04], deltas)
    w = np.array(scan.fwhm)
    assert w[1] / w[0] == pytest.approx(2.0, rel=0.01)
    assert w[2] / w[0] == pytest.approx(4.0, rel=0.01)


def test_eit_zero_power_has_no_peak(medium, control):
    scan = eit_scan(medium, control, [0.0, 0.01], mhz(np.linspace(-30, 30, 601)))
    assert scan.fwhm[0] is None
    assert scan.fwhm[1] is not None


def test_eit_wing_reaches_lorentzian_level():
    m = MediumSpec(od=2.0, buffer_pressure=10.0)
    c = make_control()
    g, Delta = m.gamma_eff[0], c.single_photon_detuning
    scan = eit_scan(m, c, [0.00125], mhz(np.linspace(-30, 30, 601)))
    wing = np.exp(-m.od * g ** 2 / (g ** 2 + Delta ** 2))
    assert scan.baseline == pytest.approx(wing, rel=1e-12)
    assert scan.transmission[0, 0] == pytest.approx(wing, rel=0.01)
    assert scan.transmission[0, -1] == pytest.approx(wing, rel=0.01)


def test_eit_peak_not_bracketed(medium, control):
    with pytest.raises(RangeError):
        eit_scan(medium, control, [0.04], mhz(np.linspace(-1, 1, 101)))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(1e-4, 0.05), min_size=2, max_size=5, unique=True))
def test_eit_fwhm_monotone_in_power(powers):
    m = MediumSpec(od=2.0, buffer_pressure=10.0)
    c = make_control()
    powers = sorted(powers)
    scan = eit_scan(m, c, powers, mhz(np.linspace(-40, 40, 4001)))
    assert np.all(np.diff(np.array(scan.fwhm)) >= 0)


def test_group_delay_single_level_closed_form(medium):
    om = mhz(20.0)
    assert group_delay(medium, om, mhz(-120.0)) == pytest.approx(
        medium.od * medium.gamma_eff[0] / (2 * om ** 2), rel=1e-12)


@pytest.mark.parametrize("two_level", [False, True])
def test_group_delay_matches_phase_slope(two_level):
    kw = dict(gamma_e=(mhz(2.875), mhz(2.875)), level_offsets=(0.0, mhz(814.5)), coupling_signs=(1.0, -1.0)) \
        if two_level else {}
    m = MediumSpec(od=2.0, buffer_pressure=10.0, **kw)
    om, Delta, h = mhz(20.0), mhz(-120.0), 1.0
    # the transmitted phase is -Im(od * kappa); its delta-slope is the delay
    phase = lambda d: -np.imag(m.od * field_decay_rate(m, om, d, Delta))  # noqa: E731
    slope = (phase(h) - phase(-h)) / (2 * h)
    assert abs(slope) == pytest.approx(group_delay(m, om, Delta), rel=1e-6)


# -- time-domain solver ---------------------------------------------------------

def test_control_off_resonant_transmission_is_exp_minus_od():
    m = MediumSpec(od=2.0)
    c = make_control(power=0.0, single_photon_detuning=0.0)
    p = gaussian_pulse(2e-6, center=6e-6, dt=4e-9)
    r = simulate(m, c, p, auto_grid(m, c, p, p.t_end))
    ratio = float(np.sum(np.abs(r.e_out) ** 2) / np.sum(np.abs(r.e_in) ** 2))
    assert ratio == pytest.approx(math.exp(-2.0), rel=0.01)


def test_empty_medium_passes_input():
    m = MediumSpec(od=0.0)
    c = make_control()
    p = gaussian_pulse(50e-9, center=0.5e-6, dt=1e-9)
    r = simulate(m, c, p, auto_grid(m, c, p, 2e-6))
    assert np.max(np.abs(r.e_out - r.e_in)) < 1e-12
    assert r.eta_storage == 0.0


def test_dark_state_cw_transmission():
    m = MediumSpec(od=2.0)
    c = make_control(off=10e-6, on=11e-6)
    p = cw_probe(4e-6, 1e-6, 1e-9)
    r = simulate(m, c, p, auto_grid(m, c, p, 4e-6))
    i = int(np.searchsorted(r.times, 3.5e-6))
    assert abs(r.e_out[i]) ** 2 / abs(r.e_in[i]) ** 2 == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("od,Delta,power,t_end,rise", [
    (2.0, mhz(-120.0), 0.02, 8e-6, 2e-6),
    (4.0, 0.0, 0.02 / 16, 4e-6, 1e-6),
])
def test_cw_scan_matches_susceptibility(od, Delta, power, t_end, rise):
    m = MediumSpec(od=od)
    worst = 0.0
    for d in np.linspace(-5.0, 5.0, 11):
        c = make_control(power=power, off=30e-6, on=31e-6, two_photon_detuning=mhz(d),
                         single_photon_detuning=Delta)
        p = cw_probe(t_end, rise, 1e-9)
        r = simulate(m, c, p, auto_grid(m, c, p, t_end))
        i = int(np.searchsorted(r.times, t_end - 0.2e-6))
        solver = abs(r.e_out[i]) ** 2 / abs(r.e_in[i]) ** 2
        oracle = float(cw_transmission(m, c.rabi, mhz(d), Delta))
        worst = max(worst, abs(solver - oracle))
    assert worst <= 0.01


def test_norm_conservation_lossless():
    m, c, p = smooth_setup()
    r = simulate(m, c, p, auto_grid(m, c, p, 2e-6), lossless=True)
    assert np.max(np.abs(r.norm_residual())) <= 1e-3


def _refine(g, f):
    return SimGrid(nz=(g.nz - 1) * f + 1, nt=(g.nt - 1) * f + 1, dt=g.dt / f)


def test_convergence_order_at_least_two():
    m, c, p = smooth_setup()
    g = auto_grid(m, c, p, 2e-6)
    etas = [simulate(m, c, p, _refine(g, f)).eta_total for f in (1, 2, 4)]
    order = math.log2(abs(etas[0] - etas[1]) / abs(etas[1] - etas[2]))
    assert order >= 2.0 - 0.3


def test_time_translation_covariance():
    m, c, p = smooth_setup()
    g = auto_grid(m, c, p, 2e-6)
    shift = 250 * g.dt
    r0 = simulate(m, c, p, g)
    c1 = c.replace(off_time=c.off_time + shift, on_time=c.on_time + shift)
    r1 = simulate(m, c1, p.shifted(shift), g)
    assert np.allclose(r1.times, r0.times + shift, rtol=0, atol=1e-18)
    assert np.max(np.abs(r1.e_out - r0.e_out)) < 1e-9 * np.max(np.abs(r0.e_out))


def test_efficiency_bounds(medium, control):
    p = storable_seed(control, 2e-9, 40e-9, kind="gaussian")
    r = simulate(medium, control, p, auto_grid(medium, control, p, 2.2e-6))
    leak = storage_efficiency(r, r.times[0], control.off_time - r.times[0])
    assert 0 <= r.eta_storage <= 1
    assert 0 <= r.eta_total <= r.eta_storage + leak + 1e-3 <= 1 + 1e-3


def test_storage_efficiency_window_properties():
    m, c, p = smooth_setup()
    r = simulate(m, c, p, auto_grid(m, c, p, 2e-6), lossless=True)
    assert storage_efficiency(r, c.on_time, 0.0) == 0.0
    lens = np.linspace(0, r.times[-1] - c.on_time, 30)
    eta = [storage_efficiency(r, c.on_time, w) for w in lens]
    assert np.all(np.diff(eta) >= 0)
    # nothing beyond what was stored can come back out
    assert eta[-1] <= r.eta_storage + 1e-3
    with pytest.raises(RangeError):
        storage_efficiency(r, c.on_time, 1.0)


def test_under_resolved_grid_names_scale(medium, control):
    p = storable_seed(control, 2e-9, 40e-9)
    with pytest.raises(ResolutionError, match="gamma|Omega|pulse"):
        simulate(medium, control, p, SimGrid(nz=31, nt=100, dt=20e-9))
    with pytest.raises(ResolutionError, match="nz"):
        check_resolution(MediumSpec(od=8.0), control, SimGrid(nz=11, nt=10, dt=1e-11))


def test_divergence_reported_with_step(medium, control):
    p = storable_seed(control, 2e-9, 40e-9)
    with pytest.raises(DivergenceError) as exc:
        simulate(medium, control, p, SimGrid(nz=31, nt=3000, dt=5e-9), check=False)
    assert exc.value.step is not None and exc.value.step > 0


def test_two_level_medium_stores_less(control):
    single = MediumSpec(od=2.0, buffer_pressure=10.0)
    double = MediumSpec(od=2.0, buffer_pressure=10.0, gamma_e=(mhz(2.875), mhz(2.875)),
                        level_offsets=(0.0, mhz(814.5)), coupling_signs=(1.0, -1.0))
    p = storable_seed(control, 2e-9, 40e-9, kind="gaussian")
    eta = [simulate(m, control, p, auto_grid(m, control, p, 2.2e-6)).eta_total for m in (single, double)]
    assert eta[1] < eta[0]


def test_csv_exports(tmp_path, medium, control):
    p = storable_seed(control, 2e-9, 40e-9, kind="gaussian")
    t_snap = control.off_time
    r = simulate(medium, control, p, auto_grid(medium, control, p, 1.6e-6), snapshot_times=(t_snap,))
    lines = write_record_csv(r, tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "t_seconds,re_eout,im_eout" and len(lines) == r.grid.nt + 1
    lines = write_snapshot_csv(r, t_snap, tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "z_normalized,re,im" and len(lines) == r.grid.nz + 1
    with pytest.raises(RangeError):
        write_snapshot_csv(r, 0.123, tmp_path / "x.csv")
