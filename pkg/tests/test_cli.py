import json
import math

import numpy as np
import pytest

from qmemsim.cli import main
from qmemsim.filters import ThermalParams, square_wave_room, thermal_step


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_no_arguments_prints_usage(capsys):
    code, _, err = run(capsys)
    assert code == 1 and "usage" in err


def test_unknown_subcommand(capsys):
    assert run(capsys, "teleport")[0] == 1


def test_fidelity_reference_snr(capsys):
    code, out, _ = run(capsys, "fidelity", "--snr", "8.63")
    assert code == 0
    assert out == '{"f_m": 0.9481}\n'


def test_fidelity_scaled_and_rails(capsys):
    code, out, _ = run(capsys, "fidelity", "--snr-measured", "23.65", "--mean-photons", "2.74",
                       "--transmission-ratio", "0.9", "--digits", "6")
    d = json.loads(out)
    assert code == 0
    assert d["snr_single_photon"] == pytest.approx(8.63, abs=5e-3)
    assert d["fidelity"] == pytest.approx(d["f_o"] * d["f_m"], abs=2e-6)


def test_fidelity_invalid_value(capsys):
    code, _, err = run(capsys, "fidelity", "--snr", "-1")
    assert code == 2 and "snr" in err


def test_etalon_stack(capsys, tmp_path):
    stack = tmp_path / "stack.json"
    stack.write_text('[{"fsr_ghz": 13, "linewidth_mhz": 40}, {"fsr_ghz": 21, "linewidth_mhz": 100}]')
    code, out, _ = run(capsys, "etalon", "--stack", str(stack), "--detuning-ghz", "6.834",
                       "--band-width-mhz", "500")
    d = json.loads(out)
    assert code == 0
    assert d["suppression_db"] == pytest.approx(87.4, abs=0.1)
    assert d["band_suppression_db"] >= 40


def test_etalon_single_and_usage(capsys):
    code, out, _ = run(capsys, "etalon", "--fsr-ghz", "13", "--finesse", "325", "--detuning-ghz", "0")
    assert code == 0 and json.loads(out)["suppression_db"] == 0.0
    assert run(capsys, "etalon", "--fsr-ghz", "13", "--detuning-ghz", "0")[0] == 1


def test_thermal_fit_and_trace(capsys, tmp_path):
    t = np.linspace(0, 6 * 3600, 200)
    step = tmp_path / "step.csv"
    np.savetxt(step, np.column_stack([t, thermal_step(ThermalParams(58, 3780.0), 6.3, t)]), delimiter=",",
               header="t_seconds,dT_kelvin", comments="")
    code, out, _ = run(capsys, "thermal", "--step-csv", str(step), "--room-step-k", "6.3")
    d = json.loads(out)
    assert code == 0 and d["xi"] == pytest.approx(58, rel=1e-3) and d["tau_s"] == pytest.approx(3780, rel=1e-3)

    room = tmp_path / "room.csv"
    np.savetxt(room, square_wave_room(0.25, 600.0, 86400.0, 10.0), delimiter=",",
               header="t_seconds,temp_kelvin", comments="")
    code, out, _ = run(capsys, "thermal", "--room-csv", str(room), "--fsr-ghz", "13", "--linewidth-mhz", "40",
                       "--xi", "58", "--tau-s", "3780", "--reference", "mean", "--out-dir", str(tmp_path / "o"))
    assert code == 0 and json.loads(out)["relative_std"] <= 0.02
    assert (tmp_path / "o" / "thermal_transmission.csv").read_text().startswith("t_seconds,transmission\n")


def test_unknown_config_key_exit_2(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"medium": {"optical_depth": 2}}')
    code, _, err = run(capsys, "store", "--config", str(cfg), "--out-dir", str(tmp_path))
    assert code == 2 and "medium.optical_depth" in err


def test_numerical_failure_exit_3(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"grid": {"dt_ns": 50.0}}')
    code, _, err = run(capsys, "store", "--config", str(cfg), "--out-dir", str(tmp_path))
    assert code == 3 and "numerical" in err


def test_store_and_fit_decay_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, "store", "--out-dir", str(tmp_path))
    assert code == 0 and 0 < json.loads(out)["eta_total"] < 1
    assert (tmp_path / "store.csv").exists() and (tmp_path / "store_spinwave.csv").exists()

    rows = "".join(f"{w},{P},{0.97 * w * w / (3e-5 * 760 / P)}\n" for w in (1e-3, 2e-3) for P in (5.0, 20.0))
    data = tmp_path / "d.csv"
    data.write_text("w_m,P_torr,T1e_s\n" + rows)
    code, out, _ = run(capsys, "fit-decay", "--data", str(data), "--out-dir", str(tmp_path))
    assert code == 0 and "b_prime_times_eb_l" in json.loads(out)


def test_single_photon_deterministic(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"shaping": {"max_iters": 2}, "noise": {"trials": 2000}}')
    outs = []
    for d in ("a", "b"):
        code, out, _ = run(capsys, "single-photon", "--config", str(cfg), "--seed", "5",
                           "--out-dir", str(tmp_path / d))
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert not math.isnan(json.loads(outs[0])["snr_single_photon_counts"])
