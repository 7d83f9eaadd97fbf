import math

import pytest

from qmemsim.core import ControlTiming, MediumSpec, mhz

# Omega = 2pi x 20 MHz at 20 mW
K_RABI = mhz(20.0) / math.sqrt(0.02)


def make_control(power=0.02, off=1.2e-6, on=1.5e-6, ramp=0.0, **kw):
    return ControlTiming(power=power, rabi_per_sqrt_power=K_RABI, off_time=off, on_time=on, ramp_time=ramp, **kw)


@pytest.fixture
def medium():
    return MediumSpec(od=2.0, buffer_pressure=10.0)


@pytest.fixture
def control():
    return make_control()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
