import numpy as np
import pytest

from tclsteady import models

PHI = 0.7


def commuting_presets() -> dict:
    """Commuting models used across the suite."""
    return {
        "amplitude-damping": models.preset_amplitude_damping(1.0),
        "amplitude-damping-exp": models.preset_amplitude_damping("exp(-t)"),
        "amplitude-damping-sin": models.preset_amplitude_damping("1+2*sin(t)"),
        "dephasing": models.preset_pure_dephasing(1, 1.0),
        "dephasing-4": models.preset_pure_dephasing(4, [1.0, "exp(-t)", 0.5, "1+sin(t)"]),
        "independent-dephasing": models.preset_two_qubit_dephasing("1+0.5*sin(t)", "exp(-t)"),
        "collective-dephasing": models.preset_two_qubit_dephasing(1.0, 1.0),
        "double-dot-dark": models.preset_double_dot(PHI, 1.0, "exp(-t)", 0.0, False),
        "double-dot-hamiltonian": models.preset_double_dot(PHI, 1.0, 1.0, 0.0, True),
    }


def noncommuting_presets() -> dict:
    return {"double-dot-both": models.preset_double_dot(PHI, 1.0, "exp(-t)", "1+sin(t)", False)}


@pytest.fixture(params=sorted(commuting_presets()))
def commuting_model(request):
    return commuting_presets()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# per-criterion verdicts for the acceptance summary
ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for marker in report.keywords:
        if marker.startswith("criterion_"):
            n = int(marker.split("_")[1])
            ok = ACCEPTANCE.get(n, True) and report.passed
            ACCEPTANCE[n] = ok


def pytest_configure(config):
    for n in range(1, 10):
        config.addinivalue_line("markers", f"criterion_{n}: acceptance criterion {n}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ACCEPTANCE[n] else 'FAIL'}")
