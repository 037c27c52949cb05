import numpy as np
import pytest

from nzcz.device import default_device
from nzcz.dynamics import NoiseModel, idle_frame
from nzcz.experiments.gate import calibrated_gate

# lines recorded by the acceptance tests, printed after the run
ACCEPTANCE = {}


def record(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
    print(ACCEPTANCE[key])


@pytest.fixture(scope="session")
def params():
    return default_device()


@pytest.fixture(scope="session")
def frame(params):
    return idle_frame(params)


@pytest.fixture(scope="session")
def cz_gate(params):
    """Tier-A optimized and phase-calibrated 28 + 12 ns Net-Zero gate."""
    return calibrated_gate(params, 28e-9, 12e-9)


@pytest.fixture(scope="session")
def distorted_gate(params):
    """Same gate re-tuned with the synthetic residual line present."""
    return calibrated_gate(params, 28e-9, 12e-9, NoiseModel(tier="A", distortions=True))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
