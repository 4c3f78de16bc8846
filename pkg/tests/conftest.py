import numpy as np
import pytest

from ensfb.models import ParameterEnsemble, make_family

OSC_SIG1 = [-0.5, -0.25, 0.0, 0.25, 0.5]
OSC_SIG2 = [-4.0, -2.0, 0.0, 2.0, 4.0]


@pytest.fixture
def osc():
    return make_family("oscillator")


@pytest.fixture
def sig1():
    return ParameterEnsemble(OSC_SIG1)


@pytest.fixture
def sig2():
    return ParameterEnsemble(OSC_SIG2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_stable(rng, n, margin=0.2):
    """Random dense matrix shifted so every eigenvalue has Re <= -margin."""
    a = rng.normal(size=(n, n))
    shift = np.max(np.linalg.eigvals(a).real) + margin
    return a - shift * np.eye(n)


# one verdict line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def _report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
