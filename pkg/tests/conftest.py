import numpy as np
import pytest

from maslab.potential import make_potential

_CRITERIA: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    _CRITERIA.append(f"[acceptance criterion {number:2d}] {status}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERIA:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def iso1():
    return make_potential("iso_quadratic", 1)


@pytest.fixture(scope="session")
def iso2():
    return make_potential("iso_quadratic", 2)


@pytest.fixture(scope="session")
def aniso2():
    return make_potential("aniso_quadratic", 2, [4.0, 0.0, 0.0, 1.0])


@pytest.fixture(scope="session")
def perturbed2():
    return make_potential("perturbed_quadratic", 2, [0.1])


@pytest.fixture(scope="session")
def perturbed1():
    return make_potential("perturbed_quadratic", 1, [0.1])


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
