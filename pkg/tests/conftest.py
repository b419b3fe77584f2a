import pytest

from zzfree.circuit import (
    CircuitSpec, CouplingSpec, DressedModel, ResonatorSpec, TransmonSpec, extract_dressed_params,
)


@pytest.fixture(scope="session")
def fig2_model():
    """Published dressed parameters of the cancellation demonstration."""
    return DressedModel(4.5, 5.16, 9.91, -0.32, -0.32, -9e-5, -0.006, -0.0084, -0.0057)


@pytest.fixture(scope="session")
def fig3_circuit():
    """Bare circuit calibrated to the fig2 dressed values."""
    return CircuitSpec(TransmonSpec(0.27777283, 10.505730), TransmonSpec(0.28820780, 13.171356),
                       ResonatorSpec(9.9131125), CouplingSpec(0.35850875, 0.39284122))


@pytest.fixture(scope="session")
def fig3_model(fig3_circuit):
    return extract_dressed_params(fig3_circuit)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def record_criterion():
    """Log one pass/fail line per acceptance criterion; echoed in the terminal summary."""

    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"criterion {label}: {'PASS' if passed else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
