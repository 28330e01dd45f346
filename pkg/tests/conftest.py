import numpy as np
import pytest

from checkagnosia.code_model import format_alist

from codes import toric_code


@pytest.fixture(scope="session")
def toric4():
    return toric_code(4)


@pytest.fixture(scope="session")
def toric6():
    return toric_code(6)


@pytest.fixture
def toric_files(tmp_path, toric4):
    hx = tmp_path / "hx.alist"
    hz = tmp_path / "hz.alist"
    hx.write_text(format_alist(toric4.h_x))
    hz.write_text(format_alist(toric4.h_z))
    return hx, hz


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_report(capsys):
    """Record (and print) one PASS/FAIL line for an acceptance criterion."""
    def report(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
