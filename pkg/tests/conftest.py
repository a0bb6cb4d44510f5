import pytest

from permevade.core import SynthSpec, synth_dataset


@pytest.fixture(scope="session")
def small_synth():
    return synth_dataset(SynthSpec(60, 60, 6, 4, 0.05, seed=11))


@pytest.fixture(autouse=True)
def _output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("PERMEVADE_OUTPUT", str(tmp_path / "out"))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
