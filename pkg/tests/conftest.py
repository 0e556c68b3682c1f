import pytest

from sdikit.synth import SynthConfig, gen_cohort


@pytest.fixture(scope="session")
def default_cohort():
    return gen_cohort(SynthConfig())


@pytest.fixture(scope="session")
def small_cohort():
    return gen_cohort(SynthConfig(n_subjects=600, seed=7))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
