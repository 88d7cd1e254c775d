import numpy as np
import pytest

from dpmld.data import GeneratorConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate(GeneratorConfig(n_samples=60, timesteps=16, seed=7))


_criteria: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, print it, then fail the test if the criterion is red."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _criteria.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
