import numpy as np
import pytest

from pco.penalty import PenaltySpec
from pco.sequence import NoiseSpec, ObservationSet, WeightScheme
from pco.streams import make_rng


@pytest.fixture
def rng():
    return make_rng(12345, "tests")


def random_obs(seed, N=16, scale=1.0, epsilon=0.1):
    y = scale * make_rng(seed, "obs").standard_normal(N)
    return ObservationSet(y, epsilon)


@pytest.fixture
def gaussian_spec():
    def build(p, N=16):
        return PenaltySpec.default(p, "gaussian", N=N)
    return build


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion, ok, detail):
        line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
