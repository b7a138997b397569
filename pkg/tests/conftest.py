import numpy as np
import pytest

from hpnet import synthgen, topology


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """A quick synthetic config: every class, few samples and frames."""
    return synthgen.SynthConfig(samples_per_class=6, frames=4)


@pytest.fixture(scope="session")
def coco():
    return topology.coco17()


@pytest.fixture(scope="session")
def path4():
    """Four joints: 0-1, 1-2, 1-3."""
    return topology.SkeletonGraph(4, ((0, 1), (1, 2), (1, 3)))


# -- acceptance report -------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records one acceptance line; it is
    printed immediately and repeated in the terminal summary."""
    results = request.config.stash[_ACCEPTANCE]

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        results[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_ACCEPTANCE]
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
