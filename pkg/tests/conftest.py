import numpy as np
import pytest

from tsde_lab.mdp import KernelEnv, TransitionDistribution


class DecrementEnv(KernelEnv):
    """One coordinate that drops by one every step."""

    dim = 1
    n_actions = 1

    def transition(self, x, a):
        return TransitionDistribution.from_atoms([((max(x[0] - 1, 0),), 1.0)])


class ToyChain(KernelEnv):
    """2 -> 1 surely; 1 -> 0 or stays with probability one half; 0 -> 2."""

    dim = 1
    n_actions = 1

    def transition(self, x, a):
        if x[0] == 2:
            return TransitionDistribution.from_atoms([((1,), 1.0)])
        if x[0] == 1:
            return TransitionDistribution.from_atoms([((0,), 0.5), ((1,), 0.5)])
        return TransitionDistribution.from_atoms([((2,), 1.0)])


class ZeroCostEnv(KernelEnv):
    dim = 1
    n_actions = 2

    def transition(self, x, a):
        return TransitionDistribution.from_atoms([((0,), 1.0)])


@pytest.fixture
def decrement_env():
    return DecrementEnv()


@pytest.fixture
def toy_chain():
    return ToyChain()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def m1_family():
    from tsde_lab.families import model_one_family

    return model_one_family(0.5)


@pytest.fixture(scope="session")
def m2_family():
    from tsde_lab.families import model_two_family

    return model_two_family(0.5)


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
