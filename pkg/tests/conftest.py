from __future__ import annotations

import numpy as np
import pytest

from hybridmo.adam import AdamState
from hybridmo.driver import AdamConfig, TrainConfig, make_task, run
from hybridmo.fusion import FusionConfig

# Toy-SR settings shared by the long-running tests. The learning rate is
# raised from the library default so that pretraining converges within the
# default 20 x 50 steps.
TOY_TRAIN = TrainConfig(adam=AdamConfig(lr=1e-3))
TOY_FUSION = FusionConfig(lr=1e-3, epochs=20, steps_per_epoch=25, M=50, seed=0)

ACCEPTANCE_LINES: list[str] = []


def _all_reset(population) -> bool:
    return all(s.is_reset() for ind in population for s in ind.adam_states())


@pytest.fixture(scope="session")
def toy_run():
    """One full default-length toy-SR run, instrumented for Adam resets."""
    checks = []

    def hook(epoch, phase, population):
        if phase == "ea":
            checks.append((epoch, _all_reset(population)))

    result = run(TOY_TRAIN, on_epoch=hook)
    return result, checks


@pytest.fixture(scope="session")
def toy_task():
    return make_task(TOY_TRAIN)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fresh_state_like(state: AdamState) -> AdamState:
    return AdamState.fresh(state.m.size, state.lr, state.beta1, state.beta2, state.eps)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
