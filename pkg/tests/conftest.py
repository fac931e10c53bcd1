"""Shared fixtures: a small rendered corpus plus short training runs.

The heavy fixtures are session-scoped so the full suite pays for each
training run exactly once.
"""

import pytest

from revdeid.dataset import SyntheticSpec, generate_synthetic_dataset
from revdeid.matcher import Phase1Config, train_phase1
from revdeid.training import TrainConfig, train_phase2

ACCEPTANCE_LINES = []


def record_criterion(line: str):
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_dataset():
    # 8 subjects is the smallest count that populates two hairstyle bins
    spec = SyntheticSpec(subjects=8, sequences_per_subject=2, frames_per_sequence=3)
    return generate_synthetic_dataset(spec, seed=5)


@pytest.fixture(scope="session")
def small_matcher(tiny_dataset):
    config = Phase1Config(epochs=2, batch_size=16, seed=1, steps_per_epoch=8)
    return train_phase1(tiny_dataset, config)


@pytest.fixture(scope="session")
def smoke_run(tiny_dataset, small_matcher):
    """Two-epoch adversarial run plus the critic weight trace."""
    trace = []
    config = TrainConfig(epochs=2, batch_size=6, critic_steps=2, seed=3, steps_per_epoch=3)
    result = train_phase2(
        tiny_dataset, small_matcher, config,
        on_critic_step=lambda step, w: trace.append((step, w)),
    )
    return result, trace
