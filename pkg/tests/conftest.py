import numpy as np
import pytest

from tagat.gradcheck import toy_config, toy_graphs
from tagat.graph import build_graphs
from tagat.model import TAGAT
from tagat.synth import SynthConfig, generate_population

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_model():
    return TAGAT(toy_config(seed=0))


@pytest.fixture
def toy_batch():
    return toy_graphs(seed=0)


@pytest.fixture(scope="session")
def small_population():
    """18 subjects x 3 tasks, 10 ROIs; quick to train on."""
    cfg = SynthConfig(n_subjects=18, n_tasks=3, n_rois=10, T=80, gender_effect=2.0,
                      cog_effect=2.0, task_effect=1.0, seed=3)
    return build_graphs(generate_population(cfg), density=0.1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
