from pathlib import Path

import numpy as np
import pytest

from ictrees import data_io
from ictrees.tree import Hyperparams, fit

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def iris():
    return data_io.load_csv(DATA_DIR / "iris.csv")


@pytest.fixture(scope="session")
def grab_data():
    return data_io.synth_robot_grab(1000, 10.0, seed=42)


@pytest.fixture(scope="session")
def grab_model(grab_data):
    return fit(grab_data, Hyperparams(min_samples_leaf_fraction=0.9), seed=42)


@pytest.fixture(scope="session")
def two_uniforms():
    return data_io.synth_two_uniforms(1000, seed=0, return_labels=True)


@pytest.fixture(scope="session")
def two_uniforms_model(two_uniforms):
    data, _ = two_uniforms
    return fit(data, Hyperparams(min_samples_leaf_fraction=0.2, max_depth=1), seed=0)


@pytest.fixture(scope="session")
def two_uniforms_deep(two_uniforms):
    data, _ = two_uniforms
    return fit(data, Hyperparams(min_samples_leaf_fraction=0.2), seed=0)


@pytest.fixture(scope="session")
def three_gaussians():
    return data_io.synth_three_gaussians(3000, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
