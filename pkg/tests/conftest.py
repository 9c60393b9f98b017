import numpy as np
import pytest
from hypothesis import strategies as st

from copas_bias.model import Dataset

FIVE_Y = [0.62, 0.15, 1.05, 0.41, -0.20]
FIVE_S = [0.30, 0.12, 0.85, 0.45, 0.60]

ACCEPTANCE_LINES = []


@pytest.fixture
def five():
    return Dataset(FIVE_Y, FIVE_S)


def random_dataset(rng, n=None, lo=5, hi=50):
    n = n or int(rng.integers(lo, hi + 1))
    s = rng.uniform(0.05, 2.0, n)
    y = rng.normal(0.4, 1.0, n) * rng.uniform(0.2, 1.5) + rng.normal(0, 0.3)
    return Dataset(y, s)


@st.composite
def datasets(draw, min_n=3, max_n=30):
    n = draw(st.integers(min_n, max_n))
    ys = draw(st.lists(st.floats(-5, 5, allow_nan=False), min_size=n, max_size=n))
    ss = draw(st.lists(st.floats(0.05, 3.0, allow_nan=False), min_size=n, max_size=n))
    return Dataset(np.array(ys), np.array(ss))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
