import math

import numpy as np
import pytest
from hypothesis import strategies as st

from laneiou.lane_model import AnchorParams, Lane, RowGrid, render_anchor


def vertical_lane(grid: RowGrid, x: float, start: int = 0, stop=None, confidence: float = 1.0) -> Lane:
    stop = grid.n_rows if stop is None else stop
    valid = np.zeros(grid.n_rows, dtype=bool)
    valid[start:stop] = True
    return Lane(np.where(valid, x, np.nan), valid, confidence)


def straight_lane(grid: RowGrid, x_bottom: float, theta: float, top: float = 0.0, bottom: float = 1.0,
                  confidence: float = 1.0) -> Lane:
    return render_anchor(AnchorParams(x_bottom, bottom, theta, bottom - top), grid, confidence)


def shifted(lane: Lane, dx: float) -> Lane:
    return Lane(lane.xs + dx, lane.valid, lane.confidence)


@st.composite
def lanes(draw, grid: RowGrid, lo: float = 0.1, hi: float = 0.9, min_rows: int = 2):
    """Random lane: contiguous run, smooth-ish xs, x kept in [lo, hi]."""
    n = grid.n_rows
    length = draw(st.integers(min_rows, n))
    start = draw(st.integers(0, n - length))
    x0 = draw(st.floats(lo, hi))
    slope = draw(st.floats(-0.02, 0.02))
    curve = draw(st.floats(-2e-4, 2e-4))
    wobble = draw(st.lists(st.floats(-0.01, 0.01), min_size=length, max_size=length))
    k = np.arange(length)
    xs_run = np.clip(x0 + slope * k + curve * k * k + np.asarray(wobble), lo, hi)
    xs = np.full(n, np.nan)
    xs[start:start + length] = xs_run
    valid = ~np.isnan(xs)
    return Lane(xs, valid, draw(st.floats(0, 1)))


def random_lane(rng: np.random.Generator, grid: RowGrid, min_rows: int = 2) -> Lane:
    n = grid.n_rows
    length = int(rng.integers(min_rows, n + 1))
    start = int(rng.integers(0, n - length + 1))
    k = np.arange(length)
    run = rng.uniform(0.2, 0.8) + rng.uniform(-0.01, 0.01) * k + rng.normal(0, 0.003, length)
    xs = np.full(n, np.nan)
    xs[start:start + length] = np.clip(run, 0.0, 1.0)
    return Lane(xs, ~np.isnan(xs), float(rng.uniform()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SQRT2 = math.sqrt(2.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
