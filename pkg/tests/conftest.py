import pytest

from volunc.paths import TimeGrid
from volunc.scenarios import constant, g_set

A_LOW, A_HIGH, T = 1.0, 4.0, 1.0


@pytest.fixture
def grid():
    return TimeGrid(T, 50)


@pytest.fixture
def gset():
    return g_set(A_LOW, A_HIGH)


@pytest.fixture
def pooled(grid):
    return g_set(A_LOW, A_HIGH, pool=[constant(grid, A_LOW), constant(grid, A_HIGH)])
