import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volunc.errors import ArgumentError, DomainError
from volunc.paths import (TimeGrid, load_binary, load_csv, pathwise_integral, quadratic_covariation, save_binary,
                          save_csv, simulate)
from volunc.scenarios import VolControl, constant, threshold_switch


def test_grid_basics():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.nodes[-1] == 2.0 and len(g.nodes) == 9
    assert g.index_of(0.5) == 2
    with pytest.raises(ArgumentError):
        g.index_of(0.3)
    with pytest.raises(ArgumentError):
        TimeGrid(1.0, 0)
    with pytest.raises(ArgumentError):
        TimeGrid(-1.0, 4)


def test_simulate_constant_qv_is_exact(grid):
    b = simulate(constant(grid, 2.5), grid, 500, seed=4)
    assert b.B.shape == (500, 51, 1) and b.qv.shape == (500, 51, 1, 1)
    assert np.allclose(b.qv1[:, -1], 2.5 * grid.T, rtol=1e-12)
    assert np.all(b.x[:, 0] == 0)
    # sample variance of B_T close to a T
    assert abs(b.x[:, -1].var() - 2.5) < 0.5


def test_simulate_is_deterministic_and_read_only(grid):
    c = threshold_switch(grid, 0.0, 1.0, 4.0)
    a, b = simulate(c, grid, 50, 7), simulate(c, grid, 50, 7)
    assert np.array_equal(a.B, b.B)
    with pytest.raises(ValueError):
        a.B[0, 0, 0] = 1.0


def test_simulate_antithetic(grid):
    b = simulate(constant(grid, 1.0), grid, 10, 0, antithetic=True)
    assert np.allclose(b.x[:5], -b.x[5:])


def test_simulate_rejects_bad_variance(grid):
    with pytest.raises(DomainError):
        simulate(constant(grid, -1.0), grid, 5, 0)
    with pytest.raises(ArgumentError):
        simulate(constant(grid, 1.0), TimeGrid(1.0, 3), 5, 0)


def test_two_dimensional(grid):
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = VolControl(grid, lambda k, p: a, "m", d=2)
    b = simulate(c, grid, 4000, 1)
    assert np.allclose(b.qv[:, -1], a * grid.T)
    cov = np.cov(b.B[:, -1].T)
    assert np.allclose(cov, a, atol=0.15)
    with pytest.raises(DomainError):
        simulate(VolControl(grid, lambda k, p: np.array([[1.0, 2.0], [2.0, 1.0]]), "bad", d=2), grid, 3, 0)


def test_integral_of_constant_integrand_is_exact(grid):
    b = simulate(constant(grid, 1.0), grid, 20, 3)
    I = pathwise_integral(np.full(b.x.shape, 2.0), b.x, 4)
    assert np.allclose(I, 2.0 * b.x, atol=1e-14)


def test_integral_of_b_db_converges():
    rng = np.random.default_rng(0)
    N = 2 ** 14
    B = np.concatenate([[0.0], np.cumsum(rng.normal(0, math.sqrt(1 / N), N))])
    closed = 0.5 * (B[-1] ** 2 - 1.0)
    errs = [abs(pathwise_integral(B, B, n)[-1] - closed) for n in (2, 4, 6)]
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.05


def test_integral_rejects_bad_level(grid):
    with pytest.raises(ArgumentError):
        pathwise_integral(np.zeros(51), np.zeros(51), 0)
    with pytest.raises(ArgumentError):
        pathwise_integral(np.zeros(50), np.zeros(51), 3)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 7))
def test_integral_is_adapted(seed, n):
    # changing the future of the path does not change the past of I^n
    rng = np.random.default_rng(seed)
    B = np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.1, 60))])
    B2 = B.copy()
    B2[31:] += rng.normal(0, 1, 30)
    a = pathwise_integral(B, B, n)
    b = pathwise_integral(B2, B2, n)
    assert np.array_equal(a[:31], b[:31])


def test_quadratic_covariation_two_ways(grid):
    b = simulate(constant(grid, 1.5), grid, 10, 2)
    y = np.sin(b.x)
    cov = quadratic_covariation(y, b.x)
    assert np.allclose(cov.bracket, cov.by_parts, atol=1e-12)


def test_io_round_trip(tmp_path, grid):
    b = simulate(constant(grid, 2.0), grid, 3, 1)
    save_csv(b, tmp_path / "p.csv")
    c = load_csv(tmp_path / "p.csv")
    assert np.array_equal(c.B, b.B) and np.array_equal(c.qv, b.qv)
    save_binary(b, tmp_path / "p.bin")
    d = load_binary(tmp_path / "p.bin")
    assert d.grid == b.grid and np.array_equal(d.B, b.B)
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(ArgumentError):
        load_binary(tmp_path / "bad.bin")
