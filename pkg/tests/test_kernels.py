import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volunc import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba disabled")


def _random_problem(rng, nb, nx, steps):
    u = rng.normal(size=(nb, nx))
    lo = rng.uniform(0, 0.2, size=(steps, nx))
    hi = lo + rng.uniform(0, 0.3, size=(steps, nx))
    return u, lo, hi


@needs_numba
@pytest.mark.parametrize("extrapolate", [True, False])
@pytest.mark.parametrize("store_all", [True, False])
def test_sweep_backends_bitwise(extrapolate, store_all):
    u, lo, hi = _random_problem(np.random.default_rng(1), 3, 31, 17)
    a, fa = kernels.sweep_numpy(u, lo, hi, extrapolate, store_all)
    b, fb = kernels.sweep_numba(u, lo, hi, extrapolate, store_all)
    assert np.array_equal(a, b)
    assert np.array_equal(fa, fb)


@needs_numba
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 8), P=st.integers(1, 5), N=st.integers(1, 300))
def test_oscillation_backends_bitwise(seed, n, P, N):
    rng = np.random.default_rng(seed)
    B = np.concatenate([np.zeros((P, 1)), np.cumsum(rng.normal(0, 0.05, (P, N)), axis=1)], axis=1)
    Y = np.sin(3 * B)
    assert np.array_equal(kernels.oscillation_integral_numpy(Y, B, 2.0 ** -n),
                          kernels.oscillation_integral_numba(Y, B, 2.0 ** -n))


def test_sweep_linear_data_is_fixed_point():
    x = np.linspace(-2, 2, 21)
    lo = np.full((10, 21), 0.05)
    out, flags = kernels.sweep(3 * x - 1, lo, 4 * lo)
    assert np.allclose(out[0, 0], 3 * x - 1, atol=1e-14)
    assert flags.shape == (10, 1, 21)


def test_sweep_needs_three_nodes():
    with pytest.raises(ValueError):
        kernels.sweep(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)))


def test_env_flag_selects_numpy():
    env = dict(os.environ, VOLUNC_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from volunc import _accel; print(_accel.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_sweep_is_monotone():
    # ordered terminal data stay ordered (monotone scheme)
    rng = np.random.default_rng(3)
    u, lo, hi = _random_problem(rng, 1, 41, 30)
    lo, hi = lo * 0.5 / hi.max(), hi * 0.5 / hi.max()
    v = u + rng.uniform(0, 1, size=u.shape)
    a, _ = kernels.sweep(u, lo, hi, extrapolate=False, store_all=False)
    b, _ = kernels.sweep(v, lo, hi, extrapolate=False, store_all=False)
    assert np.all(b[0, 0, 30:-30] >= a[0, 0, 30:-30])
