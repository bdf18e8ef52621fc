"""Numba vs numpy timings for the two hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported in one process (the dispatch flag only picks the
default), so the comparison also checks that they return identical arrays.
"""
import argparse
import math
import time

import numpy as np

from volunc import kernels
from volunc._accel import NUMBA_AVAILABLE


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_sweep(nx, n_steps, nb, repeat):
    x = np.linspace(-3, 3, nx)
    u = np.tile(np.abs(x) - 0.3 * x * x, (nb, 1))
    c_lo = np.full((n_steps, nx), 1.0 / 24)
    c_hi = np.full((n_steps, nx), 1.0 / 6)
    t_np, (a, _) = best_of(lambda: kernels.sweep_numpy(u, c_lo, c_hi, True, False), repeat)
    kernels.sweep_numba(u, c_lo, c_hi, True, False)  # compile
    t_nb, (b, _) = best_of(lambda: kernels.sweep_numba(u, c_lo, c_hi, True, False), repeat)
    return t_np, t_nb, bool(np.array_equal(a, b))


def bench_oscillation(n_paths, N, n, repeat):
    rng = np.random.default_rng(0)
    B = np.concatenate([np.zeros((n_paths, 1)),
                        np.cumsum(rng.standard_normal((n_paths, N)) * math.sqrt(1.0 / N), axis=1)], axis=1)
    thr = 2.0 ** -n
    t_np, a = best_of(lambda: kernels.oscillation_integral_numpy(B, B, thr), repeat)
    kernels.oscillation_integral_numba(B[:2, :10], B[:2, :10], thr)
    t_nb, b = best_of(lambda: kernels.oscillation_integral_numba(B, B, thr), repeat)
    return t_np, t_nb, bool(np.array_equal(a, b))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        print("numba not available (or disabled by VOLUNC_NO_NUMBA); nothing to compare")
        return
    rows = [
        ("sweep nx=241 steps=1200", bench_sweep(241, 1200, 1, args.repeat)),
        ("sweep nx=801 steps=400", bench_sweep(801, 400, 1, args.repeat)),
        ("sweep batch 241x241 steps=100", bench_sweep(241, 100, 241, args.repeat)),
        ("oscillation 100 paths N=2^16 n=8", bench_oscillation(100, 2 ** 16, 8, args.repeat)),
        ("oscillation 2000 paths N=2^12 n=5", bench_oscillation(2000, 2 ** 12, 5, args.repeat)),
    ]
    print(f"{'kernel':38s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}  identical")
    for name, (t_np, t_nb, same) in rows:
        print(f"{name:38s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}  {same}")


if __name__ == "__main__":
    main()
