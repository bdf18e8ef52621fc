"""Acceptance suite: ten numbered criteria, each with its tolerance and time limit.

Used by ``tests/test_acceptance.py`` and by ``volunc acceptance``.
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .claims import BUNDLED_CLAIMS, make_claim
from .decompose import build_decomposition
from .dp import LatticeConfig, argmax_control, check_time_consistency, dp_value, value_at_stopping_time
from .gpde import GFunction, PDEGrid, solve_g_pde
from .hedge import classify_replicable
from .paths import TimeGrid, pathwise_integral, simulate
from .scenarios import (PasteSpec, constant, contains, deterministic_time, first_positive_after, g_set,
                        hitting_time, make_event, paste, randomized_two_valued, threshold_switch,
                        time_switch, two_valued_sign)

A_LOW, A_HIGH, T = 1.0, 4.0, 1.0


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float
    limit: float
    details: dict = field(default_factory=dict)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.number:2d}. {self.name}: {self.measured} (tol {self.tolerance}; "
                f"{self.seconds:.1f}s / {self.limit:.0f}s)")

    def to_dict(self):
        return {"criterion": self.number, "name": self.name, "pass": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "seconds": self.seconds, "limit": self.limit,
                "details": self.details}


def _finish(number, name, ok, measured, tol, t0, limit, **details):
    dt = time.perf_counter() - t0
    return CriterionResult(number, name, bool(ok and dt < limit), measured, tol, dt, limit, details)


def criterion_1():
    t0 = time.perf_counter()
    g = GFunction(A_LOW, A_HIGH)
    grid = PDEGrid.default(g, T, Nx=241)
    up = solve_g_pde(g, make_claim({"name": "square"}), grid).root
    down = solve_g_pde(g, make_claim({"name": "neg_square"}), grid).root
    e1, e2 = abs(up - A_HIGH * T), abs(down + A_LOW * T)
    return _finish(1, "G-PDE closed forms", max(e1, e2) <= 1e-3,
                   f"E0(B^2)={up:.6f}, E0(-B^2)={down:.6f}", "1e-3", t0, 10,
                   errors=[e1, e2], N=grid.grid.N, Nx=grid.Nx)


def criterion_2():
    t0 = time.perf_counter()
    a, K = 2.0, 0.3
    sig = math.sqrt(a * T)
    g = GFunction(a, a)
    grid = PDEGrid.default(g, T, Nx=401)
    exact = {
        "square": (a * T, 1e-3),
        "call": (sig * norm.pdf(K / sig) - K * norm.sf(K / sig), 5e-3),
        "digital": (norm.sf(K / sig), 5e-3),
    }
    specs = {"square": {"name": "square"}, "call": {"name": "call", "strike": K},
             "digital": {"name": "digital", "strike": K}}
    errs = {}
    ok = True
    for k, spec in specs.items():
        v = solve_g_pde(g, make_claim(spec), grid).root
        errs[k] = abs(v - exact[k][0])
        ok &= errs[k] <= exact[k][1]
    return _finish(2, "degenerate uncertainty = heat kernel", ok,
                   ", ".join(f"{k} err {v:.2e}" for k, v in errs.items()), "1e-3 smooth / 5e-3 kinked",
                   t0, 10, errors=errs)


def criterion_3():
    """DP vs PDE at 200 steps; one refinement halves ``dx`` (and quarters ``dt``)."""
    t0 = time.perf_counter()
    s = g_set(A_LOW, A_HIGH)
    g = GFunction(A_LOW, A_HIGH)
    pde_grid = PDEGrid.default(g, T, Nx=241)
    floor = 1e-10
    agree, decay = {}, {}
    ok = True
    for name, exact in (("square", A_HIGH * T), ("neg_square", -A_LOW * T)):
        c = make_claim({"name": name})
        d = dp_value(c, s, LatticeConfig(N=200)).root
        p = solve_g_pde(g, c, pde_grid).root
        agree[name] = abs(d - p)
        e0 = abs(d - exact)
        e1 = abs(dp_value(c, s, LatticeConfig(N=800)).root - exact)
        decay[name] = (e0, e1)
        ok &= agree[name] <= 1e-2 and (e1 <= e0 / 2 or e1 <= floor)
    c = make_claim({"name": "call"})
    exact = math.sqrt(A_HIGH * T / (2 * math.pi))
    d = dp_value(c, s, LatticeConfig(N=200)).root
    agree["call"] = abs(d - solve_g_pde(g, c, pde_grid).root)
    e0, e1 = abs(d - exact), abs(dp_value(c, s, LatticeConfig(N=800)).root - exact)
    decay["call"] = (e0, e1)
    ok &= agree["call"] <= 1e-2 and e1 <= e0 / 2
    return _finish(3, "DP <-> PDE agreement", ok,
                   f"max |dp-pde|={max(agree.values()):.2e}, call error {e0:.2e} -> {e1:.2e} "
                   f"(x{e0 / e1:.2f})", "1e-2; decay >= 2", t0, 60, agreement=agree, decay=decay)


def criterion_4(seed=0):
    t0 = time.perf_counter()
    s = g_set(A_LOW, A_HIGH)
    N = 200
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in ({"name": "square"}, {"name": "call", "strike": 0.2}, {"name": "digital"}):
        L = dp_value(make_claim(spec), s, LatticeConfig(N=N))
        for _ in range(20):
            a, b = sorted(rng.integers(0, N + 1, size=2))
            worst = max(worst, check_time_consistency(L, int(a), int(b)))
    return _finish(4, "time consistency", worst <= 1e-12, f"max gap {worst:.2e} over 60 pairs", "1e-12",
                   t0, 30, worst=worst)


def criterion_5():
    t0 = time.perf_counter()
    s = g_set(A_LOW, A_HIGH)
    L = dp_value(make_claim({"name": "call", "strike": 0.1}), s, LatticeConfig(N=12))
    grid = L.grid
    rules = [deterministic_time(grid, 6), hitting_time(grid, 0.8, absolute=True),
             two_valued_sign(grid, 3, 6, 9), randomized_two_valued(grid, 3, 4, 10, seed=5),
             first_positive_after(grid, 4)]
    reports = [value_at_stopping_time(L, r) for r in rules]
    worst = max(r.restart_violation for r in reports)
    margin = min(r.dominance_margin for r in reports)
    ok = worst <= 1e-12 and all(r.passed for r in reports)
    return _finish(5, "optional sampling", ok, f"restart gap {worst:.2e}, dominance margin {margin:.2e}",
                   "1e-12", t0, 60, per_rule={r.label: rep.to_dict() for r, rep in zip(rules, reports)})


def _random_control(grid, rng, lo, hi):
    kind = rng.integers(0, 3)
    a, b = rng.uniform(lo, hi, size=2)
    if kind == 0:
        return constant(grid, float(a))
    if kind == 1:
        return threshold_switch(grid, float(rng.normal(0, 0.5)), float(a), float(b),
                                absolute=bool(rng.integers(0, 2)))
    return time_switch(grid, float(rng.uniform(0, grid.T)), float(a), float(b))


def _random_event(rng, node):
    kind = ["always", "never", "sign", "level", "abs_level"][rng.integers(0, 5)]
    spec = {"kind": kind}
    if kind in ("level", "abs_level"):
        spec["level"] = float(rng.normal(0, 0.5))
    if kind != "always" and kind != "never" and rng.integers(0, 2):
        spec["node"] = int(rng.integers(0, node + 1))
    return make_event(spec)


def criterion_6(seed=0, n=200):
    t0 = time.perf_counter()
    grid = TimeGrid(T, 40)
    s = g_set(A_LOW, A_HIGH)
    rng = np.random.default_rng(seed)
    bad = []
    for i in range(n):
        base, on, off = (_random_control(grid, rng, A_LOW, A_HIGH) for _ in range(3))
        if rng.integers(0, 2):
            branch = int(rng.integers(0, grid.N + 1))
            ev = _random_event(rng, branch)
        else:
            branch = hitting_time(grid, float(rng.uniform(0.2, 1.5)), absolute=True)
            ev = _random_event(rng, 0)
        ctl = paste(PasteSpec(base, branch, ev, on, off))
        if not contains(s, ctl, n_samples=64, seed=i):
            bad.append(i)
    return _finish(6, "pasting closure", not bad, f"{n - len(bad)}/{n} pasted controls contained", "exact",
                   t0, 10, failures=bad)


def criterion_7(n_paths=100_000, seed=11):
    t0 = time.perf_counter()
    cfg = LatticeConfig(N=200)
    grid = cfg.grid
    s = g_set(A_LOW, A_HIGH, pool=[constant(grid, A_LOW)])
    dec = build_decomposition(make_claim({"name": "square"}), s, cfg, n_paths, seed)
    low = dec.K[f"const({A_LOW})"][:, -1]
    arg = dec.K["argmax"][:, -1]
    target = (A_HIGH - A_LOW) * T
    m_low = float(low.mean())
    m_arg, se_arg = float(arg.mean()), float(arg.std(ddof=1) / math.sqrt(n_paths))
    ok = abs(m_low - target) <= 0.05 * target and abs(m_arg) <= 3 * se_arg
    return _finish(7, "decomposition and minimality", ok,
                   f"E[K_T | a_low]={m_low:.4f}, E[K_T | argmax]={m_arg:.2e} (3SE={3 * se_arg:.2e})",
                   "5% of 3; 3 SE", t0, 120, low=m_low, argmax=m_arg, se=se_arg)


def criterion_8(n_paths=20000, seed=3):
    t0 = time.perf_counter()
    cfg = LatticeConfig(N=100)
    grid = cfg.grid
    s = g_set(A_LOW, A_HIGH, pool=[constant(grid, A_LOW), constant(grid, A_HIGH)])
    reports = {}
    for spec in BUNDLED_CLAIMS:
        c = make_claim(spec)
        reports[c.spec.get("name") + str(spec.get("slope", ""))] = classify_replicable(c, s, cfg, n_paths=n_paths,
                                                                                       seed=seed)
    lin, aff, sq = reports["linear"], reports["linear2.0"], reports["square"]
    gap = sq.symmetry_gap
    ok = (lin.replicable and abs(lin.x) <= 1e-12 and aff.replicable and abs(aff.x - 7) <= 1e-12
          and not sq.replicable and abs(gap - 3) <= 0.15
          and all(r.consistent for r in reports.values()))
    n_cons = sum(r.consistent for r in reports.values())
    return _finish(8, "replicability trichotomy", ok,
                   f"x(B_T)={lin.x:.3g}, x(2B_T+7)={aff.x:.6g}, gap(B_T^2)={gap:.4f}, "
                   f"{n_cons}/{len(reports)} consistent", "5% gap; 3 SE", t0, 120,
                   reports={k: r.to_dict() for k, r in reports.items()})


def criterion_9(seed=0, n_paths=100, log2_steps=17, chunk=10):
    t0 = time.perf_counter()
    N = 2 ** log2_steps
    rng = np.random.default_rng(seed)
    levels = list(range(3, 9))
    err = np.zeros(len(levels))
    floor = 0.0
    for _ in range(n_paths // chunk):
        inc = rng.standard_normal((chunk, N)) * math.sqrt(T / N)
        B = np.concatenate([np.zeros((chunk, 1)), np.cumsum(inc, axis=1)], axis=1)
        closed = 0.5 * (B[:, -1] ** 2 - T)
        floor += np.abs(np.sum(B[:, :-1] * inc, axis=1) - closed).sum() / n_paths
        for i, n in enumerate(levels):
            err[i] += np.abs(pathwise_integral(B, B, n)[:, -1] - closed).sum() / n_paths
    ok = all(b <= a or b <= 2 * floor for a, b in zip(err, err[1:]))
    table = ", ".join(f"n={n}: {e:.4f}" for n, e in zip(levels, err))
    return _finish(9, "pathwise integral", ok, f"{table}; floor {floor:.4f}", "nonincreasing to floor",
                   t0, 30, errors=err.tolist(), floor=floor)


def _random_table(rng, m=7):
    xs = np.sort(rng.uniform(-3, 3, m))
    return xs, rng.normal(0, 1, m)


def criterion_10(seed=0, n_pairs=20):
    t0 = time.perf_counter()
    s = g_set(A_LOW, A_HIGH)
    cfg = LatticeConfig(N=60)
    rng = np.random.default_rng(seed)
    worst = {"monotonicity": 0.0, "sublinearity": 0.0, "homogeneity": 0.0, "constant_shift": 0.0}

    def E(c):
        return dp_value(c, s, cfg).u

    for _ in range(n_pairs):
        x1, y1 = _random_table(rng)
        x2, y2 = _random_table(rng)
        X = make_claim({"name": "table", "xs": x1.tolist(), "ys": y1.tolist()})
        Y = make_claim({"name": "table", "xs": x2.tolist(), "ys": y2.tolist()})
        lam = float(rng.uniform(0.1, 5))
        cst = float(rng.normal(0, 3))
        eX, eY = E(X), E(Y)
        scale = max(1.0, np.max(np.abs(eX)), np.max(np.abs(eY)))
        # X - |Y| <= X
        worst["monotonicity"] = max(worst["monotonicity"],
                                    float(np.max(E(X - Y.abs_pow(1.0)) - eX)) / scale)
        worst["sublinearity"] = max(worst["sublinearity"], float(np.max(E(X + Y) - eX - eY)) / scale)
        worst["homogeneity"] = max(worst["homogeneity"], float(np.max(np.abs(E(X * lam) - lam * eX))) / scale / lam)
        worst["constant_shift"] = max(worst["constant_shift"],
                                      float(np.max(np.abs(E(X + cst) - eX - cst))) / (scale + abs(cst)))
    ok = all(v <= 1e-12 for v in worst.values())
    return _finish(10, "sublinear expectation axioms", ok,
                   ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), "1e-12", t0, 30, worst=worst)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}


def run_all(numbers=None, echo=print):
    out = []
    for n in numbers or sorted(CRITERIA):
        r = CRITERIA[n]()
        if echo:
            echo(r.line())
        out.append(r)
    return out
