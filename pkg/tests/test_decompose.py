import math

import numpy as np
import pytest

from volunc.claims import make_claim
from volunc.decompose import (bracket_z, build_decomposition, check_symmetry, extract_decomposition, price,
                              verify_2bsde, z_agreement)
from volunc.dp import LatticeConfig, dp_value
from volunc.errors import ArgumentError, ConfigurationError, DomainError
from volunc.paths import simulate
from volunc.scenarios import constant, g_set

CFG = LatticeConfig(N=50)


def test_martingale_claim_has_unit_z(pooled):
    dec = build_decomposition(make_claim({"name": "linear"}), pooled, CFG, n_paths=2000, seed=3)
    for lab in dec.labels:
        assert np.allclose(dec.Z[lab], 1.0, atol=1e-12)
        assert np.max(np.abs(dec.K[lab])) < 1e-12


def test_constant_claim(pooled):
    dec = build_decomposition(make_claim({"name": "constant", "value": 3.0}), pooled, CFG, n_paths=1000, seed=3)
    for lab in dec.labels:
        assert np.max(np.abs(dec.Z[lab])) < 1e-12
        assert np.max(np.abs(dec.K[lab])) < 1e-12
        assert np.allclose(dec.E_path[lab], 3.0)


def test_square_k_means(pooled):
    dec = build_decomposition(make_claim({"name": "square"}), pooled, CFG, n_paths=20000, seed=1)
    m_lo = dec.K["const(1.0)"][:, -1].mean()
    m_hi = dec.K["argmax"][:, -1].mean()
    assert abs(m_lo - 3.0) < 0.1
    assert abs(m_hi) < 0.05
    rep = verify_2bsde(dec)
    assert rep.passed, rep.checks
    assert rep.min_label in ("argmax", "const(4.0)")
    assert rep.to_dict()["pass"]


def test_bsde_checks_for_kinked_claim(pooled):
    dec = build_decomposition(make_claim({"name": "call"}), pooled, CFG, n_paths=20000, seed=11)
    rep = verify_2bsde(dec)
    assert rep.passed, rep.checks
    assert rep.terminal_gap < 1e-12 and rep.identity_gap < 1e-10


def test_argmax_required(pooled):
    dec = build_decomposition(make_claim({"name": "square"}), pooled, CFG, n_paths=500, seed=1,
                              include_argmax=False)
    with pytest.raises(ConfigurationError):
        verify_2bsde(dec)


def test_non_terminal_claim_rejected(pooled, grid):
    L = dp_value(make_claim({"name": "square"}), pooled, CFG)
    b = simulate(constant(grid, 1.0), grid, 100, 0)
    with pytest.raises(ArgumentError):
        extract_decomposition(make_claim({"name": "increment", "t1": 0.5, "t2": 1.0}), pooled, b, L)
    with pytest.raises(ArgumentError):
        extract_decomposition(make_claim({"name": "square"}), pooled, b, L, source="nope")


def test_bracket_degenerate_variance():
    E = np.zeros((3, 5))
    x = np.zeros((3, 5))
    with pytest.raises(DomainError):
        bracket_z(E, x, 0.25)


def test_bracket_head_is_cross_sectional(grid):
    b = simulate(constant(grid, 2.0), grid, 500, 4)
    E = b.x ** 2
    z = bracket_z(E, b.x, grid.dt)
    assert np.all(z[:, 0] == z[0, 0]) and np.all(z[:, 1] == z[0, 1])
    fresh = simulate(constant(grid, 2.0), grid, 50, 5)
    head = z[0, :2]
    assert np.all(bracket_z(fresh.x ** 2, fresh.x, grid.dt, head=head)[:, :2] == head)


def test_bracket_recovers_linear_slope(grid):
    b = simulate(constant(grid, 2.0), grid, 200, 4)
    z = bracket_z(3.0 * b.x, b.x, grid.dt)
    assert np.allclose(z, 3.0)


def test_sources_agree(pooled):
    c = make_claim({"name": "square"})
    L = dp_value(c, pooled, CFG)
    bundles = {ctl.label: simulate(ctl, CFG.grid, 20000, 40 + i) for i, ctl in enumerate(pooled.pool)}
    delta = extract_decomposition(c, pooled, bundles, L)
    bracket = extract_decomposition(c, pooled, bundles, L, source="bracket")
    reg = extract_decomposition(c, pooled, bundles, L, source="regression")
    for other in (bracket, reg):
        rms, C = z_agreement(delta, other)
        assert C < 2.0, (other.source, rms, C)


def test_regression_falls_back_with_warning(pooled):
    c = make_claim({"name": "square"})
    L = dp_value(c, pooled, CFG)
    b = simulate(pooled.pool[0], CFG.grid, 40, 2)
    with pytest.warns(RuntimeWarning, match="rank deficient"):
        extract_decomposition(c, pooled, b, L, source="regression")


def test_strategy_applies_to_fresh_paths(pooled):
    dec = build_decomposition(make_claim({"name": "call"}), pooled, CFG, n_paths=2000, seed=1)
    b = simulate(pooled.pool[1], CFG.grid, 300, 999)
    z = dec.strategy(b)
    assert z.shape == (300, CFG.N)
    assert np.all((z >= -1e-12) & (z <= 1 + 1e-12))


def test_dominated_set_gives_zero_k(grid):
    s = g_set(2.0, 2.0, pool=[constant(grid, 2.0)])
    dec = build_decomposition(make_claim({"name": "square"}), s, CFG, n_paths=20000, seed=5)
    m = dec.K["argmax"][:, -1]
    assert abs(m.mean()) < 3 * m.std(ddof=1) / math.sqrt(len(m)) + 0.02


def test_symmetry():
    s = g_set(1.0, 4.0)
    lin = check_symmetry(make_claim({"name": "linear"}), s, CFG)
    assert lin.symmetric and lin.status == "symmetric"
    sq = check_symmetry(make_claim({"name": "square"}), s, CFG)
    assert not sq.symmetric
    assert abs(sq.root_gap - 3.0) < 0.05


def test_symmetry_with_decomposition(pooled):
    c = make_claim({"name": "linear", "slope": 2.0, "intercept": 1.0})
    dec = build_decomposition(c, pooled, CFG, n_paths=500, seed=2)
    rep = check_symmetry(c, pooled, CFG, dec=dec)
    assert rep.symmetric and max(rep.k_max.values()) < 1e-10


def test_price_on_both_value_types(pooled):
    from volunc.gpde import GFunction, PDEGrid, solve_g_pde

    L = dp_value(make_claim({"name": "square"}), pooled, CFG)
    assert abs(price(make_claim({"name": "neg_square"}), L, pooled) + 1.0) < 0.05
    g = GFunction(1.0, 4.0)
    S = solve_g_pde(g, make_claim({"name": "square"}), PDEGrid.default(g, 1.0, Nx=61))
    assert abs(price(make_claim({"name": "neg_square"}), S, pooled) + 1.0) < 0.05


def test_decomposition_csv(tmp_path):
    cfg = LatticeConfig(N=5)
    s = g_set(1.0, 4.0, pool=[constant(cfg.grid, 1.0), constant(cfg.grid, 4.0)])
    dec = build_decomposition(make_claim({"name": "square"}), s, cfg, n_paths=10, seed=1)
    dec.to_csv(tmp_path / "d.csv", max_paths=2)
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "control,path_id,t,E,Z,K"
    assert len(rows) == 1 + 3 * 2 * 6
