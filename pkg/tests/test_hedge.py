import numpy as np
import pytest

from volunc.claims import BUNDLED_CLAIMS, make_claim
from volunc.decompose import build_decomposition
from volunc.dp import LatticeConfig
from volunc.errors import ArgumentError
from volunc.hedge import classify_replicable, conservative_price, superhedge_verify
from volunc.scenarios import constant, g_set

CFG = LatticeConfig(N=50)


@pytest.fixture(scope="module")
def square_dec():
    grid = CFG.grid
    s = g_set(1.0, 4.0, pool=[constant(grid, 1.0), constant(grid, 4.0)])
    return s, build_decomposition(make_claim({"name": "square"}), s, CFG, n_paths=5000, seed=1)


def test_martingale_claim_hedged_exactly(pooled):
    c = make_claim({"name": "linear"})
    dec = build_decomposition(c, pooled, CFG, n_paths=1000, seed=1)
    rep = superhedge_verify(c, pooled, dec, 0.0, n_paths=2000)
    assert rep.passed
    for v in rep.per_control.values():
        assert abs(v["min"]) < 1e-12 and abs(v["mean"]) < 1e-12


def test_square_superhedged_at_price(square_dec):
    s, dec = square_dec
    rep = superhedge_verify(make_claim({"name": "square"}), s, dec, 4.0, n_paths=20000)
    assert rep.passed, rep.per_control
    assert abs(rep.per_control["const(1.0)"]["mean"] - 3.0) < 0.1
    assert rep.note == ""
    assert rep.to_dict()["pass"]


def test_under_capitalised_fails():
    # the mean band (dx^2 + dt) ||X|| must be narrower than the 0.5 deficit
    cfg = LatticeConfig(N=200)
    s = g_set(1.0, 4.0, pool=[constant(cfg.grid, 1.0), constant(cfg.grid, 4.0)])
    c = make_claim({"name": "square"})
    dec = build_decomposition(c, s, cfg, n_paths=2000, seed=1)
    rep = superhedge_verify(c, s, dec, 3.5, n_paths=20000)
    assert rep.mean_band < 0.5
    assert not rep.passed
    assert not rep.per_control["const(4.0)"]["pass"]
    assert "below the conservative price" in rep.note


def test_reused_seed_rejected(square_dec):
    s, dec = square_dec
    with pytest.raises(ArgumentError):
        superhedge_verify(make_claim({"name": "square"}), s, dec, 4.0, n_paths=100, seed=1)


def test_histogram(tmp_path, square_dec):
    s, dec = square_dec
    rep = superhedge_verify(make_claim({"name": "square"}), s, dec, 4.0, n_paths=500)
    rep.histogram_csv(tmp_path / "h.csv", bins=10)
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "control,bin_left,bin_right,count" and len(rows) == 1 + 3 * 10


def test_conservative_prices():
    s = g_set(1.0, 4.0)
    assert abs(conservative_price(make_claim({"name": "square"}), s) - 4.0) < 1e-2
    assert abs(conservative_price(make_claim({"name": "neg_square"}), s) + 1.0) < 1e-2
    assert conservative_price(make_claim({"name": "linear"}), s) == 0.0


def test_price_scales_and_shifts():
    s = g_set(1.0, 4.0)
    c = make_claim({"name": "call", "strike": 0.2})
    p = conservative_price(c, s, CFG)
    assert abs(conservative_price(c * 3.0, s, CFG) - 3 * p) < 1e-12
    assert abs(conservative_price(c + 2.0, s, CFG) - (p + 2)) < 1e-12


def test_price_dominates_every_control(pooled):
    from volunc.dp import mc_lower_bound

    for name in ("call", "put", "abs"):
        c = make_claim({"name": name})
        r = mc_lower_bound(c, pooled, 20000, 3, config=CFG)
        assert r.gap >= -3 * r.mc_max_se


@pytest.mark.parametrize("name,expected", [("linear", True), ("square", False), ("neg_square", False)])
def test_classify_examples(pooled, name, expected):
    rep = classify_replicable(make_claim({"name": name}), pooled, CFG, n_paths=5000, seed=1)
    assert rep.replicable is expected
    assert rep.consistent
    if not expected:
        lo, m_lo, hi, m_hi, gap = rep.witnesses
        assert m_hi > m_lo and gap > 0
    d = rep.to_dict()
    assert (d["x"] is None) is (not expected)


def test_bundled_claims_are_consistent(pooled):
    for spec in BUNDLED_CLAIMS[:4]:
        rep = classify_replicable(make_claim(spec), pooled, CFG, n_paths=4000, seed=2)
        assert rep.consistent, spec
