import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from volunc.claims import make_claim
from volunc.errors import ArgumentError, ConfigurationError, DomainError, ResourceError
from volunc.gpde import GFunction, PDEGrid, extract_delta, sample_terminal, solve_g_pde, solve_multitime
from volunc.paths import TimeGrid

G = GFunction(1.0, 4.0)
SMALL = PDEGrid.default(G, 1.0, Nx=121)


def test_g_function():
    assert G(2.0) == 4.0 and G(-2.0) == -1.0 and G(0.0) == 0.0
    gam = np.linspace(-3, 3, 13)
    assert np.allclose(G(2.5 * gam), 2.5 * G(gam))
    with pytest.raises(DomainError):
        GFunction(2.0, 1.0)
    assert GFunction(2.0, 2.0).degenerate


@pytest.mark.parametrize("name,exact", [("square", 4.0), ("neg_square", -1.0), ("linear", 0.0)])
def test_closed_forms(name, exact):
    s = solve_g_pde(G, make_claim({"name": name}), SMALL)
    assert abs(s.root - exact) < 1e-3
    assert np.allclose(s.u[-1], make_claim({"name": name}).terminal(SMALL.x))


def test_closed_form_whole_surface():
    s = solve_g_pde(G, make_claim({"name": "square"}), SMALL)
    # interior nodes away from the truncated edges
    inner = np.abs(SMALL.x) < 2
    expect = SMALL.x[inner] ** 2 + 4.0 * (1.0 - s.t[:, None])
    assert np.max(np.abs(s.u[:, inner] - expect)) < 1e-6


def test_implicit_scheme():
    grid = PDEGrid.default(G, 1.0, Nx=121, N=100, scheme="implicit_splitting")
    assert abs(solve_g_pde(G, make_claim({"name": "square"}), grid).root - 4.0) < 1e-3
    assert abs(solve_g_pde(G, make_claim({"name": "neg_square"}), grid).root + 1.0) < 1e-3


def test_cfl_violation():
    grid = PDEGrid(-5, 5, 101, TimeGrid(1.0, 10))
    with pytest.raises(ConfigurationError, match="CFL"):
        solve_g_pde(G, make_claim({"name": "square"}), grid)


def test_bad_grid():
    with pytest.raises(ConfigurationError):
        PDEGrid(1, 5, 11, TimeGrid(1.0, 10))


def test_degenerate_heat_kernel():
    a, K = 2.0, 0.25
    g = GFunction(a, a)
    grid = PDEGrid.default(g, 1.0, Nx=241)
    sig = math.sqrt(a)
    call = solve_g_pde(g, make_claim({"name": "call", "strike": K}), grid).root
    assert abs(call - (sig * norm.pdf(K / sig) - K * norm.sf(K / sig))) < 5e-3
    dig = solve_g_pde(g, make_claim({"name": "digital", "strike": K}), grid).root
    assert abs(dig - norm.sf(K / sig)) < 5e-3


def test_convex_payoff_sits_at_upper_variance():
    c = make_claim({"name": "call", "strike": 0.3})
    worst = solve_g_pde(G, c, SMALL).root
    top = solve_g_pde(GFunction(4.0, 4.0), c, SMALL).root
    assert abs(worst - top) < 1e-3


def test_grid_convergence_factor():
    c = make_claim({"name": "call"})
    exact = math.sqrt(4.0 / (2 * math.pi))
    errs = [abs(solve_g_pde(G, c, PDEGrid(-12, 12, 40 * 2 ** r + 1, TimeGrid(1.0, 500 * 2 ** r))).root - exact)
            for r in range(2)]
    assert errs[0] / errs[1] >= 3


def test_monotone_in_x_and_convexity():
    s = solve_g_pde(G, make_claim({"name": "call"}), SMALL)
    assert np.all(np.diff(s.u, axis=1) >= -1e-12)
    z = extract_delta(s)
    assert np.all(np.diff(z[0]) >= -1e-12)
    lin = extract_delta(solve_g_pde(G, make_claim({"name": "linear"}), SMALL))
    assert np.allclose(lin, 1.0)


def test_delta_of_square_degenerate():
    g = GFunction(1.0, 1.0)
    grid = PDEGrid.default(g, 1.0, Nx=121)
    z = extract_delta(solve_g_pde(g, make_claim({"name": "square"}), grid))
    inner = np.abs(grid.x) < 2
    assert np.allclose(z[:-1, inner], 2 * grid.x[inner], atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(ys=st.lists(st.floats(-3, 3), min_size=5, max_size=5), zs=st.lists(st.floats(-3, 3), min_size=5, max_size=5),
       lam=st.floats(0.0, 4.0), c=st.floats(-5, 5))
def test_sublinear_properties(ys, zs, lam, c):
    xs = [-2.0, -1.0, 0.0, 1.0, 2.0]
    f = make_claim({"name": "table", "xs": xs, "ys": ys})
    h = make_claim({"name": "table", "xs": xs, "ys": zs})
    grid = PDEGrid.default(G, 1.0, Nx=61)
    uf, uh = solve_g_pde(G, f, grid), solve_g_pde(G, h, grid)
    tol = 1e-12 * (1 + np.max(np.abs(uf.u)) + np.max(np.abs(uh.u)))
    assert solve_g_pde(G, f + h, grid).root <= uf.root + uh.root + 10 * grid.dx ** 2
    assert np.allclose(solve_g_pde(G, f * lam, grid).u, lam * uf.u, atol=tol * (1 + lam), rtol=0)
    assert np.allclose(solve_g_pde(G, f + c, grid).u, uf.u + c, atol=tol + 1e-12 * abs(c), rtol=0)
    # monotonicity: f - |h| <= f, away from the extrapolated edges of the truncated domain
    inner = np.abs(grid.x) <= 0.5 * grid.x[-1]
    lower = solve_g_pde(G, f - h.abs_pow(1.0), grid).u
    assert np.all(lower[:, inner] <= uf.u[:, inner] + tol)


def test_kink_off_node_is_cell_averaged():
    x = np.linspace(-1, 1, 5)
    v = sample_terminal(make_claim({"name": "call", "strike": 0.1}), x)
    # mean of (y - 0.1)^+ over [-0.25, 0.25]
    assert abs(v[2] - 0.0225) < 1e-4
    on = sample_terminal(make_claim({"name": "call", "strike": 0.0}), x)
    assert on[2] == 0.0


def test_nonfinite_terminal():
    with pytest.raises(DomainError), np.errstate(all="ignore"):
        solve_g_pde(G, lambda x: np.log(x), SMALL)


def test_multitime():
    grid = PDEGrid.default(G, 1.0, Nx=81)
    v = solve_multitime(G, make_claim({"name": "increment_square", "t1": 0.5, "t2": 1.0}), grid)
    assert abs(v - 2.0) < 1e-3
    assert abs(solve_multitime(G, make_claim({"name": "increment", "t1": 0.5, "t2": 1.0}), grid)) < 1e-10
    sq = make_claim({"name": "square"})
    assert solve_multitime(G, sq, grid) == solve_g_pde(G, sq, grid).root


def test_multitime_errors():
    grid = PDEGrid.default(G, 1.0, Nx=81)
    with pytest.raises(ArgumentError):
        solve_multitime(G, make_claim({"name": "increment", "t1": 0.3333, "t2": 1.0}), grid)
    with pytest.raises(ResourceError):
        solve_multitime(G, make_claim({"name": "increment", "t1": 0.5, "t2": 1.0}), grid, budget=100)


def test_surface_csv(tmp_path):
    grid = PDEGrid.default(G, 1.0, Nx=11, N=5)
    solve_g_pde(G, make_claim({"name": "square"}), grid).to_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "t,x,u,Z" and len(lines) == 1 + 6 * 11
