"""Dynamic programming for the worst-case conditional expectation on a trinomial lattice.

One step from ``t_{k+1}`` back to ``t_k`` at node ``x_j``::

    E_k(x_j) = max_a  E_{k+1}(x_j) + a dt / (2 dx^2) * (E_{k+1}(x_{j+1}) - 2 E_{k+1}(x_j) + E_{k+1}(x_{j-1}))

i.e. a trinomial move with mean 0 and variance ``a dt``. The right-hand side
is affine in ``a``, so the maximum over ``[a_low, a_high]`` sits at an
endpoint; the lattice records which one and cross-checks against a finer mesh
of control values.

Markov bounds (functions of ``(t, B_t)``) use a recombining lattice. Bounds
that read the whole path prefix use a full trinomial tree, which is only
feasible for a handful of steps.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _norm

from ._mesh import MeshValues, interp_uniform
from .errors import ArgumentError, ConfigurationError, DomainError, ResourceError
from .kernels import sweep
from .paths import TimeGrid
from .scenarios import VolControl, deterministic_time

TREE_MAX_STEPS = 20
TREE_BUDGET = 3 ** 13


@dataclass(frozen=True)
class LatticeConfig:
    """``N`` steps on ``[0, T]``; mesh ``dx = dx_factor * sqrt(a_max * dt)``.

    ``dx_factor >= 1`` keeps the trinomial probabilities in ``[0, 1]``. The
    default ``sqrt(3)`` puts two thirds of the mass on the middle branch at
    the upper variance.
    """

    N: int = 200
    T: float = 1.0
    dx_factor: float = math.sqrt(3.0)
    control_mesh: int = None

    @property
    def grid(self):
        return TimeGrid(self.T, self.N)

    def dx(self, a_max):
        return self.dx_factor * math.sqrt(a_max * self.T / self.N)

    def refine(self, factor=2):
        return LatticeConfig(self.N * factor, self.T, self.dx_factor, self.control_mesh)


class ValueLattice(MeshValues):
    """``E_{t_k}(X)`` on nodes ``x_j = j dx``, ``|j| <= N``, for every ``k``.

    Values are exact (no boundary condition) on the whole rectangle because
    the terminal layer is laid out on ``|j| <= 2N``. ``argmax[k, j]`` is the
    variance attaining the maximum on cell ``k``.
    """

    kind = "recombining"

    def __init__(self, t, x, u, argmax, c_lo, c_hi, a_lo, a_hi, claim, sset, config, mesh_gap):
        super().__init__(t, x, u)
        self.dx = config.dx(sset.a_max)  # exact spacing, not x[1] - x[0]
        self.argmax = argmax
        self.c_lo, self.c_hi = c_lo, c_hi
        self.a_lo, self.a_hi = a_lo, a_hi
        self.claim, self.sset, self.config = claim, sset, config
        self.mesh_gap = mesh_gap

    @property
    def grid(self):
        return self.config.grid

    @property
    def root(self):
        return float(self.u[0, self.N])

    def node(self, j):
        return self.N + j

    def slice(self, k):
        return self.u[k]

    def valid_after(self, t, s):
        """Nodes of layer ``s`` recomputable from layer ``t`` alone."""
        return np.abs(np.arange(-self.N, self.N + 1)) <= self.N - (t - s)

    def recurse(self, values, t, s):
        """Run the recursion from layer-``t`` data ``values`` down to layer ``s``.

        Only nodes flagged by :meth:`valid_after` are meaningful.
        """
        if s == t:
            return np.array(values, dtype=float)
        out, _ = sweep(np.asarray(values, float)[None], self.c_lo[s:t], self.c_hi[s:t],
                       extrapolate=False, store_all=False)
        return out[0, 0]

    def cone(self, k):
        return np.abs(np.arange(-self.N, self.N + 1)) <= k

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_index", "value", "argmax_control"])
            for k in range(self.N + 1):
                for j in np.nonzero(self.cone(k))[0]:
                    a = self.argmax[k, j] if k < self.N else float("nan")
                    w.writerow([repr(float(self.t[k])), int(j - self.N), repr(float(self.u[k, j])), repr(float(a))])


class TreeLattice:
    """Full trinomial tree for path-dependent bounds; ``levels[k]`` has ``3**k`` nodes.

    Child ``3 i + m`` of node ``i`` moves by ``(m - 1) dx``.
    """

    kind = "tree"

    def __init__(self, levels, argmax, c_lo, c_hi, prefixes, claim, sset, config, dx):
        self.levels, self.argmax = levels, argmax
        self.c_lo, self.c_hi = c_lo, c_hi
        self.prefixes = prefixes
        self.claim, self.sset, self.config = claim, sset, config
        self.dx = dx
        self.N = config.N
        self.t = config.grid.nodes

    @property
    def root(self):
        return float(self.levels[0][0])

    def slice(self, k):
        return self.levels[k]

    def valid_after(self, t, s):
        return np.ones(3 ** s, bool)

    def recurse(self, values, t, s):
        v = np.asarray(values, float)
        for k in range(t - 1, s - 1, -1):
            v, _ = _tree_step(v, self.c_lo[k], self.c_hi[k])
        return v


def _tree_step(child, c_lo, c_hi):
    ch = child.reshape(-1, 3)
    down, mid, up = ch[:, 0], ch[:, 1], ch[:, 2]
    d = up - 2.0 * mid + down
    hi = d >= 0.0
    return mid + np.where(hi, c_hi * d, c_lo * d), hi


def tree_prefixes(N, dx):
    """Positions of all trinomial paths: list of ``(3**k, k+1)`` arrays."""
    out = [np.zeros((1, 1), dtype=np.int64)]
    for k in range(N):
        p = out[-1]
        rep = np.repeat(p, 3, axis=0)
        step = np.tile(np.array([-1, 0, 1]), p.shape[0])
        out.append(np.concatenate([rep, (rep[:, -1] + step)[:, None]], axis=1))
    # integer node indices times dx, so positions match the lattice bit for bit
    return [p * dx for p in out]


def _mesh_values(lo, hi, M):
    w = np.linspace(0.0, 1.0, M)
    return [lo + (hi - lo) * s for s in w]


def dp_value(claim, sset, config=None):
    """Worst-case conditional expectations ``E_{t_k}(X)`` by backward recursion."""
    config = config or LatticeConfig()
    if not sset.has_bounds:
        raise ConfigurationError("dynamic programming needs variance bounds on the scenario set")
    if not claim.is_terminal(config.T):
        raise ArgumentError(f"claim {claim.name!r} is path dependent; use dp_multitime")
    if config.dx_factor < 1:
        raise ConfigurationError(f"dx_factor = {config.dx_factor} < 1 gives negative branch probabilities")
    M = config.control_mesh or sset.control_mesh
    if M < 2:
        raise ConfigurationError("control mesh needs both endpoints (M >= 2)")
    if not sset.markov:
        return _dp_tree(claim, sset, config, M)

    N, T = config.N, config.T
    grid = config.grid
    dt = grid.dt
    dx = config.dx(sset.a_max)
    times = grid.nodes
    jj = np.arange(-2 * N, 2 * N + 1)
    xw = jj * dx
    a_lo = np.stack([sset.a_low.at(times[k], xw) for k in range(N)])
    a_hi = np.stack([sset.a_high.at(times[k], xw) for k in range(N)])
    if np.any(a_hi * dt > dx * dx * (1 + 1e-12)):
        raise ConfigurationError(f"mesh condition violated: dx = {dx:.6g} < sqrt(a_high dt)")
    scale = dt / (2.0 * dx * dx)
    c_lo, c_hi = a_lo * scale, a_hi * scale
    uT = claim.terminal(xw)
    out, hi = sweep(uT[None], c_lo, c_hi, extrapolate=False, store_all=True)
    wide = out[:, 0, :]
    s = slice(N, 3 * N + 1)
    u = wide[:, s]

    # the sweep's choice, with second differences at roundoff level read as ties (upper bound)
    nb = (wide[1:, N + 1:3 * N + 2], wide[1:, N:3 * N + 1], wide[1:, N - 1:3 * N])
    d = nb[0] - 2.0 * nb[1] + nb[2]
    tie = 64 * np.finfo(float).eps * (np.abs(nb[0]) + 2 * np.abs(nb[1]) + np.abs(nb[2]))
    argmax = np.where((hi[:, 0, s] == 1) | (np.abs(d) <= tie), a_hi[:, s], a_lo[:, s])

    # endpoint attainment against an M-point control mesh
    best = np.full_like(d, -np.inf)
    for a in _mesh_values(a_lo[:, s], a_hi[:, s], M):
        best = np.maximum(best, wide[1:, s] + a * scale * d)
    mesh_gap = float(np.max(best - u[:-1]))
    tol = 1e-12 * max(1.0, float(np.max(np.abs(u))))
    if mesh_gap > tol:
        raise AssertionError(f"control mesh beats the endpoints by {mesh_gap:.3g}")
    return ValueLattice(times, jj[s] * dx, u, argmax, c_lo[:, s], c_hi[:, s], a_lo[:, s], a_hi[:, s],
                        claim, sset, config, mesh_gap)


def _dp_tree(claim, sset, config, M, budget=TREE_BUDGET):
    N = config.N
    if N > TREE_MAX_STEPS or 3 ** N > budget:
        raise ResourceError(
            f"path-dependent bounds need a full trinomial tree with 3^{N} leaves; "
            f"use N <= {int(math.log(budget, 3))} steps or Markov bounds (functions of t and B_t)")
    grid = config.grid
    dt, times = grid.dt, grid.nodes
    dx = config.dx(sset.a_max)
    pre = tree_prefixes(N, dx)
    scale = dt / (2.0 * dx * dx)
    c_lo = [sset.a_low.on_prefix(k, times, pre[k]) * scale for k in range(N)]
    c_hi = [sset.a_high.on_prefix(k, times, pre[k]) * scale for k in range(N)]
    if any(np.any(c > 0.5 * (1 + 1e-12)) for c in c_hi):
        raise ConfigurationError("mesh condition violated on the tree")
    levels = [None] * (N + 1)
    argmax = [None] * N
    levels[N] = claim.terminal(pre[N][:, -1])
    for k in range(N - 1, -1, -1):
        levels[k], hi = _tree_step(levels[k + 1], c_lo[k], c_hi[k])
        argmax[k] = np.where(hi, c_hi[k], c_lo[k]) / scale
    return TreeLattice(levels, argmax, c_lo, c_hi, pre, claim, sset, config, dx)


def check_time_consistency(lattice, s, t):
    """Largest gap between stored ``E_s`` and the recursion restarted from stored ``E_t``."""
    if not 0 <= s <= t <= lattice.N:
        raise ArgumentError(f"need 0 <= s <= t <= N, got s={s}, t={t}")
    if s == t:
        return 0.0
    redo = lattice.recurse(lattice.slice(t), t, s)
    ok = lattice.valid_after(t, s)
    return float(np.max(np.abs(redo[ok] - lattice.slice(s)[ok])))


# --------------------------------------------------------------------------
# stopping times
# --------------------------------------------------------------------------

@dataclass
class StoppingReport:
    stopped: list  # (k, j, value) for every stopped node reached
    restart_violation: float
    dominance_margin: float
    tolerance: float
    checked_taus: list = field(default_factory=list)

    @property
    def passed(self):
        return self.restart_violation <= self.tolerance and self.dominance_margin >= -self.tolerance

    def to_dict(self):
        return {"check": "optional_sampling", "max_violation": max(self.restart_violation, -self.dominance_margin, 0.0),
                "restart_violation": self.restart_violation, "dominance_margin": self.dominance_margin,
                "tolerance": self.tolerance, "n_stopped_nodes": len(self.stopped),
                "taus": self.checked_taus, "pass": self.passed}


def value_at_stopping_time(lattice, sigma, taus=None, tol=1e-12, budget=TREE_BUDGET):
    """Read ``E_sigma(X)`` off the lattice and verify it two ways.

    Every trinomial path is enumerated (so ``3**N`` must fit the budget).
    (1) The recursion is rerun on the path tree from the terminal claim down
    to ``sigma`` and compared with the stored lattice values. (2) For each
    later stopping time ``tau`` (replaced by ``max(sigma, tau)``) and every
    control value of the mesh, ``E_sigma >= E^a[E_tau | F_sigma]``.
    """
    if not isinstance(lattice, ValueLattice):
        raise ConfigurationError("stopping-time verification runs on the recombining lattice")
    N = lattice.N
    if 3 ** N > budget:
        raise ResourceError(f"enumerating 3^{N} lattice paths exceeds the budget {budget}; use a coarser lattice")
    if sigma.grid != lattice.grid:
        raise ArgumentError("stopping time lives on another grid")
    dx = lattice.dx
    pre = tree_prefixes(N, dx)
    leaves = pre[N]
    jl = np.rint(leaves / dx).astype(np.int64)
    sig = sigma.evaluate(leaves)
    scale = lattice.dt / (2 * dx * dx)

    # (1) restart from T on the tree
    v = lattice.claim.terminal(leaves[:, -1])
    tree_vals = {N: v}
    for k in range(N - 1, int(sig.min()) - 1, -1):
        jn = jl[:: 3 ** (N - k), k] + N
        v, _ = _tree_step(v, lattice.c_lo[k, jn], lattice.c_hi[k, jn])
        tree_vals[k] = v
    leaf = np.arange(3 ** N)
    recomputed = np.empty(3 ** N)
    stored = np.empty(3 ** N)
    for k in np.unique(sig):
        rows = sig == k
        recomputed[rows] = tree_vals[k][leaf[rows] // 3 ** (N - k)]
        stored[rows] = lattice.u[k, jl[rows, k] + N]
    restart = float(np.max(np.abs(recomputed - stored)))
    stopped = sorted({(int(k), int(j), float(val)) for k, j, val in
                      zip(sig, jl[leaf, sig], stored)})

    # (2) supermartingale dominance over later stopping times
    if taus is None:
        taus = [deterministic_time(lattice.grid, k) for k in sorted({N // 4, N // 2, 3 * N // 4, N})]
    margin = math.inf
    M = lattice.sset.control_mesh if lattice.config.control_mesh is None else lattice.config.control_mesh
    names = []
    for tau in taus:
        tl = np.maximum(tau.evaluate(leaves), sig)
        names.append(tau.label)
        for m in range(M):
            w = m / (M - 1)
            W = lattice.u[N, jl[:, N] + N].copy()
            at_sigma = np.empty(3 ** N)
            for k in range(N - 1, int(sig.min()) - 1, -1):
                first = leaf[:: 3 ** (N - k)]
                jn = jl[first, k] + N
                ch = W.reshape(-1, 3)
                d = ch[:, 2] - 2.0 * ch[:, 1] + ch[:, 0]
                a = lattice.a_lo[k, jn] + (lattice.a_hi[k, jn] - lattice.a_lo[k, jn]) * w
                W = ch[:, 1] + a * scale * d
                stop_here = tl[first] == k
                W[stop_here] = lattice.u[k, jn[stop_here]]
                rows = sig == k
                at_sigma[rows] = W[leaf[rows] // 3 ** (N - k)]
            rows = sig == N
            at_sigma[rows] = lattice.u[N, jl[rows, N] + N]
            margin = min(margin, float(np.min(stored - at_sigma)))
    scale_tol = tol * max(1.0, float(np.max(np.abs(stored))))
    return StoppingReport(stopped, restart, margin, scale_tol, names)


# --------------------------------------------------------------------------
# Monte Carlo checks
# --------------------------------------------------------------------------

@dataclass
class MCBoundReport:
    estimates: dict  # label -> (mean, se)
    best: str
    mc_max: float
    mc_max_se: float
    dp_value: float

    @property
    def gap(self):
        return self.dp_value - self.mc_max

    def to_dict(self):
        return {"estimates": {k: {"mean": m, "se": s} for k, (m, s) in self.estimates.items()},
                "best": self.best, "mc_max": self.mc_max, "mc_max_se": self.mc_max_se,
                "dp_value": self.dp_value, "gap": self.gap}


def mc_lower_bound(claim, sset, n_paths=20000, seed=0, lattice=None, config=None, pool=None):
    """Common-random-number estimates of ``E^P[X]`` for every pool control.

    Their maximum is a statistical lower bound for the DP value.
    """
    from .paths import simulate

    pool = list(pool if pool is not None else sset.pool)
    if not pool:
        raise ArgumentError("mc_lower_bound needs a pool of controls")
    if lattice is None and sset.has_bounds:
        lattice = dp_value(claim, sset, config or LatticeConfig(N=pool[0].grid.N, T=pool[0].grid.T))
    est = {}
    for c in pool:
        b = simulate(c, c.grid, n_paths, seed)
        v = claim.evaluate(b)
        est[c.label] = (float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_paths)))
    best = max(est, key=lambda k: est[k][0])
    return MCBoundReport(est, best, est[best][0], est[best][1],
                         lattice.root if lattice is not None else float("nan"))


def binned_increment_stats(x_k, inc, dx, min_bin=50):
    """Mean and standard error of ``inc`` within lattice cells of ``x_k``; small bins are skipped."""
    cell = np.rint(x_k / dx).astype(np.int64)
    cells, inv, cnt = np.unique(cell, return_inverse=True, return_counts=True)
    s1 = np.bincount(inv, weights=inc)
    s2 = np.bincount(inv, weights=inc * inc)
    keep = cnt >= min_bin
    n = cnt[keep]
    mean = s1[keep] / n
    var = np.maximum(s2[keep] / n - mean ** 2, 0.0) * n / np.maximum(n - 1, 1)
    return cells[keep], mean, np.sqrt(var / n)


def check_supermartingale(values, bundle, n_se=3.0, min_bin=50, series=None, interp_slack=None, family_alpha=0.01):
    """Binned test that ``series`` (default: the value process along the paths)
    does not increase in conditional mean on any cell.

    Values read between mesh nodes carry a linear interpolation error of the
    size of the local second difference. With ``interp_slack`` (on by default
    when ``series`` is the value process) each increment is lowered by the
    error bound at both of its ends. This rules out false alarms from the
    interpolation but hides drifts smaller than the bound.

    Hundreds of bins are tested at once, so the threshold is the larger of
    ``n_se`` and the Bonferroni level for ``family_alpha`` over all bins.

    Returns ``(worst, n_bins)`` where ``worst`` is the largest
    ``mean - z * se`` over all time steps and bins; ``worst <= 0`` passes.
    """
    if interp_slack is None:
        interp_slack = series is None
    y = values.along(bundle) if series is None else series
    e = values.interp_error_along(bundle) if interp_slack else None
    x = bundle.x
    means, ses = [], []
    for k in range(bundle.grid.N):
        inc = y[:, k + 1] - y[:, k]
        if e is not None:
            inc = inc - e[:, k + 1] - e[:, k]
        _, mean, se = binned_increment_stats(x[:, k], inc, values.dx, min_bin)
        means.append(mean)
        ses.append(se)
    mean, se = np.concatenate(means), np.concatenate(ses)
    nb = len(mean)
    if nb == 0:
        return -math.inf, 0
    z = n_se
    if family_alpha:
        z = max(n_se, float(_norm.isf(family_alpha / nb)))
    worst = float(np.max(mean - z * se - 1e-12))
    return worst, nb


# --------------------------------------------------------------------------
# multi-date claims and the argmax control
# --------------------------------------------------------------------------

def dp_multitime(claim, sset, config=None, budget=5e7):
    """Lattice value of ``f(B_{t_1}, ..., B_{t_n})`` by stepwise recursion (constant bounds)."""
    config = config or LatticeConfig()
    if claim.dates is None:
        return dp_value(claim, sset, config).root
    lo, hi = sset.a_low.constant, sset.a_high.constant
    if lo is None or hi is None:
        raise ConfigurationError("stepwise evaluation on the lattice needs constant bounds")
    grid = config.grid
    ks = [grid.index_of(t) for t in claim.dates]
    if ks[-1] != grid.N or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ArgumentError("monitoring dates must increase and end at the horizon")
    n = len(ks)
    dx = config.dx(hi)
    scale = grid.dt / (2 * dx * dx)
    sizes = [2 * k + 1 for k in ks]
    if np.prod(sizes, dtype=float) > budget:
        raise ResourceError("monitored lattice exceeds the budget; use fewer steps")
    bounds = [0] + ks
    V = None
    for j in range(n, 0, -1):
        m = bounds[j] - bounds[j - 1]
        dims = [2 * bounds[i] + 1 for i in range(1, j)]
        R = int(np.prod(dims)) if dims else 1
        idx = np.indices(dims).reshape(len(dims), R).T - np.array([bounds[i] for i in range(1, j)]) if dims \
            else np.zeros((1, 0), int)
        last = idx[:, -1] if j > 1 else np.zeros(1, int)
        y = np.arange(-m, m + 1)
        pos = last[:, None] + y[None, :]
        if j == n:
            args = [np.broadcast_to((idx[:, c] * dx)[:, None], pos.shape) for c in range(j - 1)] + [pos * dx]
            rows = np.asarray(claim.payoff(*args), float) * np.ones(pos.shape)
        else:
            rows = np.take_along_axis(V, pos + bounds[j], axis=1)
        if m > 0:
            cl = np.full((m, 2 * m + 1), lo * scale)
            ch = np.full((m, 2 * m + 1), hi * scale)
            out, _ = sweep(rows, cl, ch, extrapolate=False, store_all=False)
            rows = out[0]
        vals = rows[:, m]
        V = vals.reshape(-1, 2 * bounds[j - 1] + 1) if j > 1 else vals
    return float(V[0])


def argmax_control(lattice, grid=None, label="argmax"):
    """Adapted control playing the recorded maximiser at the lattice node nearest to ``B_{t_k}``."""
    if not isinstance(lattice, ValueLattice):
        raise ConfigurationError("argmax control needs a recombining lattice")
    grid = grid or lattice.grid
    if grid != lattice.grid:
        raise ArgumentError("argmax control must live on the lattice grid")
    N, dx, table = lattice.N, lattice.dx, lattice.argmax

    def rule(k, prefix):
        j = np.clip(np.rint(prefix[:, k] / dx).astype(np.int64), -N, N)
        return table[k, j + N]

    return VolControl(grid, rule, label, 1, None)


def value_along(lattice, bundle):
    """Convenience: ``E_{t_k}(X)`` interpolated along each simulated path."""
    return lattice.along(bundle)


__all__ = ["LatticeConfig", "ValueLattice", "TreeLattice", "dp_value", "check_time_consistency",
           "value_at_stopping_time", "StoppingReport", "mc_lower_bound", "MCBoundReport",
           "check_supermartingale", "binned_increment_stats", "dp_multitime", "argmax_control",
           "interp_uniform", "DomainError"]
