"""Finite differences for the G-heat equation ``-u_t - G(u_xx) = 0, u(T, .) = f``.

``G(gamma) = (a_high * gamma^+ - a_low * gamma^-) / 2`` (variances, d = 1).
The default scheme is explicit and monotone under ``dt <= dx^2 / a_high``;
an implicit variant solves each step by policy iteration over the two
active variances.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ._mesh import MeshValues
from .claims import Claim
from .errors import ArgumentError, ConfigurationError, DomainError, ResourceError
from .kernels import sweep
from .paths import TimeGrid


@dataclass(frozen=True)
class GFunction:
    a_low: float
    a_high: float

    def __post_init__(self):
        if not 0 <= self.a_low <= self.a_high < math.inf:
            raise DomainError(f"need 0 <= a_low <= a_high < inf, got ({self.a_low}, {self.a_high})")

    def __call__(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        return 0.5 * (self.a_high * np.maximum(gamma, 0.0) - self.a_low * np.maximum(-gamma, 0.0))

    @property
    def degenerate(self):
        return self.a_low == self.a_high


@dataclass(frozen=True)
class PDEGrid:
    x_min: float
    x_max: float
    Nx: int
    grid: TimeGrid
    scheme: str = "explicit"

    def __post_init__(self):
        if not self.x_min < 0 < self.x_max:
            raise ConfigurationError(f"state interval must contain 0: [{self.x_min}, {self.x_max}]")
        if self.Nx < 5:
            raise ConfigurationError("need at least 5 spatial nodes")
        if self.scheme not in ("explicit", "implicit_splitting"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.Nx)

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.Nx - 1)

    @property
    def centered(self):
        return abs(self.x_min + self.x_max) < 1e-12 * self.x_max and self.Nx % 2 == 1

    def check_cfl(self, a_high):
        if self.scheme != "explicit":
            return
        lhs, rhs = self.grid.dt, self.dx ** 2 / a_high if a_high > 0 else math.inf
        if lhs > rhs * (1 + 1e-12):
            raise ConfigurationError(f"CFL violated: dt = {lhs:.6g} > dx^2 / a_high = {rhs:.6g}")

    @classmethod
    def default(cls, g, T, Nx=241, width=6.0, cfl=1.0 / 3.0, N=None, scheme="explicit"):
        """Symmetric mesh ``[-w, w]`` with ``w = width * sqrt(a_high T)`` and 0 on a node.

        ``N`` defaults to the smallest step count with ``a_high dt / dx^2 <= cfl``.
        """
        if Nx % 2 == 0:
            Nx += 1
        w = width * math.sqrt(max(g.a_high, 1e-12) * T)
        dx = 2 * w / (Nx - 1)
        if N is None:
            N = max(1, math.ceil(g.a_high * T / (cfl * dx * dx) - 1e-9))
        return cls(-w, w, Nx, TimeGrid(T, N), scheme)


class ValueSurface(MeshValues):
    """Solution ``u(t_k, x_i)`` of the G-heat equation."""

    def __init__(self, t, x, u, g, scheme, boundary, name=""):
        super().__init__(t, x, u)
        self.g = g
        self.scheme = scheme
        self.boundary = boundary
        self.name = name

    def to_csv(self, path):
        z = self.delta()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u", "Z"])
            for k in range(len(self.t)):
                for i in range(len(self.x)):
                    w.writerow([repr(float(self.t[k])), repr(float(self.x[i])),
                                repr(float(self.u[k, i])), repr(float(z[k, i]))])


def sample_terminal(f, x):
    """Terminal data on mesh nodes.

    Jumps are always cell-averaged. Kinks are taken at the node when they sit
    on one and cell-averaged otherwise.
    """
    payoff = f.payoff if isinstance(f, Claim) else f
    v = np.asarray(payoff(x), dtype=float) * np.ones_like(x)
    if not np.all(np.isfinite(v)):
        raise DomainError("terminal payoff is not finite on the mesh")
    if not isinstance(f, Claim):
        return v
    dx = x[1] - x[0]
    singular = list(f.jumps)
    singular += [k for k in f.kinks if np.min(np.abs(x - k)) > 1e-9 * dx]
    if singular:
        sub = (np.arange(64) + 0.5) / 64 - 0.5
        for s in singular:
            for i in np.nonzero(np.abs(x - s) <= 0.5 * dx + 1e-12)[0]:
                v[i] = float(np.mean(payoff(x[i] + sub * dx)))
    return v


def _coefficients(g, grid, n_steps):
    c = grid.grid.dt / (2.0 * grid.dx ** 2)
    lo = np.full((n_steps, grid.Nx), g.a_low * c)
    hi = np.full((n_steps, grid.Nx), g.a_high * c)
    return lo, hi


def solve_g_pde(g, f, grid):
    """Solve backwards from ``u(T, .) = f`` on ``grid`` and return the whole surface."""
    grid.check_cfl(g.a_high)
    x = grid.x
    uT = sample_terminal(f, x)
    N = grid.grid.N
    if grid.scheme == "explicit":
        lo, hi = _coefficients(g, grid, N)
        out, _ = sweep(uT[None], lo, hi, extrapolate=True, store_all=True)
        u = out[:, 0, :]
    else:
        u = _implicit(g, grid, uT)
    name = f.name if isinstance(f, Claim) else getattr(f, "__name__", "f")
    return ValueSurface(grid.grid.nodes, x, u, g, grid.scheme, "linear extrapolation", name)


def _implicit(g, grid, uT, max_iter=50):
    n, N = grid.Nx, grid.grid.N
    c = grid.grid.dt / (2.0 * grid.dx ** 2)
    u = np.empty((N + 1, n))
    u[N] = uT
    for k in range(N - 1, -1, -1):
        rhs = u[k + 1].copy()
        rhs[0] = rhs[-1] = 0.0
        d2 = np.zeros(n)
        d2[1:-1] = u[k + 1, 2:] - 2 * u[k + 1, 1:-1] + u[k + 1, :-2]
        policy = d2 >= 0
        for _ in range(max_iter):
            ci = np.where(policy, g.a_high, g.a_low) * c
            ab = np.zeros((5, n))
            # interior rows: -c u[i-1] + (1+2c) u[i] - c u[i+1]
            ab[2, 1:-1] = 1 + 2 * ci[1:-1]
            ab[1, 2:] = -ci[1:-1]
            ab[3, :-2] = -ci[1:-1]
            # edge rows: zero second difference
            ab[2, 0], ab[1, 1], ab[0, 2] = 1.0, -2.0, 1.0
            ab[2, -1], ab[3, -2], ab[4, -3] = 1.0, -2.0, 1.0
            sol = solve_banded((2, 2), ab, rhs)
            d2[1:-1] = sol[2:] - 2 * sol[1:-1] + sol[:-2]
            new = d2 >= 0
            new[0], new[-1] = policy[0], policy[-1]
            if np.array_equal(new, policy):
                break
            policy = new
        u[k] = sol
    return u


def extract_delta(surface):
    """Spatial derivative ``u_x`` (the hedge ratio of a Markovian claim)."""
    return surface.delta()


def _shift_rows(values, x0, dx, pts):
    """Row-wise linear interpolation/extrapolation: ``values (R, n)``, ``pts (R, m)``."""
    n = values.shape[1]
    pos = (pts - x0) / dx
    i = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    w = pos - i
    a = np.take_along_axis(values, i, axis=1)
    b = np.take_along_axis(values, i + 1, axis=1)
    return (1.0 - w) * a + w * b


def solve_multitime(g, claim, grid, budget=5e7):
    """``E_0[f(B_{t_1}, ..., B_{t_n})]`` by backward stepwise evaluation.

    On ``[t_{j-1}, t_j]`` the equation is solved in the increment ``y = B_{t_j} - B_{t_{j-1}}``
    with terminal data ``v_j(x_1, ..., x_{j-1}, x_{j-1} + y)``, one batch row per
    mesh value of the monitored prefix; the value at ``y = 0`` defines ``v_{j-1}``.
    """
    if claim.dates is None:
        return solve_g_pde(g, claim, grid).root
    n = len(claim.dates)
    if n > 4:
        raise ArgumentError("at most 4 monitoring dates are supported")
    if grid.scheme != "explicit":
        raise ConfigurationError("stepwise evaluation uses the explicit scheme")
    if not grid.centered:
        raise ConfigurationError("stepwise evaluation needs a symmetric mesh with a node at 0")
    grid.check_cfl(g.a_high)
    ks = [grid.grid.index_of(t) for t in claim.dates]
    if ks[-1] != grid.grid.N or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ArgumentError("monitoring dates must increase and end at the horizon")
    x = grid.x
    nx = grid.Nx
    if nx ** n > budget:
        raise ResourceError(f"{nx}^{n} mesh points exceed the budget {budget:g}; reduce Nx")
    i0 = nx // 2
    bounds = [0] + ks
    V = None  # rows: monitored prefix x_1..x_{j-1}; columns: x_j
    for j in range(n, 0, -1):
        m = bounds[j] - bounds[j - 1]
        R = nx ** (j - 1)
        idx = np.indices((nx,) * (j - 1)).reshape(j - 1, R).T if j > 1 else np.zeros((1, 0), int)
        last = x[idx[:, -1]] if j > 1 else np.zeros(1)
        pts = last[:, None] + x[None, :]
        if j == n:
            args = [np.broadcast_to(x[idx[:, c]][:, None], pts.shape) for c in range(j - 1)] + [pts]
            rows = np.asarray(claim.payoff(*args), dtype=float) * np.ones_like(pts)
            if not np.all(np.isfinite(rows)):
                raise DomainError("payoff is not finite on the mesh")
        else:
            rows = _shift_rows(V, x[0], grid.dx, pts)
        if m > 0:
            lo, hi = _coefficients(g, grid, m)
            out, _ = sweep(rows, lo, hi, extrapolate=True, store_all=False)
            rows = out[0]
        vals = rows[:, i0]
        V = vals.reshape(-1, nx) if j > 1 else vals
    return float(V[0])
