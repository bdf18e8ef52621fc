"""Values of a backward sweep stored on a uniform (time x state) mesh.

Shared by the PDE surface and the recombining lattice: both store ``u[k, i]``
at ``(t_k, x_i)`` with uniform ``x`` and can be read along simulated paths.
"""
import numpy as np

from .errors import ArgumentError


def interp_uniform(x0, dx, values, pts):
    """Linear interpolation on a uniform mesh, linear extrapolation outside it."""
    pts = np.asarray(pts, dtype=float)
    n = values.shape[-1]
    pos = (pts - x0) / dx
    i = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    w = pos - i
    return (1.0 - w) * values[..., i] + w * values[..., i + 1]


class MeshValues:
    """Base class: ``t`` (N+1,), ``x`` (nx,), ``u`` (N+1, nx)."""

    def __init__(self, t, x, u):
        self.t = np.asarray(t, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.dx = float(self.x[1] - self.x[0])
        self.dt = float(self.t[1] - self.t[0])

    @property
    def N(self):
        return len(self.t) - 1

    def value_at(self, k, x):
        return interp_uniform(self.x[0], self.dx, self.u[k], x)

    @property
    def root(self):
        """Value at ``(t_0, x = 0)``."""
        return float(self.value_at(0, 0.0))

    def delta(self):
        """``u_x`` by central differences, one-sided at the two edges."""
        return np.gradient(self.u, self.dx, axis=1)

    def second_diff(self):
        """Undivided second differences ``u[i+1] - 2u[i] + u[i-1]`` (zero at the edges)."""
        d = np.zeros_like(self.u)
        d[:, 1:-1] = self.u[:, 2:] - 2.0 * self.u[:, 1:-1] + self.u[:, :-2]
        return d

    def interp_error_along(self, bundle):
        """Bound on the linear interpolation error along each path: ``(n_paths, N+1)``.

        On the cell ``[x_i, x_{i+1}]`` at weight ``w`` the bound is
        ``w (1 - w) max(|D_i|, |D_{i+1}|) / 2`` with ``D`` the undivided second
        difference. It is attained by quadratics.
        """
        self._check_grid(bundle)
        d = np.abs(self.second_diff())
        d[:, 0], d[:, -1] = d[:, 1], d[:, -2]
        n = len(self.x)
        pos = (bundle.x - self.x[0]) / self.dx
        i = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
        w = np.clip(pos - i, 0.0, 1.0)
        k = np.arange(self.N + 1)[None, :]
        return 0.5 * w * (1.0 - w) * np.maximum(d[k, i], d[k, i + 1])

    def _check_grid(self, bundle):
        if bundle.grid.N != self.N or abs(bundle.grid.T - self.t[-1]) > 1e-12:
            raise ArgumentError(f"paths on {bundle.grid} do not match the value mesh (N={self.N}, T={self.t[-1]})")

    def along(self, bundle):
        """Values read along each path: ``(n_paths, N+1)``."""
        self._check_grid(bundle)
        x = bundle.x
        return np.stack([self.value_at(k, x[:, k]) for k in range(self.N + 1)], axis=1)

    def delta_along(self, bundle):
        """``u_x`` read along each path at nodes ``0..N-1``: ``(n_paths, N)``."""
        self._check_grid(bundle)
        x = bundle.x
        z = self.delta()
        return np.stack([interp_uniform(self.x[0], self.dx, z[k], x[:, k]) for k in range(self.N)], axis=1)

    def compensator_along(self, bundle):
        """Predictable decrease of the values under each path's realised variance.

        Increment on cell ``k``: ``u_k(B_k) - E^alpha[u_{k+1}(B_{k+1}) | B_k]`` with the
        one-step expectation taken by the explicit three-point stencil
        ``u_{k+1} + alpha dt / (2 dx^2) * second difference``. For a scheme that
        takes the maximum over ``[a_low, a_high]`` this is nonnegative whenever
        ``alpha`` lies in the bounds. Returns the running sum ``(n_paths, N+1)``.
        """
        self._check_grid(bundle)
        x = bundle.x
        alpha = bundle.alpha1
        d2 = self.second_diff()
        c = self.dt / (2.0 * self.dx ** 2)
        inc = np.empty((bundle.n_paths, self.N))
        for k in range(self.N):
            drop = interp_uniform(self.x[0], self.dx, self.u[k] - self.u[k + 1], x[:, k])
            curv = interp_uniform(self.x[0], self.dx, d2[k + 1], x[:, k])
            inc[:, k] = drop - alpha[:, k] * c * curv
        out = np.zeros((bundle.n_paths, self.N + 1))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out
