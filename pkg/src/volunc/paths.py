"""Time grids, simulated paths of the canonical process and pathwise integrals.

Volatility is always handled as a *variance*: a control value ``a`` means
``d<B>_t = a dt``, so the Gaussian increment over a cell is
``sqrt(a) * sqrt(dt) * xi``.
"""
import csv
import struct
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DomainError
from .kernels import oscillation_integral


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ArgumentError(f"horizon must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ArgumentError(f"grid needs at least one step, got N={self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self):
        return self.T / self.N

    @property
    def nodes(self):
        t = np.arange(self.N + 1) * self.T / self.N
        t[-1] = self.T
        return t

    def index_of(self, t, tol=1e-9):
        """Node index of time ``t``; raises if ``t`` is not a grid node."""
        k = round(t / self.dt)
        if not 0 <= k <= self.N or abs(k * self.dt - t) > tol * max(1.0, self.T):
            raise ArgumentError(f"time {t} is not a node of {self}")
        return int(k)

    def refine(self, factor=2):
        return TimeGrid(self.T, self.N * factor)


@dataclass(frozen=True)
class DiscretePath:
    grid: TimeGrid
    values: np.ndarray  # (N+1, d)
    qv: np.ndarray  # (N+1, d, d)

    @property
    def d(self):
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Paths sharing one grid, stored as arrays.

    ``B`` has shape ``(n_paths, N+1, d)``, ``qv`` ``(n_paths, N+1, d, d)`` and
    ``alpha`` the realised control values ``(n_paths, N, d, d)``.
    """

    grid: TimeGrid
    B: np.ndarray
    qv: np.ndarray
    alpha: np.ndarray = None
    label: str = ""
    rng_seed: int = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.B, self.qv, self.alpha):
            if a is not None:
                a.flags.writeable = False

    @property
    def n_paths(self):
        return self.B.shape[0]

    @property
    def d(self):
        return self.B.shape[2]

    @property
    def x(self):
        """``B`` as ``(n_paths, N+1)`` for the one-dimensional case."""
        if self.d != 1:
            raise ArgumentError("x is only defined for d=1 bundles")
        return self.B[:, :, 0]

    @property
    def qv1(self):
        if self.d != 1:
            raise ArgumentError("qv1 is only defined for d=1 bundles")
        return self.qv[:, :, 0, 0]

    @property
    def alpha1(self):
        return None if self.alpha is None else self.alpha[:, :, 0, 0]

    @property
    def paths(self):
        return [self[i] for i in range(self.n_paths)]

    def __len__(self):
        return self.n_paths

    def __getitem__(self, i):
        return DiscretePath(self.grid, self.B[i], self.qv[i])

    def __iter__(self):
        return (self[i] for i in range(self.n_paths))


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def _sqrt_spd(alpha):
    """Symmetric square root of a batch ``(P, d, d)`` of SPD matrices."""
    d = alpha.shape[-1]
    if d == 1:
        return np.sqrt(alpha)
    w, v = np.linalg.eigh(alpha)
    return (v * np.sqrt(w)[:, None, :]) @ np.swapaxes(v, -1, -2)


def simulate(control, grid, n_paths, seed, antithetic=False):
    """Simulate ``n_paths`` trajectories of ``B`` under the scenario law of ``control``.

    The control is evaluated cell by cell on the path prefix, so adaptedness
    holds by construction. Gaussian draws come from ``numpy``'s PCG64
    generator seeded with ``seed``; with ``antithetic=True`` the second half
    of the paths uses the negated draws of the first half.
    """
    if grid is None or getattr(grid, "N", 0) < 1:
        raise ArgumentError("empty time grid")
    if control.grid != grid:
        raise ArgumentError(f"control grid {control.grid} differs from {grid}")
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ArgumentError("n_paths must be positive")
    d, N, dt = control.d, grid.N, grid.dt
    rng = np.random.Generator(np.random.PCG64(seed))
    if antithetic:
        half = (n_paths + 1) // 2
        h = rng.standard_normal((half, N, d))
        xi = np.concatenate([h, -h])[:n_paths]
    else:
        xi = rng.standard_normal((n_paths, N, d))

    B = np.zeros((n_paths, N + 1, d))
    qv = np.zeros((n_paths, N + 1, d, d))
    alpha = np.empty((n_paths, N, d, d))
    sdt = np.sqrt(dt)
    for k in range(N):
        a = control.evaluate(k, B[:, : k + 1, 0] if d == 1 else B[:, : k + 1])
        alpha[:, k] = a
        root = _sqrt_spd(a)
        B[:, k + 1] = B[:, k] + np.einsum("pij,pj->pi", root, xi[:, k]) * sdt
        qv[:, k + 1] = qv[:, k] + a * dt
    return PathBundle(grid, B, qv, alpha, label=control.label, rng_seed=seed)


def check_spd(a):
    """Raise :class:`DomainError` unless every matrix in ``a`` is symmetric positive definite."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError("variance values must be finite")
    if a.shape[-1] == 1:
        if np.any(a <= 0):
            raise DomainError(f"variance must be positive, got min {a.min()}")
        return
    if not np.allclose(a, np.swapaxes(a, -1, -2)):
        raise DomainError("variance matrices must be symmetric")
    if np.any(np.linalg.eigvalsh(a) <= 0):
        raise DomainError("variance matrices must be positive definite")


# --------------------------------------------------------------------------
# pathwise integration
# --------------------------------------------------------------------------

def _as_values(B):
    """Integrator values as ``(P, N+1, d)`` plus a flag telling how to reshape back."""
    if isinstance(B, PathBundle):
        return B.B, "bundle"
    if isinstance(B, DiscretePath):
        return B.values[None], "path"
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        return B[None, :, None], "1d"
    if B.ndim == 2:
        return B[:, :, None], "2d"
    return B, "3d"


def pathwise_integral(Y, B, n):
    """Oscillation-time approximation ``I^n`` of ``int Y_- dB`` at every grid node.

    Anchor times are ``tau_0 = 0`` and ``tau_{i+1}`` = the first grid node after
    ``tau_i`` where ``|Y - Y_{tau_i}| >= 2**-n``; between anchors the integrand
    is frozen at its anchor value.

    ``Y`` holds one real per node (shape ``(N+1,)`` or ``(P, N+1)``), ``B`` is a
    :class:`DiscretePath`, a :class:`PathBundle` or an array on the same grid.
    The result has the shape of ``B``'s values (the trailing ``d`` axis is
    dropped when ``B`` was given as a plain 1-d/2-d array).
    """
    if int(n) != n or n < 1:
        raise ArgumentError(f"level must be an integer >= 1, got {n!r}")
    vals, how = _as_values(B)
    Yv = np.asarray(Y, dtype=float)
    if Yv.ndim == 1:
        Yv = Yv[None]
    if Yv.shape != vals.shape[:2]:
        raise ArgumentError(f"integrand shape {np.shape(Y)} does not match integrator grid {vals.shape[:2]}")
    thr = 2.0 ** (-int(n))
    out = np.stack([oscillation_integral(Yv, vals[:, :, j], thr) for j in range(vals.shape[2])], axis=-1)
    return _reshape_back(out, how)


def _reshape_back(out, how):
    if how == "1d":
        return out[0, :, 0]
    if how == "2d":
        return out[:, :, 0]
    if how == "path":
        return out[0]
    return out


Covariation = namedtuple("Covariation", ["bracket", "by_parts"])


def quadratic_covariation(Y, B):
    """Discrete bracket ``<Y, B>`` evaluated two ways.

    ``bracket`` is the running sum of ``dY dB``; ``by_parts`` is
    ``B Y - B_0 Y_0 - sum B_j dY_j - sum Y_j dB_j`` (left-point sums). The two
    agree up to rounding and are returned together for cross-checking.
    """
    vals, how = _as_values(B)
    Yv = np.asarray(Y, dtype=float)
    if Yv.ndim == 1:
        Yv = Yv[None]
    if Yv.shape != vals.shape[:2]:
        raise ArgumentError(f"integrand shape {np.shape(Y)} does not match integrator grid {vals.shape[:2]}")
    Yv = Yv[:, :, None]
    dY = np.diff(Yv, axis=1)
    dB = np.diff(vals, axis=1)
    zero = np.zeros_like(vals[:, :1])
    bracket = np.concatenate([zero, np.cumsum(dY * dB, axis=1)], axis=1)
    left = np.cumsum(vals[:, :-1] * dY + Yv[:, :-1] * dB, axis=1)
    by_parts = vals * Yv - vals[:, :1] * Yv[:, :1] - np.concatenate([zero, left], axis=1)
    return Covariation(_reshape_back(bracket, how), _reshape_back(by_parts, how))


# --------------------------------------------------------------------------
# import / export
# --------------------------------------------------------------------------

MAGIC = b"VGPB"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")


def save_csv(bundle, path):
    """One row per (path, node): ``path_id, t, B..., qv...``."""
    d = bundle.d
    if d == 1:
        header = ["path_id", "t", "B", "qv"]
    else:
        header = ["path_id", "t"] + [f"B{i}" for i in range(d)] + [
            f"qv{i}{j}" for i in range(d) for j in range(d)]
    t = bundle.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in range(bundle.n_paths):
            for k in range(bundle.grid.N + 1):
                w.writerow([p, repr(float(t[k]))]
                           + [repr(float(v)) for v in bundle.B[p, k]]
                           + [repr(float(v)) for v in bundle.qv[p, k].ravel()])


def load_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = np.array([[float(v) for v in row] for row in r])
    nB = sum(1 for h in header if h.startswith("B"))
    n_paths = int(rows[:, 0].max()) + 1
    n1 = rows.shape[0] // n_paths
    t = rows[:n1, 1]
    grid = TimeGrid(t[-1], n1 - 1)
    B = rows[:, 2:2 + nB].reshape(n_paths, n1, nB)
    qv = rows[:, 2 + nB:].reshape(n_paths, n1, nB, nB)
    return PathBundle(grid, B.copy(), qv.copy())


def save_binary(bundle, path):
    """Compact format: header ``VGPB | u16 version | u32 d | u32 N | u32 n_paths``,
    then little-endian f64 payload ``T, B (C order), qv (C order)``."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, bundle.d, bundle.grid.N, bundle.n_paths))
        fh.write(np.asarray([bundle.grid.T], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.B, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.qv, dtype="<f8").tobytes())


def load_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, d, N, n_paths = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArgumentError(f"not a path bundle file (magic {magic!r})")
    if version != VERSION:
        raise ArgumentError(f"unsupported bundle version {version}")
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    T = float(payload[0])
    nb = n_paths * (N + 1) * d
    B = payload[1:1 + nb].reshape(n_paths, N + 1, d)
    qv = payload[1 + nb:1 + nb + nb * d].reshape(n_paths, N + 1, d, d)
    return PathBundle(TimeGrid(T, N), B.astype(np.float64), qv.astype(np.float64))
