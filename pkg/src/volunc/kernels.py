"""Hot loops: the backward G-sweep and the oscillation-time integral.

Each kernel exists twice, a loop version compiled by numba and a vectorised
numpy version. Both perform the same floating-point operations in the same
order, so they agree to the last bit on the same inputs. ``sweep`` and
``oscillation_integral`` dispatch according to :mod:`volunc._accel`.
"""
import numpy as np

from . import _accel
from ._accel import njit


# --------------------------------------------------------------------------
# backward sweep  u_k = u_{k+1} + max(c_lo * D, c_hi * D),  D = second difference
# --------------------------------------------------------------------------

def sweep_numpy(u_T, c_lo, c_hi, extrapolate=True, store_all=True):
    """Explicit monotone sweep of ``-u_t = G(u_xx)`` backwards in time.

    Parameters
    ----------
    u_T : (nb, nx) array
        Terminal layers (``nb`` independent problems on a shared mesh).
    c_lo, c_hi : (n_steps, nx) arrays
        ``a * dt / (2 dx**2)`` for the lower/upper variance at each step and node.
        Row ``k`` maps layer ``k+1`` to layer ``k``.
    extrapolate : bool
        If True the two edge nodes are reset by linear extrapolation after each
        step. If False they keep stale values; the error then moves inward one
        node per step, which is what a recombining lattice needs.
    store_all : bool
        Keep every layer (``(n_steps+1, nb, nx)``) or only the first one.

    Returns
    -------
    out : array, ``(n_steps+1, nb, nx)`` or ``(1, nb, nx)``
    hi : uint8 array ``(n_steps, nb, nx)`` flagging where the upper variance is
        active (``D >= 0``), or an empty array when ``store_all`` is False.
    """
    u = np.array(u_T, dtype=np.float64, copy=True)
    n_steps = c_lo.shape[0]
    nb, nx = u.shape
    out = np.empty((n_steps + 1 if store_all else 1, nb, nx))
    hi = np.zeros((n_steps if store_all else 0, nb, nx), dtype=np.uint8)
    if store_all:
        out[n_steps] = u
    for k in range(n_steps - 1, -1, -1):
        d = u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]
        up = d >= 0.0
        inner = u[:, 1:-1] + np.where(up, c_hi[k, 1:-1] * d, c_lo[k, 1:-1] * d)
        u[:, 1:-1] = inner
        if extrapolate:
            u[:, 0] = 2.0 * u[:, 1] - u[:, 2]
            u[:, -1] = 2.0 * u[:, -2] - u[:, -3]
        if store_all:
            out[k] = u
            hi[k, :, 1:-1] = up
    if not store_all:
        out[0] = u
    return out, hi


@njit(cache=True)
def _sweep_loops(u_T, c_lo, c_hi, extrapolate, store_all):
    n_steps = c_lo.shape[0]
    nb, nx = u_T.shape
    u = u_T.copy()
    nxt = np.empty(nx)
    if store_all:
        out = np.empty((n_steps + 1, nb, nx))
        hi = np.zeros((n_steps, nb, nx), dtype=np.uint8)
    else:
        out = np.empty((1, nb, nx))
        hi = np.zeros((0, nb, nx), dtype=np.uint8)
    if store_all:
        out[n_steps] = u
    for k in range(n_steps - 1, -1, -1):
        for b in range(nb):
            for i in range(1, nx - 1):
                d = u[b, i + 1] - 2.0 * u[b, i] + u[b, i - 1]
                if d >= 0.0:
                    nxt[i] = u[b, i] + c_hi[k, i] * d
                    if store_all:
                        hi[k, b, i] = 1
                else:
                    nxt[i] = u[b, i] + c_lo[k, i] * d
            for i in range(1, nx - 1):
                u[b, i] = nxt[i]
            if extrapolate:
                u[b, 0] = 2.0 * u[b, 1] - u[b, 2]
                u[b, nx - 1] = 2.0 * u[b, nx - 2] - u[b, nx - 3]
        if store_all:
            out[k] = u
    if not store_all:
        out[0] = u
    return out, hi


def sweep_numba(u_T, c_lo, c_hi, extrapolate=True, store_all=True):
    return _sweep_loops(np.ascontiguousarray(u_T, dtype=np.float64),
                        np.ascontiguousarray(c_lo, dtype=np.float64),
                        np.ascontiguousarray(c_hi, dtype=np.float64),
                        bool(extrapolate), bool(store_all))


def sweep(u_T, c_lo, c_hi, extrapolate=True, store_all=True):
    u_T = np.atleast_2d(np.asarray(u_T, dtype=np.float64))
    if u_T.shape[1] < 3:
        raise ValueError("sweep needs at least 3 spatial nodes")
    fn = sweep_numba if _accel.USE_NUMBA else sweep_numpy
    return fn(u_T, c_lo, c_hi, extrapolate, store_all)


# --------------------------------------------------------------------------
# oscillation-time (Karandikar) integral of Y_- dB
# --------------------------------------------------------------------------

def oscillation_integral_numpy(Y, B, threshold):
    """Partial sums ``I^n`` on the grid for every path (rows of ``Y``/``B``).

    A new anchor time is taken at the first node where ``|Y - Y_anchor| >= threshold``.
    """
    P, n1 = Y.shape
    out = np.zeros((P, n1))
    ya = Y[:, 0].copy()
    ba = B[:, 0].copy()
    s = np.zeros(P)
    for k in range(1, n1):
        cur = ya * (B[:, k] - ba) + s
        out[:, k] = cur
        hit = np.abs(Y[:, k] - ya) >= threshold
        s = np.where(hit, cur, s)
        ya = np.where(hit, Y[:, k], ya)
        ba = np.where(hit, B[:, k], ba)
    return out


@njit(cache=True)
def _oscillation_loops(Y, B, threshold):
    P, n1 = Y.shape
    out = np.zeros((P, n1))
    for p in range(P):
        ya = Y[p, 0]
        ba = B[p, 0]
        s = 0.0
        for k in range(1, n1):
            cur = ya * (B[p, k] - ba) + s
            out[p, k] = cur
            if abs(Y[p, k] - ya) >= threshold:
                s = cur
                ya = Y[p, k]
                ba = B[p, k]
    return out


def oscillation_integral_numba(Y, B, threshold):
    return _oscillation_loops(np.ascontiguousarray(Y, dtype=np.float64),
                              np.ascontiguousarray(B, dtype=np.float64), float(threshold))


def oscillation_integral(Y, B, threshold):
    fn = oscillation_integral_numba if _accel.USE_NUMBA else oscillation_integral_numpy
    return fn(np.asarray(Y, dtype=np.float64), np.asarray(B, dtype=np.float64), threshold)
