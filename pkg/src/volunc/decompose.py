"""Split the value process into ``E_0 + int Z dB - K`` under each scenario.

``K`` is *defined* as the discrete residual

    K_{k+1} = K_k + E_k - E_{k+1} + Z_k (B_{k+1} - B_k),   K_0 = 0,

so the budget identity is exact and the checks are about ``K``: that its
predictable part does not decrease, and that it vanishes in mean under the
worst-case scenario.
"""
import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dp as _dp
from .errors import ArgumentError, ConfigurationError, DomainError
from .gpde import ValueSurface, solve_g_pde
from .paths import simulate
from .scenarios import deterministic_time, hitting_time

SOURCES = ("markovian_delta", "bracket", "regression")
MIN_AHAT = 1e-10


# --------------------------------------------------------------------------
# Z estimators
# --------------------------------------------------------------------------

def bracket_head(Es, xs, n=2):
    """Cross-sectional slopes ``sum dE dB / sum dB^2`` at steps ``0..n-1``.

    These steps have fewer than two trailing increments, so a per-path
    quotient would be dominated by the drift over a single ``dB``. The slope
    is constant across paths (exact at step 0, where the sigma-field is trivial).
    """
    num = np.zeros(n)
    den = np.zeros(n)
    for E, x in zip(Es, xs):
        dE = np.diff(E[:, :n + 1], axis=1)
        dB = np.diff(x[:, :n + 1], axis=1)
        num += np.sum(dE * dB, axis=0)
        den += np.sum(dB * dB, axis=0)
    if np.any(den <= 0):
        raise DomainError("no variance in the first increments; Z is not identifiable")
    return num / den


def bracket_z(E, x, dt, window=3, head=None):
    """``Z_k = sum dE dB / sum dB^2`` over the trailing ``window`` increments.

    Steps 0 and 1 use the constants ``head`` (default: :func:`bracket_head`
    of this bundle).
    """
    dE = np.diff(E, axis=1)
    dB = np.diff(x, axis=1)
    P, N = dB.shape
    n_head = min(2, N)
    if head is None:
        head = bracket_head([E], [x], n_head)
    num = np.cumsum(dE * dB, axis=1)
    den = np.cumsum(dB * dB, axis=1)
    z = np.empty((P, N))
    z[:, :n_head] = head[:n_head]
    for k in range(n_head, N):
        lo, hi = max(0, k - window), k
        n = num[:, hi - 1] - (num[:, lo - 1] if lo > 0 else 0.0)
        d = den[:, hi - 1] - (den[:, lo - 1] if lo > 0 else 0.0)
        ahat = d / ((hi - lo) * dt)
        if np.any(ahat < MIN_AHAT):
            raise DomainError(f"realised variance below {MIN_AHAT:g} at step {k}; Z is not identifiable")
        z[:, k] = n / d
    return z


class RegressionZ:
    """Per-step least squares of ``dE`` on ``dB`` within quantile bins of ``B_{t_k}``.

    Fitted once on the extraction paths; :meth:`__call__` applies the fitted
    slopes to any bundle.
    """

    def __init__(self, edges, slopes):
        self.edges = edges
        self.slopes = slopes

    @classmethod
    def fit(cls, xs, Es, min_bin=50, max_bins=200):
        x = np.concatenate(xs)
        E = np.concatenate(Es)
        P, N1 = x.shape
        n_bins = int(min(max_bins, max(1, P // (2 * min_bin))))
        if P < min_bin:
            return None
        dB = np.diff(x, axis=1)
        dE = np.diff(E, axis=1)
        edges, slopes = [], []
        for k in range(N1 - 1):
            e = np.unique(np.quantile(x[:, k], np.linspace(0, 1, n_bins + 1)[1:-1]))
            b = np.searchsorted(e, x[:, k], side="right")
            cnt = np.bincount(b, minlength=len(e) + 1).astype(float)
            sx = np.bincount(b, dB[:, k], len(e) + 1)
            sy = np.bincount(b, dE[:, k], len(e) + 1)
            sxx = np.bincount(b, dB[:, k] ** 2, len(e) + 1)
            sxy = np.bincount(b, dB[:, k] * dE[:, k], len(e) + 1)
            with np.errstate(invalid="ignore", divide="ignore"):
                vxx = sxx - sx * sx / cnt
                cxy = sxy - sx * sy / cnt
            used = cnt > 0
            if np.any(cnt[used] < min_bin) or np.any(~(vxx[used] > 1e-14 * sxx[used])):
                return None
            # empty bins (ties in B_{t_k}) borrow the slope of the nearest used bin
            pos = np.nonzero(used)[0]
            near = pos[np.clip(np.searchsorted(pos, np.arange(len(cnt))), 0, len(pos) - 1)]
            edges.append(e)
            slopes.append((cxy / np.where(used, vxx, 1.0))[near])
        return cls(edges, slopes)

    def __call__(self, x):
        P, N1 = x.shape
        z = np.empty((P, N1 - 1))
        for k in range(N1 - 1):
            z[:, k] = self.slopes[k][np.searchsorted(self.edges[k], x[:, k], side="right")]
        return z


class Strategy:
    """A rule producing ``Z`` on any one-dimensional bundle (re-applicable to fresh paths)."""

    def __init__(self, source, values, window=3, regression=None, head=None):
        self.source = source
        self.values = values
        self.window = window
        self.regression = regression
        self.head = head

    def __call__(self, bundle):
        if self.source == "markovian_delta":
            return self.values.delta_along(bundle)
        if self.source == "regression" and self.regression is not None:
            return self.regression(bundle.x)
        E = self.values.along(bundle)
        return bracket_z(E, bundle.x, bundle.grid.dt, self.window, self.head)


# --------------------------------------------------------------------------
# decomposition
# --------------------------------------------------------------------------

@dataclass
class Decomposition:
    """Per-control arrays keyed by control label: ``Z (P, N)``, ``K``, ``E_path``,
    ``compensator`` ``(P, N+1)``."""

    Z: dict
    K: dict
    E_path: dict
    compensator: dict
    source: str
    bundles: dict
    claim: object
    sset: object
    values: object
    strategy: Strategy
    terminal_gap: dict = field(default_factory=dict)
    payoff: dict = field(default_factory=dict)
    controls: dict = field(default_factory=dict)

    @property
    def labels(self):
        return list(self.K)

    @property
    def grid(self):
        return next(iter(self.bundles.values())).grid

    def to_csv(self, path, max_paths=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["control", "path_id", "t", "E", "Z", "K"])
            t = self.grid.nodes
            for lab in self.labels:
                E, Z, K = self.E_path[lab], self.Z[lab], self.K[lab]
                for p in range(E.shape[0] if max_paths is None else min(max_paths, E.shape[0])):
                    for k in range(len(t)):
                        z = Z[p, k] if k < Z.shape[1] else float("nan")
                        w.writerow([lab, p, repr(float(t[k])), repr(float(E[p, k])), repr(float(z)),
                                    repr(float(K[p, k]))])


def _as_dict(bundles):
    if isinstance(bundles, dict):
        return dict(bundles)
    if not isinstance(bundles, (list, tuple)):
        bundles = [bundles]
    out = {}
    for b in bundles:
        if b.label in out:
            raise ArgumentError(f"duplicate bundle label {b.label!r}")
        out[b.label] = b
    return out


def extract_decomposition(claim, sset, bundles, values, source="markovian_delta", window=3, min_bin=50):
    """Compute ``E``, ``Z`` and the residual ``K`` along every bundle.

    ``values`` is a :class:`~volunc.dp.ValueLattice` or
    :class:`~volunc.gpde.ValueSurface` of the (terminal) claim.
    """
    if source not in SOURCES:
        raise ArgumentError(f"unknown Z source {source!r}; choose from {SOURCES}")
    if not claim.is_terminal():
        raise ArgumentError("decomposition along paths needs a claim on B_T (Markov value process)")
    bundles = _as_dict(bundles)
    if not bundles:
        raise ArgumentError("no bundles given")
    E_path, payoff, gap = {}, {}, {}
    for lab, b in bundles.items():
        if b.d != 1:
            raise ArgumentError("decomposition is implemented for d = 1")
        E = values.along(b)
        X = claim.evaluate(b)
        gap[lab] = float(np.max(np.abs(E[:, -1] - X)))
        E[:, -1] = X
        E_path[lab], payoff[lab] = E, X
    reg = None
    if source == "regression":
        reg = RegressionZ.fit([b.x for b in bundles.values()], [E_path[k] for k in bundles], min_bin)
        if reg is None:
            warnings.warn("regression for Z is rank deficient (too few paths per bin); using the bracket estimator",
                          RuntimeWarning, stacklevel=2)
    head = None
    if source == "bracket" or (source == "regression" and reg is None):
        N = next(iter(bundles.values())).grid.N
        head = bracket_head([E_path[k] for k in bundles], [b.x for b in bundles.values()], min(2, N))
    strat = Strategy(source, values, window, reg, head)
    Z, K, comp = {}, {}, {}
    for lab, b in bundles.items():
        z = strat(b)
        E = E_path[lab]
        dB = np.diff(b.x, axis=1)
        k = np.zeros_like(E)
        np.cumsum(E[:, :-1] - E[:, 1:] + z * dB, axis=1, out=k[:, 1:])
        Z[lab], K[lab] = z, k
        comp[lab] = values.compensator_along(b)
    return Decomposition(Z, K, E_path, comp, source, bundles, claim, sset, values, strat, gap, payoff)


def build_decomposition(claim, sset, config=None, n_paths=20000, seed=0, source="markovian_delta",
                        values=None, include_argmax=True, window=3):
    """Solve the lattice, synthesize the argmax control, simulate the pool and extract."""
    config = config or _dp.LatticeConfig()
    lattice = values if values is not None else _dp.dp_value(claim, sset, config)
    grid = config.grid
    pool = list(sset.pool)
    if include_argmax:
        pool.append(_dp.argmax_control(lattice, grid))
    bundles, controls = {}, {}
    for i, c in enumerate(pool):
        lab = c.label or f"control{i}"
        bundles[lab] = simulate(c, grid, n_paths, seed + i)
        controls[lab] = c
    dec = extract_decomposition(claim, sset, bundles, lattice, source, window)
    dec.controls = controls
    return dec


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------

def claim_norm(dec):
    """``||X||``: the largest Monte Carlo estimate of ``E^P|X|`` over the pool (at least 1e-12)."""
    return max(1e-12, max(float(np.mean(np.abs(x))) for x in dec.payoff.values()))


def _mean_se(v):
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v)))


def price(claim, values, sset):
    """Root value of ``claim`` on the same discretisation as ``values``."""
    if isinstance(values, _dp.ValueLattice):
        return _dp.dp_value(claim, sset, values.config).root
    if isinstance(values, ValueSurface):
        from .gpde import PDEGrid
        from .paths import TimeGrid

        x = values.x
        grid = PDEGrid(float(x[0]), float(x[-1]), len(x), TimeGrid(float(values.t[-1]), values.N), values.scheme)
        return solve_g_pde(values.g, claim, grid).root
    raise ArgumentError("values must be a lattice or a PDE surface")


@dataclass
class BSDEReport:
    residuals: dict  # label -> (mean K_T, se)
    min_label: str
    terminal_gap: float
    identity_gap: float
    compensator_min: float
    monotone_tol: float
    raw_violation_fraction: float
    minimality: list
    supermartingale: dict
    class_d: dict
    norm: float
    band: float
    checks: dict

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        return {"residuals": {k: {"mean": m, "se": s} for k, (m, s) in self.residuals.items()},
                "min_control": self.min_label, "terminal_gap": self.terminal_gap,
                "identity_gap": self.identity_gap, "compensator_min_increment": self.compensator_min,
                "monotone_tolerance": self.monotone_tol, "raw_K_violation_fraction": self.raw_violation_fraction,
                "minimality": self.minimality, "supermartingale": self.supermartingale,
                "class_d": self.class_d, "norm_X": self.norm, "band": self.band,
                "checks": self.checks, "pass": self.passed}


def verify_2bsde(dec, claim=None, pool=None, n_se=3.0, rel_band=0.05, min_bin=50):
    """Check the decomposition: terminal identity, monotone ``K``, minimality, class (D).

    ``pool`` optionally restricts the controls used (labels); the argmax
    control must be among them.
    """
    claim = claim or dec.claim
    labels = list(pool) if pool is not None else dec.labels
    if "argmax" not in labels:
        raise ConfigurationError("the pool must contain the synthesized argmax control (label 'argmax')")
    missing = [l for l in labels if l not in dec.K]
    if missing:
        raise ArgumentError(f"no decomposition for controls {missing}")
    grid = dec.grid
    N, dt = grid.N, grid.dt
    norm = claim_norm(dec)
    band = rel_band * norm
    tol_mono = 10 * dt * norm
    scale = max(1.0, max(float(np.max(np.abs(dec.E_path[l]))) for l in labels))

    # (a) terminal identity and budget identity
    term = max(float(np.max(np.abs(dec.E_path[l][:, -1] - dec.payoff[l]))) for l in labels)
    ident = 0.0
    for l in labels:
        b = dec.bundles[l]
        gains = np.zeros_like(dec.K[l])
        np.cumsum(dec.Z[l] * np.diff(b.x, axis=1), axis=1, out=gains[:, 1:])
        rebuilt = dec.E_path[l][:, :1] + gains - dec.K[l]
        ident = max(ident, float(np.max(np.abs(rebuilt - dec.E_path[l]))))

    # (b) monotone predictable part; raw residual reported only
    cmin = min(float(np.min(np.diff(dec.compensator[l], axis=1))) for l in labels)
    raw = np.concatenate([(np.diff(dec.K[l], axis=1) < -tol_mono).ravel() for l in labels])

    # (c) minimality at four dates
    residuals = {l: _mean_se(dec.K[l][:, -1]) for l in labels}
    minimality = []
    for q in range(4):
        k = q * N // 4
        est = {l: _mean_se(dec.K[l][:, -1] - dec.K[l][:, k]) for l in labels}
        best = min(est, key=lambda l: est[l][0])
        m, s = est[best]
        minimality.append({"t": float(grid.nodes[k]), "control": best, "mean": m, "se": s,
                           "band": band, "pass": m <= n_se * s + band})

    # supermartingale of E under each control (diagnostic)
    sup = {}
    for l in labels:
        worst, nb = _dp.check_supermartingale(dec.values, dec.bundles[l], n_se, min_bin, series=dec.E_path[l],
                                                interp_slack=True)
        sup[l] = {"worst": worst, "n_bins": nb, "pass": worst <= band / max(N, 1)}

    # (d) class (D) proxy
    taus = [deterministic_time(grid, q * N // 4) for q in range(1, 5)]
    taus.append(hitting_time(grid, math.sqrt(dec.sset.a_max * grid.T), absolute=True))
    class_d = {}
    for p in (1.0, 1.5):
        bound = price(claim.abs_pow(p), dec.values, dec.sset)
        worst, worst_se = -math.inf, 0.0
        for l in labels:
            E = dec.E_path[l]
            x = dec.bundles[l].x
            for tau in taus:
                s = tau.evaluate(x)
                m, se = _mean_se(np.abs(E[np.arange(len(s)), s]) ** p)
                if m > worst:
                    worst, worst_se = m, se
        class_d[str(p)] = {"max_estimate": worst, "se": worst_se, "bound": bound,
                           "pass": worst <= bound + n_se * worst_se + rel_band * max(abs(bound), 1e-12)}

    checks = {
        "terminal_identity": term <= 1e-12 * scale,
        "budget_identity": ident <= 1e-9 * scale,
        "K_monotone": cmin >= -tol_mono,
        "K_zero_at_start": all(float(np.max(np.abs(dec.K[l][:, 0]))) == 0.0 for l in labels),
        "minimality": all(r["pass"] for r in minimality),
        "class_d": all(v["pass"] for v in class_d.values()),
    }
    best = min(residuals, key=lambda l: residuals[l][0])
    return BSDEReport(residuals, best, term, ident, cmin, tol_mono, float(raw.mean()), minimality, sup,
                      class_d, norm, band, checks)


# --------------------------------------------------------------------------
# symmetry
# --------------------------------------------------------------------------

@dataclass
class SymmetryReport:
    symmetric: bool
    max_gap: float
    root_gap: float
    tol: float
    k_max: dict = None

    @property
    def status(self):
        return "symmetric" if self.symmetric else "asymmetric"

    def to_dict(self):
        return {"status": self.status, "max_nodewise_gap": self.max_gap, "root_gap": self.root_gap,
                "tolerance": self.tol, "K_max_abs": self.k_max}


def check_symmetry(claim, sset, config=None, dec=None, tol=1e-10):
    """Compare ``E_t(X)`` with ``-E_t(-X)`` node by node on the lattice."""
    config = config or _dp.LatticeConfig()
    up = _dp.dp_value(claim, sset, config)
    down = _dp.dp_value(-claim, sset, config)
    gap = np.abs(up.u + down.u)
    sym = bool(np.max(gap) <= tol)
    kmax = None
    if dec is not None:
        kmax = {l: float(np.max(np.abs(k))) for l, k in dec.K.items()}
        if sym:
            ktol = 10 * config.grid.dt * max(1.0, claim_norm(dec))
            bad = {l: v for l, v in kmax.items() if v > ktol}
            if bad:
                raise AssertionError(f"symmetric claim but K is not zero: {bad}")
    return SymmetryReport(sym, float(np.max(gap)), up.root + down.root, tol, kmax)


def z_agreement(dec_a, dec_b):
    """RMS difference of two ``Z`` estimates on shared bundles, and ``C = rms / (dx + sqrt(dt))``."""
    labels = [l for l in dec_a.labels if l in dec_b.Z]
    if not labels:
        raise ArgumentError("decompositions share no control")
    d = np.concatenate([(dec_a.Z[l] - dec_b.Z[l]).ravel() for l in labels])
    rms = float(np.sqrt(np.mean(d * d)))
    h = dec_a.values.dx + math.sqrt(dec_a.grid.dt)
    return rms, rms / h
