"""Superhedging checks, the conservative price and replicability classification."""
import csv
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import dp as _dp
from .decompose import build_decomposition, check_symmetry, claim_norm
from .errors import ArgumentError, ConfigurationError
from .paths import simulate


@dataclass
class HedgeReport:
    x: float
    source: str
    band: float
    mean_band: float
    per_control: dict
    price: float = None
    note: str = ""
    shortfalls: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self):
        return all(v["pass"] for v in self.per_control.values())

    def to_dict(self):
        return {"x": self.x, "source": self.source, "band": self.band, "mean_band": self.mean_band,
                "price": self.price, "per_control": self.per_control, "note": self.note, "pass": self.passed}

    def histogram_csv(self, path, bins=50):
        """Shortfall histograms, one block per control."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["control", "bin_left", "bin_right", "count"])
            for lab, s in self.shortfalls.items():
                cnt, edges = np.histogram(s, bins=bins)
                for c, a, b in zip(cnt, edges[:-1], edges[1:]):
                    w.writerow([lab, repr(float(a)), repr(float(b)), int(c)])


def superhedge_verify(claim, sset, dec, x, n_paths=20000, seed=None, C=2.0, tail=1e-3, n_se=3.0,
                      controls=None, min_bin=50):
    """Run ``x + sum Z dB`` against ``X`` on fresh paths of every control.

    A control passes when at least ``1 - tail`` of the paths end above
    ``-band`` with ``band = C (dx + sqrt(dt)) ||X||``, and the mean shortfall
    is above ``-(n_se SE + (dx^2 + dt) ||X||)``. The second condition catches
    a capital deficit hidden inside the wide pathwise band.
    """
    controls = dict(controls if controls is not None else dec.controls)
    if not controls:
        raise ConfigurationError("no controls to simulate; build the decomposition with build_decomposition")
    grid = dec.grid
    used = {b.rng_seed for b in dec.bundles.values()}
    if seed is None:
        seed = max(s for s in used if s is not None) + 1000 if any(s is not None for s in used) else 12345
    norm = claim_norm(dec)
    h = dec.values.dx
    band = C * (h + math.sqrt(grid.dt)) * norm
    mean_band = (h * h + grid.dt) * norm
    per, falls = {}, {}
    for i, (lab, c) in enumerate(controls.items()):
        s_i = seed + i
        if s_i in used:
            raise ArgumentError(f"seed {s_i} was used for extraction; hedging must run out of sample")
        b = simulate(c, grid, n_paths, s_i)
        z = dec.strategy(b)
        gains = np.zeros((n_paths, grid.N + 1))
        np.cumsum(z * np.diff(b.x, axis=1), axis=1, out=gains[:, 1:])
        short = x + gains[:, -1] - claim.evaluate(b)
        m = float(short.mean())
        se = float(short.std(ddof=1) / math.sqrt(n_paths))
        frac = float(np.mean(short >= -band))
        worst, nb = _dp.check_supermartingale(dec.values, b, n_se, min_bin, series=gains)
        per[lab] = {"mean": m, "se": se, "min": float(short.min()), "q001": float(np.quantile(short, 1e-3)),
                    "fraction_within_band": frac, "admissibility_worst": worst, "admissibility_bins": nb,
                    "pass": frac >= 1 - tail and m >= -(n_se * se + mean_band)}
        falls[lab] = short
    price = dec.values.root
    note = ""
    if x < price - mean_band:
        note = f"capital {x:.6g} is below the conservative price {price:.6g}; failure is expected"
    return HedgeReport(float(x), dec.source, band, mean_band, per, price, note, falls)


def conservative_price(claim, sset, config=None):
    """``sup_P E^P[X]`` as the lattice root value.

    The root of the grid is deterministic, so the prices conditioned on the
    initial sigma-field and on its left limit coincide here.
    """
    return _dp.dp_value(claim, sset, config or _dp.LatticeConfig()).root


@dataclass
class ReplicabilityReport:
    replicable: bool
    x: float
    symmetric: bool
    symmetry_gap: float
    expectations_agree: bool
    k_zero: bool
    estimates: dict
    witnesses: tuple
    k_means: dict

    @property
    def consistent(self):
        return self.symmetric == self.expectations_agree == self.k_zero

    def to_dict(self):
        return {"replicable": self.replicable, "x": self.x if self.replicable else None,
                "symmetric": self.symmetric, "symmetry_gap": self.symmetry_gap,
                "expectations_agree": self.expectations_agree, "K_zero": self.k_zero,
                "consistent": self.consistent,
                "estimates": {k: {"mean": m, "se": s} for k, (m, s) in self.estimates.items()},
                "witnesses": list(self.witnesses) if self.witnesses else None,
                "K_T_means": {k: {"mean": m, "se": s} for k, (m, s) in self.k_means.items()}}


def classify_replicable(claim, sset, config=None, pool=None, n_paths=20000, seed=0, n_se=3.0, rel_band=0.05):
    """Replicable iff ``E(X)`` is symmetric and ``E^P[X]`` is the same for every control.

    The pool is extended by the argmax controls of ``X`` and ``-X``. A third
    indicator (mean of ``K_T`` zero for every control) is computed from the
    decomposition and compared with the other two.
    """
    config = config or _dp.LatticeConfig()
    grid = config.grid
    sym = check_symmetry(claim, sset, config)
    up = _dp.dp_value(claim, sset, config)
    down = _dp.dp_value(-claim, sset, config)
    ctrls = list(pool if pool is not None else sset.pool)
    ctrls += [_dp.argmax_control(up, grid, "argmax"), _dp.argmax_control(down, grid, "argmax_neg")]
    labels = [c.label for c in ctrls]
    if len(set(labels)) != len(labels):
        raise ArgumentError(f"control labels must be unique: {labels}")

    vals = {c.label: claim.evaluate(simulate(c, grid, n_paths, seed)) for c in ctrls}
    est = {k: (float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_paths))) for k, v in vals.items()}
    agree, wit, spread = True, None, -1.0
    for a, b in combinations(labels, 2):
        d = vals[a] - vals[b]
        se = float(d.std(ddof=1) / math.sqrt(n_paths))
        gap = abs(float(d.mean()))
        if gap > n_se * se + 1e-12 * max(1.0, abs(est[a][0])):
            agree = False
        if gap > spread:
            spread, wit = gap, (a, b)
    lo, hi = sorted(wit, key=lambda k: est[k][0]) if wit else (None, None)

    dec = build_decomposition(claim, sset.with_pool(ctrls[:-1]), config, n_paths, seed + 7919,
                              values=up, include_argmax=False)
    norm = claim_norm(dec)
    kmeans = {}
    kzero = True
    for lab, K in dec.K.items():
        m, s = float(K[:, -1].mean()), float(K[:, -1].std(ddof=1) / math.sqrt(n_paths))
        kmeans[lab] = (m, s)
        if abs(m) > n_se * s + rel_band * norm:
            kzero = False
    replicable = sym.symmetric and agree
    witnesses = None if replicable else (lo, est[lo][0], hi, est[hi][0], sym.root_gap)
    return ReplicabilityReport(replicable, up.root, sym.symmetric, sym.root_gap, agree, kzero, est,
                               witnesses, kmeans)
