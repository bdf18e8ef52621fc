"""Scenario sets of volatility controls, pasting, and the checks built on them.

A scenario is a :class:`VolControl`: an adapted rule that, at grid node
``k``, maps the path prefix ``B_{t_0..t_k}`` to the variance used on the
cell ``(t_k, t_{k+1}]``. Rules only ever receive the prefix, so a rule
cannot look ahead.

For ``d = 1`` rules receive the prefix as an ``(n_paths, k+1)`` array and may
return a scalar or one value per path; for ``d > 1`` they receive
``(n_paths, k+1, d)`` and return ``(d, d)`` or ``(n_paths, d, d)``.
"""
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, ConfigurationError, DomainError
from .paths import TimeGrid, check_spd, simulate


@dataclass(frozen=True, eq=False)
class VolControl:
    grid: TimeGrid
    rule: Callable
    label: str = ""
    d: int = 1
    spec: Optional[dict] = field(default=None, repr=False)
    constant_value: Optional[float] = field(default=None, repr=False)

    def evaluate(self, k, prefix):
        """Variance on cell ``k`` for each path, as ``(n_paths, d, d)``."""
        prefix = np.asarray(prefix)
        P = prefix.shape[0]
        a = np.asarray(self.rule(k, prefix), dtype=float)
        d = self.d
        if d == 1 and not (a.ndim == 3 and a.shape == (P, 1, 1)):
            a = np.broadcast_to(a.reshape(-1) if a.ndim else a, (P,)).reshape(P, 1, 1)
        elif d > 1:
            a = np.broadcast_to(a, (P, d, d))
        check_spd(a)
        return np.array(a)

    def values_on(self, x):
        """Control values along given paths ``x`` (``(P, N+1)`` or ``(P, N+1, d)``) -> ``(P, N, d, d)``."""
        x = np.asarray(x)
        if x.shape[1] != self.grid.N + 1:
            raise ArgumentError("paths do not live on the control grid")
        return np.stack([self.evaluate(k, x[:, : k + 1]) for k in range(self.grid.N)], axis=1)

    def to_dict(self):
        if self.spec is None:
            raise ArgumentError(f"control {self.label!r} has no registry spec")
        return dict(self.spec)


# --------------------------------------------------------------------------
# control registry
# --------------------------------------------------------------------------

def constant(grid, a, label=None):
    a_arr = np.asarray(a, dtype=float)
    d = 1 if a_arr.ndim == 0 else a_arr.shape[0]
    check_spd(a_arr.reshape(1, d, d))
    spec = {"rule": "constant", "a": a_arr.tolist()}
    value = float(a_arr) if d == 1 else None
    return VolControl(grid, lambda k, prefix: a_arr, label or f"const({a_arr.tolist()})", d, spec, value)


def threshold_switch(grid, level, below, above, absolute=False, t_start=0.0, before=None, label=None):
    """``above`` if ``B_{t_k} > level`` (or ``|B_{t_k}| > level``) else ``below``;
    before ``t_start`` the value ``before`` (default ``below``) is used."""
    before = below if before is None else before
    times = grid.nodes

    def rule(k, prefix):
        x = prefix[:, k]
        s = np.abs(x) if absolute else x
        a = np.where(s > level, above, below)
        if times[k] < t_start - 1e-12:
            a = np.full_like(a, before, dtype=float)
        return a

    spec = {"rule": "threshold_switch", "level": level, "below": below, "above": above,
            "absolute": absolute, "t_start": t_start, "before": before}
    return VolControl(grid, rule, label or f"switch({level},{below},{above})", 1, spec)


def time_switch(grid, t_switch, before, after, label=None):
    times = grid.nodes

    def rule(k, prefix):
        return before if times[k] < t_switch - 1e-12 else after

    spec = {"rule": "time_switch", "t_switch": t_switch, "before": before, "after": after}
    return VolControl(grid, rule, label or f"tswitch({t_switch},{before},{after})", 1, spec)


CONTROLS = {"constant": constant, "threshold_switch": threshold_switch, "time_switch": time_switch}


def make_control(spec, grid):
    spec = dict(spec)
    name = spec.pop("rule", None)
    label = spec.pop("label", None)
    if name == "paste":
        return paste(PasteSpec.from_dict(spec, grid))
    if name not in CONTROLS:
        raise ArgumentError(f"unknown control rule {name!r}; known: {sorted(CONTROLS) + ['paste']}")
    try:
        ctl = CONTROLS[name](grid, label=label, **spec)
    except TypeError as exc:
        raise ArgumentError(f"bad parameters for control {name!r}: {exc}") from None
    return ctl


# --------------------------------------------------------------------------
# events and grid stopping times
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Event:
    """Indicator of a path prefix. ``node`` is the last node the event reads
    (``None``: the last node of the prefix it is given)."""

    fn: Callable
    node: Optional[int] = None
    spec: Optional[dict] = field(default=None, repr=False)

    def __call__(self, prefix):
        try:
            out = np.asarray(self.fn(prefix), dtype=bool)
        except IndexError:
            raise DomainError("event reads beyond the branch time (not adapted)") from None
        return np.broadcast_to(out, (prefix.shape[0],))


def _at(prefix, node):
    return prefix[:, -1] if node is None else prefix[:, node]


EVENTS = {
    "always": lambda node=None: Event(lambda p: np.ones(p.shape[0], bool), node),
    "never": lambda node=None: Event(lambda p: np.zeros(p.shape[0], bool), node),
    "sign": lambda node=None, positive=True: Event(
        (lambda p: _at(p, node) > 0) if positive else (lambda p: _at(p, node) <= 0), node),
    "level": lambda level, node=None, above=True: Event(
        (lambda p: _at(p, node) > level) if above else (lambda p: _at(p, node) <= level), node),
    "abs_level": lambda level, node=None: Event(lambda p: np.abs(_at(p, node)) > level, node),
}


def make_event(spec):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in EVENTS:
        raise ArgumentError(f"unknown event {kind!r}; known: {sorted(EVENTS)}")
    ev = EVENTS[kind](**spec)
    return Event(ev.fn, ev.node, {"kind": kind, **spec})


@dataclass(frozen=True, eq=False)
class GridStoppingTime:
    """Stopping time on a grid: ``rule(k, prefix)`` says which paths stop at node ``k``.

    The stopping node is the first ``k`` where the rule fires, ``N`` at the latest.
    ``values`` lists the nodes the time can take (used for adaptedness checks).
    """

    grid: TimeGrid
    rule: Callable
    values: tuple
    label: str = ""
    spec: Optional[dict] = field(default=None, repr=False)

    def stop_flags(self, k, prefix):
        if k == self.grid.N:
            return np.ones(prefix.shape[0], bool)
        try:
            return np.broadcast_to(np.asarray(self.rule(k, prefix), dtype=bool), (prefix.shape[0],))
        except IndexError:
            raise DomainError(f"stopping rule {self.label!r} reads beyond node {k} (not adapted)") from None

    def evaluate(self, x, upto=None):
        """Stopping node per path for full paths ``x`` ``(P, N+1)``.

        With ``upto=k`` only the prefix up to ``k`` is used and paths that have
        not stopped by ``k`` get ``N + 1``.
        """
        x = np.asarray(x)
        P = x.shape[0]
        last = self.grid.N if upto is None else upto
        sigma = np.full(P, self.grid.N + 1, dtype=int)
        for k in range(last + 1):
            live = sigma > k
            if not live.any():
                break
            fire = self.stop_flags(k, x[:, : k + 1])
            sigma[live & fire] = k
        return sigma

    def to_dict(self):
        if self.spec is None:
            raise ArgumentError("stopping time has no registry spec")
        return dict(self.spec)


def deterministic_time(grid, node):
    node = int(node)
    if not 0 <= node <= grid.N:
        raise ArgumentError(f"node {node} outside grid")
    return GridStoppingTime(grid, lambda k, p: np.full(p.shape[0], k >= node), (node,), f"t{node}",
                            {"kind": "deterministic", "node": node})


def hitting_time(grid, level, absolute=True, cap=None):
    cap = grid.N if cap is None else int(cap)

    def rule(k, p):
        x = p[:, k]
        hit = (np.abs(x) >= level) if absolute else (x >= level)
        return hit | (k >= cap)

    return GridStoppingTime(grid, rule, tuple(range(cap + 1)), f"hit({level})",
                            {"kind": "hitting", "level": level, "absolute": absolute, "cap": cap})


def two_valued_sign(grid, observe, early, late):
    """Stop at ``early`` if ``B`` at node ``observe`` is positive, else at ``late``."""
    if not observe <= early <= late <= grid.N:
        raise ArgumentError("need observe <= early <= late <= N")

    def rule(k, p):
        if k == early:
            return p[:, observe] > 0
        return np.full(p.shape[0], k >= late)

    return GridStoppingTime(grid, rule, (early, late), f"sign@{observe}",
                            {"kind": "two_valued_sign", "observe": observe, "early": early, "late": late})


def randomized_two_valued(grid, observe, early, late, seed=0, width=0.25):
    """Two-valued time whose branch is a seeded random bit of the cell of ``B`` at ``observe``."""
    if not observe <= early <= late <= grid.N:
        raise ArgumentError("need observe <= early <= late <= N")
    bits = np.random.default_rng(seed).integers(0, 2, size=64).astype(bool)

    def rule(k, p):
        if k == early:
            cell = np.floor(p[:, observe] / width + 0.5).astype(np.int64) % 64
            return bits[cell]
        return np.full(p.shape[0], k >= late)

    return GridStoppingTime(grid, rule, (early, late), f"rand@{observe}",
                            {"kind": "randomized_two_valued", "observe": observe, "early": early,
                             "late": late, "seed": seed, "width": width})


def first_positive_after(grid, start):
    start = int(start)

    def rule(k, p):
        return (k >= start) & (p[:, k] > 0)

    return GridStoppingTime(grid, rule, tuple(range(start, grid.N + 1)), f"pos>{start}",
                            {"kind": "first_positive_after", "start": start})


STOPPING_TIMES = {
    "deterministic": deterministic_time,
    "hitting": hitting_time,
    "two_valued_sign": two_valued_sign,
    "randomized_two_valued": randomized_two_valued,
    "first_positive_after": first_positive_after,
}


def make_stopping_time(spec, grid):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in STOPPING_TIMES:
        raise ArgumentError(f"unknown stopping time {kind!r}; known: {sorted(STOPPING_TIMES)}")
    return STOPPING_TIMES[kind](grid, **spec)


# --------------------------------------------------------------------------
# pasting
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PasteSpec:
    base: VolControl
    branch: object  # grid node index or GridStoppingTime
    event: Event
    on_event: VolControl
    off_event: VolControl

    @classmethod
    def from_dict(cls, doc, grid):
        branch = doc["branch"]
        if isinstance(branch, dict):
            branch = make_stopping_time(branch, grid)
        return cls(make_control(doc["base"], grid), branch, make_event(doc.get("event", {"kind": "always"})),
                   make_control(doc["on"], grid), make_control(doc["off"], grid))

    def to_dict(self):
        br = self.branch.to_dict() if isinstance(self.branch, GridStoppingTime) else int(self.branch)
        if self.event.spec is None:
            raise ArgumentError("event has no registry spec")
        return {"rule": "paste", "base": self.base.to_dict(), "branch": br, "event": dict(self.event.spec),
                "on": self.on_event.to_dict(), "off": self.off_event.to_dict()}


def paste(spec):
    """Concatenate controls: ``base`` up to the branch time, then ``on_event`` on the
    event and ``off_event`` off it.

    Cell ``k`` (the interval ``(t_k, t_{k+1}]``) lies after the branch time
    ``sigma`` iff ``k >= sigma``. The event is evaluated on the prefix up to
    ``sigma``.
    """
    base, ev, on, off = spec.base, spec.event, spec.on_event, spec.off_event
    grid = base.grid
    if not (on.grid == off.grid == grid):
        raise ArgumentError("pasted controls must share one grid")
    if not (base.d == on.d == off.d):
        raise ArgumentError("pasted controls must share one dimension")
    if isinstance(spec.branch, GridStoppingTime):
        st = spec.branch
        if st.grid != grid:
            raise ArgumentError("stopping time lives on another grid")
        if ev.node is not None and ev.node > min(st.values):
            raise DomainError(f"event reads node {ev.node} but the branch time can be {min(st.values)}")
    else:
        b = int(spec.branch)
        if not 0 <= b <= grid.N:
            raise ArgumentError(f"branch node {b} outside grid")
        if ev.node is not None and ev.node > b:
            raise DomainError(f"event reads node {ev.node} after the branch node {b} (not adapted)")
        st = None

    def rule(k, prefix):
        a = base.evaluate(k, prefix)
        if st is None:
            if k < b:
                return a
            lam = ev(prefix[:, : b + 1])
            return np.where(lam[:, None, None], on.evaluate(k, prefix), off.evaluate(k, prefix))
        sigma = st.evaluate(prefix, upto=k)
        after = sigma <= k
        if not after.any():
            return a
        lam = np.zeros(prefix.shape[0], bool)
        for s in np.unique(sigma[after]):
            rows = sigma == s
            lam[rows] = ev(prefix[rows, : s + 1])
        a_on, a_off = on.evaluate(k, prefix), off.evaluate(k, prefix)
        pasted = np.where(lam[:, None, None], a_on, a_off)
        return np.where(after[:, None, None], pasted, a)

    try:
        sp = spec.to_dict()
    except ArgumentError:
        sp = None
    label = f"paste({base.label}|{on.label}/{off.label})"
    return VolControl(grid, rule, label, base.d, sp)


# --------------------------------------------------------------------------
# bounds and scenario sets
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Bound:
    """Variance bound as a function of time and state.

    ``at(t, x)`` is defined for Markov bounds (depending on ``(t, B_t)``
    only); ``on_prefix(k, times, prefix)`` is always defined.
    """

    markov_fn: Optional[Callable]
    prefix_fn: Callable
    lo: float
    hi: float
    spec: dict = field(default=None, repr=False)

    @property
    def markov(self):
        return self.markov_fn is not None

    @property
    def constant(self):
        return self.lo if self.lo == self.hi and self.markov else None

    def at(self, t, x):
        if not self.markov:
            raise ConfigurationError("bound depends on the whole path prefix")
        t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
        return np.broadcast_to(np.asarray(self.markov_fn(t, x), float), x.shape)

    def on_prefix(self, k, times, prefix):
        return np.broadcast_to(np.asarray(self.prefix_fn(k, times, prefix), float), (prefix.shape[0],))


def constant_bound(value):
    v = float(value)
    return Bound(lambda t, x: np.full(np.shape(x), v), lambda k, ts, p: v, v, v, {"rule": "constant", "value": v})


def state_switch_bound(level, below, above):
    return Bound(lambda t, x: np.where(x > level, above, below),
                 lambda k, ts, p: np.where(p[:, k] > level, above, below),
                 min(below, above), max(below, above),
                 {"rule": "state_switch", "level": level, "below": below, "above": above})


def time_switch_bound(t_switch, before, after):
    return Bound(lambda t, x: np.where(t < t_switch - 1e-12, before, after),
                 lambda k, ts, p: before if ts[k] < t_switch - 1e-12 else after,
                 min(before, after), max(before, after),
                 {"rule": "time_switch", "t_switch": t_switch, "before": before, "after": after})


def running_max_bound(level, below, above):
    """``above`` once the running maximum of ``B`` has reached ``level`` (path dependent)."""
    return Bound(None, lambda k, ts, p: np.where(p[:, : k + 1].max(axis=1) >= level, above, below),
                 min(below, above), max(below, above),
                 {"rule": "running_max_switch", "level": level, "below": below, "above": above})


BOUNDS = {"constant": constant_bound, "state_switch": state_switch_bound,
          "time_switch": time_switch_bound, "running_max_switch": running_max_bound}


def make_bound(spec):
    if spec is None:
        return None
    if isinstance(spec, Bound):
        return spec
    if isinstance(spec, (int, float)):
        return constant_bound(spec)
    spec = dict(spec)
    name = spec.pop("rule", None)
    if name not in BOUNDS:
        raise ArgumentError(f"unknown bound rule {name!r}; known: {sorted(BOUNDS)}")
    return BOUNDS[name](**spec)


def _bound_to_json(b):
    if b is None:
        return None
    if b.spec.get("rule") == "constant":
        return b.spec["value"]
    return dict(b.spec)


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Admissible scenarios, described by variance bounds and/or a finite pool.

    ``interval_bounds``: all adapted controls with ``a_low <= alpha <= a_high``
    (``d = 1``). ``finite_pool``: exactly the listed controls. Both kinds may
    carry the other description as well; the pool must respect the bounds.
    """

    kind: str
    a_low: Optional[Bound] = None
    a_high: Optional[Bound] = None
    pool: tuple = ()
    control_mesh: int = 5

    def __post_init__(self):
        object.__setattr__(self, "a_low", make_bound(self.a_low))
        object.__setattr__(self, "a_high", make_bound(self.a_high))
        object.__setattr__(self, "pool", tuple(self.pool))
        if self.kind not in ("interval_bounds", "finite_pool"):
            raise ArgumentError(f"unknown scenario set kind {self.kind!r}")
        if self.kind == "interval_bounds" and (self.a_low is None or self.a_high is None):
            raise ArgumentError("interval_bounds sets need a_low and a_high")
        if self.kind == "finite_pool" and not self.pool:
            raise ArgumentError("finite_pool sets need a nonempty pool")
        if self.control_mesh < 2:
            raise ArgumentError("control_mesh must be >= 2 (it includes both endpoints)")
        if self.has_bounds:
            if self.a_low.lo <= 0:
                raise DomainError("lower variance bound must be positive")
            if self.a_low.hi > self.a_high.lo and not self._bounds_ordered():
                raise DomainError("a_low must not exceed a_high")
        grids = {c.grid for c in self.pool}
        if len(grids) > 1:
            raise ArgumentError("pool controls live on different grids")
        if self.has_bounds:
            for c in self.pool:
                if not contains(self.bounds_only(), c, n_samples=64):
                    raise DomainError(f"pool control {c.label!r} leaves the declared bounds")

    def _bounds_ordered(self):
        ts = np.linspace(0, 10, 41)
        xs = np.linspace(-20, 20, 401)
        if self.a_low.markov and self.a_high.markov:
            tt, xx = np.meshgrid(ts, xs)
            return bool(np.all(self.a_low.at(tt, xx) <= self.a_high.at(tt, xx)))
        return self.a_low.hi <= self.a_high.lo

    @property
    def has_bounds(self):
        return self.a_low is not None and self.a_high is not None

    @property
    def markov(self):
        return self.has_bounds and self.a_low.markov and self.a_high.markov

    @property
    def grid(self):
        return self.pool[0].grid if self.pool else None

    @property
    def a_min(self):
        return self.a_low.lo

    @property
    def a_max(self):
        return self.a_high.hi

    def bounds_only(self):
        return ScenarioSet("interval_bounds", self.a_low, self.a_high, (), self.control_mesh)

    def with_pool(self, pool):
        return ScenarioSet(self.kind, self.a_low, self.a_high, tuple(pool), self.control_mesh)

    def to_dict(self):
        return {"kind": self.kind, "a_low": _bound_to_json(self.a_low), "a_high": _bound_to_json(self.a_high),
                "pool": [c.to_dict() for c in self.pool], "control_mesh": self.control_mesh}

    @classmethod
    def from_dict(cls, doc, grid=None):
        pool = doc.get("pool") or ()
        if pool and grid is None:
            raise ArgumentError("a grid is needed to build pool controls")
        return cls(doc["kind"], doc.get("a_low"), doc.get("a_high"),
                   tuple(make_control(c, grid) for c in pool), int(doc.get("control_mesh", 5)))


def g_set(a_low, a_high, pool=(), control_mesh=5):
    """Interval scenario set with constant bounds (the G-expectation case)."""
    return ScenarioSet("interval_bounds", a_low, a_high, pool, control_mesh)


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------

def contains(sset, control, tol=1e-12, n_samples=256, seed=0):
    """Membership of ``control`` in ``sset``, checked on a seeded sample of prefixes.

    Prefixes are simulated under ``control`` itself. Interval sets: every
    control value must lie in ``[a_low - tol, a_high + tol]``. Pool sets:
    the control must coincide cellwise (within ``tol``) with some pool element.
    """
    if sset.pool and sset.grid != control.grid:
        raise ArgumentError("control and scenario pool live on different grids")
    grid = control.grid
    try:
        bundle = simulate(control, grid, n_samples, seed)
    except DomainError:
        return False
    x = bundle.x if control.d == 1 else bundle.B
    alpha = bundle.alpha
    if sset.kind == "interval_bounds":
        if control.d != 1:
            raise ArgumentError("interval bounds are one-dimensional")
        times = grid.nodes
        a = alpha[:, :, 0, 0]
        for k in range(grid.N):
            p = x[:, : k + 1]
            lo = sset.a_low.on_prefix(k, times, p)
            hi = sset.a_high.on_prefix(k, times, p)
            if np.any(a[:, k] < lo - tol) or np.any(a[:, k] > hi + tol):
                return False
        return True
    for cand in sset.pool:
        if cand.d != control.d:
            continue
        try:
            other = cand.values_on(x)
        except DomainError:
            continue
        if np.all(np.abs(other - alpha) <= tol):
            return True
    return False


Selection = namedtuple("Selection", ["index", "merged"])


def upward_select(candidates):
    """Pathwise maximum of candidate conditional estimates and which one attains it.

    ``candidates`` is a sequence of per-path arrays (or an ``(m, P)`` array).
    Ties go to the lowest index.
    """
    if candidates is None or len(candidates) == 0:
        raise ArgumentError("upward_select needs at least one candidate")
    c = np.atleast_2d(np.asarray(candidates, dtype=float))
    idx = np.argmax(c, axis=0)
    return Selection(idx, c[idx, np.arange(c.shape[1])])


MaxChosenResult = namedtuple("MaxChosenResult", ["accepted", "witness", "details"])


def max_chosen_check(sset, candidate, claims, n_paths=20000, seed=0, n_se=3.0):
    """Statistical test that adding ``candidate`` would not raise the pool supremum.

    For each claim, ``E[X]`` under the candidate and under every pool control is
    estimated with common random numbers. The candidate is rejected at the
    first claim where its estimate exceeds the largest pool estimate by more
    than ``n_se`` standard errors of the paired difference. Acceptance is only
    heuristic: finitely many claims are tested.
    """
    if sset.kind != "finite_pool":
        raise ArgumentError("max_chosen_check works on finite pools")
    grid = candidate.grid
    cand = simulate(candidate, grid, n_paths, seed)
    pool = [simulate(c, grid, n_paths, seed) for c in sset.pool]
    details = []
    for claim in claims:
        xc = claim.evaluate(cand)
        xs = [claim.evaluate(b) for b in pool]
        means = [v.mean() for v in xs]
        j = int(np.argmax(means))
        diff = xc - xs[j]
        se = diff.std(ddof=1) / np.sqrt(n_paths)
        excess = diff.mean()
        row = {"claim": claim.name, "candidate": float(xc.mean()), "pool_sup": float(means[j]),
               "excess": float(excess), "se": float(se)}
        details.append(row)
        if excess > n_se * se and excess > 1e-14:
            return MaxChosenResult(False, claim, details)
    return MaxChosenResult(True, None, details)
