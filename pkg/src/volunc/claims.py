"""Claims: payoffs of the canonical process at one or several monitoring dates.

Claims are built from a small registry of named payoffs so that they can be
written to and read from JSON configs::

    >>> c = make_claim({"name": "call", "strike": 0.0})
    >>> float(c.terminal(np.array([2.0]))[0])
    2.0
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, DomainError


@dataclass(frozen=True, eq=False)
class Claim:
    """A payoff ``f(B_{t_1}, ..., B_{t_n})``.

    ``dates`` are absolute monitoring times; ``None`` means the single date
    ``T`` of whatever grid the claim is evaluated on. ``kinks``/``jumps`` list
    points where the (terminal) payoff is not smooth; the PDE solver uses them
    when sampling terminal data on a mesh.
    """

    payoff: Callable
    dates: Optional[tuple] = None
    growth: str = "linear"
    name: str = "custom"
    kinks: tuple = ()
    jumps: tuple = ()
    spec: Optional[dict] = field(default=None, compare=False)

    @property
    def n_dates(self):
        return 1 if self.dates is None else len(self.dates)

    def is_terminal(self, T=None):
        if self.dates is None:
            return True
        return len(self.dates) == 1 and (T is None or abs(self.dates[0] - T) < 1e-12)

    def terminal(self, x):
        x = np.asarray(x, dtype=float)
        if self.n_dates != 1:
            raise ArgumentError(f"claim {self.name!r} depends on {self.n_dates} dates")
        v = np.asarray(self.payoff(x), dtype=float)
        v = np.broadcast_to(v, x.shape).astype(float)
        if not np.all(np.isfinite(v)):
            raise DomainError(f"payoff {self.name!r} is not finite on the requested states")
        return v

    def monitoring_indices(self, grid):
        if self.dates is None:
            return [grid.N]
        return [grid.index_of(t) for t in self.dates]

    def evaluate(self, bundle):
        """Payoff on every path of a one-dimensional :class:`~volunc.paths.PathBundle`."""
        x = bundle.x
        idx = self.monitoring_indices(bundle.grid)
        v = np.asarray(self.payoff(*[x[:, k] for k in idx]), dtype=float)
        return np.broadcast_to(v, (bundle.n_paths,)).astype(float)

    # algebra -------------------------------------------------------------

    def _combine(self, other, op, name):
        if isinstance(other, Claim):
            if other.dates != self.dates:
                raise ArgumentError("claims must share their monitoring dates")
            f, g = self.payoff, other.payoff
            return Claim(lambda *x: op(f(*x), g(*x)), self.dates, _max_growth(self.growth, other.growth),
                         name, tuple(sorted(set(self.kinks) | set(other.kinks))),
                         tuple(sorted(set(self.jumps) | set(other.jumps))))
        c = float(other)
        f = self.payoff
        return Claim(lambda *x: op(f(*x), c), self.dates, self.growth, name, self.kinks, self.jumps)

    def __add__(self, other):
        return self._combine(other, np.add, f"({self.name}+{_nm(other)})")

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract, f"({self.name}-{_nm(other)})")

    def __mul__(self, lam):
        lam = float(lam)
        f = self.payoff
        return Claim(lambda *x: lam * f(*x), self.dates, self.growth, f"{lam:g}*{self.name}",
                     self.kinks, self.jumps)

    __rmul__ = __mul__

    def __neg__(self):
        f = self.payoff
        spec = None
        if self.spec is not None:
            spec = {"name": "neg", "of": self.spec}
        return Claim(lambda *x: -f(*x), self.dates, self.growth, f"-{self.name}", self.kinks, self.jumps, spec)

    def abs_pow(self, p):
        f = self.payoff
        return Claim(lambda *x: np.abs(f(*x)) ** p, self.dates, self.growth, f"|{self.name}|^{p:g}",
                     self.kinks, self.jumps)

    def to_dict(self):
        if self.spec is None:
            raise ArgumentError(f"claim {self.name!r} was not built from the registry")
        return dict(self.spec)


def _nm(o):
    return o.name if isinstance(o, Claim) else f"{float(o):g}"


_GROWTH = {"bounded": 0, "linear": 1, "quadratic": 2, "polynomial": 3}


def _max_growth(a, b):
    return a if _GROWTH.get(a, 3) >= _GROWTH.get(b, 3) else b


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

def _linear(slope=1.0, intercept=0.0):
    return dict(payoff=lambda x: slope * x + intercept, growth="linear")


def _square(scale=1.0):
    return dict(payoff=lambda x: scale * x * x, growth="quadratic")


def _neg_square(scale=1.0):
    return dict(payoff=lambda x: -scale * x * x, growth="quadratic")


def _call(strike=0.0):
    return dict(payoff=lambda x: np.maximum(x - strike, 0.0), growth="linear", kinks=(strike,))


def _put(strike=0.0):
    return dict(payoff=lambda x: np.maximum(strike - x, 0.0), growth="linear", kinks=(strike,))


def _digital(strike=0.0):
    # value 1/2 exactly at the strike
    return dict(payoff=lambda x: np.where(x > strike, 1.0, np.where(x < strike, 0.0, 0.5)),
                growth="bounded", jumps=(strike,))


def _abs(center=0.0):
    return dict(payoff=lambda x: np.abs(x - center), growth="linear", kinks=(center,))


def _cube(scale=1.0):
    return dict(payoff=lambda x: scale * x ** 3, growth="polynomial")


def _constant(value=0.0):
    return dict(payoff=lambda x: np.full(np.shape(x), float(value)), growth="bounded")


def _abs_minus_square(weight=1.0, scale=1.0):
    return dict(payoff=lambda x: scale * (np.abs(x) - weight * x * x), growth="quadratic", kinks=(0.0,))


def _table(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise ArgumentError("table payoff needs increasing xs and matching ys (>= 2 points)")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise DomainError("table payoff nodes must be finite")
    sl, sr = (ys[1] - ys[0]) / (xs[1] - xs[0]), (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])

    def f(x):
        x = np.asarray(x, dtype=float)
        v = np.interp(x, xs, ys)
        v = np.where(x < xs[0], ys[0] + sl * (x - xs[0]), v)
        return np.where(x > xs[-1], ys[-1] + sr * (x - xs[-1]), v)

    return dict(payoff=f, growth="linear", kinks=tuple(xs[1:-1]))


def _increment(t1, t2):
    return dict(payoff=lambda x1, x2: x2 - x1, dates=(float(t1), float(t2)), growth="linear")


def _increment_square(t1, t2):
    return dict(payoff=lambda x1, x2: (x2 - x1) ** 2, dates=(float(t1), float(t2)), growth="quadratic")


def _increment_call(t1, t2, strike=0.0):
    return dict(payoff=lambda x1, x2: np.maximum(x2 - x1 - strike, 0.0), dates=(float(t1), float(t2)),
                growth="linear")


CLAIMS = {
    "linear": _linear,
    "square": _square,
    "neg_square": _neg_square,
    "call": _call,
    "put": _put,
    "digital": _digital,
    "abs": _abs,
    "cube": _cube,
    "constant": _constant,
    "abs_minus_square": _abs_minus_square,
    "table": _table,
    "increment": _increment,
    "increment_square": _increment_square,
    "increment_call": _increment_call,
}


def make_claim(spec):
    """Build a :class:`Claim` from ``{"name": ..., **params}``."""
    spec = dict(spec)
    name = spec.get("name")
    if name == "neg":
        return -make_claim(spec["of"])
    if name not in CLAIMS:
        raise ArgumentError(f"unknown claim {name!r}; known: {sorted(CLAIMS)}")
    params = {k: v for k, v in spec.items() if k != "name"}
    try:
        kw = CLAIMS[name](**params)
    except TypeError as exc:
        raise ArgumentError(f"bad parameters for claim {name!r}: {exc}") from None
    return Claim(name=name, spec=spec, **kw)


def with_dates(claim, dates):
    return replace(claim, dates=tuple(float(t) for t in dates))


#: Ten claims exercised by the replication tests and the ``verify`` command.
BUNDLED_CLAIMS = [
    {"name": "linear"},
    {"name": "linear", "slope": 2.0, "intercept": 7.0},
    {"name": "constant", "value": 3.0},
    {"name": "square"},
    {"name": "neg_square"},
    {"name": "call", "strike": 0.0},
    {"name": "put", "strike": 0.5},
    {"name": "digital", "strike": 0.0},
    {"name": "abs"},
    {"name": "cube"},
]
