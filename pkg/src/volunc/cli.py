"""Command-line front end.

    volunc price --config bt2.json
    volunc verify --config bt2.json --out results/
    volunc acceptance

Exit codes: 0 all checks pass, 1 a check failed, 2 bad configuration.
"""
import argparse
import ast
import json
import math
import operator
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from . import _accel
from .claims import BUNDLED_CLAIMS, make_claim
from .errors import ArgumentError, ConfigurationError, DomainError, ResourceError, VolUncError
from .paths import TimeGrid, pathwise_integral, simulate

OPERATIONS = ("price", "hedge", "decompose", "verify", "paste", "integrate")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: dict
    claim: dict
    grid: dict = field(default_factory=lambda: {"T": 1.0, "N": 200})
    mc: dict = field(default_factory=lambda: {"n_paths": 20000, "seed": 0})
    operations: list = field(default_factory=lambda: ["price"])
    output: str = "results"
    expected: dict = None
    paste: dict = None
    integrate: dict = None
    hedge: dict = None

    # -- parsing -----------------------------------------------------------
    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        if "scenario" not in doc or "claim" not in doc:
            raise ConfigurationError("config needs 'scenario' and 'claim'")
        cfg = cls(**{k: doc[k] for k in doc})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    # -- derived objects ---------------------------------------------------
    @property
    def T(self):
        return float(self.grid.get("T", 1.0))

    @property
    def N(self):
        return int(self.grid.get("N", 200))

    @property
    def time_grid(self):
        return TimeGrid(self.T, self.N)

    @property
    def seed(self):
        return int(self.mc.get("seed", 0))

    @property
    def n_paths(self):
        return int(self.mc.get("n_paths", 20000))

    def claim_obj(self):
        return make_claim(self.claim)

    def scenario_set(self):
        from .scenarios import ScenarioSet

        doc = dict(self.scenario)
        doc.setdefault("kind", "interval_bounds")
        if "control_mesh" in self.grid:
            doc["control_mesh"] = int(self.grid["control_mesh"])
        return ScenarioSet.from_dict(doc, self.time_grid)

    def lattice_config(self):
        from .dp import LatticeConfig

        return LatticeConfig(self.N, self.T, float(self.grid.get("dx_factor", math.sqrt(3.0))),
                             self.grid.get("control_mesh"))

    def pde_grid(self, g):
        from .gpde import PDEGrid

        Nx = int(self.grid.get("Nx", 241))
        if "x_min" in self.grid or "x_max" in self.grid:
            return PDEGrid(float(self.grid["x_min"]), float(self.grid["x_max"]), Nx,
                           TimeGrid(self.T, int(self.grid.get("N_pde", self.grid.get("N", 200)))))
        return PDEGrid.default(g, self.T, Nx=Nx, N=self.grid.get("N_pde"))

    def validate(self):
        for op in self.operations:
            if op not in OPERATIONS:
                raise ConfigurationError(f"unknown operation {op!r}; choose from {OPERATIONS}")
        if self.T <= 0 or self.N < 1:
            raise ConfigurationError("grid needs T > 0 and N >= 1")
        if self.n_paths < 2:
            raise ConfigurationError("mc.n_paths must be at least 2")
        try:
            self.claim_obj()
            sset = self.scenario_set()
        except (ArgumentError, DomainError) as exc:
            raise ConfigurationError(str(exc)) from None
        lc = self.lattice_config()
        if lc.dx_factor < 1:
            raise ConfigurationError(f"mesh condition violated: dx_factor = {lc.dx_factor} < 1, "
                                     "i.e. dx < sqrt(a_high dt)")
        g = _g_function(sset)
        if g is not None:
            self.pde_grid(g).check_cfl(g.a_high)
        if self.expected is not None:
            expected_value(self.expected, sset, self.T)
        if self.paste is not None:
            from .scenarios import PasteSpec

            try:
                PasteSpec.from_dict(self.paste, self.time_grid)
            except (ArgumentError, KeyError) as exc:
                raise ConfigurationError(f"bad paste spec: {exc}") from None


def _g_function(sset):
    from .gpde import GFunction

    if not sset.has_bounds:
        return None
    lo, hi = sset.a_low.constant, sset.a_high.constant
    if lo is None or hi is None:
        return None
    return GFunction(lo, hi)


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
        ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sqrt": math.sqrt, "exp": math.exp, "log": math.log, "abs": abs}


def evaluate_formula(text, names):
    """Arithmetic on numbers, ``names`` and a few math functions (no general eval)."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in names:
            return float(names[node.id])
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ConfigurationError(f"unsupported expression in formula {text!r}")

    try:
        return ev(ast.parse(text, mode="eval"))
    except SyntaxError:
        raise ConfigurationError(f"cannot parse formula {text!r}") from None


def expected_value(doc, sset, T):
    if "value" in doc:
        return float(doc["value"])
    if "formula" in doc:
        names = {"T": T, "pi": math.pi, "a_low": sset.a_min, "a_high": sset.a_max}
        return evaluate_formula(doc["formula"], names)
    raise ConfigurationError("expected needs 'value' or 'formula'")


def bundled_config(name):
    """Path of a config shipped with the package (``bt2``, ``linear``, ``call``, ...)."""
    fn = name if name.endswith(".json") else name + ".json"
    return str(resources.files("volunc") / "configs" / fn)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _write_json(path, doc):
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.chmod(tmp, 0o644)
    os.replace(tmp, path)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else str(v)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def cmd_price(cfg, refine=0):
    from .dp import dp_value
    from .gpde import solve_g_pde

    claim, sset = cfg.claim_obj(), cfg.scenario_set()
    tol = float((cfg.expected or {}).get("tol", 1e-2))
    g = _g_function(sset)
    ladder = []
    for r in range(refine + 1):
        lc = cfg.lattice_config()
        lc = lc.refine(4 ** r) if r else lc
        row = {"N": lc.N, "dp": dp_value(claim, sset, lc).root}
        if g is not None and claim.is_terminal(cfg.T):
            grid = cfg.pde_grid(g)
            if r:
                from .gpde import PDEGrid

                grid = PDEGrid.default(g, cfg.T, Nx=2 ** r * (grid.Nx - 1) + 1)
            row["gpde"] = solve_g_pde(g, claim, grid).root
            row["Nx"] = grid.Nx
        ladder.append(row)
    top = ladder[0]
    doc = {"command": "price", "claim": claim.name, "dp": top["dp"], "gpde": top.get("gpde"),
           "tolerance": tol, "backend": _accel.backend()}
    ok = True
    if top.get("gpde") is not None:
        doc["agreement"] = abs(top["dp"] - top["gpde"])
        ok &= doc["agreement"] <= tol
    if cfg.expected is not None:
        ex = expected_value(cfg.expected, sset, cfg.T)
        doc["expected"] = ex
        doc["error"] = abs(top["dp"] - ex)
        ok &= doc["error"] <= tol
        if len(ladder) > 1:
            for row in ladder:
                row["error"] = abs(row["dp"] - ex)
    if len(ladder) > 1:
        doc["ladder"] = ladder
    doc["pass"] = bool(ok)
    return doc


def _decomposition(cfg, source=None):
    from .decompose import build_decomposition

    return build_decomposition(cfg.claim_obj(), cfg.scenario_set(), cfg.lattice_config(), cfg.n_paths,
                               cfg.seed, source or (cfg.hedge or {}).get("source", "markovian_delta"))


def cmd_decompose(cfg, out=None):
    from .decompose import check_symmetry, verify_2bsde

    dec = _decomposition(cfg)
    rep = verify_2bsde(dec)
    doc = {"command": "decompose", "source": dec.source, "report": rep.to_dict(),
           "symmetry": check_symmetry(cfg.claim_obj(), cfg.scenario_set(), cfg.lattice_config()).to_dict(),
           "pass": rep.passed}
    if out:
        os.makedirs(out, exist_ok=True)
        dec.to_csv(os.path.join(out, "decomposition.csv"), max_paths=int(cfg.mc.get("export_paths", 20)))
    return doc


def cmd_hedge(cfg, out=None):
    from .hedge import superhedge_verify

    dec = _decomposition(cfg)
    h = cfg.hedge or {}
    x = h.get("x", "price")
    x = dec.values.root if x == "price" else float(x)
    rep = superhedge_verify(dec.claim, dec.sset, dec, x, cfg.n_paths, seed=h.get("seed"))
    if out:
        os.makedirs(out, exist_ok=True)
        rep.histogram_csv(os.path.join(out, "shortfall_histogram.csv"))
    doc = {"command": "hedge", "report": rep.to_dict()}
    expect_fail = bool(h.get("expect_fail", False))
    doc["pass"] = rep.passed != expect_fail
    return doc


def cmd_paste(cfg):
    from .scenarios import PasteSpec, contains, paste

    if cfg.paste is None:
        raise ConfigurationError("the paste command needs a 'paste' section")
    sset = cfg.scenario_set()
    ctl = paste(PasteSpec.from_dict(cfg.paste, cfg.time_grid))
    ok = contains(sset, ctl, n_samples=min(cfg.n_paths, 1024), seed=cfg.seed)
    doc = {"command": "paste", "control": ctl.label, "contained": ok, "pass": ok}
    if not ok:
        doc["message"] = "containment violated"
    return doc


def cmd_integrate(cfg):
    from .scenarios import constant

    spec = cfg.integrate or {}
    levels = [int(n) for n in spec.get("levels", [4, 6, 8])]
    N = int(spec.get("N", 2 ** 16))
    n_paths = int(spec.get("n_paths", 100))
    sset = cfg.scenario_set()
    a = float(spec.get("a", sset.a_max if sset.has_bounds else 1.0))
    grid = TimeGrid(cfg.T, N)
    b = simulate(constant(grid, a), grid, n_paths, cfg.seed)
    x = b.x
    closed = 0.5 * (x[:, -1] ** 2 - b.qv1[:, -1])
    rows = []
    for n in levels:
        e = float(np.mean(np.abs(pathwise_integral(x, x, n)[:, -1] - closed)))
        rows.append({"n": n, "mean_abs_discrepancy": e})
    left = np.sum(x[:, :-1] * np.diff(x, axis=1), axis=1)
    floor = float(np.mean(np.abs(left - closed)))
    errs = [r["mean_abs_discrepancy"] for r in rows]
    ok = all(e2 <= e1 or e2 <= 2 * floor for e1, e2 in zip(errs, errs[1:]))
    return {"command": "integrate", "a": a, "N": N, "n_paths": n_paths, "table": rows, "grid_floor": floor,
            "pass": ok}


def cmd_verify(cfg, out=None):
    """Every check that applies to the configured claim and scenario set."""
    from .decompose import check_symmetry, verify_2bsde
    from .dp import (LatticeConfig, check_time_consistency, dp_value, mc_lower_bound,
                     value_at_stopping_time)
    from .hedge import classify_replicable, superhedge_verify
    from .scenarios import constant, hitting_time, two_valued_sign

    claim, sset = cfg.claim_obj(), cfg.scenario_set()
    lc = cfg.lattice_config()
    grid = lc.grid
    checks = {}
    L = dp_value(claim, sset, lc)
    rng = np.random.default_rng(cfg.seed)
    pairs = [tuple(sorted(map(int, rng.integers(0, lc.N + 1, 2)))) for _ in range(20)]
    worst = max(check_time_consistency(L, s, t) for s, t in pairs)
    checks["time_consistency"] = {"max_violation": worst, "tolerance": 1e-12, "pass": worst <= 1e-12}

    small = dp_value(claim, sset, LatticeConfig(12, cfg.T, lc.dx_factor, lc.control_mesh))
    reps = [value_at_stopping_time(small, st) for st in
            (hitting_time(small.grid, 0.5 * math.sqrt(sset.a_max * cfg.T)), two_valued_sign(small.grid, 3, 6, 9))]
    checks["optional_sampling"] = {"max_violation": max(r.restart_violation for r in reps),
                                   "tolerance": 1e-12, "pass": all(r.passed for r in reps)}

    pool = list(sset.pool) or [constant(grid, sset.a_min), constant(grid, sset.a_max)]
    work = sset.with_pool(pool)
    mc = mc_lower_bound(claim, work, cfg.n_paths, cfg.seed, lattice=L)
    checks["price_dominance"] = {**mc.to_dict(), "tolerance": 3 * mc.mc_max_se,
                                 "pass": mc.gap >= -3 * mc.mc_max_se - 1e-2}

    from .decompose import build_decomposition

    dec = build_decomposition(claim, work, lc, cfg.n_paths, cfg.seed + 100, values=L)
    bsde = verify_2bsde(dec)
    checks["2bsde"] = {**bsde.to_dict()}
    hedge = superhedge_verify(claim, work, dec, L.root, cfg.n_paths)
    checks["superhedge"] = hedge.to_dict()
    checks["symmetry"] = {**check_symmetry(claim, sset, lc).to_dict(), "pass": True}
    rep = classify_replicable(claim, sset, lc, pool=pool, n_paths=cfg.n_paths, seed=cfg.seed + 200)
    checks["replicability"] = {**rep.to_dict(), "pass": rep.consistent}
    ok = all(bool(v.get("pass")) for v in checks.values())
    if out:
        os.makedirs(out, exist_ok=True)
        L.to_csv(os.path.join(out, "lattice.csv"))
    return {"command": "verify", "claim": claim.name, "dp_value": L.root, "checks": checks, "pass": ok}


def cmd_acceptance(numbers=None):
    from .acceptance import run_all

    results = run_all(numbers)
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return {"command": "acceptance", "results": [r.to_dict() for r in results], "pass": ok}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="volunc", description="Worst-case expectations under volatility uncertainty")
    sub = p.add_subparsers(dest="command", required=True)
    for name in OPERATIONS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True,
                        help="JSON config, or the name of a bundled one (bt2, linear, call, ...)")
        sp.add_argument("--out", default=None, help="output directory (report.json and CSVs)")
        sp.add_argument("--seed", type=int, default=None, help="override mc.seed")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--refine", type=int, default=0, help="grid refinement ladder depth (price)")
    sp = sub.add_parser("acceptance")
    sp.add_argument("--only", type=int, nargs="*", default=None, help="criterion numbers")
    sp.add_argument("--out", default=None)
    sp.add_argument("--threads", type=int, default=None)
    return p


def _resolve_config(arg):
    if os.path.exists(arg):
        return arg
    path = bundled_config(arg)
    if os.path.exists(path):
        return path
    raise ConfigurationError(f"no config file {arg!r} and no bundled config of that name")


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads:
        _accel.set_threads(args.threads)
    try:
        if args.command == "acceptance":
            doc = cmd_acceptance(args.only)
        else:
            cfg = ExperimentConfig.load(_resolve_config(args.config))
            if args.seed is not None:
                cfg.mc = {**cfg.mc, "seed": int(args.seed)}
            out = args.out
            if args.command == "price":
                doc = cmd_price(cfg, args.refine)
            elif args.command == "hedge":
                doc = cmd_hedge(cfg, out)
            elif args.command == "decompose":
                doc = cmd_decompose(cfg, out)
            elif args.command == "verify":
                doc = cmd_verify(cfg, out)
            elif args.command == "paste":
                doc = cmd_paste(cfg)
            else:
                doc = cmd_integrate(cfg)
    except (ConfigurationError, ArgumentError, DomainError, ResourceError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VolUncError as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True)
    if args.command != "acceptance":
        print(text)
    if args.out:
        _write_json(os.path.join(args.out, "report.json"), doc)
    if not doc.get("pass"):
        if doc.get("message"):
            print(doc["message"], file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


__all__ = ["ExperimentConfig", "main", "build_parser", "cmd_price", "cmd_hedge", "cmd_decompose",
           "cmd_verify", "cmd_paste", "cmd_integrate", "cmd_acceptance", "evaluate_formula",
           "bundled_config", "BUNDLED_CLAIMS"]
