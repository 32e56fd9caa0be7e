"""Command-line experiment runner.

Each subcommand reads an optional JSON config, runs one sweep over its
parameter tuples and writes ``report.json`` (config, tolerances, rows,
violations) and ``table.csv`` into the output directory. Exit codes: 0 on
success, 2 when an inequality contract is violated, 1 on any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from .config import DEFAULT, Tolerances
from .errors import SchemaError, SingMTError
from .functionals import ConicalWeight, FunctionalParams, disk_test_family, lambda_q_disk, mt_functional_disk, onofri_deficit
from .radial import RadialFunction
from .rearrangement import (
    PolarGridFunction,
    hardy_littlewood_check,
    polar_energy,
    polya_szego_defect,
    rearrange,
    singular_exp_monotonicity_check,
)

log = logging.getLogger("singmt")

COMMANDS = ("disk-maximize", "onofri-check", "cc-limit", "rearrange-check", "lambda-q",
            "torus-green", "test-family", "supercritical", "threshold")

_pos_list = {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "geometry": {"enum": ["disk", "torus"]},
        "grid": {"type": "integer", "minimum": 8},
        "seed": {"type": "integer", "minimum": 0},
        "samples": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "max_iter": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "input": {"type": "string"},
        "scan": {"type": "boolean"},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta": {"type": "number", "minimum": 0},
                "beta_factor": {"type": "number", "minimum": 0},
                "lambda": {"type": "number", "minimum": 0},
                "lambda_factor": {"type": "number", "minimum": 0},
                "q": {"type": "number", "exclusiveMinimum": 1},
            },
        },
        "weight": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                      "items": {"type": "number"}}},
                "orders": {"type": "array", "items": {"type": "number", "exclusiveMinimum": -1}},
                "V": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "p": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
        "eps": {"type": "array", "minItems": 1,
                "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "rho": {"type": "array", "minItems": 1,
                "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "alpha": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": -1}},
        "beta": _pos_list,
        "beta_factor": _pos_list,
        "lambda": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "lambda_factor": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "q": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 1}},
        "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}


def _path(err) -> str:
    out = "config"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object", "config")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise SchemaError(e.message, _path(e))
    w = cfg.get("weight", {})
    if len(w.get("points", [])) != len(w.get("orders", [])):
        raise SchemaError("points and orders must have equal length", "config.weight")
    if "input" in cfg and not Path(cfg["input"]).is_file():
        raise SchemaError(f"file {cfg['input']!r} does not exist", "config.input")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"config file {str(path)!r} not found", "config")
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg} at line {exc.lineno})", "config")
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class Run:
    """Parsed config plus the resolved tolerances and output directory."""

    def __init__(self, cfg: dict, tol: Tolerances, out: Path, emit_plots: bool):
        self.cfg = cfg
        self.tol = tol
        self.out = out
        self.emit_plots = emit_plots
        self.plots = []
        self.extra = {}

    def get(self, key, default=None):
        return self.cfg.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.cfg.get("seed", 0))

    def weight(self, geometry: str) -> ConicalWeight:
        w = self.cfg.get("weight", {})
        return ConicalWeight(tuple(map(tuple, w.get("points", []))), tuple(w.get("orders", [])),
                             float(w.get("V", 1.0)), geometry)

    def pmap(self, f, items):
        items = list(items)
        workers = int(self.cfg.get("workers", 1))
        if workers <= 1:
            return [f(x) for x in items]
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(f, items))

    def plot(self, name, x, y, xlabel, ylabel, **kw):
        self.plots.append((name, list(map(float, x)), list(map(float, y)), xlabel, ylabel, kw))


def _guard(fn, tup):
    try:
        return fn(tup)
    except SingMTError as exc:
        raise type(exc)(f"{exc} [parameters: {tup}]") if not hasattr(exc, "path") else exc


def _betas(run: Run, bb: float, default=(0.9,)):
    if "beta" in run.cfg:
        return list(run.cfg["beta"])
    if "beta_factor" in run.cfg:
        return [f * bb for f in run.cfg["beta_factor"]]
    params = run.get("params", {})
    if "beta" in params:
        return [params["beta"]]
    if "beta_factor" in params:
        return [params["beta_factor"] * bb]
    return [f * bb for f in default]


def _lambdas(run: Run, lq_fn, default=(0.0,)):
    if "lambda" in run.cfg:
        return list(run.cfg["lambda"])
    params = run.get("params", {})
    if "lambda_factor" in run.cfg:
        lq = lq_fn()
        return [f * lq for f in run.cfg["lambda_factor"]]
    if "lambda" in params:
        return [params["lambda"]]
    if "lambda_factor" in params:
        return [params["lambda_factor"] * lq_fn()]
    return list(default)


def _q(run: Run) -> float:
    return float(run.get("params", {}).get("q", 2.0))


# ---------------------------------------------------------------------------
# subcommands; each returns (columns, rows, violations)
# ---------------------------------------------------------------------------


def cmd_disk_maximize(run: Run):
    from .maximizer import MaximizeOptions, maximize, sup_convergence_scan

    w = run.weight("disk")
    q = _q(run)
    betas = _betas(run, w.beta_bar)
    lams = _lambdas(run, lambda: lambda_q_disk(q)[0])
    opts = MaximizeOptions(max_iter=int(run.get("max_iter", 3000)), disk_nodes=int(run.get("grid", 1024)))
    reports = []
    if run.get("scan", False):
        for lam in lams:
            rows = sup_convergence_scan(FunctionalParams(betas[0], lam, q, w), betas, "disk",
                                        options=opts, seed=run.seed)
            reports += [(b, lam, r) for b, _, r in rows]
    else:
        tuples = [(b, lam) for lam in lams for b in betas]
        reps = run.pmap(lambda t: _guard(lambda tt: maximize(FunctionalParams(tt[0], tt[1], q, w), "disk",
                                                               options=opts, seed=run.seed), t), tuples)
        reports = [(b, lam, r) for (b, lam), r in zip(tuples, reps)]
    cols = ["beta", "lambda", "value", "zero_value", "residual", "iterations", "b", "gamma", "converged"]
    rows, bad = [], []
    for b, lam, r in reports:
        rows.append([b, lam, r.value.value, r.zero_value, r.residual, r.iterations, r.b, r.gamma, int(r.converged)])
        if r.value.value < r.zero_value * (1 - run.tol.inequality_slack):
            bad.append(f"value below zero-field value at beta={b}, lambda={lam}")
        if r.residual > run.tol.residual:
            bad.append(f"residual {r.residual:.3e} above tolerance at beta={b}, lambda={lam}")
    u = reports[-1][2].field
    run.plot("maximizer_profile", u.nodes[1:], u.values[1:], "r", "u(r)", logx=True)
    if len(reports) > 1:
        run.plot("value_vs_beta", [x[0] for x in reports], [x[2].value.value for x in reports], "beta", "value")
    return cols, rows, bad


def _read_field(path):
    with open(path) as fh:
        head = fh.readline().strip().replace(" ", "")
    if head == "r,u":
        return RadialFunction.from_csv(path)
    if head == "i_r,i_theta,value":
        return PolarGridFunction.from_csv(path)
    raise SchemaError("input CSV must have header 'r,u' or 'i_r,i_theta,value'", "config.input")


def cmd_onofri_check(run: Run):
    from .sampling import random_polar, random_radial

    alphas = run.get("alpha", [0.0, -0.5])
    samples = int(run.get("samples", 1000))
    cols = ["alpha", "sample", "kind", "deficit"]
    if "input" in run.cfg:
        u = _read_field(run.cfg["input"])
        kind = "radial" if isinstance(u, RadialFunction) else "polar"
        tuples = [(a, 0, kind) for a in alphas]
        fields = {t: u for t in tuples}
    else:
        tuples = [(a, s, "radial" if s % 2 == 0 or a > 0 else "polar") for a in alphas for s in range(samples)]
        fields = None

    def one(t):
        a, s, kind = t
        if fields is not None:
            u = fields[t]
        else:
            rng = np.random.default_rng([run.seed, s])
            u = random_radial(rng) if kind == "radial" else random_polar(rng, nonnegative=False)
        return onofri_deficit(u, a)

    defs = run.pmap(lambda t: _guard(one, t), tuples)
    rows = [[a, s, k, d] for (a, s, k), d in zip(tuples, defs)]
    floor = -run.tol.inequality_slack
    bad = [f"deficit {d:.3e} < {floor:.3e} at alpha={a}, sample={s}" for a, s, k, d in rows if d < floor]
    for a in alphas:
        sel = [r for r in rows if r[0] == a]
        run.plot(f"deficits_alpha_{a:g}", [r[1] for r in sel], [r[3] for r in sel], "sample", "deficit")
    run.extra["min_deficit"] = {str(a): min(r[3] for r in rows if r[0] == a) for a in alphas}
    return cols, rows, bad


def cmd_cc_limit(run: Run):
    eps = run.get("eps", [1e-2, 1e-3, 1e-4])
    alphas = run.get("alpha", [0.0])
    n = int(run.get("grid", 4096))
    tuples = [(a, e) for a in alphas for e in eps]

    def one(t):
        a, e = t
        fam = disk_test_family(e, a, n)
        w = ConicalWeight.disk(a)
        return mt_functional_disk(fam.u, FunctionalParams(w.beta_bar, 0.0, 2.0, w)).value

    vals = run.pmap(lambda t: _guard(one, t), tuples)
    cols = ["alpha", "eps", "value", "cc_limit", "rel_err", "threshold", "exceeds"]
    rows = []
    for (a, e), v in zip(tuples, vals):
        cc = math.pi * (1 + math.e) / (1 + a)
        thr = math.pi * math.e / (1 + a) + math.pi / (1 + a)
        rows.append([a, e, v, cc, abs(v - cc) / cc, thr, int(v > thr)])
    for a in alphas:
        sel = [r for r in rows if r[0] == a]
        run.plot(f"cc_alpha_{a:g}", [abs(math.log(r[1])) for r in sel], [r[2] for r in sel],
                 "|log eps|", "functional", hline=sel[0][3])
    return cols, rows, []


def cmd_rearrange_check(run: Run):
    from .sampling import random_polar

    samples = int(run.get("samples", 500))
    n = int(run.get("grid", 32))
    tol = run.tol

    def one(s):
        rng = np.random.default_rng([run.seed, s])
        u = random_polar(rng, n, n)
        v = random_polar(rng, n, n)
        us = rearrange(u)
        errs = []
        for p in (1.0, 2.0, 4.0):
            a = u.lp_norm(p)
            b = float(np.sum(math.pi * np.diff(us.nodes ** 2) * us.values[1:] ** p) ** (1 / p))
            errs.append(abs(a - b) / a)
        hl_l, hl_r = hardy_littlewood_check(u, v)
        dec_l, dec_r = singular_exp_monotonicity_check(u, -0.5)
        return [s, max(errs), hl_l, hl_r, dec_l, dec_r, polar_energy(u), _companion_energy(us)]

    rows = run.pmap(lambda s: _guard(one, s), range(samples))
    cols = ["sample", "lp_rel_err", "hl_rearranged", "hl_original", "dec_rearranged", "dec_original",
            "energy", "energy_rearranged"]
    bad = []
    for r in rows:
        if r[1] > tol.quadrature:
            bad.append(f"L^p norm not preserved (rel err {r[1]:.2e}) at sample {r[0]}")
        if r[2] < r[3] - tol.inequality_slack * max(1.0, abs(r[3])):
            bad.append(f"Hardy-Littlewood violated at sample {r[0]}")
        if r[4] < r[5] * (1 - tol.inequality_slack):
            bad.append(f"singular exponential monotonicity violated at sample {r[0]}")
    run.extra["polya_szego_refinement"] = polya_szego_defects()
    return cols, rows, bad


def _companion_energy(us) -> float:
    from .radial import dirichlet_energy
    return dirichlet_energy(us.companion())


def polya_szego_defects(sizes=(32, 64, 128)):
    """``|E(u*) - E(u)|`` for ``cos^2(pi r/2)``, radial and decreasing, so the two agree in the limit."""
    f = lambda r, th: np.cos(0.5 * math.pi * r) ** 2 + 0 * th  # noqa: E731
    return [[n, abs(polya_szego_defect(PolarGridFunction.from_function(f, n, n)))] for n in sizes]


def cmd_lambda_q(run: Run):
    from .torus import lambda_q_torus

    geometry = run.get("geometry", "torus")
    qs = run.get("q", [2.0])
    n = int(run.get("grid", 256 if geometry == "torus" else 512))

    def one(q):
        if geometry == "disk":
            return lambda_q_disk(q, n)[0]
        return lambda_q_torus(q, n, seed=run.seed)[0]

    vals = run.pmap(lambda q: _guard(one, q), qs)
    ref2 = 4 * math.pi ** 2 if geometry == "torus" else 2.404825557695773 ** 2
    cols = ["geometry", "q", "n", "value", "reference", "rel_err"]
    rows = []
    for q, v in zip(qs, vals):
        ref = ref2 if q == 2 else float("nan")
        rows.append([geometry, q, n, v, ref, abs(v - ref) / ref if q == 2 else float("nan")])
    run.plot("lambda_q", qs, vals, "q", "lambda_q")
    return cols, rows, []


def cmd_torus_green(run: Run):
    from .torus import green_function, lambda_q_value

    n = int(run.get("grid", 256))
    q = _q(run)
    p = tuple(run.get("p", [0.0, 0.0]))
    lams = _lambdas(run, lambda: lambda_q_value(q, n))

    greens = run.pmap(lambda lam: _guard(lambda l: green_function(p, l, q, n), lam), lams)
    cols = ["lambda", "q", "n", "A", "norm_q", "fit_residual"]
    rows = []
    for i, (lam, g) in enumerate(zip(lams, greens)):
        rows.append([lam, q, n, g.A, g.norm_q, g.fit_residual])
        g.write_json(run.out / f"green_{i}.json")
    g = greens[0]
    i0 = int(round(p[0] * n)) % n
    j0 = int(round(p[1] * n)) % n
    k = np.arange(1, n // 2)
    run.plot("green_slice", k / n, g.field.values[(i0 + k) % n, j0], "distance", "G")
    return cols, rows, []


def cmd_test_family(run: Run):
    from .maximizer import threshold_bound
    from .torus import TestFamilySpec, green_function, surface_functional, test_family_w

    n = int(run.get("grid", 256))
    q = _q(run)
    lam = run.get("params", {}).get("lambda", 0.0)
    w = run.weight("torus")
    minimal = [pt for pt, a in zip(w.points, w.orders) if a == w.alpha_bar]
    p = tuple(run.get("p", minimal[0] if minimal else [0.0, 0.0]))
    eps = run.get("eps", [1e-2, 1e-3])
    green = green_function(p, lam, q, n)
    thr = threshold_bound(w, lam, q, n, "torus")

    def one(e):
        spec = TestFamilySpec(p, e, w.alpha_bar, lam, q)
        _, u, rep = test_family_w(spec, w, green)
        val = surface_functional(u, FunctionalParams(w.beta_bar, lam, q, w), rep.local)
        return rep, val

    res = run.pmap(lambda e: _guard(one, e), eps)
    cols = ["eps", "c", "L", "two_pi_c2_over_log_eps", "energy", "value", "threshold", "exceeds"]
    rows = []
    for e, (rep, val) in zip(eps, res):
        rows.append([e, rep.c, rep.L, 2 * math.pi * rep.c ** 2 / abs(math.log(e)), rep.energy,
                     val.value, thr, int(val.value > thr)])
    run.plot("test_family_value", [abs(math.log(e)) for e in eps], [r[5] for r in rows],
             "|log eps|", "functional", hline=thr)
    run.extra["A"] = green.A
    return cols, rows, []


def cmd_supercritical(run: Run):
    from .torus import lambda_q_value, supercritical_family

    n = int(run.get("grid", 256))
    q = _q(run)
    w = run.weight("torus")
    params = run.get("params", {})
    beta = params.get("beta", params.get("beta_factor", 1.0) * w.beta_bar)
    lq = lambda_q_value(q, n)
    lam = params.get("lambda", params.get("lambda_factor", 1.5) * lq)
    eps = run.get("eps", [1e-2, 1e-4, 1e-6])

    res = run.pmap(lambda e: _guard(lambda ee: supercritical_family(ee, beta, lam, q, n, w), e), eps)
    cols = ["eps", "beta", "lambda", "t", "r", "t2_log_eps", "log_value", "saturated"]
    rows = [[e, beta, lam, r.t, r.r, r.extra.get("t2_log_eps", float("nan")), r.value.log_value,
             int(r.value.saturated)] for e, r in zip(eps, res)]
    run.plot("supercritical", [abs(math.log(e)) for e in eps], [r[6] for r in rows], "|log eps|", "log value")
    return cols, rows, []


def cmd_threshold(run: Run):
    from .maximizer import threshold_bound
    from .torus import lambda_q_value

    geometry = run.get("geometry", "torus")
    q = _q(run)
    n = int(run.get("grid", 128))
    w = run.weight(geometry)
    lq_fn = (lambda: lambda_q_disk(q)[0]) if geometry == "disk" else (lambda: lambda_q_value(q, n))
    lams = _lambdas(run, lq_fn)
    vals = run.pmap(lambda lam: _guard(lambda l: threshold_bound(w, l, q, n, geometry), lam), lams)
    cols = ["geometry", "lambda", "q", "threshold"]
    rows = [[geometry, lam, q, v] for lam, v in zip(lams, vals)]
    return cols, rows, []


DISPATCH = {
    "disk-maximize": cmd_disk_maximize,
    "onofri-check": cmd_onofri_check,
    "cc-limit": cmd_cc_limit,
    "rearrange-check": cmd_rearrange_check,
    "lambda-q": cmd_lambda_q,
    "torus-green": cmd_torus_green,
    "test-family": cmd_test_family,
    "supercritical": cmd_supercritical,
    "threshold": cmd_threshold,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def write_outputs(run: Run, command: str, cols, rows, violations) -> None:
    out = run.out
    with open(out / "table.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for r in rows:
            wr.writerow([_cell(x) for x in r])
    report = {
        "command": command,
        "status": "violation" if violations else "ok",
        "config": run.cfg,
        "tolerances": asdict(run.tol),
        "columns": cols,
        "rows": rows,
        "violations": violations,
        "extra": run.extra,
    }
    with open(out / "report.json", "w") as fh:
        json.dump(_json_safe(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if run.emit_plots:
        from .plotting import emit
        for name, x, y, xl, yl, kw in run.plots:
            emit(out, name, x, y, xl, yl, **kw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singmt", description="Singular Moser-Trudinger experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--out", help="output directory (default: config 'out' or ./singmt-out)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--grid", type=int)
    ap.add_argument("--emit-plot-data", action="store_true", help="write .dat/.png plot data")
    ap.add_argument("--tolerance", action="append", default=[], metavar="K=V",
                    help="override a tolerance, e.g. inequality_slack=1e-8")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config) if args.config else {}
    if isinstance(cfg, dict):
        cfg = dict(cfg)
        if "command" in cfg and cfg["command"] != args.command:
            raise SchemaError(f"config is for {cfg['command']!r}, not {args.command!r}", "config.command")
        cfg["command"] = args.command
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.grid is not None:
            cfg["grid"] = args.grid
        if args.out is not None:
            cfg["out"] = args.out
    validate_config(cfg)
    overrides = dict(cfg.get("tolerances", {}))
    for item in args.tolerance:
        key, sep, val = item.partition("=")
        if not sep:
            raise SchemaError(f"expected K=V, got {item!r}", "--tolerance")
        try:
            overrides[key.strip()] = float(val)
        except ValueError:
            raise SchemaError(f"not a number: {val!r}", f"--tolerance {key}")
    try:
        tol = DEFAULT.override(**overrides)
    except KeyError as exc:
        raise SchemaError(str(exc.args[0]), "tolerances")
    out = Path(cfg.get("out", "singmt-out"))
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, tol, out, args.emit_plot_data)
    cols, rows, violations = DISPATCH[args.command](run)
    write_outputs(run, args.command, cols, rows, violations)
    for v in violations[:20]:
        print(f"VIOLATION: {v}", file=sys.stderr)
    print(f"{args.command}: {len(rows)} rows, {len(violations)} violations -> {out}")
    return 2 if violations else 0


def main(argv=None) -> int:
    try:
        return run_command(argv)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SingMTError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
