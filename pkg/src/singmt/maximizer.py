"""Constrained ascent for ``F(u) = int h exp(b u^2)``, ``b = beta (1 + lam ||u||_q^2)``.

Fields are kept on the unit energy sphere ``x^T K x = 1`` of a space from
:mod:`singmt.spaces` (radial on the disk, mean-zero on the torus). The ascent
works on ``log F``. Its first variation as a dual vector is

    d log F = 2 b P_h^T(e v) + beta lam m dN2,    e = w_h e^{b v^2} / F,  m = sum e v^2

with ``dN2 = 2 ||u||_q^{2-q} P_q^T(w_q |v|^{q-2} v)`` the variation of
``||u||_q^2``. The Sobolev gradient ``K^{-1} d log F`` is projected on the
tangent space of the sphere, a Barzilai-Borwein step is taken (halved until
``F`` does not decrease) and the result is renormalized.

A critical point solves ``K u = gamma h u e^{b u^2} + lam_n N^{2-q}|u|^{q-2}u - c``
with ``N = ||u||_q``. Testing with ``u`` fixes the multipliers

    gamma = (1 + lam N^2) / (mu (1 + 2 lam N^2)),   lam_n = lam / (1 + 2 lam N^2),

where ``mu = int h u^2 e^{b u^2}``, so ``gamma mu = 1`` exactly when ``lam = 0``.
On the torus ``c`` makes the right-hand side mean-zero; on the disk ``c = 0``.
The residual is measured in the dual norm ``sqrt(r^T K^{-1} r)``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp, j0, y0

from .config import DEFAULT, Tolerances
from .errors import (
    ConvergenceError,
    InvalidInputError,
    InvalidWeightError,
    RegimeError,
    UnsupportedGeometryError,
)
from .functionals import ConicalWeight, FunctionalParams, disk_test_family, lambda_q_disk
from .radial import (
    ExpValue,
    RadialFunction,
    _exp_value,
    energy_inside,
    geometric_nodes,
    moser_function,
    quadrature_rule,
)
from .spaces import RadialSpace, TorusSpace, lq_norm2

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaximizeOptions:
    max_iter: int = 3000
    residual_tol: float = 1e-8
    init: str = "family"            # family | moser | noise
    init_eps: float = 0.05
    noise: float = 1e-3
    allow_critical: bool = False
    disk_nodes: int = 1024
    disk_eps_min: float = 1e-6
    torus_n: int = 64


@dataclass
class ELResult:
    residual: float
    b: float
    gamma: float
    c: float
    lam_n: float
    mu_log: float                   # log of int h u^2 e^{b u^2}


@dataclass
class MaximizerReport:
    field: object
    value: ExpValue
    iterations: int
    residual: float
    b: float
    gamma: float
    c: float
    lam_n: float
    converged: bool
    saturated: bool
    zero_value: float
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# evaluation on a space
# ---------------------------------------------------------------------------


class _Eval:
    """``log F`` and its pieces at one point ``x``."""

    def __init__(self, space, params: FunctionalParams, x):
        self.x = x
        v = space.P_h @ x
        self.v = v
        if params.lam > 0:
            N2, dN2 = lq_norm2(space, x, params.q)
        else:
            N2, dN2 = (0.0, None)
        self.N2, self.dN2 = N2, dN2
        self.b = params.beta * (1 + params.lam * N2)
        z = space.logw_h + self.b * v * v
        self.logF = float(logsumexp(z))
        self.e = np.exp(z - self.logF)
        self.m = float(np.sum(self.e * v * v))

    def grad(self, space, params):
        g = 2 * self.b * (space.P_h.T @ (self.e * self.v))
        if params.lam > 0:
            g = g + params.beta * params.lam * self.m * self.dN2
        return g


def _el(space, params: FunctionalParams, ev: _Eval) -> ELResult:
    lam, N2 = params.lam, ev.N2
    gF = (1 + lam * N2) / (ev.m * (1 + 2 * lam * N2))      # gamma * F
    lam_n = lam / (1 + 2 * lam * N2)
    rhs = gF * (space.P_h.T @ (ev.e * ev.v))
    if lam > 0:
        rhs = rhs + 0.5 * lam_n * ev.dN2
    r = space.apply_K(ev.x) - rhs
    c = 0.0
    if space.mass is not None:
        c = -float(np.sum(r)) / float(np.sum(space.mass))
        r = r + c * space.mass
    res = math.sqrt(max(float(r @ space.solve_K(r)), 0.0))
    mu_log = ev.logF + math.log(ev.m) if ev.m > 0 else -math.inf
    return ELResult(res, ev.b, gF * math.exp(-ev.logF), c, lam_n, mu_log)


def _disk_space(params: FunctionalParams, nodes) -> RadialSpace:
    alpha = params.weight.disk_order()
    return RadialSpace(nodes, alpha, params.weight.constant_V)


def _torus_space(params: FunctionalParams, n: int) -> TorusSpace:
    from .torus import _check_n, cell_weights

    w = params.weight
    if w.geometry != "torus":
        raise InvalidWeightError("torus mode needs a torus weight")
    n = _check_n(n, 8)
    return TorusSpace(n, np.log(cell_weights(w, n)))


def euler_lagrange_residual(u, params: FunctionalParams, geometry: str = "disk") -> ELResult:
    """Dual-norm residual of the Euler-Lagrange equation and the fitted ``(b, gamma, c)``.

    ``u`` is a :class:`RadialFunction` (disk) or a torus field / array (torus)
    with unit energy.
    """
    if geometry == "disk":
        if not isinstance(u, RadialFunction):
            raise InvalidInputError("disk mode expects a RadialFunction")
        space = _disk_space(params, u.nodes)
        x = u.values[1:-1].copy()
    elif geometry == "torus":
        vals = getattr(u, "values", u)
        vals = np.asarray(vals, dtype=float)
        space = _torus_space(params, vals.shape[0])
        x = vals.ravel()
    else:
        raise UnsupportedGeometryError(f"unknown geometry {geometry!r}")
    ev = _Eval(space, params, x)
    return _el(space, params, ev)


# ---------------------------------------------------------------------------
# ascent
# ---------------------------------------------------------------------------


def _regime(params: FunctionalParams, geometry: str, space) -> tuple:
    """Return ``(subcritical, lambda_q)``."""
    bb = params.weight.beta_bar
    if params.lam > 0:
        if geometry == "disk":
            lq = lambda_q_disk(params.q)[0]
        else:
            from .torus import lambda_q_value
            lq = lambda_q_value(params.q, space.n)
    else:
        lq = math.inf
    return params.beta < bb and params.lam < lq, lq


def _initial(space, params: FunctionalParams, geometry: str, opts: MaximizeOptions, rng):
    if opts.init not in ("family", "moser", "noise"):
        raise InvalidInputError(f"unknown init {opts.init!r}")
    if geometry == "disk":
        r = space.nodes[1:-1]
        if opts.init == "family":
            x = space.from_function(disk_test_family(opts.init_eps, space.alpha).u)
        elif opts.init == "moser":
            x = space.from_function(moser_function(0.2))
        else:
            x = np.cos(0.5 * math.pi * r)
        x = x + opts.noise * rng.standard_normal(x.size) * np.sin(math.pi * r)
    else:
        from .torus import grid_distance, moser_profile, CHART_RADIUS
        n = space.n
        w = params.weight
        minimal = [p for p, a in zip(w.points, w.orders) if a == w.alpha_bar]
        p = minimal[0] if minimal else (0.0, 0.0)
        if opts.init == "family":
            x = _torus_family_init(params, n, p, opts.init_eps)
        elif opts.init == "moser":
            x = moser_profile(grid_distance(n, p), 0.2 * CHART_RADIUS, CHART_RADIUS).ravel()
        else:
            xs = np.arange(n) / n
            x = (np.cos(2 * math.pi * xs)[:, None] * np.ones(n)[None, :]).ravel()
        x = x + opts.noise * rng.standard_normal(x.size)
        x = x - x.mean()
    return x / math.sqrt(space.energy(x))


def _torus_family_init(params, n, p, eps):
    from .torus import TestFamilySpec, green_function, test_family_w

    for e in np.geomspace(eps, 1e-6, 31):
        spec = TestFamilySpec(p, e, params.weight.alpha_bar, 0.0, params.q)
        try:
            spec.validate()
        except Exception:
            continue
        green = green_function(p, 0.0, params.q, max(n, 64))
        w, u, _ = test_family_w(spec, params.weight, green)
        vals = u.values
        if vals.shape[0] != n:
            k = vals.shape[0] // n
            vals = vals[::k, ::k]
        return vals.ravel()
    raise InvalidInputError("no admissible test-family scale for initialization")


def _saturated(space, geometry: str, ev: _Eval, x) -> bool:
    if not math.isfinite(ev.logF) or ev.logF > 700:
        return True
    if geometry == "disk":
        u = space.to_function(x)
        return energy_inside(u, space.nodes[4]) > 0.5
    return False


def maximize(params: FunctionalParams, geometry: str = "disk", grid=None,
             options: Optional[MaximizeOptions] = None, seed: int = 0,
             trace: Optional[str] = None, x0=None, tol: Tolerances = DEFAULT) -> MaximizerReport:
    """Projected Sobolev-gradient ascent of ``log F`` on the unit energy sphere.

    ``grid`` is the radial node array (disk) or the torus size ``n``. ``x0``
    (a field on the same grid) overrides the initialization, for warm starts.
    Disk mode is radial: the weight must be radial about the origin.
    """
    opts = options or MaximizeOptions()
    if geometry == "disk":
        nodes = geometric_nodes(opts.disk_nodes, opts.disk_eps_min) if grid is None else np.asarray(grid, float)
        space = _disk_space(params, nodes)
        zero = math.pi * space.V / (1 + space.alpha)
    elif geometry == "torus":
        space = _torus_space(params, opts.torus_n if grid is None else int(grid))
        zero = float(np.sum(np.exp(space.logw_h)))
    else:
        raise UnsupportedGeometryError(f"unknown geometry {geometry!r}")

    sub, lq = _regime(params, geometry, space)
    if not sub and not opts.allow_critical:
        raise RegimeError(f"beta = {params.beta}, lambda = {params.lam} is not subcritical "
                          f"(beta_bar = {params.weight.beta_bar}, lambda_q = {lq}); pass allow_critical")
    rng = np.random.default_rng(seed)
    if x0 is not None:
        x = np.asarray(getattr(x0, "values", x0), dtype=float)
        x = x[1:-1].copy() if geometry == "disk" and x.size == space.nodes.size else x.ravel().copy()
        if space.mass is not None:
            x = x - x.mean()
        x = x / math.sqrt(space.energy(x))
    else:
        x = _initial(space, params, geometry, opts, rng)

    ev = _Eval(space, params, x)
    el = _el(space, params, ev)
    history = [(0, ev.logF, el.residual, 0.0)]
    s = None
    prev = None
    converged = el.residual <= opts.residual_tol
    saturated = False
    it = 0
    while not converged and it < opts.max_iter:
        it += 1
        G = ev.grad(space, params)
        g = space.solve_K(G)
        g = g - float(x @ G) * x
        gnorm = math.sqrt(max(space.energy(g), 0.0))
        if gnorm == 0:
            break
        if prev is not None:
            dx, dg = x - prev[0], g - prev[1]
            num = space.energy(dx)
            den = abs(float(dx @ space.apply_K(dg)))
            s = num / den if den > 0 else s
        if s is None or not math.isfinite(s):
            s = 0.1 / gnorm
        s = min(s, 0.5 / gnorm)
        slack = 8 * np.finfo(float).eps * max(1.0, abs(ev.logF))   # rounding only
        for _ in range(60):
            y = x + s * g
            y = y / math.sqrt(space.energy(y))
            ey = _Eval(space, params, y)
            if ey.logF >= ev.logF - slack:
                break
            s *= 0.5
        else:
            break                        # no ascent possible at working precision
        step = math.sqrt(max(space.energy(y - x), 0.0))
        prev = (x, g)
        x, ev = y, ey
        el = _el(space, params, ev)
        history.append((it, ev.logF, el.residual, step))
        if _saturated(space, geometry, ev, x):
            saturated = True
            if not sub:
                break
        converged = el.residual <= opts.residual_tol

    field_out = space.to_function(x) if geometry == "disk" else _torus_field(x, space.n)
    report = MaximizerReport(field_out, _exp_value(ev.logF), it, el.residual, el.b, el.gamma,
                             el.c, el.lam_n, converged, saturated, zero, history)
    if trace:
        write_trace(report, trace)
    if not converged and sub:
        raise ConvergenceError(f"ascent stopped after {it} iterations with residual {el.residual:.3e}",
                               diagnostics={"value": ev.logF, "residual": el.residual}, last=report)
    return report


def _torus_field(x, n):
    from .torus import TorusField
    v = x.reshape(n, n)
    return TorusField(v - v.mean())


def write_trace(report: MaximizerReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "value", "residual", "step"])
        for it, lv, res, step in report.history:
            w.writerow([it, repr(math.exp(lv) if lv < 700 else math.inf), repr(res), repr(step)])


def sup_convergence_scan(params: FunctionalParams, betas: Sequence[float], geometry: str = "disk",
                         grid=None, options: Optional[MaximizeOptions] = None, seed: int = 0):
    """Maximize along an increasing ``beta`` grid, warm-starting each run from the previous maximizer.

    Warm starts make the column nondecreasing: the previous maximizer is
    feasible for the next ``beta`` and ascent never lowers the value.
    """
    betas = [float(b) for b in betas]
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise InvalidInputError("beta grid must be strictly increasing")
    if betas and betas[-1] >= params.weight.beta_bar:
        raise InvalidInputError("beta grid must stay below beta_bar")
    rows = []
    x0 = None
    for b in betas:
        rep = maximize(replace(params, beta=b), geometry, grid, options, seed, x0=x0)
        rows.append((b, rep.value.value, rep))
        x0 = rep.field
    return rows


# ---------------------------------------------------------------------------
# threshold
# ---------------------------------------------------------------------------


def disk_robin_center(lam: float = 0.0, q: float = 2.0, n: int = 2048,
                      eps_min: float = 1e-10, max_iter: int = 500, tol: Tolerances = DEFAULT) -> float:
    """Robin constant at the centre of the disk for ``-Lap G = delta + lam ||G||_q^{2-q}|G|^{q-2}G``.

    ``G = -log r / (2 pi) + xi`` with ``xi`` a radial Galerkin solution; ``A = xi(0)``.
    """
    if lam < 0:
        raise InvalidInputError("lambda must be >= 0")
    if lam == 0:
        return 0.0
    lq = lambda_q_disk(q)[0]
    if lam >= lq:
        raise RegimeError(f"lambda = {lam} is not below lambda_q = {lq}")
    nodes = geometric_nodes(n, eps_min)
    space = RadialSpace(nodes)
    rule = quadrature_rule(space.template, 0.0)
    P = rule.P[:, 1:-1].tocsr()
    w = np.exp(rule.logw)
    sing = -np.log(rule.r) / (2 * math.pi)
    xi = np.zeros(space.n)
    for _ in range(max_iter):
        G = sing + P @ xi
        N = float(np.sum(w * np.abs(G) ** q) ** (1 / q))
        f = lam * N ** (2 - q) * np.abs(G) ** (q - 2) * G
        new = space.solve_K(P.T @ (w * f))
        change = float(np.max(np.abs(new - xi)))
        xi = new
        if change <= tol.fixed_point * max(1.0, float(np.max(np.abs(xi)))):
            return float(xi[0])
    raise ConvergenceError("disk Green fixed point did not converge", diagnostics={"change": change}, last=xi)


def disk_robin_center_bessel(lam: float) -> float:
    """Closed form for ``q = 2``: ``G = -Y0(k r)/4 + Y0(k) J0(k r) / (4 J0(k))``, ``k^2 = lam``."""
    if lam == 0:
        return 0.0
    k = math.sqrt(lam)
    return -(math.log(k / 2) + np.euler_gamma) / (2 * math.pi) + float(y0(k)) / (4 * float(j0(k)))


def threshold_bound(weight: ConicalWeight, lam: float = 0.0, q: float = 2.0, n: int = 128,
                    geometry: Optional[str] = None) -> float:
    """``pi e / (1 + abar) * max K(p) e^{beta_bar A_p} + |Sigma|_h`` over points of minimal order."""
    geometry = geometry or weight.geometry
    bb = weight.beta_bar
    ab = weight.alpha_bar
    if geometry == "disk":
        alpha = weight.disk_order()
        V = weight.constant_V
        area = math.pi * V / (1 + alpha)
        if alpha <= 0:
            best = V * math.exp(bb * disk_robin_center(lam, q))
        else:
            if lam > 0:
                raise UnsupportedGeometryError("off-centre disk Robin constants need lambda = 0")
            s = alpha / (alpha + 2)                    # maximizes |x|^{2a} (1-|x|^2)^2
            best = V * s ** alpha * (1 - s) ** 2
        return math.pi * math.e / (1 + ab) * best + area
    if geometry != "torus":
        raise UnsupportedGeometryError(f"unknown geometry {geometry!r}")
    from .torus import green_function, grid_index, weighted_area

    if weight.geometry != "torus":
        raise InvalidWeightError("torus threshold needs a torus weight")
    area = weighted_area(weight, n)
    if ab < 0:
        cands = [p for p, a in zip(weight.points, weight.orders) if a == ab]
    else:
        sing = {grid_index(p, n) for p in weight.points}
        cands = [(i / n, j / n) for i in range(n) for j in range(n) if (i, j) not in sing]
    if not cands:
        raise InvalidWeightError("no candidate points of minimal order")
    # the flat torus is homogeneous, so A_p does not depend on p
    A = green_function(cands[0], lam, q, n).A
    if ab < 0:
        Kmax = max(weight.K(p) for p in cands)
    else:
        pts = np.array(cands)
        vals = weight.V_at(pts[:, 0], pts[:, 1]) * np.ones(len(cands))
        for p, a in zip(weight.points, weight.orders):
            d = np.array([weight.distance(c, p) for c in cands])
            vals = vals * d ** (2 * a)
        Kmax = float(np.max(vals))
    return math.pi * math.e / (1 + ab) * Kmax * math.exp(bb * A) + area
