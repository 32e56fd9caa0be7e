"""Radial functions on the unit disk.

A :class:`RadialFunction` stores node values on ``0 = r_0 < r_1 < ... < r_N = 1``.
Two interpolation rules are supported:

``loglinear`` (default)
    piecewise linear in ``log r`` on ``[r_1, 1]`` and constant on ``[0, r_1]``.
    The Dirichlet energy of this interpolant is available in closed form,
    ``2*pi * sum (u_{i+1} - u_i)**2 / log(r_{i+1} / r_i)``.

``step``
    piecewise constant, ``values[k]`` on the annulus ``(r_{k-1}, r_k]``. This is
    what symmetric rearrangement of a cell function produces.

Exponential integrals ``int_{D_delta} |x|^{2 alpha} exp(beta u^2 + c u) dx`` are
evaluated with Gauss-Legendre on every cell after the substitution
``s = r^{1+alpha}``, which turns the weight into ``2*pi*s/(1+alpha) ds``. Cell
contributions are accumulated with log-sum-exp.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .errors import (
    GeometryError,
    InvalidInputError,
    InvalidOrderError,
    MonotonicityError,
)

DEFAULT_EPS_MIN = 1e-8
DEFAULT_NODES = 4096
GL_ORDER = 8
MONOTONE_TOL = 1e-12
_LOG_FLOAT_MAX = math.log(np.finfo(float).max)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


class ExpValue(NamedTuple):
    """Result of an exponential integral; ``saturated`` marks float overflow."""

    value: float
    log_value: float
    saturated: bool

    def __float__(self):
        return self.value


def _exp_value(log_value: float) -> ExpValue:
    if log_value >= _LOG_FLOAT_MAX:
        return ExpValue(math.inf, float(log_value), True)
    return ExpValue(math.exp(log_value), float(log_value), False)


def check_order(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha > -1.0 or not math.isfinite(alpha):
        raise InvalidOrderError(f"conical order must satisfy alpha > -1, got {alpha}")
    return alpha


def geometric_nodes(n: int = DEFAULT_NODES, eps_min: float = DEFAULT_EPS_MIN,
                    extra: Sequence[float] = ()) -> np.ndarray:
    """``[0, eps_min**(1 - i/n) for i = 0..n]`` merged with ``extra`` radii in (0, 1)."""
    if n < 8:
        raise InvalidInputError("need at least 8 geometric nodes")
    if not 0.0 < eps_min < 1.0:
        raise InvalidInputError("eps_min must lie in (0, 1)")
    r = eps_min ** (1.0 - np.arange(n + 1) / n)
    extra = np.asarray([x for x in extra if 0.0 < x < 1.0], dtype=float)
    r = np.concatenate([[0.0], r, extra])
    r = np.unique(r)
    # drop nodes that collide (relative gap < 1e-9) with a requested extra node
    if extra.size:
        keep = np.ones(r.size, dtype=bool)
        gaps = np.diff(np.log(np.maximum(r, 1e-300)))
        for i in np.nonzero(gaps[1:] < 1e-9)[0] + 1:
            if r[i] in extra:
                keep[i + 1] = False
            else:
                keep[i] = False
        r = r[keep]
    r[-1] = 1.0
    return r


@dataclass(frozen=True, eq=False)
class RadialFunction:
    nodes: np.ndarray
    values: np.ndarray
    kind: str = "loglinear"
    bins: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        if self.kind not in ("loglinear", "step"):
            raise InvalidInputError(f"unknown interpolation kind {self.kind!r}")
        if nodes.ndim != 1 or nodes.shape != values.shape:
            raise InvalidInputError("nodes and values must be 1-d arrays of equal length")
        if nodes.size < 9:
            raise InvalidInputError("a radial function needs N >= 8 cells")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise InvalidInputError("nodes must start at 0 and end at 1")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidInputError("nodes must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("non-finite node values")
        scale = max(1.0, float(np.max(np.abs(values))))
        if abs(values[-1]) > 1e-12 * scale:
            raise InvalidInputError(f"u(1) must vanish, got {values[-1]:.3e}")
        if self.kind == "step" and values[0] != values[1]:
            raise InvalidInputError("step profiles carry values[0] == values[1]")
        if self.bins is not None:
            bins = np.asarray(self.bins, dtype=float)
            if bins[0] != 0.0 or bins[-1] != 1.0 or np.any(np.diff(bins) <= 0) or bins.size < 3:
                raise InvalidInputError("bins must increase from 0 to 1")
            object.__setattr__(self, "bins", bins)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], n: int = DEFAULT_NODES,
                      eps_min: float = DEFAULT_EPS_MIN, extra: Sequence[float] = ()):
        nodes = geometric_nodes(n, eps_min, extra)
        values = np.asarray(f(nodes), dtype=float)
        values[-1] = 0.0 if abs(values[-1]) < 1e-9 else values[-1]
        return cls(nodes, values)

    @classmethod
    def zero(cls, n: int = 64, eps_min: float = DEFAULT_EPS_MIN):
        nodes = geometric_nodes(n, eps_min)
        return cls(nodes, np.zeros_like(nodes))

    # -- evaluation -------------------------------------------------------

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        flat = r.ravel()
        res = out.ravel()
        if self.kind == "step":
            idx = np.searchsorted(self.nodes, flat, side="left")
            idx = np.clip(idx, 1, self.nodes.size - 1)
            res[:] = self.values[idx]
            res[flat > 1.0] = 0.0
            return out if r.ndim else float(out)
        r1 = self.nodes[1]
        inner = flat <= r1
        res[inner] = self.values[1]
        outer = ~inner & (flat <= 1.0)
        t = np.log(self.nodes[1:])
        res[outer] = np.interp(np.log(flat[outer]), t, self.values[1:])
        res[flat > 1.0] = 0.0
        return out if r.ndim else float(out)

    def with_values(self, values) -> "RadialFunction":
        return RadialFunction(self.nodes, values, self.kind, self.bins)

    def scaled(self, factor: float) -> "RadialFunction":
        return RadialFunction(self.nodes, factor * self.values, self.kind, self.bins)

    def is_decreasing(self, tol: float = MONOTONE_TOL) -> bool:
        return bool(np.all(np.diff(self.values) <= tol))

    def companion(self) -> "RadialFunction":
        """Continuous log-linear stand-in for a step profile.

        The profile is first averaged (area-weighted) over the annuli cut by
        ``bins`` (its own annuli when ``bins`` is None). Each average is placed
        at the geometric mid-radius of its annulus (``e_1 / sqrt 2`` for the
        central disk) and the function is pinned to 0 at ``r = 1``.
        """
        if self.kind == "loglinear":
            return self
        if "companion" in self._cache:
            return self._cache["companion"]
        R = self.nodes
        if self.bins is None:
            edges, avg = R, self.values[1:]
        else:
            edges = self.bins
            # cumulative integral of u 2 pi r dr at the nodes, then at the bin edges
            cum = np.concatenate([[0.0], np.cumsum(np.diff(R ** 2) * self.values[1:])])
            k = np.clip(np.searchsorted(R, edges, side="left"), 1, R.size - 1)
            at = cum[k - 1] + (edges ** 2 - R[k - 1] ** 2) * self.values[k]
            avg = np.diff(at) / np.diff(edges ** 2)
        mids = np.sqrt(edges[1:-1] * edges[2:])
        mids = np.concatenate([[edges[1] / math.sqrt(2.0)], mids])
        nodes = np.concatenate([[0.0], mids, [1.0]])
        vals = np.concatenate([[avg[0]], avg, [0.0]])
        comp = RadialFunction(nodes, vals)
        self._cache["companion"] = comp
        return comp

    # -- serialisation ----------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "u"])
            for r, u in zip(self.nodes, self.values):
                w.writerow([repr(float(r)), repr(float(u))])

    @classmethod
    def from_csv(cls, path, kind: str = "loglinear") -> "RadialFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["r", "u"]:
            raise InvalidInputError("radial CSV must start with header 'r,u'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        return cls(data[:, 0], data[:, 1], kind)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


class QuadRule(NamedTuple):
    """Points, log-weights and the sparse node-to-point interpolation matrix.

    ``sum(exp(logw) * F(P @ values))`` approximates
    ``int_{r_lo < |x| < r_hi} |x|^{2 alpha} F(u) dx``.
    """

    r: np.ndarray
    logw: np.ndarray
    P: sparse.csr_matrix


def quadrature_rule(u: RadialFunction, alpha: float = 0.0, r_hi: float = 1.0,
                    r_lo: float = 0.0) -> QuadRule:
    alpha = check_order(alpha)
    if not 0.0 <= r_lo < r_hi <= 1.0:
        raise InvalidInputError(f"need 0 <= r_lo < r_hi <= 1, got {r_lo}, {r_hi}")
    key = ("rule", alpha, r_hi, r_lo)
    if key in u._cache:
        return u._cache[key]
    a1 = 1.0 + alpha
    nodes = u.nodes
    nn = nodes.size
    if u.kind == "step":
        lo = np.clip(nodes[:-1], r_lo, r_hi)
        hi = np.clip(nodes[1:], r_lo, r_hi)
        ok = hi > lo
        k = np.nonzero(ok)[0] + 1
        w = math.pi / a1 * (hi[ok] ** (2 * a1) - lo[ok] ** (2 * a1))
        r = 0.5 * (lo[ok] + hi[ok])
        P = sparse.csr_matrix((np.ones(k.size), (np.arange(k.size), k)), shape=(k.size, nn))
        rule = QuadRule(r, np.log(w), P)
        u._cache[key] = rule
        return rule

    rows_r, rows_lw, cols, data = [], [], [], []
    npts = 0
    # central disk [0, r_1]: u is constant there
    r1 = nodes[1]
    c_hi = min(r1, r_hi)
    if c_hi > r_lo:
        w = math.pi / a1 * (c_hi ** (2 * a1) - r_lo ** (2 * a1))
        rows_r.append(np.array([0.5 * (r_lo + c_hi)]))
        rows_lw.append(np.array([math.log(w)]))
        cols.append(np.array([1]))
        data.append(np.array([1.0]))
        npts += 1
    a = nodes[1:-1]
    b = nodes[2:]
    lo = np.maximum(a, r_lo)
    hi = np.minimum(b, r_hi)
    ok = hi > lo
    idx = np.nonzero(ok)[0] + 1          # left node index of each used cell
    if idx.size:
        sa = lo[ok] ** a1
        sb = hi[ok] ** a1
        half = 0.5 * (sb - sa)
        mid = 0.5 * (sb + sa)
        s = mid[:, None] + half[:, None] * _GL_X[None, :]
        rr = s ** (1.0 / a1)
        lw = np.log(half[:, None] * _GL_W[None, :]) + np.log(2 * math.pi / a1 * s)
        ta = np.log(nodes[idx])[:, None]
        tb = np.log(nodes[idx + 1])[:, None]
        theta = (np.log(rr) - ta) / (tb - ta)
        m = rr.size
        pid = np.arange(npts, npts + m)
        rows_r.append(rr.ravel())
        rows_lw.append(lw.ravel())
        left = np.repeat(idx, GL_ORDER)
        cols += [left, left + 1]
        data += [(1.0 - theta).ravel(), theta.ravel()]
        prow = np.concatenate([pid, pid])
        npts += m
    else:
        prow = np.zeros(0, dtype=int)
    r = np.concatenate(rows_r) if rows_r else np.zeros(0)
    logw = np.concatenate(rows_lw) if rows_lw else np.zeros(0)
    if c_hi > r_lo:
        prow = np.concatenate([[0], prow])
    P = sparse.csr_matrix((np.concatenate(data), (prow, np.concatenate(cols))),
                          shape=(npts, nn))
    rule = QuadRule(r, logw, P)
    u._cache[key] = rule
    return rule


def radial_integral(f: Callable[[np.ndarray], np.ndarray], R: float = 1.0, alpha: float = 0.0,
                    n: int = 2048, eps_min: float = 1e-10) -> float:
    """``int_{D_R} |x|^{2 alpha} f(|x|) dx`` for a radial integrand given pointwise.

    Uses the same cellwise Gauss-Legendre rule as the exponential integrals,
    on a geometric grid scaled to ``[0, R]``; the central disk of radius
    ``R * eps_min`` is handled by a single midpoint evaluation.
    """
    alpha = check_order(alpha)
    a1 = 1.0 + alpha
    nodes = geometric_nodes(n, eps_min) * R
    sa = nodes[1:-1] ** a1
    sb = nodes[2:] ** a1
    half = 0.5 * (sb - sa)
    s = 0.5 * (sb + sa)[:, None] + half[:, None] * _GL_X[None, :]
    r = s ** (1.0 / a1)
    w = half[:, None] * _GL_W[None, :] * (2 * math.pi / a1) * s
    total = float(np.sum(w * f(r)))
    r1 = nodes[1]
    total += math.pi / a1 * r1 ** (2 * a1) * float(f(np.array([0.5 * r1]))[0])
    return total


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def dirichlet_energy(u: RadialFunction) -> float:
    """Exact Dirichlet energy of the interpolant (of the companion for step profiles)."""
    u = u.companion()
    t = np.log(u.nodes[1:])
    du = np.diff(u.values[1:])
    return float(2 * math.pi * np.sum(du * du / np.diff(t)))


def energy_inside(u: RadialFunction, r: float) -> float:
    """``int_{D_r} |grad u|^2``; exact for the log-linear interpolant."""
    u = u.companion()
    if r <= u.nodes[1]:
        return 0.0
    t = np.log(u.nodes[1:])
    cell = 2 * math.pi * np.diff(u.values[1:]) ** 2 / np.diff(t)
    tr = math.log(min(r, 1.0))
    frac = np.clip((tr - t[:-1]) / np.diff(t), 0.0, 1.0)
    return float(np.sum(cell * frac))


def weighted_exp_integral(u: RadialFunction, alpha: float = 0.0, quad_coeff: float = 0.0,
                          lin_coeff: float = 0.0, delta: float = 1.0) -> ExpValue:
    """``int_{D_delta} |x|^{2 alpha} exp(quad_coeff u^2 + lin_coeff u) dx``."""
    alpha = check_order(alpha)
    if quad_coeff < 0:
        raise InvalidInputError("quad_coeff must be >= 0")
    if not 0.0 < delta <= 1.0:
        raise InvalidInputError("delta must lie in (0, 1]")
    rule = quadrature_rule(u, alpha, delta)
    v = rule.P @ u.values
    return _exp_value(logsumexp(rule.logw + quad_coeff * v * v + lin_coeff * v))


def lp_norm(u: RadialFunction, q: float, alpha: float = 0.0) -> float:
    """``(int_D |x|^{2 alpha} |u|^q dx)^(1/q)``."""
    if q <= 0:
        raise InvalidInputError("q must be positive")
    rule = quadrature_rule(u, alpha)
    v = np.abs(rule.P @ u.values)
    with np.errstate(divide="ignore"):
        lse = logsumexp(rule.logw + q * np.log(v))
    return float(math.exp(lse / q)) if np.isfinite(lse) else 0.0


def rescale(u: RadialFunction, delta: float) -> RadialFunction:
    """``x -> u(delta x)`` for ``u`` supported in ``D_delta`` (``delta`` must be a node)."""
    hits = np.nonzero(np.isclose(u.nodes, delta, rtol=0, atol=1e-15))[0]
    if not hits.size:
        raise GeometryError("rescale radius must be a grid node")
    k = int(hits[0])
    if np.any(np.abs(u.values[k:]) > 0):
        raise GeometryError("function is not supported in D_delta")
    nodes = u.nodes[: k + 1] / delta
    nodes[-1] = 1.0
    return RadialFunction(nodes, u.values[: k + 1], u.kind)


def power_change_of_variables(u: RadialFunction, alpha: float) -> RadialFunction:
    """``v(r) = sqrt(1+alpha) u(r^{1/(1+alpha)})``.

    The log-linear structure is preserved exactly by mapping nodes
    ``r_i -> r_i^{1+alpha}``, so energy is conserved to rounding and the
    weighted exponential integral transforms with the factor ``1/(1+alpha)``.
    """
    alpha = check_order(alpha)
    a1 = 1.0 + alpha
    nodes = u.nodes ** a1
    nodes[0], nodes[-1] = 0.0, 1.0
    return RadialFunction(nodes, math.sqrt(a1) * u.values, u.kind)


def radial_decay_bound(u: RadialFunction, r: float, tol: float = MONOTONE_TOL):
    """Return ``(u(r)^2, -(1/2pi)(1 - int_{D_r}|grad u|^2) log r)``."""
    if not 0.0 < r < 1.0:
        raise InvalidInputError("r must lie in (0, 1)")
    if not u.is_decreasing(tol):
        raise MonotonicityError("radial decay bound needs a decreasing profile")
    lhs = float(u(r)) ** 2
    rhs = -(1.0 - energy_inside(u, r)) * math.log(r) / (2 * math.pi)
    return lhs, rhs


def moser_function(rho: float, n: int = DEFAULT_NODES, eps_min: float = DEFAULT_EPS_MIN) -> RadialFunction:
    """Truncated logarithm with unit Dirichlet energy concentrating at the origin."""
    if not 0.0 < rho < 1.0:
        raise InvalidInputError("rho must lie in (0, 1)")
    eps_min = min(eps_min, rho * 1e-3)
    nodes = geometric_nodes(n, eps_min, extra=[rho])
    L = math.log(1.0 / rho)
    vals = np.where(nodes <= rho, math.sqrt(L),
                    np.log(1.0 / np.maximum(nodes, rho)) / math.sqrt(L)) / math.sqrt(2 * math.pi)
    vals[-1] = 0.0
    return RadialFunction(nodes, vals)


def onofri_sharpness_family(eps: float, alpha: float, gamma: float, n: int = DEFAULT_NODES,
                            eps_min: Optional[float] = None) -> RadialFunction:
    """Bubble ``-2 log(1 + (r/eps)^{2(1+alpha)}) + L`` glued to ``-4(1+alpha) log r`` at ``gamma*eps``."""
    alpha = check_order(alpha)
    if not 0.0 < eps < 1.0 or gamma <= 1.0:
        raise InvalidInputError("need eps in (0,1) and gamma > 1")
    R = gamma * eps
    if R >= 1.0:
        raise GeometryError(f"gamma*eps = {R} must be < 1")
    k = 2 * (1 + alpha)
    gk = gamma ** k
    L = 2 * math.log((1 + gk) / gk) - 2 * k * math.log(eps)
    if eps_min is None:
        eps_min = min(DEFAULT_EPS_MIN, eps * 1e-4)
    nodes = geometric_nodes(n, eps_min, extra=[R, eps])
    with np.errstate(divide="ignore"):
        inner = -2 * np.log1p((nodes / eps) ** k) + L
        outer = -2 * k * np.log(np.maximum(nodes, R))
    vals = np.where(nodes <= R, inner, outer)
    vals[-1] = 0.0
    return RadialFunction(nodes, vals)


def sharpness_family_constant(eps: float, alpha: float, gamma: float) -> float:
    k = 2 * (1 + alpha)
    gk = gamma ** k
    return 2 * math.log((1 + gk) / gk) - 2 * k * math.log(eps)


# ---------------------------------------------------------------------------
# Liouville bubbles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BubbleProfile:
    """Entire radial solution of ``-Lap eta = V0 |x|^{2 alpha} exp(2 beta_bar eta)``.

    ``eta(r) = -(1/beta_bar) log(1 + lam r^{2(1+alpha)})`` with
    ``beta_bar = 4 pi (1 + alpha_bar)`` and ``lam = beta_bar V0 / (4 (1+alpha)^2)``.
    With ``stereographic=True`` the object instead represents
    ``u0 = log(4 / (1 + |x|^2)^2)``, which solves ``-Lap u0 = 2 exp(u0)``.
    """

    alpha: float = 0.0
    V0: float = 1.0
    alpha_bar: float = 0.0
    stereographic: bool = False

    @property
    def beta_bar(self) -> float:
        return 4 * math.pi * (1 + self.alpha_bar)

    @property
    def lam(self) -> float:
        return self.beta_bar * self.V0 / (4 * (1 + self.alpha) ** 2)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.stereographic:
            return math.log(4.0) - 2 * np.log1p(r * r)
        return -np.log1p(self.lam * r ** (2 * (1 + self.alpha))) / self.beta_bar

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.stereographic:
            return -4 * r / (1 + r * r)
        k = 2 * (1 + self.alpha)
        return -self.lam * k * r ** (k - 1) / (1 + self.lam * r ** k) / self.beta_bar

    def density(self, r):
        """Right-hand side of the Liouville equation at radius ``r``."""
        r = np.asarray(r, dtype=float)
        if self.stereographic:
            return 2 * np.exp(self(r))
        return self.V0 * r ** (2 * self.alpha) * np.exp(2 * self.beta_bar * self(r))

    def total_mass(self) -> float:
        """``int_{R^2}`` of the density, ``(1+alpha)/(1+alpha_bar)`` (``4 pi`` for u0)."""
        if self.stereographic:
            return 4 * math.pi
        return (1 + self.alpha) / (1 + self.alpha_bar)

    def tail_mass(self, R: float) -> float:
        """Closed-form mass outside ``D_R``."""
        if self.stereographic:
            return 4 * math.pi / (1 + R * R)
        S = self.lam * R ** (2 * (1 + self.alpha))
        return self.total_mass() / (1 + S)


def bubble_profile(alpha: float, V0: float = 1.0, alpha_bar: Optional[float] = None,
                   stereographic: bool = False) -> BubbleProfile:
    if stereographic:
        return BubbleProfile(0.0, 1.0, 0.0, True)
    alpha = check_order(alpha)
    if not V0 > 0:
        raise InvalidInputError("V0 must be positive")
    alpha_bar = min(0.0, alpha) if alpha_bar is None else check_order(alpha_bar)
    return BubbleProfile(alpha, float(V0), alpha_bar, False)


def stereographic_energy(r: float) -> float:
    """Closed form of ``int_{D_r} |grad u0|^2``."""
    return 16 * math.pi * (math.log1p(r * r) - r * r / (1 + r * r))


def stereographic_u_exp_u(r: float) -> float:
    """Closed form of ``int_{D_r} u0 exp(u0)``; tends to ``8 pi log 2 - 8 pi``."""
    T = 1 + r * r
    return 4 * math.pi * (math.log(4.0) * (1 - 1 / T) - 2 * (1 - (math.log(T) + 1) / T))


# ---------------------------------------------------------------------------
# concentration radius
# ---------------------------------------------------------------------------


def comparison_log(r):
    """``log f(r)`` with ``f = 1/(r^2 log^2 r)`` on ``(0, 1/e]`` and ``e^2`` beyond."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = -2 * np.log(r) - 2 * np.log(np.abs(np.log(r)))
    return np.where(r <= math.exp(-1.0), inner, 2.0)


@dataclass(frozen=True)
class ConcentrationReport:
    delta: float
    tau: float
    tail: float
    fallback_used: bool
    delta_tilde: float


def select_concentration_radius(u: RadialFunction, fallback: float,
                                energy_budget: Optional[float] = None) -> ConcentrationReport:
    """Smallest grid radius beyond which ``exp(4 pi u^2)`` is dominated by ``f``.

    When the domination holds on every node the radius is the fallback; if an
    ``energy_budget`` is given the fallback is halved until the energy inside
    it does not exceed the budget.
    """
    if not 0.0 < fallback < 1.0:
        raise InvalidInputError("fallback radius must lie in (0, 1)")
    if not u.is_decreasing():
        raise MonotonicityError("concentration radius needs a decreasing profile")
    r = u.nodes[1:]
    ok = 4 * math.pi * u.values[1:] ** 2 <= comparison_log(r)
    bad = np.nonzero(~ok)[0]
    if bad.size:
        delta_tilde = float(r[bad[-1] + 1]) if bad[-1] + 1 < r.size else 1.0
    else:
        delta_tilde = 0.0
    used = delta_tilde == 0.0
    delta = fallback if used else delta_tilde
    if used and energy_budget is not None:
        while energy_inside(u, delta) > energy_budget and delta > u.nodes[1]:
            delta *= 0.5
    if not delta < 1.0:
        raise GeometryError("profile never dominated by the comparison function")
    tau = energy_inside(u, delta)
    rule = quadrature_rule(u, 0.0, 1.0, delta)
    v = rule.P @ u.values
    tail = float(np.exp(logsumexp(rule.logw + 4 * math.pi * v * v)))
    return ConcentrationReport(delta, tau, tail, used, delta_tilde)
