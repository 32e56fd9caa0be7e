"""Flat unit torus: Poisson solves, Green functions, lambda_q and test families.

Fields live on the periodic grid ``x_{ij} = (i/n, j/n)``; each grid point
owns the square cell of side ``h = 1/n`` centred on it. The Laplacian is the
five-point stencil, inverted exactly on mean-zero fields by FFT.

Integrals of ``h * exp(...)`` use the cell values of the field with exact cell
weights ``int_cell h``. Cells within ``3h`` of a singular point get their
weight from a local polar rule: the cell containing the point is split into
eight triangles and integrated in ``(theta, s = r^{1+alpha})``, neighbouring
cells are subdivided.

Families concentrating below the grid scale carry a :class:`LocalField`: an
exact evaluator on a disk around the concentration point. Integrals then use
polar quadrature inside the disk and the grid cells outside it, each weighted
by the fraction of its area lying outside.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import logsumexp

from .config import DEFAULT, Tolerances
from .errors import (
    ConvergenceError,
    GeometryError,
    InvalidInputError,
    InvalidWeightError,
    RegimeError,
    ScaleError,
)
from .functionals import ConicalWeight, FunctionalParams
from .radial import ExpValue, _exp_value
from .spaces import TorusSpace, lq_norm2, rayleigh_descent

log = logging.getLogger(__name__)

_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)
SINGULAR_BLOCK = 3          # cells within this many h of a singular point get sub-quadrature
CHART_RADIUS = 0.25         # radius of the flat chart used by the test families


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _check_n(n: int, minimum: int = 64) -> int:
    n = int(n)
    if n < minimum or n & (n - 1):
        raise InvalidInputError(f"grid size must be a power of two >= {minimum}, got {n}")
    return n


@dataclass(frozen=True, eq=False)
class TorusField:
    values: np.ndarray
    mean_zero: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInputError("torus fields are square arrays")
        _check_n(v.shape[0], 8)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("non-finite field values")
        if self.mean_zero and abs(v.mean()) > 1e-13 * max(1.0, float(np.abs(v).max())):
            raise InvalidInputError(f"field mean {v.mean():.3e} is not zero")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def project(cls, values) -> "TorusField":
        v = np.asarray(values, dtype=float)
        return cls(v - v.mean(), True)

    def to_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<q", self.n))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path, mean_zero: bool = True) -> "TorusField":
        with open(path, "rb") as fh:
            (n,) = struct.unpack("<q", fh.read(8))
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != n * n:
            raise InvalidInputError(f"expected {n * n} values, found {data.size}")
        return cls(data.reshape(n, n).copy(), mean_zero)

    def to_csv(self, path) -> None:
        n = self.n
        with open(path, "w") as fh:
            fh.write("i,j,x,y,value\n")
            for i in range(n):
                for j in range(n):
                    fh.write(f"{i},{j},{i / n!r},{j / n!r},{self.values[i, j]!r}\n")


def grid_index(p, n: int):
    """Grid indices of a point that must coincide with a grid node."""
    p = np.asarray(p, dtype=float) % 1.0
    ij = np.rint(p * n)
    if np.max(np.abs(ij - p * n)) > 1e-9:
        raise GeometryError(f"point {tuple(p)} is not a grid point for n = {n}")
    return int(ij[0]) % n, int(ij[1]) % n


def _wrap(d):
    return (d + 0.5) % 1.0 - 0.5


def grid_offsets(n: int, p):
    """Signed periodic offsets ``(dx, dy)`` of every grid point from ``p``."""
    x = np.arange(n) / n
    dx = _wrap(x[:, None] - p[0]) * np.ones((1, n))
    dy = _wrap(x[None, :] - p[1]) * np.ones((n, 1))
    return dx, dy


def grid_distance(n: int, p) -> np.ndarray:
    dx, dy = grid_offsets(n, p)
    return np.hypot(dx, dy)


def _space(n: int, log_w: Optional[np.ndarray] = None) -> TorusSpace:
    if log_w is None:
        log_w = np.full((n, n), -2 * math.log(n))
    return TorusSpace(n, log_w)


def neg_laplacian(u: np.ndarray) -> np.ndarray:
    n = u.shape[0]
    return n * n * (4 * u - np.roll(u, 1, 0) - np.roll(u, -1, 0) - np.roll(u, 1, 1) - np.roll(u, -1, 1))


def laplacian_symbol(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    c = 2 - 2 * np.cos(2 * math.pi * k / n)
    return n * n * (c[:, None] + c[None, :])


def solve_poisson_mean_zero(f) -> TorusField:
    """Mean-zero ``u`` with ``-Lap_h u = f - mean(f)``, exact for the stencil."""
    v = f.values if isinstance(f, TorusField) else np.asarray(f, dtype=float)
    n = v.shape[0]
    sym = laplacian_symbol(n)
    fh = np.fft.fft2(v - v.mean())
    sym[0, 0] = 1.0
    fh /= sym
    fh[0, 0] = 0.0
    u = np.real(np.fft.ifft2(fh))
    return TorusField(u - u.mean())


def discrete_dirac(n: int, p) -> np.ndarray:
    """``1/h^2`` at the grid point ``p`` minus its mean (which is 1)."""
    i, j = grid_index(p, n)
    d = np.full((n, n), -1.0)
    d[i, j] += n * n
    return d


# ---------------------------------------------------------------------------
# lambda_q
# ---------------------------------------------------------------------------

_LQ_CACHE: dict = {}


def lambda_q_torus(q: float, n: int = 256, seed: int = 0, tol: Tolerances = DEFAULT):
    """Minimize ``int |grad u|^2 / ||u||_q^2`` over mean-zero grid fields.

    Returns ``(value, u0)`` with ``||u0||_q = 1``.
    """
    n = _check_n(n, 8)
    if not q > 1:
        raise InvalidInputError("q must exceed 1")
    key = (float(q), n, seed)
    if key in _LQ_CACHE:
        return _LQ_CACHE[key]
    space = _space(n)
    rng = np.random.default_rng(seed)
    x = np.arange(n) / n
    x0 = np.cos(2 * math.pi * x)[:, None] * np.ones((1, n))
    x0 = x0 + 1e-3 * rng.standard_normal((n, n))
    res = rayleigh_descent(space, q, x0.ravel(), rel_tol=tol.descent_rel)
    u = res.x.reshape(n, n)
    N2, _ = lq_norm2(space, res.x, q)
    u = u / math.sqrt(N2)
    out = (res.value, TorusField(u - u.mean()))
    _LQ_CACHE[key] = out
    return out


def lambda_q_value(q: float, n: int) -> float:
    if q == 2:
        sym = laplacian_symbol(n)
        return float(np.min(sym[sym > 0]))
    return lambda_q_torus(q, n)[0]


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GreenData:
    field: TorusField
    p: tuple
    lam: float
    q: float
    A: float
    norm_q: float
    fit_residual: float
    fit_radii: tuple
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.field.n

    def xi(self) -> np.ndarray:
        """Regular part ``G + log|x-p|/(2 pi) - A`` on the grid (value at ``p`` extrapolated)."""
        d = grid_distance(self.n, self.p)
        i, j = grid_index(self.p, self.n)
        d[i, j] = 1.0
        xi = self.field.values + np.log(d) / (2 * math.pi) - self.A
        xi[i, j] = 0.0
        return xi

    def to_json(self) -> dict:
        return {"p": list(self.p), "lambda": self.lam, "q": self.q, "A": self.A,
                "norm_q": self.norm_q, "fit_residual": self.fit_residual}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def lq_norm_grid(u: np.ndarray, q: float) -> float:
    n = u.shape[0]
    return float((np.sum(np.abs(u) ** q) / (n * n)) ** (1.0 / q))


def robin_constant(G, p, r1: Optional[float] = None, r2: Optional[float] = None):
    """Least-squares constant ``A`` in ``G + log|x-p|/(2 pi) ~ A`` over ``r1 <= |x-p| <= r2``."""
    v = G.values if isinstance(G, TorusField) else np.asarray(G, dtype=float)
    n = v.shape[0]
    r1 = 4.0 / n if r1 is None else r1
    r2 = 8.0 / n if r2 is None else r2
    if not 0 < r1 < r2 < 0.5:
        raise GeometryError(f"invalid fit annulus [{r1}, {r2}]")
    d = grid_distance(n, p)
    mask = (d >= r1 * (1 - 1e-12)) & (d <= r2 * (1 + 1e-12))
    if mask.sum() < 8:
        raise GeometryError("too few grid points in the fit annulus")
    y = v[mask] + np.log(d[mask]) / (2 * math.pi)
    A = float(y.mean())
    return A, float(np.sqrt(np.mean((y - A) ** 2)))


def green_function(p, lam: float = 0.0, q: float = 2.0, n: int = 256,
                   fit: Sequence[float] = (4.0, 8.0), damping: float = 0.5,
                   max_iter: int = 500, tol: Tolerances = DEFAULT) -> GreenData:
    """Mean-zero solution of ``-Lap G = delta_p + lam ||G||_q^{2-q}|G|^{q-2}G - mean``."""
    n = _check_n(n)
    if lam < 0:
        raise InvalidInputError("lambda must be >= 0")
    p = tuple(float(c) % 1.0 for c in p)
    delta = discrete_dirac(n, p)
    sym = laplacian_symbol(n)
    iterations = 0
    if lam > 0:
        lq = lambda_q_value(q, n)
        if lam >= lq:
            raise RegimeError(f"lambda = {lam} is not below lambda_q = {lq}")
    if lam == 0 or q == 2:
        den = sym - lam
        den[0, 0] = 1.0
        gh = np.fft.fft2(delta) / den
        gh[0, 0] = 0.0
        G = np.real(np.fft.ifft2(gh))
    else:
        G = solve_poisson_mean_zero(delta).values
        for iterations in range(1, max_iter + 1):
            Nq = lq_norm_grid(G, q)
            rhs = delta + lam * Nq ** (2 - q) * np.abs(G) ** (q - 2) * G
            new = solve_poisson_mean_zero(rhs).values
            new = (1 - damping) * G + damping * new
            change = float(np.max(np.abs(new - G)))
            G = new
            if change <= tol.fixed_point * max(1.0, float(np.max(np.abs(G)))):
                break
        else:
            raise ConvergenceError("Green fixed point did not converge",
                                   diagnostics={"change": change}, last=G)
    G = G - G.mean()
    r1, r2 = fit[0] / n, fit[1] / n
    A, res = robin_constant(G, p, r1, r2)
    return GreenData(TorusField(G), p, float(lam), float(q), A, lq_norm_grid(G, q), res,
                     (r1, r2), iterations)


# ---------------------------------------------------------------------------
# area fractions and energies outside a disk
# ---------------------------------------------------------------------------


def outside_fraction(n: int, p, R: float, sub: int = 16) -> np.ndarray:
    """Fraction of every grid cell lying outside ``B_R(p)`` (sub-sampled on cut cells)."""
    h = 1.0 / n
    dx, dy = grid_offsets(n, p)
    d = np.hypot(dx, dy)
    frac = (d > R).astype(float)
    cut = np.abs(d - R) < h
    if np.any(cut):
        o = (np.arange(sub) + 0.5) / sub - 0.5
        ox, oy = np.meshgrid(o * h, o * h, indexing="ij")
        cx = dx[cut][:, None, None] + ox[None]
        cy = dy[cut][:, None, None] + oy[None]
        frac[cut] = np.mean(np.hypot(cx, cy) > R, axis=(1, 2))
    return frac


def gradient_sq(u: np.ndarray) -> np.ndarray:
    """``|grad u|^2`` at grid points from central differences."""
    n = u.shape[0]
    gx = (np.roll(u, -1, 0) - np.roll(u, 1, 0)) * (n / 2)
    gy = (np.roll(u, -1, 1) - np.roll(u, 1, 1)) * (n / 2)
    return gx * gx + gy * gy


def energy_outside(u: np.ndarray, p, R: float) -> float:
    """``int_{Sigma - B_R(p)} |grad u|^2`` with fractional cell weights."""
    n = u.shape[0]
    return float(np.sum(gradient_sq(u) * outside_fraction(n, p, R)) / (n * n))


def annulus_energy_check(green: GreenData, delta: float, chart: float = CHART_RADIUS):
    """Return ``(int_{Sigma - B_delta} |grad G|^2, -log(delta)/(2 pi) + A + lam ||G||_q^2)``."""
    n = green.n
    if not 8.0 / n < delta < chart:
        raise GeometryError(f"delta must lie in (8/n, {chart}), got {delta}")
    lhs = energy_outside(green.field.values, green.p, delta)
    rhs = -math.log(delta) / (2 * math.pi) + green.A + green.lam * green.norm_q ** 2
    return lhs, rhs


# ---------------------------------------------------------------------------
# weights and surface integrals
# ---------------------------------------------------------------------------


def h_values(weight: ConicalWeight, x, y):
    """``V(x) prod d_T(x, p_i)^{2 alpha_i}`` at arbitrary points."""
    val = weight.V_at(x, y) * np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)
    for p, a in zip(weight.points, weight.orders):
        d = np.hypot(_wrap(np.asarray(x) - p[0]), _wrap(np.asarray(y) - p[1]))
        with np.errstate(divide="ignore"):
            val = val * d ** (2 * a)
    return val


def _polar_square(g: Callable, cx: float, cy: float, a: float, alpha: float,
                  order: int = 8) -> float:
    """``int |x-c|^{2 alpha} g(x)`` over the square of half-width ``a`` centred at ``c``."""
    X, W = np.polynomial.legendre.leggauss(order)
    a1 = 1 + alpha
    total = 0.0
    for k in range(8):
        t0 = k * math.pi / 4
        th = t0 + (X + 1) * math.pi / 8
        wth = W * math.pi / 8
        # distance to the square boundary along theta
        R = a / np.maximum(np.abs(np.cos(th)), np.abs(np.sin(th)))
        S = R ** a1
        s = 0.5 * S[:, None] * (X[None, :] + 1)
        ws = 0.5 * S[:, None] * W[None, :]
        r = s ** (1 / a1)
        x = cx + r * np.cos(th)[:, None]
        y = cy + r * np.sin(th)[:, None]
        total += float(np.sum(wth[:, None] * ws * s / a1 * g(x, y)))
    return total


def _sub_square(f: Callable, cx: float, cy: float, a: float, m: int = 4) -> float:
    """Tensor Gauss rule on an ``m x m`` subdivision of a square."""
    edges = np.linspace(-a, a, m + 1)
    half = a / m
    mids = 0.5 * (edges[:-1] + edges[1:])
    px = (mids[:, None] + half * _GL8_X[None, :]).ravel()
    w = np.tile(half * _GL8_W, m)
    X, Y = np.meshgrid(cx + px, cy + px, indexing="ij")
    return float(np.sum(np.outer(w, w) * f(X, Y)))


def cell_weights(weight: ConicalWeight, n: int) -> np.ndarray:
    """``int_cell h`` for every cell of the grid."""
    h = 1.0 / n
    x = np.arange(n) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    with np.errstate(divide="ignore"):
        W = h_values(weight, X, Y) * h * h
    for p, a in zip(weight.points, weight.orders):
        i0, j0 = grid_index(p, n)
        for di in range(-SINGULAR_BLOCK, SINGULAR_BLOCK + 1):
            for dj in range(-SINGULAR_BLOCK, SINGULAR_BLOCK + 1):
                i, j = (i0 + di) % n, (j0 + dj) % n
                cx, cy = i / n, j / n
                if di == 0 and dj == 0:
                    def g(xx, yy, p=p, a=a):
                        d = np.hypot(_wrap(xx - p[0]), _wrap(yy - p[1]))
                        with np.errstate(divide="ignore", invalid="ignore"):
                            r = np.where(d > 0, h_values(weight, xx, yy) / d ** (2 * a), 0.0)
                        if np.any(d == 0):
                            raise GeometryError("quadrature point hit a singular point")
                        return r
                    W[i, j] = _polar_square(g, cx, cy, h / 2, a)
                else:
                    W[i, j] = _sub_square(lambda xx, yy: h_values(weight, xx, yy), cx, cy, h / 2)
    return W


def weighted_area(weight: ConicalWeight, n: int) -> float:
    """``|Sigma|_{g_h} = int h``."""
    return float(np.sum(cell_weights(weight, n)))


@dataclass(frozen=True, eq=False)
class LocalField:
    """Exact evaluator of a field on ``B_R(center)``.

    ``f(r, theta)`` returns the field at polar coordinates about the centre;
    ``radii`` lists breakpoints in ``(0, R)`` where the field changes formula.
    """

    center: tuple
    R: float
    f: Callable
    radii: tuple = ()


def _local_rule(local: LocalField, alpha: float, n_rad: int = 24, n_ang: int = 64,
                r_min: float = 1e-12):
    """Polar points, angles and weights ``|x|^{2 alpha} dx`` on ``B_R``; radial GL in ``s``."""
    a1 = 1 + alpha
    R = local.R
    brk = sorted({b for b in local.radii if 0 < b < R} | {R})
    lo_edges = np.geomspace(max(r_min, brk[0] * 1e-8), brk[0], n_rad + 1)
    edges = [0.0] + list(lo_edges)
    prev = brk[0]
    for b in brk[1:]:
        m = max(4, int(math.ceil(8 * math.log(b / prev) / math.log(2))))
        edges += list(np.geomspace(prev, b, m + 1)[1:])
        prev = b
    edges = np.array(edges)
    sa, sb = edges[:-1] ** a1, edges[1:] ** a1
    half = 0.5 * (sb - sa)
    s = 0.5 * (sa + sb)[:, None] + half[:, None] * _GL8_X[None, :]
    ws = (half[:, None] * _GL8_W[None, :] * s / a1).ravel()
    r = (s ** (1 / a1)).ravel()
    th = 2 * math.pi * (np.arange(n_ang) + 0.5) / n_ang
    wth = 2 * math.pi / n_ang
    return r, th, ws * wth


def local_integral_terms(local: LocalField, weight: ConicalWeight, alpha: float):
    """``(values, log_weights)`` of the polar rule on ``B_R``, weight ``h`` included."""
    r, th, w = _local_rule(local, alpha)
    cx, cy = local.center
    X = cx + r[:, None] * np.cos(th)[None, :]
    Y = cy + r[:, None] * np.sin(th)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        hv = h_values(weight, X, Y) / (r[:, None] ** (2 * alpha))
    vals = np.asarray(local.f(r[:, None] * np.ones_like(th)[None, :], np.ones_like(r)[:, None] * th[None, :]),
                      dtype=float)
    lw = np.log(w[:, None] * np.ones_like(th)[None, :] * hv)
    return vals.ravel(), lw.ravel()


def _hybrid_terms(u: np.ndarray, weight: ConicalWeight, local: Optional[LocalField], shift: float = 0.0):
    """Values and log weights for ``int h F(u)``; ``shift`` is subtracted from local values."""
    n = u.shape[0]
    W = cell_weights(weight, n)
    if local is None:
        with np.errstate(divide="ignore"):
            return u.ravel(), np.log(W).ravel()
    alpha = weight.order_at(local.center)
    for p in weight.points:
        if weight.distance(p, local.center) > 0 and weight.distance(p, local.center) < local.R + 4.0 / n:
            raise GeometryError("another singular point lies inside the local disk")
    if local.R < (SINGULAR_BLOCK + 1) * math.sqrt(2) / n and alpha != 0:
        raise GeometryError("local disk must cover the singular block")
    frac = outside_fraction(n, local.center, local.R)
    keep = frac > 0
    with np.errstate(divide="ignore"):
        lw_grid = np.log(W[keep] * frac[keep])
    lv, llw = local_integral_terms(local, weight, alpha)
    return np.concatenate([u[keep], lv - shift]), np.concatenate([lw_grid, llw])


def hybrid_mean(u: np.ndarray, local: Optional[LocalField]) -> float:
    vals, lw = _hybrid_terms(u, ConicalWeight((), (), 1.0, "torus"), local)
    return float(np.sum(np.exp(lw) * vals))


def hybrid_lq_norm(u: np.ndarray, q: float, local: Optional[LocalField], shift: float = 0.0) -> float:
    vals, lw = _hybrid_terms(u, ConicalWeight((), (), 1.0, "torus"), local, shift)
    with np.errstate(divide="ignore"):
        return float(math.exp(logsumexp(lw + q * np.log(np.abs(vals))) / q))


def surface_functional(u, params: FunctionalParams, local: Optional[LocalField] = None,
                       local_shift: float = 0.0) -> ExpValue:
    """``int_Sigma h exp(beta u^2 (1 + lam ||u||_q^2))`` on the flat torus.

    ``local`` (with ``local_shift`` subtracted from its values, e.g. a mean)
    replaces the grid values on a disk around a concentration point.
    """
    v = u.values if isinstance(u, TorusField) else np.asarray(u, dtype=float)
    w = params.weight
    if w.geometry != "torus":
        raise InvalidWeightError("surface functional needs a torus weight")
    n = v.shape[0]
    for p in w.points:
        grid_index(p, n)
    b = params.beta
    if params.lam > 0:
        b *= 1 + params.lam * hybrid_lq_norm(v, params.q, local, local_shift) ** 2
    vals, lw = _hybrid_terms(v, w, local, local_shift)
    return _exp_value(logsumexp(lw + b * vals * vals))


# ---------------------------------------------------------------------------
# test families
# ---------------------------------------------------------------------------


def smooth_cutoff(r, a: float, b: float):
    """C-infinity cutoff: 1 for ``r <= a``, 0 for ``r >= b``."""
    t = np.clip((np.asarray(r, dtype=float) - a) / (b - a), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f1 = np.where(t < 1, np.exp(-1.0 / np.maximum(1 - t, 1e-300)), 0.0)
        f0 = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    return f1 / (f1 + f0)


def _interp_periodic(field: np.ndarray, x, y):
    n = field.shape[0]
    coords = np.array([np.ravel(np.asarray(x) % 1.0) * n, np.ravel(np.asarray(y) % 1.0) * n])
    out = map_coordinates(field, coords, order=3, mode="grid-wrap")
    return out.reshape(np.shape(x))


@dataclass(frozen=True)
class TestFamilySpec:
    """Scales of the bubble-plus-Green test family centred at ``p``."""

    __test__ = False  # not a pytest class

    p: tuple
    eps: float
    alpha_bar: float = 0.0
    lam: float = 0.0
    q: float = 2.0
    chart: float = CHART_RADIUS

    @property
    def gamma(self) -> float:
        return abs(math.log(self.eps)) ** (1.0 / (1 + self.alpha_bar))

    @property
    def k(self) -> float:
        return 2 * (1 + self.alpha_bar)

    @property
    def beta_bar(self) -> float:
        return 4 * math.pi * (1 + self.alpha_bar)

    def validate(self):
        if not 0 < self.eps < 1:
            raise ScaleError("eps must lie in (0, 1)")
        if not 2 * self.gamma * self.eps < self.chart:
            raise ScaleError(f"2 gamma eps = {2 * self.gamma * self.eps:.3g} exceeds the chart radius")


def core_energy_remainder(gamma: float, k: float) -> float:
    """Exact ``O(|log eps|^-2)`` term of the core energy: ``log(1 + 1/g) + 1/(1 + g)``, ``g = gamma^k``."""
    g = gamma ** k
    return math.log1p(1 / g) + 1 / (1 + g)


def calibrate(eps: float, alpha_bar: float, A: float, gamma: Optional[float] = None):
    """Return ``(c, L)`` solving both gluing and unit-energy calibrations.

    ``beta_bar c^2 = -1 - 2(1+alpha_bar) log eps + beta_bar A + rem`` with the
    exact core remainder ``rem``, and ``beta_bar c^2 - L = log((1+g)/g) +
    beta_bar A - 2(1+alpha_bar) log eps``.
    """
    k = 2 * (1 + alpha_bar)
    bb = 4 * math.pi * (1 + alpha_bar)
    if gamma is None:
        gamma = abs(math.log(eps)) ** (1 / (1 + alpha_bar))
    g = gamma ** k
    rem = core_energy_remainder(gamma, k)
    bc2 = -1 - k * math.log(eps) + bb * A + rem
    if not bc2 > 0:
        raise ScaleError(f"calibration gives c^2 = {bc2 / bb:.3g} <= 0")
    L = bc2 - math.log((1 + g) / g) - bb * A + k * math.log(eps)
    return math.sqrt(bc2 / bb), L


@dataclass
class FamilyReport:
    c: float
    L: float
    gamma: float
    energy: float
    mean_w: float
    denominator: float
    local: LocalField
    extra: dict = field(default_factory=dict)


def test_family_w(spec: TestFamilySpec, weight: ConicalWeight, green: GreenData):
    """Bubble core glued to ``G/c`` through the cut-off regular part.

    Returns ``(w, u, report)`` where ``u = (w - mean w)/sqrt(1 + lam ||G||_q^2 / c^2)``
    and ``report.local`` evaluates ``u`` exactly on ``B_{2 gamma eps}(p)``.
    """
    spec.validate()
    if weight.order_at(spec.p) != spec.alpha_bar:
        raise InvalidWeightError("family order must match the weight order at p")
    if green.lam != spec.lam or green.q != spec.q or weight.distance(green.p, spec.p) > 0:
        raise InvalidInputError("Green data computed for different p, lambda or q")
    n = green.n
    eps, k, bb = spec.eps, spec.k, spec.beta_bar
    gam = spec.gamma
    A = green.A
    c, L = calibrate(eps, spec.alpha_bar, A, gam)
    r_in, r_out = gam * eps, 2 * gam * eps
    G = green.field.values
    xi = green.xi()
    d = grid_distance(n, spec.p)

    def core(r):
        return c - (np.log1p((r / eps) ** k) + L) / (bb * c)

    eta = smooth_cutoff(d, r_in, r_out)
    w = np.where(d <= r_in, core(d), (G - eta * xi) / c)
    denom = math.sqrt(1 + spec.lam * green.norm_q ** 2 / (c * c))
    px, py = spec.p

    def w_local(r, th):
        x = px + r * np.cos(th)
        y = py + r * np.sin(th)
        xi_i = _interp_periodic(xi, x, y)
        with np.errstate(divide="ignore"):
            mid = (-np.log(r) / (2 * math.pi) + A + (1 - smooth_cutoff(r, r_in, r_out)) * xi_i) / c
        return np.where(r <= r_in, core(r), mid)

    wl = LocalField((px, py), r_out, w_local, (eps, r_in))
    wbar = hybrid_mean(w, wl)
    u = (w - wbar) / denom
    ul = LocalField((px, py), r_out, lambda r, th: (w_local(r, th) - wbar) / denom, (eps, r_in))

    # energy: exact core plus grid energy outside the core disk
    core_E = (math.log1p(gam ** k) - 1 + 1 / (1 + gam ** k)) / (bb * c * c)
    energy = (core_E + energy_outside(w, spec.p, r_in)) / denom ** 2
    report = FamilyReport(c, L, gam, energy, wbar, denom, ul,
                          {"core_energy": core_E, "A": A, "norm_q": green.norm_q})
    return TorusField(w, False), TorusField.project(u), report


# ---------------------------------------------------------------------------
# supercritical families
# ---------------------------------------------------------------------------


def default_scales(eps: float, tau0: float = 0.15, r0: Optional[float] = None):
    """``t = tau0 |log eps|^{-1/4}``, ``r = r0 exp(-|log eps|^{1/5})``.

    Along ``eps -> 0``: ``t^2 |log eps| ~ |log eps|^{1/2} -> oo``,
    ``r/eps -> oo`` and ``log^2 r / (t^2 |log eps|) ~ |log eps|^{-1/10} -> 0``.
    """
    Le = abs(math.log(eps))
    if r0 is None:
        r0 = CHART_RADIUS / 2
    return tau0 * Le ** -0.25, r0 * math.exp(-Le ** 0.2)


def scale_conditions(eps: float, t: float, r: float):
    """The three quantities that must diverge, diverge and vanish along ``eps -> 0``."""
    Le = abs(math.log(eps))
    return t * t * Le, r / eps, math.log(r) ** 2 / (t * t * Le)


def moser_profile(r, eps: float, R: float):
    """Truncated logarithm of unit energy on ``B_R``: ``sqrt(log(R/eps))`` inside ``B_eps``."""
    Lg = math.log(R / eps)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(r <= eps, math.sqrt(Lg), np.log(R / np.maximum(r, eps)) / math.sqrt(Lg))
    return np.where(r >= R, 0.0, out) / math.sqrt(2 * math.pi)


@dataclass
class SupercriticalResult:
    field: TorusField
    value: ExpValue
    eps: float
    t: float
    r: float
    energy: float
    local: LocalField
    extra: dict


def supercritical_family(eps: float, beta: float, lam: float = 0.0, q: float = 2.0, n: int = 256,
                         weight: Optional[ConicalWeight] = None, p=None,
                         t: Optional[float] = None, r: Optional[float] = None,
                         tau0: float = 0.15, R: float = CHART_RADIUS) -> SupercriticalResult:
    """Families along which the functional diverges.

    For ``beta > beta_bar``: the truncated logarithm on the chart disk ``B_R(p)``.
    For ``beta = beta_bar`` and ``lam > lambda_q``: ``u_eps eta + t u0`` with
    ``u0`` the ``lambda_q`` minimizer (unit ``L^q`` norm) and ``u_eps`` the
    truncated logarithm of radius ``2 r``, normalized to unit energy after
    removing the mean. ``p`` defaults to a singular point of minimal order, or
    else to the grid maximum of ``u0`` so that the cross term helps.
    """
    weight = weight or ConicalWeight((), (), 1.0, "torus")
    n = _check_n(n)
    lq = lambda_q_value(q, n)
    bb = weight.beta_bar
    super_beta = beta > bb * (1 + 1e-12)
    critical = abs(beta - bb) <= 1e-12 * bb and lam > lq
    if not (super_beta or critical):
        raise RegimeError("supercritical family needs beta > beta_bar, or beta = beta_bar with lambda > lambda_q")
    if not 0 < eps < R:
        raise ScaleError("eps must lie in (0, R)")
    u0 = None
    if critical:
        u0 = lambda_q_torus(q, n)[1].values
    if p is None:
        minimal = [pt for pt, a in zip(weight.points, weight.orders) if a == weight.alpha_bar]
        if minimal:
            p = minimal[0]
        elif u0 is not None:
            i, j = np.unravel_index(int(np.argmax(u0)), u0.shape)
            p = (i / n, j / n)
        else:
            p = (0.0, 0.0)
    if weight.order_at(p) != weight.alpha_bar:
        raise InvalidWeightError("the family must sit at a point of minimal order")
    px, py = (float(p[0]) % 1.0, float(p[1]) % 1.0)
    grid_index((px, py), n)
    d = grid_distance(n, (px, py))
    params = FunctionalParams(beta, lam, q, weight)
    if not critical:
        w = moser_profile(d, eps, R)
        loc = LocalField((px, py), R, lambda rr, th: moser_profile(rr, eps, R), (eps,))
        wbar = hybrid_mean(w, loc)
        u = w - wbar
        ul = LocalField((px, py), R, lambda rr, th: moser_profile(rr, eps, R) - wbar, (eps,))
        val = surface_functional(u, params, ul)
        return SupercriticalResult(TorusField.project(u), val, eps, 0.0, R, 1.0, ul,
                                   {"mean": wbar, "p": (px, py)})

    t_def, r_def = default_scales(eps, tau0)
    t = t_def if t is None else t
    r = r_def if r is None else r
    if not (eps < r and 2 * r <= R):
        raise ScaleError("need eps < r and 2 r within the chart")

    def ue_eta(rr):
        return moser_profile(rr, eps, 2 * r) * smooth_cutoff(rr, r, 2 * r)

    w = ue_eta(d) + t * u0
    E_rad = _radial_energy(ue_eta, eps, 2 * r)
    # int grad u0 . grad(u eta) = int (-Lap u0) u eta
    lap_u0 = neg_laplacian(u0)
    cross_loc = LocalField((px, py), 2 * r, lambda rr, th: ue_eta(rr) * _interp_periodic(
        lap_u0, px + rr * np.cos(th), py + rr * np.sin(th)), (eps, r))
    cross = hybrid_mean(np.zeros_like(u0), cross_loc)
    E_u0 = float(np.sum(u0 * lap_u0)) / (n * n)
    energy = E_rad + t * t * E_u0 + 2 * t * cross

    def w_loc(rr, th):
        return ue_eta(rr) + t * _interp_periodic(u0, px + rr * np.cos(th), py + rr * np.sin(th))

    loc = LocalField((px, py), 2 * r, w_loc, (eps, r))
    wbar = hybrid_mean(w, loc)
    s = 1 / math.sqrt(energy)
    u = (w - wbar) * s
    ul = LocalField((px, py), 2 * r, lambda rr, th: (w_loc(rr, th) - wbar) * s, (eps, r))
    val = surface_functional(u, params, ul)
    X, _, _ = scale_conditions(eps, t, r)
    return SupercriticalResult(TorusField.project(u), val, eps, t, r, energy, ul,
                               {"mean": wbar, "E_radial": E_rad, "E_u0": E_u0, "cross": cross,
                                "t2_log_eps": X, "lambda_q": lq, "p": (px, py)})


def _radial_energy(f: Callable, eps: float, R: float, m: int = 400) -> float:
    """``2 pi int_eps^R f'(r)^2 r dr`` by Gauss-Legendre in ``log r``.

    ``f`` must be constant on ``[0, eps]``; ``r f'(r)`` is taken by a central
    difference in ``log r``.
    """
    t_edges = np.linspace(math.log(eps), math.log(R), m + 1)
    tm = 0.5 * (t_edges[:-1] + t_edges[1:])
    hw = 0.5 * np.diff(t_edges)
    tt = (tm[:, None] + hw[:, None] * _GL8_X[None, :]).ravel()
    w = (hw[:, None] * _GL8_W[None, :]).ravel()
    r = np.exp(tt)
    dh = 1e-6
    df = (f(r * (1 + dh)) - f(r * (1 - dh))) / (2 * dh)   # r f'(r)
    return float(2 * math.pi * np.sum(w * df * df))
