"""Exponential functionals, Onofri deficits and lambda_q on the unit disk."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import (
    GeometryError,
    InvalidInputError,
    InvalidWeightError,
    UnsupportedGeometryError,
)
from .radial import (
    ExpValue,
    RadialFunction,
    _exp_value,
    check_order,
    dirichlet_energy,
    lp_norm,
    weighted_exp_integral,
)
from .rearrangement import PolarGridFunction, rearrange
from .spaces import RadialSpace, rayleigh_descent


def _torus_distance(a, b):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = np.minimum(d, 1.0 - d)
    return float(np.hypot(d[0], d[1]))


def _disk_distance(a, b):
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


@dataclass(frozen=True)
class ConicalWeight:
    """``h(x) = V(x) * prod_i d(x, p_i)^{2 alpha_i}`` on the disk or the flat torus.

    ``V`` is a positive constant or a callable ``V(x, y)`` on arrays.
    """

    points: tuple = ()
    orders: tuple = ()
    V: Union[float, Callable] = 1.0
    geometry: str = "disk"

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        ords = tuple(float(a) for a in self.orders)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "orders", ords)
        if len(pts) != len(ords):
            raise InvalidWeightError("one order per singular point is required")
        for a in ords:
            if not a > -1:
                raise InvalidWeightError(f"conical orders must exceed -1, got {a}")
        if self.geometry not in ("disk", "torus"):
            raise InvalidWeightError(f"unknown geometry {self.geometry!r}")
        if not callable(self.V) and not float(self.V) > 0:
            raise InvalidWeightError("V must be positive")

    @classmethod
    def disk(cls, alpha: float = 0.0, V0: float = 1.0) -> "ConicalWeight":
        if alpha == 0.0:
            return cls((), (), float(V0), "disk")
        return cls(((0.0, 0.0),), (alpha,), float(V0), "disk")

    @property
    def alpha_bar(self) -> float:
        return min([0.0] + list(self.orders))

    @property
    def beta_bar(self) -> float:
        return 4 * math.pi * (1 + self.alpha_bar)

    @property
    def constant_V(self) -> Optional[float]:
        return None if callable(self.V) else float(self.V)

    def V_at(self, x, y):
        if callable(self.V):
            return np.asarray(self.V(x, y), dtype=float)
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(self.V))

    def distance(self, a, b) -> float:
        return _torus_distance(a, b) if self.geometry == "torus" else _disk_distance(a, b)

    def order_at(self, p) -> float:
        for q, a in zip(self.points, self.orders):
            if self.distance(p, q) == 0.0:
                return a
        return 0.0

    def K(self, p) -> float:
        """``lim_{x -> p} h(x) / d(x, p)^{2 alpha(p)}``."""
        val = float(self.V_at(np.array(p[0]), np.array(p[1])))
        for q, a in zip(self.points, self.orders):
            d = self.distance(p, q)
            if d > 0:
                val *= d ** (2 * a)
        return val

    def disk_order(self) -> float:
        """Order at the origin for disk-mode evaluation; rejects anything else."""
        if self.geometry != "disk":
            raise UnsupportedGeometryError("weight is not a disk weight")
        if len(self.points) > 1:
            raise UnsupportedGeometryError("disk mode supports a single singular point")
        if self.points and self.points[0] != (0.0, 0.0):
            raise UnsupportedGeometryError("disk mode needs the singular point at the origin")
        if callable(self.V):
            raise UnsupportedGeometryError("disk mode needs a constant V")
        return self.orders[0] if self.orders else 0.0


@dataclass(frozen=True)
class FunctionalParams:
    beta: float
    lam: float = 0.0
    q: float = 2.0
    weight: ConicalWeight = field(default_factory=ConicalWeight)

    def __post_init__(self):
        if not self.beta >= 0:
            raise InvalidInputError("beta must be >= 0")
        if not self.lam >= 0:
            raise InvalidInputError("lambda must be >= 0")
        if not self.q > 1:
            raise InvalidInputError("q must exceed 1")


def mt_functional_disk(u: RadialFunction, params: FunctionalParams) -> ExpValue:
    """``int_D h exp(beta u^2 (1 + lam ||u||_q^2))`` for a radial ``u``."""
    alpha = params.weight.disk_order()
    V = params.weight.constant_V
    b = params.beta
    if params.lam > 0:
        b *= 1 + params.lam * lp_norm(u, params.q) ** 2
    res = weighted_exp_integral(u, alpha, b)
    return _exp_value(res.log_value + math.log(V))


def onofri_deficit(u: Union[RadialFunction, PolarGridFunction], alpha: float = 0.0) -> float:
    """``E/(16 pi (1+alpha)) + 1 - log((1+alpha)/pi * int |x|^{2 alpha} e^u)``.

    Grid functions are first replaced by the rearrangement of their positive
    part, measured through its continuous companion profile; this can only
    lower the deficit, so nonnegativity on the rearranged field implies it on
    the input.
    """
    alpha = check_order(alpha)
    if isinstance(u, PolarGridFunction):
        if alpha > 0:
            raise UnsupportedGeometryError("non-radial deficits need alpha <= 0")
        u = rearrange(u.positive_part()).companion()
    else:
        u = u.companion()
    a1 = 1 + alpha
    E = dirichlet_energy(u)
    lg = weighted_exp_integral(u, alpha, 0.0, 1.0).log_value
    return E / (16 * math.pi * a1) + 1 - (math.log(a1 / math.pi) + lg)


def scaled_onofri_bound(delta: float, tau: float, c: float, alpha: float = 0.0) -> float:
    """``pi exp(1 + c^2 tau / (16 pi (1+alpha))) delta^{2(1+alpha)} / (1+alpha)``."""
    alpha = check_order(alpha)
    if alpha > 0:
        raise InvalidInputError("scaled bound is stated for alpha <= 0")
    if not delta > 0 or not tau > 0:
        raise InvalidInputError("delta and tau must be positive")
    a1 = 1 + alpha
    return math.pi * math.exp(1 + c * c * tau / (16 * math.pi * a1)) * delta ** (2 * a1) / a1


def scaled_onofri_check(u: RadialFunction, delta: float, tau: float, c: float,
                        alpha: float = 0.0, tol: Tolerances = DEFAULT):
    """Return ``(int_{D_delta} |x|^{2 alpha} e^{c u}, bound)`` for ``u`` supported in ``D_delta``."""
    outside = u.nodes >= delta * (1 + 1e-12)
    if np.any(np.abs(u.values[outside]) > 0):
        raise GeometryError("function is not supported in D_delta")
    E = dirichlet_energy(u)
    if E > tau * (1 + tol.inequality_slack):
        raise InvalidInputError(f"energy {E} exceeds tau = {tau}")
    integral = weighted_exp_integral(u, alpha, 0.0, c, delta).value
    return integral, scaled_onofri_bound(delta, tau, c, alpha)


def lambda_q_disk(q: float, n: int = 256, max_iter: int = 10_000, tol: Tolerances = DEFAULT):
    """First ``L^q`` Rayleigh quotient of ``H^1_0(D)``, minimized over radial fields.

    The grid is uniform, ``r_i = i/n``, so refinement by doubling is nested and
    the discrete value decreases monotonically. Returns ``(value, minimizer)``
    with the minimizer scaled to unit energy.
    """
    if not q > 1:
        raise InvalidInputError("q must exceed 1")
    if n < 8:
        raise InvalidInputError("need at least 8 radial cells")
    nodes = np.arange(n + 1) / n
    space = RadialSpace(nodes)
    r = nodes[1:-1]
    x0 = np.cos(0.5 * math.pi * r)
    res = rayleigh_descent(space, q, x0, rel_tol=tol.descent_rel, max_iter=max_iter)
    x = res.x if res.x[0] > 0 else -res.x
    return res.value, space.to_function(x)


def rayleigh_quotient(u: RadialFunction, q: float) -> float:
    return dirichlet_energy(u) / lp_norm(u, q) ** 2


@dataclass(frozen=True)
class DiskFamily:
    u: RadialFunction
    c: float
    L: float
    gamma: float
    eps: float
    alpha: float


def disk_test_family(eps: float, alpha: float = 0.0, n: int = 4096) -> DiskFamily:
    """Bubble core glued to the disk Green function ``-log r / (2 pi c)``.

    The disk centre has Robin constant 0 and no regular part, so the family is
    radial. ``c`` and ``L`` solve the gluing and unit-energy calibrations
    exactly (the core energy remainder is kept, not dropped).
    """
    from .torus import calibrate

    alpha = check_order(alpha)
    if not 0 < eps < 1:
        raise InvalidInputError("eps must lie in (0, 1)")
    k = 2 * (1 + alpha)
    bb = 4 * math.pi * (1 + alpha)
    gam = abs(math.log(eps)) ** (1 / (1 + alpha))
    R = gam * eps
    if R >= 1:
        raise GeometryError(f"gamma*eps = {R} must be < 1")
    c, L = calibrate(eps, alpha, 0.0, gam)
    from .radial import geometric_nodes

    nodes = geometric_nodes(n, min(1e-8, eps * 1e-4), extra=[eps, R])
    with np.errstate(divide="ignore"):
        core = c - (np.log1p((nodes / eps) ** k) + L) / (bb * c)
        outer = -np.log(np.maximum(nodes, R)) / (2 * math.pi * c)
    vals = np.where(nodes <= R, core, outer)
    vals[-1] = 0.0
    return DiskFamily(RadialFunction(nodes, vals), c, L, gam, eps, alpha)
