"""Symmetric decreasing rearrangement of cell functions on a polar grid.

A :class:`PolarGridFunction` is piecewise constant on the cells
``[j/n_r, (j+1)/n_r] x [2 pi k/n_theta, 2 pi (k+1)/n_theta]``; the outermost ring
is held at zero as a stand-in for the boundary condition.

Rearranging sorts the cell values in decreasing order (ties broken by the flat
cell index) and lays the cells out as concentric annuli of equal area, which
gives a ``step`` :class:`~singmt.radial.RadialFunction` whose level sets have
exactly the measure of the input level sets. Its energy is measured on the
companion profile averaged over the rings of the source grid.

The discrete Dirichlet energy of a grid function uses two-point differences
between neighbouring cell centres ``rho_j = (j + 1/2)/n_r``::

    E = sum (u[j+1,k] - u[j,k])**2 / dr * r_{j+1} * dtheta      (radial faces)
      + sum (u[j,k+1] - u[j,k])**2 * dr / (rho_j * dtheta)      (angular faces)

with periodic wrap in ``theta``. The outer ring is zero so no boundary face is
needed, and there is no flux through the origin.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, InvalidInputError, UnsupportedGeometryError
from .radial import RadialFunction, check_order, dirichlet_energy


@dataclass(frozen=True, eq=False)
class PolarGridFunction:
    values: np.ndarray  # shape (n_r, n_theta)
    boundary_zero: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[0] < 4 or v.shape[1] < 4:
            raise InvalidInputError("polar grid needs n_r, n_theta >= 4")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("non-finite cell values")
        if self.boundary_zero and np.any(v[-1] != 0.0):
            raise InvalidInputError("outer ring of a polar grid function must be zero")

    @property
    def n_r(self) -> int:
        return self.values.shape[0]

    @property
    def n_theta(self) -> int:
        return self.values.shape[1]

    @property
    def r_edges(self) -> np.ndarray:
        return np.arange(self.n_r + 1) / self.n_r

    @property
    def r_centers(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) / self.n_r

    @property
    def theta_centers(self) -> np.ndarray:
        return 2 * math.pi * (np.arange(self.n_theta) + 0.5) / self.n_theta

    def weighted_areas(self, alpha: float = 0.0) -> np.ndarray:
        """``int_cell |x|^{2 alpha} dx`` for every cell, in closed form."""
        a1 = 1.0 + check_order(alpha)
        e = self.r_edges ** (2 * a1)
        ring = (2 * math.pi / self.n_theta) * np.diff(e) / (2 * a1)
        return np.repeat(ring[:, None], self.n_theta, axis=1)

    @property
    def areas(self) -> np.ndarray:
        return self.weighted_areas(0.0)

    @classmethod
    def from_function(cls, f, n_r: int, n_theta: int) -> "PolarGridFunction":
        """Sample ``f(r, theta)`` at cell centres, zeroing the outer ring."""
        r = (np.arange(n_r) + 0.5) / n_r
        th = 2 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
        v = np.asarray(f(r[:, None], th[None, :]), dtype=float) * np.ones((n_r, n_theta))
        v[-1] = 0.0
        return cls(v)

    def positive_part(self) -> "PolarGridFunction":
        return PolarGridFunction(np.maximum(self.values, 0.0), self.boundary_zero)

    def abs(self) -> "PolarGridFunction":
        return PolarGridFunction(np.abs(self.values), self.boundary_zero)

    def lp_norm(self, p: float, alpha: float = 0.0) -> float:
        return float(np.sum(self.weighted_areas(alpha) * np.abs(self.values) ** p) ** (1.0 / p))

    def exp_integral(self, alpha: float = 0.0, coeff: float = 1.0) -> float:
        return float(np.sum(self.weighted_areas(alpha) * np.exp(coeff * self.values)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i_r", "i_theta", "value"])
            for i in range(self.n_r):
                for k in range(self.n_theta):
                    w.writerow([i, k, repr(float(self.values[i, k]))])

    @classmethod
    def from_csv(cls, path) -> "PolarGridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["i_r", "i_theta", "value"]:
            raise InvalidInputError("polar CSV must start with header 'i_r,i_theta,value'")
        data = [(int(a), int(b), float(c)) for a, b, c in rows[1:]]
        n_r = 1 + max(d[0] for d in data)
        n_t = 1 + max(d[1] for d in data)
        v = np.full((n_r, n_t), np.nan)
        for i, k, x in data:
            v[i, k] = x
        if np.any(np.isnan(v)):
            raise InvalidInputError("polar CSV is missing cells")
        return cls(v)


def polar_energy(u: PolarGridFunction) -> float:
    """Discrete Dirichlet energy by two-point differences (see module docs)."""
    v = u.values
    dr = 1.0 / u.n_r
    dth = 2 * math.pi / u.n_theta
    r_face = u.r_edges[1:-1]
    radial = np.sum((np.diff(v, axis=0) / dr) ** 2 * (r_face[:, None] * dth * dr))
    dang = np.roll(v, -1, axis=1) - v
    angular = np.sum(dang ** 2 * (dr / (u.r_centers[:, None] * dth)))
    return float(radial + angular)


def rearrange(u: PolarGridFunction) -> RadialFunction:
    """Symmetric decreasing rearrangement as a step profile."""
    v = u.values.ravel()
    if np.any(v < 0):
        raise InvalidInputError("rearrangement expects a nonnegative function (pass |u|)")
    order = np.argsort(-v, kind="stable")
    vals = v[order]
    area = np.cumsum(u.areas.ravel()[order])
    R = np.sqrt(area / area[-1])
    nodes = np.concatenate([[0.0], R])
    nodes[-1] = 1.0
    if vals[-1] != 0.0:
        raise InvalidInputError("rearranged profile does not vanish at the boundary")
    return RadialFunction(nodes, np.concatenate([[vals[0]], vals]), kind="step",
                          bins=u.r_edges)


def polya_szego_defect(u: PolarGridFunction) -> float:
    """``E(u*) - E(u)``: rearranged energy (on the companion) minus the discrete grid energy."""
    return dirichlet_energy(rearrange(u.abs())) - polar_energy(u)


def _check_grids(u: PolarGridFunction, v: PolarGridFunction):
    if u.values.shape != v.values.shape:
        raise GeometryError(f"mismatched polar grids {u.values.shape} vs {v.values.shape}")


def step_product_integral(f: RadialFunction, g: RadialFunction) -> float:
    """``int_D f g dx`` for two step profiles, exact on the merged annuli."""
    nodes = np.union1d(f.nodes, g.nodes)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    ring = math.pi * np.diff(nodes ** 2)
    return float(np.sum(ring * f(mid) * g(mid)))


def hardy_littlewood_check(u: PolarGridFunction, v: PolarGridFunction):
    """Return ``(int u* v*, int u v)``; the first dominates the second."""
    _check_grids(u, v)
    lhs = step_product_integral(rearrange(u), rearrange(v))
    rhs = float(np.sum(u.areas * u.values * v.values))
    return lhs, rhs


def step_exp_integral(f: RadialFunction, alpha: float = 0.0, coeff: float = 1.0) -> float:
    """``int_D |x|^{2 alpha} exp(coeff f)`` for a step profile, exact per annulus."""
    a1 = 1.0 + check_order(alpha)
    ring = math.pi / a1 * np.diff(f.nodes ** (2 * a1))
    return float(np.sum(ring * np.exp(coeff * f.values[1:])))


def singular_exp_monotonicity_check(u: PolarGridFunction, alpha: float):
    """Return ``(int |x|^{2a} e^{u*}, int |x|^{2a} e^{u})`` for ``alpha`` in (-1, 0]."""
    alpha = check_order(alpha)
    if alpha > 0:
        raise UnsupportedGeometryError("the singular-weight rearrangement inequality needs alpha <= 0")
    lhs = step_exp_integral(rearrange(u), alpha)
    rhs = u.exp_integral(alpha)
    return lhs, rhs
