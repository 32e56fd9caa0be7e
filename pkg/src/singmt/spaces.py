"""Finite-dimensional spaces shared by the Rayleigh descent and the maximizer.

A space exposes

* ``K``: the energy form, ``energy(x) = x @ K @ x``; ``apply_K`` and
  ``solve_K`` (the inverse on the constraint subspace),
* two quadrature rules ``(P, logw)`` mapping degrees of freedom to values at
  quadrature points: one carrying the weight ``h`` of the functional and one
  unweighted for ``L^q`` norms,
* ``mass``: the dual vector of ``u -> int u`` (zero on the disk, where no mean
  constraint applies).

Dual vectors (first variations) are converted to gradients with ``solve_K``,
so every gradient is a Sobolev (energy-metric) gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.special import logsumexp

from .errors import ConvergenceError, DegenerateInputError, InvalidInputError
from .radial import RadialFunction, check_order, quadrature_rule


class RadialSpace:
    """Radial ``H^1_0`` fields on the disk with log-linear interpolation.

    Degrees of freedom are the node values ``u(r_1), ..., u(r_{N-1})``;
    ``u(r_N) = 0`` and ``u(r_0) = u(r_1)``.
    """

    geometry = "disk"

    def __init__(self, nodes, alpha: float = 0.0, V: float = 1.0):
        self.alpha = check_order(alpha)
        if not V > 0:
            raise InvalidInputError("V must be positive")
        self.V = float(V)
        nodes = np.asarray(nodes, dtype=float)
        self.template = RadialFunction(nodes, np.zeros_like(nodes))
        self.nodes = nodes
        N = nodes.size - 1
        self.n = N - 1
        dt = np.diff(np.log(nodes[1:]))
        c = 2 * math.pi / dt                       # one entry per cell [r_i, r_{i+1}], i = 1..N-1
        self._c = c
        diag = c.copy()
        diag[1:] += c[:-1]
        off = -c[:-1]
        self.K = sparse.diags([off, diag, off], [-1, 0, 1], format="csc")
        self._lu = splu(self.K)
        rh = quadrature_rule(self.template, self.alpha)
        rq = quadrature_rule(self.template, 0.0)
        self.P_h = rh.P[:, 1:N].tocsr()
        self.logw_h = rh.logw + math.log(self.V)
        self.P_q = rq.P[:, 1:N].tocsr()
        self.logw_q = rq.logw
        self.mass = None

    def apply_K(self, x):
        return self.K @ x

    def solve_K(self, r):
        return self._lu.solve(r)

    def energy(self, x) -> float:
        # sum of squared differences: x^T K x cancels badly on fine geometric grids
        d = np.diff(np.append(x, 0.0))
        return float(np.sum(self._c * d * d))

    def to_function(self, x) -> RadialFunction:
        vals = np.concatenate([[x[0]], x, [0.0]])
        return RadialFunction(self.nodes, vals)

    def from_function(self, u) -> np.ndarray:
        if isinstance(u, RadialFunction):
            if u.nodes.shape == self.nodes.shape and np.array_equal(u.nodes, self.nodes):
                return u.values[1:-1].copy()
            return np.asarray(u(self.nodes[1:-1]), dtype=float)
        return np.asarray(u(self.nodes[1:-1]), dtype=float)


@dataclass
class TorusSpace:
    """Mean-zero fields on the periodic ``n x n`` grid of the unit torus.

    The energy is ``h^2 * sum u (-Lap_h u)`` with the five-point Laplacian,
    whose Fourier symbol is ``n^2 (4 - 2 cos(2 pi k/n) - 2 cos(2 pi l/n))``.
    ``log_cell_weight`` holds ``log int_cell h`` for every cell.
    """

    n: int
    log_cell_weight: np.ndarray
    geometry: str = field(default="torus", init=False)

    def __post_init__(self):
        n = self.n
        k = np.fft.fftfreq(n, d=1.0 / n)
        c = 2 - 2 * np.cos(2 * math.pi * k / n)
        self.symbol = n * n * (c[:, None] + c[None, :])
        inv = np.zeros_like(self.symbol)
        inv[self.symbol > 0] = 1.0 / self.symbol[self.symbol > 0]
        self._inv_symbol = inv
        self.h2 = 1.0 / (n * n)
        self.P_h = sparse.identity(n * n, format="csr")
        self.logw_h = np.asarray(self.log_cell_weight, dtype=float).ravel()
        self.P_q = self.P_h
        self.logw_q = np.full(n * n, math.log(self.h2))
        self.mass = np.full(n * n, self.h2)

    def neg_laplacian(self, u: np.ndarray) -> np.ndarray:
        n = self.n
        return n * n * (4 * u - np.roll(u, 1, 0) - np.roll(u, -1, 0)
                        - np.roll(u, 1, 1) - np.roll(u, -1, 1))

    def inv_neg_laplacian(self, f: np.ndarray) -> np.ndarray:
        f = f - f.mean()
        return np.real(np.fft.ifft2(np.fft.fft2(f) * self._inv_symbol))

    def apply_K(self, x):
        u = x.reshape(self.n, self.n)
        return (self.h2 * self.neg_laplacian(u)).ravel()

    def solve_K(self, r):
        f = r.reshape(self.n, self.n) / self.h2
        return self.inv_neg_laplacian(f).ravel()

    def energy(self, x) -> float:
        return float(x @ self.apply_K(x))

    @property
    def n_dof(self) -> int:
        return self.n * self.n


def lq_norm2(space, x, q: float):
    """Return ``(N2, dN2)``: ``||u||_q^2`` and its first variation as a dual vector."""
    v = space.P_q @ x
    a = np.abs(v)
    with np.errstate(divide="ignore"):
        lv = np.log(a)
    lj = logsumexp(space.logw_q + q * lv)
    if not np.isfinite(lj):
        raise DegenerateInputError("field has zero L^q norm")
    N2 = math.exp(2 * lj / q)
    # d(J^{2/q}) = 2 J^{(2-q)/q} * int |u|^{q-2} u du
    coef = 2 * math.exp((2 - q) / q * lj)
    dens = np.exp(space.logw_q) * a ** (q - 1) * np.sign(v)
    return N2, coef * (space.P_q.T @ dens)


@dataclass
class RayleighResult:
    value: float
    x: np.ndarray
    iterations: int
    history: list


def rayleigh_descent(space, q: float, x0: np.ndarray, rel_tol: float = 1e-12,
                     step_tol: float = 1e-10, max_iter: int = 10_000) -> RayleighResult:
    """Minimize ``energy / ||u||_q^2`` by energy-preconditioned descent with step halving.

    The preconditioned direction is ``K^{-1} dR``; a unit step is exactly an
    inverse-iteration update when ``q = 2``. Iteration stops once the relative
    change of the quotient is below ``rel_tol`` and the step (in energy norm)
    is below ``step_tol``.
    """
    if q <= 1:
        raise InvalidInputError("q must exceed 1")
    x = np.asarray(x0, dtype=float).copy()
    if space.mass is not None:
        x = space.solve_K(space.apply_K(x))      # project onto mean zero
    x /= math.sqrt(space.energy(x))
    N2, dN2 = lq_norm2(space, x, q)
    R = 1.0 / N2
    history = [R]
    for it in range(1, max_iter + 1):
        d = (2 * x - R * space.solve_K(dN2)) / N2
        t = 1.0
        while True:
            y = x - t * 0.5 * N2 * d
            y /= math.sqrt(space.energy(y))
            N2y, dN2y = lq_norm2(space, y, q)
            Ry = 1.0 / N2y
            if Ry <= R * (1 + 1e-15) or t < 1e-12:
                break
            t *= 0.5
        step = math.sqrt(max(space.energy(y - x), 0.0))
        rel = abs(R - Ry) / R
        x, N2, dN2, R = y, N2y, dN2y, Ry
        history.append(R)
        if rel < rel_tol and step < step_tol:
            return RayleighResult(R, x, it, history)
    raise ConvergenceError(f"Rayleigh descent did not converge in {max_iter} iterations",
                           diagnostics={"value": R, "history_tail": history[-5:]}, last=x)
