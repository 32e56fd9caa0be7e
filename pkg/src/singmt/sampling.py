"""Random test fields for property checks and the CLI sweeps.

All generators draw from a caller-supplied ``numpy.random.Generator`` so a
fixed seed reproduces the same fields.
"""
from __future__ import annotations

import math

import numpy as np

from .radial import RadialFunction, dirichlet_energy, geometric_nodes
from .rearrangement import PolarGridFunction


def random_radial(rng: np.random.Generator, n: int = 512, modes: int = 6,
                  max_energy: float = 50.0, eps_min: float = 1e-6) -> RadialFunction:
    """Sine series in ``t = log r`` plus a random multiple of the log profile.

    The result is rescaled to a uniform random energy in ``(0, max_energy]``.
    """
    nodes = geometric_nodes(n, eps_min)
    t = np.log(nodes[1:]) / math.log(eps_min)          # 1 at r = eps_min, 0 at r = 1
    k = np.arange(1, modes + 1)
    a = rng.standard_normal(modes) / k
    vals = np.sin(math.pi * np.outer(t, k)) @ a + rng.normal() * t
    vals = np.concatenate([[vals[0]], vals])
    vals[-1] = 0.0
    u = RadialFunction(nodes, vals)
    E = dirichlet_energy(u)
    if E == 0:
        return u
    target = max_energy * (1 - rng.random())
    return u.scaled(math.sqrt(target / E))


def random_decreasing_radial(rng: np.random.Generator, n: int = 512, eps_min: float = 1e-6,
                             energy: float = 1.0) -> RadialFunction:
    """Nonincreasing profile: cumulative sum of random nonnegative jumps, scaled to ``energy``."""
    nodes = geometric_nodes(n, eps_min)
    m = nodes.size - 2
    jumps = rng.exponential(size=m) * rng.random(m) ** 2
    vals = np.concatenate([np.cumsum(jumps[::-1])[::-1], [0.0]])   # u(r_1), ..., u(r_N) = 0
    vals = np.concatenate([[vals[0]], vals])
    u = RadialFunction(nodes, vals)
    return u.scaled(math.sqrt(energy / dirichlet_energy(u)))


def random_polar(rng: np.random.Generator, n_r: int = 32, n_theta: int = 32, modes: int = 4,
                 nonnegative: bool = True, max_amplitude: float = 5.0) -> PolarGridFunction:
    """Separable Fourier modes sampled at cell centres; the outer ring is zeroed.

    The peak magnitude is drawn uniformly from ``(0, max_amplitude]``.
    """
    a = rng.standard_normal((modes, modes))
    ph = rng.uniform(0, 2 * math.pi, (modes, modes))

    def f(r, th):
        out = np.zeros(np.broadcast(r, th).shape)
        for j in range(modes):
            for k in range(modes):
                out = out + a[j, k] * np.sin((j + 1) * math.pi * r) * np.cos(k * th + ph[j, k])
        return np.abs(out) if nonnegative else out

    u = PolarGridFunction.from_function(f, n_r, n_theta)
    peak = float(np.max(np.abs(u.values)))
    if peak == 0:
        return u
    amp = max_amplitude * (1 - rng.random())
    return PolarGridFunction(u.values * (amp / peak))
