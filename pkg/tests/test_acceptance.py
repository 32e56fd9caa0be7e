"""Acceptance criteria 1-12.

Each test prints one ``CRITERION k: PASS|FAIL`` line with the measured
numbers and fails when any part of the criterion fails. Tolerances are the
stated ones; nothing is relaxed to make a line green.
"""
import math

import numpy as np

from conftest import ACCEPTANCE_LINES
from singmt.functionals import (
    ConicalWeight,
    FunctionalParams,
    disk_test_family,
    lambda_q_disk,
    mt_functional_disk,
    onofri_deficit,
)
from singmt.maximizer import maximize, sup_convergence_scan
from singmt.radial import (
    bubble_profile,
    moser_function,
    onofri_sharpness_family,
    radial_decay_bound,
    radial_integral,
    stereographic_energy,
)
from singmt.rearrangement import (
    PolarGridFunction,
    hardy_littlewood_check,
    polya_szego_defect,
    rearrange,
    singular_exp_monotonicity_check,
)
from singmt.sampling import random_decreasing_radial, random_polar, random_radial
from singmt.torus import (
    TestFamilySpec,
    annulus_energy_check,
    green_function,
    lambda_q_torus,
    lambda_q_value,
    supercritical_family,
)
from singmt.torus import test_family_w as build_family

from oracles import bubble_partial_mass_quad

FOUR_PI = 4 * math.pi
FLAT = ConicalWeight((), (), 1.0, "torus")
CC = math.pi * (1 + math.e)


def _report(k, parts):
    """``parts`` is a list of ``(ok, text)``; records and asserts the criterion."""
    ok = all(p for p, _ in parts)
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} | " + "; ".join(
        f"{'ok' if p else 'FAIL'} {t}" for p, t in parts)
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_stereographic_integrals():
    u0 = bubble_profile(0.0, stereographic=True)
    parts = []
    for r in (1.0, 2.0, 10.0):
        quad = radial_integral(lambda x: u0.derivative(x) ** 2, r)
        err = abs(quad / stereographic_energy(r) - 1)
        parts.append((err <= 1e-6, f"energy r={r:g} rel err {err:.1e}"))
    limit = 8 * math.pi * math.log(2) - 8 * math.pi
    quad = radial_integral(lambda x: u0(x) * np.exp(u0(x)), 100.0)
    parts.append((abs(quad - limit) <= 1e-3,
                  f"int_(D_100) u0 e^u0 = {quad:.5f} vs full-plane {limit:.5f} (diff {abs(quad - limit):.2e}, tol 1e-3)"))
    _report(1, parts)


def test_criterion_02_onofri_sharpness():
    parts = []
    for alpha in (0.0, -0.5):
        d = []
        for eps in (1e-2, 1e-3, 1e-4):
            g = abs(math.log(eps)) ** (1 / (1 + alpha))
            d.append(onofri_deficit(onofri_sharpness_family(eps, alpha, g), alpha))
        parts.append((d[1] <= 0.05, f"alpha={alpha:g} deficit(1e-3)={d[1]:.4f}"))
        parts.append((d[0] > d[1] > d[2], f"alpha={alpha:g} decreasing {d[0]:.4f},{d[1]:.4f},{d[2]:.4f}"))
    _report(2, parts)


def test_criterion_03_onofri_inequality():
    parts = []
    for alpha in (0.0, -0.5):
        mins = []
        for s in range(1000):
            rng = np.random.default_rng([2024, s])
            u = random_radial(rng) if s % 2 == 0 else random_polar(rng, nonnegative=False)
            mins.append(onofri_deficit(u, alpha))
        m = min(mins)
        parts.append((m >= -1e-6, f"alpha={alpha:g} min deficit over 1000 = {m:.3e}"))
    _report(3, parts)


def test_criterion_04_bubble_mass():
    parts = []
    R = 50.0
    for alpha, ab in ((0.0, 0.0), (-0.5, -0.5), (-0.25, -0.5)):
        b = bubble_profile(alpha, 1.0, ab)
        inner = radial_integral(lambda r: np.exp(2 * b.beta_bar * b(r)), R, alpha)
        err = abs(inner + b.tail_mass(R) - (1 + alpha) / (1 + ab))
        ref = abs(bubble_partial_mass_quad(alpha, ab, 1.0, R) - inner)
        parts.append((err <= 1e-4, f"({alpha:g},{ab:g}) mass err {err:.1e} (|grid - quad| {ref:.1e})"))
    _report(4, parts)


def test_criterion_05_carleson_chang():
    vals = {}
    for eps in (1e-2, 1e-3, 1e-4):
        vals[eps] = mt_functional_disk(disk_test_family(eps).u, FunctionalParams(FOUR_PI)).value
    rel = abs(vals[1e-3] / CC - 1)
    best = max(vals.values())
    parts = [
        (rel <= 0.10, f"F(1e-3)={vals[1e-3]:.4f} vs pi(1+e)={CC:.4f} rel {rel:.3f} (tol 0.10); "
                      f"F(1e-2,1e-4)={vals[1e-2]:.4f},{vals[1e-4]:.4f}"),
        (best > math.pi * math.e + math.pi, f"max over eps {best:.4f} > pi e + pi"),
    ]
    _report(5, parts)


def test_criterion_06_phase_transitions():
    w = ConicalWeight.disk(-0.5)
    rhos = (1e-2, 1e-3, 1e-4, 1e-5)
    sup = [mt_functional_disk(moser_function(r), FunctionalParams(1.1 * w.beta_bar, 0.0, 2.0, w)).value
           for r in rhos]
    sub = [mt_functional_disk(moser_function(r), FunctionalParams(0.95 * w.beta_bar, 0.0, 2.0, w)).value
           for r in rhos]
    ratios = [b / a for a, b in zip(sup, sup[1:])]
    parts = [
        (min(ratios) >= 10, "1.1 beta_bar decade ratios " + ",".join(f"{x:.3f}" for x in ratios)
         + f" (need >= 10; values {sup[0]:.2f}..{sup[-1]:.2f})"),
        (max(sub) < 2 * min(sub), "0.95 beta_bar values " + ",".join(f"{x:.3f}" for x in sub)),
    ]
    _report(6, parts)


def test_criterion_07_rearrangement_suite():
    lp_err, hl_bad, dec_bad = 0.0, 0, 0
    for s in range(500):
        rng = np.random.default_rng([7, s])
        u, v = random_polar(rng, 24, 24), random_polar(rng, 24, 24)
        us = rearrange(u)
        for p in (1.0, 2.0, 4.0):
            a = u.lp_norm(p)
            b = float(np.sum(math.pi * np.diff(us.nodes ** 2) * us.values[1:] ** p) ** (1 / p))
            lp_err = max(lp_err, abs(a - b) / a)
        lhs, rhs = hardy_littlewood_check(u, v)
        hl_bad += lhs < rhs - 1e-12 * max(1.0, rhs)
        lhs, rhs = singular_exp_monotonicity_check(u, -0.5)
        dec_bad += lhs < rhs * (1 - 1e-12)
    f = lambda r, th: np.cos(0.5 * math.pi * r) ** 2 + 0 * th  # noqa: E731
    ps = [abs(polya_szego_defect(PolarGridFunction.from_function(f, n, n))) for n in (32, 64)]
    parts = [
        (lp_err <= 1e-10, f"max L^p rel err {lp_err:.1e}"),
        (hl_bad == 0, f"Hardy-Littlewood failures {hl_bad}/500"),
        (dec_bad == 0, f"(dec) failures {dec_bad}/500"),
        (ps[1] < ps[0], f"Polya-Szego slack {ps[0]:.2e} -> {ps[1]:.2e}"),
    ]
    _report(7, parts)


def test_criterion_08_decay_bound():
    worst = -math.inf
    for s in range(1000):
        rng = np.random.default_rng([8, s])
        u = random_decreasing_radial(rng, n=256, energy=float(rng.uniform(0.01, 1.0)))
        r = float(np.exp(rng.uniform(math.log(1e-5), math.log(0.99))))
        lhs, rhs = radial_decay_bound(u, r)
        worst = max(worst, lhs - rhs)
    eq = max(abs(np.subtract(*radial_decay_bound(moser_function(rho), rho))) for rho in (0.3, 0.1, 1e-2, 1e-3))
    parts = [(worst <= 1e-10, f"max(lhs - rhs) over 1000 = {worst:.3e}"),
             (eq <= 1e-10, f"Moser equality gap {eq:.1e}")]
    _report(8, parts)


def test_criterion_09_torus_green():
    g = green_function((0.0, 0.0), n=256)
    errs = [abs(np.subtract(*annulus_energy_check(g, d))) for d in (0.1, 0.05)]
    measured = errs[1] / errs[0]
    predicted = 0.05 * math.log(20) / (0.1 * math.log(10))
    parts = [(abs(measured / predicted - 1) <= 0.3,
              f"annulus errors {errs[0]:.2e},{errs[1]:.2e} ratio {measured:.3f} vs delta|log delta| {predicted:.3f}")]

    lq = lambda_q_value(2.0, 256)
    p = (0.5, 0.5)
    g0 = green_function(p, n=256).field.values
    fr = (0.4, 0.2, 0.1, 0.05)
    d = [float(np.max(np.abs(green_function(p, lam=f * lq, n=256).field.values - g0))) for f in fr]
    ratios = [b / a for a, b in zip(d, d[1:])]
    small = ratios[1:]          # small-lambda pairs 0.2->0.1 and 0.1->0.05
    parts.append((all(abs(x / 0.5 - 1) <= 0.2 for x in small),
                  "halving ratios (lam/lam_q 0.4->0.2->0.1->0.05) " + ",".join(f"{x:.3f}" for x in ratios)
                  + "; asserted on the last two"))
    l2 = lambda_q_torus(2.0, 256)[0]
    parts.append((abs(l2 / (4 * math.pi ** 2) - 1) <= 0.01, f"lambda_2(n=256) = {l2:.4f} vs 4 pi^2"))
    _report(9, parts)


def test_criterion_10_calibration():
    p = (0.5, 0.5)
    g = green_function(p, n=512)
    reps = {e: build_family(TestFamilySpec(p, e), FLAT, g)[2] for e in (1e-2, 1e-3)}
    L = [abs(reps[e].L + 1) for e in (1e-2, 1e-3)]
    c2 = [2 * math.pi * reps[e].c ** 2 / abs(math.log(e)) for e in (1e-2, 1e-3)]
    en = [reps[e].energy for e in (1e-2, 1e-3)]
    parts = [
        (L[1] < L[0], f"|L+1| {L[0]:.3e} -> {L[1]:.3e}"),
        (all(abs(x - 1) <= 0.15 for x in c2), "2 pi c^2/|log eps| " + ",".join(f"{x:.3f}" for x in c2)),
        (all(abs(x - 1) <= 1e-3 for x in en), "energy (n=512) " + ",".join(f"{x:.5f}" for x in en)),
    ]
    _report(10, parts)


def test_criterion_11_supercritical_divergence():
    n = 256
    lq = lambda_q_value(2.0, n)
    X, logv = [], []
    for eps in (1e-2, 1e-4, 1e-6):
        r = supercritical_family(eps, FOUR_PI, lam=1.5 * lq, n=n)
        X.append(r.extra["t2_log_eps"])
        logv.append(r.value.log_value)
    slopes = [(b - a) / (d - c) for a, b, c, d in zip(logv, logv[1:], X, X[1:])]
    per = [lv / x for lv, x in zip(logv, X)]
    ok = X[0] < X[1] < X[2] and per[0] < per[1] < per[2] and slopes[0] < slopes[1]
    parts = [(ok, "X=t^2|log eps| " + ",".join(f"{x:.4f}" for x in X) + "; log F " + ",".join(f"{v:.4f}" for v in logv)
              + "; secant slopes " + ",".join(f"{s:.2f}" for s in slopes))]
    _report(11, parts)


def test_criterion_12_subcritical_attainment():
    lq = lambda_q_disk(2.0)[0]
    p = FunctionalParams(0.9 * FOUR_PI, 0.5 * lq, 2.0)
    r = maximize(p)
    betas = [f * FOUR_PI for f in (0.5, 0.7, 0.9, 0.95)]
    vals = [v for _, v, _ in sup_convergence_scan(FunctionalParams(0.5 * FOUR_PI), betas)]
    parts = [
        (r.converged and r.residual <= 1e-6, f"residual {r.residual:.2e} after {r.iterations} iterations"),
        (r.value.value >= r.zero_value, f"value {r.value.value:.4f} >= zero-field {r.zero_value:.4f}"),
        (all(b >= a for a, b in zip(vals, vals[1:])), "scan " + ",".join(f"{v:.4f}" for v in vals)),
    ]
    _report(12, parts)
