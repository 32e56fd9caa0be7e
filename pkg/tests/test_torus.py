import json
import math

import numpy as np
import pytest

from singmt.errors import (
    GeometryError,
    InvalidInputError,
    InvalidWeightError,
    RegimeError,
    ScaleError,
)
from singmt.functionals import ConicalWeight, FunctionalParams
from singmt.maximizer import threshold_bound
from singmt.torus import test_family_w as build_family
from singmt.torus import (
    TestFamilySpec,
    TorusField,
    annulus_energy_check,
    calibrate,
    core_energy_remainder,
    default_scales,
    discrete_dirac,
    green_function,
    lambda_q_torus,
    lambda_q_value,
    laplacian_symbol,
    moser_profile,
    neg_laplacian,
    robin_constant,
    scale_conditions,
    smooth_cutoff,
    solve_poisson_mean_zero,
    supercritical_family,
    surface_functional,
    weighted_area,
)

from oracles import torus_robin_closed_form

TORUS_A0 = -0.2085778                                # torus_robin_closed_form()
# int over the unit square of |x - centre|^{2 alpha}, by quad over the eight boundary triangles
SQUARE_AREA_M05 = 3.5254943
SQUARE_AREA_P05 = 0.3825979
FLAT = ConicalWeight((), (), 1.0, "torus")


def test_frozen_oracles_reproduce():
    from scipy import integrate

    assert torus_robin_closed_form() == pytest.approx(TORUS_A0, abs=5e-8)
    for a, ref in ((-0.5, SQUARE_AREA_M05), (0.5, SQUARE_AREA_P05)):
        f = lambda th: (0.5 / max(abs(math.cos(th)), abs(math.sin(th)))) ** (2 * a + 2) / (2 * a + 2)
        assert 8 * integrate.quad(f, 0, math.pi / 4)[0] == pytest.approx(ref, abs=5e-8)


# -- fields and I/O --------------------------------------------------------------------


def test_field_invariants():
    with pytest.raises(InvalidInputError):
        TorusField(np.ones((64, 64)))                 # mean not zero
    with pytest.raises(InvalidInputError):
        TorusField(np.zeros((64, 32)))
    with pytest.raises(InvalidInputError):
        TorusField(np.zeros((48, 48)))                # not a power of two
    f = TorusField.project(np.random.default_rng(0).random((64, 64)))
    assert abs(f.values.mean()) <= 1e-13


def test_binary_round_trip(tmp_path):
    f = TorusField.project(np.random.default_rng(1).standard_normal((64, 64)))
    path = tmp_path / "u.bin"
    f.to_binary(path)
    raw = path.read_bytes()
    assert len(raw) == 8 + 8 * 64 * 64
    assert int.from_bytes(raw[:8], "little") == 64
    g = TorusField.from_binary(path)
    np.testing.assert_array_equal(f.values, g.values)


def test_binary_size_mismatch(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes((64).to_bytes(8, "little") + b"\0" * 80)
    with pytest.raises(InvalidInputError):
        TorusField.from_binary(path)


def test_csv_export(tmp_path):
    f = TorusField(np.zeros((8, 8)))
    path = tmp_path / "u.csv"
    f.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "i,j,x,y,value" and len(lines) == 65


# -- Poisson ---------------------------------------------------------------------------


def test_poisson_single_mode():
    n = 64
    x = np.arange(n) / n
    f = np.cos(2 * math.pi * x)[:, None] * np.ones((1, n))
    u = solve_poisson_mean_zero(f).values
    sym = n * n * (2 - 2 * math.cos(2 * math.pi / n))
    np.testing.assert_allclose(u, f / sym, atol=1e-15)
    np.testing.assert_allclose(u, f / (4 * math.pi ** 2), rtol=1e-3, atol=1e-15)


def test_poisson_zero():
    assert np.all(solve_poisson_mean_zero(np.zeros((64, 64))).values == 0.0)


def test_poisson_forward_residual():
    f = np.random.default_rng(2).standard_normal((128, 128))
    f -= f.mean()
    u = solve_poisson_mean_zero(f).values
    assert np.max(np.abs(neg_laplacian(u) - f)) <= 1e-10 * max(1.0, np.abs(f).max())
    assert abs(u.mean()) <= 1e-13


def test_discrete_dirac():
    d = discrete_dirac(64, (0.25, 0.5))
    assert d[16, 32] == 64 * 64 - 1
    assert abs(d.mean()) < 1e-12
    with pytest.raises(GeometryError):
        discrete_dirac(64, (0.3, 0.5))


# -- Green functions ----------------------------------------------------------------------


def test_green_mean_and_translation():
    g0 = green_function((0.0, 0.0), n=128)
    gp = green_function((0.25, 0.5), n=128)
    assert abs(g0.field.values.mean()) <= 1e-12
    np.testing.assert_allclose(np.roll(g0.field.values, (32, 64), axis=(0, 1)), gp.field.values, atol=1e-12)
    assert gp.A == pytest.approx(g0.A, abs=1e-12)


def test_green_symmetry():
    n = 64
    p, x = (0.125, 0.25), (0.5, 0.75)
    gp = green_function(p, n=n).field.values
    gx = green_function(x, n=n).field.values
    assert gp[int(x[0] * n), int(x[1] * n)] == pytest.approx(gx[int(p[0] * n), int(p[1] * n)], abs=1e-12)


def test_green_robin_converges_to_closed_form():
    errs = [abs(green_function((0, 0), n=n).A - TORUS_A0) for n in (256, 512)]
    assert errs[1] < errs[0]
    assert errs[1] < 1e-4


def test_robin_fit_synthetic():
    n = 256
    d = np.hypot(*np.meshgrid(np.minimum(np.arange(n), n - np.arange(n)) / n,
                              np.minimum(np.arange(n), n - np.arange(n)) / n, indexing="ij"))
    d[0, 0] = 1.0
    G = -np.log(d) / (2 * math.pi) + 0.3
    A, res = robin_constant(G, (0, 0))
    assert A == pytest.approx(0.3, abs=1e-14)
    assert res < 1e-14


def test_robin_fit_annulus_halving():
    g = green_function((0, 0), n=512)
    A1, _ = robin_constant(g.field, (0, 0), 8 / 512, 16 / 512)
    A2, _ = robin_constant(g.field, (0, 0), 4 / 512, 8 / 512)
    # regular part is O(|x|^2) on the square torus, well inside C r
    assert abs(A1 - A2) <= 16 / 512


def test_robin_fit_geometry_errors():
    g = green_function((0, 0), n=64)
    with pytest.raises(GeometryError):
        robin_constant(g.field, (0, 0), 0.2, 0.1)
    with pytest.raises(GeometryError):
        robin_constant(g.field, (0, 0), 1 / 64, 1.1 / 64)


def test_green_lambda_limit():
    lq = lambda_q_value(2.0, 128)
    g0 = green_function((0.5, 0.5), n=128)
    diffs, dA = [], []
    for f in (0.4, 0.2, 0.1):
        g = green_function((0.5, 0.5), lam=f * lq, n=128)
        diffs.append(np.max(np.abs(g.field.values - g0.field.values)) / (f * lq))
        dA.append(abs(g.A - g0.A))
    # ||G^lam - G^0|| / lam stays bounded and A^lam -> A^0
    assert max(diffs) < 2 * min(diffs)
    assert dA[0] > dA[1] > dA[2]


def test_green_nonlinear_q():
    lq4 = lambda_q_value(4.0, 64)
    g = green_function((0, 0), lam=0.3 * lq4, q=4.0, n=64)
    assert g.iterations > 0
    assert abs(g.field.values.mean()) <= 1e-12
    # fixed-point equation holds
    G = g.field.values
    rhs = discrete_dirac(64, (0, 0)) + g.lam * g.norm_q ** -2 * np.abs(G) ** 2 * G
    rhs -= rhs.mean()
    assert np.max(np.abs(neg_laplacian(G) - rhs)) <= 1e-6 * np.abs(rhs).max()


def test_green_regime_error():
    with pytest.raises(RegimeError):
        green_function((0, 0), lam=41.0, n=64)
    with pytest.raises(InvalidInputError):
        green_function((0, 0), n=32)


def test_green_json(tmp_path):
    g = green_function((0.5, 0.5), n=64)
    path = tmp_path / "g.json"
    g.write_json(path)
    data = json.loads(path.read_text())
    assert set(data) == {"p", "lambda", "q", "A", "norm_q", "fit_residual"}
    assert data["A"] == g.A


def test_annulus_energy_check():
    g = green_function((0, 0), n=256)
    lhs, rhs = annulus_energy_check(g, 0.1)
    assert rhs == pytest.approx(-math.log(0.1) / (2 * math.pi) + g.A, rel=1e-14)
    assert abs(lhs - rhs) < 0.1 * math.log(10)
    errs = [abs(np.subtract(*annulus_energy_check(g, d))) for d in (0.1, 0.05)]
    assert errs[1] < errs[0]
    with pytest.raises(GeometryError):
        annulus_energy_check(g, 0.01)


# -- lambda_q -------------------------------------------------------------------------


def test_lambda_2_torus():
    val, u0 = lambda_q_torus(2.0, 64)
    sym = laplacian_symbol(64)
    assert val == pytest.approx(np.min(sym[sym > 0]), rel=1e-10)
    assert val == pytest.approx(4 * math.pi ** 2, rel=1e-2)
    assert np.max(np.abs(neg_laplacian(u0.values) - val * u0.values)) <= 1e-8
    assert np.mean(u0.values ** 2) == pytest.approx(1.0, rel=1e-12)
    assert abs(u0.values.mean()) <= 1e-13


def test_lambda_4_torus_normalization():
    val, u0 = lambda_q_torus(4.0, 64)
    assert np.mean(u0.values ** 4) ** 0.25 == pytest.approx(1.0, rel=1e-12)
    assert np.mean(u0.values * neg_laplacian(u0.values)) == pytest.approx(val, rel=1e-10)


# -- surface functional ---------------------------------------------------------------


def test_surface_zero_field_flat():
    v = surface_functional(np.zeros((64, 64)), FunctionalParams(5.0, 0.0, 2.0, FLAT))
    assert v.value == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("alpha,ref", [(-0.5, SQUARE_AREA_M05), (0.5, SQUARE_AREA_P05)])
def test_singular_weight_area(alpha, ref):
    w = ConicalWeight(((0.5, 0.5),), (alpha,), 1.0, "torus")
    a64, a128 = weighted_area(w, 64), weighted_area(w, 128)
    assert abs(a128 - a64) < 5e-3 * a128
    assert abs(a128 - ref) < abs(a64 - ref) + 1e-12
    assert a128 == pytest.approx(ref, rel=1e-3)
    v = surface_functional(np.zeros((128, 128)), FunctionalParams(1.0, 0.0, 2.0, w))
    assert v.value == pytest.approx(a128, rel=1e-12)


def test_surface_needs_torus_weight_and_grid_points():
    with pytest.raises(InvalidWeightError):
        surface_functional(np.zeros((64, 64)), FunctionalParams(1.0))
    w = ConicalWeight(((0.3, 0.3),), (-0.5,), 1.0, "torus")
    with pytest.raises(GeometryError):
        surface_functional(np.zeros((64, 64)), FunctionalParams(1.0, weight=w))


def test_surface_scales_with_V():
    u = TorusField.project(np.random.default_rng(4).standard_normal((64, 64)) * 0.2)
    a = surface_functional(u, FunctionalParams(3.0, 1.0, 2.0, FLAT)).value
    b = surface_functional(u, FunctionalParams(3.0, 1.0, 2.0, ConicalWeight((), (), 2.5, "torus"))).value
    assert b == pytest.approx(2.5 * a, rel=1e-12)


# -- calibration and the test family ---------------------------------------------------------


@pytest.mark.parametrize("eps,ab,A", [(1e-2, 0.0, -0.2), (1e-3, -0.5, 0.1), (1e-4, 0.0, 0.0)])
def test_calibration_identities(eps, ab, A):
    c, L = calibrate(eps, ab, A)
    bb = 4 * math.pi * (1 + ab)
    k = 2 * (1 + ab)
    g = abs(math.log(eps)) ** (1 / (1 + ab))
    gk = g ** k
    rem = core_energy_remainder(g, k)
    assert bb * c * c - L == pytest.approx(math.log((1 + gk) / gk) + bb * A - k * math.log(eps), abs=1e-12)
    assert bb * c * c == pytest.approx(-1 - k * math.log(eps) + bb * A + rem, abs=1e-12)


def test_calibration_scale_error():
    with pytest.raises(ScaleError):
        calibrate(0.9, 0.0, -1.0)


def test_family_spec_validation():
    with pytest.raises(ScaleError):
        TestFamilySpec((0, 0), 0.2).validate()
    with pytest.raises(ScaleError):
        TestFamilySpec((0, 0), 1.5).validate()


def test_family_unit_energy_and_calibration():
    g = green_function((0.5, 0.5), n=128)
    spec = TestFamilySpec((0.5, 0.5), 1e-2)
    w, u, rep = build_family(spec, FLAT, g)
    assert rep.energy == pytest.approx(1.0, abs=1e-3)
    assert abs(u.values.mean()) <= 1e-13
    c, L = calibrate(1e-2, 0.0, g.A)
    assert (rep.c, rep.L) == (c, L)


def test_family_L_and_c_asymptotics():
    g = green_function((0.5, 0.5), n=128)
    reps = [build_family(TestFamilySpec((0.5, 0.5), e), FLAT, g)[2] for e in (1e-2, 1e-3)]
    assert abs(reps[1].L + 1) < abs(reps[0].L + 1)
    r = [2 * math.pi * rep.c ** 2 / abs(math.log(e)) for rep, e in zip(reps, (1e-2, 1e-3))]
    assert abs(r[1] - 1) < abs(r[0] - 1)


def test_family_mismatched_green():
    g = green_function((0.5, 0.5), n=64)
    with pytest.raises(InvalidInputError):
        build_family(TestFamilySpec((0.25, 0.5), 1e-2), FLAT, g)
    w = ConicalWeight(((0.5, 0.5),), (-0.5,), 1.0, "torus")
    with pytest.raises(InvalidWeightError):
        build_family(TestFamilySpec((0.5, 0.5), 1e-2), w, g)


@pytest.mark.parametrize("frac", [0.0, 0.02])
def test_family_strictly_exceeds_threshold(frac):
    lam = frac * lambda_q_value(2.0, 128)
    thr = threshold_bound(FLAT, lam, 2.0, n=128)
    g = green_function((0.5, 0.5), lam=lam, n=128)
    for eps in (1e-2, 5e-3):
        w, u, rep = build_family(TestFamilySpec((0.5, 0.5), eps, 0.0, lam), FLAT, g)
        v = surface_functional(u, FunctionalParams(4 * math.pi, lam, 2.0, FLAT), rep.local)
        assert v.value > thr


# -- supercritical -----------------------------------------------------------------------


def test_cutoff_and_moser_profile():
    r = np.array([0.0, 0.1, 0.15, 0.2, 0.3])
    c = smooth_cutoff(r, 0.1, 0.2)
    assert c[0] == 1.0 and c[1] == 1.0 and c[3] == 0.0 and c[4] == 0.0 and 0 < c[2] < 1
    m = moser_profile(np.array([0.0, 1e-3, 0.25]), 1e-3, 0.25)
    assert m[0] == m[1] and m[2] == 0.0


def test_default_scale_conditions():
    rows = [scale_conditions(e, *default_scales(e)) for e in (1e-4, 1e-16, 1e-64, 1e-256)]
    assert all(a[0] < b[0] for a, b in zip(rows, rows[1:]))     # t^2 |log eps| grows
    assert all(a[1] < b[1] for a, b in zip(rows, rows[1:]))     # r / eps grows
    assert all(a[2] > b[2] for a, b in zip(rows, rows[1:]))     # log^2 r / (t^2 |log eps|) shrinks


def test_supercritical_regime_errors():
    with pytest.raises(RegimeError):
        supercritical_family(1e-2, 0.9 * 4 * math.pi, n=64)
    with pytest.raises(RegimeError):
        supercritical_family(1e-2, 4 * math.pi, lam=1.0, n=64)


def test_supercritical_beta_growth_rate():
    beta = 1.05 * 4 * math.pi
    vals, lower = [], []
    for eps in (1e-2, 1e-3, 1e-4):
        r = supercritical_family(eps, beta, n=128)
        vals.append(r.value.value)
        peak = moser_profile(0.0, eps, r.r) - r.extra["mean"]
        lower.append(math.pi * eps ** 2 * math.exp(beta * peak ** 2))
        assert r.value.value > lower[-1]
    assert vals[0] < vals[1] < vals[2]
    rate = 10 ** ((beta - 4 * math.pi) / (2 * math.pi))
    for a, b in zip(lower, lower[1:]):
        assert b / a == pytest.approx(rate, rel=0.01)


def test_supercritical_critical_branch_normalized():
    lq = lambda_q_value(2.0, 128)
    r = supercritical_family(1e-3, 4 * math.pi, lam=1.5 * lq, n=128)
    assert r.t > 0 and 1e-3 < r.r
    assert r.energy > 0
    assert abs(r.field.values.mean()) <= 1e-13
