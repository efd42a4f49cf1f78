import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from cantorlab import cantor, fields as F

REF = F.make_geometry("sub", 2, 1.5, -3.0)
SUPER = F.make_geometry("super", 2, 3.0, 1.0)
MATCH = F.make_geometry("matching", 2, 2.0)


def sample(n, seed=0, d=2):
    return np.random.default_rng(seed).uniform(-1, 1, (n, d))


def fd_grad(f, x, h=1e-6):
    return np.column_stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.shape[1])])


def test_theta_sandwich_and_slope():
    t = np.linspace(0, 1, 10**4)
    th = F.theta(t)
    assert np.all(th[t > 0.5] == 1) and np.all(th[t < 0.25] == 0)
    assert np.all((th >= 0) & (th <= 1))
    assert F.theta(0.6) == 1.0 and F.theta(0.2) == 0.0
    assert np.abs(F.theta_prime(t)).max() <= 6.0
    assert np.all(F.theta_prime(t[(t < 0.25) | (t > 0.5)]) == 0)
    assert quad(F.theta_prime, 0.25, 0.5, points=F.THETA_KINKS[1:3])[0] == pytest.approx(1.0, abs=1e-12)


def test_theta_derivatives_match_differences():
    t = np.linspace(0.2, 0.55, 997)
    h = 1e-6
    assert np.allclose((F.theta(t + h) - F.theta(t - h)) / (2 * h), F.theta_prime(t), atol=1e-7)
    assert np.allclose((F.theta_prime(t + h) - F.theta_prime(t - h)) / (2 * h), F.theta_second(t), atol=1e-5)


def test_cone_pair_validation():
    with pytest.raises(ValueError):
        F.cone_ramp(1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        F.cone_ramp(1.0, 1.0, 1.1)
    with pytest.raises(ValueError):
        F.cone_ramp(1.0, 1.0, 5.0)


def test_rho_cone_sandwich_and_gradient():
    spec = REF.spec
    rng = np.random.default_rng(4)
    xc = rng.uniform(-0.6, 0.6, (10**4, 1))
    xh = rng.uniform(-1, 1, (10**4, 1))
    val, grad = F.rho_cone(spec, 12, xc, xh, 0.5, 2.0)
    dist = cantor.distance(spec, 12, xc)
    h = np.abs(xh[:, 0])
    assert np.all(val[dist <= 0.5 * h] == 1.0)
    assert np.all(val[dist >= 2.0 * h] == 0.0)
    assert np.all((val >= 0) & (val <= 1))
    # central differences carry h^2 |x_h|^-3 truncation error, so stay off the axis
    shell = np.nonzero((dist > 0.6 * h) & (dist < 1.9 * h) & (h > 0.1))[0][:100]
    assert shell.size == 100
    x = np.column_stack([xc[shell], xh[shell]])
    fd = fd_grad(lambda z: F.rho_cone(spec, 12, z[:, :1], z[:, 1:], 0.5, 2.0)[0], x, 1e-5)
    # the distance has kinks at gap midpoints; skip points within a step of one
    _, slope_p = cantor.distance_slope_1d(spec, x[:, 0] + 1e-5, 12)
    _, slope_m = cantor.distance_slope_1d(spec, x[:, 0] - 1e-5, 12)
    smooth = slope_p == slope_m
    g = grad[shell][smooth]
    assert np.all(np.abs(fd[smooth] - g) <= 1e-6 * (1 + np.abs(g)))
    c_rho = np.max(np.linalg.norm(grad, axis=1) * h)
    assert c_rho <= F.cone_ramp_slope(0.5, 2.0) * math.sqrt(1 + 4) + 1e-12


def test_geometry_maps():
    assert REF.dim == 0.5 and REF.lam == 0.25 and REF.nu == 0.5 and REF.gamma_nu == -1.5
    assert REF.spec.power == 1
    assert SUPER.dim == pytest.approx(0.5) and SUPER.lam == pytest.approx(0.25)
    g3 = F.make_geometry("sub", 3, 2.0, -3.0)
    assert g3.lam == pytest.approx(0.25) and cantor.fractal_dimension(g3.spec) == pytest.approx(1.0)
    gm = F.make_geometry("sub", 2, 2.0, 1.0)
    assert gm.meager and gm.nu == 1.0
    gs = F.make_geometry("super", 2, 2.0, 1.0)
    assert gs.meager and gs.nu == 1.0
    with pytest.raises(ValueError):
        F.make_geometry("sub", 2, 2.5)
    with pytest.raises(ValueError):
        F.make_geometry("super", 3, 2.5)
    with pytest.raises(ValueError):
        F.make_geometry("matching", 2, 2.5)


def test_matching_examples():
    fe = F.FieldEval(MATCH)
    assert fe.u(np.array([[0.1, 0.9]]))[0] == 0.5
    assert fe.u(np.array([[0.9, -0.1]]))[0] == 0.0
    assert fe.b(np.array([[0.01, 0.1]]))[0] == pytest.approx(10.0)


def test_sub_examples():
    fe = F.FieldEval(REF)
    on = c0 = cantor.generation(REF.spec, 12).left[5]
    assert fe.u(np.array([[on, 0.3]]))[0] == 0.5
    assert fe.u(np.array([[0.0, 0.01]]))[0] == 0.0
    assert fe.b(np.array([[0.0, 0.1]]))[0] == 0.0
    t = 0.1
    assert fe.b(np.array([[c0, t]]))[0] == pytest.approx(t**-0.5 * math.log(math.e + 10) ** 1.5)


def test_super_b_example():
    fe = F.FieldEval(SUPER)
    # x_d = 0.8 lies 0.3 from the set, and |xbar| = 0.1 puts s = 3
    assert fe.b(np.array([[0.1, 0.8]]))[0] == pytest.approx(10.0)


@pytest.mark.parametrize("geo", [REF, SUPER, MATCH])
def test_u_bounded_and_odd(geo):
    fe = F.FieldEval(geo)
    x = sample(3000, 1)
    u = fe.u(x)
    assert np.all(np.abs(u) <= 0.5 + 1e-15)
    xr = x.copy()
    xr[:, -1] *= -1
    if geo.regime == "super":
        # oddness in x_d holds about the symmetry centre of the set
        assert np.allclose(fe.u(xr), -u, atol=1e-12)
    else:
        assert np.array_equal(fe.u(xr), -u)


@pytest.mark.parametrize("geo", [REF, SUPER, MATCH])
def test_disjoint_supports(geo):
    fe = F.FieldEval(geo)
    x = sample(10**4, 2)
    gu = np.linalg.norm(fe.grad_u(x), axis=1)
    assert np.all(fe.b(x) * gu == 0)
    pg, pb, _ = fe.support(x)
    assert not np.any(pg & pb)


@pytest.mark.parametrize("geo", [REF, SUPER, MATCH])
def test_analytic_gradient(geo):
    fe = F.FieldEval(geo)
    x = sample(600, 3)
    c = fe.coords(x)
    x = x[c.t > 0.05]
    gu = fe.grad_u(x)
    fd = fd_grad(fe.u, x, 1e-7)
    if geo.regime == "sub":
        _, sp = cantor.distance_slope_1d(geo.spec, x[:, 0] + 1e-7, 12)
        _, sm = cantor.distance_slope_1d(geo.spec, x[:, 0] - 1e-7, 12)
        keep = sp == sm
        x, gu, fd = x[keep], gu[keep], fd[keep]
    scale = np.maximum(np.linalg.norm(gu, axis=1), 1.0)
    assert np.all(np.linalg.norm(fd - gu, axis=1) / scale < 1e-5)


def test_super_generation_zero_matches_direct_quadrature():
    fe = F.FieldEval(SUPER, m=0)
    for xb, xd in [(0.3, 0.1), (0.05, 0.47), (0.2, -0.6), (-0.7, 0.2)]:
        r = abs(xb)
        brk = sorted({float(np.clip(xd - sgn * k * r, -0.5, 0.5)) for k in F.THETA_KINKS for sgn in (1, -1)})
        ref = quad(lambda y: 0.5 * np.sign(xd - y) * F.theta(abs(xd - y) / r), -0.5, 0.5,
                   points=brk, limit=200, epsabs=1e-13)[0]
        assert fe.u(np.array([[xb, xd]]))[0] == pytest.approx(ref, abs=1e-8)


def test_super_u_stable_across_generations():
    x = sample(500, 5)
    x = x[np.abs(x[:, 0]) > 0.02]
    a = F.FieldEval(SUPER, 12).u(x)
    b = F.FieldEval(SUPER, 14).u(x)
    lip = 0.5 * (16 / 3) / np.abs(x[:, 0])
    assert np.all(np.abs(a - b) <= lip * SUPER.spec.table.length[12])


def test_convolution_reproduces_moments():
    spec = SUPER.spec
    x = np.linspace(-1, 1, 7)
    out = cantor.convolve_piecewise(spec, None, x, np.zeros((7, 0)), lambda z, i: np.column_stack([z**2]))
    m2, _ = cantor._central_moments(spec, None, len(spec.table.length) - 1)
    assert np.allclose(out[:, 0], x**2 + m2[0], rtol=1e-13)


def test_support_examples():
    fe = F.FieldEval(REF)
    c0 = cantor.generation(REF.spec, 12).left[3]
    pg, pb, pt = fe.support(np.array([[c0, 0.2], [c0 + 0.06, 0.02], [0.0, 0.001]]))
    assert (pg[0], pb[0], pt[0]) == (False, True, False)
    assert (pg[1], pb[1], pt[1]) == (True, False, True)
    assert (pg[2], pb[2], pt[2]) == (False, False, False)


def test_gradient_bound_stable_under_refinement():
    x = sample(10**4, 6)
    fe = F.FieldEval(REF, 12)
    pg, _, _ = fe.support(x)
    c12 = fe.gradient_constant(x[pg])
    c14 = F.FieldEval(REF, 14).gradient_constant(x[pg])
    assert c12 <= 0.5 * F.cone_ramp_slope(*F.U_CONE) * math.sqrt(1 + 16) + 1e-12
    assert abs(c12 - c14) <= 0.05 * c12


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(0.001, 1))
def test_rho_a_sandwich(xb, xd):
    fe = F.FieldEval(REF)
    x = np.array([[xb, xd]])
    d = cantor.distance(REF.spec, 12, np.array([xb]))
    r = fe.rho_a(x)[0]
    if d <= 0.5 * xd:
        assert r == 1.0
    if d >= 2 * xd:
        assert r == 0.0


def test_samples_csv(tmp_path):
    p = tmp_path / "s.csv"
    F.write_samples_csv(F.FieldEval(REF), sample(5), p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("x1,x2,u,grad_u,b") and len(lines) == 6
