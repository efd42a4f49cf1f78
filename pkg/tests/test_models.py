import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantorlab import fields as F, models as M

SUB = F.make_geometry("sub", 2, 1.5, -3.0)
SUPER = F.make_geometry("super", 2, 3.0, 1.0)
FAMILIES = [
    M.DoublePhase(1.5, 2.6, 1.0),
    M.Borderline(1.5, 3.0, 0.2, 0.2),
    M.PiecewiseVarExp(1.5, 2.5),
    M.ContinuousVarExp(1.5, 1.0),
]


def grid_sup(phi, s, tmax, n=10**6):
    t = np.linspace(0.0, tmax, n)
    return float(np.max(s * t - phi(t)))


def test_weight_examples():
    I = M.Integrand(M.DoublePhase(1.5, 2.5, 1.0), SUB)
    assert I.weight_st(0.5, 0.0) == pytest.approx(0.5)
    assert I.weight_st(0.5, 3.0) == 0.0
    Is = M.Integrand(M.DoublePhase(2.5, 3.5, 1.0), F.make_geometry("super", 2, 3.0, 1.0))
    assert Is.weight_st(0.5, 3.0) == pytest.approx(0.5)
    assert Is.weight_st(0.5, 0.1) == 0.0


def test_phi_examples():
    dp = M.TermSum([[1 / 1.5, 0.0]], [[1.5, 2.5]], 0.0)
    assert dp.phi(1.0)[0] == pytest.approx(1 / 1.5)
    ve = M.TermSum([[0.5]], [[2.0]], 0.0)
    assert ve.phi(3.0)[0] == pytest.approx(4.5)
    assert ve.phi_star(3.0)[0] == pytest.approx(4.5)
    bl = M.TermSum([[1.0, 1.0]], [[2.0, 2.0]], [[0.0, 1.0]])
    assert bl.phi(1.0)[0] == pytest.approx(1 + math.log(math.e + 1), rel=1e-12)
    assert bl.phi(1.0)[0] == pytest.approx(2.31326, abs=1e-5)


def test_power_conjugate_closed_form():
    p = 1.5
    pp = p / (p - 1)
    dp = M.TermSum([[1 / p, 0.0]], [[p, 2.5]], 0.0)
    s = np.array([0.1, 1.0, 7.0, 1e8])
    for si in s:
        assert dp.phi_star(si)[0] == pytest.approx(si**pp / pp, rel=1e-13)


def test_numeric_conjugate_against_grid():
    dp = M.TermSum([[1 / 1.5, 1 / 2.5]], [[1.5, 2.5]], 0.0)
    ref = grid_sup(lambda t: t**1.5 / 1.5 + t**2.5 / 2.5, 2.0, 3.0)
    assert dp.phi_star(2.0)[0] == pytest.approx(ref, abs=1e-6)
    bl = M.TermSum([[1.0, 0.7]], [[1.5, 1.5]], [[-0.2, 3.0]])
    L = lambda t: np.log(math.e + t)
    ref = grid_sup(lambda t: t**1.5 * L(t) ** -0.2 + 0.7 * t**1.5 * L(t) ** 3, 5.0, 4.0)
    assert bl.phi_star(5.0)[0] == pytest.approx(ref, abs=1e-6)


def test_conjugate_dominates_young_lower_bound():
    bl = M.TermSum([[1.0, 0.3]], [[1.5, 1.5]], [[-0.2, 3.0]])
    s = 3.0
    star = bl.phi_star(s)[0]
    for t in np.geomspace(1e-4, 1e4, 200):
        assert star >= s * t - bl.phi(t)[0] - 1e-12 * (1 + s * t)


def test_conjugate_wide_range():
    dp = M.TermSum([[1 / 1.5, 1e-3 / 2.5]], [[1.5, 2.5]], 0.0)
    s = np.geomspace(1e-30, 1e60, 50)
    star = M.TermSum(np.repeat(dp.w, 50, 0), dp.e[:1], 0.0).phi_star(s)
    assert np.all(np.isfinite(star)) and np.all(star > 0)
    assert np.all(np.diff(star) > 0)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_fenchel_young_and_biconjugate(fam):
    rng = np.random.default_rng(0)
    I = M.Integrand(fam, SUB)
    x = rng.uniform(-1, 1, (300, 2))
    t = np.exp(rng.uniform(-6, 6, 300))
    L = I.local(x)
    s = L.phi_t(t)
    fy = np.abs(L.phi(t) + L.phi_star(s) - s * t)
    assert np.all(fy <= 1e-6 * (1 + s * t))
    bc = L.biconjugate(t)
    assert np.all(np.abs(bc - L.phi(t)) <= 1e-5 * L.phi(t))


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_convex_increasing_and_doubling(fam):
    rng = np.random.default_rng(1)
    I = M.Integrand(fam, SUB)
    L = I.local(rng.uniform(-1, 1, (200, 2)))
    t = np.geomspace(1e-6, 1e6, 60)
    prev = np.zeros(200)
    for ti in t:
        assert np.all(L.phi_tt(ti) >= 0)
        v = L.phi(ti)
        assert np.all(v >= prev)
        prev = v
        assert np.all(L.phi(2 * ti) <= 2 ** 3.6 * v)
    assert np.all(L.phi(0.0) == 0)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_derivatives_match_differences(fam):
    rng = np.random.default_rng(2)
    L = M.Integrand(fam, SUB).local(rng.uniform(-1, 1, (50, 2)))
    for t in (0.01, 0.7, 3.0, 200.0):
        h = 1e-6 * t
        assert np.allclose((L.phi(t + h) - L.phi(t - h)) / (2 * h), L.phi_t(t), rtol=1e-6)
        assert np.allclose((L.phi_t(t + h) - L.phi_t(t - h)) / (2 * h), L.phi_tt(t), rtol=1e-5)


def test_piecewise_regions():
    I = M.Integrand(M.PiecewiseVarExp(1.5, 2.5), SUB)
    assert I.exponent_st(0.1, 1.5) == 1.5
    assert I.exponent_st(0.1, 0.5) == 2.5
    Is = M.Integrand(M.PiecewiseVarExp(3.0, 4.0), SUPER)
    assert Is.exponent_st(0.1, 0.5) == 3.0
    assert Is.exponent_st(0.1, 1.5) == 4.0


def test_sigma_value():
    ref = math.log(math.log(math.e**3 + 1e3)) / math.log(math.e + 1e3)
    assert M.sigma(1e-3, 1.0) == pytest.approx(ref, rel=1e-14)
    assert M.sigma(1e-3, 1.0) == pytest.approx(0.2800851, abs=1e-7)


def test_continuous_exponent_limits():
    fam = M.ContinuousVarExp(1.5, 1.0)
    I = M.Integrand(fam, SUB)
    tiny = 1e-200
    # sigma decays like loglog(1/t)/log(1/t), so p approaches p0 only slowly
    assert abs(I.exponent_st(tiny, 0.0) - 1.5) == pytest.approx(M.sigma(tiny, 1.0), rel=1e-12)
    assert M.sigma(tiny, 1.0) < 0.015
    assert I.exponent_st(0.5, 0.0) == 1.5
    t = np.geomspace(1e-300, 1, 500)
    for s in (0.0, 1.0, 3.0):
        p = I.exponent_st(t, s)
        sg = M.sigma(t, 1.0)
        assert np.all(np.abs(p - 1.5) <= sg + 1e-15)
    assert np.all(M.sigma(t[I.xi(t, 0.0) > 0], 1.0) <= 0.05)


@pytest.mark.parametrize("geo", [SUB, SUPER])
def test_region_separation(geo):
    rng = np.random.default_rng(3)
    fe = F.FieldEval(geo)
    x = rng.uniform(-1, 1, (10**4, 2))
    pg, _, _ = fe.support(x)
    x = x[pg]
    assert x.shape[0] > 50
    p0 = geo.p0
    dp = M.Integrand(M.DoublePhase(p0, p0 + 1.2, 1.0), geo)
    assert np.all(dp.weight_a(x) == 0)
    pv = M.Integrand(M.PiecewiseVarExp(p0, p0 + 1), geo)
    assert np.all(pv.exponent_p(x) == p0)
    cv = M.Integrand(M.ContinuousVarExp(p0, 2.0), geo)
    c = fe.coords(x)
    xi = cv.xi(c.t, c.s)
    expected = xi * (p0 - M.sigma(c.t, 2.0)) + (1 - xi) * p0
    assert np.allclose(cv.exponent_p(x), expected, rtol=0, atol=1e-15)


def test_validator_messages():
    msgs = {c.name: c for c in M.validate(M.DoublePhase(1.5, 2.6, 1.0), SUB)}
    assert all(c.ok for c in msgs.values())
    assert "2.6 > 2.5" in msgs["double_phase.q"].message
    bad = {c.name: c for c in M.validate(M.DoublePhase(1.5, 2.4, 1.0), SUB)}
    assert not bad["double_phase.q"].ok
    assert bad["double_phase.q"].message == "q > p+α·max{1,(p−1)/(d−1)} violated: 2.4 ≤ 2.5"
    bl = {c.name: c for c in M.window_checks(M.Borderline(1.5, 3.0, 0.2, 0.2), 2)}
    assert bl["borderline.sum"].ok and "3.2 > 1.7" in bl["borderline.sum"].message


def test_family_windows():
    assert not all(c.ok for c in M.window_checks(M.ContinuousVarExp(2.0, 0.9), 2))
    assert all(c.ok for c in M.window_checks(M.ContinuousVarExp(2.0, 1.1), 2))
    assert not all(c.ok for c in M.window_checks(M.PiecewiseVarExp(2.0, 2.0), 2))
    d3 = M.window_checks(M.DoublePhase(3.0, 4.9, 1.0), 2)
    assert not d3[-1].ok  # needs q > 3 + 1 * max(1, 2) = 5


@settings(max_examples=40, deadline=None)
@given(st.floats(1.1, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 3.0))
def test_double_phase_threshold_encoding(p, alpha, gap):
    d = 2
    q = p + alpha * max(1.0, p - 1.0) + gap - 1.0
    ok = M.window_checks(M.DoublePhase(p, q, alpha), d)[-1].ok
    assert ok == (q > p + alpha * max(1.0, (p - 1.0) / (d - 1.0)))


def test_instance_windows_super():
    ok = {c.name: c.ok for c in M.instance_checks(M.DoublePhase(3.0, 5.1, 1.0), SUPER)}
    assert ok["instance.q"] and not ok["instance.p"]  # gamma*nu*(p0-1) = 1 is not > 1
    g2 = F.make_geometry("super", 2, 3.0, 3.0)
    assert all(c.ok for c in M.instance_checks(M.DoublePhase(3.0, 5.1, 1.0), g2))


def test_borderline_rejects_nonconvex():
    with pytest.raises(ValueError):
        M.Integrand(M.Borderline(1.05, 0.0, 30.0, 0.2), SUB)


def test_holder_modulus_stable():
    I = M.Integrand(M.DoublePhase(1.5, 2.5, 0.5), SUB)
    est = M.modulus_estimate(I.weight_a, lambda r: r**0.5, 2, levels=range(3, 12))
    assert np.all(np.isfinite(est))
    assert est[-1] <= 2 * est[:4].max()
    B = M.Integrand(M.Borderline(1.5, 3.0, 0.2, 0.5), SUB)
    est = M.modulus_estimate(B.weight_a, lambda r: np.log(math.e + 1 / r) ** -0.5, 2, levels=range(3, 12))
    assert est[-1] <= 2 * est[:4].max()


def test_orlicz():
    psi = M.TestOrlicz(1.5, 0.0)
    assert psi.psi(2.0)[0] == pytest.approx(2**1.5)
    # (t^p)* = (p - 1) (s / p)^(p')
    assert psi.psi_star(2.0)[0] == pytest.approx(0.5 * (2.0 / 1.5) ** 3)
    psi = M.TestOrlicz(1.5, 2.0)
    assert psi.psi(1.0)[0] == pytest.approx(math.log(math.e + 1) ** 2)
    s = np.geomspace(1, 1e6, 40)
    ratio = psi.psi_star(s) / psi.star_bound(s)
    assert np.all(np.isfinite(ratio)) and ratio.max() / ratio.min() < 10
