"""End-to-end acceptance checks, one test per criterion, each under its runtime budget."""

import csv
import math
import time

import numpy as np
import pytest

from cantorlab import cantor, cli, energy, fem, riesz
from cantorlab.fields import FieldEval, make_geometry
from cantorlab.models import Borderline, ContinuousVarExp, DoublePhase, Integrand, PiecewiseVarExp

REF = make_geometry("sub", 2, 1.5, -3.0)
GAP_LEVELS = [4, 5, 6]
GRADING = 2


@pytest.fixture(scope="module")
def certificate(tmp_path_factory):
    """``certify --kappa 0.01`` through the command line, timed."""
    out = tmp_path_factory.mktemp("certify")
    t0 = time.perf_counter()
    code = cli.main(["certify", "--kappa", "0.01", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    with open(out / "certificate.csv") as fh:
        row = next(csv.DictReader(fh))
    return code, {k: float(v) for k, v in row.items() if v != ""}, elapsed


@pytest.fixture(scope="module")
def gap_run(certificate):
    integ = Integrand(DoublePhase(1.5, 2.6, 1.0), REF)
    eta = certificate[1]["eta"]
    t0 = time.perf_counter()
    rep = fem.gap_ratio(integ, eta, GAP_LEVELS, grading=GRADING)
    obs = fem.observables(rep, integ, n_points=64, seed=0)
    return rep, obs, time.perf_counter() - t0


def test_criterion_01_cantor_calibration(report_line):
    t0 = time.perf_counter()
    spec = cantor.build_spec(cantor.LAMBDA_GAMMA, 1.0 / 3.0, 0.0)
    exact = math.log(2.0) / math.log(3.0)
    dim = cantor.fractal_dimension(spec)
    box = cantor.boxcount_dimension(spec, m_max=12).dimension
    elapsed = time.perf_counter() - t0
    ok = abs(dim - exact) <= 1e-12 and abs(box - exact) <= 0.05 and elapsed < 10
    report_line(1, ok, f"D={dim:.15f} box={box:.4f} (log3 2={exact:.6f}) {elapsed:.1f}s")
    assert ok


def test_criterion_02_measure_laws(report_line):
    t0 = time.perf_counter()
    spec = REF.spec
    masses = [cantor.CantorMeasure(spec, m).total_mass() for m in range(0, 13)]
    s10 = cantor.scaling_ratio_sup(spec, 10, samples=200)
    s12 = cantor.scaling_ratio_sup(spec, 12, samples=200)
    elapsed = time.perf_counter() - t0
    mass_err = max(abs(m - 1.0) for m in masses)
    stable = 0.5 <= s12 / s10 <= 2.0 and np.isfinite(s10)
    ok = mass_err <= 1e-12 and stable and elapsed < 30
    report_line(2, ok, f"mass err={mass_err:.1e} sup ratio m=10:{s10:.4g} m=12:{s12:.4g} {elapsed:.1f}s")
    assert ok


def test_criterion_03_threshold_sharpness(report_line):
    t0 = time.perf_counter()
    qs = np.round(np.arange(2.30, 2.801, 0.05), 2)
    verdicts = [energy.modular(Integrand(DoublePhase(1.5, q, 1.0), REF), "b", 1.0).verdict for q in qs]
    elapsed = time.perf_counter() - t0
    conv = [v == energy.CONVERGENT for v in verdicts]
    flip = qs[conv.index(True)] if any(conv) else None
    below = all(v == energy.DIVERGENT for q, v in zip(qs, verdicts) if q <= 2.5)
    above = all(conv[i] for i, q in enumerate(qs) if q > 2.5)
    ok = below and above and flip is not None and 2.5 < flip <= 2.55 + 1e-12 and elapsed < 120
    report_line(3, ok, f"first Convergent q={flip} {elapsed:.1f}s")
    assert ok


def test_criterion_04_certificate(report_line, certificate):
    code, row, elapsed = certificate
    ok = code == 0 and row["slack"] > 0 and row["recheck_slack"] > 0 and elapsed < 120
    report_line(4, ok, f"eta={row['eta']:.6g} s={row['s']:.6g} slack={row['slack']:.4g} "
                       f"recheck={row['recheck_slack']:.4g} {elapsed:.1f}s")
    assert ok


FAMILIES = [DoublePhase(1.5, 2.6, 1.0), Borderline(1.5, 3.0, 0.2, 0.2), PiecewiseVarExp(1.5, 2.5),
            ContinuousVarExp(1.5, 1.0)]


def test_criterion_05_conjugates(report_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_fy, worst_bc = 0.0, 0.0
    for fam in FAMILIES:
        loc = Integrand(fam, REF).local(rng.uniform(-1, 1, (1000, 2)))
        t = np.exp(rng.uniform(-6, 6, 1000))
        s = loc.phi_t(t)
        fy = np.abs(loc.phi(t) + loc.phi_star(s) - s * t) / (1 + s * t)
        bc = np.abs(loc.biconjugate(t) - loc.phi(t)) / loc.phi(t)
        worst_fy, worst_bc = max(worst_fy, fy.max()), max(worst_bc, bc.max())
    elapsed = time.perf_counter() - t0
    ok = worst_fy <= 1e-6 and worst_bc <= 1e-5 and elapsed < 60
    report_line(5, ok, f"Fenchel-Young {worst_fy:.1e} biconjugate {worst_bc:.1e} {elapsed:.1f}s")
    assert ok


def test_criterion_06_riesz_inequality(report_line):
    t0 = time.perf_counter()
    bumps = riesz.bump_family(20, np.random.default_rng(6))
    lo, hi = [], []
    for b in bumps:
        a, c = riesz.riesz_vs_b(b, REF, 6), riesz.riesz_vs_b(b, REF, 8)
        if a.rhs > 0:
            lo.append(a.ratio)
            hi.append(c.ratio)
    elapsed = time.perf_counter() - t0
    m6, m8 = max(lo), max(hi)
    ok = len(lo) > 0 and np.isfinite(m6) and abs(m8 / m6 - 1) <= 0.2 and elapsed < 120
    report_line(6, ok, f"max ratio m=6:{m6:.4g} m=8:{m8:.4g} over {len(lo)} bumps {elapsed:.1f}s")
    assert ok


def test_criterion_07_competitor_traces(report_line, certificate):
    t0 = time.perf_counter()
    eta = certificate[1]["eta"]
    fe = FieldEval(REF, 12)
    xb = cantor.sample_measure(REF.spec, 12, 64, np.random.default_rng(7))
    ts = riesz.trace_limits(lambda y: eta * fe.u(y), xb)
    elapsed = time.perf_counter() - t0
    j = ts.jump_limit / eta
    ok = bool(np.all((j >= 0.95) & (j <= 1.05))) and elapsed < 60
    report_line(7, ok, f"jump/eta in [{j.min():.6f}, {j.max():.6f}] at 64 points {elapsed:.1f}s")
    assert ok


def _cotangent_stiffness(vertices, cells):
    K = np.zeros((vertices.shape[0],) * 2)
    for tri in cells:
        for k in range(3):
            i, j, o = tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k]
            a, b = vertices[i] - vertices[o], vertices[j] - vertices[o]
            w = 0.5 * (a @ b) / abs(a[0] * b[1] - a[1] * b[0])
            K[i, j] -= w
            K[j, i] -= w
            K[i, i] += w
            K[j, j] += w
    return K


def test_criterion_08_fem_control(report_line):
    t0 = time.perf_counter()
    mesh = fem.build_mesh(4)
    linear = lambda x: x[:, 1]
    sol = fem.minimize(mesh, "conf", fem.Quadratic(), 1.0, data=linear)
    K = _cotangent_stiffness(mesh.vertices, mesh.cells)
    bnd = mesh.boundary_vertices
    free = np.setdiff1d(np.arange(K.shape[0]), bnd)
    v = np.zeros(K.shape[0])
    v[bnd] = linear(mesh.vertices[bnd])
    v[free] = np.linalg.solve(K[np.ix_(free, free)], -K[np.ix_(free, bnd)] @ v[bnd])
    e_oracle = 0.5 * v @ K @ v
    err = abs(sol.energy - e_oracle)
    interp = np.max(np.abs(sol.coef - mesh.vertices[:, 1]))
    integ = Integrand(DoublePhase(1.5, 2.6, 1.0), REF)
    rep = fem.gap_ratio(fem.Quadratic(), 1.0, [6], data=fem.competitor_data(integ))
    ratio = rep.rows[0].ratio
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-8 and interp <= 1e-10 and abs(e_oracle - 2.0) <= 1e-8 and abs(ratio - 1) <= 0.02 and elapsed < 180
    report_line(8, ok, f"energy err={err:.1e} (E={sol.energy:.12f}) smooth gap ratio level 6={ratio:.5f} "
                       f"{elapsed:.1f}s")
    assert ok


def test_criterion_09_gap_and_jumps(report_line, gap_run):
    rep, obs, elapsed = gap_run
    ratios = rep.ratios()
    hierarchy = all(r.E_noncf <= r.E_conf for r in rep.rows)
    above = bool(np.all(ratios > 1))
    ratio_up = bool(np.all(np.diff(ratios) >= 0))
    jf = np.array(obs.jump_fraction)
    jump_up = bool(np.all(np.diff(jf) >= 0))
    ok = hierarchy and above and ratio_up and jump_up and elapsed < 1200
    report_line(9, ok, f"E_noncf<=E_conf:{hierarchy} ratios={' '.join(f'{r:.4g}' for r in ratios)} "
                       f"(>1:{above}, nondecreasing:{ratio_up}) jump fractions={jf.tolist()} "
                       f"(nondecreasing:{jump_up}, finest>=1/2:{jf[-1] >= 0.5}) {elapsed:.1f}s")
    assert ok


def test_criterion_10_meyers_indicators(report_line, gap_run):
    t0 = time.perf_counter()
    from cantorlab.models import TestOrlicz

    window = -REF.gamma_nu
    trends = {}
    for delta in (0.0, 0.5, 1.0, 2.0, 3.0):
        trends[delta] = energy.meyers_sub(REF, TestOrlicz(REF.p0, delta), range(4, 15))
    trend_ok = all(tr.decreasing == (delta > window) for delta, tr in trends.items())
    _, obs, fem_time = gap_run
    hi, lo = np.array(obs.norm_high), np.array(obs.norm_low)
    growth = hi[1:] / hi[:-1] - 1.0
    drift = abs(lo[-1] / lo[-2] - 1.0)
    elapsed = time.perf_counter() - t0 + fem_time
    ok = trend_ok and bool(np.all(growth >= 0.2)) and drift <= 0.05 and elapsed < 1200
    slopes = " ".join(f"{d:g}:{tr.slope:+.3f}" for d, tr in trends.items())
    report_line(10, ok, f"G trend slopes {slopes} (window delta>{window:g}: {trend_ok}); "
                        f"L^{obs.s_high:g} growth per level={np.round(growth, 4).tolist()} (need >=0.2); "
                        f"L^{obs.s_low:g} drift={drift:.4f} {elapsed:.1f}s")
    assert ok


def test_criterion_11_vector_field(report_line):
    t0 = time.perf_counter()
    F = riesz.SeparatingField(REF, 10)
    worst = 0.0
    for b in riesz.bump_family(10, np.random.default_rng(11)):
        worst = max(worst, abs(F.separating_functional(b.grad).value) / b.grad_sup)
    fe = FieldEval(REF, 10)
    flux = F.separating_functional(riesz.extension_gradient(fe.u_and_grad)).value
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and abs(flux - 1.0) <= 0.05 and elapsed < 120
    report_line(11, ok, f"weak divergence/sup|grad f|={worst:.2e} flux={flux:.6f} {elapsed:.1f}s")
    assert ok
