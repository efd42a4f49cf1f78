import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantorlab import fem
from cantorlab.fields import make_geometry
from cantorlab.models import DoublePhase, Integrand

REF = make_geometry("sub", 2, 1.5, -3.0)


@pytest.fixture(scope="module")
def dp():
    return Integrand(DoublePhase(1.5, 2.6, 1.0), REF)


def cotangent_stiffness(vertices, cells):
    """Dense P1 stiffness from the cotangent formula, assembled cell by cell."""
    n = vertices.shape[0]
    K = np.zeros((n, n))
    for tri in cells:
        for k in range(3):
            i, j, o = tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k]
            a, b = vertices[i] - vertices[o], vertices[j] - vertices[o]
            cot = (a @ b) / abs(a[0] * b[1] - a[1] * b[0])
            K[i, j] -= 0.5 * cot
            K[j, i] -= 0.5 * cot
            K[i, i] += 0.5 * cot
            K[j, j] += 0.5 * cot
    return K


def cr_stiffness(mesh):
    """CR stiffness: four times the P1 cell matrix, indexed by opposite edges."""
    n = mesh.edges.shape[0]
    K = np.zeros((n, n))
    for c in range(mesh.n_cells):
        loc = cotangent_stiffness(mesh.vertices, mesh.cells[c:c + 1])
        idx = mesh.cells[c]
        Kl = 4.0 * loc[np.ix_(idx, idx)]
        e = mesh.cell_edges[c]
        K[np.ix_(e, e)] += Kl
    return K


def dirichlet_oracle(K, boundary, gb):
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), boundary)
    v = np.zeros(n)
    v[boundary] = gb
    v[free] = np.linalg.solve(K[np.ix_(free, free)], -K[np.ix_(free, boundary)] @ gb)
    return v, 0.5 * v @ K @ v, free


# ---------------------------------------------------------------------------
# mesh


def test_uniform_level_three_has_512_triangles():
    mesh = fem.build_mesh(3)
    assert mesh.n_cells == 512
    assert np.isclose(mesh.areas.sum(), 4.0)


@pytest.mark.parametrize("level", [0, 1, 2, 4])
def test_cell_count_formula(level):
    assert fem.build_mesh(level).n_cells == 2 * 4 ** (level + 1)


def test_graded_min_edge_at_line():
    for lev, g in [(3, 0), (3, 2), (4, 3)]:
        mesh = fem.build_mesh(lev, g)
        assert mesh.min_edge_on_line() == pytest.approx(2.0 ** -(lev + g))


def test_super_grading_refines_the_axis():
    mesh = fem.build_mesh(3, 2, toward="super")
    assert mesh.min_edge_on_line() == pytest.approx(2.0**-5)
    assert np.diff(mesh.xs).min() == pytest.approx(2.0**-5)
    assert np.diff(mesh.ys).min() == pytest.approx(2.0**-3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 4), st.integers(0, 3), st.sampled_from(["sub", "super"]))
def test_mesh_is_conforming(level, grading, toward):
    mesh = fem.build_mesh(level, grading, toward)
    # every edge has one or two cells; interior edges two
    counts = np.bincount(mesh.cell_edges.ravel(), minlength=mesh.edges.shape[0])
    assert set(np.unique(counts)) <= {1, 2}
    mid = mesh.midpoints
    on_boundary = np.isclose(np.abs(mid).max(axis=1), 1.0)
    assert np.array_equal(counts == 1, on_boundary)
    # the refined line is a union of edges, each shared by two cells
    ax = 1 if toward == "sub" else 0
    v = mesh.vertices[mesh.edges]
    on_line = (v[:, 0, ax] == 0) & (v[:, 1, ax] == 0)
    assert np.isclose(np.linalg.norm(v[on_line, 1] - v[on_line, 0], axis=1).sum(), 2.0)
    assert np.all(counts[on_line & ~on_boundary] == 2)
    assert np.isclose(mesh.areas.sum(), 4.0)
    assert np.all(mesh.areas > 0)


def test_level_cap_and_shape_bound():
    with pytest.raises(ValueError):
        fem.build_mesh(10)
    with pytest.raises(ValueError, match="shape regularity"):
        fem.build_mesh(2, 5)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-0.999, 0.999), min_size=2, max_size=2), st.integers(0, 2))
def test_locate_finds_a_containing_cell(pt, grading):
    mesh = fem.build_mesh(2, grading)
    x = np.array([pt])
    c = mesh.locate(x)[0]
    p = mesh.vertices[mesh.cells[c]]
    T = np.column_stack([p[1] - p[0], p[2] - p[0]])
    l1, l2 = np.linalg.solve(T, x[0] - p[0])
    assert min(l1, l2, 1 - l1 - l2) > -1e-12


# ---------------------------------------------------------------------------
# spaces and evaluation


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.sampled_from(["conf", "noncf"]))
def test_linear_functions_are_reproduced(a, b, c, kind):
    mesh = fem.build_mesh(2, 1)
    S = fem.make_space(mesh, kind)
    f = lambda x: a + b * x[:, 0] + c * x[:, 1]
    v = fem.interpolate(S, f)
    G = S.gradients(v)
    assert np.allclose(G, [b, c], atol=1e-12)
    sol = fem.DiscreteSolution(S, v, 1.0, 0.0, 0.0, True)
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    assert np.allclose(sol(pts), f(pts), atol=1e-12)


def test_cr_ball_average_of_linear_function():
    mesh = fem.build_mesh(3)
    S = fem.make_space(mesh, "noncf")
    v = fem.interpolate(S, lambda x: 2 * x[:, 0] - x[:, 1])
    sol = fem.DiscreteSolution(S, v, 1.0, 0.0, 0.0, True)
    avg = sol.ball_average(np.array([[0.1, 0.3], [-0.4, -0.2]]), np.array([0.1, 0.05]))
    assert np.allclose(avg, [2 * 0.1 - 0.3, 2 * -0.4 + 0.2], atol=1e-12)


def test_unknown_space_rejected():
    with pytest.raises(ValueError):
        fem.make_space(fem.build_mesh(1), "p2")


# ---------------------------------------------------------------------------
# quadratic control problems


@pytest.mark.parametrize("kind", ["conf", "noncf"])
def test_linear_data_gives_the_interpolant(kind):
    mesh = fem.build_mesh(3, 1)
    sol = fem.minimize(mesh, kind, fem.Quadratic(), 1.0, data=lambda x: x[:, 1])
    assert sol.energy == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(sol.coef, sol.space.points[:, 1], atol=1e-12)
    assert sol.converged and sol.residual <= 1e-10


@pytest.mark.parametrize("kind", ["conf", "noncf"])
def test_quadratic_matches_direct_solve(dp, kind):
    mesh = fem.build_mesh(3)
    eta = 1.7
    g = fem.competitor_data(dp)
    sol = fem.minimize(mesh, kind, fem.Quadratic(), eta, data=g)
    if kind == "conf":
        K = cotangent_stiffness(mesh.vertices, mesh.cells)
        bnd = mesh.boundary_vertices
        gb = eta * np.nan_to_num(dp.fe.u(mesh.vertices[bnd]))
    else:
        K = cr_stiffness(mesh)
        bnd = mesh.boundary_edges
        ends = mesh.vertices[mesh.edges[bnd]]
        gb = eta * 0.5 * (np.nan_to_num(dp.fe.u(ends[:, 0])) + np.nan_to_num(dp.fe.u(ends[:, 1])))
    v, E, free = dirichlet_oracle(K, bnd, gb)
    assert sol.energy == pytest.approx(E, rel=1e-8)
    assert np.allclose(sol.coef, v, atol=1e-9 * eta)
    # discrete residual of the solver's answer in the oracle's system
    res = K[np.ix_(free, np.arange(K.shape[0]))] @ sol.coef
    assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(K[np.ix_(free, bnd)] @ gb)
    assert fem.energy_monotone(sol.trace)


def test_quadratic_energy_convergence_order():
    exact = (math.e**2 - math.e**-2) / 2.0
    g = lambda x: np.exp(x[:, 0]) * np.sin(x[:, 1])
    for kind in ("conf", "noncf"):
        levels = [1, 2, 3, 4, 5]
        err = [abs(fem.minimize(fem.build_mesh(lv), kind, fem.Quadratic(), 1.0, data=g).energy - exact)
               for lv in levels]
        slope = np.polyfit(np.log(2.0 ** -np.array(levels)), np.log(err), 1)[0]
        assert slope >= 1.8, (kind, err)


def test_quadratic_gap_ratio_tends_to_one(dp):
    rep = fem.gap_ratio(fem.Quadratic(), 1.0, [4, 5, 6], data=fem.competitor_data(dp))
    dev = np.abs(rep.ratios() - 1.0)
    assert dev[-1] < 0.02
    assert np.all(np.diff(dev) < 0)


def test_quadratic_jumps_vanish_under_refinement(dp):
    rng = np.random.default_rng(1)
    from cantorlab import cantor

    xbar = cantor.sample_measure(REF.spec, 12, 16, rng)
    means = []
    for lv in (3, 4, 5):
        sol = fem.minimize(fem.build_mesh(lv), "noncf", fem.Quadratic(), 1.0, data=fem.competitor_data(dp))
        means.append(np.mean(np.abs(fem.fem_trace_jumps(sol, xbar))))
    assert means[0] > means[1] > means[2]
    # continuous limit: the jump at radius 4h shrinks like h
    assert means[2] / means[1] < 0.6 and means[1] / means[0] < 0.6, means


# ---------------------------------------------------------------------------
# nonlinear problems


def test_power_energy_agrees_with_long_run():
    mesh = fem.build_mesh(4)
    g = lambda x: np.sin(2 * x[:, 0]) + x[:, 1] ** 2
    base = fem.SolverConfig()
    long = fem.SolverConfig(tol=1e-14, budget=2 * base.budget, max_newton=2 * base.max_newton)
    for kind in ("conf", "noncf"):
        a = fem.minimize(mesh, kind, fem.PowerIntegrand(1.5), 1.0, base, data=g)
        b = fem.minimize(mesh, kind, fem.PowerIntegrand(1.5), 1.0, long, data=g)
        assert a.converged and fem.energy_monotone(a.trace)
        assert abs(a.energy - b.energy) <= 1e-6 * abs(b.energy)


def test_budget_exhaustion_is_flagged():
    mesh = fem.build_mesh(3)
    g = lambda x: np.sin(2 * x[:, 0]) + x[:, 1] ** 2
    sol = fem.minimize(mesh, "conf", fem.PowerIntegrand(1.5), 1.0, fem.SolverConfig(budget=2), data=g)
    assert not sol.converged
    assert np.isfinite(sol.energy)


def test_delta_schedule():
    d = fem.SolverConfig().deltas()
    assert d[0] == 1e-2 and d[-1] <= 1e-8
    assert np.allclose(np.array(d[1:]) / np.array(d[:-1]), 0.25)


def test_eta_must_be_positive(dp):
    with pytest.raises(ValueError):
        fem.minimize(fem.build_mesh(1), "conf", dp, 0.0)


@pytest.fixture(scope="module")
def dp_gap(dp):
    return fem.gap_ratio(dp, 2.0**31, [2, 3, 4], grading=2)


def test_double_phase_hierarchy_and_gap(dp_gap):
    for row in dp_gap.rows:
        assert row.E_noncf <= row.E_conf
        assert row.ratio > 1
    for conf, noncf in dp_gap.solutions.values():
        assert conf.converged and noncf.converged
        assert conf.residual <= 1e-10 and noncf.residual <= 1e-10
        assert fem.energy_monotone(conf.trace) and fem.energy_monotone(noncf.trace)


def test_conforming_energies_decrease_on_nested_meshes(dp):
    # uniform union-jack meshes are nested, so the P1 minima cannot increase
    rep = fem.gap_ratio(dp, 2.0**31, [2, 3, 4])
    e = [r.E_conf for r in rep.rows]
    assert e[0] >= e[1] >= e[2]


def test_ratio_from_stored_solutions_is_deterministic(dp_gap):
    conf, noncf = dp_gap.solutions[4]
    a = fem.ratio_from_solutions(conf, noncf)
    b = fem.ratio_from_solutions(conf, noncf)
    assert a == b == dp_gap.rows[-1].ratio


def test_rerun_is_bit_identical(dp):
    mesh = fem.build_mesh(3, 2)
    a = fem.minimize(mesh, "noncf", dp, 2.0**31)
    b = fem.minimize(mesh, "noncf", dp, 2.0**31)
    assert np.array_equal(a.coef, b.coef) and a.energy == b.energy


def test_observables_report(dp, dp_gap, tmp_path):
    rep = fem.observables(dp_gap, dp, n_points=16)
    assert rep.levels == [2, 3, 4]
    assert all(0.0 <= f <= 1.0 for f in rep.jump_fraction)
    assert rep.s_low == pytest.approx(1.4) and rep.s_high == pytest.approx(1.75)
    assert all(np.isfinite(rep.norm_low)) and all(np.isfinite(rep.norm_high))
    assert rep.modulus_C is None
    path = tmp_path / "obs.csv"
    fem.write_observables_csv(rep, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("level,E_conf,E_noncf,ratio,jump_fraction")
    assert len(lines) == 4


def test_observables_need_three_levels(dp, dp_gap):
    short = fem.GapReport(dp_gap.rows[:2], {k: dp_gap.solutions[k] for k in (2, 3)})
    with pytest.raises(ValueError):
        fem.observables(short, dp)


def test_box_count_slope_of_a_segment():
    pts = np.column_stack([np.linspace(-0.9, 0.9, 4000), np.zeros(4000)])
    slope, counts = fem.box_count_slope(pts, 2.0 ** -np.arange(1, 8))
    assert slope == pytest.approx(1.0, abs=0.05)


def test_super_axis_modulus():
    geo = make_geometry("super", 2, 3.0, -3.0)
    integ = Integrand(DoublePhase(3.0, 4.2, 1.0), geo)
    mesh = fem.build_mesh(3, 1, toward="super")
    sol = fem.minimize(mesh, "conf", integ, 1.0)
    rho, omega, C = fem.axis_modulus(sol, geo)
    assert np.all(np.diff(omega) <= 1e-12)  # smaller windows oscillate less
    assert C > 0 and np.isfinite(C)


def test_dump_round_trip(dp_gap, tmp_path):
    _, noncf = dp_gap.solutions[3]
    path = tmp_path / "sol.bin"
    fem.write_dump(noncf, path)
    back = fem.read_dump(path)
    assert back["level"] == 3 and back["space"] == "noncf"
    assert np.array_equal(back["vertices"], noncf.mesh.vertices)
    assert np.array_equal(back["cells"], noncf.mesh.cells)
    assert np.array_equal(back["coef"], noncf.coef)
    raw = path.read_bytes()
    nv, nc = noncf.mesh.vertices.shape[0], noncf.mesh.n_cells
    assert len(raw) == 40 + 16 * nv + 24 * nc + 8 * noncf.coef.size
