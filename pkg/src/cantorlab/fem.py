"""Discrete minimization on (-1, 1)^2 with P1 and Crouzeix-Raviart elements.

Both spaces share one gradient operator ``B`` (cellwise constant gradients as
a sparse matrix acting on the degrees of freedom), so the energy, its gradient
and its Hessian are assembled the same way.  The energy uses one barycentre
point per cell and is minimized by a damped Newton method with Armijo
backtracking, along a continuation in the regularization ``delta``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import cantor, riesz
from .fields import SUB, SUPER, cone_ramp
from .models import TermSum

CONF = "conf"
NONCF = "noncf"
SPACES = (CONF, NONCF)
MAX_LEVEL = 9


# ---------------------------------------------------------------------------
# mesh


@dataclass
class Mesh:
    """Structured union-jack triangulation of ``(-1, 1)^2``.

    ``xs`` and ``ys`` are the tensor grid lines; the square ``(i, j)`` is cut
    along the diagonal through its lower-left corner when ``i + j`` is even
    and along the other diagonal otherwise.
    """

    level: int
    grading: int
    toward: str
    xs: np.ndarray
    ys: np.ndarray
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    boundary_edges: np.ndarray
    boundary_vertices: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def h(self) -> float:
        return 2.0**-self.level

    @property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.vertices[self.edges].mean(axis=1)

    @property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        a, b = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def min_angle(self) -> float:
        p = self.vertices[self.cells]
        ang = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            ang.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.degrees(np.min(ang)))

    def min_edge_on_line(self) -> float:
        """Shortest edge touching the refined line (``x_d = 0`` or ``x_1 = 0``)."""
        ax = 1 if self.toward == SUB else 0
        e = self.edges
        on = (self.vertices[e[:, 0], ax] == 0.0) | (self.vertices[e[:, 1], ax] == 0.0)
        length = np.linalg.norm(self.vertices[e[on, 1]] - self.vertices[e[on, 0]], axis=1)
        return float(length.min())

    def locate(self, x) -> np.ndarray:
        """Index of a cell containing each point (``-1`` outside the closed square)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        nx = self.xs.size - 1
        i = np.clip(np.searchsorted(self.xs, x[:, 0], side="right") - 1, 0, nx - 1)
        j = np.clip(np.searchsorted(self.ys, x[:, 1], side="right") - 1, 0, self.ys.size - 2)
        fx = (x[:, 0] - self.xs[i]) / (self.xs[i + 1] - self.xs[i])
        fy = (x[:, 1] - self.ys[j]) / (self.ys[j + 1] - self.ys[j])
        even = (i + j) % 2 == 0
        upper = np.where(even, fy > fx, fy > 1.0 - fx)
        cell = 2 * (j * nx + i) + upper
        out = (np.abs(x[:, 0]) > 1.0) | (np.abs(x[:, 1]) > 1.0)
        return np.where(out, -1, cell)


def _graded_axis(n_half: int, grading: int) -> np.ndarray:
    h = 1.0 / n_half
    pos = list(np.arange(1, n_half + 1) * h)
    pos += [h * 2.0**-k for k in range(1, grading + 1)]
    pos = np.sort(np.array(pos))
    return np.concatenate([-pos[::-1], [0.0], pos])


def build_mesh(level: int, grading: int = 0, toward: str = SUB, min_angle: float = 5.0) -> Mesh:
    """Union-jack mesh with ``2^(level+1)`` squares per side.

    ``grading`` adds dyadic layers between the line ``x_d = 0`` (``toward='sub'``)
    or ``x_1 = 0`` (``toward='super'``) and its neighbouring grid line, so the
    smallest edge there is ``2^-(level + grading)``.  The uniform mesh has
    ``2 * 4^(level+1)`` triangles.

    Raises
    ------
    ValueError
        If ``level`` exceeds the cap or the smallest angle drops below ``min_angle``.
    """
    level, grading = int(level), int(grading)
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level must lie in [0, {MAX_LEVEL}]")
    if grading < 0:
        raise ValueError("grading must be non-negative")
    if toward not in (SUB, SUPER):
        raise ValueError("grading direction must be 'sub' or 'super'")
    n_half = 2**level
    uniform = _graded_axis(n_half, 0)
    graded = _graded_axis(n_half, grading)
    xs, ys = (uniform, graded) if toward == SUB else (graded, uniform)
    nx, ny = xs.size - 1, ys.size - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    v00 = jj * (nx + 1) + ii
    v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
    even = (ii + jj) % 2 == 0
    # lower then upper triangle of each square, both counter-clockwise
    lower = np.where(even[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    upper = np.where(even[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2], cells[1::2] = lower, upper

    # edge k of a cell is opposite its vertex k
    local = np.stack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1)
    key = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    cell_edges = inverse.reshape(-1, 3).astype(np.int64)
    boundary_edges = np.nonzero(counts == 1)[0]
    boundary_vertices = np.unique(edges[boundary_edges])

    mesh = Mesh(level, grading, toward, xs, ys, vertices, cells, edges.astype(np.int64), cell_edges,
                boundary_edges, boundary_vertices)
    angle = mesh.min_angle()
    if angle < min_angle:
        raise ValueError(f"shape regularity violated: smallest angle {angle:.3g} deg < {min_angle} deg")
    return mesh


# ---------------------------------------------------------------------------
# spaces


def _barycentric_gradients(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.cells]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
    Jinv = np.linalg.inv(J)
    g = np.empty((mesh.n_cells, 3, 2))
    g[:, 1] = Jinv[:, 0, :]
    g[:, 2] = Jinv[:, 1, :]
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g


@dataclass
class Space:
    """Degrees of freedom, gradient operator and boundary set of one space."""

    kind: str
    mesh: Mesh
    points: np.ndarray
    local_dofs: np.ndarray
    local_grads: np.ndarray
    B: sp.csr_matrix
    boundary: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.boundary] = False
        return np.nonzero(mask)[0]

    def gradients(self, v) -> np.ndarray:
        return (self.B @ v).reshape(-1, 2)


def make_space(mesh: Mesh, kind: str) -> Space:
    """P1 (``'conf'``, vertex values) or Crouzeix-Raviart (``'noncf'``, edge midpoint values)."""
    if kind not in SPACES:
        raise ValueError(f"unknown space {kind!r}; expected one of {SPACES}")
    lam = _barycentric_gradients(mesh)
    if kind == CONF:
        dofs, grads, pts, bnd = mesh.cells, lam, mesh.vertices, mesh.boundary_vertices
    else:
        # the basis function of the edge opposite vertex k is 1 - 2 lambda_k
        dofs, grads, pts, bnd = mesh.cell_edges, -2.0 * lam, mesh.midpoints, mesh.boundary_edges
    nc = mesh.n_cells
    rows = (2 * np.arange(nc)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, axis=1)
    cols = np.broadcast_to(dofs[:, :, None], (nc, 3, 2))
    B = sp.csr_matrix((grads.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nc, pts.shape[0]))
    return Space(kind, mesh, pts, dofs, grads, B, bnd)


# ---------------------------------------------------------------------------
# integrands and data


class Quadratic:
    """``phi(t) = t^2 / 2`` for control runs."""

    def local(self, x) -> TermSum:
        n = np.atleast_2d(x).shape[0]
        return TermSum(np.full((n, 1), 0.5), [[2.0]], 0.0)


class PowerIntegrand:
    """``phi(t) = t^p / p``."""

    def __init__(self, p: float):
        self.p = float(p)

    def local(self, x) -> TermSum:
        n = np.atleast_2d(x).shape[0]
        return TermSum(np.full((n, 1), 1.0 / self.p), [[self.p]], 0.0)


def cutoff(x, inner: float = 0.6, outer: float = 0.9):
    """``xi``: 1 on ``[-inner, inner]^2``, 0 outside ``(-outer, outer)^2``, C^2 in between."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.prod(cone_ramp(np.abs(x), inner, outer)[0], axis=1)


def competitor_data(integrand, cut: bool = False):
    """``u`` (or ``(1 - xi) u``) from the integrand's field evaluator, 0 on the contact set."""
    fe = integrand.fe

    def g(x):
        u = np.nan_to_num(fe.u(x), nan=0.0)
        return (1.0 - cutoff(x)) * u if cut else u

    return g


# ---------------------------------------------------------------------------
# solver


@dataclass
class SolverConfig:
    tol: float = 1e-10
    delta0: float = 1e-2
    delta_factor: float = 0.25
    delta_final: float = 1e-8
    max_newton: int = 60
    budget: int = 600
    armijo: float = 1e-4
    min_step: float = 2.0**-40

    def deltas(self) -> list:
        out, d = [], self.delta0
        while True:
            out.append(d)
            if d <= self.delta_final:
                return out
            d *= self.delta_factor


class SolverError(RuntimeError):
    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class DiscreteSolution:
    """Minimizer of the discrete energy with boundary values ``eta g``."""

    space: Space
    coef: np.ndarray
    eta: float
    energy: float
    residual: float
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.space.kind

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def gradients(self) -> np.ndarray:
        return self.space.gradients(self.coef)

    def __call__(self, x):
        """Pointwise values (the cell found by :meth:`Mesh.locate` decides on interfaces)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cell = self.mesh.locate(x)
        if np.any(cell < 0):
            raise ValueError("evaluation point outside the square")
        sp_ = self.space
        base = self.mesh.vertices[self.mesh.cells[cell, 0]]
        lam = _barycentric_gradients_cells(self.mesh, cell)
        # barycentric coordinates from their gradients and vertex 0
        l1 = np.sum(lam[:, 1] * (x - base), axis=1)
        l2 = np.sum(lam[:, 2] * (x - base), axis=1)
        bary = np.column_stack([1.0 - l1 - l2, l1, l2])
        vals = self.coef[sp_.local_dofs[cell]]
        if self.kind == NONCF:
            bary = 1.0 - 2.0 * bary
        return np.sum(bary * vals, axis=1)

    def ball_average(self, centers, radius, order: int = 16):
        """Ball averages by a polar product rule fine enough for a few cells per ball."""
        pts, wts = riesz._ball_rule(2, order)
        centers = np.atleast_2d(centers)
        y = centers[:, None, :] + np.asarray(radius)[:, None, None] * pts[None]
        return self(y.reshape(-1, 2)).reshape(centers.shape[0], -1) @ wts


def _barycentric_gradients_cells(mesh: Mesh, cell) -> np.ndarray:
    p = mesh.vertices[mesh.cells[cell]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    Jinv = np.linalg.inv(J)
    g = np.empty((cell.size, 3, 2))
    g[:, 1], g[:, 2] = Jinv[:, 0, :], Jinv[:, 1, :]
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g


class _Energy:
    """Cellwise energy ``sum_T |T| phi(x_T, sqrt(|G_T|^2 + (eta delta)^2))``."""

    def __init__(self, space: Space, integrand, eta: float):
        self.space = space
        self.area = space.mesh.areas
        self.loc = integrand.local(space.mesh.barycenters)
        self.scale = eta

    def _r(self, G, delta):
        return np.sqrt(np.sum(G * G, axis=1) + (self.scale * delta) ** 2)

    def value(self, v, delta) -> float:
        G = self.space.gradients(v)
        return float(np.sum(self.area * self.loc.phi(self._r(G, delta))))

    def derivatives(self, v, delta):
        G = self.space.gradients(v)
        r = self._r(G, delta)
        d1 = self.loc.phi_t(r)
        d2 = self.loc.phi_tt(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(r > 0, d1 / r, d2)
            b = np.where(r > 0, (d2 - a) / (r * r), 0.0)
        flux = (self.area * a)[:, None] * G
        grad = self.space.B.T @ flux.ravel()
        # 2x2 cell blocks  |T| (a I + b G G^T)
        blk = (self.area * b)[:, None, None] * G[:, :, None] * G[:, None, :]
        blk[:, 0, 0] += self.area * a
        blk[:, 1, 1] += self.area * a
        nc = G.shape[0]
        rows = np.repeat(np.arange(2 * nc).reshape(nc, 2), 2, axis=1).ravel()
        cols = np.tile(np.arange(2 * nc).reshape(nc, 2), (1, 2)).ravel()
        D = sp.csr_matrix((blk.ravel(), (rows, cols)), shape=(2 * nc, 2 * nc))
        H = (self.space.B.T @ D @ self.space.B).tocsc()
        return grad, H


def interpolate(space: Space, g) -> np.ndarray:
    return np.asarray(g(space.points), dtype=float)


def boundary_values(space: Space, g, eta: float) -> np.ndarray:
    """Dirichlet values: ``eta g`` at boundary vertices, or at boundary midpoints
    through the mean of the two vertex values (the trace of the P1 interpolant)."""
    if space.kind == CONF:
        return eta * np.asarray(g(space.points[space.boundary]), dtype=float)
    ends = space.mesh.edges[space.boundary]
    gv = np.asarray(g(space.mesh.vertices[ends.ravel()]), dtype=float).reshape(-1, 2)
    return eta * gv.mean(axis=1)


def minimize(mesh: Mesh, space: str, integrand, eta: float, cfg: SolverConfig | None = None,
             data=None, initial=None) -> DiscreteSolution:
    """Minimize the discrete energy over ``space`` with boundary values ``eta * data``.

    ``data`` defaults to the competitor ``u`` of ``integrand``; the initial
    iterate interpolates ``initial`` (default ``(1 - xi) u`` in the conforming
    space and ``u`` in the nonconforming one).

    Raises
    ------
    SolverError
        If a backtracked step fails to decrease the energy; the trace is attached.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    cfg = cfg or SolverConfig()
    S = make_space(mesh, space)
    data = data or competitor_data(integrand)
    if initial is None:
        initial = data if not hasattr(integrand, "fe") else competitor_data(integrand, cut=(space == CONF))
    v = eta * interpolate(S, initial)
    v[S.boundary] = boundary_values(S, data, eta)
    free = S.free
    en = _Energy(S, integrand, eta)
    trace = []
    E = math.inf
    used = 0
    converged = False
    residual = math.inf
    for delta in cfg.deltas():
        E = en.value(v, delta)
        trace.append((delta, 0, E))
        stage_ok = False
        for it in range(1, cfg.max_newton + 1):
            if used >= cfg.budget:
                break
            g, H = en.derivatives(v, delta)
            gf = g[free]
            step = np.zeros_like(v)
            step[free] = spla.spsolve(H[free][:, free], -gf)
            slope = float(gf @ step[free])
            residual = -slope / (2.0 * max(abs(E), 1e-300))
            if residual <= cfg.tol or slope >= 0:
                stage_ok = True
                break
            used += 1
            t = 1.0
            while True:
                E_new = en.value(v + t * step, delta)
                if E_new <= E + cfg.armijo * t * slope:
                    break
                t *= 0.5
                if t < cfg.min_step:
                    raise SolverError(f"no decrease after backtracking at delta={delta:g}", trace)
            v = v + t * step
            E = E_new
            trace.append((delta, it, E))
        if not stage_ok:
            break
    else:
        converged = True
    final = en.value(v, 0.0)
    return DiscreteSolution(S, v, eta, final, residual, converged, trace)


def energy_monotone(trace) -> bool:
    e = np.array([t[2] for t in trace])
    return bool(np.all(np.diff(e) <= 1e-13 * np.abs(e[:-1])))


# ---------------------------------------------------------------------------
# experiments


@dataclass
class GapRow:
    level: int
    E_conf: float
    E_noncf: float

    @property
    def ratio(self) -> float:
        return self.E_conf / self.E_noncf


@dataclass
class GapReport:
    rows: list
    solutions: dict

    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows])


def gap_ratio(integrand, eta: float, levels, grading: int = 0, cfg: SolverConfig | None = None,
              data=None) -> GapReport:
    """Conforming and nonconforming minima per level and their ratio."""
    toward = SUPER if getattr(getattr(integrand, "geometry", None), "regime", SUB) == SUPER else SUB
    rows, sols = [], {}
    for lev in levels:
        mesh = build_mesh(lev, grading, toward)
        conf = minimize(mesh, CONF, integrand, eta, cfg, data)
        noncf = minimize(mesh, NONCF, integrand, eta, cfg, data)
        sols[lev] = (conf, noncf)
        rows.append(GapRow(lev, conf.energy, noncf.energy))
    return GapReport(rows, sols)


def ratio_from_solutions(conf: DiscreteSolution, noncf: DiscreteSolution) -> float:
    return conf.energy / noncf.energy


def gradient_norm(sol: DiscreteSolution, s: float) -> float:
    G = sol.gradients()
    return float(np.sum(sol.mesh.areas * np.linalg.norm(G, axis=1) ** s) ** (1.0 / s))


def fem_trace_jumps(sol: DiscreteSolution, xbar, cells: float = 4.0, order: int = 16) -> np.ndarray:
    """Jumps ``<v>^+ - <v>^-`` at radius ``min(cells * h, 1/2)`` (balls of a quarter of it)."""
    r = min(cells * sol.mesh.h, 0.5)
    avg = lambda sign: riesz.ball_average(sol, *_centers(xbar, r, sign), order)
    return avg(1) - avg(-1)


def _centers(xbar, r, sign):
    c, rad = riesz._trace_centers(np.asarray(xbar, dtype=float), r, sign)
    return c, rad


def oscillation_cells(sol: DiscreteSolution, threshold: float) -> np.ndarray:
    """Barycentres of cells whose dof values spread by more than ``threshold``."""
    vals = sol.coef[sol.space.local_dofs]
    osc = vals.max(axis=1) - vals.min(axis=1)
    return sol.mesh.barycenters[osc > threshold]


def box_count_slope(points, scales) -> tuple[float, np.ndarray]:
    """Log-log slope of occupied dyadic boxes against ``1 / eps``."""
    counts = []
    for eps in scales:
        idx = np.floor((np.asarray(points) + 1.0) / eps).astype(np.int64)
        counts.append(len({tuple(r) for r in idx}) if len(idx) else 0)
    counts = np.array(counts, dtype=float)
    ok = counts > 0
    if ok.sum() < 2:
        return 0.0, counts
    slope = np.polyfit(np.log(1.0 / np.asarray(scales)[ok]), np.log(counts[ok]), 1)[0]
    return float(slope), counts


def axis_modulus(sol: DiscreteSolution, geometry, n: int = 513):
    """Oscillation of ``v_h`` along the contact axis against ``rho^D log^(-gamma nu)(e + 1/rho)``.

    Returns ``(rho, omega, C)`` with ``C`` the least-squares constant.
    """
    z = np.linspace(-0.75, 0.75, n)
    vals = sol(np.column_stack([np.zeros(n), z]))
    rho = 2.0 ** -np.arange(1, 9)
    omega = []
    for r in rho:
        k = max(1, int(round(r / (z[1] - z[0]))))
        omega.append(np.max(np.abs(vals[k:] - vals[:-k])))
    omega = np.array(omega)
    model = rho**geometry.dim * np.log(math.e + 1.0 / rho) ** (-geometry.gamma_nu)
    C = float(omega @ model / (model @ model))
    return rho, omega, C


@dataclass
class ObservableReport:
    levels: list
    E_conf: list
    E_noncf: list
    ratio: list
    jump_fraction: list
    jump_mean: list
    norm_low: list
    norm_high: list
    box_slope: list
    modulus_C: list | None
    s_low: float
    s_high: float

    def rows(self):
        keys = ["level", "E_conf", "E_noncf", "ratio", "jump_fraction", "jump_mean", "norm_low", "norm_high",
                "box_slope"]
        cols = [self.levels, self.E_conf, self.E_noncf, self.ratio, self.jump_fraction, self.jump_mean,
                self.norm_low, self.norm_high, self.box_slope]
        return keys, list(zip(*cols))


def observables(report: GapReport, integrand, n_points: int = 64, seed: int = 0, m: int = 12,
                jump_cells: float = 4.0) -> ObservableReport:
    """Trace jumps, gradient norms and oscillation box counts of the nonconforming solutions."""
    levels = sorted(report.solutions)
    if len(levels) < 3:
        raise ValueError("observables need solutions on at least three levels")
    geo = integrand.geometry
    p0 = geo.p0
    s_low, s_high = p0 - 0.1, p0 + 0.25
    rng = np.random.default_rng(seed)
    xbar = cantor.sample_measure(geo.spec, m, n_points, rng) if geo.regime == SUB else None
    out = dict(jf=[], jm=[], lo=[], hi=[], bs=[], mc=[])
    for lev in levels:
        conf, noncf = report.solutions[lev]
        eta = noncf.eta
        if xbar is not None:
            j = np.abs(fem_trace_jumps(noncf, xbar, jump_cells))
            out["jf"].append(float(np.mean(j > 0.5 * eta)))
            out["jm"].append(float(np.mean(j) / eta))
        else:
            out["jf"].append(float("nan"))
            out["jm"].append(float("nan"))
        out["lo"].append(gradient_norm(noncf, s_low))
        out["hi"].append(gradient_norm(noncf, s_high))
        pts = oscillation_cells(noncf, 0.25 * eta)
        out["bs"].append(box_count_slope(pts, 2.0 ** -np.arange(1, lev + 1))[0])
        if geo.regime == SUPER:
            out["mc"].append(axis_modulus(noncf, geo)[2])
    return ObservableReport(
        levels,
        [report.solutions[lv][0].energy for lv in levels],
        [report.solutions[lv][1].energy for lv in levels],
        [report.solutions[lv][0].energy / report.solutions[lv][1].energy for lv in levels],
        out["jf"], out["jm"], out["lo"], out["hi"], out["bs"],
        out["mc"] if geo.regime == SUPER else None,
        s_low, s_high,
    )


def write_observables_csv(rep: ObservableReport, path) -> None:
    keys, rows = rep.rows()
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if not isinstance(v, int) else str(v) for v in r) + "\n")


# ---------------------------------------------------------------------------
# flat binary dumps
#
# header: five little-endian int64 (n_vertices, n_cells, n_dofs, level, space
# code 0 = conf / 1 = noncf); body: vertex coordinates (n_vertices x 2 float64),
# cell incidence (n_cells x 3 int64), coefficients (n_dofs float64).

_HEADER = struct.Struct("<5q")


def write_dump(sol: DiscreteSolution, path) -> None:
    m = sol.mesh
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(m.vertices.shape[0], m.n_cells, sol.coef.size, m.level, SPACES.index(sol.kind)))
        fh.write(m.vertices.astype("<f8").tobytes())
        fh.write(m.cells.astype("<i8").tobytes())
        fh.write(sol.coef.astype("<f8").tobytes())


def read_dump(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    nv, nc, nd, level, code = _HEADER.unpack_from(raw)
    off = _HEADER.size
    verts = np.frombuffer(raw, "<f8", 2 * nv, off).reshape(nv, 2)
    off += 16 * nv
    cells = np.frombuffer(raw, "<i8", 3 * nc, off).reshape(nc, 3)
    off += 24 * nc
    coef = np.frombuffer(raw, "<f8", nd, off)
    return {"level": level, "space": SPACES[code], "vertices": verts, "cells": cells, "coef": coef}
