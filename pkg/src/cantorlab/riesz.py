"""Restricted Riesz potentials, one-sided traces, chain sums and the field ``bold b``.

Cones open along the last coordinate: ``C^+(x) = {y : |ybar - xbar| <= (y_d - x_d) / 2}``
and ``C^-`` its mirror image.  All quadratures use cone coordinates
``y = x + h (sigma / 2, +-1)`` with ``|sigma| <= 1``, in which the Riesz kernel
``|x - y|^(1-d)`` cancels the Jacobian and the integrand is bounded.

The separating field is built from the trace kernels of the ball average
``omega = |B_{1/4}|^{-1} 1_{B_{1/4}}``.  For a base point ``xbar`` the upper
kernel is

    K^+(xbar, z) = (z - (xbar, 0)) int_{r1}^{r2} omega_s(z) s^{-1} ds,

which has a closed form because ``omega_s(z) != 0`` exactly for ``s`` between
the two roots of a quadratic.  With ``r2 = 4/3`` the largest averaging ball
sits above ``x_d = 1`` so, inside the unit cube, ``K^+`` is divergence free
away from its apex and carries unit flux through every horizontal slice.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import cantor
from .energy import classify
from .fields import SUB, SUPER, Geometry

APERTURE = 0.5
TRACE_RADIUS = 0.25
OUTER_RADIUS = 4.0 / 3.0
CHAIN_TAU = 0.01
_SQ15 = math.sqrt(15.0)


@lru_cache(maxsize=32)
def _gauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _rule(a, b, n):
    x, w = _gauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def _as_points(x, d=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if d is not None and x.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}")
    return x


# ---------------------------------------------------------------------------
# cones and restricted Riesz potentials


@dataclass(frozen=True)
class ConeKernel:
    """The truncated Riesz kernel ``|x - y|^(1-d)`` on the cone ``C^sign(x)``."""

    sign: int
    d: int = 2
    aperture: float = APERTURE

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.d < 2:
            raise ValueError("dimension must be at least 2")

    def contains(self, x, y):
        x, y = _as_points(x, self.d), _as_points(y, self.d)
        h = self.sign * (y[:, -1] - x[:, -1])
        rho = np.linalg.norm(y[:, :-1] - x[:, :-1], axis=1)
        return (h > 0) & (rho <= self.aperture * h)

    def __call__(self, x, y):
        x, y = _as_points(x, self.d), _as_points(y, self.d)
        with np.errstate(divide="ignore"):
            k = np.linalg.norm(y - x, axis=1) ** (1.0 - self.d)
        return np.where(self.contains(x, y), k, 0.0)


def _section_rule(k: int, n: int):
    """Nodes and weights on the unit ball of ``R^k`` (weights sum to its volume)."""
    if k == 1:
        x, w = _gauss(n)
        return x[:, None], w
    if k == 2:
        r, wr = _rule(0.0, 1.0, n)
        ang = (np.arange(2 * n) + 0.5) * math.pi / n
        rr, aa = np.meshgrid(r, ang, indexing="ij")
        pts = np.column_stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()])
        wts = (wr[:, None] * r[:, None] * np.full(ang.size, math.pi / n)[None, :]).ravel()
        return pts, wts
    raise NotImplementedError("cone sections are implemented for d = 2 and d = 3")


def _in_cube(y):
    return np.all(np.abs(y) < 1.0, axis=1)


def riesz_shells(f_eval: Callable, x, sign: int, n_shells: int = 48, order: int = 8,
                 aperture: float = APERTURE, chunk: int = 64):
    """Dyadic shell contributions to ``I_1^sign(f 1_Omega)(x)``.

    Shell ``k`` covers heights ``h`` in ``[H 2^{-k-1}, H 2^{-k}]`` above (or
    below) ``x`` where ``H = 1 - sign x_d`` reaches the face of the cube.
    Returns an array of shape ``(n_points, n_shells)``.
    """
    x = _as_points(x)
    n, d = x.shape
    sig, ws = _section_rule(d - 1, order)
    jac = aperture ** (d - 1) * (1.0 + (aperture**2) * np.sum(sig**2, axis=1)) ** ((1.0 - d) / 2.0)
    hx, hw = _rule(0.5, 1.0, order)
    ks = np.arange(n_shells)
    scale = 2.0 ** (-ks.astype(float))
    out = np.empty((n, n_shells))
    for lo in range(0, n, chunk):
        xs = x[lo : lo + chunk]
        H = 1.0 - sign * xs[:, -1]
        if np.any(H <= 0):
            raise ValueError("base point outside the cube")
        # heights (point, shell, node)
        h = H[:, None, None] * scale[None, :, None] * hx[None, None, :]
        wh = H[:, None, None] * scale[None, :, None] * hw[None, None, :]
        y = np.empty(h.shape + (sig.shape[0], d))
        y[..., :-1] = xs[:, None, None, None, :-1] + aperture * h[..., None, None] * sig[None, None, None, :, :]
        y[..., -1] = xs[:, None, None, None, -1] + sign * h[..., None]
        flat = y.reshape(-1, d)
        vals = np.abs(np.asarray(f_eval(flat), dtype=float))
        vals = np.where(_in_cube(flat), vals, 0.0).reshape(y.shape[:-1])
        out[lo : lo + chunk] = np.einsum("psnq,psn,q->ps", vals, wh, ws * jac)
    return out


@dataclass
class RieszValue:
    value: float
    shells: np.ndarray = field(repr=False)
    tail: float
    verdict: str


def restricted_riesz(f_eval: Callable, x, sign: int, tol: float = 0.05, n_shells: int = 48,
                     order: int = 8) -> RieszValue:
    """``I_1^sign(f)(x) = int_{C^sign(x)} |f(y)| |x - y|^(1-d) dy`` over the cube.

    The shell sequence goes through the same decay classifier as the modulars;
    the reported tail is the fitted remainder below the last shell.
    """
    c = riesz_shells(f_eval, x, sign, n_shells, order)[0]
    rep = classify(c, tol=tol, min_shells=n_shells // 2)
    tail = rep.tail if np.isfinite(rep.tail) else float("nan")
    return RieszValue(rep.value, c, tail, rep.verdict)


def riesz_both(f_eval: Callable, xbar, n_shells: int = 48, order: int = 8):
    """``I_1^+ + I_1^-`` at the points ``(xbar, 0)`` (shell sums, shape ``(n,)``)."""
    xbar = np.atleast_2d(np.asarray(xbar, dtype=float).T).T if np.ndim(xbar) == 1 else np.asarray(xbar, dtype=float)
    x = np.column_stack([xbar, np.zeros(xbar.shape[0])])
    up = riesz_shells(f_eval, x, 1, n_shells, order).sum(axis=1)
    down = riesz_shells(f_eval, x, -1, n_shells, order).sum(axis=1)
    return up + down


# ---------------------------------------------------------------------------
# the integrated trace inequality


@dataclass
class RieszBound:
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else float("nan")


def _require_sub_plane(geometry: Geometry):
    if geometry.regime != SUB or geometry.d != 2:
        raise NotImplementedError("only the two-dimensional sub-dimensional geometry is supported")


def _b_profile(geometry: Geometry, t):
    return t ** (geometry.dim + 1.0 - geometry.d) * np.log(math.e + 1.0 / t) ** (-geometry.gamma_nu)


def _merged(left, right):
    """Union of sorted closed intervals as ``(lo, hi)`` arrays."""
    brk = np.flatnonzero(left[1:] > right[:-1])
    lo = np.concatenate([left[:1], left[brk + 1]])
    hi = np.concatenate([right[brk], right[-1:]])
    return lo, hi


def b_integral(f_eval: Callable, geometry: Geometry, m: int, n_shells: int = 40, order: int = 6,
               panel: float = 1.0 / 64.0) -> float:
    """``int |f| b`` over the square with ``b`` built on generation ``m``.

    Horizontal slices of the support of ``b`` are finite unions of intervals,
    integrated by composite Gauss-Legendre with panels no wider than
    ``panel``; the height integral runs over dyadic shells split where
    neighbouring intervals merge and refined to the same panel width.
    """
    _require_sub_plane(geometry)
    pre = cantor.generation(geometry.spec, m)
    tab = geometry.spec.table
    brk = [2.0**-k for k in range(n_shells + 1)]
    brk += [g for g in tab.gap[1 : m + 1] if g < 1.0]
    brk += list(np.arange(panel, 1.0, panel))
    brk = np.unique(np.array(brk))
    t_nodes, t_wts = [], []
    for a, b in zip(brk[:-1], brk[1:]):
        x, w = _rule(a, b, order)
        t_nodes.append(x)
        t_wts.append(w)
    t_nodes = np.concatenate(t_nodes)
    t_wts = np.concatenate(t_wts)
    gx, gw = _gauss(order)
    total = 0.0
    slices = np.empty(t_nodes.size)
    for i, t in enumerate(t_nodes):
        lo, hi = _merged(pre.left - 0.5 * t, pre.right + 0.5 * t)
        lo, hi = np.clip(lo, -1.0, 1.0), np.clip(hi, -1.0, 1.0)
        k = np.maximum(1, np.ceil((hi - lo) / panel)).astype(int)
        step = np.repeat((hi - lo) / k, k)
        lo = np.repeat(lo, k) + step * (np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k))
        hi = lo + step
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        xs = (mid[:, None] + half[:, None] * gx).ravel()
        ws = (half[:, None] * gw).ravel()
        pts_up = np.column_stack([xs, np.full(xs.size, t)])
        pts_dn = np.column_stack([xs, np.full(xs.size, -t)])
        s = np.dot(ws, np.abs(f_eval(pts_up))) + np.dot(ws, np.abs(f_eval(pts_dn)))
        slices[i] = s
    total = float(np.dot(t_wts, slices * _b_profile(geometry, t_nodes)))
    # below the last shell the slice integral is frozen at its last value
    t0 = brk[0]
    prof = _b_profile(geometry, np.array([t0]))[0]
    total += slices[np.argmin(t_nodes)] * prof * t0 / (geometry.dim + 2.0 - geometry.d)
    return total


def riesz_vs_b(f_eval: Callable, geometry: Geometry, m: int, level: int | None = None,
               n_shells: int = 40, order: int = 6) -> RieszBound:
    """Both sides of ``int I_1^(+-)(f)(xbar, 0) dmu_m <= C int |f| b``.

    The left side integrates the two-sided cone potential against ``mu_m``
    with the moment-matched tree rule; the right side integrates ``|f| b``
    over slices of the support of ``b``.
    """
    _require_sub_plane(geometry)
    level = min(m, 6) if level is None else level
    xb, w = cantor.measure_nodes(geometry.spec, m, level)
    lhs = float(np.dot(w, riesz_both(f_eval, xb, n_shells, order)))
    rhs = b_integral(f_eval, geometry, m, n_shells, order)
    return RieszBound(lhs, rhs)


@dataclass(frozen=True)
class Bump:
    """``amp (1 - |y - c|^2 / w^2)^3`` on the ball of radius ``w`` about ``c``."""

    center: tuple
    width: float
    amp: float = 1.0

    def __call__(self, y):
        y = _as_points(y)
        r2 = np.sum((y - np.asarray(self.center)) ** 2, axis=1) / self.width**2
        return self.amp * np.clip(1.0 - r2, 0.0, None) ** 3

    def grad(self, y):
        y = _as_points(y)
        diff = y - np.asarray(self.center)
        r2 = np.sum(diff**2, axis=1) / self.width**2
        g = -6.0 * self.amp * np.clip(1.0 - r2, 0.0, None) ** 2 / self.width**2
        return g[:, None] * diff

    @property
    def grad_sup(self) -> float:
        # max of 6 r (1 - r^2)^2 / w over r in [0, 1] sits at r = 1/sqrt(5)
        r = 1.0 / math.sqrt(5.0)
        return self.amp * 6.0 * r * (1.0 - r * r) ** 2 / self.width


def bump_family(n: int, rng: np.random.Generator, d: int = 2, width=(0.08, 0.4),
                height: float = 0.8, spread: float = 0.6) -> list[Bump]:
    """Random bumps near the contact plane, kept inside the cube."""
    out = []
    for _ in range(n):
        w = rng.uniform(*width)
        cb = rng.uniform(-spread, spread, size=d - 1)
        cd = rng.uniform(-height, height)
        lim = 1.0 - w - 1e-3
        c = np.clip(np.append(cb, cd), -lim, lim)
        out.append(Bump(tuple(c), w, float(rng.uniform(0.5, 2.0))))
    return out


# ---------------------------------------------------------------------------
# one-sided traces


@lru_cache(maxsize=8)
def _ball_rule(d: int, n: int):
    """Nodes on the unit ball of ``R^d`` with weights summing to one."""
    r, wr = _rule(0.0, 1.0, n)
    wr = wr * r ** (d - 1)
    if d == 2:
        ang = (np.arange(2 * n) + 0.5) * math.pi / n
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        wd = np.full(ang.size, 1.0)
    elif d == 3:
        c, wc = _gauss(n)
        ang = (np.arange(2 * n) + 0.5) * math.pi / n
        cc, aa = np.meshgrid(c, ang, indexing="ij")
        sn = np.sqrt(1.0 - cc**2)
        dirs = np.column_stack([(sn * np.cos(aa)).ravel(), (sn * np.sin(aa)).ravel(), cc.ravel()])
        wd = np.repeat(wc, ang.size)
    else:
        raise NotImplementedError("ball averages are implemented for d = 2 and d = 3")
    pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    wts = (wr[:, None] * wd[None, :]).ravel()
    return pts, wts / wts.sum()


def ball_average(v_eval, centers, radius, order: int = 8, omega: Callable | None = None):
    """Averages of ``v`` over balls (or against a profile ``omega`` on the unit ball).

    Objects with a ``ball_average(centers, radius)`` method (discrete
    solutions) are delegated to, so they can use a rule suited to their cells.
    """
    centers = _as_points(centers)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), centers.shape[:1])
    if omega is None and hasattr(v_eval, "ball_average"):
        return np.asarray(v_eval.ball_average(centers, radius), dtype=float)
    n, d = centers.shape
    pts, wts = _ball_rule(d, order)
    if omega is not None:
        wts = wts * np.asarray(omega(pts), dtype=float)
        wts = wts / wts.sum()
    y = centers[:, None, :] + radius[:, None, None] * pts[None, :, :]
    vals = np.asarray(v_eval(y.reshape(-1, d)), dtype=float).reshape(n, -1)
    return vals @ wts


def _trace_centers(xbar, r, sign):
    xbar = np.atleast_2d(np.asarray(xbar, dtype=float).T).T if np.ndim(xbar) == 1 else np.asarray(xbar, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), xbar.shape[:1])
    if np.any(np.max(np.abs(xbar), axis=1) + TRACE_RADIUS * r >= 1.0) or np.any((1.0 + TRACE_RADIUS) * r >= 1.0):
        raise ValueError("averaging ball leaves the cube")
    return np.column_stack([xbar, sign * r]), TRACE_RADIUS * r


def trace_average(v_eval, xbar, r, sign: int, order: int = 8, omega: Callable | None = None):
    """``<v>^sign_{xbar, r}``: average over ``B_{r/4}(xbar, sign r)``.

    ``xbar`` is a single point of the contact plane (shape ``(d-1,)``) or a
    batch (shape ``(n, d-1)``; for ``d = 2`` a flat array is a batch).  A
    custom ``omega`` is a density on the unit ball supported in
    ``|y_d| < 1/2`` and replaces the ball of radius ``1/4``.
    """
    c, rad = _trace_centers(xbar, r, sign)
    if omega is not None:
        rad = rad / TRACE_RADIUS
    return ball_average(v_eval, c, rad, order, omega)


def trace_jump(v_eval, xbar, r, order: int = 8):
    return trace_average(v_eval, xbar, r, 1, order) - trace_average(v_eval, xbar, r, -1, order)


def extrapolate(seq, ratio_cap: float = 0.75):
    """Limit of a sequence with geometric increments (Aitken on the last three).

    Returns ``(limit, increments, ratio)``; ``ratio`` is the estimated
    increment ratio, clipped to ``[-ratio_cap, ratio_cap]``.
    """
    a = np.asarray(seq, dtype=float)
    inc = np.diff(a, axis=-1)
    last, prev = inc[..., -1], inc[..., -2]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(np.abs(prev) > 1e-300, last / prev, 0.0)
    q = np.clip(np.nan_to_num(q), -ratio_cap, ratio_cap)
    return a[..., -1] + last * q / (1.0 - q), inc, q


@dataclass
class TraceSample:
    """Upper/lower averages of one function at base points and radii ``2^-k``."""

    xbar: np.ndarray
    r: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    plus_limit: np.ndarray = field(init=False)
    minus_limit: np.ndarray = field(init=False)

    def __post_init__(self):
        self.plus_limit = extrapolate(self.plus)[0]
        self.minus_limit = extrapolate(self.minus)[0]

    @property
    def jump(self):
        return self.plus - self.minus

    @property
    def jump_limit(self):
        return self.plus_limit - self.minus_limit

    @property
    def increments(self):
        return np.abs(np.diff(self.jump, axis=-1))

    @property
    def cauchy(self):
        """Increments of both averages eventually decay geometrically."""
        ok = np.ones(self.plus.shape[0], dtype=bool)
        for a in (self.plus, self.minus):
            inc = np.abs(np.diff(a, axis=-1))
            tail = inc[:, inc.shape[1] // 2 :]
            flat = tail.max(axis=1) <= 1e-12 * max(1.0, float(np.abs(a).max()))
            ok &= flat | np.all(tail[:, 1:] <= 0.75 * tail[:, :-1] + 1e-14, axis=1)
        return ok


def trace_limits(v_eval, xbar, ks=range(4, 13), order: int = 8) -> TraceSample:
    """Averages at ``r = 2^-k`` for ``k`` in ``ks`` and their extrapolated limits."""
    xbar = np.asarray(xbar, dtype=float)
    xb = xbar[:, None] if xbar.ndim == 1 else xbar
    rs = 2.0 ** -np.asarray(list(ks), dtype=float)
    n = xb.shape[0]
    rep = np.repeat(xb, rs.size, axis=0)
    rr = np.tile(rs, n)
    plus = trace_average(v_eval, rep, rr, 1, order).reshape(n, rs.size)
    minus = trace_average(v_eval, rep, rr, -1, order).reshape(n, rs.size)
    return TraceSample(xbar, rs, plus, minus)


def write_traces_csv(sample: TraceSample, path) -> None:
    """Rows ``xbar, r, plus, minus, jump``; the extrapolated limit uses ``r = 0``."""
    xb = sample.xbar if sample.xbar.ndim == 1 else sample.xbar[:, 0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xbar", "r", "plus", "minus", "jump"])
        for i, x in enumerate(xb):
            for j, r in enumerate(sample.r):
                w.writerow([repr(float(x)), repr(float(r)), repr(float(sample.plus[i, j])),
                            repr(float(sample.minus[i, j])), repr(float(sample.jump[i, j]))])
            w.writerow([repr(float(x)), "0", repr(float(sample.plus_limit[i])),
                        repr(float(sample.minus_limit[i])), repr(float(sample.jump_limit[i]))])


# ---------------------------------------------------------------------------
# chain sums along the axis (super-dimensional regime)


@dataclass
class ChainSample:
    """Endpoint values of generation-``m`` intervals on the axis.

    ``v_left[j]`` and ``v_right[j]`` are the one-sided values at the left and
    right endpoints of interval ``j``; ``lower`` and ``upper`` are the values
    at ``x_d = -1`` and ``x_d = 1``.
    """

    m: int
    left: np.ndarray
    right: np.ndarray
    v_left: np.ndarray
    v_right: np.ndarray
    lower: float
    upper: float

    @property
    def across(self):
        return self.v_right - self.v_left

    @property
    def gaps(self):
        ends_lo = np.concatenate([[self.lower], self.v_right])
        ends_hi = np.concatenate([self.v_left, [self.upper]])
        return ends_hi - ends_lo

    @property
    def S(self) -> float:
        return math.fsum(self.across)

    @property
    def gap_sum(self) -> float:
        return math.fsum(self.gaps)

    @property
    def telescoping_residual(self) -> float:
        return abs(self.S + self.gap_sum - (self.upper - self.lower))


def _chain_value(v_eval, d, xi, side, gap, levels, order):
    """Limit of averages over balls in the region beside an endpoint.

    Balls sit at height ``delta`` beyond the endpoint on the gap side, at
    distance ``3 delta / 8`` from the axis, with radius ``tau delta``.
    """
    deltas = 0.25 * gap[:, None] * 2.0 ** -np.arange(levels)[None, :]
    n = xi.size
    cen = np.zeros((n * levels, d))
    cen[:, 0] = (0.375 * deltas).ravel()
    cen[:, -1] = (xi[:, None] + side * deltas).ravel()
    avg = ball_average(v_eval, cen, CHAIN_TAU * deltas.ravel(), order).reshape(n, levels)
    return extrapolate(avg)[0]


def chain_sums(v_eval, geometry: Geometry, m: int, eta: float = 1.0, levels: int = 6, order: int = 6,
               tol: float = 1e-6) -> ChainSample:
    """Across-interval and gap sums of endpoint values for generation ``m``.

    The function is extended by ``-eta/2`` below ``x_d = -1`` and by ``eta/2``
    above ``x_d = 1``, which fixes the values at the two ends of the chain.

    Raises
    ------
    ArithmeticError
        If the two sums fail to telescope to ``eta`` within ``tol``.
    """
    if geometry.regime != SUPER:
        raise ValueError("chain sums live on the axis of the super-dimensional geometry")
    pre = cantor.generation(geometry.spec, m)
    left, right = pre.left, pre.right
    gap_after = np.append(left[1:], 1.0) - right
    gap_before = left - np.concatenate([[-1.0], right[:-1]])
    v_right = _chain_value(v_eval, geometry.d, right, 1.0, gap_after, levels, order)
    v_left = _chain_value(v_eval, geometry.d, left, -1.0, gap_before, levels, order)
    out = ChainSample(m, left, right, v_left, v_right, -0.5 * eta, 0.5 * eta)
    if out.telescoping_residual > tol * max(1.0, abs(eta)):
        raise ArithmeticError(f"chain sums do not telescope: residual {out.telescoping_residual:.3e}")
    return out


def write_chain_csv(sample: ChainSample, path) -> None:
    """Rows ``j, xi_left, xi_right, v_left, v_right, across, gap_after``."""
    gaps = sample.gaps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "xi_left", "xi_right", "v_left", "v_right", "across", "gap_after"])
        w.writerow([0, "", "-1", "", repr(sample.lower), "", repr(float(gaps[0]))])
        for j in range(sample.left.size):
            w.writerow([j + 1, repr(float(sample.left[j])), repr(float(sample.right[j])),
                        repr(float(sample.v_left[j])), repr(float(sample.v_right[j])),
                        repr(float(sample.across[j])), repr(float(gaps[j + 1]))])


# ---------------------------------------------------------------------------
# the separating vector field


def _ball_volume(d: int, r: float) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * r**d


def cone_kernel(xbar, z, r1: float = 0.0, r2: float = OUTER_RADIUS):
    """Trace kernel ``K^+(xbar, z, r1, r2)`` for the ball average of radius ``1/4``.

    ``omega_s(z) != 0`` iff ``|z - (xbar, s)| < s / 4``, i.e. for ``1/s``
    between the roots of ``P w^2 - 2 z_d w + 15/16`` with ``P = |z - (xbar, 0)|^2``.
    The ``s``-integral of ``s^(-1-d)`` is then ``(w_+^d - w_-^d) / d``.  Points
    with ``z_d <= 0`` give zero; the lower kernel is the mirror image.
    """
    z = _as_points(z)
    n, d = z.shape
    xbar = np.broadcast_to(np.asarray(xbar, dtype=float).reshape(-1, d - 1) if np.ndim(xbar) else
                           np.full((1, d - 1), float(xbar)), (n, d - 1))
    rel = z.copy()
    rel[:, :-1] -= xbar
    zd = rel[:, -1]
    P = np.sum(rel**2, axis=1)
    disc = zd**2 - (15.0 / 16.0) * P
    ok = (zd > 0) & (disc > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.where(ok, disc, 0.0))
        w_hi = np.where(ok, (zd + sq) / P, 0.0)
        w_lo = np.where(ok, (zd - sq) / P, 0.0)
    w_hi = np.minimum(w_hi, 1.0 / r1) if r1 > 0 else w_hi
    w_lo = np.maximum(w_lo, 1.0 / r2)
    mag = np.where(ok & (w_hi > w_lo), (w_hi**d - w_lo**d) / (d * _ball_volume(d, TRACE_RADIUS)), 0.0)
    return rel * mag[:, None]


def _F_vertical(x):
    q = np.sqrt(np.clip(1.0 - 15.0 * x * x, 0.0, None))
    return 0.5 * (x * q / (1.0 + x * x) + 0.25 * np.arctan2(4.0 * x, q))


def _F_horizontal(x):
    q = np.sqrt(np.clip(1.0 - 15.0 * x * x, 0.0, None))
    return 1.875 * np.arctanh(0.25 * q) - 0.5 * q / (1.0 + x * x)


_TWO_BALL = 2.0 * _ball_volume(2, TRACE_RADIUS)


class SeparatingField:
    """The field ``bold b = int (K^+ - K^-) dmu_m`` of the square.

    ``bold b`` is divergence free in the open square, supported in the union
    of cones ``|zbar - xbar| < |z_d| / sqrt(15)`` over ``xbar`` in the
    generation-``m`` set, and carries unit flux upward through every
    horizontal slice.  Only the sub-dimensional geometry with ``d = 2`` is
    supported.
    """

    def __init__(self, geometry: Geometry, m: int = 10):
        _require_sub_plane(geometry)
        self.geometry = geometry
        self.m = m
        self.pre = cantor.generation(geometry.spec, m)
        self.density = 1.0 / (2.0**m * self.pre.length)
        self.r1 = self.pre.length / 8.0

    def __call__(self, z, chunk: int = 2048):
        """Pointwise values at points farther than ``l_m / 4`` from the contact set."""
        z = _as_points(z, 2)
        h = np.abs(z[:, 1])
        dist = cantor.distance_1d(self.geometry.spec, z[:, 0], self.m)
        if np.any(np.hypot(dist, h) < 0.25 * self.pre.length):
            raise ValueError("point within l_m / 4 of the contact set")
        a, b = self.pre.left, self.pre.right
        out = np.zeros_like(z)
        lim = 1.0 / _SQ15
        for lo in range(0, z.shape[0], chunk):
            zz, hh = z[lo : lo + chunk], h[lo : lo + chunk]
            live = hh > 0
            with np.errstate(divide="ignore", invalid="ignore"):
                xh = np.clip((zz[:, :1] - a[None, :]) / hh[:, None], -lim, lim)
                xl = np.clip((zz[:, :1] - b[None, :]) / hh[:, None], -lim, lim)
            vert = np.sum(_F_vertical(xh) - _F_vertical(xl), axis=1)
            hor = np.sum(_F_horizontal(xh) - _F_horizontal(xl), axis=1)
            hor *= np.sign(zz[:, 1])
            out[lo : lo + chunk, 0] = np.where(live, hor, 0.0)
            out[lo : lo + chunk, 1] = np.where(live, vert, 0.0)
        return out * (self.density / _TWO_BALL)

    def support(self, z):
        z = _as_points(z, 2)
        dist = cantor.distance_1d(self.geometry.spec, z[:, 0], self.m)
        return (np.abs(z[:, 1]) > 0) & (dist < np.abs(z[:, 1]) / _SQ15)

    def _slice_nodes(self, height: float, order: int):
        """Panels between kinks of ``zbar -> bold b(zbar, height)``.

        The field behaves like ``dist^(3/2)`` at the cone edges, so each panel
        uses Gauss-Legendre after the map ``(1 - cos(pi u)) / 2`` which makes
        both endpoints smooth.
        """
        R = abs(height) / _SQ15
        a, b = self.pre.left, self.pre.right
        brk = np.unique(np.clip(np.concatenate([a - R, a + R, b - R, b + R]), -1.0, 1.0))
        u, wu = _rule(0.0, 1.0, order)
        shape = 0.5 * (1.0 - np.cos(math.pi * u))
        dshape = 0.5 * math.pi * np.sin(math.pi * u)
        lo, width = brk[:-1], np.diff(brk)
        xs = (lo[:, None] + width[:, None] * shape).ravel()
        ws = (width[:, None] * (wu * dshape)).ravel()
        return xs, ws

    def slice_flux(self, height: float, order: int = 8) -> float:
        """``int b_d(zbar, height) dzbar`` from the pointwise field."""
        xs, ws = self._slice_nodes(height, order)
        vals = self(np.column_stack([xs, np.full(xs.size, height)]))[:, 1]
        return float(np.dot(ws, vals))

    def boundary_flux(self, u_eval: Callable | None = None, order: int = 8) -> float:
        """``int_{dOmega} u bold b . nu`` over the top and bottom faces.

        The support stays away from the lateral faces.  ``u`` defaults to the
        boundary values ``+-1/2`` of the competitor on the support.
        """
        total = 0.0
        for side in (1.0, -1.0):
            xs, ws = self._slice_nodes(side, order)
            pts = np.column_stack([xs, np.full(xs.size, side)])
            u = np.full(xs.size, 0.5 * side) if u_eval is None else np.asarray(u_eval(pts), dtype=float)
            total += float(np.dot(ws, u * self(pts)[:, 1] * side))
        return total

    def separating_functional(self, grad_f: Callable, level: int | None = None, n_h: int = 64,
                              order: int = 8, n_phi: int = 24) -> "Functional":
        """``S(f) = int bold b . grad f`` by quadrature along each cone.

        In the coordinates ``z = (xbar + h sin(phi) / sqrt 15, +-h)`` the
        kernel times the Jacobian is a smooth function of ``phi`` alone, so
        each cone is a product Gauss rule in ``(h, phi)``; the cones are
        then integrated against ``mu_m`` with the moment-matched tree rule.
        Heights below ``r1 = l_m / 8`` are dropped and bounded by
        ``2 r1 sup|grad f|`` times the total kernel mass.
        """
        level = min(self.m, 5) if level is None else level
        xb, wx = cantor.measure_nodes(self.geometry.spec, self.m, level)
        ph, wph = _rule(-0.5 * math.pi, 0.5 * math.pi, n_phi)
        sn = np.sin(ph)
        prof = np.cos(ph) ** 2 / (_SQ15 * _TWO_BALL * (1.0 + sn * sn / 15.0) ** 2)
        # dyadic panels in h from r1 to 1
        k = max(1, int(math.ceil(math.log2(1.0 / self.r1))))
        edges = np.unique(np.concatenate([np.geomspace(self.r1, 1.0, k + 1), np.linspace(self.r1, 1.0, n_h + 1)]))
        hs, whs = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            x, w = _rule(a, b, order)
            hs.append(x)
            whs.append(w)
        hs, whs = np.concatenate(hs), np.concatenate(whs)
        total = 0.0
        gmax = 0.0
        mass = float(np.dot(wph, prof * np.hypot(1.0, sn / _SQ15)))
        per = max(1, 400000 // (hs.size * ph.size))
        for side in (1.0, -1.0):
            for lo in range(0, xb.size, per):
                x0, w0 = xb[lo : lo + per], wx[lo : lo + per]
                zx = x0[:, None, None] + hs[None, :, None] * sn[None, None, :] / _SQ15
                zd = np.broadcast_to(side * hs[None, :, None], zx.shape)
                g = np.asarray(grad_f(np.column_stack([zx.ravel(), zd.ravel()])), dtype=float)
                g = g.reshape(zx.shape + (2,))
                gmax = max(gmax, float(np.max(np.abs(g))))
                integrand = side * sn / _SQ15 * g[..., 0] + g[..., 1]
                total += float(np.einsum("i,ijk,j,k,k->", w0, integrand, whs, prof, wph))
        return Functional(total, 2.0 * self.r1 * math.sqrt(2.0) * gmax * mass)

    def separating_functional_grid(self, grad_f: Callable, box, n: int = 256, order: int = 4) -> float:
        """``S(f)`` by tensor Gauss quadrature of the pointwise field over ``box``.

        ``box = (x0, x1, y0, y1)`` must contain the support of ``grad f``
        intersected with the support of ``bold b``; heights are graded
        geometrically toward the contact line.
        """
        x0, x1, y0, y1 = box
        gx, gw = _gauss(order)
        xe = np.linspace(x0, x1, n + 1)
        xs = (0.5 * (xe[1:] + xe[:-1])[:, None] + 0.5 * np.diff(xe)[:, None] * gx).ravel()
        wxs = (0.5 * np.diff(xe)[:, None] * gw).ravel()
        floor = 2.0 * self.pre.length
        ye = []
        for lo, hi, s in ((max(y0, floor), y1, 1.0), (max(-y1, floor), -y0, -1.0)):
            if hi <= lo:
                continue
            e = np.unique(np.concatenate([np.geomspace(lo, hi, n // 2 + 1), np.linspace(lo, hi, n // 2 + 1)]))
            ye.append(s * e)
        total = 0.0
        for e in ye:
            e = np.sort(e)
            ys = (0.5 * (e[1:] + e[:-1])[:, None] + 0.5 * np.diff(e)[:, None] * gx).ravel()
            wys = (0.5 * np.diff(e)[:, None] * gw).ravel()
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            pts = np.column_stack([X.ravel(), Y.ravel()])
            live = self.support(pts)
            val = np.zeros(pts.shape[0])
            if live.any():
                bb = self(pts[live])
                gf = np.asarray(grad_f(pts[live]), dtype=float)
                val[live] = np.sum(bb * gf, axis=1)
            total += float(wxs @ val.reshape(X.shape) @ wys)
        return total


def extension_gradient(u_and_grad: Callable, inner: float = 0.6, outer: float = 0.9) -> Callable:
    """Gradient of ``(1 - xi) u`` for the cutoff ``xi = psi(|z_1|) ... psi(|z_d|)``.

    ``psi`` is the C^2 ramp from 1 on ``[0, inner]`` to 0 beyond ``outer``, so
    ``xi`` is compactly supported in the cube and equals 1 near the contact
    set.  The result is a smooth extension of the boundary values of ``u``.
    """
    from .fields import cone_ramp

    def grad(z):
        z = _as_points(z)
        u, gu = u_and_grad(z)
        val, der = cone_ramp(np.abs(z), inner, outer)
        xi = np.prod(val, axis=1)
        dxi = np.empty_like(z)
        for i in range(z.shape[1]):
            others = np.prod(np.delete(val, i, axis=1), axis=1)
            dxi[:, i] = der[:, i] * np.sign(z[:, i]) * others
        gu = np.where(np.isfinite(gu), gu, 0.0)
        return -u[:, None] * dxi + (1.0 - xi)[:, None] * gu

    return grad


@dataclass
class Functional:
    value: float
    remainder_bound: float


def vector_field_b(z, geometry: Geometry, m: int = 10):
    """Pointwise ``bold b(z)``; see :class:`SeparatingField`."""
    return SeparatingField(geometry, m)(z)


def separating_functional(grad_f: Callable, geometry: Geometry, m: int = 10, **kw) -> Functional:
    return SeparatingField(geometry, m).separating_functional(grad_f, **kw)


def b_ratio_sample(field_b: SeparatingField, n: int, rng: np.random.Generator):
    """Points in the support of ``bold b`` and the ratios ``|bold b| / b`` there.

    ``b`` is evaluated on the same generation, so both supports refer to the
    same set.  Heights are log-uniform between ``2 l_m`` and ``1``.
    """
    from .fields import FieldEval

    geo = field_b.geometry
    xb = cantor.sample_measure(geo.spec, field_b.m, n, rng)
    lo = math.log(2.0 * field_b.pre.length)
    h = np.exp(rng.uniform(lo, 0.0, n)) * (1.0 - 1e-9)
    off = rng.uniform(-0.98, 0.98, n) * h / _SQ15
    sgn = rng.choice([-1.0, 1.0], n)
    z = np.column_stack([np.clip(xb + off, -0.999, 0.999), sgn * h])
    bb = np.linalg.norm(field_b(z), axis=1)
    b = FieldEval(geo, field_b.m).b(z)
    return z, bb / b


def write_bfield_csv(z, values, path) -> None:
    z = _as_points(z)
    cols = [f"z{i + 1}" for i in range(z.shape[1])] + [f"b{i + 1}" for i in range(values.shape[1])]
    np.savetxt(path, np.column_stack([z, values]), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")

