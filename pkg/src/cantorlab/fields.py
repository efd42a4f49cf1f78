"""Pointwise competitor ``u``, auxiliary function ``b`` and cone indicators.

Three regimes are covered, determined by how the growth exponent ``p0``
compares with the ambient dimension ``d``:

``sub``
    ``1 < p0 <= d``; contact set ``C**(d-1) x {0}`` (``D = d - p0``).
``matching``
    ``p0 = d``; contact set is the origin.
``super``
    ``p0 >= d``; contact set ``{0}**(d-1) x C`` with ``p0 = (d - D) / (1 - D)``.

All evaluators take points as arrays of shape ``(n, d)``; the last column is
``x_d``.  Values off the contact set are smooth except across the cones where
a cutoff switches on, and every cutoff is the same C^2 ramp profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cantor

SUB = "sub"
MATCHING = "matching"
SUPER = "super"
REGIMES = (SUB, MATCHING, SUPER)

# ramp: cubic-quartic shoulders of width W joined by a straight middle piece
_W = 0.25
_M = 1.0 / (1.0 - _W)

# cone pairs (inner, outer) for the competitor and for the weight cutoff
U_CONE = (2.0, 4.0)
A_CONE = (0.5, 2.0)
B_CONE = 0.5


def _shoulder(z):
    return z**3 - 0.5 * z**4, 3.0 * z**2 - 2.0 * z**3, 6.0 * z - 6.0 * z**2


def ramp(y, order: int = 0):
    """C^2 monotone ramp from 0 (``y <= 0``) to 1 (``y >= 1``).

    ``order`` selects the value (0), first (1) or second (2) derivative.  The
    slope never exceeds ``4/3``.
    """
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    lo = y < _W
    hi = y > 1.0 - _W
    zl = np.where(lo, y / _W, 1.0)
    zh = np.where(hi, (1.0 - y) / _W, 1.0)
    pl, dpl, ddpl = _shoulder(zl)
    ph, dph, ddph = _shoulder(zh)
    if order == 0:
        mid = _M * _W * 0.5 + _M * (y - _W)
        return np.where(lo, _M * _W * pl, np.where(hi, 1.0 - _M * _W * ph, mid))
    if order == 1:
        return np.where(lo, _M * dpl, np.where(hi, _M * dph, _M))
    if order == 2:
        return np.where(lo, _M * ddpl / _W, np.where(hi, -_M * ddph / _W, 0.0))
    raise ValueError("order must be 0, 1 or 2")


def _ramp_interior(y, order):
    # derivatives vanish outside [0, 1]
    y = np.asarray(y, dtype=float)
    out = ramp(y, order)
    return np.where((y > 0) & (y < 1), out, 0.0) if order else out


def theta(t):
    """Cutoff equal to 0 below 1/4 and 1 above 1/2."""
    return ramp(4.0 * (np.asarray(t, dtype=float) - 0.25))


def theta_prime(t):
    return 4.0 * _ramp_interior(4.0 * (np.asarray(t, dtype=float) - 0.25), 1)


def theta_second(t):
    return 16.0 * _ramp_interior(4.0 * (np.asarray(t, dtype=float) - 0.25), 2)


THETA_KINKS = (0.25, 0.25 + _W / 4.0, 0.5 - _W / 4.0, 0.5)


def cone_ramp(s, tau1: float, tau2: float):
    """Decreasing cutoff of ``s``: 1 for ``s <= tau1``, 0 for ``s >= tau2``.

    Returns the value and its derivative in ``s``.
    """
    check_cone(tau1, tau2)
    s = np.asarray(s, dtype=float)
    width = tau2 - tau1
    y = (s - tau1) / width
    with np.errstate(invalid="ignore"):
        val = 1.0 - ramp(np.where(np.isnan(y), 0.0, y))
        der = -_ramp_interior(np.where(np.isfinite(y), y, -1.0), 1) / width
    return val, der


def cone_ramp_slope(tau1: float, tau2: float) -> float:
    """Largest ``|d rho / d s|`` of :func:`cone_ramp`."""
    return _M / (tau2 - tau1)


def check_cone(tau1: float, tau2: float) -> None:
    if not (0.25 <= tau1 < tau2 <= 4.0 and tau2 - tau1 >= 0.25):
        raise ValueError(f"invalid cone pair ({tau1}, {tau2})")


def rho_cone(spec: cantor.CantorSpec, m: int | None, xc, xh, tau1: float, tau2: float):
    """Smooth cone indicator around ``C x R**(d-k)`` and its gradient.

    ``xc`` holds the Cantor coordinates (shape ``(n, k)``) and ``xh`` the
    remaining ones.  The indicator is ``cone_ramp(d(xc, C_m) / |xh|)``, so it is
    1 where ``d <= tau1 |xh|`` and 0 where ``d >= tau2 |xh|``.  The gradient is
    returned with the Cantor coordinates first.
    """
    xc = np.atleast_2d(np.asarray(xc, dtype=float))
    xh = np.atleast_2d(np.asarray(xh, dtype=float))
    dist, gdist = cantor.distance_gradient(spec, m, xc)
    h = np.linalg.norm(xh, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = dist / h
        val, der = cone_ramp(s, tau1, tau2)
        gc = der[:, None] * gdist / h[:, None]
        gh = -(der * dist / h**3)[:, None] * xh
    grad = np.concatenate([gc, gh], axis=1)
    grad[~np.isfinite(grad)] = 0.0
    return val, grad


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Geometry:
    """Regime data: ambient dimension, reference exponent and the Cantor set.

    Use :func:`make_geometry` to construct validated instances.
    """

    regime: str
    d: int
    p0: float
    gamma: float = 0.0
    dim: float = 0.0
    lam: float = 0.0
    nu: float = 0.0
    spec: cantor.CantorSpec | None = field(default=None, compare=False)

    @property
    def contact(self) -> str:
        if self.regime == SUB:
            return f"C^{self.d - 1} x {{0}}"
        if self.regime == SUPER:
            return f"{{0}}^{self.d - 1} x C"
        return "{0}"

    @property
    def gamma_nu(self) -> float:
        return self.gamma * self.nu

    @property
    def meager(self) -> bool:
        return self.regime != MATCHING and self.lam == 0.0


def make_geometry(regime: str, d: int, p0: float, gamma: float = 0.0) -> Geometry:
    """Derive dimension, ratio and log exponent from ``(regime, d, p0, gamma)``.

    Raises
    ------
    ValueError
        On an unknown regime, ``d < 2`` or ``p0`` outside the regime's range.
    """
    d = int(d)
    p0 = float(p0)
    gamma = float(gamma)
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if d < 2:
        raise ValueError("dimension must be at least 2")
    if regime == MATCHING:
        if p0 != d:
            raise ValueError("matching regime requires p0 = d")
        return Geometry(MATCHING, d, p0, 0.0, 0.0, 0.0, float(d - 1), None)
    if regime == SUB:
        if not 1.0 < p0 <= d:
            raise ValueError("sub-dimensional regime requires 1 < p0 <= d")
        dim = d - p0
        lam = 2.0 ** ((1.0 - d) / dim) if dim > 0 else 0.0
        nu = dim if dim > 0 else float(d - 1)
        power = d - 1
    else:
        if p0 < d:
            raise ValueError("super-dimensional regime requires p0 >= d")
        dim = (p0 - d) / (p0 - 1.0)
        lam = 2.0 ** (-1.0 / dim) if dim > 0 else 0.0
        nu = dim if dim > 0 else 1.0
        power = 1
    kind = cantor.MEAGER if lam == 0.0 else cantor.LAMBDA_GAMMA
    spec = cantor.build_spec(kind, lam, gamma, power)
    return Geometry(regime, d, p0, gamma, dim, lam, nu, spec)


# ---------------------------------------------------------------------------
# evaluators


@dataclass
class ConeCoords:
    """Regime coordinates of a batch of points.

    ``t`` is the distance to the hyperplane (sub, matching) or axis (super)
    containing the contact set, ``dist`` the distance to the contact set
    within it, ``s = dist / t``, and ``grad_s`` the gradient of ``s``.
    """

    t: np.ndarray
    dist: np.ndarray
    s: np.ndarray
    grad_s: np.ndarray


class FieldEval:
    """Evaluators for ``u``, ``grad u``, ``b`` and the weight cutoff ``rho_a``.

    Parameters
    ----------
    geometry : Geometry
    m : int or None
        Generation of the distance and measure surrogates; ``None`` uses the
        limit set.
    """

    def __init__(self, geometry: Geometry, m: int | None = 12):
        self.geometry = geometry
        self.m = m

    # coordinates --------------------------------------------------------

    def _split(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.geometry.d:
            raise ValueError(f"expected points of dimension {self.geometry.d}")
        return x, x[:, :-1], x[:, -1]

    def coords(self, x) -> ConeCoords:
        g = self.geometry
        x, xb, xd = self._split(x)
        n = x.shape[0]
        grad = np.zeros((n, g.d))
        with np.errstate(divide="ignore", invalid="ignore"):
            if g.regime == SUPER:
                t = np.linalg.norm(xb, axis=1)
                dist, slope = cantor.distance_slope_1d(g.spec, xd, self.m)
                s = dist / t
                grad[:, :-1] = -(dist / t**3)[:, None] * xb
                grad[:, -1] = slope / t
            else:
                t = np.abs(xd)
                if g.regime == SUB:
                    dist, gdist = cantor.distance_gradient(g.spec, self.m, xb)
                else:
                    dist = np.linalg.norm(xb, axis=1)
                    gdist = np.where(dist[:, None] > 0, xb / dist[:, None], 0.0)
                s = dist / t
                grad[:, :-1] = gdist / t[:, None]
                grad[:, -1] = -np.sign(xd) * dist / t**2
        grad[~np.isfinite(grad)] = 0.0
        return ConeCoords(t, dist, s, grad)

    def singular(self, x):
        """Points on the contact set, where ``u`` is not defined."""
        c = self.coords(x)
        return (c.t == 0) & (c.dist == 0)

    # competitor ---------------------------------------------------------

    def u(self, x):
        return self.u_and_grad(x)[0]

    def grad_u(self, x):
        return self.u_and_grad(x)[1]

    def u_and_grad(self, x):
        """Competitor values and gradients; NaN on the contact set."""
        g = self.geometry
        x, xb, xd = self._split(x)
        if g.regime == SUPER:
            return self._super_u(xb, xd)
        c = self.coords(x)
        sgn = np.sign(xd)
        if g.regime == SUB:
            rho, drho = cone_ramp(c.s, *U_CONE)
            val = 0.5 * sgn * rho
            grad = 0.5 * sgn[:, None] * drho[:, None] * c.grad_s
        else:
            r = c.dist
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = c.t / r
                th = np.where(r > 0, theta(tau), 1.0)
                dth = np.where(r > 0, theta_prime(tau), 0.0)
                val = 0.5 * sgn * th
                grad = np.zeros_like(x)
                grad[:, -1] = np.where(r > 0, 0.5 * dth / r, 0.0)
                grad[:, :-1] = np.where(r[:, None] > 0, -(0.5 * sgn * dth * c.t / r**3)[:, None] * xb, 0.0)
        bad = (c.t == 0) & (c.dist == 0)
        val = np.where(bad, np.nan, val)
        grad[bad] = np.nan
        return val, grad

    def _super_u(self, xb, xd):
        g = self.geometry
        r = np.linalg.norm(xb, axis=1)
        n = r.size
        val = np.empty(n)
        grad = np.zeros((n, g.d))
        axis = r == 0
        if axis.any():
            cdf = cantor.cdf_1d(g.spec, xd[axis], self.m)
            dist = cantor.distance_1d(g.spec, xd[axis], self.m)
            val[axis] = np.where(dist > 0, cdf - 0.5, np.nan)
            grad[axis] = np.where(dist[:, None] > 0, 0.0, np.nan)
        off = ~axis
        if off.any():
            ro = r[off]
            edges = np.concatenate([-ro[:, None] * THETA_KINKS[::-1], ro[:, None] * THETA_KINKS], axis=1)

            def kernel(z, idx):
                rr = ro[idx]
                a = np.abs(z) / rr
                sg = np.sign(z)
                th = theta(a)
                dth = theta_prime(a)
                return np.column_stack([0.5 * sg * th, 0.5 * dth / rr, -0.5 * sg * dth * a / rr])

            res = cantor.convolve_piecewise(g.spec, self.m, xd[off], edges, kernel)
            val[off] = res[:, 0]
            grad[off, -1] = res[:, 1]
            grad[off, :-1] = res[:, 2:3] * xb[off] / ro[:, None]
        return val, grad

    # auxiliary function and weight cutoff -------------------------------

    def b(self, x):
        g = self.geometry
        x, xb, xd = self._split(x)
        c = self.coords(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            if g.regime == SUPER:
                inside = (c.s >= 2.0) & (c.s <= 4.0) & (c.t > 0)
                val = c.t ** (1.0 - g.d)
            elif g.regime == SUB:
                inside = (c.dist <= B_CONE * c.t) & (c.t > 0)
                val = c.t ** (g.dim + 1.0 - g.d) * np.log(math.e + 1.0 / c.t) ** (-g.gamma_nu)
            else:
                inside = (c.dist < B_CONE * c.t) & (c.t > 0)
                val = c.t ** (1.0 - g.d)
        return np.where(inside, val, 0.0)

    def rho_a(self, x):
        return self.rho_a_and_grad(x)[0]

    def rho_a_and_grad(self, x):
        """Weight cutoff: 1 where ``s <= 1/2``, 0 where ``s >= 2``."""
        c = self.coords(x)
        val, der = cone_ramp(c.s, *A_CONE)
        return val, der[:, None] * c.grad_s

    def support(self, x):
        """Boolean triple ``(grad_u, b, transition)`` for each point."""
        g = self.geometry
        x, xb, xd = self._split(x)
        c = self.coords(x)
        if g.regime == SUPER:
            r = c.t
            mu = cantor.CantorMeasure(g.spec, self.m)
            band = (mu.cdf(xd - 0.25 * r) - mu.cdf(xd - 0.5 * r)) + (mu.cdf(xd + 0.5 * r) - mu.cdf(xd + 0.25 * r))
            grad_u = (band > 0) & (r > 0)
            trans = grad_u
            in_b = (c.s >= 2.0) & (c.s <= 4.0) & (r > 0)
        elif g.regime == SUB:
            grad_u = (c.s > U_CONE[0]) & (c.s < U_CONE[1])
            trans = (c.s >= U_CONE[0]) & (c.s <= U_CONE[1])
            in_b = (c.dist <= B_CONE * c.t) & (c.t > 0)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = c.t / c.dist
            grad_u = (tau > 0.25) & (tau < 0.5)
            trans = (tau >= 0.25) & (tau <= 0.5)
            in_b = (c.dist < B_CONE * c.t) & (c.t > 0)
        return grad_u, in_b, trans

    def gradient_constant(self, x) -> float:
        """Largest ``|grad u| * t`` over the given points (regime scale ``t``)."""
        c = self.coords(x)
        gu = np.linalg.norm(self.grad_u(x), axis=1)
        ok = np.isfinite(gu)
        return float(np.max(gu[ok] * c.t[ok])) if ok.any() else 0.0


def write_samples_csv(fe: FieldEval, x, path) -> None:
    """Dump ``x, u, |grad u|, b`` and the support predicates as CSV."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u, gu = fe.u_and_grad(x)
    b = fe.b(x)
    pg, pb, pt = fe.support(x)
    cols = [f"x{i + 1}" for i in range(x.shape[1])] + ["u", "grad_u", "b", "supp_grad_u", "supp_b", "transition"]
    data = np.column_stack([x, u, np.linalg.norm(gu, axis=1), b, pg, pb, pt])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
