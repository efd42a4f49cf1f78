"""Integrand families, their convex conjugates and parameter windows.

Every integrand is, at a fixed point ``x``, a finite sum of terms
``w_k * t**e_k * log(e + t)**g_k``.  That common form covers the double phase,
borderline double phase and both variable exponent models as well as the test
Orlicz functions, so derivatives and the Legendre transform are written once.

Conjugates are closed form for a single pure power and otherwise computed by a
safeguarded Newton iteration on ``log phi_t(exp(tau)) = log s``, which stays
well scaled across hundreds of orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import fields
from .fields import A_CONE, SUPER, Geometry, FieldEval, cone_ramp


# ---------------------------------------------------------------------------
# sums of power-log terms


def _softmax_combine(logs, vals):
    """Weighted average of ``vals`` with weights ``exp(logs)`` (rows)."""
    mx = np.max(logs, axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    w = np.exp(logs - mx)
    return np.sum(w * vals, axis=1) / np.sum(w, axis=1)


def _logsumexp(logs):
    mx = np.max(logs, axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(logs - safe[:, None]), axis=1))


class TermSum:
    """Pointwise integrand ``phi(t) = sum_k w_k t**e_k log(e+t)**g_k``.

    Parameters are arrays of shape ``(n, K)``; methods act elementwise on
    arrays of shape ``(n,)`` (or broadcastable scalars).
    """

    def __init__(self, w, e, g):
        self.w = np.atleast_2d(np.asarray(w, dtype=float))
        self.e = np.broadcast_to(np.atleast_2d(np.asarray(e, dtype=float)), self.w.shape)
        self.g = np.broadcast_to(np.atleast_2d(np.asarray(g, dtype=float)), self.w.shape)
        if np.any(self.w < 0):
            raise ValueError("term weights must be non-negative")

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def _t(self, t):
        return np.broadcast_to(np.asarray(t, dtype=float), (self.n,)).astype(float)

    def _parts(self, t):
        t = self._t(t)[:, None]
        L = np.log(math.e + t)
        u = 1.0 / (math.e + t)
        v = t * u / L
        return t, L, u, v

    def phi(self, t):
        t, L, _, _ = self._parts(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(self.w > 0, self.w * t**self.e * L**self.g, 0.0)
        return np.sum(np.where(t > 0, terms, 0.0), axis=1)

    def phi_t(self, t):
        t, L, u, v = self._parts(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = self.w * t ** (self.e - 1.0) * L**self.g * (self.e + self.g * v)
        terms = np.where(self.w > 0, terms, 0.0)
        return np.sum(terms, axis=1)

    def phi_tt(self, t):
        t, L, u, v = self._parts(t)
        e, g = self.e, self.g
        x = t * u
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = e * (e - 1.0) + 2.0 * e * g * v + g * (g - 1.0) * v * v - g * v * x
            terms = self.w * t ** (e - 2.0) * L**g * inner
        terms = np.where(self.w > 0, terms, 0.0)
        return np.sum(terms, axis=1)

    # log-space helpers for the conjugate -----------------------------------

    def _log_terms_t(self, tau):
        """Per-term log of ``phi_t`` and the elasticity ``t phi_tt / phi_t``."""
        t = np.exp(tau)[:, None]
        L = np.log(math.e + t)
        x = t / (math.e + t)
        v = x / L
        e, g = self.e, self.g
        fac = e + g * v
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.log(self.w) + (e - 1.0) * tau[:, None] + g * np.log(L) + np.log(fac)
            inner = e * (e - 1.0) + 2.0 * e * g * v + g * (g - 1.0) * v * v - g * v * x
            elast = inner / fac
        logs = np.where(self.w > 0, logs, -np.inf)
        return logs, elast

    def _log_phi(self, tau):
        t = np.exp(tau)[:, None]
        L = np.log(math.e + t)
        with np.errstate(divide="ignore"):
            logs = np.log(self.w) + self.e * tau[:, None] + self.g * np.log(L)
        logs = np.where(self.w > 0, logs, -np.inf)
        return _logsumexp(logs)

    def _single_power(self):
        active = self.w > 0
        one = np.sum(active, axis=1) == 1
        k = np.argmax(active, axis=1)
        rows = np.arange(self.n)
        pure = one & (self.g[rows, k] == 0.0)
        return pure, self.w[rows, k], self.e[rows, k]

    def argmax_t(self, s, tol: float = 1e-15, max_iter: int = 200):
        """Solve ``phi_t(T) = s`` for ``T`` (the maximizer in the conjugate)."""
        s = self._t(s)
        out = np.zeros(self.n)
        pos = s > 0
        if not pos.any():
            return out
        logs = np.log(s[pos])
        sub = TermSum(self.w[pos], self.e[pos], self.g[pos])
        pure, w0, e0 = sub._single_power()
        tau = np.empty(logs.size)
        tau[pure] = (logs[pure] - np.log(w0[pure] * e0[pure])) / (e0[pure] - 1.0)
        mix = ~pure
        if mix.any():
            tau[mix] = sub._solve(logs[mix], mix, tol, max_iter)
        out[pos] = np.exp(tau)
        return out

    def _solve(self, logs, rows, tol, max_iter):
        sub = TermSum(self.w[rows], self.e[rows], self.g[rows])

        def resid(tau):
            lt, el = sub._log_terms_t(tau)
            return _logsumexp(lt) - logs, _softmax_combine(lt, el)

        # initial guess from the fastest-growing term, then expand a bracket
        emax = np.max(np.where(sub.w > 0, sub.e, 1.0), axis=1)
        tau = logs / np.maximum(emax - 1.0, 0.05)
        lo = tau - 1.0
        hi = tau + 1.0
        step = 1.0
        for _ in range(80):
            rlo, _ = resid(lo)
            rhi, _ = resid(hi)
            bad_lo = ~(rlo < 0)
            bad_hi = ~(rhi > 0)
            if not (bad_lo.any() or bad_hi.any()):
                break
            step *= 2.0
            lo = np.where(bad_lo, lo - step, lo)
            hi = np.where(bad_hi, hi + step, hi)
        else:
            raise RuntimeError("conjugate root-find failed to bracket; is phi convex?")
        tau = np.clip(tau, lo, hi)
        act = np.arange(tau.size)
        for _ in range(max_iter):
            part = TermSum(sub.w[act], sub.e[act], sub.g[act])
            lt, el = part._log_terms_t(tau[act])
            r = _logsumexp(lt) - logs[act]
            el = _softmax_combine(lt, el)
            lo[act] = np.where(r < 0, tau[act], lo[act])
            hi[act] = np.where(r > 0, tau[act], hi[act])
            with np.errstate(divide="ignore", invalid="ignore"):
                new = tau[act] - r / el
            bisect = ~np.isfinite(new) | (new <= lo[act]) | (new >= hi[act])
            new = np.where(bisect, 0.5 * (lo[act] + hi[act]), new)
            done = (np.abs(new - tau[act]) <= tol * np.maximum(1.0, np.abs(tau[act]))) | (hi[act] - lo[act] <= tol)
            tau[act] = new
            act = act[~done]
            if act.size == 0:
                break
        return tau

    def phi_star(self, s):
        """Convex conjugate ``sup_t (s t - phi(t))``."""
        s = self._t(s)
        out = np.zeros(self.n)
        pos = s > 0
        if not pos.any():
            return out
        T = self.argmax_t(s)[pos]
        sub = TermSum(self.w[pos], self.e[pos], self.g[pos])
        tau = np.log(T)
        A = np.log(s[pos]) + tau
        B = sub._log_phi(tau)
        val = np.exp(A) * -np.expm1(np.minimum(B - A, 0.0))
        pure, w0, e0 = sub._single_power()
        if pure.any():
            # closed form: (w t^e)* = s T (1 - 1/e) with T = (s / (w e))**(1/(e-1))
            val[pure] = s[pos][pure] * T[pure] * (1.0 - 1.0 / e0[pure])
        out[pos] = val
        return out

    def log_phi(self, t):
        """``log phi(t)`` without overflow for huge ``t`` (``-inf`` where ``phi = 0``)."""
        t = self._t(t)
        out = np.full(self.n, -np.inf)
        pos = t > 0
        if pos.any():
            sub = TermSum(self.w[pos], self.e[pos], self.g[pos])
            out[pos] = sub._log_phi(np.log(t[pos]))
        return out

    def log_phi_star(self, s):
        """``log phi*(s)`` computed from the maximizer in log space."""
        s = self._t(s)
        out = np.full(self.n, -np.inf)
        pos = s > 0
        if not pos.any():
            return out
        T = self.argmax_t(s)[pos]
        sub = TermSum(self.w[pos], self.e[pos], self.g[pos])
        tau = np.log(T)
        A = np.log(s[pos]) + tau
        B = sub._log_phi(tau)
        with np.errstate(divide="ignore"):
            val = A + np.log(-np.expm1(np.minimum(B - A, 0.0)))
        pure, w0, e0 = sub._single_power()
        val[pure] = A[pure] + np.log(1.0 - 1.0 / e0[pure])
        out[pos] = val
        return out

    def biconjugate(self, t, span: float = 60.0, tol: float = 1e-10):
        """``sup_s (s t - phi*(s))`` by golden-section search over ``log s``."""
        t = self._t(t)
        gr = (math.sqrt(5.0) - 1.0) / 2.0
        # centre the search near the scale of the slope at t without using phi_t
        centre = np.log(np.maximum(self.phi(t), 1e-300) / np.maximum(t, 1e-300))
        a = centre - span
        b = centre + span

        def f(ls):
            s = np.exp(ls)
            return s * t - self.phi_star(s)

        c = b - gr * (b - a)
        d = a + gr * (b - a)
        fc, fd = f(c), f(d)
        while np.max(b - a) > tol:
            left = fc > fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            nc = b - gr * (b - a)
            nd = a + gr * (b - a)
            c_new = np.where(left, nc, d)
            d_new = np.where(left, c, nd)
            fc_new = np.where(left, f(nc), fd)
            fd_new = np.where(left, fc, f(nd))
            c, d, fc, fd = c_new, d_new, fc_new, fd_new
        return np.maximum(fc, fd)

    def is_convex(self, t_grid) -> bool:
        """Check ``phi_tt >= 0`` row-wise on the supplied grid."""
        for t in np.asarray(t_grid, dtype=float):
            if np.any(self.phi_tt(t) < -1e-12 * np.abs(self.phi_t(t)) / max(t, 1e-300)):
                return False
        return True


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class DoublePhase:
    p: float
    q: float
    alpha: float
    name = "double_phase"


@dataclass(frozen=True)
class Borderline:
    p0: float
    alpha: float
    beta: float
    kappa: float
    epsilon: float = 1.0
    name = "borderline"


@dataclass(frozen=True)
class PiecewiseVarExp:
    p_minus: float
    p_plus: float
    name = "piecewise_var_exp"


@dataclass(frozen=True)
class ContinuousVarExp:
    p0: float
    kappa: float
    name = "continuous_var_exp"


Family = Union[DoublePhase, Borderline, PiecewiseVarExp, ContinuousVarExp]
FAMILIES = {f.name: f for f in (DoublePhase, Borderline, PiecewiseVarExp, ContinuousVarExp)}


def sigma(t, kappa: float):
    """Log-log modulus ``kappa loglog(e^3 + 1/t) / log(e + 1/t)``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        inv = 1.0 / t
    return kappa * np.log(np.log(math.e**3 + inv)) / np.log(math.e + inv)


def sigma_threshold_radius(kappa: float, level: float) -> float:
    """Largest ``t`` such that ``sigma <= level`` on all of ``(0, t]``."""
    logt = np.linspace(-690.0, 0.0, 69001)
    sig = sigma(np.exp(logt), kappa)
    over = np.nonzero(sig > level)[0]
    if over.size == 0:
        return 1.0
    if over[0] == 0:
        raise ValueError("the variable exponent cutoff lies below double precision")
    return float(np.exp(logt[over[0] - 1]))


_CONVEXITY_GRID = np.geomspace(1e-8, 1e12, 400)


class Integrand:
    """An integrand family attached to a geometry.

    Parameters
    ----------
    family : DoublePhase, Borderline, PiecewiseVarExp or ContinuousVarExp
    geometry : Geometry
    m : int or None
        Generation of the distance surrogate used for the cone cutoffs.
    """

    def __init__(self, family: Family, geometry: Geometry, m: int | None = 12):
        self.family = family
        self.geometry = geometry
        self.fe = FieldEval(geometry, m)
        self.super = geometry.regime == SUPER
        if isinstance(family, Borderline):
            if not 0 < family.epsilon:
                raise ValueError("epsilon must be positive")
            base = TermSum([[1.0]], [[family.p0]], [[-family.beta]])
            extra = TermSum([[1.0]], [[family.p0]], [[family.alpha]])
            if not (base.is_convex(_CONVEXITY_GRID) and extra.is_convex(_CONVEXITY_GRID)):
                raise ValueError(
                    f"borderline integrand is not convex for p0={family.p0}, alpha={family.alpha}, beta={family.beta}"
                )
        if isinstance(family, ContinuousVarExp):
            t_star = sigma_threshold_radius(family.kappa, (family.p0 - 1.0) / 10.0)
            l4 = float(geometry.spec.table.length[4]) if geometry.spec is not None else 1.0 / 16.0
            self.xi_radius = min(l4, 0.5 * t_star)
        else:
            self.xi_radius = None

    # cutoffs --------------------------------------------------------------

    def _rho_a(self, s):
        r = cone_ramp(s, *A_CONE)[0]
        return 1.0 - r if self.super else r

    def xi(self, t, s):
        """Radial cutoff: 1 within ``R1`` of the contact set, 0 beyond ``2 R1``."""
        R = np.asarray(t) * np.sqrt(1.0 + np.asarray(s) ** 2)
        R1 = self.xi_radius
        return 1.0 - fields.ramp((R - R1) / R1)

    # local parameters -----------------------------------------------------

    def weight_st(self, t, s):
        f = self.family
        t = np.asarray(t, dtype=float)
        if isinstance(f, DoublePhase):
            return t**f.alpha * self._rho_a(s)
        if isinstance(f, Borderline):
            with np.errstate(divide="ignore"):
                a0 = np.log(math.e + 1.0 / t) ** (-f.kappa)
            return a0 * self._rho_a(s)
        raise TypeError("weight is defined for double phase families only")

    def exponent_st(self, t, s):
        f = self.family
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if isinstance(f, PiecewiseVarExp):
            low = s <= 1.0 if self.super else s >= 1.0
            return np.where(low, f.p_minus, f.p_plus)
        if isinstance(f, ContinuousVarExp):
            sg = sigma(t, f.kappa)
            ra = cone_ramp(s, *A_CONE)[0]
            pm, pp = f.p0 - sg, f.p0 + sg
            near = pm * ra + pp * (1 - ra) if self.super else pm * (1 - ra) + pp * ra
            xi = self.xi(t, s)
            return xi * near + (1 - xi) * f.p0
        raise TypeError("exponent is defined for variable exponent families only")

    def local_st(self, t, s) -> TermSum:
        """Pointwise integrand at regime coordinates ``(t, s)``."""
        f = self.family
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = np.broadcast_to(np.asarray(s, dtype=float), t.shape)
        if isinstance(f, DoublePhase):
            a = self.weight_st(t, s)
            w = np.column_stack([np.full(t.shape, 1.0 / f.p), a / f.q])
            return TermSum(w, [[f.p, f.q]], 0.0)
        if isinstance(f, Borderline):
            a = self.weight_st(t, s)
            w = np.column_stack([np.ones(t.shape), a / f.epsilon])
            return TermSum(w, [[f.p0, f.p0]], [[-f.beta, f.alpha]])
        p = self.exponent_st(t, s)
        return TermSum((1.0 / p)[:, None], p[:, None], 0.0)

    def _coords(self, x):
        c = self.fe.coords(x)
        return c.t, c.s

    def local(self, x) -> TermSum:
        return self.local_st(*self._coords(x))

    def weight_a(self, x):
        return self.weight_st(*self._coords(x))

    def exponent_p(self, x):
        return self.exponent_st(*self._coords(x))

    def phi(self, x, t):
        return self.local(x).phi(t)

    def phi_t(self, x, t):
        return self.local(x).phi_t(t)

    def phi_star(self, x, s):
        return self.local(x).phi_star(s)

    @property
    def p_low(self) -> float:
        """Exponent governing ``F`` on the support of ``grad u``."""
        f = self.family
        if isinstance(f, DoublePhase):
            return f.p
        if isinstance(f, PiecewiseVarExp):
            return f.p_minus
        return f.p0


@dataclass(frozen=True)
class TestOrlicz:
    """``Psi(t) = t**p0 log(e + t)**delta`` with numerically computed conjugate."""

    p0: float
    delta: float

    __test__ = False

    def _ts(self, n):
        return TermSum(np.ones((n, 1)), [[self.p0]], [[self.delta]])

    def psi(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self._ts(t.size).phi(t)

    def psi_star(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return self._ts(s.size).phi_star(s)

    def star_bound(self, s):
        """Model growth ``s**p0' log(e+s)**(delta/(1-p0))`` of the conjugate."""
        s = np.asarray(s, dtype=float)
        pp = self.p0 / (self.p0 - 1.0)
        return s**pp * np.log(math.e + s) ** (self.delta / (1.0 - self.p0))


# ---------------------------------------------------------------------------
# parameter windows


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    message: str


def _gt(name: str, label: str, lhs: float, rhs: float) -> Check:
    if lhs > rhs:
        return Check(name, True, f"{label}: {lhs:g} > {rhs:g}")
    return Check(name, False, f"{label} violated: {lhs:g} ≤ {rhs:g}")


def _lt(name: str, label: str, lhs: float, rhs: float) -> Check:
    if lhs < rhs:
        return Check(name, True, f"{label}: {lhs:g} < {rhs:g}")
    return Check(name, False, f"{label} violated: {lhs:g} ≥ {rhs:g}")


def _between(name: str, label: str, lo: float, val: float, hi: float) -> Check:
    ok = lo < val < hi
    msg = f"{label}: {lo:g} < {val:g} < {hi:g}"
    return Check(name, ok, msg if ok else f"{label} violated: {lo:g} < {val:g} < {hi:g} is false")


def _either(name: str, label: str, ok: bool, detail: str) -> Check:
    return Check(name, ok, f"{label}: {detail}" if ok else f"{label} violated: {detail}")


def window_checks(family: Family, d: int) -> list[Check]:
    """Parameter windows of each family, instantiated numerically."""
    f = family
    if isinstance(f, DoublePhase):
        rhs = f.p + f.alpha * max(1.0, (f.p - 1.0) / (d - 1.0))
        return [
            _gt("double_phase.p", "p > 1", f.p, 1.0),
            _either("double_phase.alpha", "α ≥ 0", f.alpha >= 0, f"α = {f.alpha:g}"),
            _gt("double_phase.q", "q > p+α·max{1,(p−1)/(d−1)}", f.q, rhs),
        ]
    if isinstance(f, Borderline):
        return [
            _gt("borderline.p", "p > 1", f.p0, 1.0),
            _either("borderline.kappa", "ϰ ≥ 0", f.kappa >= 0, f"ϰ = {f.kappa:g}"),
            _gt("borderline.sum", "α+β > p+ϰ", f.alpha + f.beta, f.p0 + f.kappa),
        ]
    if isinstance(f, PiecewiseVarExp):
        return [
            _gt("piecewise.p_minus", "p− > 1", f.p_minus, 1.0),
            _gt("piecewise.p_plus", "p+ > p−", f.p_plus, f.p_minus),
        ]
    if isinstance(f, ContinuousVarExp):
        return [
            _gt("continuous.p0", "p0 > 1", f.p0, 1.0),
            _gt("continuous.kappa", "ϰ > p0/2", f.kappa, f.p0 / 2.0),
        ]
    raise TypeError(f"unknown family {family!r}")


def instance_checks(family: Family, geometry: Geometry) -> list[Check]:
    """Windows on ``gamma * nu`` and the exponents for a concrete geometry."""
    f = family
    g = geometry
    p0, d, gn = g.p0, g.d, g.gamma_nu
    zero_dim = g.dim == 0.0
    out: list[Check] = []
    sup = g.regime == SUPER

    def low_exponent(name, p):
        if p < p0:
            return Check(name, True, f"p < p0: {p:g} < {p0:g}")
        if p > p0:
            return Check(name, False, f"p ≤ p0 violated: {p:g} > {p0:g}")
        if sup:
            return _gt(name, "γν(p0−1) > 1 at p = p0", gn * (p0 - 1.0), 1.0)
        return _lt(name, "γν < −1 at p = p0", gn, -1.0)

    if isinstance(f, DoublePhase):
        bound = p0 + f.alpha * ((p0 - 1.0) / (d - 1.0) if sup else 1.0)
        label = "q > p0+α(p0−1)/(d−1)" if sup else "q > p0+α"
        out.append(_gt("instance.q", label, f.q, bound))
        out.append(low_exponent("instance.p", f.p))
    elif isinstance(f, Borderline):
        out.append(_either("instance.p0", "model p0 = geometry p0", f.p0 == p0, f"{f.p0:g} vs {p0:g}"))
        if sup:
            out.append(_between("instance.gamma", "1−β < γν(p0−1) < α+1−p0−ϰ",
                                1.0 - f.beta, gn * (p0 - 1.0), f.alpha + 1.0 - p0 - f.kappa))
            if zero_dim:
                out.append(_gt("instance.alpha", "α+1 > p0+ϰ", f.alpha + 1.0, p0 + f.kappa))
        else:
            out.append(_between("instance.gamma", "ϰ−α+p0−1 < γν < β−1",
                                f.kappa - f.alpha + p0 - 1.0, gn, f.beta - 1.0))
            if zero_dim:
                out.append(_gt("instance.beta", "β > 1", f.beta, 1.0))
    elif isinstance(f, PiecewiseVarExp):
        if f.p_minus < p0:
            out.append(Check("instance.p_minus", True, f"p− < p0: {f.p_minus:g} < {p0:g}"))
        elif f.p_minus > p0:
            out.append(Check("instance.p_minus", False, f"p− ≤ p0 violated: {f.p_minus:g} > {p0:g}"))
        elif sup:
            out.append(_gt("instance.gamma", "γν > 1/(p0−1) at p− = p0", gn, 1.0 / (p0 - 1.0)))
        else:
            out.append(_lt("instance.gamma", "γν < −1 at p− = p0", gn, -1.0))
        out.append(_gt("instance.p_plus", "p+ > p0", f.p_plus, p0))
    elif isinstance(f, ContinuousVarExp):
        out.append(_either("instance.p0", "model p0 = geometry p0", f.p0 == p0, f"{f.p0:g} vs {p0:g}"))
        if sup and not zero_dim:
            out.append(_between("instance.gamma",
                                "(1−(1−D)ϰ)/(p0−1) < γν < −1+ϰ(d−1)/(p0−1)²",
                                (1.0 - (1.0 - g.dim) * f.kappa) / (p0 - 1.0), gn,
                                -1.0 + f.kappa * (d - 1.0) / (p0 - 1.0) ** 2))
        elif sup:
            out.append(_gt("instance.kappa", "ϰ > d−1", f.kappa, d - 1.0))
        else:
            out.append(_between("instance.gamma", "p0−1−ϰ < γν < ϰ−1",
                                p0 - 1.0 - f.kappa, gn, f.kappa - 1.0))
    if zero_dim and g.regime != fields.MATCHING:
        out.append(_gt("instance.meager", "γ > 0 for meager sets", g.gamma, 0.0))
    return out


def validate(family: Family, geometry: Geometry) -> list[Check]:
    return window_checks(family, geometry.d) + instance_checks(family, geometry)


# ---------------------------------------------------------------------------
# regularity of coefficients


def modulus_estimate(f, omega, d: int, levels=range(3, 11), pairs: int = 2000, seed: int = 0):
    """Largest ``|f(x) - f(y)| / omega(|x - y|)`` at dyadic separations.

    Returns one value per level ``j`` (separation ``2**-j``); a finite,
    non-growing sequence indicates the modulus ``omega`` is respected.
    """
    rng = np.random.default_rng(seed)
    out = []
    for j in levels:
        h = 2.0**-j
        x = rng.uniform(-1, 1, (pairs, d))
        v = rng.normal(size=(pairs, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        y = np.clip(x + h * v, -1, 1)
        dist = np.linalg.norm(x - y, axis=1)
        keep = dist > 0
        ratio = np.abs(f(x[keep]) - f(y[keep])) / omega(dist[keep])
        out.append(float(np.max(ratio)))
    return np.array(out)
