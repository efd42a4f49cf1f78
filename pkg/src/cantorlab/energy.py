"""Singular quadrature of the modulars ``F(eta u)`` and ``F*(s b)``.

Both integrands depend on a point only through the regime coordinates
``(t, s)``: the distance ``t`` to the plane (or axis) carrying the contact set
and the ratio ``s = dist / t``.  The layer-cake formula therefore reduces the
d-dimensional integral to

    sum_k  int_{shell k} w(t) dt  int g(t, delta / t) dV(delta)

where ``V`` is the exact volume of the ``delta``-neighbourhood of the Cantor
set and shells are dyadic in ``t``.  ``V`` is piecewise smooth with known
breakpoints, so every inner piece is integrated by Gauss-Legendre.  The
shell contributions ``c_k`` are then classified by their decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from . import cantor
from .fields import A_CONE, THETA_KINKS, MATCHING, SUB, SUPER, U_CONE, B_CONE, FieldEval, cone_ramp, theta_prime
from .models import Borderline, DoublePhase, Integrand, PiecewiseVarExp, TermSum, ContinuousVarExp, TestOrlicz

CONVERGENT = "Convergent"
DIVERGENT = "Divergent"
INCONCLUSIVE = "Inconclusive"


@lru_cache(maxsize=16)
def _gauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _gauss_nodes(a, b, n):
    """Nodes and weights on each interval ``[a_i, b_i]`` (flattened, with owner index)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = _gauss(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    wts = (half[:, None] * w).ravel()
    owner = np.repeat(np.arange(a.size), n)
    return nodes, wts, owner


# ---------------------------------------------------------------------------
# neighbourhood volumes


@dataclass(frozen=True)
class Volume:
    """Cross-sectional volume ``V(delta)`` of the neighbourhood of the contact set.

    ``kind`` is ``"cantor"`` (exact for the max-norm; ``scale = 1/sqrt(k)`` gives the
    lower Euclidean bracket) or ``"ball"`` for a point in ``R**dim``.
    """

    kind: str
    spec: cantor.CantorSpec | None = None
    dim: int = 1
    scale: float = 1.0

    def value(self, delta):
        delta = np.asarray(delta, dtype=float)
        if self.kind == "ball":
            v = _ball_volume(self.dim) * delta**self.dim
            return np.minimum(v, 2.0**self.dim)
        return cantor.neighborhood_volume(self.spec, None, delta * self.scale, norm="max", clip=True)

    def density(self, delta):
        delta = np.asarray(delta, dtype=float)
        if self.kind == "ball":
            v = _ball_volume(self.dim) * delta**self.dim
            return np.where(v < 2.0**self.dim, self.dim * _ball_volume(self.dim) * delta ** (self.dim - 1), 0.0)
        return cantor.neighborhood_density(self.spec, delta, None, clip=True, scale=self.scale)

    def breakpoints(self):
        if self.kind == "ball":
            return np.array([(2.0**self.dim / _ball_volume(self.dim)) ** (1.0 / self.dim)])
        return cantor.neighborhood_breakpoints(self.spec) / self.scale

    @property
    def floor(self) -> float:
        """Smallest ``delta`` where the length table still resolves the set."""
        if self.kind == "ball":
            return 0.0
        return float(self.spec.table.length[-1]) / self.scale


def _ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def _sphere_area(n: int) -> float:
    """Area of the unit sphere in ``R**(n+1)`` (``n = 0`` gives 2 points)."""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / math.gamma((n + 1) / 2.0)


def volumes_for(geometry) -> list[Volume]:
    """Volumes used by the layer cake: exact, or a ``[upper, lower]`` bracket."""
    if geometry.regime == MATCHING:
        return [Volume("ball", None, geometry.d - 1)]
    spec = geometry.spec
    if spec.power == 1:
        return [Volume("cantor", spec)]
    return [Volume("cantor", spec), Volume("cantor", spec, scale=1.0 / math.sqrt(spec.power))]


# ---------------------------------------------------------------------------
# shell integrals


@dataclass(frozen=True)
class ConeRegion:
    """Band ``s_lo <= s <= s_hi`` with interior kinks of the integrand in ``s``."""

    s_lo: float
    s_hi: float
    kinks: tuple = ()


def cross_section(g: Callable, vol: Volume, region: ConeRegion, t, order: int = 8,
                  floor_rel: float = 1e-7) -> np.ndarray:
    """Layer-cake value of ``int g(t, dist(xbar) / t) dxbar`` over the band, per ``t``.

    ``g(t, s)`` returns the log of the integrand.  For ``s_lo = 0`` the band is
    integrated down to ``floor_rel * s_hi * t`` and the remaining mass
    ``V(floor) g(t, 0)`` is added.
    """
    tn = np.atleast_1d(np.asarray(t, dtype=float))
    bp = vol.breakpoints()
    kinks = np.array(region.kinks, dtype=float)
    d_hi = region.s_hi * tn
    if region.s_lo == 0.0:
        d_lo = np.maximum(floor_rel * d_hi, vol.floor)
    else:
        d_lo = region.s_lo * tn
    lo_all, hi_all, own = [], [], []
    for i in range(tn.size):
        inner = bp[(bp > d_lo[i]) & (bp < d_hi[i])]
        kin = kinks * tn[i]
        pts = np.unique(np.concatenate([[d_lo[i], d_hi[i]], inner, kin[(kin > d_lo[i]) & (kin < d_hi[i])]]))
        lo_all.append(pts[:-1])
        hi_all.append(pts[1:])
        own.append(np.full(pts.size - 1, i))
    owner_piece = np.concatenate(own)
    dn, dw, piece = _gauss_nodes(np.concatenate(lo_all), np.concatenate(hi_all), order)
    ti = owner_piece[piece]
    tt = tn[ti]
    with np.errstate(divide="ignore"):
        vals = np.exp(g(tt, dn / tt) + np.log(vol.density(dn)) + np.log(dw))
    out = np.bincount(ti, weights=vals, minlength=tn.size)
    if region.s_lo == 0.0:
        # mass of the band below the floor, integrand frozen at s = 0
        out = out + vol.value(d_lo) * np.exp(g(tn, np.zeros_like(tn)))
    return out


def cone_shells(g: Callable, vol: Volume, region: ConeRegion, outer: Callable, k_start: int, k_stop: int,
                order: int = 8, floor_rel: float = 1e-7) -> np.ndarray:
    """Shell contributions ``c_k`` for ``k_start <= k < k_stop``.

    ``outer(t)`` is the measure of the directions transverse to the cross-section
    (2 for ``x_d``, sphere area for ``|xbar|``).  Each dyadic shell in ``t`` is
    split where a band edge meets a volume breakpoint, since the cross-section
    integral kinks there.
    """
    bp = vol.breakpoints()
    s_edges = np.array(sorted({region.s_lo, region.s_hi, *region.kinks} - {0.0}))
    t_all, tw_all, shell_of = [], [], []
    for k in range(k_start, k_stop):
        a, b = 2.0 ** (-k - 1), 2.0 ** (-k)
        cand = (bp[None, :] / s_edges[:, None]).ravel()
        splits = np.unique(np.concatenate([[a, b], cand[(cand > a) & (cand < b)]]))
        tn, tw, _ = _gauss_nodes(splits[:-1], splits[1:], order)
        t_all.append(tn)
        tw_all.append(tw)
        shell_of.append(np.full(tn.size, k - k_start))
    tn = np.concatenate(t_all)
    tw = np.concatenate(tw_all)
    shell_of = np.concatenate(shell_of)
    contrib = cross_section(g, vol, region, tn, order, floor_rel) * tw * outer(tn)
    return np.bincount(shell_of, weights=contrib, minlength=k_stop - k_start)


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class EnergyReport:
    """Shell-summed value with a convergence verdict.

    ``shells[k]`` is the contribution of ``2**-(k+1) <= t <= 2**-k``; ``tail`` the
    fitted remainder beyond the last shell; ``value`` includes the tail.
    """

    value: float
    shells: np.ndarray
    tail: float
    verdict: str
    rate: float = float("nan")
    log_power: float = float("nan")
    error: float = float("nan")
    reason: str = ""
    bracket: tuple = ()

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.shells)

    @property
    def partial(self) -> float:
        return float(np.sum(self.shells))


def _growth_gate(shells, n: int = 5, factor: float = 1.1, offset: float = 0.0) -> bool:
    S = offset + np.cumsum(shells)
    if S.size <= n:
        return False
    with np.errstate(divide="ignore", invalid="ignore"):
        grow = S[1:] >= factor * S[:-1]
    grow &= S[:-1] > 0
    run = 0
    for gflag in grow:
        run = run + 1 if gflag else 0
        if run >= n:
            return True
    return False


def classify(shells, tol: float = 0.05, power_tol: float = 0.25, min_shells: int = 200) -> EnergyReport:
    """Classify a sequence of shell contributions.

    The decision uses the log-log slope ``beta`` of ``c_k`` against ``k`` over
    the last half of the shells: ``beta < -1 - power_tol`` is summable,
    ``beta > -1 + power_tol`` is not.  Exponential decay or growth shows up as a
    steep slope of the matching sign, and slowly varying log factors do not
    bias it the way a joint ``(k, log k)`` fit does.  The tail beyond the last
    shell is the sum of the fitted power law, an overestimate whenever the
    decay steepens.  Convergent verdicts need the tail below ``tol`` times the
    value.  ``rate`` reports the exponential rate of a ``(k, log k)`` fit for
    information only.
    """
    c = np.asarray(shells, dtype=float)
    if not np.all(np.isfinite(c)):
        return EnergyReport(float("inf"), c, float("inf"), DIVERGENT, reason="non-finite shell")
    total = float(np.sum(c))
    if _growth_gate(c[c.size // 3:], offset=float(np.sum(c[: c.size // 3]))):
        return EnergyReport(float("inf"), c, float("inf"), DIVERGENT, reason="geometric growth of partial sums")
    K = c.size
    ks = np.arange(K) + 1.0
    sel = np.arange(K // 2, K)
    sel = sel[c[sel] > 0]
    if sel.size == 0 and K >= 8:
        return EnergyReport(total, c, 0.0, CONVERGENT, reason="vanishing tail")
    if K < min_shells or sel.size < 8:
        return EnergyReport(total, c, float("nan"), INCONCLUSIVE, reason="too few shells")
    y = np.log(c[sel])
    lk = np.log(ks[sel])
    beta, a0 = np.polyfit(lk, y, 1)
    resid = float(np.sqrt(np.mean((a0 + beta * lk - y) ** 2)))
    rate = _exp_rate(ks, c)
    if beta > -1.0 + power_tol:
        return EnergyReport(float("inf"), c, float("inf"), DIVERGENT, rate, beta, resid, "shells not summable")
    if beta >= -1.0 - power_tol:
        return EnergyReport(total, c, float("nan"), INCONCLUSIVE, rate, beta, resid, "borderline power law")
    # sum_{k>K} exp(a0) k^beta, bounded by the integral from K
    tail = float(math.exp(a0) * K ** (beta + 1.0) / (-beta - 1.0))
    value = total + tail
    if tail > tol * value:
        return EnergyReport(value, c, tail, INCONCLUSIVE, rate, beta, resid, "tail above tolerance")
    return EnergyReport(value, c, tail, CONVERGENT, rate, beta, resid, "fitted tail below tolerance")


def _exp_rate(ks, c) -> float:
    sel = np.arange(c.size // 3, c.size)
    sel = sel[c[sel] > 0]
    if sel.size < 8:
        return float("nan")
    A = np.column_stack([np.ones(sel.size), ks[sel], np.log(ks[sel])])
    coef, *_ = np.linalg.lstsq(A, np.log(c[sel]), rcond=None)
    return float(coef[1])


# ---------------------------------------------------------------------------
# modulars


def _max_shell(geometry, vol: Volume, margin: int = 24) -> int:
    if vol.kind == "ball":
        return 1000
    return int(-math.log2(vol.floor)) - margin


def _regime_pieces(integrand: Integrand, field_name: str, scale: float):
    """Integrand ``g(t, s)`` and its band for the requested modular."""
    geo = integrand.geometry
    if field_name == "grad_u":
        if geo.regime == SUPER:
            raise ValueError("super-regime gradient modular uses super_gradient_modular")
        tau1, tau2 = U_CONE
        w = tau2 - tau1
        kinks = [tau1 + w * 0.25, tau1 + w * 0.75]
        if isinstance(integrand.family, PiecewiseVarExp):
            kinks.append(1.0)
        region = ConeRegion(tau1, tau2, tuple(k for k in kinks if tau1 < k < tau2))

        def grad_norm(t, s):
            if geo.regime == SUB:
                _, dr = cone_ramp(s, tau1, tau2)
                return 0.5 * np.abs(dr) * np.sqrt(1.0 + s * s) / t
            tau = 1.0 / s
            r = s * t
            return 0.5 * theta_prime(tau) * np.sqrt(1.0 + tau * tau) / r

        def g(t, s):
            return integrand.local_st(t, s).log_phi(scale * grad_norm(t, s))

        return g, region
    if field_name == "b":
        if geo.regime == SUPER:
            region = ConeRegion(2.0, 4.0)

            def bval(t, s):
                return t ** (1.0 - geo.d)
        else:
            kinks = (1.0,) if isinstance(integrand.family, PiecewiseVarExp) else ()
            region = ConeRegion(0.0, B_CONE, tuple(k for k in kinks if 0 < k < B_CONE))

            def bval(t, s):
                if geo.regime == SUB:
                    return t ** (geo.dim + 1.0 - geo.d) * np.log(math.e + 1.0 / t) ** (-geo.gamma_nu)
                return t ** (1.0 - geo.d)

        def g(t, s):
            return integrand.local_st(t, s).log_phi_star(scale * bval(t, s))

        return g, region
    raise ValueError(f"unknown field {field_name!r}")


def _outer(geo):
    if geo.regime == SUPER:
        area = _sphere_area(geo.d - 2)
        return lambda t: area * t ** (geo.d - 2)
    return lambda t: np.full(np.shape(t), 2.0)


def modular(integrand: Integrand, field_name: str, scale: float = 1.0, tol: float = 0.05,
            k_max: int | None = None, order: int = 8, chunk: int = 100, g_override=None) -> EnergyReport:
    """Shell-summed ``F(scale * u)`` (``field_name="grad_u"``) or ``F*(scale * b)``.

    Shells are added in chunks until the verdict is decisive or ``k_max`` (by
    default the depth resolved by the length table) is reached.  With a
    bracketed cross-section (products in ``k > 1``) both brackets must agree.
    """
    geo = integrand.geometry
    if field_name == "grad_u" and geo.regime == SUPER:
        return super_gradient_modular(integrand, scale, tol=tol, k_max=k_max, order=order)
    g, region = _regime_pieces(integrand, field_name, scale)
    if g_override is not None:
        g = g_override
    reports = []
    for vol in volumes_for(geo):
        kcap = _max_shell(geo, vol) if k_max is None else min(k_max, _max_shell(geo, vol))
        shells = np.zeros(0)
        rep = None
        while shells.size < kcap:
            stop = min(shells.size + chunk, kcap)
            new = cone_shells(g, vol, region, _outer(geo), shells.size, stop, order)
            shells = np.concatenate([shells, new])
            rep = classify(shells, tol)
            if rep.verdict == DIVERGENT or rep.verdict == CONVERGENT:
                break
        reports.append(rep)
    rep = reports[0]
    if len(reports) > 1:
        verdicts = {r.verdict for r in reports}
        rep = replace(rep, bracket=(reports[1].value, reports[0].value))
        if len(verdicts) > 1:
            rep = replace(rep, verdict=INCONCLUSIVE, reason="bracket verdicts disagree")
    return rep


def super_gradient_modular(integrand: Integrand, scale: float = 1.0, tol: float = 0.05,
                           k_max: int | None = None, order: int = 8, chunk: int = 100) -> EnergyReport:
    """``F(scale * u)`` in the super-dimensional regime.

    At radius ``r`` the ``r``-neighbourhoods of the level-``M`` intervals do not
    interact once every gap of level ``<= M`` exceeds ``r``, and each carries an
    identical copy of the measure: the set built from ``l_{M+j} / l_M`` with
    mass ``2**-M``.  One copy is integrated in its own coordinates (where
    ``r / l_M`` is of order one, so nothing is lost to rounding near the
    endpoint) and the result multiplied by ``2**M``.
    """
    geo = integrand.geometry
    spec = geo.spec
    tab = spec.table
    log_area = math.log(_sphere_area(geo.d - 2))
    kcap = int(-math.log2(float(tab.length[-1]))) - 24
    if k_max is not None:
        kcap = min(kcap, k_max)
    shells = []
    rep = None
    evals = {}
    # the x_d integral kinks in r where a kernel breakpoint or a ramp edge of rho_a meets half a gap
    w = A_CONE[1] - A_CONE[0]
    s_marks = np.array([*THETA_KINKS, *(A_CONE[0] + w * np.array([0.0, 0.25, 0.75, 1.0]))])
    gaps = np.asarray(tab.gap[1:])
    cand = np.concatenate([gaps, (0.5 * gaps[:, None] / s_marks[None, :]).ravel()])
    for k in range(kcap):
        a, b = 2.0 ** (-k - 1), 2.0 ** (-k)
        splits = np.unique(np.concatenate([[a, b], cand[(cand > a) & (cand < b)]]))
        rn, rw, _ = _gauss_nodes(splits[:-1], splits[1:], order)
        logs = []
        for r, w in zip(rn, rw):
            M = min(int(cantor.gap_count(spec, 0.5 * r)), len(tab.length) - 1)
            lm = float(tab.length[M])
            if M not in evals:
                sub = replace(spec, shift=spec.shift + M)
                evals[M] = (FieldEval(replace(geo, spec=sub), None), sub)
            fe, sub = evals[M]
            rr = r / lm
            lo, hi = -0.5 - 0.5 * rr, 0.5 + 0.5 * rr
            panels = max(int(math.ceil((hi - lo) / (rr / 16.0))), 1)
            edges = np.linspace(lo, hi, panels + 1)
            xn, xw, _ = _gauss_nodes(edges[:-1], edges[1:], 4)
            pts = np.zeros((xn.size, geo.d))
            pts[:, 0] = rr
            pts[:, -1] = xn
            _, grad = fe.u_and_grad(pts)
            # back to physical coordinates: mass 2**-M, lengths scaled by l_M
            with np.errstate(divide="ignore"):
                log_gn = np.log(np.linalg.norm(grad, axis=1)) - M * math.log(2.0) - math.log(lm)
            dist = cantor.distance_1d(sub, xn, None)
            loc = integrand.local_st(np.full(xn.size, r), dist / rr)
            with np.errstate(divide="ignore"):
                terms = _log_phi_large(loc, scale, log_gn) + np.log(xw)
            top = np.max(terms)
            if not np.isfinite(top):
                continue
            lsum = top + math.log(np.sum(np.exp(terms - top)))
            logs.append(math.log(w) + log_area + (geo.d - 2) * math.log(r) + M * math.log(2.0) + math.log(lm) + lsum)
        shells.append(float(np.sum(np.exp(logs))) if logs else 0.0)
        if (k + 1) % chunk == 0 or k + 1 == kcap:
            rep = classify(np.array(shells), tol)
            if rep.verdict in (DIVERGENT, CONVERGENT):
                break
    return rep


def _log_phi_large(loc: TermSum, scale, log_t):
    """``log phi(scale e^{log_t})`` when the argument overflows a double."""
    tau = np.log(scale) + log_t
    out = np.full(tau.size, -np.inf)
    fin = np.isfinite(tau)
    if fin.any():
        sub = TermSum(loc.w[fin], loc.e[fin], loc.g[fin])
        out[fin] = sub._log_phi(tau[fin])
    return out


# ---------------------------------------------------------------------------
# assumption checks and certificates


@dataclass
class MC1Result:
    grad_u: EnergyReport
    b: EnergyReport

    @property
    def ok(self) -> bool:
        return self.grad_u.verdict == CONVERGENT and self.b.verdict == CONVERGENT

    @property
    def verdict(self) -> str:
        vs = {self.grad_u.verdict, self.b.verdict}
        if vs == {CONVERGENT}:
            return CONVERGENT
        if DIVERGENT in vs:
            return DIVERGENT
        return INCONCLUSIVE


def check_mc1(integrand: Integrand, tol: float = 0.05, **kw) -> MC1Result:
    return MC1Result(modular(integrand, "grad_u", 1.0, tol, **kw), modular(integrand, "b", 1.0, tol, **kw))


@dataclass
class Certificate:
    """Numbers ``(kappa, eta, s)`` with ``F(eta u) + F*(s b) < kappa eta s``."""

    kappa: float
    eta: float
    s: float
    F_u: float
    F_star_b: float
    epsilon: float | None = None
    recheck_slack: float | None = None
    history: list = field(default_factory=list)

    @property
    def slack(self) -> float:
        return self.kappa * self.eta * self.s - (self.F_u + self.F_star_b)

    @property
    def ratio(self) -> float:
        return (self.F_u + self.F_star_b) / (self.eta * self.s)


class CertificateFailure(RuntimeError):
    def __init__(self, best_ratio: float, history):
        super().__init__(f"no certificate within budget; best ratio {best_ratio:.4g}")
        self.best_ratio = best_ratio
        self.history = history


def _pair(integrand, eta, s, tol, order):
    fu = modular(integrand, "grad_u", eta, tol, order=order)
    fb = modular(integrand, "b", s, tol, order=order)
    return fu, fb


def _schedule_exponent(family) -> float:
    if isinstance(family, DoublePhase):
        return 0.5 * (family.p + family.q)
    if isinstance(family, PiecewiseVarExp):
        return 0.5 * (family.p_minus + family.p_plus)
    if isinstance(family, ContinuousVarExp):
        return family.p0
    raise TypeError("power schedule does not apply")


def find_certificate(integrand: Integrand, kappa: float, tol: float = 0.05, max_doublings: int = 80,
                     order: int = 8, stride: int = 8) -> tuple[Certificate, Integrand]:
    """Search the proof schedules for parameters satisfying the smallness condition.

    Power families double ``eta`` with ``s = eta**(p1 - 1)`` (visited ``stride``
    doublings at a time, then bisected back to the first success).  The borderline
    family fixes ``eta = 1``, halves ``sigma`` until ``int psi*(sigma b) / sigma``
    drops below ``kappa / 2``, then takes ``epsilon < kappa sigma / (2 F(u))`` and
    ``s = sigma / epsilon``.  The returned integrand carries the chosen
    ``epsilon``.  Every certificate is re-checked at doubled quadrature order.

    Raises
    ------
    CertificateFailure
        If the budget is exhausted; the best ratio is attached.
    """
    fam = integrand.family
    history = []
    if isinstance(fam, Borderline):
        cert, integ = _borderline_certificate(integrand, kappa, tol, max_doublings, order, history)
    else:
        p1 = _schedule_exponent(fam)
        cache = {}

        def attempt(j):
            # j-th doubling of the schedule, eta = 2**j
            if j not in cache:
                eta = 2.0**j
                s = eta ** (p1 - 1.0)
                fu, fb = _pair(integrand, eta, s, tol, order)
                ok = fu.verdict == CONVERGENT and fb.verdict == CONVERGENT
                ratio = (fu.value + fb.value) / (eta * s) if ok else math.inf
                cache[j] = (eta, s, fu.value, fb.value, ratio)
                history.append(cache[j])
            return cache[j][4] < kappa

        # gallop along the doublings, then bisect back to the first success;
        # the ratio decreases along the schedule, so this is the first doubling that works
        hit = None
        prev = -1
        for j in range(0, max_doublings, stride):
            if attempt(j):
                hit = j
                break
            prev = j
        if hit is None:
            raise CertificateFailure(min(h[4] for h in history), history)
        lo, hi = prev, hit
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if attempt(mid):
                hi = mid
            else:
                lo = mid
        eta, s, fuv, fbv, _ = cache[hi]
        cert = Certificate(kappa, eta, s, fuv, fbv, history=history)
        integ = integrand
    fu, fb = _pair(integ, cert.eta, cert.s, tol, 2 * order)
    cert.recheck_slack = cert.kappa * cert.eta * cert.s - (fu.value + fb.value)
    return cert, integ


def _borderline_certificate(integrand, kappa, tol, budget, order, history):
    fam = integrand.family
    geo = integrand.geometry
    fu = modular(integrand, "grad_u", 1.0, tol, order=order)
    if fu.verdict != CONVERGENT:
        raise CertificateFailure(math.inf, [("F(u)", fu.verdict)])
    c1 = fu.value
    def psi_star_integral(sig):
        def g(t, s):
            a = integrand.weight_st(t, s)
            ts = TermSum(np.atleast_1d(a)[:, None], [[fam.p0]], [[fam.alpha]])
            if geo.regime == SUB:
                bv = t ** (geo.dim + 1.0 - geo.d) * np.log(math.e + 1.0 / t) ** (-geo.gamma_nu)
            else:
                bv = t ** (1.0 - geo.d)
            return ts.log_phi_star(sig * bv)

        return modular(integrand, "b", 1.0, tol, order=order, g_override=g)

    sig = 1.0
    best = math.inf
    for _ in range(budget):
        rep = psi_star_integral(sig)
        val = rep.value / sig if rep.verdict == CONVERGENT else math.inf
        history.append((sig, val))
        best = min(best, val)
        if val < kappa / 2.0:
            break
        sig *= 0.5
    else:
        raise CertificateFailure(best, history)
    eps = min(0.5 * kappa * sig / (2.0 * c1), 0.5)
    new = Integrand(replace(fam, epsilon=eps), geo, integrand.fe.m)
    s = sig / eps
    fu2, fb2 = _pair(new, 1.0, s, tol, order)
    if fb2.verdict != CONVERGENT or fu2.value + fb2.value >= kappa * s:
        raise CertificateFailure((fu2.value + fb2.value) / s, history)
    cert = Certificate(kappa, 1.0, s, fu2.value, fb2.value, epsilon=eps, history=history)
    return cert, new


# ---------------------------------------------------------------------------
# Meyers-failure indicators


@dataclass
class TrendReport:
    """Sequence of indicator values with the fitted trend exponent."""

    x: np.ndarray
    values: np.ndarray
    slope: float
    predicted: float

    @property
    def decreasing(self) -> bool:
        return self.slope < 0

    @property
    def verdict(self) -> str:
        if abs(self.slope) < 0.05:
            return INCONCLUSIVE
        return "decreasing" if self.slope < 0 else "non-decreasing"


def meyers_sub(geometry, psi: TestOrlicz, ks=range(4, 15)) -> TrendReport:
    """``G(Psi, h) = |C_{h/2}| 4h Psi*(h^{D+1-d} log^{-gamma nu}(1/h))`` for ``h = 2**-k``.

    The trend is the slope of ``log G`` against ``log log(1/h)``; the
    asymptotic exponent is ``(gamma nu + delta) / (1 - p0)``.
    """
    if geometry.regime == SUPER:
        raise ValueError("use meyers_super in the super-dimensional regime")
    vol = volumes_for(geometry)[0]
    h = 2.0 ** -np.asarray(list(ks), dtype=float)
    arg = h ** (geometry.dim + 1.0 - geometry.d) * np.log(1.0 / h) ** (-geometry.gamma_nu)
    G = vol.value(h / 2.0) * 4.0 * h * psi.psi_star(arg)
    x = np.log(np.log(1.0 / h))
    slope = float(np.polyfit(x, np.log(G), 1)[0])
    pred = (geometry.gamma_nu + psi.delta) / (1.0 - geometry.p0)
    return TrendReport(h, G, slope, pred)


def meyers_super(geometry, psi: TestOrlicz, ms=range(4, 15), tube: float = 1.0) -> TrendReport:
    """Sum over the ``2**m`` tubes around level-``m`` intervals of ``Psi*(l_m^{1-d})``.

    Each tube is ``B^{d-1}(c l_m) x (I_{m,j} + [-c l_m, c l_m])``; the trend is the
    slope of ``log`` of the sum against ``log m``.
    """
    if geometry.regime != SUPER:
        raise ValueError("meyers_super needs the super-dimensional regime")
    ms = np.asarray(list(ms))
    logl = geometry.spec.table.log_length
    ms = ms[ms < logl.size]
    logl = logl[ms]
    d = geometry.d
    ts = TermSum(np.ones((ms.size, 1)), [[psi.p0]], [[psi.delta]])
    # log space: the meager lengths leave double range after a few generations
    logG = (ms * math.log(2.0) + math.log(_ball_volume(d - 1)) + (d - 1) * (math.log(tube) + logl)
            + logl + math.log(1.0 + 2.0 * tube) + ts.log_phi_star(np.exp((1.0 - d) * logl)))
    G = np.exp(logG)
    x = np.log(ms.astype(float))
    slope = float(np.polyfit(x, logG, 1)[0])
    pred = geometry.gamma * geometry.dim + psi.delta / (1.0 - geometry.p0)
    return TrendReport(ms.astype(float), G, slope, pred)


def write_shells_csv(report: EnergyReport, path) -> None:
    """Dump ``shell, contribution, partial_sum`` rows and the verdict fields."""
    with open(path, "w") as fh:
        fh.write("shell,contribution,partial_sum\n")
        for k, (c, S) in enumerate(zip(report.shells, report.partial_sums)):
            fh.write(f"{k},{c!r},{S!r}\n")
        fh.write(f"# verdict={report.verdict},value={report.value!r},tail={report.tail!r},"
                 f"rate={report.rate!r},log_power={report.log_power!r}\n")
