"""Generalized Cantor sets, their Cartesian powers and uniform pre-Cantor measures.

The set is built from a decreasing length sequence ``l_j`` starting from the
interval ``[-1/2, 1/2]``; every step removes the open middle part of each
interval so that two children of length ``l_{j+1}`` remain.  Two families are
supported:

* ``lambda_gamma``: ``l_j = lambda**j * j**gamma`` with ``0 < lambda < 1/2``
* ``meager``: ``l_j = exp(-2**(j/gamma))`` with ``gamma > 0`` (dimension zero)

Both are normalized by a shift ``l~_j = l_{j+j0} / l_{j0}`` so that ``l~_0 = 1``
and the nesting and gap conditions hold for every index.

Because the gaps shrink monotonically, the r-neighbourhood of the limit set has
the closed form ``2**M * (l_M + 2 r)`` where ``M`` counts the gaps wider than
``2 r``.  That formula drives the exact neighbourhood volumes and, through the
layer-cake principle, the singular quadrature in :mod:`cantorlab.energy`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, NamedTuple

import numpy as np

LAMBDA_GAMMA = "lambda_gamma"
MEAGER = "meager"
KINDS = (LAMBDA_GAMMA, MEAGER)

GENERATION_CAP = 24
# log of the smallest length kept in the tables; exp() of it is still normal
_LOG_FLOOR = -700.0
_TABLE_MAX = 4000


@dataclass(frozen=True)
class CantorSpec:
    """Defining data of a generalized Cantor set.

    Attributes
    ----------
    kind : str
        ``"lambda_gamma"`` or ``"meager"``.
    lam : float
        Ratio ``lambda`` in ``(0, 1/2)``; exactly 0 for the meager family.
    gamma : float
        Logarithmic correction exponent.
    power : int
        Cartesian power ``k``; the set lives in ``[-1/2, 1/2]**k``.
    shift : int
        Index normalization ``j0``.
    """

    kind: str
    lam: float
    gamma: float
    power: int = 1
    shift: int = 0

    def raw_log_length(self, j):
        """Logarithm of the un-normalized sequence (``l_0 = 1`` convention)."""
        j = np.asarray(j, dtype=float)
        if self.kind == MEAGER:
            with np.errstate(over="ignore"):
                return -np.exp2(j / self.gamma)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = j * math.log(self.lam) + self.gamma * np.log(np.where(j > 0, j, 1.0))
        return np.where(j > 0, out, 0.0)

    def raw_length(self, j):
        return np.exp(self.raw_log_length(j))

    def log_length(self, j):
        """Logarithm of the normalized lengths ``l~_j``."""
        j = np.asarray(j, dtype=float)
        return self.raw_log_length(j + self.shift) - self.raw_log_length(self.shift)

    def length(self, j):
        return np.exp(self.log_length(j))

    @property
    def table(self) -> "LengthTable":
        return _length_table(self)


class LengthTable(NamedTuple):
    """Precomputed normalized lengths and gaps.

    ``length[j]`` for ``j = 0..J`` and ``gap[j] = length[j-1] - 2 length[j]``
    for ``j = 1..J`` (``gap[0]`` is set to ``inf``).
    """

    log_length: np.ndarray
    length: np.ndarray
    gap: np.ndarray


@lru_cache(maxsize=64)
def _length_table(spec: CantorSpec) -> LengthTable:
    js = np.arange(_TABLE_MAX + 1)
    logs = spec.log_length(js)
    n = int(np.searchsorted(-logs, -_LOG_FLOOR)) if logs[-1] < _LOG_FLOOR else len(logs)
    n = max(n, 2)
    logs = logs[:n]
    lens = np.exp(logs)
    if spec.kind == LAMBDA_GAMMA:
        # direct products keep dyadic lengths exact (e.g. lambda = 1/4, gamma = 0)
        jj = js[:n] + spec.shift
        with np.errstate(over="ignore", under="ignore", divide="ignore"):
            raw = spec.lam ** jj.astype(float) * np.where(jj > 0, jj, 1).astype(float) ** spec.gamma
            j0 = spec.shift
            base = spec.lam**j0 * (float(j0) ** spec.gamma if j0 > 0 else 1.0)
            direct = raw / base
        good = np.isfinite(direct) & (direct > 1e-300)
        lens = np.where(good, direct, lens)
    gaps = np.empty(n)
    gaps[0] = np.inf
    gaps[1:] = lens[:-1] - 2.0 * lens[1:]
    logs.setflags(write=False)
    lens.setflags(write=False)
    gaps.setflags(write=False)
    return LengthTable(logs, lens, gaps)


def _ratio_conditions(spec: CantorSpec, i: np.ndarray):
    """Nesting and gap-monotonicity tests on raw ratios ``r_i = l_i / l_{i-1}``."""
    logr = spec.raw_log_length(i) - spec.raw_log_length(i - 1)
    logr_next = spec.raw_log_length(i + 1) - spec.raw_log_length(i)
    r, r1 = np.exp(logr), np.exp(logr_next)
    nested = r < 0.5
    gaps_shrink = 2.0 * r * r1 - 3.0 * r + 1.0 > 0.0
    return nested & gaps_shrink, r


def _tail_start(spec: CantorSpec) -> int:
    """First ratio index beyond which monotonicity of ``r_i`` settles both tests."""
    if spec.kind == LAMBDA_GAMMA and spec.gamma <= 0:
        # ratios increase towards lambda < 1/2
        return 2
    lam = 0.0 if spec.kind == MEAGER else spec.lam
    threshold = 1.0 / (3.0 - 2.0 * lam)
    # i = 1 is skipped: the convention l_0 = 1 breaks monotonicity of the ratios there
    for i in range(2, 100000):
        r = math.exp(float(spec.raw_log_length(i) - spec.raw_log_length(i - 1)))
        if r < threshold:
            return i
    raise ValueError("length sequence never settles; check lambda and gamma")


def minimal_shift(spec: CantorSpec) -> int:
    """Smallest ``j0`` for which the shifted sequence satisfies both conditions."""
    tail = _tail_start(spec)
    idx = np.arange(1, tail + 4)
    ok, _ = _ratio_conditions(spec, idx)
    bad = idx[~ok]
    return int(bad.max()) if bad.size else 0


def build_spec(kind: str, lam: float, gamma: float, power: int = 1) -> CantorSpec:
    """Validate parameters and return the normalized spec with minimal shift.

    Raises
    ------
    ValueError
        If ``lam`` lies outside ``[0, 1/2)``, if ``kind`` and ``lam`` disagree, or
        if a meager set is requested with ``gamma <= 0``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown Cantor kind {kind!r}")
    lam = float(lam)
    gamma = float(gamma)
    if not 0.0 <= lam < 0.5:
        raise ValueError(f"lambda must lie in [0, 1/2), got {lam}")
    if int(power) < 1:
        raise ValueError("power must be a positive integer")
    if kind == MEAGER:
        if lam != 0.0:
            raise ValueError("meager sets require lambda = 0")
        if gamma <= 0:
            raise ValueError("meager sets require gamma > 0")
    elif lam == 0.0:
        raise ValueError("lambda = 0 is reserved for the meager family")
    spec = CantorSpec(kind, lam, gamma, int(power), 0)
    j0 = minimal_shift(spec)
    return CantorSpec(kind, lam, gamma, int(power), j0)


def fractal_dimension(spec: CantorSpec) -> float:
    """Dimension ``-k log 2 / log lambda``; zero for meager sets."""
    if spec.kind == MEAGER:
        return 0.0
    return -spec.power * math.log(2.0) / math.log(spec.lam)


# ---------------------------------------------------------------------------
# generations


@dataclass(frozen=True)
class PreCantor:
    """Generation ``m`` of the one-dimensional construction.

    ``left`` holds the sorted left endpoints of the ``2**m`` closed intervals of
    length ``l_m``.  For ``power > 1`` the set is the Cartesian power of this
    one-dimensional set.
    """

    spec: CantorSpec
    m: int
    left: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return float(self.spec.table.length[self.m])

    @property
    def right(self) -> np.ndarray:
        return self.left + self.length

    @property
    def intervals(self) -> np.ndarray:
        return np.column_stack([self.left, self.right])

    @property
    def total_length(self) -> float:
        return float(2.0**self.m * self.length)


def _children(left: np.ndarray, l_parent: float, l_child: float) -> np.ndarray:
    out = np.empty(2 * left.size)
    out[0::2] = left
    out[1::2] = left + (l_parent - l_child)
    return out


def generation(spec: CantorSpec, m: int, cap: int = GENERATION_CAP) -> PreCantor:
    """Intervals of generation ``m`` (``2**m`` of them).

    Raises
    ------
    ValueError
        If ``m`` is negative or exceeds ``cap``; use :func:`iter_generation` for
        lazy enumeration beyond the cap.
    """
    if m < 0:
        raise ValueError("generation must be non-negative")
    if m > cap:
        raise ValueError(f"generation {m} exceeds the cap {cap}; use iter_generation")
    tab = spec.table
    if m >= len(tab.length):
        raise ValueError(f"generation {m} underflows double precision for this set")
    left = np.array([-0.5])
    for i in range(m):
        left = _children(left, tab.length[i], tab.length[i + 1])
    left.setflags(write=False)
    return PreCantor(spec, m, left)


def iter_generation(spec: CantorSpec, m: int, block: int = 16) -> Iterator[np.ndarray]:
    """Yield left endpoints of generation ``m`` in sorted blocks of ``2**block``."""
    tab = spec.table
    top = max(m - block, 0)
    roots = generation(spec, top, cap=max(top, GENERATION_CAP)).left
    for root in roots:
        left = np.array([root])
        for i in range(top, m):
            left = _children(left, tab.length[i], tab.length[i + 1])
        yield left


def write_intervals_csv(pre: PreCantor, path) -> None:
    """Dump intervals as CSV rows ``m, j, a, b`` (``j`` counted from 1)."""
    with open(path, "w") as fh:
        fh.write("m,j,a,b\n")
        for j, (a, b) in enumerate(pre.intervals, start=1):
            fh.write(f"{pre.m},{j},{float(a)!r},{float(b)!r}\n")


# ---------------------------------------------------------------------------
# descent through the construction tree


def _descend(spec: CantorSpec, x, m: int | None):
    """Walk each point down the tree.

    Returns the distance to the generation-``m`` set (limit set if ``m`` is
    None), the derivative of that distance in ``x`` (-1, 0 or +1) and the value
    of the corresponding cumulative distribution function.
    """
    tab = spec.table
    x = np.asarray(x, dtype=float)
    pos = x + 0.5
    dist = np.zeros_like(pos)
    slope = np.zeros_like(pos)
    cdf = np.zeros_like(pos)
    below = pos < 0
    above = pos > 1
    dist[below] = -pos[below]
    dist[above] = pos[above] - 1.0
    slope[below] = -1.0
    slope[above] = 1.0
    cdf[above] = 1.0
    active = ~(below | above)
    depth = len(tab.length) - 1 if m is None else min(m, len(tab.length) - 1)
    weight = 1.0
    for i in range(depth):
        if not active.any():
            break
        big, small = tab.length[i], tab.length[i + 1]
        weight *= 0.5
        in_gap = active & (pos > small) & (pos < big - small)
        to_left = pos[in_gap] - small
        to_right = big - small - pos[in_gap]
        dist[in_gap] = np.minimum(to_left, to_right)
        slope[in_gap] = np.where(to_left < to_right, 1.0, -1.0)
        right = active & (pos >= big - small)
        cdf[in_gap | right] += weight
        pos = np.where(right, pos - (big - small), pos)
        active &= ~in_gap
    if active.any():
        lm = tab.length[depth]
        frac = np.clip(pos[active] / lm, 0.0, 1.0) if lm > 0 else 0.5
        cdf[active] += weight * frac
    return dist, slope, cdf


def distance_1d(spec: CantorSpec, x, m: int | None = None):
    """Distance from points of the line to the generation-``m`` set (or limit set)."""
    return _descend(spec, x, m)[0]


def distance_slope_1d(spec: CantorSpec, x, m: int | None = None):
    """Distance and its derivative (``-1``, ``0`` or ``+1``) along the line."""
    dist, slope, _ = _descend(spec, x, m)
    return dist, slope


def cdf_1d(spec: CantorSpec, x, m: int | None = None):
    """Cumulative distribution of ``mu_m`` (or of the Cantor measure if ``m`` is None)."""
    return _descend(spec, x, m)[2]


def distance(spec: CantorSpec, m: int | None, xbar, norm: str = "euclid"):
    """Distance from ``xbar`` to the ``k``-fold product of the generation-``m`` set.

    Parameters
    ----------
    xbar : array_like
        Points of shape ``(..., k)``; for ``k = 1`` a plain array is accepted.
    m : int or None
        Generation; ``None`` selects the limit set.
    norm : {"euclid", "max"}
        The product structure makes both norms exact: coordinate distances
        combine in the chosen norm.
    """
    xbar = np.asarray(xbar, dtype=float)
    k = spec.power
    if k == 1 and (xbar.ndim == 0 or xbar.shape[-1] != 1):
        return distance_1d(spec, xbar, m)
    if xbar.shape[-1] != k:
        raise ValueError(f"expected trailing dimension {k}, got {xbar.shape}")
    d = distance_1d(spec, xbar, m)
    if norm == "max":
        return d.max(axis=-1)
    if norm == "euclid":
        return np.sqrt((d * d).sum(axis=-1))
    raise ValueError(f"unknown norm {norm!r}")


def distance_gradient(spec: CantorSpec, m: int | None, xbar):
    """Euclidean distance to the product set and its gradient, shape ``(n, k)``.

    The gradient is set to zero where the distance vanishes.
    """
    xbar = np.atleast_2d(np.asarray(xbar, dtype=float))
    d, sl = distance_slope_1d(spec, xbar, m)
    dist = np.sqrt((d * d).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = np.where(dist[:, None] > 0, d * sl / dist[:, None], 0.0)
    return dist, grad


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class CantorMeasure:
    """Uniform probability measure on generation ``m`` (``m=None``: Cantor measure).

    The ``k``-fold power is the product measure.
    """

    spec: CantorSpec
    m: int | None = None

    @property
    def density(self) -> float:
        if self.m is None:
            return math.inf
        return 1.0 / (2.0**self.m * float(self.spec.table.length[self.m]))

    def cdf(self, x):
        return cdf_1d(self.spec, x, self.m)

    def total_mass(self) -> float:
        return float(self.cdf(np.array(0.75)) - self.cdf(np.array(-0.75))) ** self.spec.power


def measure_box(measure: CantorMeasure, box) -> float:
    """Mass of an axis-aligned box given as ``[(lo_1, hi_1), ..., (lo_k, hi_k)]``."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    if box.shape[0] != measure.spec.power:
        raise ValueError("box dimension does not match the power of the set")
    lo = measure.cdf(box[:, 0])
    hi = measure.cdf(box[:, 1])
    return float(np.prod(np.clip(hi - lo, 0.0, 1.0)))


def measure_ball(measure: CantorMeasure, center, r: float):
    """Mass of a Euclidean ball.

    Exact for ``k = 1``.  For ``k > 1`` a ``(lower, upper)`` bracket from the
    inscribed and circumscribed cubes is returned.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    k = measure.spec.power
    if k == 1:
        c = float(center[0])
        return measure_box(measure, [(c - r, c + r)])
    outer = measure_box(measure, [(c - r, c + r) for c in center])
    h = r / math.sqrt(k)
    inner = measure_box(measure, [(c - h, c + h) for c in center])
    return inner, outer


def ball_mass_1d(measure: CantorMeasure, centers, r):
    """Vectorized one-dimensional ball masses ``mu([c - r, c + r])``."""
    centers = np.asarray(centers, dtype=float)
    return measure.cdf(centers + r) - measure.cdf(centers - r)


# ---------------------------------------------------------------------------
# neighbourhoods


def gap_count(spec: CantorSpec, r, m: int | None = None):
    """Number ``M`` of leading gaps wider than ``2 r`` (capped at ``m``)."""
    gaps = spec.table.gap[1:]
    r = np.asarray(r, dtype=float)
    # gaps are strictly decreasing; count those exceeding 2r
    count = np.searchsorted(-gaps, -2.0 * r, side="left")
    if m is not None:
        count = np.minimum(count, m)
    return count


def _nbhd_1d(spec: CantorSpec, r, m: int | None, clip: bool):
    tab = spec.table
    r = np.asarray(r, dtype=float)
    M = gap_count(spec, r, m)
    scale = np.exp2(M.astype(float))
    vol = scale * (tab.length[M] + 2.0 * r)
    dens = 2.0 * scale
    if clip:
        # every gap is covered once r >= 1/2, and then the clipped set is all of (-1, 1)
        over = r >= 0.5
        vol = np.where(over, 2.0, vol)
        dens = np.where(over, 0.0, dens)
    return vol, dens


def neighborhood_volume(spec: CantorSpec, m: int | None, r, norm: str = "max",
                        clip: bool = False):
    """Lebesgue volume of the closed ``r``-neighbourhood of the generation-``m`` set.

    Exact for the max-norm (and for every norm when ``k = 1``).  For the
    Euclidean norm with ``k > 1`` a ``(lower, upper)`` bracket is returned.  With
    ``clip=True`` the neighbourhood is intersected with ``(-1, 1)**k``.
    """
    k = spec.power
    if norm == "max" or k == 1:
        return _nbhd_1d(spec, r, m, clip)[0] ** k
    if norm != "euclid":
        raise ValueError(f"unknown norm {norm!r}")
    r = np.asarray(r, dtype=float)
    lower = _nbhd_1d(spec, r / math.sqrt(k), m, clip)[0] ** k
    upper = _nbhd_1d(spec, r, m, clip)[0] ** k
    return lower, upper


def neighborhood_density(spec: CantorSpec, r, m: int | None = None, clip: bool = True,
                         scale: float = 1.0):
    """Derivative in ``r`` of the max-norm neighbourhood volume of ``scale * r``.

    ``scale = 1/sqrt(k)`` gives the lower Euclidean bracket.
    """
    k = spec.power
    vol, dens = _nbhd_1d(spec, np.asarray(r, dtype=float) * scale, m, clip)
    return k * vol ** (k - 1) * dens * scale


def neighborhood_breakpoints(spec: CantorSpec, clip: bool = True) -> np.ndarray:
    """Radii where the neighbourhood volume has kinks (half gaps, box clipping)."""
    gaps = spec.table.gap[1:]
    pts = 0.5 * gaps[gaps > 0]
    if clip:
        pts = np.concatenate([pts, [0.5]])
    return np.unique(pts)


# ---------------------------------------------------------------------------
# box counting


class BoxCount(NamedTuple):
    dimension: float
    residual: float
    log_inv_eps: np.ndarray
    log_counts: np.ndarray
    ill_conditioned: bool


def box_counts(spec: CantorSpec, eps: float) -> int:
    """Number of grid cells of side ``eps`` (anchored at ``-1/2``) meeting the set."""
    tab = spec.table
    # intervals no longer than a cell touch only cells that contain endpoints
    M = int(np.argmax(tab.length <= eps)) if np.any(tab.length <= eps) else len(tab.length) - 1
    M = min(M, 26)
    total = 0
    last = None
    for left in iter_generation(spec, M, block=18):
        lo = np.floor((left + 0.5) / eps).astype(np.int64)
        hi = np.floor((left + tab.length[M] + 0.5) / eps).astype(np.int64)
        cnt = int(np.sum(hi - lo + 1))
        cnt -= int(np.sum(lo[1:] == hi[:-1]))
        if last is not None and lo[0] == last:
            cnt -= 1
        last = hi[-1]
        total += cnt
    return total


def boxcount_dimension(spec: CantorSpec, m_max: int = 12, eps_floor: float = 2.0**-40,
                       first: int = 2) -> BoxCount:
    """Box-counting estimate of the dimension of the one-dimensional factor.

    Dyadic scales ``2**-i`` run from ``2**-first`` down to ``max(l_{m_max},
    eps_floor)``; the slope of ``log N`` against ``log(1/eps)`` is fitted by least
    squares and multiplied by ``power``.  The fit is flagged ill-conditioned when
    fewer than four scales are available or the residual is large.
    """
    if m_max < 6:
        raise ValueError("m_max must be at least 6")
    tab = spec.table
    floor = max(float(tab.length[min(m_max, len(tab.length) - 1)]), eps_floor)
    last = int(math.floor(-math.log2(floor)))
    scales = np.arange(first, max(last, first) + 1)
    counts = np.array([box_counts(spec, 2.0**-i) for i in scales], dtype=float)
    x = scales * math.log(2.0)
    y = np.log(counts)
    if len(x) >= 2:
        slope, icpt = np.polyfit(x, y, 1)
        resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    else:
        slope, resid = float("nan"), float("nan")
    ill = len(x) < 4 or not np.isfinite(resid) or resid > 0.25
    return BoxCount(float(slope) * spec.power, resid, x, y, bool(ill))


def scaling_ratio_sup(spec: CantorSpec, m: int, samples: int = 200, seed: int = 0) -> float:
    """Largest observed ratio ``mu_m(B_r(x)) / (r**D log(e + 1/r)**(-gamma D))``.

    Centers are drawn uniformly from ``mu_m`` and radii log-uniformly in
    ``[l_m, 1]``; the same seed gives the same draws for every generation, so the
    supremum can be compared across ``m``.  Only the one-dimensional factor is
    sampled (the product case multiplies the bound).
    """
    if spec.kind != LAMBDA_GAMMA:
        raise ValueError("scaling law is stated for lambda > 0")
    rng = np.random.default_rng(seed)
    u = rng.random(samples)
    v = rng.random(samples)
    tab = spec.table
    mu = CantorMeasure(spec, m)
    # centers drawn from mu_m: pick an interval by u, a position inside by its fraction
    pre = generation(spec, m)
    n = pre.left.size
    idx = np.minimum((u * n).astype(np.int64), n - 1)
    centers = pre.left[idx] + (u * n - idx) * pre.length
    log_lm = float(tab.log_length[m])
    r = np.exp(log_lm * v)
    D = fractal_dimension(spec) / spec.power
    mass = ball_mass_1d(mu, centers, r)
    gauge = r**D * np.log(math.e + 1.0 / r) ** (-spec.gamma * D)
    return float(np.max(mass / gauge))


# ---------------------------------------------------------------------------
# convolution with piecewise polynomial kernels


def _central_moments(spec: CantorSpec, m: int | None, depth: int):
    """Second and fourth central moments of the normalized measure on a level-i interval."""
    tab = spec.table
    m2 = np.zeros(depth + 1)
    m4 = np.zeros(depth + 1)
    if m is not None:
        lm = tab.length[depth]
        m2[depth] = lm * lm / 12.0
        m4[depth] = lm**4 / 80.0
    for i in range(depth - 1, -1, -1):
        h = 0.5 * (tab.length[i] - tab.length[i + 1])
        h2 = h * h
        m2[i] = h2 + m2[i + 1]
        m4[i] = h2 * h2 + 6.0 * h2 * m2[i + 1] + m4[i + 1]
    return m2, m4


_GL3_X, _GL3_W = np.polynomial.legendre.leggauss(3)


def convolve_piecewise(spec: CantorSpec, m: int | None, x, edges, kernel, resolve: float = 1e-12):
    """Evaluate ``int K(x - y) dmu_m(y)`` for kernels polynomial between edges.

    Parameters
    ----------
    x : ndarray, shape (n,)
        Evaluation points.
    edges : ndarray, shape (n, B)
        Breakpoints in ``z = x - y``; ``K`` must be a polynomial of degree at most
        five in ``z`` between consecutive edges (and outside them).
    kernel : callable
        ``kernel(z, idx)`` returns values of shape ``(len(z), q)`` for offsets ``z``
        belonging to the points ``x[idx]``.

    Notes
    -----
    Tree intervals that do not straddle a breakpoint are integrated with a
    symmetric three-point rule matching the second and fourth moments of the
    measure on that interval, which is exact for quintics.  Straddling
    intervals are split; at generation ``m`` the uniform density is integrated
    piecewise with Gauss-Legendre.  The result is exact up to rounding.  For
    the limit measure (``m=None``) a straddling interval shorter than
    ``resolve`` times the largest breakpoint is not split further; this
    assumes ``K`` is continuous.
    """
    tab = spec.table
    x = np.asarray(x, dtype=float)
    edges = np.asarray(edges, dtype=float)
    n = x.size
    depth = len(tab.length) - 1 if m is None else m
    if depth >= len(tab.length):
        raise ValueError("generation underflows double precision for this set")
    m2, m4 = _central_moments(spec, m, depth)
    scale = np.max(np.abs(edges), axis=1) if edges.size else np.ones(n)
    out = None
    pt = np.arange(n)
    left = np.full(n, -0.5)

    def add(vals, idx, wts):
        nonlocal out
        if out is None:
            out = np.zeros((n, vals.shape[1]))
        np.add.at(out, idx, vals * wts[:, None])

    for i in range(depth + 1):
        if pt.size == 0:
            break
        L = tab.length[i]
        z_hi = x[pt] - left
        z_lo = z_hi - L
        e = edges[pt]
        straddle = np.any((e > z_lo[:, None]) & (e < z_hi[:, None]), axis=1)
        last = i == depth
        ok = ~straddle | (last & (m is None))
        if m is None:
            # continuous kernels: straddlers far below the kernel scale are resolved
            ok |= L < resolve * scale[pt]
        if ok.any():
            p_ok = pt[ok]
            c = left[ok] + 0.5 * L
            mass = 0.5**i
            if m2[i] > 0:
                a = math.sqrt(m4[i] / m2[i])
                w1 = m2[i] ** 2 / (2.0 * m4[i])
            else:
                a, w1 = 0.0, 0.0
            w0 = 1.0 - 2.0 * w1
            idx = np.concatenate([p_ok, p_ok, p_ok])
            z = np.concatenate([x[p_ok] - c, x[p_ok] - c - a, x[p_ok] - c + a])
            w = np.concatenate([np.full(p_ok.size, w0), np.full(2 * p_ok.size, w1)]) * mass
            add(kernel(z, idx), idx, w)
        pt, left = pt[~ok], left[~ok]
        if pt.size == 0:
            break
        if not last:
            shift = L - tab.length[i + 1]
            pt = np.concatenate([pt, pt])
            left = np.concatenate([left, left + shift])
            continue
        # generation m: uniform density on each interval, split at the breakpoints
        dens = 0.5**depth / L
        yb = np.clip(x[pt, None] - edges[pt], left[:, None], left[:, None] + L)
        yb = np.sort(np.column_stack([left, yb, left + L]), axis=1)
        lo, hi = yb[:, :-1], yb[:, 1:]
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        nodes = mid[:, :, None] + half[:, :, None] * _GL3_X
        wts = half[:, :, None] * _GL3_W * dens
        idx = np.broadcast_to(pt[:, None, None], nodes.shape).ravel()
        add(kernel(x[idx] - nodes.ravel(), idx), idx, wts.ravel())
        pt = pt[:0]
    if out is None:
        out = np.zeros((n, 1))
    return out


def measure_nodes(spec: CantorSpec, m: int | None, level: int):
    """Quadrature for ``int f dmu_m`` with three nodes per level-``level`` interval.

    On each interval the symmetric rule matches the mass and the second and
    fourth central moments of ``mu_m`` restricted to it, so the rule is exact
    for piecewise quintics and converges like ``l_level**6`` for smooth ``f``.
    Returns ``(nodes, weights)`` with weights summing to one.
    """
    tab = spec.table
    depth = len(tab.length) - 1 if m is None else m
    if not 0 <= level <= depth:
        raise ValueError("level must lie between 0 and the generation")
    m2, m4 = _central_moments(spec, m, depth)
    c = generation(spec, level).left + 0.5 * tab.length[level]
    if m2[level] > 0:
        a = math.sqrt(m4[level] / m2[level])
        w1 = m2[level] ** 2 / (2.0 * m4[level])
    else:
        a, w1 = 0.0, 0.0
    mass = 0.5**level
    nodes = np.concatenate([c - a, c, c + a])
    wts = np.concatenate([np.full(c.size, w1), np.full(c.size, 1.0 - 2.0 * w1), np.full(c.size, w1)]) * mass
    order = np.argsort(nodes, kind="stable")
    return nodes[order], wts[order]


def sample_measure(spec: CantorSpec, m: int | None, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from ``mu_m`` (the Cantor measure if ``m`` is None).

    Each point picks a random branch at every level of the tree and a uniform
    position in the final interval.  Returns shape ``(n,)`` for ``power = 1``
    and ``(n, power)`` otherwise.
    """
    tab = spec.table
    depth = min(len(tab.length) - 1, 60) if m is None else m
    shifts = tab.length[:depth] - tab.length[1 : depth + 1]
    k = spec.power
    bits = rng.integers(0, 2, size=(n * k, depth))
    x = -0.5 + bits @ shifts + rng.random(n * k) * tab.length[depth]
    return x if k == 1 else x.reshape(n, k)
