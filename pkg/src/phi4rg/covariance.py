"""Proper-time decomposition of ``(-Δ + m²)^{-1}`` on ``Z^4`` into scale slices.

The slice at scale ``j`` keeps heat-kernel times ``t_{j-1} < u ≤ t_j`` with
``t_0 = 0`` and ``t_j = c·L^{2j}`` (``c = 1/4`` by default)::

    Ĉ_j(k) = (e^{-t_{j-1}(λ+m²)} - e^{-t_j(λ+m²)}) / (λ + m²)

The window ``w_j = C_1 + ... + C_j`` has ``ŵ_j = (1 - e^{-t_j(λ+m²)})/(λ+m²)``
and ``Σ_x w_j(x)² = ∫_0^{2t_j} e^{-u m²} p_u(0) min(u, 2t_j - u) du``.
``b_j = ‖w_{j+1}‖² - ‖w_j‖²`` carries no ``n``; the flow multiplies by ``n+8``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

from .errors import DomainError
from .lattice import QuadratureScheme, TorusSpec, heat_kernel_diag, integrate_symbol, torus_symbol

SCHEDULE_PREFACTOR = 0.25
FOUR_PI2 = 16 * math.pi**2
MP_DPS = 34

_GL_X, _GL_W = np.polynomial.legendre.leggauss(30)
# massless scales beyond this proper time use the leading large-u heat kernel
_ASYMPTOTIC_T = 1e15
# e^{-u m²} below e^{-_CUTOFF} is dropped
_CUTOFF = 60.0


@dataclass(frozen=True)
class SliceSchedule:
    """Proper-time cuts ``t_0 = 0``, ``t_j = prefactor·L^{2j}``."""

    L: int
    prefactor: float = SCHEDULE_PREFACTOR

    def __post_init__(self):
        if self.L < 2:
            raise DomainError("scale base L must be >= 2")
        if not self.prefactor > 0:
            raise DomainError("schedule prefactor must be positive")

    def t(self, j: int) -> float:
        if j < 0:
            raise DomainError("scale index must be >= 0")
        if j == 0:
            return 0.0
        log_t = math.log(self.prefactor) + 2 * j * math.log(self.L)
        return math.inf if log_t > 700 else self.prefactor * float(self.L) ** (2 * j)

    def t_mp(self, j: int):
        if j == 0:
            return mpmath.mpf(0)
        return mpmath.mpf(self.prefactor) * mpmath.mpf(self.L) ** (2 * j)


@dataclass(frozen=True)
class CovarianceSlice:
    """Scale-``j`` slice ``C_j``; ``final=True`` sends the upper cut to infinity."""

    j: int
    m2: float
    schedule: SliceSchedule
    final: bool = False

    def __post_init__(self):
        if self.j < 1:
            raise DomainError("slices are indexed from j = 1")
        if self.m2 < 0:
            raise DomainError("m2 must be non-negative")
        if self.final and self.m2 == 0:
            raise DomainError("the final slice needs m2 > 0")

    @property
    def t_lo(self) -> float:
        return self.schedule.t(self.j - 1)

    @property
    def t_hi(self) -> float:
        return math.inf if self.final else self.schedule.t(self.j)

    def symbol(self, lam):
        a = np.asarray(lam, dtype=float) + self.m2
        upper = 0.0 if self.final else np.exp(-self.t_hi * a)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (np.exp(-self.t_lo * a) - upper) / a
        # λ + m² = 0 limit of the difference quotient
        return np.where(a == 0, self.t_hi - self.t_lo, out)


@dataclass(frozen=True)
class WindowFunction:
    """Partial sum ``w_j = C_1 + ... + C_j``."""

    j: int
    m2: float
    schedule: SliceSchedule

    def symbol(self, lam):
        a = np.asarray(lam, dtype=float) + self.m2
        t = self.schedule.t(self.j)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = -np.expm1(-t * a) / a
        return np.where(a == 0, t, out)


def tail_symbol(J: int, m2: float, schedule: SliceSchedule, lam):
    """Everything above the cut ``t_J``: ``e^{-t_J(λ+m²)}/(λ+m²)``."""
    a = np.asarray(lam, dtype=float) + m2
    return np.exp(-schedule.t(J) * a) / a


@dataclass(frozen=True)
class Bubble:
    m2: float
    B: float
    backend: str
    error: float = 0.0


# -- proper-time quadrature ----------------------------------------------------


def _pieces(a: float, b: float, decay: float, kinks=()) -> list[tuple[float, float]]:
    """Partition of ``[a, b]`` on which ``e^{-u·decay} p_u(0)`` is smooth at the
    scale of each piece."""
    if decay > 0:
        b = min(b, max(a, 0.0) + _CUTOFF / decay)
    if not b > a:
        return []
    pts = {a, b}
    pts.update(k for k in kinks if a < k < b)
    x = 1.0
    while x < b:
        if x > a:
            pts.add(x)
        x *= 2.0
    edges = sorted(pts)
    if decay > 0:
        hmax = 2.0 / decay
        refined = [edges[0]]
        for hi in edges[1:]:
            lo = refined[-1]
            steps = int(math.ceil((hi - lo) / hmax))
            refined.extend(lo + (hi - lo) * i / steps for i in range(1, steps))
            refined.append(hi)
        edges = refined
    return list(zip(edges[:-1], edges[1:]))


def _nodes(pieces):
    if not pieces:
        return np.empty(0), np.empty(0)
    lo = np.array([p[0] for p in pieces])[:, None]
    hi = np.array([p[1] for p in pieces])[:, None]
    half = 0.5 * (hi - lo)
    return (lo + half * (_GL_X + 1)).ravel(), (half * _GL_W).ravel()


def proper_time_nodes(a: float, b: float, decay: float = 0.0, kinks=()) -> tuple[np.ndarray, np.ndarray]:
    """Gauss–Legendre nodes and weights on ``[a, b]`` split at dyadic points,
    at ``kinks``, and (for ``decay > 0``) into pieces no longer than
    ``2/decay``, truncated where ``e^{-u·decay}`` drops below ``e^{-60}``."""
    return _nodes(_pieces(a, b, decay, kinks))


def proper_time_integral(kernel, a: float, b: float, m2: float = 0.0, *, kinks=(),
                         weight: str = "decay", d: int = 4) -> float:
    """``∫_a^b kernel(u) · ω(u) · p_u(0) du``.

    ``weight="decay"`` uses ``ω = e^{-u m²}``; ``weight="deficit"`` uses
    ``ω = 1 - e^{-u m²}`` (the massless-minus-massive difference, computed
    without cancellation).
    """
    decay = m2 if weight == "decay" else 0.0
    u, w = proper_time_nodes(a, b, decay, kinks)
    if len(u) == 0:
        return 0.0
    if weight == "decay":
        om = np.exp(-u * m2)
    elif weight == "deficit":
        om = -np.expm1(-u * m2)
    else:
        raise ValueError(f"unknown weight {weight!r}")
    return float(math.fsum(w * kernel(u) * om * heat_kernel_diag(u, d)))


def _rho(t: float):
    return lambda u: np.minimum(u, 2 * t - u)


def _beta_kernel(tj: float, tj1: float):
    def k(u):
        return np.where(u < 2 * tj, 2 * u - 2 * tj, np.where(u < tj1, u, 2 * tj1 - u))
    return k


# -- operations -----------------------------------------------------------------


def window_norm_sq(j: int, m2: float, L: int, *, backend: str = "proper-time",
                   level: int = 1, schedule: SliceSchedule | None = None) -> float:
    """``Σ_x w_j(x)²`` on ``Z^4``.

    ``backend="proper-time"`` evaluates the 1-D heat-kernel integral,
    ``backend="momentum"`` the Parseval integral ``(2π)^{-4}∫ ŵ_j(k)² dk``.
    """
    if m2 < 0:
        raise DomainError("m2 must be non-negative")
    schedule = schedule or SliceSchedule(L)
    t = schedule.t(j)
    if t == 0:
        return 0.0
    if backend == "proper-time":
        return proper_time_integral(_rho(t), 0.0, 2 * t, m2, kinks=(t,))
    if backend == "momentum":
        w = WindowFunction(j, m2, schedule)
        scale = max(math.sqrt(m2), 1 / math.sqrt(t))
        return integrate_symbol(lambda lam: w.symbol(lam) ** 2, QuadratureScheme(scale, level),
                                with_error=False).value
    raise ValueError(f"unknown backend {backend!r}")


def beta_coefficient(j: int, m2: float, L: int, *, schedule: SliceSchedule | None = None) -> float:
    """``b_j = ‖w_{j+1}‖² - ‖w_j‖²`` as one positive proper-time integral.

    ``j = 0`` gives ``‖w_1‖²`` (the empty window has norm zero).
    """
    if j < 0:
        raise DomainError("scale index must be >= 0")
    if m2 < 0:
        raise DomainError("m2 must be non-negative")
    schedule = schedule or SliceSchedule(L)
    tj, tj1 = schedule.t(j), schedule.t(j + 1)
    if m2 > 0 and tj * m2 > 2 * _CUTOFF:
        return 0.0
    if m2 == 0 and tj > _ASYMPTOTIC_T:
        # leading large-u heat kernel (4πu)^{-2}; corrections are O(1/t_j)
        return math.log(tj1 / tj) / FOUR_PI2 if math.isfinite(tj1) else 2 * math.log(L) / FOUR_PI2
    return proper_time_integral(_beta_kernel(tj, tj1), tj, 2 * tj1, m2, kinks=(2 * tj, tj1))


def beta_sequence(m2: float, L: int, j_max: int, *, j_min: int = 1) -> np.ndarray:
    """``[b_{j_min}, ..., b_{j_max}]``."""
    return np.array([beta_coefficient(j, m2, L) for j in range(j_min, j_max + 1)])


def slice_diagonal(j: int, m2: float, L: int, *, schedule: SliceSchedule | None = None) -> float:
    """``C_j(0)`` on ``Z^4``."""
    schedule = schedule or SliceSchedule(L)
    lo, hi = schedule.t(j - 1), schedule.t(j)
    if m2 > 0 and lo * m2 > 2 * _CUTOFF:
        return 0.0
    if m2 == 0 and lo > _ASYMPTOTIC_T:
        return (1 / lo - (1 / hi if math.isfinite(hi) else 0.0)) / FOUR_PI2
    return proper_time_integral(lambda u: np.ones_like(u), lo, hi, m2)


def bubble(m2: float, *, backend: str = "proper-time", level: int = 1) -> Bubble:
    """Bubble diagram ``B = Σ_x [(-Δ+m²)^{-1}_{0x}]²`` on ``Z^4``."""
    if not m2 > 0:
        raise DomainError("the bubble diverges logarithmically as m2 -> 0")
    if backend == "proper-time":
        return Bubble(m2, proper_time_integral(lambda u: u, 0.0, math.inf, m2), backend)
    if backend == "momentum":
        res = integrate_symbol(lambda lam: (lam + m2) ** -2.0, QuadratureScheme(math.sqrt(m2), level))
        return Bubble(m2, res.value, backend, res.error)
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class SumBetaReport:
    m2: float
    L: int
    j_max: int
    sum_b: float
    telescoped: float
    defect: float
    window_top: float
    bubble: float
    residual: float
    first_window: float


def sum_beta_identity(m2: float, L: int, j_max: int) -> SumBetaReport:
    """Check ``Σ_{j=1}^{j_max} b_j = ‖w_{j_max+1}‖² - ‖w_1‖²`` and the
    approach of ``‖w_{j_max+1}‖²`` to the bubble."""
    if not m2 > 0:
        raise DomainError("the bubble needs m2 > 0")
    bs = [beta_coefficient(j, m2, L) for j in range(1, j_max + 1)]
    sum_b = math.fsum(bs)
    w1 = window_norm_sq(1, m2, L)
    top = window_norm_sq(j_max + 1, m2, L) if j_max > 0 else w1
    tele = top - w1
    B = bubble(m2).B
    defect = abs(sum_b - tele) / abs(tele) if tele != 0 else abs(sum_b)
    return SumBetaReport(m2, L, j_max, sum_b, tele, defect, top, B, B - top, w1)


@dataclass(frozen=True)
class SlicePositionReport:
    j: int
    m2: float
    table: np.ndarray
    range_radius: float
    outside_ratio: float
    diagonal: float
    diagonal_ratio: float


def slice_position(torus: TorusSpec, j: int, m2: float, *, max_volume: int = 1 << 22) -> SlicePositionReport:
    """Real-space ``C_j(x)`` on the torus plus its decay report.

    ``outside_ratio`` is ``max |C_j(x)|`` over minimal-image sup-distance
    ``|x| > L^j/2`` divided by ``C_j(0)``; ``diagonal_ratio = C_j(0)·L^{2(j-1)}``.
    """
    if torus.side <= torus.L**j:
        raise DomainError("torus side must exceed L^j")
    if torus.volume > max_volume:
        raise DomainError(f"torus volume {torus.volume} exceeds {max_volume}")
    sl = CovarianceSlice(j, m2, SliceSchedule(torus.L))
    table = np.fft.ifftn(sl.symbol(torus_symbol(torus))).real
    dist = np.minimum(np.arange(torus.side), torus.side - np.arange(torus.side))
    sup = np.zeros(table.shape, dtype=int)
    for axis in range(torus.d):
        shape = [1] * torus.d
        shape[axis] = torus.side
        sup = np.maximum(sup, dist.reshape(shape))
    radius = 0.5 * torus.L**j
    c0 = table[(0,) * torus.d]
    outside = np.abs(table[sup > radius])
    ratio = float(outside.max() / c0) if outside.size else 0.0
    return SlicePositionReport(j, m2, table, radius, ratio, float(c0), float(c0 * torus.L ** (2 * (j - 1))))


# -- flow inputs ----------------------------------------------------------------


def _mp_heat(u):
    return (mpmath.besseli(0, 2 * u) * mpmath.exp(-2 * u)) ** 4


def _mp_pieces(a, b, kinks):
    pts = {a, b}
    pts.update(k for k in kinks if a < k < b)
    x = mpmath.mpf(1)
    while x < b:
        if x > a:
            pts.add(x)
        x *= 2
    edges = sorted(pts)
    return list(zip(edges[:-1], edges[1:]))


@lru_cache(maxsize=None)
def _massless_beta_mp(j: int, L: int, prefactor: float):
    s = SliceSchedule(L, prefactor)
    with mpmath.workdps(MP_DPS):
        tj, tj1 = s.t_mp(j), s.t_mp(j + 1)

        def f(u):
            if u < 2 * tj:
                k = 2 * u - 2 * tj
            elif u < tj1:
                k = u
            else:
                k = 2 * tj1 - u
            return k * _mp_heat(u)

        return mpmath.fsum(mpmath.quad(f, [lo, hi]) for lo, hi in _mp_pieces(tj, 2 * tj1, (2 * tj, tj1)))


@lru_cache(maxsize=None)
def _massless_diag_mp(j: int, L: int, prefactor: float):
    s = SliceSchedule(L, prefactor)
    with mpmath.workdps(MP_DPS):
        lo, hi = s.t_mp(j - 1), s.t_mp(j)
        return mpmath.fsum(mpmath.quad(_mp_heat, [a, b]) for a, b in _mp_pieces(lo, hi, ()))


def _precise_beta(j: int, m2: float, L: int):
    s = SliceSchedule(L)
    tj, tj1 = s.t(j), s.t(j + 1)
    if m2 == 0 or 2 * tj1 * m2 <= 1:
        base = _massless_beta_mp(j, L, s.prefactor)
        if m2 == 0:
            return base
        deficit = proper_time_integral(_beta_kernel(tj, tj1), tj, 2 * tj1, m2, kinks=(2 * tj, tj1),
                                       weight="deficit")
        return base - mpmath.mpf(deficit)
    return mpmath.mpf(beta_coefficient(j, m2, L))


def _precise_diag(j: int, m2: float, L: int):
    s = SliceSchedule(L)
    lo, hi = s.t(j - 1), s.t(j)
    if m2 == 0 or hi * m2 <= 1:
        base = _massless_diag_mp(j, L, s.prefactor)
        if m2 == 0:
            return base
        deficit = proper_time_integral(lambda u: np.ones_like(u), lo, hi, m2, weight="deficit")
        return base - mpmath.mpf(deficit)
    return mpmath.mpf(slice_diagonal(j, m2, L))


@lru_cache(maxsize=512)
def flow_coefficients(m2: float, L: int, j_max: int, precise: bool = False):
    """Per-step inputs of the coupling flow for steps ``j = 0 .. j_max-1``.

    Returns ``(b, c)`` with ``b[j] = b_j`` and ``c[j] = C_{j+1}(0)``.
    With ``precise=True`` the entries are ``mpmath.mpf``: the massless part is
    integrated at high precision once per ``L`` and the mass dependence is
    subtracted as a separately computed deficit, so that coefficient errors do
    not swamp ``ν(m²) - ν_c`` at tiny ``m²``.
    """
    if m2 < 0:
        raise DomainError("m2 must be non-negative")
    s = SliceSchedule(L)
    b, c = [], []
    for j in range(j_max):
        live = m2 == 0 or s.t(j) * m2 <= 2 * _CUTOFF
        if precise and live and (m2 > 0 or s.t(j + 1) <= _ASYMPTOTIC_T):
            b.append(_precise_beta(j, m2, L))
            c.append(_precise_diag(j + 1, m2, L))
        elif precise:
            b.append(mpmath.mpf(beta_coefficient(j, m2, L)))
            c.append(mpmath.mpf(slice_diagonal(j + 1, m2, L)))
        else:
            b.append(beta_coefficient(j, m2, L))
            c.append(slice_diagonal(j + 1, m2, L))
    return tuple(b), tuple(c)
