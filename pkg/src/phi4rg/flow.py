"""Second-order flow of the couplings ``(g_j, μ_j)`` and the critical search.

One step, with ``b_j`` from :mod:`phi4rg.covariance`::

    g_{j+1} = g_j - (n+8) b_j g_j² + r_g
    μ_{j+1} = L² μ_j (1 - (n+2) b_j g_j) + δ_j g_j + r_μ

``δ_j = (n+2) L^{2(j+1)} C_{j+1}(0)`` is the tadpole-type driving term, switched
by ``FlowConfig.driving``. ``μ_j = L^{2j} ν_j``; ``z`` is held at ``z₀``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import mpmath

from .covariance import MP_DPS, flow_coefficients
from .errors import ConvergenceError, CouplingTooLargeError, DomainError, NoBracketError

G_MAX = 0.1

COMPLETED = "completed"
ESCAPED_POSITIVE = "escaped-positive"
ESCAPED_NEGATIVE = "escaped-negative"
G_NONPOSITIVE = "g-nonpositive"


def default_j_max(m2: float, L: int) -> int:
    """``10·log_L(1/max(m, 1e-16))``, at least 8."""
    m = math.sqrt(m2) if m2 > 0 else 0.0
    return max(8, math.ceil(10 * math.log(1 / max(m, 1e-16)) / math.log(L)))


def mass_scale_index(m2: float, L: int) -> int:
    """Smallest ``j`` with ``L^{2j} m² ≥ 1``."""
    if not m2 > 0:
        raise DomainError("the mass scale needs m2 > 0")
    return max(0, math.ceil(-math.log(m2) / (2 * math.log(L)) - 1e-12))


@dataclass(frozen=True)
class Couplings:
    j: int
    g: float
    mu: float
    z: float = 0.0
    L: int = 2

    @property
    def nu(self):
        return self.mu / self.L ** (2 * self.j)


@dataclass(frozen=True)
class FlowConfig:
    """Parameters of one flow.

    ``precise=True`` runs in ``mpmath`` arithmetic with high-precision
    coefficients; needed when the critical point is wanted far below the
    float64 resolution of ``ν₀``.
    """

    n: int
    L: int
    m2: float
    g0: float
    z0: float = 0.0
    j_max: Optional[int] = None
    mu_esc: float = 1.0
    driving: bool = True
    r_g: Optional[Callable] = field(default=None, compare=False)
    r_mu: Optional[Callable] = field(default=None, compare=False)
    g_max: float = G_MAX
    precise: bool = False

    def __post_init__(self):
        if self.n < 0 or int(self.n) != self.n:
            raise DomainError("n must be a non-negative integer")
        if self.L < 2:
            raise DomainError("L must be >= 2")
        if self.m2 < 0:
            raise DomainError("m2 must be non-negative")
        if not 0 <= self.g0 <= self.g_max:
            raise DomainError(f"g0 must lie in [0, {self.g_max}]")
        if self.j_max is None:
            object.__setattr__(self, "j_max", default_j_max(self.m2, self.L))
        if self.j_max < 1:
            raise DomainError("j_max must be >= 1")
        if not self.mu_esc > 0:
            raise DomainError("escape threshold must be positive")

    def coefficients(self):
        return flow_coefficients(float(self.m2), self.L, self.j_max, self.precise)

    def num(self, x):
        return mpmath.mpf(x) if self.precise else float(x)

    def precision(self):
        """Context manager fixing the working precision of ``precise`` runs."""
        return mpmath.workdps(MP_DPS if self.precise else mpmath.mp.dps)


@dataclass
class FlowTrajectory:
    j: list
    g: list
    mu: list
    nu: list
    nuprime: list
    termination: str

    @property
    def last(self) -> int:
        return self.j[-1]

    def rows(self):
        return zip(self.j, self.g, self.mu, self.nu, self.nuprime)


def flow_step(state: Couplings, b_j, cfg: FlowConfig, c_next=0.0) -> Couplings:
    """Advance one scale. ``c_next = C_{j+1}(0)`` feeds the driving term."""
    n, L, g = cfg.n, cfg.L, state.g
    g1 = g - (n + 8) * b_j * g * g
    mu1 = L**2 * state.mu * (1 - (n + 2) * b_j * g)
    if cfg.driving:
        mu1 = mu1 + (n + 2) * L ** (2 * (state.j + 1)) * c_next * g
    if cfg.r_g is not None:
        g1 = g1 + cfg.r_g(state.j, state)
    if cfg.r_mu is not None:
        mu1 = mu1 + cfg.r_mu(state.j, state)
    return Couplings(state.j + 1, g1, mu1, state.z, L)


def run_flow(cfg: FlowConfig, nu0, *, escape: bool = True) -> FlowTrajectory:
    """Iterate :func:`flow_step` from ``(g₀, μ₀ = ν₀)``.

    Stops at ``j_max``, when ``|μ_j| > μ_esc`` (unless ``escape=False``), or
    when ``g_j ≤ 0``. The tangent ``ν'_j = ∂ν_j/∂ν₀`` is carried along.
    """
    with cfg.precision():
        return _run_flow(cfg, nu0, escape)


def _run_flow(cfg: FlowConfig, nu0, escape: bool) -> FlowTrajectory:
    b, c = cfg.coefficients()
    one = cfg.num(1)
    state = Couplings(0, cfg.num(cfg.g0), cfg.num(nu0), cfg.z0, cfg.L)
    tr = FlowTrajectory([0], [state.g], [state.mu], [state.nu], [one], COMPLETED)
    tangent = one
    for j in range(cfg.j_max):
        if escape and abs(state.mu) > cfg.mu_esc:
            tr.termination = ESCAPED_POSITIVE if state.mu > 0 else ESCAPED_NEGATIVE
            return tr
        tangent = tangent * (1 - (cfg.n + 2) * b[j] * state.g)
        state = flow_step(state, b[j], cfg, c[j])
        tr.j.append(state.j)
        tr.g.append(state.g)
        tr.mu.append(state.mu)
        tr.nu.append(state.nu)
        tr.nuprime.append(tangent)
        if state.g <= 0 and cfg.g0 > 0:
            tr.termination = G_NONPOSITIVE
            return tr
    if escape and abs(state.mu) > cfg.mu_esc:
        tr.termination = ESCAPED_POSITIVE if state.mu > 0 else ESCAPED_NEGATIVE
    return tr


def tangent_flow(trajectory: FlowTrajectory) -> list:
    """``ν'_j`` with ``ν'_0 = 1``, ``ν'_{j+1} = ν'_j (1 - (n+2) b_j g_j)``."""
    return list(trajectory.nuprime)


@dataclass
class CriticalPoint:
    m2: float
    g0: float
    nu0c: object
    width: float
    iterations: int
    escape_history: list
    monotone_escape: bool
    exact: bool = False
    config: Optional[FlowConfig] = None

    def as_dict(self) -> dict:
        return {
            "m2": self.m2, "g0": self.g0, "nu0c": float(self.nu0c), "nu0c_str": str(self.nu0c),
            "width": float(self.width), "iterations": self.iterations,
            "escape_history": self.escape_history, "monotone_escape": self.monotone_escape,
            "exact": self.exact,
        }


def _side(tr: FlowTrajectory) -> int:
    if tr.termination == ESCAPED_POSITIVE:
        return 1
    if tr.termination == ESCAPED_NEGATIVE:
        return -1
    if tr.termination == COMPLETED:
        return 0
    return 2


def find_critical_nu0(cfg: FlowConfig, tol: float | None = None, *, max_expand: int = 60,
                      max_iter: int = 400) -> CriticalPoint:
    """Bisection on the escape sign for the bounded trajectory.

    The bracket starts at ``±g₀`` (``±1`` for ``g₀ = 0``) and doubles until the
    ends escape with opposite signs. A trial point whose flow never escapes is
    returned as an exact critical point. ``escape_history`` records
    ``(width, escape scale of lo, escape scale of hi)`` per iteration.
    """
    with cfg.precision():
        return _bisect(cfg, tol, max_expand, max_iter)


def _bisect(cfg, tol, max_expand, max_iter) -> CriticalPoint:
    if tol is None:
        tol = 1e-12 * max(cfg.m2, 1e-300) if cfg.precise else 1e-14
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    h = cfg.num(cfg.g0 if cfg.g0 > 0 else 1.0)
    lo, hi = -h, h
    t_lo, t_hi = run_flow(cfg, lo), run_flow(cfg, hi)
    for _ in range(max_expand):
        s_lo, s_hi = _side(t_lo), _side(t_hi)
        if s_lo == 2 and s_hi == 2:
            raise CouplingTooLargeError("g_j became non-positive at both bracket ends")
        if s_lo == 0 or s_hi == 0:
            nu = lo if s_lo == 0 else hi
            return CriticalPoint(cfg.m2, cfg.g0, nu, 0.0, 0, [], True, True, cfg)
        if s_lo == -1 and s_hi == 1:
            break
        if s_lo != -1:
            lo, t_lo = 2 * lo, run_flow(cfg, 2 * lo)
        if s_hi != 1:
            hi, t_hi = 2 * hi, run_flow(cfg, 2 * hi)
    else:
        raise NoBracketError(f"no sign change within |nu0| <= {float(max(abs(lo), hi)):.3g}")

    history = [(float(hi - lo), t_lo.last, t_hi.last)]
    it = 0
    while hi - lo > tol:
        if it >= max_iter:
            raise ConvergenceError("bisection iteration cap reached", last=(lo + hi) / 2)
        mid = (lo + hi) / 2
        if mid == lo or mid == hi:
            break
        tm = run_flow(cfg, mid)
        s = _side(tm)
        it += 1
        if s == 0:
            return CriticalPoint(cfg.m2, cfg.g0, mid, 0.0, it, history, _monotone(history), True, cfg)
        if s == 2:
            raise CouplingTooLargeError(f"g_j became non-positive at nu0={float(mid):.17g}")
        if s < 0:
            lo, t_lo = mid, tm
        else:
            hi, t_hi = mid, tm
        history.append((float(hi - lo), t_lo.last, t_hi.last))
    return CriticalPoint(cfg.m2, cfg.g0, (lo + hi) / 2, float(hi - lo), it, history,
                         _monotone(history), False, cfg)


def _monotone(history) -> bool:
    lo = [h[1] for h in history]
    hi = [h[2] for h in history]
    return all(a <= b for a, b in zip(lo, lo[1:])) and all(a <= b for a, b in zip(hi, hi[1:]))


def linear_critical_nu0(cfg: FlowConfig):
    """Closed form of the critical point when ``r ≡ 0``.

    In ``ν`` units the recursion is affine, ``ν_{j+1} = a_j ν_j + e_j`` with
    ``a_j = 1 - (n+2) b_j g_j`` and ``e_j = (n+2) C_{j+1}(0) g_j``, so the
    bounded solution starts at ``-Σ_j e_j / Π_{i≤j} a_i``.
    """
    if cfg.r_g is not None or cfg.r_mu is not None:
        raise DomainError("closed form holds only without remainder hooks")
    b, c = cfg.coefficients()
    with cfg.precision():
        g, P, acc = cfg.num(cfg.g0), cfg.num(1), cfg.num(0)
        for j in range(cfg.j_max):
            P = P * (1 - (cfg.n + 2) * b[j] * g)
            if cfg.driving:
                acc = acc - (cfg.n + 2) * c[j] * g / P
            g = g - (cfg.n + 8) * b[j] * g * g
        return acc


def g_infinity(cfg: FlowConfig, nu0=None, *, rtol: float = 1e-16) -> float:
    """``lim_j g_j`` by the Cauchy test ``|g_{j+1} - g_j| < rtol·g_j``.

    With remainder hooks the state matters, so the flow is run from ``nu0``
    (the critical point when omitted) with escape disabled.
    """
    if not cfg.m2 > 0:
        raise DomainError("g_j has no positive limit at m2 = 0")
    if nu0 is None:
        nu0 = cfg.num(0) if (cfg.r_g is None and cfg.r_mu is None) else find_critical_nu0(cfg).nu0c
    tr = run_flow(cfg, nu0, escape=False)
    gs = tr.g
    for a, b in zip(gs, gs[1:]):
        if abs(b - a) < rtol * abs(a):
            return b
    raise ConvergenceError(f"g_j not Cauchy by j_max={cfg.j_max}", last=gs[-1])


def with_overrides(cfg: FlowConfig, **kw) -> FlowConfig:
    return replace(cfg, **kw)
