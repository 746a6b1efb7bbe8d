"""Critical asymptotics reconstructed from critical flows.

Along the critical line, ``χ = (1+z₀)/m²`` with ``ν = (ν₀ᶜ(m²) + m²)/(1+z₀)``
and ``dχ/dν = -(1+z₀)² ν'_∞ / m⁴``. A geometric ``m²`` grid therefore gives
``χ(ε)``, ``ε = ν - ν_c``, whose log corrections are read off by effective
exponents against ``ℓ = log ε⁻¹``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from .covariance import MP_DPS, flow_coefficients
from .errors import DomainError, FitError
from .flow import FlowConfig, find_critical_nu0, run_flow

# terminal fits use grid points with m² below this
TERMINAL_M2 = 1e-10


def period_grid(L: int, per_period: int = 4, m2_max: float = 1e-2, m2_min: float = 1e-16) -> np.ndarray:
    """Geometric ``m²`` grid, decreasing, with ``per_period`` points per factor
    ``L²`` (one RG period)."""
    if per_period < 1:
        raise DomainError("per_period must be >= 1")
    if not 0 < m2_min < m2_max:
        raise DomainError("need 0 < m2_min < m2_max")
    step = 2 * math.log(L) / per_period
    count = int(math.floor(math.log(m2_max / m2_min) / step + 1e-9)) + 1
    return m2_max * np.exp(-step * np.arange(count))


@dataclass(frozen=True)
class ChiPoint:
    m2: float
    nu0c: float
    nu: float
    eps: float
    chi: float
    dchidnu: float
    nuprime_inf: float
    eps_integrated: float = math.nan
    A_eff: float = math.nan
    gamma_eff: float = math.nan


@dataclass
class ChiCurve:
    n: int
    L: int
    g0: float
    z0: float
    points: list
    nu_c: float
    fit_residual: float
    route_defect: float
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    @property
    def gamma_theory(self) -> float:
        return 0.0 if self.g0 == 0 else (self.n + 2) / (self.n + 8)


def _critical_point(args):
    n, L, g0, z0, m2, driving, precise, mu_esc = args
    cfg = FlowConfig(n, L, m2, g0, z0, driving=driving, precise=precise, mu_esc=mu_esc)
    cp = find_critical_nu0(cfg)
    # the tangent does not depend on ν₀; run without escape to the frozen regime
    nup = run_flow(cfg, cp.nu0c, escape=False).nuprime[-1]
    return m2, cp.nu0c, nup


def _integrated_eps(m2s, f):
    """``∫_0^{m²} f`` along an increasing grid, ``f`` locally ``A·ℓ^p``."""
    with mpmath.workdps(MP_DPS):
        s = [mpmath.mpf(x) for x in m2s]
        ell = [-mpmath.log(x) for x in s]
        lf = [mpmath.log(x) for x in f]
        # below the grid: exponent from the two smallest points
        p0 = (lf[1] - lf[0]) / (mpmath.log(ell[1]) - mpmath.log(ell[0]))
        A0 = f[0] / ell[0] ** p0
        acc = A0 * mpmath.gammainc(p0 + 1, ell[0])
        out = [acc]
        for i in range(len(s) - 1):
            p = (lf[i + 1] - lf[i]) / (mpmath.log(ell[i + 1]) - mpmath.log(ell[i]))
            A = f[i] / ell[i] ** p
            acc = acc + A * mpmath.gammainc(p + 1, ell[i + 1], ell[i])
            out.append(acc)
        return out


def _fit_nu_c(m2s, nus):
    """``ν = ν_c + a·m² + b·m²·log m⁻²`` through the three smallest points;
    returns ``ν_c`` and the misfit at the fourth relative to its ``ε``."""
    with mpmath.workdps(MP_DPS):
        rows = [[1, s, s * -mpmath.log(s)] for s in map(mpmath.mpf, m2s[:3])]
        coef = mpmath.lu_solve(mpmath.matrix(rows), mpmath.matrix(nus[:3]))
        nu_c = coef[0]
        if len(m2s) > 3:
            s4 = mpmath.mpf(m2s[3])
            model = coef[0] + coef[1] * s4 + coef[2] * s4 * -mpmath.log(s4)
            resid = abs(nus[3] - model) / (nus[3] - nu_c)
        else:
            resid = mpmath.mpf(0)
        return nu_c, float(resid)


def chi_curve(n: int, L: int, g0: float, m2_grid, *, z0: float = 0.0, driving: bool = True,
              precise: bool = True, mu_esc: float = 1.0, workers: int = 1) -> ChiCurve:
    """Susceptibility along the critical line on a geometric ``m²`` grid.

    ``eps`` is the direct route ``ν(m²) - ν_c``; ``eps_integrated`` integrates
    ``dν/dm² = 1/((1+z₀)ν'_∞)`` from ``m² = 0``. ``route_defect`` is their
    largest relative difference.
    """
    m2s = sorted(float(x) for x in m2_grid)
    if len(m2s) < 4:
        raise DomainError("a curve needs >= 4 grid points")
    if any(x <= 0 for x in m2s):
        raise DomainError("grid values must be positive")
    jobs = [(n, L, g0, z0, m2, driving, precise, mu_esc) for m2 in m2s]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            res = list(ex.map(_critical_point, jobs))
    else:
        res = [_critical_point(j) for j in jobs]

    with mpmath.workdps(MP_DPS):
        zp = mpmath.mpf(1 + z0)
        nus = [(mpmath.mpf(nu0c) + mpmath.mpf(m2)) / zp for m2, nu0c, _ in res]
        nu_c, resid = _fit_nu_c(m2s, nus)
        f = [1 / (zp * mpmath.mpf(nup)) for _, _, nup in res]
        eps_b = _integrated_eps(m2s, f)
        pts = []
        defect = 0.0
        for (m2, nu0c, nup), nu, eb in zip(res, nus, eps_b):
            eps = nu - nu_c
            if not eps > 0:
                raise FitError(f"non-positive eps at m2={m2:.3g}; nu_c extrapolation failed")
            defect = max(defect, float(abs(eps - eb) / eps))
            chi = (1 + z0) / m2
            pts.append(ChiPoint(m2, float(nu0c), float(nu), float(eps), chi,
                                -(1 + z0) ** 2 * float(nup) / m2**2, float(nup), float(eb)))
    curve = ChiCurve(n, L, g0, z0, pts, float(nu_c), resid, defect,
                     {"driving": driving, "precise": precise, "mu_esc": mu_esc, "z0": z0})
    ex = effective_exponents(curve)
    curve.points = [ChiPoint(**{**p.__dict__, "A_eff": a, "gamma_eff": g})
                    for p, a, g in zip(curve.points, ex.A_eff, ex.gamma_adjacent)]
    return curve


def _stride(m2s, L: int) -> int:
    """Grid points per RG period when the grid is commensurate, else 1."""
    r = np.diff(np.log(m2s))
    if len(r) == 0 or not np.allclose(r, r[0], rtol=1e-6):
        return 1
    k = 2 * math.log(L) / abs(r[0])
    return int(round(k)) if abs(k - round(k)) < 1e-6 and round(k) >= 1 else 1


def log_extrapolate(ell, y, *, deg: int = 1, ell_min: float | None = None):
    """Fit ``y`` as a polynomial in ``1/ℓ`` and return ``(intercept, rms residual)``.

    Restricted to ``ℓ > ell_min`` when at least ``deg + 2`` points survive.
    """
    ell, y = np.asarray(ell, dtype=float), np.asarray(y, dtype=float)
    sel = np.ones(len(ell), dtype=bool) if ell_min is None else ell > ell_min
    if sel.sum() < deg + 2:
        sel = np.ones(len(ell), dtype=bool)
    if sel.sum() < deg + 1:
        raise FitError(f"need >= {deg + 1} points for a degree-{deg} fit")
    coef = np.polyfit(1 / ell[sel], y[sel], deg)
    resid = y[sel] - np.polyval(coef, 1 / ell[sel])
    return float(coef[-1]), float(np.sqrt(np.mean(resid**2)))


def _strided_exponent(ell, Y, k):
    """``Δ log Y / Δ log ℓ`` over ``k`` grid steps, at the geometric mean ``ℓ``."""
    ge = (np.log(Y[k:]) - np.log(Y[:-k])) / (np.log(ell[k:]) - np.log(ell[:-k]))
    return np.sqrt(ell[k:] * ell[:-k]), ge


def _terminal_exponent(ell, ge, ell_min):
    """Extrapolate an exponent sequence by fitting its inverse linearly in ``1/ℓ``.

    Near the Gaussian regime ``γ_eff ≈ γ·ℓ/(ℓ + ℓ₀)`` with ``ℓ₀ ∝ 1/g₀`` large,
    so ``1/γ_eff`` is linear in ``1/ℓ`` to leading order; higher degrees are
    ill-conditioned over the available range of ``ℓ``.
    """
    if np.all(np.abs(ge) < 1e-12):
        return 0.0, 0.0
    inv, resid = log_extrapolate(ell, 1 / ge, deg=1, ell_min=ell_min)
    return 1 / inv, resid


@dataclass
class EffectiveExponents:
    ell: np.ndarray
    A_eff: np.ndarray
    gamma_adjacent: np.ndarray
    ell_period: np.ndarray
    gamma_period: np.ndarray
    gamma_terminal: float
    fit_residual: float
    stride: int


def effective_exponents(curve: ChiCurve) -> EffectiveExponents:
    """Adjacent ``γ_eff = Δ log(χε)/Δ log ℓ``, ``ℓ = log ε⁻¹``, and a terminal
    estimate.

    Entry ``i`` of ``gamma_adjacent`` belongs to the interval between grid
    points ``i`` and ``i+1`` (ordered by increasing ``m²``); the last entry is
    NaN. The terminal value uses differences over one full RG period, which
    cancel the log-periodic ripple of the discrete flow, taken against
    ``log m⁻²`` (equal to ``log ε⁻¹`` up to ``O(log log)``, but without the
    slowly drifting offset ``log χε``) and extrapolated in ``1/log m⁻²`` over
    ``m² < TERMINAL_M2``.
    """
    if len(curve.points) < 4:
        raise DomainError("need >= 4 points")
    # order from large to small ε so ℓ increases
    pts = sorted(curve.points, key=lambda p: -p.m2)
    eps = np.array([p.eps for p in pts])
    chie = np.array([p.chi * p.eps for p in pts])
    ell = np.log(1 / eps)
    if np.any(np.diff(chie) < -1e-12 * chie[:-1]):
        raise FitError("chi*eps is not monotone along the curve")
    gam = curve.gamma_theory
    A = chie / ell**gam
    _, adj = _strided_exponent(ell, chie, 1)
    m2 = np.array([p.m2 for p in pts])
    k = _stride(m2, curve.L)
    lk, gk = _strided_exponent(np.log(1 / m2), chie, k)
    term, resid = _terminal_exponent(lk, gk, math.log(1 / TERMINAL_M2))
    # back to increasing-m² order to match curve.points
    A_out = A[::-1]
    adj_out = np.append(adj[::-1], np.nan)
    return EffectiveExponents(ell[::-1], A_out, adj_out, lk, gk, term, resid, k)


@dataclass
class CorrelationScaling:
    p: float
    log_exponent: float
    s_p: np.ndarray
    s_m: np.ndarray
    s_m_A: np.ndarray
    A: float
    max_spread: float


def correlation_length_scaling(p: float, curve: ChiCurve, *, decades: float = 4.0) -> CorrelationScaling:
    """``s_p(ε) = [ε^{-p/2} (log ε⁻¹)^{p(n+2)/(2n+16)}]^{1/p}`` along the curve.

    ``s_m = s_p·m`` and ``s_m_A = s_p·m·A^{1/2}`` with ``A`` the terminal
    amplitude; ``max_spread`` is the relative spread of ``s_m_A`` over the
    last ``decades`` decades of ``ε``. The free field has no log correction.
    """
    if not p > 0:
        raise DomainError("order p must be positive")
    n = curve.n
    expo = 0.0 if curve.g0 == 0 else p * (n + 2) / (2 * n + 16)
    eps = curve.column("eps")
    m = np.sqrt(curve.column("m2"))
    ell = np.log(1 / eps)
    s_p = (eps ** (-p / 2) * ell**expo) ** (1 / p)
    s_m = s_p * m
    A_eff = curve.column("chi") * eps / ell**curve.gamma_theory
    A, _ = log_extrapolate(ell, A_eff, ell_min=math.log(1 / TERMINAL_M2))
    s_m_A = s_m * math.sqrt(A)
    tail = eps <= eps.min() * 10**decades
    spread = float(s_m_A[tail].max() / s_m_A[tail].min() - 1)
    return CorrelationScaling(p, expo, s_p, s_m, s_m_A, A, spread)


@dataclass
class SpecificHeat:
    n: int
    m2: np.ndarray
    eps: np.ndarray
    cH: np.ndarray
    exponent_eff: np.ndarray
    exponent_terminal: float
    ell_increments: np.ndarray
    increments: np.ndarray
    loglog_ratio: np.ndarray
    loglog_drift: float
    curve: ChiCurve | None = None


def specific_heat_value(n: int, L: int, g0: float, m2: float, *, precise: bool = False) -> float:
    """``c_H = Σ_{j≥1} b_j (ν'_j)²`` along the flow at ``m²``."""
    cfg = FlowConfig(n, L, m2, g0, precise=precise)
    b, _ = flow_coefficients(float(m2), L, cfg.j_max, precise)
    with cfg.precision():
        g, P, s = cfg.num(g0), cfg.num(1), cfg.num(0)
        for j in range(cfg.j_max):
            if j >= 1:
                s += b[j] * P * P
            P = P * (1 - (n + 2) * b[j] * g)
            g = g - (n + 8) * b[j] * g * g
        return float(s)


def specific_heat_proxy(n: int, L: int, g0: float, m2_grid, *, curve: ChiCurve | None = None,
                        **chi_kw) -> SpecificHeat:
    """Specific-heat proxy and its effective exponent against ``ℓ = log ε⁻¹``.

    ``exponent_eff`` is the adjacent ``Δ log c_H / Δ log ℓ``. The terminal
    value targets the singular part: the per-period increments
    ``Δc_H/Δℓ ∼ ℓ^{q}`` (``ℓ = log m⁻²`` as in :func:`effective_exponents`)
    are extrapolated like ``γ_eff`` and reported as ``1 + q``.
    ``loglog_drift`` is the change of ``log(c_H/log log ε⁻¹)`` per decade of
    ``ε`` over the last period.
    """
    if n < 1:
        raise DomainError("the specific-heat regimes are stated for n >= 1")
    if curve is None:
        curve = chi_curve(n, L, g0, m2_grid, **chi_kw)
    pts = sorted(curve.points, key=lambda p: -p.m2)
    m2 = np.array([p.m2 for p in pts])
    eps = np.array([p.eps for p in pts])
    cH = np.array([specific_heat_value(n, L, g0, x) for x in m2])
    ell = np.log(1 / eps)
    _, adj = _strided_exponent(ell, cH, 1)
    k = _stride(m2, L)
    ell_m = np.log(1 / m2)
    d = (cH[k:] - cH[:-k]) / (ell_m[k:] - ell_m[:-k])
    lm = 0.5 * (ell_m[k:] + ell_m[:-k])
    if np.all(d > 0):
        l2, q = _strided_exponent(lm, d, k)
        q_term, _ = _terminal_exponent(l2, q, math.log(1 / TERMINAL_M2))
        term = 1 + q_term
    else:
        term = math.nan
    ratio = cH / np.log(ell)
    drift = float(abs(np.log(ratio[-1] / ratio[-1 - k])) / (np.log10(eps[-1 - k] / eps[-1])))
    return SpecificHeat(n, m2, eps, cH, np.append(adj, np.nan), term, lm, d, ratio, drift, curve)


@dataclass(frozen=True)
class ExponentTable:
    n: int
    gamma_log: Fraction
    xi_log: Fraction
    cH_exponent: Fraction | None
    cH_regime: str

    def as_dict(self) -> dict:
        f = lambda x: None if x is None else {"value": float(x), "exact": str(x)}
        return {"n": self.n, "gamma_log": f(self.gamma_log), "xi_log": f(self.xi_log),
                "cH_exponent": f(self.cH_exponent), "cH_regime": self.cH_regime}


def theory_exponents(n: int) -> ExponentTable:
    """Closed-form log-correction exponents for ``n`` components."""
    if n < 0 or int(n) != n:
        raise DomainError("n must be a non-negative integer")
    g = Fraction(n + 2, n + 8)
    if n <= 3:
        cH, regime = Fraction(4 - n, n + 8), "power"
    elif n == 4:
        cH, regime = None, "loglog"
    else:
        cH, regime = None, "bounded"
    return ExponentTable(n, g, Fraction(n + 2, 2 * n + 16), cH, regime)
