"""Independent cross-checks of the lattice and covariance layers.

Dense linear algebra for torus Green functions, the infinite-lattice Green
function from products of scaled Bessel functions, and a position-space sum
for the bubble.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .covariance import bubble, proper_time_nodes
from .errors import DomainError
from .lattice import TorusSpec, torus_green
from .mcmc import FieldConfig, McmcEstimate, mcmc_phi4, potential  # noqa: F401

DENSE_MAX_SITES = 8192
# beyond this argument e^{-x}I_k(x) comes from the large-x expansion
_ASYM_X = 2e4


def dense_green_check(torus: TorusSpec, m2: float) -> float:
    """Max deviation between a direct solve of ``(-Δ+m²)G = δ₀`` and the FFT
    Green function."""
    if not m2 > 0:
        raise DomainError("m2 must be positive")
    V = torus.volume
    if V > DENSE_MAX_SITES:
        raise DomainError(f"dense solve limited to {DENSE_MAX_SITES} sites")
    shape = (torus.side,) * torus.d
    idx = np.arange(V).reshape(shape)
    rows, cols, vals = [np.arange(V)], [np.arange(V)], [np.full(V, 2 * torus.d + m2)]
    for axis in range(torus.d):
        for step in (1, -1):
            rows.append(idx.ravel())
            cols.append(np.roll(idx, step, axis).ravel())
            vals.append(np.full(V, -1.0))
    A = scipy.sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(V, V)).tocsc()
    rhs = np.zeros(V)
    rhs[0] = 1.0
    if V <= 4096:
        sol = np.linalg.solve(A.toarray(), rhs)
    else:
        sol = scipy.sparse.linalg.spsolve(A, rhs)
    return float(np.max(np.abs(sol - torus_green(torus, m2).ravel())))


def scaled_bessel_i(k_max: int, x) -> np.ndarray:
    """``e^{-x} I_k(x)`` for ``k = 0..k_max``, shape ``(k_max+1,) + x.shape``.

    Miller's backward recurrence ``I_{k-1} = I_{k+1} + (2k/x) I_k`` normalised
    by ``I_0 + 2Σ_{k≥1} I_k = e^x``; the Hankel expansion for ``x > 2e4``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0):
        raise DomainError("x must be non-negative")
    out = np.zeros((k_max + 1,) + x.shape)
    zero = x == 0
    out[0, zero] = 1.0
    big = (x > max(_ASYM_X, 8.0 * k_max**2)) & ~zero
    mid = ~zero & ~big
    if np.any(mid):
        out[:, mid] = _miller(k_max, x[mid])
    if np.any(big):
        out[:, big] = _hankel(k_max, x[big])
    return out


def _miller(k_max: int, x: np.ndarray) -> np.ndarray:
    start = k_max + int(10 * math.sqrt(x.max())) + 20
    b_next = np.zeros_like(x)
    b = np.full_like(x, 1e-280)
    norm = np.zeros_like(x)
    keep = np.zeros((k_max + 1,) + x.shape)
    for k in range(start, 0, -1):
        b_prev = b_next + (2.0 * k / x) * b
        b_next, b = b, b_prev
        # b now holds the order k-1 value
        if k - 1 <= k_max:
            keep[k - 1] = b
        norm += 2 * b if k - 1 > 0 else b
        big = np.abs(b) > 1e250
        if np.any(big):
            for arr in (b, b_next, norm):
                arr[big] *= 1e-250
            keep[:, big] *= 1e-250
    return keep / norm


def _hankel(k_max: int, x: np.ndarray) -> np.ndarray:
    out = np.empty((k_max + 1,) + x.shape)
    for k in range(k_max + 1):
        mu = 4.0 * k * k
        term = np.ones_like(x)
        total = np.ones_like(x)
        for m in range(1, 40):
            term = -term * (mu - (2 * m - 1) ** 2) / (8.0 * m * x)
            total += term
            if np.all(np.abs(term) < 1e-17):
                break
        out[k] = total / np.sqrt(2 * np.pi * x)
    return out


def _green_nodes(m2: float, r2: float):
    if m2 > 0:
        return proper_time_nodes(0.0, math.inf, m2), 0.0
    upper = 1e6 * max(1.0, r2)
    return proper_time_nodes(0.0, upper), upper


def green_position(x, m2: float, d: int | None = None) -> float:
    """Infinite-lattice ``(-Δ+m²)^{-1}_{0x} = ∫_0^∞ e^{-um²} Π_i e^{-2u} I_{x_i}(2u) du``.

    For ``m² = 0`` the integral is cut at ``U = 10⁶·max(1, |x|²)`` and the rest
    is taken from the leading heat kernel ``(4πu)^{-d/2}``.
    """
    x = np.abs(np.atleast_1d(np.asarray(x, dtype=int)))
    d = len(x) if d is None else d
    if len(x) != d:
        raise DomainError("point dimension does not match d")
    if m2 < 0:
        raise DomainError("m2 must be non-negative")
    if m2 == 0 and d <= 2:
        raise DomainError("the massless Green function diverges in d <= 2")
    r2 = float(np.sum(x * x))
    (u, w), upper = _green_nodes(m2, r2)
    T = scaled_bessel_i(int(x.max()), 2 * u)
    integrand = np.exp(-u * m2) * np.prod(T[x], axis=0)
    val = math.fsum(w * integrand)
    if m2 == 0:
        val += (4 * math.pi) ** (-d / 2) * upper ** (1 - d / 2) / (d / 2 - 1)
    return val


def _orbit_size(t) -> int:
    """Number of points of ``Z^d`` with sorted absolute values ``t``."""
    d = len(t)
    perms = math.factorial(d)
    for _, grp in itertools.groupby(t):
        perms //= math.factorial(len(list(grp)))
    return perms * 2 ** sum(1 for a in t if a)


@dataclass
class BubbleCheck:
    m2: float
    R: int
    position_sum: float
    proper_time: float
    difference: float
    tail_bound: float
    tolerance: float
    conclusive: bool
    agree: bool

    def as_dict(self):
        return asdict(self)


def bubble_position_check(m2: float, R: int, *, rtol: float = 1e-6, d: int = 4) -> BubbleCheck:
    """``Σ_{|x|_∞≤R} G(x)²`` against the proper-time bubble.

    The tail beyond ``R`` is estimated from the outermost shell, assuming each
    further shell is smaller by ``e^{-2a}((R+2)/(R+1))^{d-1}`` with
    ``a = 2 asinh(m/2)`` the exact one-dimensional decay rate.
    """
    if not m2 > 0:
        raise DomainError("m2 must be positive")
    (u, w), _ = _green_nodes(m2, 0.0)
    T = scaled_bessel_i(R, 2 * u) * np.exp(-u * m2 / d)
    total, shell = [], []
    for t in itertools.combinations_with_replacement(range(R + 1), d):
        g = float(np.dot(w, np.prod(T[list(t)], axis=0)))
        c = _orbit_size(t) * g * g
        total.append(c)
        if t[-1] == R:
            shell.append(c)
    s = math.fsum(total)
    a = 2 * math.asinh(math.sqrt(m2) / 2)
    q = math.exp(-2 * a) * ((R + 2) / (R + 1)) ** (d - 1)
    tail = math.fsum(shell) * q / (1 - q) if q < 1 else math.inf
    B = bubble(m2).B
    tol = rtol * B
    diff = B - s
    return BubbleCheck(m2, R, s, B, diff, tail, tol, tail <= tol, abs(diff) <= tol + tail)


def decay_ratio(r1: int = 8, r2: int = 16, d: int = 4) -> dict:
    """``|x|²G(x; m²=0)`` along the first axis at two radii."""
    vals = {}
    for r in (r1, r2):
        x = np.zeros(d, dtype=int)
        x[0] = r
        vals[r] = r * r * green_position(x, 0.0)
    continuum = 1 / (4 * math.pi**2)
    return {"r1": r1, "r2": r2, "x2G_r1": vals[r1], "x2G_r2": vals[r2],
            "ratio": vals[r1] / vals[r2], "continuum": continuum}


def oracle_suite(*, sweeps: int = 100_000, seed: int = 12345) -> dict:
    """All cross-checks with pass/fail flags."""
    report = {}
    t0 = time.time()
    dev4 = dense_green_check(TorusSpec(2, 2, 4), 1.0)
    dev1 = dense_green_check(TorusSpec(2, 3, 1), 0.5)
    report["dense-green"] = {"passed": dev4 <= 1e-10 and dev1 <= 1e-12, "d4_side4_m2_1": dev4,
                             "d1_side8_m2_0.5": dev1}
    for m2, R in ((1.0, 10), (4.0, 6)):
        bc = bubble_position_check(m2, R)
        report[f"bubble-position-m2={m2:g}-R={R}"] = {"passed": bc.agree, **bc.as_dict()}
    est = mcmc_phi4(TorusSpec(2, 2, 4), 1, 0.0, 0.5, seed, sweeps)
    report["mcmc-free-field"] = {"passed": abs(est.mean - 2.0) <= 3 * est.stderr, "target": 2.0,
                                 **est.as_dict()}
    dr = decay_ratio()
    report["free-decay"] = {"passed": abs(dr["ratio"] - 1) <= 0.02, **dr}
    report["wall_time"] = time.time() - t0
    report["passed"] = all(v["passed"] for k, v in report.items() if isinstance(v, dict))
    return report
