"""Nearest-neighbour lattice substrate.

Conventions: ``-Δ`` has the Fourier symbol ``λ(k) = Σ_i 4 sin²(k_i/2)`` and
momentum integrals are normalised as ``(2π)^{-d} ∫_{[-π,π]^d} f(k) dk``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, EvaluationError

# e^{-2u} I0(2u) switches from the power series to the asymptotic series here
SERIES_MAX_U = 8.0


def laplacian_symbol(k) -> np.ndarray | float:
    """Symbol of the lattice Laplacian ``-Δ`` at momentum ``k``.

    Parameters
    ----------
    k : array_like, shape (..., d)
        Momenta with components in ``[-π, π]``.

    Returns
    -------
    float or ndarray
        ``Σ_i 4 sin²(k_i/2)``, in ``[0, 4d]``.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        raise DomainError("momentum needs at least one component")
    if np.any(np.abs(k) > np.pi * (1 + 1e-15)):
        raise DomainError("momentum components must lie in [-pi, pi]")
    out = _symbol(k)
    return float(out) if out.ndim == 0 else out


def _symbol(k: np.ndarray) -> np.ndarray:
    return np.sum(4.0 * np.sin(0.5 * k) ** 2, axis=-1)


def scaled_i0(x) -> np.ndarray | float:
    """``e^{-x} I_0(x)`` for ``x ≥ 0``.

    Power series up to ``x = 2·SERIES_MAX_U``, Hankel asymptotic series
    (truncated at its smallest term) beyond.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("scaled_i0 requires x >= 0")
    out = np.empty_like(x)
    small = x <= 2 * SERIES_MAX_U
    if np.any(small):
        out[small] = _i0e_series(x[small])
    if np.any(~small):
        out[~small] = _i0e_asymptotic(x[~small])
    return float(out) if out.ndim == 0 else out


def _i0e_series(x: np.ndarray) -> np.ndarray:
    q = 0.25 * x * x
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 80):
        term = term * q / (k * k)
        total += term
        if np.all(term <= 1e-18 * total):
            break
    return total * np.exp(-x)


def _i0e_asymptotic(x: np.ndarray) -> np.ndarray:
    term = np.ones_like(x)
    total = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 60):
        nxt = term * (2 * k - 1) ** 2 / (8.0 * k * x)
        # stop each element at the smallest term of the divergent series
        active &= (nxt < term) & (term > 1e-18 * total)
        if not np.any(active):
            break
        total = np.where(active, total + nxt, total)
        term = np.where(active, nxt, term)
    return total / np.sqrt(2 * np.pi * x)


def heat_kernel_diag(u, d: int = 4) -> np.ndarray | float:
    """Return-probability ``p_u(0) = [e^{-2u} I_0(2u)]^d`` of the
    continuous-time walk generated by ``-Δ``.

    Examples
    --------
    >>> heat_kernel_diag(0.0)
    1.0
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("heat kernel time must be non-negative")
    out = scaled_i0(2.0 * u) ** d
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TorusSpec:
    """Discrete torus ``Z^d / L^N Z^d``."""

    L: int
    N: int
    d: int = 4

    def __post_init__(self):
        if self.L < 2:
            raise DomainError("block side L must be >= 2")
        if self.N < 1:
            raise DomainError("number of scales N must be >= 1")
        if self.d < 1:
            raise DomainError("dimension must be >= 1")

    @property
    def side(self) -> int:
        return self.L**self.N

    @property
    def volume(self) -> int:
        return self.side**self.d

    def momenta(self) -> np.ndarray:
        """Per-axis discrete momenta ``2πk/side`` folded into ``[-π, π)``."""
        return 2 * np.pi * np.fft.fftfreq(self.side)


def torus_symbol(torus: TorusSpec) -> np.ndarray:
    """``λ(k)`` on the full discrete momentum grid, shape ``(side,)*d``."""
    per_axis = 4.0 * np.sin(0.5 * torus.momenta()) ** 2
    lam = np.zeros((torus.side,) * torus.d)
    for axis in range(torus.d):
        shape = [1] * torus.d
        shape[axis] = torus.side
        lam = lam + per_axis.reshape(shape)
    return lam


def torus_green(torus: TorusSpec, m2: float) -> np.ndarray:
    """``(-Δ + m²)^{-1}_{0x}`` on the torus by exact momentum sum.

    Returns an array of shape ``(side,)*d`` indexed by ``x`` modulo the side.
    """
    if not m2 > 0:
        raise DomainError("massless torus Green function does not exist (m2 <= 0)")
    symbol = 1.0 / (torus_symbol(torus) + m2)
    return np.fft.ifftn(symbol).real


# -- Brillouin-zone quadrature ---------------------------------------------


def _points_per_cell(level: int) -> int:
    return 4 * (level + 1)


@dataclass(frozen=True)
class QuadratureScheme:
    """Tensor-product Gauss–Legendre rule on ``[-π, π]^d``, dyadically graded
    toward ``k = 0`` until the innermost cell is no wider than ``mass_scale``.
    """

    mass_scale: float
    level: int = 2
    d: int = 4
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.mass_scale > 0:
            raise DomainError("quadrature grading needs a positive mass scale")
        if self.level < 0:
            raise DomainError("refinement level must be >= 0")
        nodes, weights = _graded_axis(float(self.mass_scale), self.level)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n_cells(self) -> int:
        return len(_cell_edges(self.mass_scale))

    def coarser(self) -> "QuadratureScheme":
        return QuadratureScheme(self.mass_scale, max(self.level - 1, 0), self.d)

    def finer(self) -> "QuadratureScheme":
        return QuadratureScheme(self.mass_scale, self.level + 1, self.d)


def _cell_edges(mass_scale: float) -> list[tuple[float, float]]:
    cells = []
    hi = np.pi
    while hi > mass_scale:
        cells.append((0.5 * hi, hi))
        hi *= 0.5
    cells.append((0.0, hi))
    return cells


@lru_cache(maxsize=64)
def _graded_axis(mass_scale: float, level: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(_points_per_cell(level))
    nodes, weights = [], []
    for lo, hi in _cell_edges(mass_scale):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1))
        weights.append(half * w)
    pos = np.concatenate(nodes)
    wpos = np.concatenate(weights)
    order = np.argsort(pos)
    pos, wpos = pos[order], wpos[order]
    return np.concatenate([-pos[::-1], pos]), np.concatenate([wpos[::-1], wpos])


class QuadResult(NamedTuple):
    value: float
    error: float
    level: int


def _nondecreasing_tuples(n: int, d: int) -> np.ndarray:
    t = np.arange(n)[:, None]
    for _ in range(d - 1):
        last = t[:, -1]
        reps = n - last
        rows = np.repeat(t, reps, axis=0)
        offs = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
        t = np.column_stack([rows, np.repeat(last, reps) + offs])
    return t


def _multiplicity(t: np.ndarray) -> np.ndarray:
    run = np.ones(len(t))
    denom = np.ones(len(t))
    for i in range(1, t.shape[1]):
        run = np.where(t[:, i] == t[:, i - 1], run + 1, 1.0)
        denom *= run
    return math.factorial(t.shape[1]) / denom


@lru_cache(maxsize=8)
def _symmetric_rule(mass_scale: float, level: int, d: int):
    nodes, weights = _graded_axis(mass_scale, level)
    half = len(nodes) // 2
    pos, wpos = nodes[half:], 2.0 * weights[half:]
    idx = _nondecreasing_tuples(len(pos), d)
    w = _multiplicity(idx) * np.prod(wpos[idx], axis=1) / (2 * np.pi) ** d
    lam = np.sum((4.0 * np.sin(0.5 * pos) ** 2)[idx], axis=1)
    return pos, idx, w, lam


_CHUNK = 1 << 20


def _check_finite(values: np.ndarray, points: np.ndarray):
    bad = ~np.isfinite(values)
    if np.any(bad):
        node = points[np.argmax(bad)]
        raise EvaluationError(f"integrand is not finite at node k={tuple(node)}")


def _integrate_once(f, scheme: QuadratureScheme, symmetric: bool) -> float:
    d = scheme.d
    partials = []
    if symmetric:
        pos, idx, w, _ = _symmetric_rule(scheme.mass_scale, scheme.level, d)
        for s in range(0, len(idx), _CHUNK):
            k = pos[idx[s:s + _CHUNK]]
            vals = np.asarray(f(k), dtype=float)
            _check_finite(vals, k)
            partials.append(float(np.dot(w[s:s + _CHUNK], vals)))
        return math.fsum(partials)
    nodes, weights = scheme.nodes, scheme.weights / (2 * np.pi)
    rest = np.stack(np.meshgrid(*([nodes] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    wrest = np.prod(np.stack(np.meshgrid(*([weights] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1), axis=1)
    for k0, w0 in zip(nodes, weights):
        k = np.column_stack([np.full(len(rest), k0), rest])
        vals = np.asarray(f(k), dtype=float)
        _check_finite(vals, k)
        partials.append(w0 * float(np.dot(wrest, vals)))
    return math.fsum(partials)


def brillouin_integrate(integrand: Callable[[np.ndarray], np.ndarray],
                        scheme: QuadratureScheme, *, symmetric: bool = False) -> QuadResult:
    """Normalised Brillouin-zone integral ``(2π)^{-d} ∫ f(k) dk``.

    ``integrand`` receives momenta of shape ``(M, d)`` and returns ``M`` values.
    With ``symmetric=True`` the integrand is assumed invariant under sign flips
    and permutations of the components and only the sorted positive octant is
    evaluated. The reported error is the change against the next coarser level.
    """
    value = _integrate_once(integrand, scheme, symmetric)
    if scheme.level == 0:
        error = abs(_integrate_once(integrand, scheme.finer(), symmetric) - value)
    else:
        error = abs(_integrate_once(integrand, scheme.coarser(), symmetric) - value)
    return QuadResult(value, error, scheme.level)


def integrate_symbol(g: Callable[[np.ndarray], np.ndarray], scheme: QuadratureScheme,
                     *, with_error: bool = True) -> QuadResult:
    """Brillouin integral of ``g(λ(k))``, reusing cached symbol values."""

    def once(s: QuadratureScheme) -> float:
        _, _, w, lam = _symmetric_rule(s.mass_scale, s.level, s.d)
        partials = []
        for i in range(0, len(lam), _CHUNK):
            vals = np.asarray(g(lam[i:i + _CHUNK]), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise EvaluationError("symbol integrand is not finite on the grid")
            partials.append(float(np.dot(w[i:i + _CHUNK], vals)))
        return math.fsum(partials)

    value = once(scheme)
    if not with_error:
        return QuadResult(value, float("nan"), scheme.level)
    other = scheme.finer() if scheme.level == 0 else scheme.coarser()
    return QuadResult(value, abs(once(other) - value), scheme.level)
