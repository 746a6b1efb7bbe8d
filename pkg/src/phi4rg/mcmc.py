"""Small-torus Metropolis sampler for the ``|φ|⁴`` measure ``e^{-V(φ)}``.

``V = Σ_x [½ z φ_x·(-Δφ)_x + ½ ν |φ_x|² + ¼ g |φ_x|⁴]``. This is a sanity
layer: it checks normalisations against exactly known free-field values and is
not meant to resolve critical behaviour.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .lattice import TorusSpec

MAX_SITES = 4096
CHI_CONVENTION = "per-component: chi = <|sum_x phi_x|^2> / (n |Lambda|)"


@dataclass
class FieldConfig:
    """A field ``φ: Λ → R^n`` stored with shape ``(side,)*d + (n,)``."""

    torus: TorusSpec
    n: int
    values: np.ndarray

    def __post_init__(self):
        shape = (self.torus.side,) * self.torus.d + (self.n,)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != shape:
            raise DomainError(f"field shape {self.values.shape} does not match {shape}")

    @classmethod
    def zeros(cls, torus: TorusSpec, n: int) -> "FieldConfig":
        return cls(torus, n, np.zeros((torus.side,) * torus.d + (n,)))


def neighbour_sum(phi: np.ndarray, d: int) -> np.ndarray:
    """``Σ_{y∼x} φ_y`` with periodic wrap over the first ``d`` axes."""
    h = np.zeros_like(phi)
    for axis in range(d):
        h += np.roll(phi, 1, axis) + np.roll(phi, -1, axis)
    return h


def potential(field: FieldConfig, g: float, nu: float, z: float, X=None) -> float:
    """Sum over the sites ``X`` (boolean mask over the torus; all sites when
    omitted) of ``½ z φ·(-Δφ) + ½ ν |φ|² + ¼ g |φ|⁴``."""
    phi, d = field.values, field.torus.d
    lap = 2 * d * phi - neighbour_sum(phi, d)
    s = np.sum(phi * phi, axis=-1)
    dens = 0.5 * z * np.sum(phi * lap, axis=-1) + 0.5 * nu * s + 0.25 * g * s * s
    if X is None:
        return float(dens.sum())
    return float(dens[np.asarray(X, dtype=bool)].sum())


@dataclass
class McmcEstimate:
    mean: float
    stderr: float
    sweeps: int
    seed: int
    acceptance: float
    n_batches: int
    width: float
    convention: str = CHI_CONVENTION

    def as_dict(self) -> dict:
        return asdict(self)


def _local_energy(phi, h, d, z, nu, g):
    s = np.sum(phi * phi, axis=-1)
    return z * (d * s - np.sum(phi * h, axis=-1)) + 0.5 * nu * s + 0.25 * g * s * s


def _half_sweep(phi, parity, width, rng, d, z, nu, g):
    h = neighbour_sum(phi, d)
    prop = phi + width * rng.uniform(-1.0, 1.0, phi.shape)
    dE = _local_energy(prop, h, d, z, nu, g) - _local_energy(phi, h, d, z, nu, g)
    accept = parity & (rng.random(dE.shape) < np.exp(-np.maximum(dE, 0.0)))
    phi[accept] = prop[accept]
    return int(accept.sum())


def sample(torus: TorusSpec, n: int, g: float, nu: float, seed: int, sweeps: int, *,
           z: float = 1.0, burn_in: int | None = None, width: float = 1.0, observable=None):
    """Run the chain; returns ``(samples, acceptance, width)``.

    Sites of one checkerboard colour share no bonds, so each colour is updated
    in parallel. The proposal width is tuned toward 50% acceptance during
    burn-in only and frozen for the measured sweeps.
    """
    if not (nu > 0 or g > 0):
        raise DomainError("e^{-V} is not integrable unless nu > 0 or g > 0")
    if g < 0:
        raise DomainError("g must be non-negative")
    if torus.volume > MAX_SITES:
        raise DomainError(f"at most {MAX_SITES} sites")
    if torus.side % 2:
        raise DomainError("checkerboard updates need an even torus side")
    rng = np.random.default_rng(seed)
    d = torus.d
    coords = np.indices((torus.side,) * d).sum(axis=0) % 2
    colours = [coords == 0, coords == 1]
    phi = np.zeros((torus.side,) * d + (n,))
    burn_in = max(200, sweeps // 10) if burn_in is None else burn_in
    observable = observable or (lambda f: float(np.sum(np.sum(f, axis=tuple(range(d))) ** 2)) / (n * torus.volume))
    acc = 0
    for s in range(burn_in):
        for c in colours:
            acc += _half_sweep(phi, c, width, rng, d, z, nu, g)
        if (s + 1) % 50 == 0:
            rate = acc / (50 * torus.volume)
            width *= min(2.0, max(0.5, rate / 0.5))
            acc = 0
    acc = 0
    out = np.empty(sweeps)
    for s in range(sweeps):
        for c in colours:
            acc += _half_sweep(phi, c, width, rng, d, z, nu, g)
        out[s] = observable(phi)
    return out, acc / (sweeps * torus.volume), width


def batch_means(x: np.ndarray, n_batches: int = 32) -> tuple[float, float]:
    if n_batches < 16:
        raise DomainError("use at least 16 batches")
    m = len(x) // n_batches
    if m < 1:
        raise DomainError("fewer samples than batches")
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(n_batches))


def mcmc_phi4(torus: TorusSpec, n: int, g: float, nu: float, seed: int, sweeps: int, *,
              n_batches: int = 32, **kw) -> McmcEstimate:
    """Metropolis estimate of ``χ`` with a batch-means standard error."""
    x, rate, width = sample(torus, n, g, nu, seed, sweeps, **kw)
    mean, se = batch_means(x, n_batches)
    return McmcEstimate(mean, se, sweeps, seed, rate, n_batches, width)
