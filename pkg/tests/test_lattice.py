import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings, strategies as st

from phi4rg.errors import DomainError
from phi4rg.lattice import (QuadratureScheme, TorusSpec, brillouin_integrate, heat_kernel_diag,
                            integrate_symbol, laplacian_symbol, scaled_i0, torus_green, torus_symbol)
from phi4rg.oracle import green_position


def test_symbol_range_and_values():
    assert laplacian_symbol([0.0, 0.0]) == 0.0
    assert laplacian_symbol([np.pi] * 4) == pytest.approx(16.0)
    with pytest.raises(DomainError):
        laplacian_symbol([4.0])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1e6))
def test_scaled_i0_matches_scipy(x):
    assert scaled_i0(x) == pytest.approx(scipy.special.i0e(x), rel=1e-13, abs=1e-300)


def test_heat_kernel_limits():
    assert heat_kernel_diag(0.0) == 1.0
    u = 1e5
    # leading large-u behaviour (4πu)^{-2}
    assert heat_kernel_diag(u) * (4 * math.pi * u) ** 2 == pytest.approx(1.0, rel=1e-4)
    with pytest.raises(DomainError):
        heat_kernel_diag(-1.0)


def test_torus_green_sum_rule():
    t = TorusSpec(2, 3, 2)
    G = torus_green(t, 0.3)
    assert G.sum() == pytest.approx(1 / 0.3, rel=1e-13)
    lap = 2 * t.d * G - sum(np.roll(G, s, a) for a in range(t.d) for s in (1, -1))
    delta = np.zeros_like(G)
    delta[0, 0] = 1.0
    assert np.max(np.abs(lap + 0.3 * G - delta)) < 1e-13
    with pytest.raises(DomainError):
        torus_green(t, 0.0)


def test_torus_symbol_shape():
    t = TorusSpec(3, 1, 3)
    lam = torus_symbol(t)
    assert lam.shape == (3, 3, 3) and lam[0, 0, 0] == 0.0


def test_brillouin_normalisation_and_symmetric_rule():
    s = QuadratureScheme(0.5, level=1)
    assert brillouin_integrate(lambda k: np.ones(len(k)), s).value == pytest.approx(1.0, rel=1e-14)
    # ∫ λ = 2d on the normalised zone
    f = lambda k: laplacian_symbol(k)
    assert brillouin_integrate(f, s).value == pytest.approx(8.0, rel=1e-12)
    assert brillouin_integrate(f, s, symmetric=True).value == pytest.approx(8.0, rel=1e-12)


def test_integrate_symbol_reports_error_estimate():
    m2 = 1e-2
    r = integrate_symbol(lambda lam: 1 / (lam + m2), QuadratureScheme(math.sqrt(m2), 1))
    exact = green_position([0, 0, 0, 0], m2)
    # the estimate is the change against the coarser level, so it bounds the error
    assert abs(r.value - exact) <= r.error < 1e-7 * exact
    with pytest.raises(DomainError):
        QuadratureScheme(0.0)
