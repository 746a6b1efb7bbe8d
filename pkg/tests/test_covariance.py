import math

import numpy as np
import pytest

from phi4rg.covariance import (FOUR_PI2, CovarianceSlice, SliceSchedule, WindowFunction, beta_coefficient,
                               beta_sequence, bubble, flow_coefficients, proper_time_integral,
                               slice_diagonal, slice_position, sum_beta_identity, tail_symbol,
                               window_norm_sq)
from phi4rg.errors import DomainError
from phi4rg.lattice import TorusSpec, heat_kernel_diag
from phi4rg.oracle import green_position


def test_schedule():
    s = SliceSchedule(2)
    assert s.t(0) == 0 and s.t(1) == 1.0 and s.t(3) == 16.0
    assert s.t(2000) == math.inf
    with pytest.raises(DomainError):
        SliceSchedule(1)


def test_window_is_partial_sum_of_slices():
    s = SliceSchedule(3)
    lam = np.linspace(0, 16, 101)
    part = sum(CovarianceSlice(j, 0.01, s).symbol(lam) for j in range(1, 5))
    assert np.allclose(part, WindowFunction(4, 0.01, s).symbol(lam), rtol=1e-13, atol=0)
    final = CovarianceSlice(5, 0.01, s, final=True).symbol(lam)
    assert np.allclose(final, tail_symbol(4, 0.01, s, lam), rtol=1e-14)


def test_slice_massless_zero_momentum_limit():
    s = SliceSchedule(2)
    assert CovarianceSlice(2, 0.0, s).symbol(0.0) == pytest.approx(s.t(2) - s.t(1))
    with pytest.raises(DomainError):
        CovarianceSlice(0, 0.1, s)


def test_diagonal_sums_to_green_function():
    m2 = 0.05
    total = math.fsum(slice_diagonal(j, m2, 2) for j in range(1, 40))
    assert total == pytest.approx(green_position([0, 0, 0, 0], m2), rel=1e-12)


def test_beta_telescopes_to_windows():
    m2, L = 1e-3, 3
    for j in range(0, 5):
        diff = window_norm_sq(j + 1, m2, L) - window_norm_sq(j, m2, L)
        assert beta_coefficient(j, m2, L) == pytest.approx(diff, rel=1e-11)


def test_beta_positive_and_sums_to_bubble():
    m2 = 1e-4
    b = beta_sequence(m2, 2, 40, j_min=0)
    assert np.all(b >= 0)
    assert math.fsum(b) == pytest.approx(bubble(m2).B, rel=1e-12)


def test_sum_beta_identity_report():
    r = sum_beta_identity(1e-4, 2, 20)
    assert r.defect < 1e-13
    # the j >= 1 sum misses the first window
    assert r.sum_b + r.first_window == pytest.approx(r.bubble, rel=1e-10)
    with pytest.raises(DomainError):
        sum_beta_identity(0.0, 2, 5)


def test_massless_beta_limit():
    assert beta_coefficient(40, 0.0, 3) == pytest.approx(2 * math.log(3) / FOUR_PI2, rel=1e-12)


def test_bubble_domain():
    with pytest.raises(DomainError):
        bubble(0.0)
    with pytest.raises(ValueError):
        bubble(1.0, backend="nope")


def test_proper_time_integral_against_heat_kernel_moment():
    # ∫_0^∞ e^{-u m²} p_u du is G(0); compare deficit and decay weights
    m2 = 0.2
    direct = proper_time_integral(lambda u: np.ones_like(u), 0.0, 50.0, 0.0)
    split = (proper_time_integral(lambda u: np.ones_like(u), 0.0, 50.0, m2)
             + proper_time_integral(lambda u: np.ones_like(u), 0.0, 50.0, m2, weight="deficit"))
    assert split == pytest.approx(direct, rel=1e-13)
    assert proper_time_integral(lambda u: np.ones_like(u), 1.0, 1.0, m2) == 0.0
    assert heat_kernel_diag(1.0) > 0


def test_slice_position_diagonal_and_decay():
    t = TorusSpec(2, 5, 2)
    r = slice_position(t, 2, 1e-3)
    assert r.table[0, 0] == pytest.approx(r.diagonal)
    assert r.outside_ratio < 1.0
    with pytest.raises(DomainError):
        slice_position(TorusSpec(2, 2, 2), 2, 1e-3)


def test_flow_coefficients_precise_agree_with_float():
    b, c = flow_coefficients(1e-6, 2, 20)
    bp, cp = flow_coefficients(1e-6, 2, 20, precise=True)
    assert np.allclose([float(x) for x in bp], b, rtol=1e-10)
    assert np.allclose([float(x) for x in cp], c, rtol=1e-10)
    assert c[0] == pytest.approx(slice_diagonal(1, 1e-6, 2))
