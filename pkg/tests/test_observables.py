from fractions import Fraction

import numpy as np
import pytest

from phi4rg.errors import DomainError
from phi4rg.observables import (chi_curve, correlation_length_scaling, effective_exponents,
                                log_extrapolate, period_grid, specific_heat_proxy, specific_heat_value,
                                theory_exponents)

GRID = period_grid(2, 1, 1e-2, 1e-8)


@pytest.fixture(scope="module")
def curve():
    return chi_curve(1, 2, 0.03, GRID, precise=False)


def test_theory_exponents():
    t = theory_exponents(1)
    assert t.gamma_log == Fraction(1, 3) and t.cH_exponent == Fraction(1, 3)
    assert theory_exponents(4).cH_regime == "loglog"
    assert theory_exponents(8).cH_exponent is None
    assert theory_exponents(0).as_dict()["gamma_log"]["exact"] == "1/4"
    with pytest.raises(DomainError):
        theory_exponents(-1)


def test_period_grid_is_commensurate():
    g = period_grid(2, 4)
    r = np.diff(np.log(g))
    assert np.allclose(r, r[0]) and abs(4 * r[0]) == pytest.approx(2 * np.log(2))
    assert g.max() <= 1e-2 and g.min() >= 1e-16 * (1 - 1e-12)


def test_log_extrapolate_exact_on_linear_model():
    ell = np.array([10.0, 20, 40, 80])
    c, resid = log_extrapolate(ell, 3 + 2 / ell)
    assert c == pytest.approx(3.0, rel=1e-14) and resid < 1e-12


def test_free_field_curve_is_mean_field():
    c = chi_curve(1, 2, 0.0, GRID, precise=False)
    assert c.nu_c == 0.0 and c.gamma_theory == 0.0
    assert all(p.eps == pytest.approx(p.m2, rel=1e-14) for p in c.points)
    assert np.allclose(effective_exponents(c).gamma_adjacent[:-1], 0.0)


def test_curve_invariants(curve):
    m2 = curve.column("m2")
    assert np.all(np.diff(m2) > 0)
    assert np.all(curve.column("eps") > 0)
    assert curve.route_defect < 1e-3 and curve.fit_residual < 1e-4
    # chi = (1+z0)/m2 exactly, dchi/dnu negative
    assert np.allclose(curve.column("chi") * m2, 1.0)
    assert np.all(curve.column("dchidnu") < 0)


def test_worker_count_does_not_change_curve(curve):
    other = chi_curve(1, 2, 0.03, GRID, precise=False, workers=2)
    for name in curve.points[0].__dict__:
        assert np.array_equal(other.column(name), curve.column(name), equal_nan=True), name


def test_correlation_length_scaling(curve):
    cs = correlation_length_scaling(2.0, curve)
    assert cs.log_exponent == pytest.approx(1 / 3)
    assert cs.A > 0


def test_specific_heat(curve):
    v = specific_heat_value(1, 2, 0.03, 1e-6)
    assert v > specific_heat_value(1, 2, 0.03, 1e-4) > 0
    sh = specific_heat_proxy(1, 2, 0.03, None, curve=curve)
    assert np.all(np.diff(sh.cH) > 0)
    with pytest.raises(DomainError):
        specific_heat_proxy(0, 2, 0.03, GRID)


def test_curve_input_validation():
    with pytest.raises(DomainError):
        chi_curve(1, 2, 0.03, GRID[:3])
    with pytest.raises(DomainError):
        chi_curve(1, 2, 0.03, [-1e-3, 1e-4, 1e-5, 1e-6])


def test_correlation_length_constant_on_full_grid():
    c = chi_curve(1, 2, 0.04, period_grid(2))
    assert correlation_length_scaling(2.0, c).max_spread <= 0.05
