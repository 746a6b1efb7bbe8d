import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from phi4rg.errors import CouplingTooLargeError, DomainError
from phi4rg.flow import (COMPLETED, ESCAPED_NEGATIVE, ESCAPED_POSITIVE, Couplings, FlowConfig,
                         default_j_max, find_critical_nu0, flow_step, g_infinity, linear_critical_nu0,
                         mass_scale_index, run_flow, tangent_flow, with_overrides)


def test_config_validation():
    with pytest.raises(DomainError):
        FlowConfig(1, 2, 1e-4, 0.2)
    with pytest.raises(DomainError):
        FlowConfig(-1, 2, 1e-4, 0.01)
    with pytest.raises(DomainError):
        FlowConfig(1, 2, 1e-4, 0.01, mu_esc=0.0)
    assert FlowConfig(1, 2, 1e-8, 0.01).j_max == default_j_max(1e-8, 2) >= 8


def test_mass_scale_index():
    assert mass_scale_index(1e-8, 2) == 14
    assert mass_scale_index(1.0, 2) == 0
    assert 3 ** (2 * mass_scale_index(3e-5, 3)) * 3e-5 >= 1


def test_constant_b_recursion_against_high_precision():
    # float iteration of the quartic flow with constant b stays within rounding of a 200-digit run
    n, b, g0 = 1, 0.0088, 0.05
    cfg = FlowConfig(n, 2, 1e-4, g0, driving=False)
    s = Couplings(0, g0, 0.0)
    for _ in range(500):
        s = flow_step(s, b, cfg)
    with mpmath.workdps(200):
        g = mpmath.mpf(g0)
        for _ in range(500):
            g = g - (n + 8) * mpmath.mpf(b) * g * g
        assert s.g == pytest.approx(float(g), rel=1e-12)
        # close to the continuum law 1/(1/g0 + (n+8) b j) up to a log correction
        assert float(g) * (1 / g0 + (n + 8) * b * 500) == pytest.approx(1.0, rel=0.02)


def test_driving_off_keeps_zero_mass_line():
    cfg = FlowConfig(2, 2, 1e-4, 0.05, driving=False)
    tr = run_flow(cfg, 0.0)
    assert tr.termination == COMPLETED and all(m == 0 for m in tr.mu)
    cp = find_critical_nu0(cfg, 1e-12)
    assert cp.exact and cp.nu0c == 0


def test_escape_signs_and_bisection_monotone():
    cfg = FlowConfig(1, 2, 1e-4, 0.03)
    cp = find_critical_nu0(cfg)
    assert run_flow(cfg, cp.nu0c + 1e-6).termination == ESCAPED_POSITIVE
    assert run_flow(cfg, cp.nu0c - 1e-6).termination == ESCAPED_NEGATIVE
    assert cp.monotone_escape


def test_precise_bisection_matches_closed_form():
    cfg = FlowConfig(1, 2, 1e-8, 0.04, precise=True)
    cp = find_critical_nu0(cfg)
    exact = linear_critical_nu0(cfg)
    assert abs(cp.nu0c - exact) <= cp.width + 1e-25
    assert cp.width <= 1e-12 * 1e-8


@pytest.mark.parametrize("mu_esc", [0.25, 1.0, 10.0])
def test_critical_point_robust_to_escape_threshold(mu_esc):
    base = find_critical_nu0(FlowConfig(1, 2, 1e-4, 0.03, precise=True)).nu0c
    cp = find_critical_nu0(FlowConfig(1, 2, 1e-4, 0.03, mu_esc=mu_esc, precise=True))
    assert float(abs(cp.nu0c - base)) <= 1e-14 * abs(float(base))


def test_n_sweep_monotone():
    vals = [float(find_critical_nu0(FlowConfig(n, 2, 1e-4, 0.03)).nu0c) for n in (0, 1, 2, 4, 8)]
    assert all(v < 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([0, 1, 2, 4]), st.floats(0.01, 0.06))
def test_tangent_exponent_stable_across_g0(n, g0):
    m2 = 1e-8
    j = mass_scale_index(m2, 2)
    tr = run_flow(FlowConfig(n, 2, m2, g0), 0.0, escape=False)
    ratio = math.log(tangent_flow(tr)[j]) / math.log(tr.g[j] / g0)
    assert ratio == pytest.approx((n + 2) / (n + 8), rel=0.02)


def test_g_infinity_near_inverse_sum():
    cfg = FlowConfig(0, 2, 1e-6, 0.02)
    ginf = g_infinity(cfg)
    assert 0 < ginf < 0.02
    with pytest.raises(DomainError):
        g_infinity(with_overrides(cfg, m2=0.0))


def test_remainder_hooks_shift_critical_point():
    cfg = FlowConfig(1, 2, 1e-4, 0.03)
    shifted = with_overrides(cfg, r_mu=lambda j, s: 1e-4 * s.g)
    a = float(find_critical_nu0(cfg).nu0c)
    b = float(find_critical_nu0(shifted).nu0c)
    assert b < a
    with pytest.raises(DomainError):
        linear_critical_nu0(shifted)


def test_coupling_too_large_detected():
    cfg = FlowConfig(8, 2, 1e-12, 0.1, r_g=lambda j, s: -0.05)
    with pytest.raises(CouplingTooLargeError):
        find_critical_nu0(cfg)


def test_tangent_exponent_unchanged_by_driving_toggle():
    m2, g0 = 1e-8, 0.05
    j = mass_scale_index(m2, 2)
    r = []
    for driving in (True, False):
        cfg = FlowConfig(1, 2, m2, g0, driving=driving)
        tr = run_flow(cfg, linear_critical_nu0(cfg), escape=False)
        r.append(math.log(tr.nuprime[j]) / math.log(tr.g[j] / g0))
    assert r[0] == pytest.approx(r[1], rel=5e-3)
