import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import beta as beta_fn, betaincinv

from plaplab.exponents import DomainError, Params, k_exponent, sigma_constants
from plaplab.verify import (
    DerivativeMode,
    RhoChoice,
    RhoId,
    TimeSupersolution,
    certify_identity,
    check_static_barrier_pc,
    check_stationary_supersolution,
    check_time_supersolution,
    eval_R1_R2,
    hj_case1_printed_K,
    hj_case1_threshold,
    low_q_threshold,
    minimal_constant,
    rho_growth_constant,
    rho_subcritical,
    subcrit_integral,
    subcrit_kappa,
    subcritical_ode_residuals,
)

VALID = [
    (RhoId.POWER_SUPERCRIT_HIGH_Q, Params(1.5, 1.2, 1), None),
    (RhoId.POWER_SUPERCRIT_LOW_Q, Params(1.5, 0.6, 1), None),
    (RhoId.LOG_CRITICAL, Params(4 / 3, 0.8, 2), 2.0),
    (RhoId.LOG_CRITICAL_EXT, Params(4 / 3, 2 / 3, 2), 2.0),
    (RhoId.IMPLICIT_SUBCRIT, Params(1.25, 1.0, 2), 1.0),
    (RhoId.HAMILTON_SQRT, Params(1.6, 0.5, 1), 1.0),
    (RhoId.HAMILTON_POWER, Params(1.5, 2.0, 1), None),
]


@pytest.mark.parametrize("cid,params,aux", VALID, ids=[v[0].value for v in VALID])
def test_certify_each_choice(cid, params, aux):
    rep = certify_identity(RhoChoice(cid, params, aux), 32)
    assert rep.passed, rep.as_dict()
    assert rep.residuals.size == rep.sample_points.size == 32


def test_high_q_choice_hand_value():
    # k = 1/2, c = 2.25^{2/3}: k rho'^2 - rho rho'' = (4/9) c^2, |rho|^{p-2} = c^{-1/2}
    R1, _ = eval_R1_R2(RhoChoice(RhoId.POWER_SUPERCRIT_HIGH_Q, Params(1.5, 1.2, 1)), 1.0)
    assert abs(R1 - 1.0) < 1e-14


def test_low_q_choice_r1_equals_r2():
    c = RhoChoice(RhoId.POWER_SUPERCRIT_LOW_Q, Params(1.5, 0.6, 1))
    for u in (1e-3, 0.37, 1.0, 8.0):
        R1, R2 = eval_R1_R2(c, u)
        assert R1 == pytest.approx(R2, rel=1e-12)


def test_log_critical_lower_bound():
    c = RhoChoice(RhoId.LOG_CRITICAL, Params(4 / 3, 0.8, 2), 1.0)
    for u in np.geomspace(1e-4, 1.0, 20):
        R1, R2 = eval_R1_R2(c, float(u))
        L = math.log(math.e / u)
        assert R1 == pytest.approx(0.75 + 0.375 / L, rel=1e-12)
        assert R1 >= 0.75 and R2 > 0


def test_log_critical_ext_values():
    c = RhoChoice(RhoId.LOG_CRITICAL_EXT, Params(4 / 3, 2 / 3, 2), 1.0)
    for u in (1e-3, 0.1, 0.3):
        L = math.log(math.e / u)
        R1, R2 = eval_R1_R2(c, u)
        assert R1 == pytest.approx(1.5 * L, rel=1e-12) and R2 == pytest.approx(1.5 * (L - 1), rel=1e-12)


def test_hamilton_power_r2():
    c = RhoChoice(RhoId.HAMILTON_POWER, Params(1.5, 2.0, 1))
    for u in (0.01, 1.0, 5.0):
        assert eval_R1_R2(c, u)[1] == pytest.approx(0.5, rel=1e-14)
        assert eval_R1_R2(c, u, DerivativeMode.FINITE_DIFFERENCE)[1] == pytest.approx(0.5, rel=1e-8)


@pytest.mark.parametrize("cid,params", [
    (RhoId.POWER_SUPERCRIT_HIGH_Q, Params(1.2, 1.0, 2)),
    (RhoId.LOG_CRITICAL, Params(1.5, 1.0, 2)),
    (RhoId.LOG_CRITICAL, Params(1.5, 1.0, 1)),
    (RhoId.LOG_CRITICAL_EXT, Params(4 / 3, 0.8, 2)),
    (RhoId.IMPLICIT_SUBCRIT, Params(1.5, 1.0, 2)),
    (RhoId.HAMILTON_SQRT, Params(1.5, 1.2, 1)),
    (RhoId.HAMILTON_POWER, Params(1.5, 0.8, 1)),
])
def test_choice_domain_gates(cid, params):
    with pytest.raises(DomainError):
        RhoChoice(cid, params, 1.0)


def test_eval_outside_domain():
    with pytest.raises(DomainError):
        eval_R1_R2(RhoChoice(RhoId.LOG_CRITICAL, Params(4 / 3, 0.8, 2), 1.0), 2.0)
    with pytest.raises(DomainError):
        eval_R1_R2(RhoChoice(RhoId.POWER_SUPERCRIT_HIGH_Q, Params(1.5, 1.2, 1)), 0.0)


# -- implicit subcritical rho, against the incomplete beta function --------------------

def _beta_oracle(r, p, N, u0):
    k = k_exponent(p, N)
    b = 2 - p - 2 * k
    a = (1 - k) / b
    I1 = beta_fn(a, 0.5) / b
    K0 = (2 / (b * I1 * I1)) ** (1 / p) * u0 ** (2 / p)
    return K0 * betaincinv(a, 0.5, r / u0) ** (1 / b), K0, I1


@pytest.mark.parametrize("p,N", [(1.25, 2), (1.1, 2), (1.4, 3), (1.3, 4)])
def test_normalization_integral_matches_beta_function(p, N):
    k = k_exponent(p, N)
    b = 2 - p - 2 * k
    _, _, I1 = _beta_oracle(0.5, p, N, 1.0)
    assert subcrit_integral(1.0, k, b) == pytest.approx(I1, rel=1e-11)
    assert subcrit_kappa(p, N) == pytest.approx((2 / (b * I1 * I1)) ** (1 / p), rel=1e-11)


@pytest.mark.parametrize("r", [1e-3, 0.05, 0.3, 0.77, 0.999])
def test_rho_subcritical_matches_beta_inverse(r):
    P = Params(1.25, 1.0, 2)
    want, _, _ = _beta_oracle(r * 2.0, 1.25, 2, 2.0)
    assert rho_subcritical(r * 2.0, P, 2.0) == pytest.approx(want, rel=1e-10)


def test_rho_subcritical_endpoints():
    P = Params(1.25, 1.0, 2)
    K0 = subcrit_kappa(1.25, 2) * 3.0 ** (2 / 1.25)
    assert abs(rho_subcritical(3.0, P, 3.0) - K0) <= 1e-10 * K0
    assert rho_subcritical(0.0, P, 3.0) == 0.0
    with pytest.raises(DomainError):
        rho_subcritical(4.0, P, 3.0)


@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_rho_subcritical_increasing(a, b):
    P = Params(1.25, 1.0, 2)
    lo, hi = sorted((a, b))
    if hi - lo > 1e-9:
        assert rho_subcritical(lo, P, 1.0) < rho_subcritical(hi, P, 1.0)


def test_subcritical_ode_and_growth_bound():
    P = Params(1.25, 1.0, 2)
    assert subcritical_ode_residuals(P, 1.0).max() < 1e-5
    C = rho_growth_constant(P, 1.0)
    assert math.isfinite(C) and C > 0


# -- time supersolutions ---------------------------------------------------------------------

@given(st.floats(1.01, 1.99), st.floats(1.0, 3.0))
def test_high_q_case1_exact_cancellation(p, q):
    rep = check_time_supersolution("PowerHighQ_case1", Params(p, q, 1))
    assert rep.ok and rep.details["max_abs_relative_residual"] < 1e-12


@given(st.floats(1.01, 1.99), st.floats(1.01, 3.0))
def test_hamilton_case2_exact_cancellation(p, q):
    rep = check_time_supersolution("HJ_case2", Params(p, q, 1))
    assert rep.ok and rep.details["max_abs_relative_residual"] < 1e-12


@pytest.mark.parametrize("which,params", [
    (TimeSupersolution.HIGH_Q_CASE2, Params(1.5, 0.8, 1)),
    (TimeSupersolution.LOW_Q, Params(1.5, 0.6, 1)),
    (TimeSupersolution.LOG_CASE1, Params(4 / 3, 1.2, 2)),
    (TimeSupersolution.LOG_CASE2, Params(4 / 3, 0.8, 2)),
    (TimeSupersolution.LOG_CASE3, Params(4 / 3, 2 / 3, 2)),
    (TimeSupersolution.LOG_CASE3, Params(1.5, 0.75, 3)),
    (TimeSupersolution.HJ_CASE1, Params(1.6, 0.5, 1)),
])
@pytest.mark.parametrize("u0", [0.1, 1.0, 30.0])
def test_catalog_margins_nonnegative(which, params, u0):
    assert check_time_supersolution(which, params, u0).ok


def test_low_q_threshold_and_bisection():
    P = Params(1.5, 0.6, 1)
    Cmin = minimal_constant("PowerLowQ", P)
    assert 0 < Cmin <= low_q_threshold(P)
    assert not check_time_supersolution("PowerLowQ", P, C=0.5 * Cmin).ok
    assert check_time_supersolution("PowerLowQ", P, C=Cmin).ok


def test_hamilton_case1_constant():
    # smallest K with K^{q/2} = 2^{1-q} / (q (1-q)); q = 1/2 gives (4 sqrt 2)^4 = 1024
    assert hj_case1_threshold(0.5) == pytest.approx(1024.0, rel=1e-12)
    P = Params(1.6, 0.5, 1)
    rep = check_time_supersolution("HJ_case1", P)
    assert rep.details["K_min_bisection"] == pytest.approx(1024.0, rel=1e-8)
    # the constant 2^{1-q}(1-q^2) printed beside the estimate is too small
    assert hj_case1_printed_K(0.5) < 1024.0 and rep.details["printed_K_min_margin"] < 0
    assert not check_time_supersolution("HJ_case1", P, C=hj_case1_printed_K(0.5)).ok


@pytest.mark.parametrize("which,params", [
    ("PowerHighQ_case1", Params(1.5, 0.8, 1)),
    ("PowerLowQ", Params(1.5, 0.9, 1)),
    ("LogCritical_case1", Params(1.5, 1.2, 2)),
    ("LogCritical_case3", Params(4 / 3, 0.8, 2)),
    ("HJ_case2", Params(1.5, 0.8, 1)),
])
def test_catalog_domain_gates(which, params):
    with pytest.raises(DomainError):
        check_time_supersolution(which, params)


# -- stationary barriers -------------------------------------------------------------------

def test_stationary_threshold():
    P = Params(1.5, 0.75, 1)
    _, A0 = sigma_constants(P)
    assert A0 == pytest.approx(16 / 3)
    for f in (1, 2, 10):
        assert check_stationary_supersolution(f * A0, P, [0.1, 1, 10]).ok
    bad = check_stationary_supersolution(A0 / 100, P, [1.0])
    assert not bad.ok and bad.details["E"][0] < 0


@given(st.floats(0.01, 100.0), st.floats(0.01, 100.0), st.floats(0.05, 20.0))
def test_stationary_margin_monotone_in_amplitude(a, b, r):
    P = Params(1.5, 0.75, 1)
    lo, hi = sorted((a, b))
    m_lo = check_stationary_supersolution(lo, P, [r]).min_margin
    m_hi = check_stationary_supersolution(hi, P, [r]).min_margin
    assert m_hi >= m_lo - 1e-12


@given(st.floats(0.1, 10.0))
def test_stationary_homogeneity(lam):
    P = Params(1.5, 0.75, 1)
    alpha, A0 = sigma_constants(P)
    E1 = check_stationary_supersolution(2 * A0, P, [1.0]).details["E"][0]
    E2 = check_stationary_supersolution(2 * A0, P, [lam]).details["E"][0]
    assert E2 == pytest.approx(E1 * lam ** (-(alpha + 1) * P.q), rel=1e-10)


def test_static_barrier_at_critical_p():
    rep = check_static_barrier_pc(Params(4 / 3, 1.0, 2), 1.0, [1.0])
    assert rep.ok and rep.details["E"][0] > 0
    assert rep.details["homogeneity"] == pytest.approx([-2.0, -3.0])
    with pytest.raises(DomainError):
        check_static_barrier_pc(Params(1.5, 1.0, 1), 1.0, [1.0])
    with pytest.raises(DomainError):
        check_static_barrier_pc(Params(1.5, 1.0, 2), 1.0, [1.0])
