import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plaplab.exponents import DomainError, Params, gamma_bound
from plaplab.functionals import (
    EstimateId,
    FitError,
    FitKind,
    LedgerError,
    default_window,
    detect_extinction_series,
    estimate_form,
    extinction_exponent_check_series,
    exponential_lower_envelope,
    fit_exponential_decay,
    fit_power_decay,
    gn_ratio,
    gradient_estimate_check,
    log_slope_acceleration,
    mass_balance_residual,
    power_regime_signatures,
)
from plaplab.grid import Field, Grid
from plaplab.solver import Bump, Custom, RegEps, Scheme, SolverConfig, run

T = np.linspace(1.0, 10.0, 200)


def test_power_fit_recovers_exact_law():
    f = fit_power_decay(T, 5.0 * T ** -2.0, (1.0, 10.0))
    assert abs(f.exponent_or_rate + 2.0) < 1e-9 and f.r_squared == pytest.approx(1.0)
    assert f.kind is FitKind.POWER and f.n_points == T.size


@given(st.floats(-6, 3), st.floats(0.01, 100.0), st.floats(0.01, 5.0))
def test_power_fit_exact_for_any_power_law(b, c, t0):
    t = np.linspace(t0, 10 * t0, 50)
    f = fit_power_decay(t, c * t ** b, (t0, 10 * t0))
    assert abs(f.exponent_or_rate - b) < 1e-9


def test_exponential_fit_rate_and_model_choice():
    f = fit_exponential_decay(T, 3.0 * np.exp(-0.7 * T), (1.0, 10.0))
    assert abs(f.exponent_or_rate - 0.7) < 1e-12
    y = 3.0 * np.exp(-T)
    assert fit_exponential_decay(T, y, (1, 10)).r_squared > fit_power_decay(T, y, (1, 10)).r_squared
    env = exponential_lower_envelope(T, y, (1, 10))
    assert env["relative_gap"] < 1e-9 and abs(env["rate"] - 1.0) < 1e-12


def test_fit_errors():
    with pytest.raises(FitError):
        fit_power_decay(T, np.zeros_like(T), (1, 10))
    with pytest.raises(FitError):
        fit_power_decay(T, T, (5, 5))
    with pytest.raises(FitError):
        fit_power_decay(T[:5], T[:5], (1, 10))
    assert default_window(40.0) == (4.0, 40.0)


def test_extinction_detection_synthetic():
    t = np.linspace(0, 2, 201)
    te = detect_extinction_series(t, np.maximum(0.0, 1.0 - t), 1e-12)
    assert abs(te - 1.0) <= t[1] - t[0] + 1e-12
    assert detect_extinction_series(t, np.exp(-t), 1e-12) is None
    # a dip that recovers is not extinction
    y = np.where(np.abs(t - 0.5) < 0.05, 0.0, 1.0)
    assert detect_extinction_series(t, y, 1e-3) is None


def test_extinction_bound_on_exact_power():
    P = Params(1.5, 0.6, 1)
    t = np.linspace(0.0, 1.0, 401)[:-1]
    s = 1.0 - t
    chk = extinction_exponent_check_series(t, s ** (8.0 / 3.0), s ** 3.0, 1.0, P)
    assert chk.bound_exponent_l1 == pytest.approx(8.0 / 3.0) and chk.bound_exponent_linf == pytest.approx(3.0)
    assert chk.constant_linf == pytest.approx(1.0) and chk.constant_l1 == pytest.approx(1.0)
    assert chk.fit_linf.exponent_or_rate == pytest.approx(3.0) and chk.ok
    with pytest.raises(DomainError):
        extinction_exponent_check_series(t, s, s, 1.0, Params(1.5, 0.8, 1))


def test_log_slope_acceleration_separates_shapes():
    t = np.linspace(0.0, 1.0, 401)
    assert log_slope_acceleration(t, (1.001 - t) ** 3, 1.0) > 1.5
    assert log_slope_acceleration(t, np.exp(-3 * t), 1.0) == pytest.approx(1.0)
    assert log_slope_acceleration(t + 1.0, (t + 1.0) ** -2, 2.0) < 1.0


def test_gn_ratio_triangle_and_errors():
    g = Grid("line", 2.0, 20)
    tri = np.maximum(0.0, 1.0 - np.abs(g.x))
    assert gn_ratio(Field(g, tri)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gn_ratio(Field(g, np.zeros(g.n_nodes)))
    with pytest.raises(ValueError):
        gn_ratio(Field(g, np.ones(g.n_nodes)))


@given(st.floats(1e-3, 1e3))
def test_gn_ratio_scale_invariant(lam):
    g = Grid("line", 3.0, 30)
    w = np.exp(-g.x ** 2)
    assert gn_ratio(Field(g, lam * w)) == pytest.approx(gn_ratio(Field(g, w)), rel=1e-12)


def test_explicit_constants():
    f = estimate_form("GradEst1", Params(1.5, 1.2, 1))
    assert f.explicit_constant == pytest.approx(0.693361, abs=1e-6)
    assert f.power == pytest.approx(-1.0 / 3.0)
    h = estimate_form("GradEstHJ2", Params(1.5, 2.0, 1))
    assert h.explicit_constant == pytest.approx(0.5)
    assert estimate_form("GradEst2", Params(1.5, 0.8, 1)).explicit_constant is None


@pytest.mark.parametrize("eid,p,q,N,absorb", [
    ("GradEst1", 1.5, 0.8, 1, True),         # q < 1
    ("GradEst6", 1.5, 1.2, 2, True),          # p != p_c
    ("DiffusionOnly_i", 1.5, 1.2, 1, True),   # needs a run without absorption
    ("GradEst1", 1.5, 1.2, 1, False),
])
def test_estimate_gates(eid, p, q, N, absorb):
    with pytest.raises(DomainError):
        estimate_form(eid, Params(p, q, N), absorb)


def test_log_estimates_available_only_with_n_at_least_two():
    assert estimate_form("GradEst6", Params(4.0 / 3.0, 1.2, 2)).power == pytest.approx(-0.5)
    for eid in EstimateId:
        if eid.value in ("GradEst6", "GradEst7", "GradEstEx", "DiffusionOnly_ii"):
            for q in (0.5, 1.2):
                with pytest.raises(DomainError):
                    estimate_form(eid, Params(1.5, q, 1), eid is not EstimateId.DIFFUSION_II)


def _short_run(values=None, t_end=0.2, q=1.2):
    P = Params(1.5, q, 1)
    g = Grid("line", 4.0, 40)
    datum = Bump(1.0, 2.0) if values is None else Custom(tuple(values(g)))
    cfg = SolverConfig(RegEps(1e-12, 0.9 * gamma_bound(P)), t_end, scheme=Scheme.SEMI_IMPLICIT)
    return run(datum, g, P, cfg)


def test_constant_run_has_zero_estimate_ratio():
    tr = _short_run(lambda g: np.full(g.n_nodes, 0.5))
    chk = gradient_estimate_check(tr, "GradEst1")
    assert chk.max_ratio == 0.0 and chk.passed


def test_delta_shift_keeps_estimate_total():
    # compactly supported datum: the excess is zero on part of the grid
    tr = _short_run()
    chk = gradient_estimate_check(tr, "GradEst1", delta=1e-3)
    assert np.all(np.isfinite(chk.ratio))
    with pytest.raises(ValueError):
        gradient_estimate_check(tr, "GradEst1", delta=-1.0)
    with pytest.raises(ValueError):
        gradient_estimate_check(tr, "GradEst1", delta=0.0)


def test_mass_balance_residual_errors():
    tr = _short_run()
    assert mass_balance_residual(tr, 0.2) < 0.05
    with pytest.raises(LedgerError):
        mass_balance_residual(tr, 5.0)


def test_power_signatures():
    sig = power_regime_signatures(Params(1.5, 0.9, 1))
    assert len(sig) == 2
    for linf, l1 in sig.values():
        assert linf < 0 and l1 <= 0
    assert math.isclose(min(v[0] for v in sig.values()), -2.0)
