"""Analytical building blocks of the Bernstein gradient estimates, checked
without running the PDE.

With v = phi^{-1}(u), w = |grad v|^2 and rho = phi'(phi^{-1}), the reaction
part of the inequality satisfied by w is

    R = 2(p-1) R1 w^{(2+p)/2} + 2(q-1) R2 w^{(2+q)/2},
    R1 = |rho|^{p-2} (k rho'^2 - rho rho''),   R2 = |rho|^{q-2} rho rho'.

This module evaluates R1, R2 for every choice of rho used in the estimates,
the time-only supersolutions W(t) fed to the comparison argument, and the
stationary power-law barriers.  The drift term of the inequality is not
modelled: only the reaction algebra and the time reductions are checked.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .exponents import (
    THRESHOLD_TOL,
    DomainError,
    Params,
    k_exponent,
    p_c,
    p_sc,
    sigma_constants,
)


class RhoId(str, Enum):
    POWER_SUPERCRIT_HIGH_Q = "PowerSupercritHighQ"
    POWER_SUPERCRIT_LOW_Q = "PowerSupercritLowQ"
    LOG_CRITICAL = "LogCritical"
    LOG_CRITICAL_EXT = "LogCriticalExt"
    IMPLICIT_SUBCRIT = "ImplicitSubcrit"
    HAMILTON_SQRT = "HamiltonSqrt"
    HAMILTON_POWER = "HamiltonPower"


class DerivativeMode(str, Enum):
    CLOSED = "Closed"
    FINITE_DIFFERENCE = "FiniteDifference"


def _eq(a, b):
    return abs(a - b) <= THRESHOLD_TOL


# -- the subcritical implicit rho ------------------------------------------------

def _subcrit_exponents(p: float, N: int):
    k = k_exponent(p, N)
    beta = 2.0 - p - 2.0 * k
    if not (beta > THRESHOLD_TOL and k < 1.0):
        raise DomainError(f"implicit rho needs p < p_c (2-p-2k > 0); got p={p!r}, N={N!r}")
    return k, beta


def subcrit_integral(s: float, k: float, beta: float) -> float:
    """I(s) = int_0^s z^{-k} (1 - z^beta)^{-1/2} dz for s in [0, 1].

    z = y^{1/(1-k)} removes the z^{-k} singularity on [0, 1/2]; 1 - z = w^2
    removes the inverse square root at z = 1 on [1/2, 1].
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s!r}")
    if s == 0.0:
        return 0.0
    a = 1.0 / (1.0 - k)
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)

    def head(y):
        z = y ** a
        return a / math.sqrt(-math.expm1(beta * math.log(z))) if z > 0 else a

    s1 = min(s, 0.5)
    total, _ = quad(head, 0.0, s1 ** (1.0 - k), **opts)
    if s > 0.5:
        def tail(w):
            if w == 0.0:
                return 2.0 / math.sqrt(beta)
            one_minus_zb = -math.expm1(beta * math.log1p(-w * w))
            return 2.0 * w / math.sqrt(one_minus_zb) * (1.0 - w * w) ** (-k)
        w_lo = math.sqrt(1.0 - s)
        part, _ = quad(tail, w_lo, math.sqrt(0.5), **opts)
        total += part
    return total


@lru_cache(maxsize=64)
def _full_integral(p: float, N: int) -> float:
    k, beta = _subcrit_exponents(p, N)
    return subcrit_integral(1.0, k, beta)


def subcrit_kappa(p: float, N: int) -> float:
    """kappa in K_0 = kappa * ||u0||_inf^{2/p}."""
    _, beta = _subcrit_exponents(p, N)
    I1 = _full_integral(p, N)
    return (2.0 / (beta * I1 * I1)) ** (1.0 / p)


def rho_subcritical(r: float, params: Params, u0_inf: float) -> float:
    """Solve sqrt((2-p-2k) K0^p / 2) * I(rho/K0) = r, normalized by
    rho(u0_inf) = K0, by quadrature and bracketing root finding."""
    p, N = params.p, params.N
    k, beta = _subcrit_exponents(p, N)
    if not u0_inf > 0:
        raise ValueError("u0_inf must be positive")
    if not (0.0 <= r <= u0_inf * (1 + 1e-15)):
        raise DomainError(f"r must lie in [0, u0_inf], got {r!r}")
    K0 = subcrit_kappa(p, N) * u0_inf ** (2.0 / p)
    if r == 0.0:
        return 0.0
    I1 = _full_integral(p, N)
    target = I1 * min(r / u0_inf, 1.0)
    if target >= I1:
        return K0
    return K0 * _invert_integral(target, k, beta)


def _invert_integral(target: float, k: float, beta: float) -> float:
    """s in (0, 1) with I(s) = target: Newton on I' = s^{-k}(1-s^beta)^{-1/2},
    bisecting whenever a step leaves the bracket, brentq if that stalls."""
    def f(s):
        return subcrit_integral(s, k, beta) - target

    rtol = 4 * np.finfo(float).eps
    lo, hi = 0.0, 1.0
    # I(s) ~ s^{1-k}/(1-k) near 0 gives the starting point
    s = min(((1.0 - k) * target) ** (1.0 / (1.0 - k)), 0.5)
    for _ in range(60):
        fs = f(s)
        if fs == 0.0:
            return s
        if fs < 0:
            lo = s
        else:
            hi = s
        step = fs * s ** k * math.sqrt(-math.expm1(beta * math.log(s)))
        new = s - step
        if not lo < new < hi:
            new = 0.5 * (lo + hi)
        if abs(new - s) <= rtol * new:
            return new
        s = new
    return brentq(f, lo, hi, xtol=1e-300, rtol=rtol, maxiter=400)


# -- rho choices ------------------------------------------------------------------

@dataclass(frozen=True)
class RhoChoice:
    id: RhoId
    params: Params
    M_or_K: Optional[float] = None   # ||u0||_inf for the log/sqrt/implicit choices

    def __post_init__(self):
        object.__setattr__(self, "id", RhoId(self.id))
        _validate_choice(self)

    @property
    def u0_inf(self) -> float:
        return 1.0 if self.M_or_K is None else float(self.M_or_K)

    def domain(self) -> tuple:
        """Interval of u values sampled by certify_identity."""
        if self.id in (RhoId.POWER_SUPERCRIT_HIGH_Q, RhoId.POWER_SUPERCRIT_LOW_Q,
                       RhoId.HAMILTON_POWER):
            return (1e-3, 10.0)
        u0 = self.u0_inf
        if self.id is RhoId.LOG_CRITICAL:
            return (1e-3 * u0, u0)
        if self.id is RhoId.LOG_CRITICAL_EXT:
            # R2 = (N+1)/N (log(M/u) - 1) vanishes at u = u0; stay clear of the
            # zero so relative residuals stay meaningful
            return (1e-3 * u0, 0.5 * u0)
        if self.id is RhoId.IMPLICIT_SUBCRIT:
            return (1e-3 * u0, 0.9 * u0)
        return (1e-3 * u0, (1 - 1e-2) * u0)


def _validate_choice(c: RhoChoice) -> None:
    p, q, N = c.params.p, c.params.q, c.params.N
    k = k_exponent(p, N)
    pc = p_c(N)
    if c.M_or_K is not None and not c.M_or_K > 0:
        raise DomainError("the auxiliary constant must be positive")
    if c.id is RhoId.POWER_SUPERCRIT_HIGH_Q:
        if not 2 * k + p - 2 > THRESHOLD_TOL:
            raise DomainError("PowerSupercritHighQ needs 2k+p-2 > 0, i.e. p > p_c")
    elif c.id is RhoId.POWER_SUPERCRIT_LOW_Q:
        if not k + p - q - 1 > THRESHOLD_TOL:
            raise DomainError("PowerSupercritLowQ needs k+p-q-1 > 0")
    elif c.id in (RhoId.LOG_CRITICAL, RhoId.LOG_CRITICAL_EXT):
        if not (_eq(p, pc) and N >= 2):
            raise DomainError(f"{c.id.value} needs p = p_c and N >= 2")
        if c.id is RhoId.LOG_CRITICAL_EXT and not _eq(q, N / (N + 1.0)):
            raise DomainError("LogCriticalExt needs q = N/(N+1)")
    elif c.id is RhoId.IMPLICIT_SUBCRIT:
        _subcrit_exponents(p, N)
    elif c.id is RhoId.HAMILTON_SQRT:
        if not (q < 1 - THRESHOLD_TOL and p > p_sc(N) + THRESHOLD_TOL):
            raise DomainError("HamiltonSqrt needs q < 1 and p > p_sc")
    elif c.id is RhoId.HAMILTON_POWER:
        if not q > 1 + THRESHOLD_TOL:
            raise DomainError("HamiltonPower needs q > 1")


def _power_coefficients(c: RhoChoice):
    """rho = coef * u^m for the power choices."""
    p, q, N = c.params.p, c.params.q, c.params.N
    k = k_exponent(p, N)
    if c.id is RhoId.POWER_SUPERCRIT_HIGH_Q:
        return (p * p / (2 * (2 * k + p - 2))) ** (1 / p), 2 / p
    if c.id is RhoId.POWER_SUPERCRIT_LOW_Q:
        return ((p - q) / (k + p - q - 1)) ** (1 / (p - q)), 1 / (p - q)
    if c.id is RhoId.HAMILTON_POWER:
        return 1.0, 1 / q
    raise ValueError(c.id)


def rho_value(c: RhoChoice, u: float) -> float:
    N = c.params.N
    if c.id in (RhoId.POWER_SUPERCRIT_HIGH_Q, RhoId.POWER_SUPERCRIT_LOW_Q, RhoId.HAMILTON_POWER):
        coef, m = _power_coefficients(c)
        return coef * u ** m
    if c.id in (RhoId.LOG_CRITICAL, RhoId.LOG_CRITICAL_EXT):
        L = math.log(math.e * c.u0_inf / u)
        e = (N + 1) / (2 * N) if c.id is RhoId.LOG_CRITICAL else (N + 1) / N
        return u ** ((N + 1) / N) * L ** e
    if c.id is RhoId.IMPLICIT_SUBCRIT:
        return rho_subcritical(u, c.params, c.u0_inf)
    if c.id is RhoId.HAMILTON_SQRT:
        return -2.0 * math.sqrt(c.u0_inf - u)
    raise ValueError(c.id)  # pragma: no cover


def _closed_derivatives(c: RhoChoice, u: float):
    """(rho, rho', rho'') from hand-derived formulas."""
    p, N = c.params.p, c.params.N
    k = k_exponent(p, N)
    if c.id in (RhoId.POWER_SUPERCRIT_HIGH_Q, RhoId.POWER_SUPERCRIT_LOW_Q, RhoId.HAMILTON_POWER):
        coef, m = _power_coefficients(c)
        return coef * u ** m, coef * m * u ** (m - 1), coef * m * (m - 1) * u ** (m - 2)
    if c.id is RhoId.LOG_CRITICAL:
        L = math.log(math.e * c.u0_inf / u)
        rho = u ** ((N + 1) / N) * L ** ((N + 1) / (2 * N))
        d1 = (N + 1) / (2 * N) * u ** (1 / N) * (
            2 * L ** ((N + 1) / (2 * N)) - L ** (-(N - 1) / (2 * N)))
        d2 = u ** (-(N - 1) / N) * (
            (N + 1) / N ** 2 * L ** ((N + 1) / (2 * N))
            - (N + 1) * (N + 2) / (2 * N ** 2) * L ** (-(N - 1) / (2 * N))
            - (N + 1) * (N - 1) / (4 * N ** 2) * L ** (-(N - 1) / (2 * N) - 1))
        return rho, d1, d2
    if c.id is RhoId.LOG_CRITICAL_EXT:
        L = math.log(math.e * c.u0_inf / u)
        rho = u ** ((N + 1) / N) * L ** ((N + 1) / N)
        d1 = (N + 1) / N * u ** (1 / N) * (L ** ((N + 1) / N) - L ** (1 / N))
        d2 = (N + 1) / N ** 2 * u ** (-(N - 1) / N) * (
            L ** ((N + 1) / N) - (N + 2) * L ** (1 / N) + L ** (-(N - 1) / N))
        return rho, d1, d2
    if c.id is RhoId.IMPLICIT_SUBCRIT:
        # rho' = f(rho) = rho^k g(rho), g = (2 (K0^b - rho^b) / b)^{1/2}, g g' = -rho^{1-p-2k};
        # rho'' = f f'(rho).
        b = 2 - p - 2 * k
        K0 = subcrit_kappa(p, N) * c.u0_inf ** (2 / p)
        rho = rho_subcritical(u, c.params, c.u0_inf)
        g = math.sqrt(2 * (K0 ** b - rho ** b) / b)
        dg = -rho ** (1 - p - 2 * k) / g
        f = rho ** k * g
        df = k * rho ** (k - 1) * g + rho ** k * dg
        return rho, f, f * df
    if c.id is RhoId.HAMILTON_SQRT:
        s = c.u0_inf - u
        return -2.0 * math.sqrt(s), s ** -0.5, 0.5 * s ** -1.5
    raise ValueError(c.id)  # pragma: no cover


def _fd_derivatives(c: RhoChoice, u: float):
    """(rho, rho', rho'') by 5-point central differences of rho_value."""
    hi_dom = math.inf
    if c.id in (RhoId.LOG_CRITICAL, RhoId.LOG_CRITICAL_EXT):
        hi_dom = math.e * c.u0_inf
    elif c.id in (RhoId.IMPLICIT_SUBCRIT, RhoId.HAMILTON_SQRT):
        hi_dom = c.u0_inf
    rel = 1e-2 if c.id is RhoId.IMPLICIT_SUBCRIT else 1e-3
    # the step scales with the distance to the nearest singular point of rho
    near = hi_dom - u if c.id is RhoId.HAMILTON_SQRT else min(u, hi_dom - u)
    h = rel * near
    f = [rho_value(c, u + j * h) for j in (-2, -1, 0, 1, 2)]
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
    return f[2], d1, d2


def eval_R1_R2(choice: RhoChoice, u: float, derivative_mode=DerivativeMode.CLOSED):
    """R1 = |rho|^{p-2}(k rho'^2 - rho rho''), R2 = |rho|^{q-2} rho rho'."""
    unbounded = choice.id in (RhoId.POWER_SUPERCRIT_HIGH_Q, RhoId.POWER_SUPERCRIT_LOW_Q,
                              RhoId.HAMILTON_POWER)
    if not (u > 0 and (unbounded or u <= choice.u0_inf * (1 + 1e-15))):
        raise DomainError(f"u={u!r} outside the domain of {choice.id.value}")
    if choice.id is RhoId.HAMILTON_SQRT and not u < choice.u0_inf:
        raise DomainError("HamiltonSqrt needs u < ||u0||_inf")
    p, q, N = choice.params.p, choice.params.q, choice.params.N
    k = k_exponent(p, N)
    mode = DerivativeMode(derivative_mode)
    rho, d1, d2 = (_closed_derivatives if mode is DerivativeMode.CLOSED else _fd_derivatives)(choice, u)
    a = abs(rho)
    R1 = a ** (p - 2) * (k * d1 * d1 - rho * d2)
    R2 = a ** (q - 2) * rho * d1
    return R1, R2


def expected_R1_R2(choice: RhoChoice, u: float):
    """Simplified R1, R2 as displayed alongside each choice."""
    p, q, N = choice.params.p, choice.params.q, choice.params.N
    k = k_exponent(p, N)
    if choice.id is RhoId.POWER_SUPERCRIT_HIGH_Q:
        c = p * p / (2 * (2 * k + p - 2))
        return 1.0, (2 / p) * c ** (q / p) * u ** ((2 * q - p) / p)
    if choice.id is RhoId.POWER_SUPERCRIT_LOW_Q:
        r = 1 / (p - q) * ((p - q) / (k + p - q - 1)) ** (q / (p - q)) * u ** ((2 * q - p) / (p - q))
        return r, r
    if choice.id is RhoId.LOG_CRITICAL:
        L = math.log(math.e * choice.u0_inf / u)
        R1 = (N + 1) / (2 * N) + (N + 1) / (4 * N) / L
        R2 = (N + 1) / (2 * N) * u ** ((q * (N + 1) - N) / N) * (
            2 * L ** ((N + 1) * q / (2 * N)) - L ** (((N + 1) * q - 2 * N) / (2 * N)))
        return R1, R2
    if choice.id is RhoId.LOG_CRITICAL_EXT:
        L = math.log(math.e * choice.u0_inf / u)
        return (N + 1) / N * L, (N + 1) / N * (L - 1)
    if choice.id is RhoId.IMPLICIT_SUBCRIT:
        b = 2 - p - 2 * k
        K0 = subcrit_kappa(p, N) * choice.u0_inf ** (2 / p)
        rho = rho_subcritical(u, choice.params, choice.u0_inf)
        return 1.0, rho ** (q - 1 + k) * math.sqrt(2 * (K0 ** b - rho ** b) / b)
    if choice.id is RhoId.HAMILTON_SQRT:
        v = math.sqrt(choice.u0_inf - u)
        return 2 ** (p - 2) * (1 + k) * v ** (p - 4), -2 ** (q - 1) * v ** (q - 2)
    if choice.id is RhoId.HAMILTON_POWER:
        return (k + q - 1) / q ** 2 * u ** ((p - 2 * q) / q), 1 / q
    raise ValueError(choice.id)  # pragma: no cover


@dataclass
class IdentityReport:
    choice: RhoChoice
    sample_points: np.ndarray
    residuals: np.ndarray            # relative |closed - expected| per point, worst of R1/R2
    fd_residuals: np.ndarray         # relative |fd - closed| per point, worst of R1/R2
    max_residual: float
    max_fd_residual: float
    sign_ok: bool
    passed: bool
    closed_tol: float = 1e-6
    fd_tol: float = 1e-4

    def as_dict(self) -> dict:
        return {
            "choice": self.choice.id.value,
            "params": self.choice.params.as_dict(),
            "M_or_K": self.choice.M_or_K,
            "n_samples": int(self.sample_points.size),
            "max_residual": self.max_residual,
            "max_fd_residual": self.max_fd_residual,
            "sign_ok": self.sign_ok,
            "passed": self.passed,
        }


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def certify_identity(choice: RhoChoice, n_samples: int = 64,
                     closed_tol: float = 1e-6, fd_tol: float = 1e-4) -> IdentityReport:
    """Sample u log-uniformly over the choice's interval and compare the closed
    R1, R2 with their simplified forms and with the finite-difference oracle.

    Sign conditions used downstream are checked too: R1 >= (N+1)/2N for
    LogCritical, R2 > 0 for LogCritical, R1 > 0 for HamiltonSqrt.
    """
    lo, hi = choice.domain()
    us = np.exp(np.linspace(math.log(lo), math.log(hi), n_samples))
    res = np.empty(n_samples)
    fd = np.empty(n_samples)
    sign_ok = True
    N = choice.params.N
    for i, u in enumerate(us):
        R1, R2 = eval_R1_R2(choice, float(u), DerivativeMode.CLOSED)
        E1, E2 = expected_R1_R2(choice, float(u))
        F1, F2 = eval_R1_R2(choice, float(u), DerivativeMode.FINITE_DIFFERENCE)
        res[i] = max(_rel(R1, E1), _rel(R2, E2))
        fd[i] = max(_rel(F1, R1), _rel(F2, R2))
        if choice.id is RhoId.LOG_CRITICAL:
            sign_ok &= R1 >= (N + 1) / (2 * N) * (1 - 1e-12) and R2 > 0
        if choice.id is RhoId.HAMILTON_SQRT:
            sign_ok &= R1 > 0
    mr, mf = float(res.max()), float(fd.max())
    return IdentityReport(choice, us, res, fd, mr, mf, bool(sign_ok),
                          bool(mr < closed_tol and mf < fd_tol and sign_ok), closed_tol, fd_tol)


def rho_growth_constant(params: Params, u0_inf: float, n_samples: int = 32) -> float:
    """Empirical C in rho(r) <= C K0^{(2-p-2k)/2(1-k)} r^{1/(1-k)}."""
    p, N = params.p, params.N
    k, beta = _subcrit_exponents(p, N)
    K0 = subcrit_kappa(p, N) * u0_inf ** (2 / p)
    rs = np.exp(np.linspace(math.log(1e-4 * u0_inf), 0.0 + math.log(u0_inf), n_samples))
    vals = [rho_subcritical(float(r), params, u0_inf) / (K0 ** (beta / (2 * (1 - k))) * r ** (1 / (1 - k)))
            for r in rs]
    return float(max(vals))


def subcritical_ode_residuals(params: Params, u0_inf: float, n_samples: int = 32) -> np.ndarray:
    """|k rho'^2 - rho rho'' - rho^{2-p}| at interior r, derivatives by finite
    differences of the computed rho (independent of the closed derivatives)."""
    choice = RhoChoice(RhoId.IMPLICIT_SUBCRIT, params, u0_inf)
    k = k_exponent(params.p, params.N)
    rs = np.linspace(0.05, 0.95, n_samples) * u0_inf
    out = np.empty(n_samples)
    for i, r in enumerate(rs):
        rho, d1, d2 = _fd_derivatives(choice, float(r))
        out[i] = abs(k * d1 * d1 - rho * d2 - rho ** (2 - params.p))
    return out


# -- time-only supersolutions ----------------------------------------------------------

class TimeSupersolution(str, Enum):
    HIGH_Q_CASE1 = "PowerHighQ_case1"      # q >= 1, p > p_c
    HIGH_Q_CASE2 = "PowerHighQ_case2"      # p/2 <= q < 1, p > p_c
    LOW_Q = "PowerLowQ"                    # q < p/2
    LOG_CASE1 = "LogCritical_case1"        # p = p_c, q >= 1
    LOG_CASE2 = "LogCritical_case2"        # p = p_c, N/(N+1) < q < 1
    LOG_CASE3 = "LogCritical_case3"        # p = p_c, q = N/(N+1)
    HJ_CASE1 = "HJ_case1"                  # q < 1
    HJ_CASE2 = "HJ_case2"                  # q > 1


@dataclass
class CheckReport:
    name: str
    ok: bool
    min_margin: float
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "ok": self.ok, "min_margin": self.min_margin,
                "details": self.details}


def _t_grid(t_range=(1e-3, 1e3), n=241):
    return np.exp(np.linspace(math.log(t_range[0]), math.log(t_range[1]), n))


def _gate(which: TimeSupersolution, params: Params):
    p, q, N = params.p, params.q, params.N
    pc = p_c(N)
    checks = {
        TimeSupersolution.HIGH_Q_CASE1: (p > pc + THRESHOLD_TOL and q >= 1 - THRESHOLD_TOL,
                                         "p > p_c and q >= 1"),
        TimeSupersolution.HIGH_Q_CASE2: (p > pc + THRESHOLD_TOL and p / 2 - THRESHOLD_TOL <= q < 1 - THRESHOLD_TOL,
                                         "p > p_c and p/2 <= q < 1"),
        TimeSupersolution.LOW_Q: (p >= pc - THRESHOLD_TOL and q < p / 2 - THRESHOLD_TOL,
                                  "p >= p_c and q < p/2"),
        TimeSupersolution.LOG_CASE1: (_eq(p, pc) and N >= 2 and q >= 1 - THRESHOLD_TOL,
                                      "p = p_c, N >= 2, q >= 1"),
        TimeSupersolution.LOG_CASE2: (_eq(p, pc) and N >= 2 and N / (N + 1) + THRESHOLD_TOL < q < 1 - THRESHOLD_TOL,
                                      "p = p_c, N >= 2, N/(N+1) < q < 1"),
        TimeSupersolution.LOG_CASE3: (_eq(p, pc) and N >= 2 and _eq(q, N / (N + 1)),
                                      "p = p_c, N >= 2, q = N/(N+1)"),
        TimeSupersolution.HJ_CASE1: (q < 1 - THRESHOLD_TOL and p > p_sc(N) + THRESHOLD_TOL,
                                     "q < 1 and p > p_sc"),
        TimeSupersolution.HJ_CASE2: (q > 1 + THRESHOLD_TOL, "q > 1"),
    }
    ok, what = checks[which]
    if not ok:
        raise DomainError(f"{which.value} needs {what}; got p={p!r}, q={q!r}, N={N!r}")


def hj_case1_threshold(q: float) -> float:
    """Smallest K with LW >= 0 for W = K ||u0||^{(2-q)/q} t^{-2/q}:
    K^{q/2} = 2^{1-q} / (q (1-q))."""
    return (2 ** (1 - q) / (q * (1 - q))) ** (2 / q)


def hj_case1_printed_K(q: float) -> float:
    """The constant K^{q/2} = 2^{1-q}(1-q^2) as printed next to the HJ estimate."""
    return (2 ** (1 - q) * (1 - q * q)) ** (2 / q)


def low_q_threshold(params: Params) -> float:
    """Closed sufficient C for the q < p/2 supersolution."""
    p, q, N = params.p, params.q, params.N
    k = k_exponent(p, N)
    return ((2 * (p - q) / (p * (p - 1))) ** (2 / p)
            * ((k + p - q - 1) / (p - q)) ** (2 * q / (p * (p - q))))


def _time_terms(which: TimeSupersolution, params: Params, u0_inf: float, t: np.ndarray,
                C: Optional[float] = None):
    """(dW/dt, reaction lower bound) on the t grid, worst case over u."""
    p, q, N = params.p, params.q, params.N
    k = k_exponent(p, N)
    pc = p_c(N)
    if which is TimeSupersolution.HIGH_Q_CASE1:
        a = (p * (p - 1)) ** (-2 / p)
        W = a * t ** (-2 / p)
        return -(2 / p) * W / t, 2 * (p - 1) * W ** ((p + 2) / 2)
    if which is TimeSupersolution.HIGH_Q_CASE2:
        c1 = 4 * (1 - q) / p * (p * p / (2 * (2 * k + p - 2))) ** (q / p) * u0_inf ** ((2 * q - p) / p)
        b = (p * (p - 1) / 2) ** (-2 / p)
        W = (2 * c1) ** (2 / (p - q)) + b * t ** (-2 / p)
        dW = -(2 / p) * b * t ** (-2 / p - 1)
        return dW, 2 * (p - 1) * W ** ((q + 2) / 2) * (W ** ((p - q) / 2) - c1)
    if which is TimeSupersolution.LOW_Q:
        if C is None:
            C = low_q_threshold(params)
        K = C * u0_inf ** (2 * (p - 2 * q) / (p * (p - q)))
        R2min = 1 / (p - q) * ((p - q) / (k + p - q - 1)) ** (q / (p - q)) * u0_inf ** ((2 * q - p) / (p - q))
        W = (2 * (1 - q) / (p - 1)) ** (2 / (p - q)) + K * t ** (-2 / p)
        dW = -(2 / p) * K * t ** (-2 / p - 1)
        return dW, 2 * (p - 1) * R2min * W ** ((q + 2) / 2) * (W ** ((p - q) / 2) - (1 - q) / (p - 1))
    if which is TimeSupersolution.LOG_CASE1:
        a = ((N + 1) / (N - 1)) ** (2 / pc)
        W = a * t ** (-2 / pc)
        return -(2 / pc) * W / t, (N - 1) / N * W ** ((pc + 2) / 2)
    if which is TimeSupersolution.LOG_CASE2:
        aa = (q * (N + 1) - N) / N
        bb = q * (N + 1) / (2 * N)
        C1 = (N + 1) / N * math.exp(aa - bb) * (bb / aa) ** bb
        c2 = 2 * N * (1 - q) * C1 / (N - 1) * u0_inf ** aa
        b = (2 * (N + 1) / (N - 1)) ** (2 / pc)
        W = (2 * c2) ** (2 / (pc - q)) + b * t ** (-2 / pc)
        dW = -(2 / pc) * b * t ** (-2 / pc - 1)
        return dW, (N - 1) / N * W ** ((q + 2) / 2) * (W ** ((pc - q) / 2) - c2)
    if which is TimeSupersolution.LOG_CASE3:
        # worst case log M - log u = 1 (the bracket is non-negative on W's range)
        b = ((N + 1) / (N - 1)) ** ((N + 1) / N)
        W = (2 / (N - 1)) ** (2 * (N + 1) / N) + b * t ** (-(N + 1) / N)
        dW = -(N + 1) / N * b * t ** (-(N + 1) / N - 1)
        return dW, (1 / N) * (2 * (N - 1) * W ** ((pc + 2) / 2) - 2 * W ** ((q + 2) / 2))
    if which is TimeSupersolution.HJ_CASE1:
        K = hj_case1_threshold(q) if C is None else C
        W = K * u0_inf ** ((2 - q) / q) * t ** (-2 / q)
        # worst case over u in [0, ||u0||): (||u0|| - u)^{(q-2)/2} >= ||u0||^{(q-2)/2}
        return -(2 / q) * W / t, 2 ** q * (1 - q) * u0_inf ** ((q - 2) / 2) * W ** ((q + 2) / 2)
    if which is TimeSupersolution.HJ_CASE2:
        W = ((q - 1) * t) ** (-2 / q)
        return -(2 / q) * W / t, 2 * (q - 1) / q * W ** ((2 + q) / 2)
    raise ValueError(which)  # pragma: no cover


EXACT = (TimeSupersolution.HIGH_Q_CASE1, TimeSupersolution.HJ_CASE2, TimeSupersolution.LOG_CASE1)


def check_time_supersolution(which, params: Params, u0_inf: float = 1.0,
                             t_range=(1e-3, 1e3), C: Optional[float] = None,
                             n_t: int = 241) -> CheckReport:
    """Evaluate LW = dW/dt + reaction(W) >= 0 on a log grid of t.

    The margin is reported relative to the size of the two terms, so exact
    cancellations show up as rounding-level residuals.  ``C`` overrides the
    free constant of PowerLowQ (C in K = C ||u0||^{...}) or HJ_case1 (K).
    """
    which = TimeSupersolution(which)
    _gate(which, params)
    if not u0_inf > 0:
        raise ValueError("u0_inf must be positive")
    t = _t_grid(t_range, n_t)
    dW, react = _time_terms(which, params, u0_inf, t, C)
    LW = dW + react
    scale = np.maximum(np.abs(dW), np.abs(react))
    rel = LW / scale
    details = {"t_range": list(t_range), "n_t": n_t, "u0_inf": u0_inf,
               "max_abs_relative_residual": float(np.max(np.abs(rel)))}
    tol = 1e-12
    if which in EXACT:
        ok = bool(np.max(np.abs(rel)) < tol)
        details["exact_cancellation"] = True
    else:
        ok = bool(rel.min() >= -tol)
    if which is TimeSupersolution.LOW_Q:
        details["C_used"] = low_q_threshold(params) if C is None else C
        details["C_closed_threshold"] = low_q_threshold(params)
        details["C_min_bisection"] = minimal_constant(which, params, u0_inf, t_range)
    if which is TimeSupersolution.HJ_CASE1:
        q = params.q
        details["K_used"] = hj_case1_threshold(q) if C is None else C
        details["K_threshold"] = hj_case1_threshold(q)
        details["K_printed"] = hj_case1_printed_K(q)
        dWp, rp = _time_terms(which, params, u0_inf, t, hj_case1_printed_K(q))
        details["printed_K_min_margin"] = float(((dWp + rp) / np.maximum(np.abs(dWp), np.abs(rp))).min())
        details["K_min_bisection"] = minimal_constant(which, params, u0_inf, t_range)
    return CheckReport(which.value, ok, float(rel.min()), details)


def minimal_constant(which, params: Params, u0_inf: float = 1.0, t_range=(1e-3, 1e3),
                     rtol: float = 1e-10) -> float:
    """Smallest free constant (C for PowerLowQ, K for HJ_case1) keeping the
    margin non-negative on the t grid, by bisection."""
    which = TimeSupersolution(which)
    if which not in (TimeSupersolution.LOW_Q, TimeSupersolution.HJ_CASE1):
        raise ValueError("only PowerLowQ and HJ_case1 have a free constant")
    t = _t_grid(t_range)

    def margin(C):
        dW, r = _time_terms(which, params, u0_inf, t, C)
        return float(((dW + r) / np.maximum(np.abs(dW), np.abs(r))).min())

    hi = 1.0
    while margin(hi) < 0:
        hi *= 2.0
    lo = hi / 2.0
    while margin(lo) >= 0 and lo > 1e-300:
        lo /= 2.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


# -- stationary barriers ------------------------------------------------------------------

def power_profile_terms(A: float, alpha: float, params: Params, r):
    """For U = A r^{-alpha}: (-Delta_p U, |grad U|^q) in closed form.

    -Delta_p U = (alpha A)^{p-1} (N-1-(alpha+1)(p-1)) r^{-1-(alpha+1)(p-1)},
    |grad U|^q = (alpha A)^q r^{-(alpha+1) q}.
    """
    p, q, N = params.p, params.q, params.N
    r = np.asarray(r, dtype=float)
    diff = (alpha * A) ** (p - 1) * (N - 1 - (alpha + 1) * (p - 1)) * r ** (-1 - (alpha + 1) * (p - 1))
    absn = (alpha * A) ** q * r ** (-(alpha + 1) * q)
    return diff, absn


def check_stationary_supersolution(A: float, params: Params, radii: Sequence[float]) -> CheckReport:
    """E(r) = -Delta_p(A Sigma) + |grad(A Sigma)|^q for Sigma = r^{-alpha},
    alpha = (p-q)/(q-p+1).  Supersolution iff E >= 0; the report's margin is
    E relative to the larger of the two terms."""
    alpha, A0 = sigma_constants(params)
    if not A > 0:
        raise DomainError("A must be positive")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise DomainError("radii must be positive")
    d, a = power_profile_terms(A, alpha, params, radii)
    E = d + a
    rel = E / np.maximum(np.abs(d), np.abs(a))
    tol = 1e-12
    return CheckReport("StationarySigma", bool(rel.min() >= -tol), float(rel.min()),
                       {"A": A, "A0": A0, "alpha": alpha, "radii": radii.tolist(),
                        "E": E.tolist(), "gap_coefficient": float(E[0] * radii[0] ** ((alpha + 1) * params.q)),
                        "homogeneity": [-1 - (alpha + 1) * (params.p - 1), -(alpha + 1) * params.q]})


def check_static_barrier_pc(params: Params, C_0: float, radii: Sequence[float]) -> CheckReport:
    """C_0 |x|^{-N} at p = p_c: the diffusion term vanishes identically and the
    absorption term is non-negative."""
    p, q, N = params.p, params.q, params.N
    if not _eq(p, p_c(N)):
        raise DomainError(f"the static barrier needs p = p_c = {p_c(N)!r}, got p={p!r}")
    if not C_0 > 0:
        raise DomainError("C_0 must be positive")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise DomainError("radii must be positive")
    d, a = power_profile_terms(C_0, float(N), params, radii)
    E = d + a
    scale = np.maximum(np.abs(d), np.abs(a))
    rel = np.where(scale > 0, E / np.where(scale > 0, scale, 1.0), 0.0)
    return CheckReport("StaticBarrierPc", bool(rel.min() >= -1e-12), float(rel.min()),
                       {"C_0": C_0, "radii": radii.tolist(), "E": E.tolist(),
                        "diffusion_term": d.tolist(),
                        "homogeneity": [-1 - (N + 1) * (p - 1), -(N + 1) * q]})
