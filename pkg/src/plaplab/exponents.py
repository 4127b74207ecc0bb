"""Critical exponents and regime classification for

    u_t - Delta_p u + |grad u|^q = 0,   1 < p < 2,  q > 0,  x in R^N.

Everything here is a pure function of the triple (p, q, N).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

# Single tolerance for comparing an input exponent against a derived threshold.
THRESHOLD_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an exponent triple or a derived quantity leaves its domain."""


class Regime(str, Enum):
    DIFFUSION_DECAY = "PositivityDiffusionDecay"
    FAST_ALGEBRAIC = "PositivityFastAlgebraic"
    EXPONENTIAL = "PositivityExponential"
    EXTINCTION = "Extinction"


@dataclass(frozen=True)
class Params:
    p: float
    q: float
    N: int

    def __post_init__(self):
        p, q, N = self.p, self.q, self.N
        if not (isinstance(p, (int, float)) and math.isfinite(p) and 1.0 < p < 2.0):
            raise DomainError(f"p must lie in (1, 2), got {p!r}")
        if not (isinstance(q, (int, float)) and math.isfinite(q) and q > 0.0):
            raise DomainError(f"q must be positive, got {q!r}")
        if isinstance(N, bool) or not isinstance(N, int) or N < 1:
            raise DomainError(f"N must be an integer >= 1, got {N!r}")
        object.__setattr__(self, "p", float(p))
        object.__setattr__(self, "q", float(q))

    def as_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "N": self.N}


@dataclass(frozen=True)
class CriticalExponents:
    p_c: float
    p_sc: float
    q_star: float
    k: float
    q_1: float
    xi: Optional[float] = None
    eta: Optional[float] = None
    theta: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RatePrediction:
    """Predicted large-time behaviour.

    ``linf_exponent``/``l1_exponent`` are powers of t; they are ``None`` when the
    prediction is exponential decay, extinction, or when no rate is known.
    """

    regime: Regime
    decay_case: str
    linf_exponent: Optional[float]
    l1_exponent: Optional[float]
    l1_limit_positive: bool
    fast_decay_data_required: bool
    exponential: bool = False
    branch: Optional[str] = None
    positivity_guaranteed: bool = False

    def as_dict(self) -> dict:
        d = asdict(self)
        d["regime"] = self.regime.value
        return d


def _gt(a: float, b: float) -> bool:
    return a > b + THRESHOLD_TOL


def _lt(a: float, b: float) -> bool:
    return a < b - THRESHOLD_TOL


def _eq(a: float, b: float) -> bool:
    return abs(a - b) <= THRESHOLD_TOL


def p_c(N: int) -> float:
    return 2.0 * N / (N + 1.0)


def p_sc(N: int) -> float:
    return 2.0 * (N + 1.0) / (N + 3.0)


def k_exponent(p: float, N: int) -> float:
    return (2.0 - p) * (p * (N + 3.0) - 2.0 * (N + 1.0)) / (4.0 * (p - 1.0))


def critical_exponents(params: Params) -> CriticalExponents:
    p, q, N = params.p, params.q, params.N
    qs = p - N / (N + 1.0)
    xi = eta = theta = None
    dxi = q * (N + 1.0) - N
    if dxi > 0.0:
        xi = 1.0 / dxi
    deta = N * (p - 2.0) + p
    if deta > 0.0:
        eta = 1.0 / deta
    if q < qs:
        theta = (N + 1.0) * (qs - q) / (p - q)
    return CriticalExponents(
        p_c=p_c(N),
        p_sc=p_sc(N),
        q_star=qs,
        k=k_exponent(p, N),
        q_1=max(p - 1.0, N / (N + 1.0)),
        xi=xi,
        eta=eta,
        theta=theta,
    )


def positivity_guaranteed(params: Params) -> bool:
    """True when every nonzero solution is positive everywhere for t > 0."""
    p, q, N = params.p, params.q, params.N
    pc = p_c(N)
    if _gt(p, pc):
        return not _lt(q, p / 2.0)
    if _eq(p, pc):
        return _gt(q, pc / 2.0)
    return False


def l1_limit_positive(params: Params) -> bool:
    # A positive L1 limit needs mass-conserving diffusion (p >= p_c) and weak
    # absorption (q > q_star); below p_c every solution dies out.
    p, q, N = params.p, params.q, params.N
    return (not _lt(p, p_c(N))) and _gt(q, p - N / (N + 1.0))


def _decay_case(params: Params):
    """Large-time behaviour valid for every integrable datum.

    Returns (case, regime, linf_exponent, exponential, branch).
    """
    p, q, N = params.p, params.q, params.N
    ce = critical_exponents(params)
    pc, qs, qN = ce.p_c, ce.q_star, N / (N + 1.0)
    if _lt(p, pc):
        return "iv", Regime.EXTINCTION, None, False, None
    if _eq(p, pc):
        if _lt(q, qN):
            return "iv", Regime.EXTINCTION, None, False, None
        return "iii", Regime.EXPONENTIAL, None, True, "p=p_c,q>=p_c/2"
    # p > p_c
    if _gt(q, qs):
        return "i", Regime.DIFFUSION_DECAY, -N * ce.eta, False, None
    if _gt(q, qN):
        return "ii", Regime.FAST_ALGEBRAIC, -N * ce.xi, False, None
    if _eq(q, qN):
        return "iii", Regime.EXPONENTIAL, None, True, "p>p_c,q=N/(N+1)"
    return "iv", Regime.EXTINCTION, None, False, None


def classify(params: Params, fast_decay_data: bool = False) -> RatePrediction:
    """Predicted regime and rates for (p, q, N).

    With ``fast_decay_data`` the datum is assumed to decay at infinity at
    least like |x|^{-(p-q)/(q-p+1)} (or the extinction tail when q < p/2), which
    sharpens the prediction for q <= q_star.
    """
    p, q, N = params.p, params.q, params.N
    ce = critical_exponents(params)
    pc, qs = ce.p_c, ce.q_star
    case, regime, linf, expo, branch = _decay_case(params)
    l1 = None
    needs_tail = False
    if fast_decay_data and not _lt(p, pc):
        half = p / 2.0
        if _lt(q, half):
            regime, linf, expo, branch = Regime.EXTINCTION, None, False, None
            needs_tail = True
        elif _eq(q, half):
            regime, linf, expo = Regime.EXPONENTIAL, None, True
            needs_tail = True
        elif _lt(q, qs):
            regime = Regime.FAST_ALGEBRAIC
            linf = -(p - q) / (2.0 * q - p)
            l1 = -(N + 1.0) * (qs - q) / (2.0 * q - p)
            expo = False
            needs_tail = True
        else:
            regime = Regime.DIFFUSION_DECAY
            if _gt(p, pc):
                linf, expo = -N * ce.eta, False
            else:
                # At p = p_c the diffusion itself decays exponentially.
                linf, expo = None, True
    return RatePrediction(
        regime=regime,
        decay_case=case,
        linf_exponent=linf,
        l1_exponent=l1,
        l1_limit_positive=l1_limit_positive(params),
        fast_decay_data_required=needs_tail,
        exponential=expo,
        branch=branch,
        positivity_guaranteed=positivity_guaranteed(params),
    )


def sigma_constants(params: Params) -> tuple[float, float]:
    """Tail exponent alpha and threshold amplitude A_0 of the stationary
    supersolution A |x|^{-alpha}, valid for p - 1 < q < q_star."""
    p, q, N = params.p, params.q, params.N
    qs = p - N / (N + 1.0)
    if not (q > p - 1.0 + THRESHOLD_TOL and q < qs - THRESHOLD_TOL):
        raise DomainError(f"need p-1 < q < q_star = {qs!r}, got q={q!r}")
    g = q - p + 1.0
    alpha = (p - q) / g
    inner = (N * (p - 1.0) - q * (N - 1.0)) / g
    A0 = (g / (p - q)) * inner ** (1.0 / g) if inner > 0.0 else 0.0
    return alpha, A0


def extinction_lower_exponents(params: Params) -> tuple[float, float]:
    """Exponents a, b with ||u||_1 >= C (T_e - t)^a and ||u||_inf >= C (T_e - t)^b."""
    p, q, N = params.p, params.q, params.N
    qs = p - N / (N + 1.0)
    d = p - 2.0 * q
    if d <= 0.0:
        raise DomainError("extinction lower bounds need q < p/2")
    return (N + 1.0) * (qs - q) / d, (p - q) / d


def gamma_bound(params: Params) -> float:
    """Supremum of admissible lifting exponents gamma."""
    p, q, N = params.p, params.q, params.N
    return min(p / 4.0, q / 2.0, p - 1.0, 1.0 - k_exponent(p, N))


def threshold_distance(params: Params) -> float:
    """Smallest relative distance from q to p/2, q_star and from p to p_c."""
    p, q, N = params.p, params.q, params.N
    qs = p - N / (N + 1.0)
    d = [abs(q - p / 2.0) / (p / 2.0), abs(p - p_c(N)) / p_c(N)]
    if qs > 0:
        d.append(abs(q - qs) / qs)
    return min(d)
