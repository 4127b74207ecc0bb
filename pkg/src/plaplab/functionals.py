"""Measurements on trajectories: norms, the mass ledger, decay fits,
extinction detection, positivity and the Bernstein gradient estimates.

All trajectory measurements act on the excess ``u_eps - eps^gamma`` (the
proxy for the physical solution) unless stated otherwise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .exponents import (
    THRESHOLD_TOL,
    DomainError,
    Params,
    Regime,
    classify,
    critical_exponents,
    extinction_lower_exponents,
)
from .grid import Field, face_differences
from .solver import Trajectory

DEFAULT_EXT_TOL_REL = 1e-4


class FitError(ValueError):
    pass


class LedgerError(ValueError):
    pass


# -- norms ----------------------------------------------------------------------

def l1_norm(field: Field) -> float:
    """Volume-weighted integral of |u| (trapezoid weights on the grid)."""
    return float(np.dot(field.grid.volumes, np.abs(field.values)))


def l_inf_norm(field: Field) -> float:
    return float(np.max(np.abs(field.values)))


def gn_ratio(field: Field) -> float:
    """||w||_inf / (||grad w||_inf^{N/(N+1)} ||w||_1^{1/(N+1)}).

    Bounded over any family of fields by the Gagliardo-Nirenberg inequality;
    invariant under w -> lambda*w.
    """
    N = field.grid.N
    w = field.values
    l1 = l1_norm(field)
    if l1 <= 0.0:
        raise ValueError("gn_ratio needs a field with positive mass")
    slope = float(np.max(np.abs(face_differences(w, field.grid.h))))
    if slope <= 0.0:
        raise ValueError("gn_ratio needs a nonconstant field")
    return l_inf_norm(field) / (slope ** (N / (N + 1.0)) * l1 ** (1.0 / (N + 1.0)))


# -- fits -------------------------------------------------------------------------

class FitKind(str, Enum):
    POWER = "PowerLaw"
    EXPONENTIAL = "Exponential"


@dataclass(frozen=True)
class FitResult:
    """Least-squares line through the transformed series.

    PowerLaw: log y = intercept + exponent_or_rate * log t.
    Exponential: log y = intercept - exponent_or_rate * t (a positive rate decays).
    """
    exponent_or_rate: float
    intercept: float
    r_squared: float
    window: tuple
    kind: FitKind
    n_points: int

    def as_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["window"] = list(self.window)
        return d


def default_window(t_end: float) -> tuple:
    """Last decade of simulated time."""
    return (t_end / 10.0, t_end)


def _line_fit(x: np.ndarray, y: np.ndarray):
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icpt), min(max(r2, 0.0), 1.0)


def _window_select(t, y, window, min_points: int = 8):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise FitError("time and value series differ in length")
    a, b = float(window[0]), float(window[1])
    if not a < b:
        raise FitError(f"fit window must satisfy t_a < t_b, got {window!r}")
    m = (t >= a) & (t <= b)
    if int(m.sum()) < min_points:
        raise FitError(f"fit window {window!r} holds {int(m.sum())} points, need >= {min_points}")
    tw, yw = t[m], y[m]
    if np.any(yw <= 0.0) or not np.all(np.isfinite(yw)):
        raise FitError("non-positive values in fit window (extinction reached?)")
    return tw, yw, (a, b)


def fit_power_decay(t, y, window, min_points: int = 8) -> FitResult:
    tw, yw, win = _window_select(t, y, window, min_points)
    if np.any(tw <= 0.0):
        raise FitError("power-law fit needs t > 0")
    s, c, r2 = _line_fit(np.log(tw), np.log(yw))
    return FitResult(s, c, r2, win, FitKind.POWER, tw.size)


def fit_exponential_decay(t, y, window, min_points: int = 8) -> FitResult:
    tw, yw, win = _window_select(t, y, window, min_points)
    s, c, r2 = _line_fit(tw, np.log(yw))
    return FitResult(-s, c, r2, win, FitKind.EXPONENTIAL, tw.size)


def exponential_lower_envelope(t, y, window) -> dict:
    """Lower line for log y on the window and how tightly it hugs the data.

    The envelope is the exponential fit shifted down until it touches the
    series from below.  ``relative_gap`` is the largest distance of log y above
    the envelope divided by the total drop of the envelope over the window; a
    small gap means y >= C' exp(-C t) holds with a rate close to the fitted one.
    """
    fit = fit_exponential_decay(t, y, window)
    tw, yw, _ = _window_select(t, y, window)
    line = fit.intercept - fit.exponent_or_rate * tw
    resid = np.log(yw) - line
    shift = float(resid.min())
    gap = float(np.max(resid - shift))
    drop = abs(fit.exponent_or_rate) * (tw[-1] - tw[0])
    return {
        "rate": fit.exponent_or_rate,
        "log_constant": fit.intercept + shift,
        "relative_gap": gap / drop if drop > 0 else math.inf,
        "fit": fit,
    }


def clean_window(traj: Trajectory, window, edge_fraction: float = 0.05) -> tuple:
    """Shrink the window's right end to the last time at which the excess on the
    outer edge stays below ``edge_fraction`` of the sup (truncation monitor)."""
    t = traj.t
    ok = traj.ledger["edge"] <= edge_fraction * np.maximum(traj.ledger["linf"], 1e-300)
    bad = np.flatnonzero(~ok & (t >= window[0]))
    if bad.size == 0:
        return (float(window[0]), float(window[1]))
    return (float(window[0]), float(min(window[1], t[bad[0] - 1] if bad[0] > 0 else t[0])))


# -- mass ledger --------------------------------------------------------------------

def _ledger_index(traj: Trajectory, t: float) -> int:
    led = traj.ledger
    for c in ("t", "l1", "absorption_increment", "boundary_flux"):
        if c not in led:
            raise LedgerError(f"ledger lacks column {c!r}")
    n = {len(v) for v in led.values()}
    if len(n) != 1:
        raise LedgerError("ledger columns have different lengths")
    tt = led["t"]
    if t < 0 or t > tt[-1] * (1 + 1e-12):
        raise LedgerError(f"t={t!r} lies outside the ledger [0, {tt[-1]!r}]")
    return int(np.searchsorted(tt, t * (1 - 1e-12), side="left"))


def mass_balance_residual(traj: Trajectory, t: float) -> float:
    """|l1(t) + int_0^t int |grad u|^q - l1(0) - boundary inflow| / l1(0).

    The absorption integral uses the centered gradient of the unregularized
    density; the residual therefore measures consistency with the continuous
    balance and shrinks under refinement.
    """
    i = _ledger_index(traj, t)
    led = traj.ledger
    l10 = led["l1"][0]
    if l10 <= 0:
        raise LedgerError("initial mass is zero")
    absorbed = float(np.sum(led["absorption_increment"][1:i + 1]))
    inflow = float(np.sum(led["boundary_flux"][1:i + 1]))
    return abs(led["l1"][i] + absorbed - l10 - inflow) / l10


def discrete_balance_defect(traj: Trajectory, t: float) -> float:
    """Same balance with the mass the scheme actually removed: zero to rounding."""
    i = _ledger_index(traj, t)
    led = traj.ledger
    l10 = led["l1"][0]
    removed = float(np.sum(led["sink_increment"][1:i + 1]))
    inflow = float(np.sum(led["boundary_flux"][1:i + 1]))
    return abs(led["l1"][i] + removed - l10 - inflow) / l10


# -- extinction ---------------------------------------------------------------------

def detect_extinction_series(t, values, ext_tol: float) -> Optional[float]:
    """First time from which ``values`` stay below ``ext_tol``; None if never."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    below = v < ext_tol
    if v.size == 0 or not below[-1]:
        return None
    k = int(np.argmax(~below[::-1])) if not np.all(below) else v.size
    return float(t[v.size - k])


def detect_extinction(traj: Trajectory, ext_tol: Optional[float] = None) -> Optional[float]:
    if ext_tol is None:
        ext_tol = DEFAULT_EXT_TOL_REL * traj.u0_inf
    return detect_extinction_series(traj.t, traj.ledger["linf"], ext_tol)


def extinction_uncertainty(traj: Trajectory, T_e: float) -> float:
    """One observation interval around T_e.  The ledger is written after every
    accepted step, so the observer stride of the ledger is a single step."""
    t = traj.t
    i = int(np.searchsorted(t, T_e))
    lo = t[max(i - 1, 0)]
    hi = t[min(i + 1, t.size - 1)]
    return float(max(T_e - lo, hi - T_e))


@dataclass(frozen=True)
class ExtinctionCheck:
    T_e: float
    fit_l1: FitResult
    fit_linf: FitResult
    bound_exponent_l1: float
    bound_exponent_linf: float
    constant_l1: float           # inf of l1 / (T_e - t)^a over the window
    constant_linf: float         # inf of linf / (T_e - t)^b over the window
    window: tuple
    ok: bool

    def as_dict(self) -> dict:
        d = asdict(self)
        d["fit_l1"] = self.fit_l1.as_dict()
        d["fit_linf"] = self.fit_linf.as_dict()
        d["window"] = list(self.window)
        return d


def extinction_exponent_check_series(t, l1, linf, T_e: float, params: Params,
                                     window_fraction: float = 0.5) -> ExtinctionCheck:
    p, q = params.p, params.q
    ce = critical_exponents(params)
    if not (p > ce.p_c + THRESHOLD_TOL and ce.q_1 + THRESHOLD_TOL < q < p / 2 - THRESHOLD_TOL):
        raise DomainError("extinction lower bounds need p in (p_c, 2) and q in (q_1, p/2)")
    a, b = extinction_lower_exponents(params)
    t = np.asarray(t, dtype=float)
    m = (t >= (1.0 - window_fraction) * T_e) & (t < T_e)
    s = T_e - t[m]
    y1 = np.asarray(l1, dtype=float)[m]
    yi = np.asarray(linf, dtype=float)[m]
    win = (float(t[m][0]), float(t[m][-1])) if m.any() else ((1 - window_fraction) * T_e, T_e)
    fit1 = fit_power_decay(s, y1, (s.min(), s.max()))
    fiti = fit_power_decay(s, yi, (s.min(), s.max()))
    c1 = float(np.min(y1 / s ** a))
    ci = float(np.min(yi / s ** b))
    ok = (math.isfinite(fit1.exponent_or_rate) and math.isfinite(fiti.exponent_or_rate)
          and c1 > 0 and ci > 0)
    return ExtinctionCheck(T_e, fit1, fiti, a, b, c1, ci, win, ok)


def extinction_exponent_check(traj: Trajectory, T_e: float, params: Params,
                              window_fraction: float = 0.5) -> ExtinctionCheck:
    led = traj.ledger
    return extinction_exponent_check_series(led["t"], led["l1"], led["linf"], T_e,
                                            params, window_fraction)


# -- positivity and sup bounds --------------------------------------------------------

def _snapshot_index(traj: Trajectory, t: float) -> int:
    return int(np.argmin(np.abs(traj.snapshot_times - t)))


def min_excess(traj: Trajectory, t: float) -> float:
    """Smallest excess over the floor at the snapshot nearest to t."""
    return float(traj.excess(_snapshot_index(traj, t)).min())


def gradient_sup_ratio(traj: Trajectory) -> float:
    """max_t max|D u(t)| / max|D u(0)|: at most 1 + O(eps) for the exact problem."""
    g = traj.ledger["grad_max"]
    return float(np.max(g) / g[0]) if g[0] > 0 else (0.0 if np.max(g) == 0 else math.inf)


def comparison_box_ok(traj: Trajectory) -> bool:
    from .solver import MACH_EPS
    tol = 10.0 * MACH_EPS * max(traj.u0_inf, traj.floor)
    ex = traj.snapshots - traj.floor
    return bool(ex.min() >= -tol and ex.max() <= traj.u0_inf + tol)


# -- gradient estimates ------------------------------------------------------------------

class EstimateId(str, Enum):
    GRAD_EST1 = "GradEst1"
    GRAD_EST2 = "GradEst2"
    GRAD_EST3 = "GradEst3"
    GRAD_EST4 = "GradEst4"
    GRAD_EST5 = "GradEst5"
    GRAD_EST6 = "GradEst6"
    GRAD_EST7 = "GradEst7"
    GRAD_EST_EX = "GradEstEx"
    GRAD_EST_HJ = "GradEstHJ"
    GRAD_EST_HJ2 = "GradEstHJ2"
    DIFFUSION_I = "DiffusionOnly_i"
    DIFFUSION_II = "DiffusionOnly_ii"
    DIFFUSION_III = "DiffusionOnly_iii"
    DIFFUSION_IV = "DiffusionOnly_iv"
    DIFFUSION_V = "DiffusionOnly_v"


@dataclass(frozen=True)
class EstimateForm:
    """|grad T(u)| <= C * rhs(t, u, ||u0||_inf) with T(u) = u^power or log u."""
    power: Optional[float]            # None means the logarithm
    explicit_constant: Optional[float]
    requires_absorption: bool


@dataclass
class EstimateCheck:
    estimate_id: EstimateId
    max_ratio: float
    delta_shift: float
    window: tuple
    explicit: bool                    # False: max_ratio is an empirical constant
    passed: Optional[bool]            # None when the constant is not pinned
    tolerance: float
    t: np.ndarray = field(repr=False, default=None)
    lhs_max: np.ndarray = field(repr=False, default=None)
    rhs: np.ndarray = field(repr=False, default=None)
    ratio: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {
            "estimate_id": self.estimate_id.value,
            "max_ratio": self.max_ratio,
            "delta_shift": self.delta_shift,
            "window": list(self.window),
            "explicit": self.explicit,
            "passed": self.passed,
            "tolerance": self.tolerance,
        }


def _gt(a, b):
    return a > b + THRESHOLD_TOL


def _ge(a, b):
    return a >= b - THRESHOLD_TOL


def _eq(a, b):
    return abs(a - b) <= THRESHOLD_TOL


def estimate_form(estimate_id, params: Params, absorption: bool = True) -> EstimateForm:
    """Transformation exponent and explicit constant of an estimate, after
    checking that it applies to (p, q, N) and the absorption setting."""
    eid = EstimateId(estimate_id)
    p, q, N = params.p, params.q, params.N
    ce = critical_exponents(params)
    pc, psc, k = ce.p_c, ce.p_sc, ce.k
    eta = ce.eta
    diffusion = eid.value.startswith("DiffusionOnly")
    if diffusion == absorption:
        need = "without" if diffusion else "with"
        raise DomainError(f"{eid.value} applies to runs {need} absorption")

    def need(cond, what):
        if not cond:
            raise DomainError(f"{eid.value} needs {what}; got p={p!r}, q={q!r}, N={N!r}")

    above = _gt(p, pc)
    at = _eq(p, pc)
    if eid is EstimateId.GRAD_EST1:
        need(above and _ge(q, 1.0), "p > p_c and q >= 1")
        c = ((2 - p) / p) ** ((p - 1) / p) * eta ** (1 / p)
        return EstimateForm(-(2 - p) / p, c, True)
    if eid is EstimateId.GRAD_EST2:
        need(above and _ge(q, p / 2) and q < 1 - THRESHOLD_TOL, "p > p_c and p/2 <= q < 1")
        return EstimateForm(-(2 - p) / p, None, True)
    if eid is EstimateId.GRAD_EST3:
        low_q = at and q < N / (N + 1.0) - THRESHOLD_TOL
        need((above or low_q) and _gt(q, p - 1) and q < p / 2 - THRESHOLD_TOL,
             "p > p_c (or p = p_c, q < N/(N+1)) and p-1 < q < p/2")
        return EstimateForm(-(q - p + 1) / (p - q), None, True)
    if eid is EstimateId.GRAD_EST4:
        low_q = at and q < N / (N + 1.0) - THRESHOLD_TOL
        need((above or low_q) and _eq(q, p - 1), "p > p_c (or p = p_c, q < N/(N+1)) and q = p-1")
        return EstimateForm(None, None, True)
    if eid is EstimateId.GRAD_EST5:
        low_q = at and q < N / (N + 1.0) - THRESHOLD_TOL
        need((above or low_q) and q < p - 1 - THRESHOLD_TOL, "p > p_c (or p = p_c, q < N/(N+1)) and q < p-1")
        return EstimateForm((p - q - 1) / (p - q), None, True)
    if eid in (EstimateId.GRAD_EST6, EstimateId.GRAD_EST7, EstimateId.GRAD_EST_EX,
               EstimateId.DIFFUSION_II):
        need(at and N >= 2, "p = p_c and N >= 2")
        if eid is EstimateId.GRAD_EST6:
            need(_ge(q, 1.0), "q >= 1")
        elif eid is EstimateId.GRAD_EST7:
            need(_gt(q, N / (N + 1.0)) and q < 1 - THRESHOLD_TOL, "N/(N+1) < q < 1")
        elif eid is EstimateId.GRAD_EST_EX:
            need(_eq(q, N / (N + 1.0)), "q = N/(N+1)")
        return EstimateForm(-1.0 / N, None, eid is not EstimateId.DIFFUSION_II)
    if eid is EstimateId.GRAD_EST_HJ:
        need(_ge(p, pc) and q < 1 - THRESHOLD_TOL, "p >= p_c and q < 1")
        return EstimateForm(1.0, None, True)
    if eid is EstimateId.GRAD_EST_HJ2:
        need(_ge(p, pc) and _gt(q, 1.0), "p >= p_c and q > 1")
        return EstimateForm((q - 1) / q, (1 / q) * (q - 1) ** ((q - 1) / q), True)
    if eid is EstimateId.DIFFUSION_I:
        need(above, "p > p_c")
        c = ((2 - p) / p) ** ((p - 1) / p) * eta ** (1 / p)
        return EstimateForm(-(2 - p) / p, c, False)
    if eid in (EstimateId.DIFFUSION_III, EstimateId.DIFFUSION_V):
        if eid is EstimateId.DIFFUSION_III:
            need(_gt(p, psc) and p < pc - THRESHOLD_TOL, "p_sc < p < p_c")
        else:
            need(p < psc - THRESHOLD_TOL, "p < p_sc")
        return EstimateForm(-k / (1 - k), None, False)
    if eid is EstimateId.DIFFUSION_IV:
        need(_eq(p, psc), "p = p_sc")
        return EstimateForm(None, None, False)
    raise DomainError(f"unknown estimate {estimate_id!r}")  # pragma: no cover


def estimate_rhs(estimate_id, params: Params, t: float, u, u0_inf: float):
    """Right-hand side without its constant, at time t and local values u."""
    eid = EstimateId(estimate_id)
    p, q, N = params.p, params.q, params.N
    ce = critical_exponents(params)
    pc, k = ce.p_c, ce.k
    u = np.asarray(u, dtype=float)
    one = np.ones_like(u)
    if eid in (EstimateId.GRAD_EST1, EstimateId.DIFFUSION_I):
        return t ** (-1 / p) * one
    if eid is EstimateId.GRAD_EST2:
        return (u0_inf ** ((2 * q - p) / (p * (p - q))) + t ** (-1 / p)) * one
    if eid in (EstimateId.GRAD_EST3, EstimateId.GRAD_EST5):
        return (1 + u0_inf ** ((p - 2 * q) / (p * (p - q))) * t ** (-1 / p)) * one
    if eid is EstimateId.GRAD_EST4:
        return (1 + u0_inf ** ((2 - p) / p) * t ** (-1 / p)) * one
    log_term = np.log(math.e * u0_inf / u)
    if eid in (EstimateId.GRAD_EST6, EstimateId.DIFFUSION_II):
        return log_term ** (1 / pc) * t ** (-1 / pc)
    if eid is EstimateId.GRAD_EST7:
        return (u0_inf ** (1 / (N * ce.xi * (pc - q))) + t ** (-1 / pc)) * log_term ** (1 / pc)
    if eid is EstimateId.GRAD_EST_EX:
        return log_term ** (2 / pc) * (1 + t ** (-1 / pc))
    if eid is EstimateId.GRAD_EST_HJ:
        return u0_inf ** (1 / q) * t ** (-1 / q) * one
    if eid is EstimateId.GRAD_EST_HJ2:
        return t ** (-1 / q) * one
    if eid in (EstimateId.DIFFUSION_III, EstimateId.DIFFUSION_V):
        return u0_inf ** ((2 - p - 2 * k) / (p * (1 - k))) * t ** (-1 / p) * one
    if eid is EstimateId.DIFFUSION_IV:
        return u0_inf ** ((2 - p) / p) * t ** (-1 / p) * one
    raise DomainError(f"unknown estimate {estimate_id!r}")  # pragma: no cover


def estimate_lhs(form: EstimateForm, v: np.ndarray, h: float) -> np.ndarray:
    """|grad T(v)| on the faces, as the face difference of the transformed
    field: by the mean value theorem this is the chain-rule value
    |T'(v)| |grad v| at a point inside the cell, so it never exceeds the sup."""
    if np.any(v <= 0):
        raise ValueError("transformed estimates need v > 0; use delta > 0")
    w = np.log(v) if form.power is None else v ** form.power
    return np.abs(face_differences(w, h))


def gradient_estimate_check(traj: Trajectory, estimate_id, delta: Optional[float] = None,
                            window: Optional[tuple] = None, tolerance: float = 0.1,
                            u0_inf: Optional[float] = None) -> EstimateCheck:
    """sup over snapshots in the window of LHS / (C * RHS) for u + delta.

    ``delta`` defaults to the solver floor eps^gamma, so that u + delta is the
    lifted solution itself.  Estimates with an explicit constant report
    pass/fail at ``tolerance``; the others report the empirical constant.
    """
    params = traj.params
    form = estimate_form(estimate_id, params, traj.config.absorption_enabled)
    eid = EstimateId(estimate_id)
    if delta is None:
        delta = traj.floor
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if u0_inf is None:
        u0_inf = traj.u0_inf
    times = traj.snapshot_times
    if window is None:
        window = (times[times > 0].min() if np.any(times > 0) else 0.0, times[-1])
    a, b = float(window[0]), float(window[1])
    h = traj.grid.h
    ts, lhs_max, rhs_at, ratios = [], [], [], []
    scale = form.explicit_constant if form.explicit_constant is not None else 1.0
    for i, t in enumerate(times):
        if t <= 0 or t < a or t > b:
            continue
        v = traj.excess(i) + delta
        lhs = estimate_lhs(form, v, h)
        vf = 0.5 * (v[1:] + v[:-1])
        rhs = scale * estimate_rhs(eid, params, t, vf, u0_inf + delta)
        r = lhs / rhs
        j = int(np.argmax(r))
        ts.append(t)
        lhs_max.append(float(lhs.max()))
        rhs_at.append(float(rhs[j]))
        ratios.append(float(r[j]))
    if not ts:
        raise ValueError(f"no snapshots inside the window {window!r}")
    max_ratio = float(max(ratios))
    explicit = form.explicit_constant is not None
    passed = (max_ratio <= 1.0 + tolerance) if explicit else None
    return EstimateCheck(eid, max_ratio, float(delta), (a, b), explicit, passed, tolerance,
                         np.asarray(ts), np.asarray(lhs_max), np.asarray(rhs_at),
                         np.asarray(ratios))


# -- observed regime ------------------------------------------------------------------------

EXTINCTION_ACCELERATION = 1.5


def log_slope_acceleration(t, y, t_cross: float) -> float:
    """Ratio of the slopes of log y against t on [3/4, 1] and [1/2, 3/4] of
    ``t_cross``.  Finite-time extinction (T_e - t)^b steepens the slope (ratio
    well above 1), exponential decay keeps it (about 1), power decay flattens
    it (below 1)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)

    def slope(a, b):
        m = (t >= a) & (t <= b) & (y > 0)
        if m.sum() < 3:
            raise FitError("too few points to measure the log slope")
        return np.polyfit(t[m], np.log(y[m]), 1)[0]

    s1 = slope(0.5 * t_cross, 0.75 * t_cross)
    s2 = slope(0.75 * t_cross, t_cross)
    if s1 >= 0:
        return math.inf if s2 < 0 else 1.0
    return float(s2 / s1)


@dataclass(frozen=True)
class Observation:
    regime: Regime
    T_e: Optional[float]
    fit_linf_power: Optional[FitResult]
    fit_linf_exp: Optional[FitResult]
    fit_l1_power: Optional[FitResult]
    window: Optional[tuple]
    acceleration: Optional[float] = None
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "T_e": self.T_e,
            "fit_linf_power": self.fit_linf_power.as_dict() if self.fit_linf_power else None,
            "fit_linf_exp": self.fit_linf_exp.as_dict() if self.fit_linf_exp else None,
            "fit_l1_power": self.fit_l1_power.as_dict() if self.fit_l1_power else None,
            "window": list(self.window) if self.window else None,
            "acceleration": self.acceleration,
            "note": self.note,
        }


def power_regime_signatures(params: Params) -> dict:
    """(linf, l1) late-time exponents of the two algebraic regimes."""
    p, q, N = params.p, params.q, params.N
    ce = critical_exponents(params)
    out = {}
    if ce.eta is not None:
        out[Regime.DIFFUSION_DECAY] = (-N * ce.eta, 0.0)
    if abs(2 * q - p) > THRESHOLD_TOL:
        out[Regime.FAST_ALGEBRAIC] = (-(p - q) / (2 * q - p),
                                      -(N + 1) * (ce.q_star - q) / (2 * q - p))
    return out


def observed_regime(traj: Trajectory, window: Optional[tuple] = None,
                    ext_tol: Optional[float] = None, edge_fraction: float = 0.05) -> Observation:
    """Classify a trajectory from its ledger alone.

    A drop of the excess below ``ext_tol`` counts as extinction only when the
    log slope steepens on the way down (see ``log_slope_acceleration``); fast
    exponential or algebraic decay can cross any fixed tolerance too.
    Otherwise the better of an exponential and a power fit of ||u||_inf
    separates exponential from algebraic decay, and the algebraic branch is
    the one whose (linf, l1) exponent pair is nearest to the fitted pair.
    """
    t = traj.t
    linf = traj.ledger["linf"]
    t_cross = detect_extinction(traj, ext_tol)
    acc = None
    if t_cross is not None:
        try:
            acc = log_slope_acceleration(t, linf, t_cross)
        except FitError:
            acc = math.inf
        if acc > EXTINCTION_ACCELERATION:
            return Observation(Regime.EXTINCTION, t_cross, None, None, None, None, acc)
    if window is None:
        window = default_window(float(t[-1]))
    if t_cross is not None and t_cross < window[1]:
        window = (min(window[0], t_cross / 10.0), t_cross)
    window = clean_window(traj, window, edge_fraction)
    note = ""
    try:
        fp = fit_power_decay(t, linf, window)
        fe = fit_exponential_decay(t, linf, window)
        f1 = fit_power_decay(t, traj.ledger["l1"], window)
    except FitError as exc:
        return Observation(Regime.EXTINCTION, t_cross, None, None, None, window, acc,
                           note=f"unfittable window: {exc}")
    if fe.r_squared > fp.r_squared:
        return Observation(Regime.EXPONENTIAL, None, fp, fe, f1, window, acc)
    sig = power_regime_signatures(traj.params)
    best, dist = None, math.inf
    for reg, (e_inf, e_1) in sig.items():
        d = math.hypot(fp.exponent_or_rate - e_inf, f1.exponent_or_rate - e_1)
        if d < dist:
            best, dist = reg, d
    if best is None:
        best, note = Regime.DIFFUSION_DECAY, "no algebraic signature available"
    return Observation(best, None, fp, fe, f1, window, acc, note)


def predicted_regime(params: Params, fast_decay_data: bool = True) -> Regime:
    return classify(params, fast_decay_data=fast_decay_data).regime
