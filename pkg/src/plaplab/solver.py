"""Time integration of the regularized problem

    d_t u = div(a_eps(|grad u|^2) grad u) - b_eps(|grad u|^2),
    u(0) = u0 + eps^gamma,

on a truncated domain.  The outer edge is either zero-flux (Neumann) or pins
the excess to zero (Dirichlet); for radially nonincreasing data the two
bracket the whole-space solution from below and above.

The lifted solution lives in the box [eps^gamma, eps^gamma + ||u0||_inf]; every
accepted step is checked against that box.  Diagnostics (the ledger) are
recorded for the excess u - eps^gamma, which is the proxy for the physical
solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from scipy.linalg import solve_banded

from .exponents import DomainError, Params, gamma_bound
from .grid import (
    Field,
    Geometry,
    Grid,
    a_eps,
    b_eps,
    b_eps_slope,
    divergence,
    face_differences,
    node_gradient_sq,
)

MACH_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class RegEps:
    eps: float
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.eps < 0.5):
            raise ValueError(f"eps must lie in (0, 1/2), got {self.eps!r}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")

    @property
    def floor(self) -> float:
        return self.eps ** self.gamma

    def check(self, params: Params) -> None:
        gmax = gamma_bound(params)
        if not self.gamma < gmax:
            raise DomainError(
                f"gamma={self.gamma!r} violates gamma < min(p/4, q/2, p-1, 1-k) = {gmax!r}"
            )

    @classmethod
    def default(cls, params: Params, grid: Grid, eps: Optional[float] = None) -> "RegEps":
        if eps is None:
            eps = max(1e-3, math.sqrt(grid.h))
            eps = min(eps, 0.49)
        return cls(eps=eps, gamma=0.9 * gamma_bound(params))


@dataclass(frozen=True)
class FixedDt:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("FixedDt requires dt > 0")


@dataclass(frozen=True)
class CflAdaptive:
    safety: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.safety <= 1.0):
            raise ValueError("CflAdaptive safety must lie in (0, 1]")


DtPolicy = Union[FixedDt, CflAdaptive]


class Scheme(str, Enum):
    EXPLICIT = "ExplicitEuler"
    SEMI_IMPLICIT = "SemiImplicitDiffusion"


@dataclass(frozen=True)
class SolverConfig:
    reg: RegEps
    t_end: float
    dt_policy: DtPolicy = CflAdaptive(0.5)
    scheme: Scheme = Scheme.EXPLICIT
    observer_stride: int = 1
    absorption_enabled: bool = True
    stencil: str = "upwind"
    # semi-implicit step control: target relative change of max excess per step
    max_rel_change: float = 0.02
    dt_max: Optional[float] = None
    dt_init: Optional[float] = None
    picard_iters: int = 0
    # "implicit": linearized upwind sink inside the tridiagonal solve (semi-implicit only)
    absorption_treatment: str = "implicit"
    # "neumann" (zero flux) or "dirichlet" (excess pinned to zero at the outer edge)
    boundary: str = "neumann"
    max_retries: int = 30
    max_steps: int = 5_000_000

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.t_end >= 0.0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be finite and non-negative")
        if isinstance(self.observer_stride, bool) or int(self.observer_stride) != self.observer_stride or self.observer_stride < 1:
            raise ValueError("observer_stride must be an integer >= 1")
        if self.stencil not in ("face", "upwind"):
            raise ValueError("stencil must be 'face' or 'upwind'")
        if not self.max_rel_change > 0:
            raise ValueError("max_rel_change must be positive")
        if self.absorption_treatment not in ("implicit", "explicit"):
            raise ValueError("absorption_treatment must be 'implicit' or 'explicit'")
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError("boundary must be 'neumann' or 'dirichlet'")
        if self.picard_iters < 0:
            raise ValueError("picard_iters must be >= 0")


# -- initial data -------------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """amplitude * cos^2(pi r / (2 width)) on r < width; mass = amplitude*width in 1-D."""
    amplitude: float = 1.0
    width: float = 1.0

    def sample(self, grid: Grid) -> np.ndarray:
        if not (self.amplitude >= 0 and self.width > 0):
            raise ValueError("Bump needs amplitude >= 0 and width > 0")
        r = np.abs(grid.x)
        out = self.amplitude * np.cos(0.5 * np.pi * np.minimum(r / self.width, 1.0)) ** 2
        out[r >= self.width] = 0.0
        return out


@dataclass(frozen=True)
class PowerTail:
    """C0 (core^2 + r^2)^{-alpha/2}: smooth, and below C0 r^{-alpha} everywhere."""
    C0: float = 1.0
    alpha_tail: float = 1.0
    core_radius: float = 1.0

    def sample(self, grid: Grid) -> np.ndarray:
        if not (self.C0 >= 0 and self.alpha_tail > 0 and self.core_radius > 0):
            raise ValueError("PowerTail needs C0 >= 0, alpha_tail > 0, core_radius > 0")
        r = np.abs(grid.x)
        return self.C0 * (self.core_radius ** 2 + r * r) ** (-0.5 * self.alpha_tail)


@dataclass(frozen=True)
class Custom:
    values: tuple

    def sample(self, grid: Grid) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (grid.n_nodes,):
            raise ValueError(f"custom datum has {v.size} values, grid has {grid.n_nodes}")
        return v.copy()


InitialDatum = Union[Bump, PowerTail, Custom]


def lift_initial(datum: InitialDatum, grid: Grid, reg: RegEps, params: Optional[Params] = None) -> Field:
    if params is not None:
        reg.check(params)
    u0 = datum.sample(grid)
    if not np.all(np.isfinite(u0)):
        raise ValueError("initial datum is not finite")
    if np.any(u0 < 0):
        raise ValueError("initial datum must be non-negative")
    return Field(grid, u0 + reg.floor)


# -- step control -------------------------------------------------------------

def stable_dt(state: Field, params: Params, reg: RegEps, safety: float) -> float:
    """Explicit diffusion bound safety*h^2/(2*dim*eps^{p-2}) (uses a_eps <= eps^{p-2})."""
    h = state.grid.h
    return safety * h * h / (2.0 * state.grid.dim_factor * reg.eps ** (params.p - 2.0))


def absorption_dt(grid: Grid, g2: np.ndarray, q: float, eps: float, safety: float) -> float:
    s = float(np.max(b_eps_slope(np.sqrt(g2), q, eps)))
    return math.inf if s <= 0 else safety * grid.h / s


class StepRejected(RuntimeError):
    pass


class SolverAbort(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class _Ctx:
    grid: Grid
    params: Params
    config: SolverConfig
    lo: float
    hi: float
    active: np.ndarray = None        # 1.0 where the node evolves, 0.0 on pinned nodes

    def __post_init__(self):
        if self.active is None:
            self.active = active_mask(self.grid, self.config.boundary)


def active_mask(grid: Grid, boundary: str) -> np.ndarray:
    """Nodes that evolve; Dirichlet pins the outer edge (both ends of a line)."""
    act = np.ones(grid.n_nodes)
    if boundary == "dirichlet":
        act[-1] = 0.0
        if grid.geometry is Geometry.LINE:
            act[0] = 0.0
    return act


def _banded(grid: Grid, coef: np.ndarray, dt: float) -> np.ndarray:
    """(I - dt*A) in LAPACK banded storage for the frozen-coefficient operator A."""
    af = grid.face_areas * coef / grid.h
    vol = grid.volumes
    kp = np.zeros(grid.n_nodes)
    km = np.zeros(grid.n_nodes)
    kp[:-1] = af / vol[:-1]
    km[1:] = af / vol[1:]
    ab = np.zeros((3, grid.n_nodes))
    ab[0, 1:] = -dt * kp[:-1]
    ab[1] = 1.0 + dt * (kp + km)
    ab[2, :-1] = -dt * km[1:]
    return ab


def _apply_A(grid: Grid, coef: np.ndarray, u: np.ndarray) -> np.ndarray:
    return divergence(grid, coef * face_differences(u, grid.h))


def upwind_linearization(grid: Grid, u: np.ndarray, q: float, eps: float):
    """Frozen form of the upwind sink: b_eps(g^2) = beta * (u_i - u_j) / h.

    Returns (beta, j) where j is the upwind neighbour of each node (mirrored
    at the ends) and beta = b_eps(g^2)/g, zero where the slope vanishes.
    """
    D = face_differences(u, grid.h)
    n = u.size
    left = np.empty(n)
    right = np.empty(n)
    left[1:] = D
    left[0] = -D[0]
    right[:-1] = -D
    right[-1] = D[-1]
    g = np.maximum(np.maximum(left, right), 0.0)
    idx = np.arange(n)
    j = np.where(left >= right, idx - 1, idx + 1)
    j[j < 0] = 1
    j[j >= n] = n - 2
    beta = np.zeros(n)
    pos = g > 0
    beta[pos] = b_eps(g[pos] ** 2, q, eps) / g[pos]
    return beta, j


def _implicit_sink_into(ab: np.ndarray, beta: np.ndarray, j: np.ndarray, h: float, dt: float):
    c = dt * beta / h
    n = beta.size
    ab[1] += c
    i = np.arange(n)
    up = j == i + 1
    dn = j == i - 1
    # row i, column i+1 sits at ab[0, i+1]; row i, column i-1 at ab[2, i-1]
    ab[0, (i + 1)[up]] -= c[up]
    ab[2, (i - 1)[dn]] -= c[dn]


def _pin_rows(ab: np.ndarray, active: np.ndarray):
    for i in np.flatnonzero(active == 0.0):
        ab[1, i] = 1.0
        if i + 1 < ab.shape[1]:
            ab[0, i + 1] = 0.0
        if i - 1 >= 0:
            ab[2, i - 1] = 0.0


def _in_box(ctx: _Ctx, u: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(u)) and u.min() >= ctx.lo and u.max() <= ctx.hi)


def _solve_linear(ctx: _Ctx, u: np.ndarray, base: np.ndarray, dt: float, coef, lin):
    """Solve (I - dt*A - dt*S) delta = dt*(A u + S u) for the increment."""
    grid = ctx.grid
    ab = _banded(grid, coef, dt)
    rhs = _apply_A(grid, coef, base)
    if lin is not None:
        beta, j = lin
        _implicit_sink_into(ab, beta, j, grid.h, dt)
        rhs = rhs - beta * (base - base[j]) / grid.h
    rhs = dt * rhs * ctx.active
    _pin_rows(ab, ctx.active)
    delta = solve_banded((1, 1), ab, rhs, overwrite_ab=True, check_finite=False)
    return base + delta


def _try_step(ctx: _Ctx, u: np.ndarray, dt: float):
    """One step of size dt, raising StepRejected if the result leaves the box.

    Returns (new state, nodal sink actually applied, face coefficients used).
    """
    cfg, grid, p, q = ctx.config, ctx.grid, ctx.params.p, ctx.params.q
    eps = cfg.reg.eps
    D = face_differences(u, grid.h)
    coef = a_eps(D * D, p, eps)
    implicit_sink = (cfg.absorption_enabled and cfg.scheme is Scheme.SEMI_IMPLICIT
                     and cfg.absorption_treatment == "implicit")
    if cfg.absorption_enabled and not implicit_sink:
        g2 = node_gradient_sq(grid, u, cfg.stencil)
        sink = b_eps(g2, q, eps) * ctx.active
    else:
        sink = np.zeros_like(u)
    if cfg.scheme is Scheme.EXPLICIT:
        new = u + dt * (divergence(grid, coef * D) - sink) * ctx.active
        if not _in_box(ctx, new):
            raise StepRejected("state left the comparison box")
        return new, sink, coef

    lin = upwind_linearization(grid, u, q, eps) if implicit_sink else None
    if implicit_sink:
        new = _solve_linear(ctx, u, u, dt, coef, lin)
    else:
        ab = _banded(grid, coef, dt)
        _pin_rows(ab, ctx.active)
        rhs = dt * (_apply_A(grid, coef, u) - sink) * ctx.active
        new = u + solve_banded((1, 1), ab, rhs, overwrite_ab=True, check_finite=False)
    prev_res = math.inf
    for _ in range(cfg.picard_iters):
        Dn = face_differences(new, grid.h)
        coef_n = a_eps(Dn * Dn, p, eps)
        lin_n = upwind_linearization(grid, new, q, eps) if implicit_sink else None
        s_n = lin_n[0] * (new - new[lin_n[1]]) / grid.h if implicit_sink else sink
        res = (new - u - dt * (_apply_A(grid, coef_n, new) - s_n)) * ctx.active
        rn = float(np.max(np.abs(res)))
        if rn > prev_res:
            raise StepRejected("nonlinear residual grew")
        prev_res = rn
        if rn <= 1e-10 * max(float(np.max(np.abs(new - u))), 1e-300):
            break
        coef, lin = coef_n, lin_n
        if implicit_sink:
            new = _solve_linear(ctx, u, u, dt, coef, lin)
        else:
            ab = _banded(grid, coef, dt)
            _pin_rows(ab, ctx.active)
            rhs = dt * (_apply_A(grid, coef, u) - sink) * ctx.active
            new = u + solve_banded((1, 1), ab, rhs, overwrite_ab=True, check_finite=False)
    if not _in_box(ctx, new):
        raise StepRejected("state left the comparison box")
    if implicit_sink:
        beta, j = lin
        sink = beta * (new - new[j]) / grid.h * ctx.active
    return new, sink, coef


def _boundary_inflow(ctx: _Ctx, coef: np.ndarray, u_flux: np.ndarray, dt: float) -> float:
    """Mass entering the evolving nodes through the pinned outer nodes in one step."""
    if ctx.config.boundary != "dirichlet":
        return 0.0
    grid = ctx.grid
    F = grid.face_areas * coef * face_differences(u_flux, grid.h)
    inflow = F[-1]
    if grid.geometry is Geometry.LINE:
        inflow -= F[0]
    return dt * float(inflow)


def step(state: Field, t: float, params: Params, config: SolverConfig,
         dt: Optional[float] = None, u0_inf: Optional[float] = None):
    """Advance one accepted step; returns (new Field, dt_used).

    The step size is taken from ``dt`` or the config's policy and halved on
    rejection.  ``u0_inf`` (excess sup of the datum) fixes the upper edge of the
    comparison box; it defaults to the current excess sup.
    """
    grid = state.grid
    floor = config.reg.floor
    u = state.values
    if u0_inf is None:
        u0_inf = float(u.max() - floor)
    tol = 10.0 * MACH_EPS * max(u0_inf, floor)
    ctx = _Ctx(grid, params, config, floor - tol, floor + u0_inf + tol)
    if dt is None:
        dt = _policy_dt(ctx, u, None, None)
    for _ in range(config.max_retries + 1):
        try:
            new, _, _ = _try_step(ctx, u, dt)
            return Field(grid, new), dt
        except StepRejected:
            dt *= 0.5
    raise RuntimeError(f"step rejected {config.max_retries} times; dt shrank to {dt!r}")


def _policy_dt(ctx: _Ctx, u: np.ndarray, prev_dt, prev_change) -> float:
    cfg, grid, params = ctx.config, ctx.grid, ctx.params
    pol = cfg.dt_policy
    if isinstance(pol, FixedDt):
        return pol.dt
    safety = pol.safety
    explicit_sink = cfg.absorption_enabled and (
        cfg.scheme is Scheme.EXPLICIT or cfg.absorption_treatment == "explicit")
    if explicit_sink:
        g2 = node_gradient_sq(grid, u, cfg.stencil)
        dt_abs = absorption_dt(grid, g2, params.q, cfg.reg.eps, safety)
    else:
        dt_abs = math.inf
    if cfg.scheme is Scheme.EXPLICIT:
        dt = min(stable_dt(Field(grid, u), params, cfg.reg, safety), dt_abs)
    else:
        if prev_dt is None:
            dt = cfg.dt_init if cfg.dt_init is not None else \
                stable_dt(Field(grid, u), params, cfg.reg, safety)
        else:
            dt = prev_dt * min(1.25, max(0.5, cfg.max_rel_change / max(prev_change, 1e-300)))
        dt = min(dt, dt_abs)
    if cfg.dt_max is not None:
        dt = min(dt, cfg.dt_max)
    return dt


# -- trajectories ---------------------------------------------------------------

# absorption_increment: dt * sum(vol * |centered grad u|^q) at the step start
# sink_increment:       mass the scheme actually removed during the step
# boundary_flux:        mass that entered through the outer edge during the step
# edge:                 excess at the outer node(s), a truncation monitor
LEDGER_COLUMNS = ("t", "l1", "linf", "grad_max", "absorption_increment",
                  "boundary_flux", "sink_increment", "dt", "edge")


@dataclass
class Trajectory:
    params: Params
    config: SolverConfig
    grid: Grid
    snapshot_times: np.ndarray
    snapshots: np.ndarray            # shape (n_snapshots, n_nodes), lifted values
    ledger: dict                     # column name -> 1-D array, row 0 is t = 0
    u0_inf: float                    # sup of the (unlifted) datum
    status: str = "complete"
    message: str = ""

    @property
    def floor(self) -> float:
        return self.config.reg.floor

    def field_at(self, i: int) -> Field:
        return Field(self.grid, self.snapshots[i])

    def excess(self, i: int) -> np.ndarray:
        return self.snapshots[i] - self.floor

    @property
    def t(self) -> np.ndarray:
        return self.ledger["t"]


def _measure(grid: Grid, u: np.ndarray, floor: float, q: float, absorption: bool,
             active: Optional[np.ndarray] = None):
    v = u - floor
    l1 = float(np.dot(grid.volumes, v))
    linf = float(v.max())
    D = face_differences(u, grid.h)
    gmax = float(np.max(np.abs(D))) if D.size else 0.0
    if absorption:
        gc = np.sqrt(node_gradient_sq(grid, u, "centered"))
        w = grid.volumes if active is None else grid.volumes * active
        dens = float(np.dot(w, gc ** q))
    else:
        dens = 0.0
    edge = float(max(v[0], v[-1])) if grid.geometry is Geometry.LINE else float(v[-1])
    return l1, linf, gmax, dens, edge


def run(datum: InitialDatum, grid: Grid, params: Params, config: SolverConfig) -> Trajectory:
    field0 = lift_initial(datum, grid, config.reg, params)
    floor = config.reg.floor
    u = field0.values.copy()
    if config.boundary == "dirichlet":
        # the pinned edge carries zero excess; lowering the datum there keeps
        # the run below the whole-space solution
        u[active_mask(grid, config.boundary) == 0.0] = floor
    u0_inf = float(u.max() - floor)
    tol = 10.0 * MACH_EPS * max(u0_inf, floor)
    ctx = _Ctx(grid, params, config, floor - tol, floor + u0_inf + tol)
    q = params.q
    absorb = config.absorption_enabled

    rows = {c: [] for c in LEDGER_COLUMNS}
    l1, linf, gmax, dens, edge = _measure(grid, u, floor, q, absorb, ctx.active)
    for c, v in zip(LEDGER_COLUMNS, (0.0, l1, linf, gmax, 0.0, 0.0, 0.0, 0.0, edge)):
        rows[c].append(v)
    snap_t = [0.0]
    snaps = [u.copy()]

    t = 0.0
    nstep = 0
    prev_dt = None
    prev_change = None
    status, message = "complete", ""

    def finish():
        ledger = {c: np.asarray(rows[c], dtype=float) for c in LEDGER_COLUMNS}
        return Trajectory(params, config, grid, np.asarray(snap_t), np.vstack(snaps),
                          ledger, u0_inf, status, message)

    t_end = config.t_end
    while t < t_end:
        if nstep >= config.max_steps:
            status, message = "aborted", f"max_steps={config.max_steps} reached at t={t!r}"
            raise SolverAbort(message, finish())
        dt = _policy_dt(ctx, u, prev_dt, prev_change)
        last = False
        if t + dt >= t_end * (1.0 - 1e-12):
            dt = t_end - t
            last = True
        accepted = False
        for _ in range(config.max_retries + 1):
            try:
                new, sink, coef = _try_step(ctx, u, dt)
                accepted = True
                break
            except StepRejected:
                dt *= 0.5
                last = False
        if not accepted:
            status = "aborted"
            message = (f"persistent step rejection at t={t!r}: dt halved "
                       f"{config.max_retries} times to {dt!r}")
            raise SolverAbort(message, finish())
        sink_inc = dt * float(np.dot(grid.volumes, sink)) if absorb else 0.0
        abs_inc = dt * dens
        u_flux = u if config.scheme is Scheme.EXPLICIT else new
        bflux = _boundary_inflow(ctx, coef, u_flux, dt)
        t = t_end if last else t + dt
        nstep += 1
        change = float(np.max(np.abs(new - u))) / max(linf, 1e-8 * u0_inf, 1e-300)
        u = new
        l1, linf, gmax, dens, edge = _measure(grid, u, floor, q, absorb, ctx.active)
        for c, v in zip(LEDGER_COLUMNS, (t, l1, linf, gmax, abs_inc, bflux, sink_inc, dt, edge)):
            rows[c].append(v)
        if nstep % config.observer_stride == 0 or t >= t_end:
            snap_t.append(t)
            snaps.append(u.copy())
        prev_dt, prev_change = dt, change
    return finish()
