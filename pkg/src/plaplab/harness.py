"""Experiment configuration, runs, sweeps, snapshots and plot data.

An experiment is a single JSON document.  Every setting the run depends on is
echoed back (resolved) in the report, and the serialized report contains no
wall-clock data, so the same config file always produces byte-identical
output files.

Snapshot file layout (version 1)
--------------------------------
line 1    UTF-8 JSON header terminated by a single ``\\n``::

              {"format": "plaplab-snapshot", "version": 1,
               "params": {...}, "grid": {...}, "solver": {...},
               "u0_inf": float, "status": str, "message": str,
               "n_snapshots": S, "n_nodes": K, "n_ledger": R,
               "ledger_columns": [...], "nbytes": B, "sha256": hex}

rest      B = 8 * (S + S*K + R*len(ledger_columns)) bytes of little-endian
          float64: snapshot times (S), snapshots row-major (S x K), then each
          ledger column (R values) in ``ledger_columns`` order.  ``sha256`` is
          the digest of exactly these B bytes.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exponents import (
    THRESHOLD_TOL,
    DomainError,
    Params,
    classify,
    critical_exponents,
    gamma_bound,
    p_c,
)
from .functionals import (
    DEFAULT_EXT_TOL_REL,
    EXTINCTION_ACCELERATION,
    FitError,
    LedgerError,
    clean_window,
    default_window,
    detect_extinction,
    discrete_balance_defect,
    exponential_lower_envelope,
    extinction_exponent_check,
    extinction_uncertainty,
    fit_exponential_decay,
    fit_power_decay,
    gradient_estimate_check,
    log_slope_acceleration,
    mass_balance_residual,
    min_excess,
    observed_regime,
)
from .grid import Grid
from .solver import (
    LEDGER_COLUMNS,
    Bump,
    CflAdaptive,
    FixedDt,
    PowerTail,
    RegEps,
    Scheme,
    SolverAbort,
    SolverConfig,
    Trajectory,
    run,
)

SNAPSHOT_FORMAT = "plaplab-snapshot"
SNAPSHOT_VERSION = 1
NEAR_THRESHOLD = 0.02


class ConfigError(ValueError):
    """Invalid experiment or sweep configuration; the message names the field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class SnapshotError(ValueError):
    pass


class SnapshotVersionError(SnapshotError):
    pass


class SnapshotChecksumError(SnapshotError):
    pass


class SnapshotShapeError(SnapshotError):
    pass


# -- number formatting -----------------------------------------------------------------

def fmt(x) -> str:
    """Shortest round-trip text for a number (repr), 'nan'/'inf' spelled out."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


# -- configuration -------------------------------------------------------------------------

CHECK_KINDS = ("regime", "decay_fit", "exp_vs_power", "mass_balance", "extinction",
               "extinction_exponents", "gradient_estimate", "min_excess")


def _num(d: dict, key: str, where: str, default=None, positive=False, allow_none=False):
    v = d.get(key, default)
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}", f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key}", f"must be positive, got {v!r}")
    return float(v)


def _int(d: dict, key: str, where: str, default=None, minimum=None):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}", f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key}", f"must be >= {minimum}, got {v!r}")
    return v


def _window(v, where):
    if v is None:
        return None
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
            or not 0 <= v[0] < v[1]):
        raise ConfigError(where, f"expected [a, b] with 0 <= a < b, got {v!r}")
    return [float(v[0]), float(v[1])]


def _unknown(d: dict, allowed, where):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}", "unknown key")


@dataclass
class ExperimentConfig:
    """Resolved experiment; ``echo()`` is the self-describing dict form."""
    name: str
    params: Params
    fast_decay_data: bool
    simulate: bool
    grid: dict
    datum: dict
    solver: dict
    checks: list
    outputs: dict

    # -- parsing
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config", "expected a JSON object")
        _unknown(d, ("name", "params", "fast_decay_data", "simulate", "grid", "datum",
                     "solver", "checks", "outputs"), "config")
        name = d.get("name", "experiment")
        if not isinstance(name, str):
            raise ConfigError("name", "expected a string")
        pd = d.get("params")
        if not isinstance(pd, dict):
            raise ConfigError("params", "missing or not an object")
        _unknown(pd, ("p", "q", "N"), "params")
        for key in ("p", "q", "N"):
            if key not in pd:
                raise ConfigError(f"params.{key}", "missing")
        try:
            params = Params(pd["p"], pd["q"], pd["N"])
        except DomainError as exc:
            key = str(exc).split()[0]
            raise ConfigError(f"params.{key}", str(exc)) from None
        fast = d.get("fast_decay_data", True)
        simulate = d.get("simulate", True)
        for key, v in (("fast_decay_data", fast), ("simulate", simulate)):
            if not isinstance(v, bool):
                raise ConfigError(key, f"expected true/false, got {v!r}")
        grid = cls._parse_grid(d.get("grid", {}), params) if simulate else None
        datum = cls._parse_datum(d.get("datum", {"kind": "Bump"}), params, fast) if simulate else None
        solver = cls._parse_solver(d.get("solver", {}), params) if simulate else None
        checks = cls._parse_checks(d.get("checks", []), simulate)
        outputs = d.get("outputs", {})
        if not isinstance(outputs, dict):
            raise ConfigError("outputs", "expected an object")
        _unknown(outputs, ("report", "ledger_csv", "snapshot"), "outputs")
        for k, v in outputs.items():
            if v is not None and not isinstance(v, str):
                raise ConfigError(f"outputs.{k}", "expected a path string")
        return cls(name, params, fast, simulate, grid, datum, solver, checks, dict(outputs))

    @staticmethod
    def _parse_grid(g, params):
        if not isinstance(g, dict):
            raise ConfigError("grid", "expected an object")
        _unknown(g, ("geometry", "L", "M", "N"), "grid")
        geom = g.get("geometry", "line" if params.N == 1 else "radial")
        if geom not in ("line", "radial"):
            raise ConfigError("grid.geometry", f"expected 'line' or 'radial', got {geom!r}")
        N = _int(g, "N", "grid", params.N, 1)
        if N != params.N:
            raise ConfigError("grid.N", f"grid dimension {N} differs from params.N={params.N}")
        if geom == "line" and N != 1:
            raise ConfigError("grid.geometry", "line geometry is one-dimensional; use 'radial'")
        L = _num(g, "L", "grid", 20.0, positive=True)
        M = _int(g, "M", "grid", 400, 8)
        return {"geometry": geom, "L": L, "M": M, "N": N}

    @staticmethod
    def _parse_datum(dd, params, fast):
        if not isinstance(dd, dict):
            raise ConfigError("datum", "expected an object")
        kind = dd.get("kind", "Bump")
        if kind == "Bump":
            _unknown(dd, ("kind", "amplitude", "width"), "datum")
            out = {"kind": kind,
                   "amplitude": _num(dd, "amplitude", "datum", 1.0, positive=True),
                   "width": _num(dd, "width", "datum", 2.0, positive=True)}
        elif kind == "PowerTail":
            _unknown(dd, ("kind", "C0", "alpha_tail", "core_radius"), "datum")
            out = {"kind": kind,
                   "C0": _num(dd, "C0", "datum", 1.0, positive=True),
                   "alpha_tail": _num(dd, "alpha_tail", "datum", 1.0, positive=True),
                   "core_radius": _num(dd, "core_radius", "datum", 1.0, positive=True)}
            p, q = params.p, params.q
            # a fast-decay prediction needs the tail at least as steep as the
            # stationary profile |x|^{-(p-q)/(q-p+1)}
            if fast and q > p - 1 + THRESHOLD_TOL:
                need = (p - q) / (q - p + 1)
                if out["alpha_tail"] < need - THRESHOLD_TOL:
                    raise ConfigError("datum.alpha_tail",
                                      f"fast_decay_data needs alpha_tail >= {need!r}, "
                                      f"got {out['alpha_tail']!r}")
        else:
            raise ConfigError("datum.kind", f"expected 'Bump' or 'PowerTail', got {kind!r}")
        return out

    @staticmethod
    def _parse_solver(s, params):
        if not isinstance(s, dict):
            raise ConfigError("solver", "expected an object")
        _unknown(s, ("t_end", "scheme", "eps", "gamma", "max_rel_change", "observer_stride",
                     "absorption_enabled", "boundary", "stencil", "dt_max", "dt_policy",
                     "absorption_treatment"), "solver")
        gb = gamma_bound(params)
        out = {
            "t_end": _num(s, "t_end", "solver", 1.0, positive=True),
            "scheme": s.get("scheme", Scheme.SEMI_IMPLICIT.value),
            "eps": _num(s, "eps", "solver", 1e-12, positive=True),
            "gamma": _num(s, "gamma", "solver", 0.9 * gb, positive=True),
            "max_rel_change": _num(s, "max_rel_change", "solver", 0.01, positive=True),
            "observer_stride": _int(s, "observer_stride", "solver", 1, 1),
            "absorption_enabled": s.get("absorption_enabled", True),
            "absorption_treatment": s.get("absorption_treatment", "implicit"),
            "boundary": s.get("boundary", "neumann"),
            "stencil": s.get("stencil", "upwind"),
            "dt_max": _num(s, "dt_max", "solver", None, positive=True, allow_none=True),
            "dt_policy": s.get("dt_policy", {"kind": "CflAdaptive", "safety": 0.5}),
        }
        if out["scheme"] not in [x.value for x in Scheme]:
            raise ConfigError("solver.scheme", f"unknown scheme {out['scheme']!r}")
        if not out["eps"] < 0.5:
            raise ConfigError("solver.eps", "must lie in (0, 1/2)")
        if not out["gamma"] < gb:
            raise ConfigError("solver.gamma", f"must be below min(p/4, q/2, p-1, 1-k) = {gb!r}")
        if not isinstance(out["absorption_enabled"], bool):
            raise ConfigError("solver.absorption_enabled", "expected true/false")
        for key, allowed in (("absorption_treatment", ("implicit", "explicit")),
                             ("boundary", ("neumann", "dirichlet")),
                             ("stencil", ("face", "upwind"))):
            if out[key] not in allowed:
                raise ConfigError(f"solver.{key}", f"expected one of {allowed}, got {out[key]!r}")
        pol = out["dt_policy"]
        if not isinstance(pol, dict) or pol.get("kind") not in ("CflAdaptive", "FixedDt"):
            raise ConfigError("solver.dt_policy", "expected {kind: CflAdaptive|FixedDt, ...}")
        if pol["kind"] == "CflAdaptive":
            out["dt_policy"] = {"kind": "CflAdaptive",
                                "safety": _num(pol, "safety", "solver.dt_policy", 0.5, positive=True)}
        else:
            out["dt_policy"] = {"kind": "FixedDt",
                                "dt": _num(pol, "dt", "solver.dt_policy", None, positive=True)}
        return out

    @staticmethod
    def _parse_checks(cl, simulate):
        if not isinstance(cl, list):
            raise ConfigError("checks", "expected a list")
        out, seen = [], set()
        for i, c in enumerate(cl):
            where = f"checks[{i}]"
            if not isinstance(c, dict):
                raise ConfigError(where, "expected an object")
            kind = c.get("kind")
            if kind not in CHECK_KINDS:
                raise ConfigError(f"{where}.kind", f"expected one of {CHECK_KINDS}, got {kind!r}")
            if not simulate:
                raise ConfigError(f"{where}.kind", "trajectory checks need simulate=true")
            cid = c.get("id", kind)
            if not isinstance(cid, str) or cid in seen:
                raise ConfigError(f"{where}.id", f"check ids must be unique strings, got {cid!r}")
            seen.add(cid)
            r = {"id": cid, "kind": kind}
            if "window" in c:
                r["window"] = _window(c["window"], f"{where}.window")
            if kind == "decay_fit":
                r["quantity"] = c.get("quantity", "linf")
                r["model"] = c.get("model", "power")
                if r["quantity"] not in ("linf", "l1"):
                    raise ConfigError(f"{where}.quantity", "expected 'linf' or 'l1'")
                if r["model"] not in ("power", "exp"):
                    raise ConfigError(f"{where}.model", "expected 'power' or 'exp'")
                r["expected"] = _num(c, "expected", where, None, allow_none=True)
                r["rel_tol"] = _num(c, "rel_tol", where, 0.15, positive=True)
            elif kind == "exp_vs_power":
                r["quantity"] = c.get("quantity", "linf")
                if r["quantity"] not in ("linf", "l1"):
                    raise ConfigError(f"{where}.quantity", "expected 'linf' or 'l1'")
                r["envelope_tol"] = _num(c, "envelope_tol", where, 0.1, positive=True)
            elif kind in ("mass_balance", "min_excess"):
                r["t"] = _num(c, "t", where, None, allow_none=True)
                if kind == "mass_balance":
                    r["tol"] = _num(c, "tol", where, 1e-2, positive=True)
            elif kind == "extinction":
                exp = c.get("expect")
                if not isinstance(exp, bool):
                    raise ConfigError(f"{where}.expect", "expected true/false")
                r["expect"] = exp
                r["ext_tol"] = _num(c, "ext_tol", where, None, positive=True, allow_none=True)
            elif kind == "extinction_exponents":
                r["window_fraction"] = _num(c, "window_fraction", where, 0.5, positive=True)
                r["ext_tol"] = _num(c, "ext_tol", where, None, positive=True, allow_none=True)
            elif kind == "gradient_estimate":
                eid = c.get("estimate_id")
                if not isinstance(eid, str):
                    raise ConfigError(f"{where}.estimate_id", "missing")
                r["estimate_id"] = eid
                r["tolerance"] = _num(c, "tolerance", where, 0.1, positive=True)
                r["delta"] = _num(c, "delta", where, None, allow_none=True)
            elif kind == "regime":
                r["ext_tol"] = _num(c, "ext_tol", where, None, positive=True, allow_none=True)
            out.append(r)
        return out

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    # -- echo and builders
    def echo(self) -> dict:
        return _clean({
            "name": self.name, "params": self.params.as_dict(),
            "fast_decay_data": self.fast_decay_data, "simulate": self.simulate,
            "grid": self.grid, "datum": self.datum, "solver": self.solver,
            "checks": self.checks, "outputs": self.outputs,
        })

    def build_grid(self) -> Grid:
        g = self.grid
        return Grid(g["geometry"], g["L"], g["M"], g["N"])

    def build_datum(self):
        d = dict(self.datum)
        kind = d.pop("kind")
        return Bump(**d) if kind == "Bump" else PowerTail(**d)

    def build_solver(self) -> SolverConfig:
        return solver_config_from_dict(self.solver)


def solver_config_from_dict(s: dict) -> SolverConfig:
    pol = s["dt_policy"]
    policy = CflAdaptive(pol["safety"]) if pol["kind"] == "CflAdaptive" else FixedDt(pol["dt"])
    return SolverConfig(
        reg=RegEps(s["eps"], s["gamma"]), t_end=s["t_end"], dt_policy=policy,
        scheme=Scheme(s["scheme"]), observer_stride=s["observer_stride"],
        absorption_enabled=s["absorption_enabled"], stencil=s["stencil"],
        max_rel_change=s["max_rel_change"], dt_max=s["dt_max"],
        absorption_treatment=s["absorption_treatment"], boundary=s["boundary"])


def solver_config_to_dict(c: SolverConfig) -> dict:
    pol = c.dt_policy
    pd = ({"kind": "CflAdaptive", "safety": pol.safety} if isinstance(pol, CflAdaptive)
          else {"kind": "FixedDt", "dt": pol.dt})
    return {"t_end": c.t_end, "scheme": c.scheme.value, "eps": c.reg.eps, "gamma": c.reg.gamma,
            "max_rel_change": c.max_rel_change, "observer_stride": c.observer_stride,
            "absorption_enabled": c.absorption_enabled, "absorption_treatment": c.absorption_treatment,
            "boundary": c.boundary, "stencil": c.stencil, "dt_max": c.dt_max, "dt_policy": pd}


# -- running ---------------------------------------------------------------------------------

def prediction_block(params: Params, fast_decay_data: bool) -> dict:
    pred = classify(params, fast_decay_data)
    return {"classification": pred.as_dict(),
            "critical_exponents": critical_exponents(params).as_dict(),
            "threshold_distances": threshold_distances(params)}


def threshold_distances(params: Params) -> dict:
    p, q, N = params.p, params.q, params.N
    qs = p - N / (N + 1.0)
    out = {"q_half": abs(q - p / 2) / (p / 2), "p_c": abs(p - p_c(N)) / p_c(N)}
    out["q_star"] = abs(q - qs) / abs(qs) if qs != 0 else math.inf
    return out


def near_threshold(params: Params, tol: float = NEAR_THRESHOLD) -> bool:
    """Within ``tol`` (relative) of a threshold without sitting on it.

    A cell exactly on a threshold (e.g. q = p/2) belongs to that threshold's
    own regime and is scored normally.
    """
    return any(THRESHOLD_TOL < d < tol for d in threshold_distances(params).values())


@dataclass
class RunReport:
    config: dict
    prediction: dict
    run: Optional[dict] = None
    observation: Optional[dict] = None
    checks: list = field(default_factory=list)
    series: Optional[dict] = None
    profiles: Optional[dict] = None
    estimates: dict = field(default_factory=dict)
    wall_time: float = 0.0            # not serialized: reports must be reproducible

    @property
    def passed(self) -> bool:
        return all(c.get("passed") is not False for c in self.checks) and (
            self.run is None or self.run.get("status") == "complete")

    @property
    def agree(self) -> Optional[bool]:
        if self.observation is None:
            return None
        return self.observation["regime"] == self.prediction["classification"]["regime"]

    def as_dict(self) -> dict:
        return {"config": self.config, "prediction": self.prediction, "run": self.run,
                "observation": self.observation, "agree": self.agree, "passed": self.passed,
                "checks": self.checks, "series": self.series, "profiles": self.profiles,
                "estimates": self.estimates}

    def to_json(self) -> str:
        return dumps(self.as_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(d["config"], d["prediction"], d.get("run"), d.get("observation"),
                   d.get("checks", []), d.get("series"), d.get("profiles"), d.get("estimates", {}))


def _late_window(traj: Trajectory, window):
    w = tuple(window) if window is not None else default_window(float(traj.t[-1]))
    return clean_window(traj, w)


def _evaluate_check(c: dict, traj: Trajectory, pred, est_out: dict) -> dict:
    kind = c["kind"]
    res = {"id": c["id"], "kind": kind, "passed": None}
    led = traj.ledger
    t = traj.t
    try:
        if kind == "regime":
            ob = observed_regime(traj, c.get("window"), c.get("ext_tol"))
            res.update(observed=ob.regime.value, predicted=pred.regime.value,
                       passed=ob.regime is pred.regime)
        elif kind == "decay_fit":
            y = led[c["quantity"]]
            win = _late_window(traj, c.get("window"))
            fit = (fit_power_decay if c["model"] == "power" else fit_exponential_decay)(t, y, win)
            expected = c["expected"]
            if expected is None and c["model"] == "power":
                expected = pred.linf_exponent if c["quantity"] == "linf" else pred.l1_exponent
            res.update(fit=fit.as_dict(), expected=expected, rel_tol=c["rel_tol"])
            if expected is not None:
                err = abs(fit.exponent_or_rate - expected) / abs(expected) if expected else math.inf
                res.update(relative_error=err, passed=err <= c["rel_tol"])
        elif kind == "exp_vs_power":
            y = led[c["quantity"]]
            win = _late_window(traj, c.get("window"))
            fp = fit_power_decay(t, y, win)
            env = exponential_lower_envelope(t, y, win)
            fe = env.pop("fit")
            res.update(fit_power=fp.as_dict(), fit_exp=fe.as_dict(), envelope=env,
                       envelope_tol=c["envelope_tol"],
                       passed=fe.r_squared > fp.r_squared and env["relative_gap"] < c["envelope_tol"])
        elif kind == "mass_balance":
            tt = c["t"] if c["t"] is not None else float(t[-1])
            r = mass_balance_residual(traj, tt)
            res.update(t=tt, residual=r, discrete_defect=discrete_balance_defect(traj, tt),
                       tol=c["tol"], passed=r < c["tol"])
        elif kind == "min_excess":
            tt = c["t"] if c["t"] is not None else float(t[-1])
            m = min_excess(traj, tt)
            res.update(t=tt, min_excess=m, passed=m > 0)
        elif kind == "extinction":
            tol = c["ext_tol"] if c["ext_tol"] is not None else DEFAULT_EXT_TOL_REL * traj.u0_inf
            T_e = detect_extinction(traj, tol)
            acc = None
            if T_e is not None:
                try:
                    acc = log_slope_acceleration(t, led["linf"], T_e)
                except FitError:
                    acc = math.inf
            extinct = T_e is not None and acc > EXTINCTION_ACCELERATION
            res.update(T_e=T_e, ext_tol=tol, acceleration=acc,
                       uncertainty=extinction_uncertainty(traj, T_e) if T_e is not None else None,
                       min_linf=float(led["linf"].min()), horizon=float(t[-1]))
            if c["expect"]:
                res["passed"] = extinct
            else:
                m = min_excess(traj, float(t[-1]))
                res.update(min_excess=m, passed=(T_e is None) and m > 0)
        elif kind == "extinction_exponents":
            tol = c["ext_tol"] if c["ext_tol"] is not None else DEFAULT_EXT_TOL_REL * traj.u0_inf
            T_e = detect_extinction(traj, tol)
            if T_e is None:
                res.update(passed=False, error="no extinction detected")
            else:
                ec = extinction_exponent_check(traj, T_e, traj.params, c["window_fraction"])
                res.update(ec.as_dict())
                res["passed"] = ec.ok
        elif kind == "gradient_estimate":
            ec = gradient_estimate_check(traj, c["estimate_id"], c.get("delta"),
                                         c.get("window"), c["tolerance"])
            res.update(ec.as_dict())
            est_out[ec.estimate_id.value] = {"t": ec.t, "lhs_max": ec.lhs_max,
                                            "rhs": ec.rhs, "ratio": ec.ratio}
    except (FitError, LedgerError, DomainError, ValueError) as exc:
        res.update(passed=False, error=f"{type(exc).__name__}: {exc}")
    if res["passed"] is not None:
        res["passed"] = bool(res["passed"])     # numpy bools fail the `is False` test
    return res


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Lift, run, evaluate every requested check; deterministic for a given config."""
    t0 = time.perf_counter()
    pred = classify(config.params, config.fast_decay_data)
    report = RunReport(config.echo(), prediction_block(config.params, config.fast_decay_data))
    if not config.simulate:
        report.wall_time = time.perf_counter() - t0
        return report
    grid = config.build_grid()
    try:
        traj = run(config.build_datum(), grid, config.params, config.build_solver())
    except SolverAbort as exc:
        traj = exc.trajectory
    led = traj.ledger
    report.run = {
        "status": traj.status, "message": traj.message, "n_steps": int(led["t"].size - 1),
        "t_final": float(led["t"][-1]), "u0_inf": traj.u0_inf, "floor": traj.floor,
        "ledger_tail": {c: float(led[c][-1]) for c in LEDGER_COLUMNS},
        "discrete_balance_defect": discrete_balance_defect(traj, float(led["t"][-1])),
    }
    report.series = {c: led[c] for c in LEDGER_COLUMNS}
    report.profiles = {"x": grid.x, "t": traj.snapshot_times,
                       "excess": traj.snapshots - traj.floor}
    if traj.status == "complete":
        if any(c["kind"] == "regime" for c in config.checks):
            try:
                report.observation = observed_regime(traj).as_dict()
            except (FitError, ValueError) as exc:
                report.observation = {"regime": "unclassified", "note": str(exc)}
        for c in config.checks:
            report.checks.append(_evaluate_check(c, traj, pred, report.estimates))
    else:
        for c in config.checks:
            report.checks.append({"id": c["id"], "kind": c["kind"], "passed": False,
                                  "error": f"solver aborted: {traj.message}"})
    report.series = _clean(report.series)
    report.profiles = _clean(report.profiles)
    report.estimates = _clean(report.estimates)
    report.wall_time = time.perf_counter() - t0
    out = config.outputs
    if out.get("report"):
        _write(out["report"], report.to_json())
    if out.get("ledger_csv"):
        _write(out["ledger_csv"], ledger_csv(traj))
    if out.get("snapshot"):
        save_snapshot(traj, out["snapshot"])
    return report


def ledger_csv(traj: Trajectory) -> str:
    led = traj.ledger
    return write_csv(LEDGER_COLUMNS, zip(*(led[c] for c in LEDGER_COLUMNS)))


def _write(path: str, text: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


# -- sweeps ----------------------------------------------------------------------------------

ATLAS_COLUMNS = ("p", "q", "N", "predicted_regime", "observed_regime", "fit_exponent",
                 "fit_r2", "T_e", "agree", "near_threshold")


@dataclass
class SweepConfig:
    name: str
    N: int
    cells: list                      # [(p, q), ...]
    base: dict                       # experiment config without params
    workers: int = 1
    near_threshold: float = NEAR_THRESHOLD
    min_agree: Optional[int] = None
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        if not isinstance(d, dict):
            raise ConfigError("sweep", "expected a JSON object")
        _unknown(d, ("name", "N", "cells", "p_values", "q_values", "base", "workers",
                     "near_threshold", "min_agree", "outputs"), "sweep")
        N = _int(d, "N", "sweep", 1, 1)
        if "cells" in d:
            cells = d["cells"]
            if not isinstance(cells, list) or not all(
                    isinstance(c, (list, tuple)) and len(c) == 2 for c in cells):
                raise ConfigError("sweep.cells", "expected a list of [p, q] pairs")
        else:
            pv, qv = d.get("p_values"), d.get("q_values")
            if not isinstance(pv, list) or not pv:
                raise ConfigError("sweep.p_values", "expected a non-empty list")
            if not isinstance(qv, list) or not qv:
                raise ConfigError("sweep.q_values", "expected a non-empty list")
            cells = [[p, q] for p in pv for q in qv]
        for i, (p, q) in enumerate(cells):
            try:
                Params(p, q, N)
            except DomainError as exc:
                raise ConfigError(f"sweep.cells[{i}]", str(exc)) from None
        base = d.get("base", {})
        if not isinstance(base, dict) or "params" in base:
            raise ConfigError("sweep.base", "expected an object without 'params'")
        # validate the template once with the first cell
        ExperimentConfig.from_dict(dict(base, params={"p": cells[0][0], "q": cells[0][1], "N": N}))
        workers = _int(d, "workers", "sweep", 1, 1)
        nt = _num(d, "near_threshold", "sweep", NEAR_THRESHOLD, positive=True)
        ma = d.get("min_agree")
        if ma is not None:
            ma = _int(d, "min_agree", "sweep", None, 0)
        outputs = d.get("outputs", {})
        if not isinstance(outputs, dict):
            raise ConfigError("sweep.outputs", "expected an object")
        _unknown(outputs, ("csv", "json"), "sweep.outputs")
        return cls(d.get("name", "sweep"), N, [[float(p), float(q)] for p, q in cells],
                   base, workers, nt, ma, dict(outputs))

    @classmethod
    def load(cls, path: str) -> "SweepConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("sweep", f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    def cell_config(self, p: float, q: float) -> dict:
        d = copy.deepcopy(self.base)
        d["params"] = {"p": p, "q": q, "N": self.N}
        d["name"] = f"{self.name}[p={fmt(p)},q={fmt(q)}]"
        d["outputs"] = {}
        return d


def _atlas_row(cfg_dict: dict, near_tol: float) -> dict:
    p, q, N = cfg_dict["params"]["p"], cfg_dict["params"]["q"], cfg_dict["params"]["N"]
    params = Params(p, q, N)
    row = {"p": p, "q": q, "N": N, "near_threshold": near_threshold(params, near_tol)}
    try:
        cfg = ExperimentConfig.from_dict(cfg_dict)
        rep = run_experiment(cfg)
    except Exception as exc:            # recorded, the sweep goes on
        row.update(predicted_regime=classify(params, True).regime.value,
                   observed_regime="error", fit_exponent=None, fit_r2=None, T_e=None,
                   agree=False, error=f"{type(exc).__name__}: {exc}")
        return row
    ob = rep.observation or {}
    regime = ob.get("regime", "unclassified")
    fit = ob.get("fit_linf_exp") if regime == "PositivityExponential" else ob.get("fit_linf_power")
    row.update(predicted_regime=rep.prediction["classification"]["regime"],
               observed_regime=regime,
               fit_exponent=fit["exponent_or_rate"] if fit else None,
               fit_r2=fit["r_squared"] if fit else None,
               T_e=ob.get("T_e"), agree=bool(rep.agree),
               run_status=rep.run["status"] if rep.run else None)
    return row


def run_sweep(sweep: SweepConfig, workers: Optional[int] = None) -> dict:
    """One experiment per cell; rows sorted by (p, q) whatever the pool order."""
    workers = sweep.workers if workers is None else workers
    cfgs = [sweep.cell_config(p, q) for p, q in sweep.cells]
    if workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_atlas_row, cfgs, [sweep.near_threshold] * len(cfgs)))
    else:
        rows = [_atlas_row(c, sweep.near_threshold) for c in cfgs]
    rows.sort(key=lambda r: (r["p"], r["q"]))
    scored = [r for r in rows if not r["near_threshold"]]
    n_agree = sum(1 for r in scored if r["agree"])
    summary = {"n_cells": len(rows), "n_scored": len(scored), "n_agree": n_agree,
               "min_agree": sweep.min_agree,
               "passed": sweep.min_agree is None or n_agree >= sweep.min_agree}
    atlas = {"name": sweep.name, "N": sweep.N, "rows": rows, "summary": summary,
             "base": sweep.base, "near_threshold_tol": sweep.near_threshold}
    if sweep.outputs.get("csv"):
        _write(sweep.outputs["csv"], atlas_csv(atlas))
    if sweep.outputs.get("json"):
        _write(sweep.outputs["json"], dumps(atlas))
    return atlas


def atlas_csv(atlas: dict) -> str:
    return write_csv(ATLAS_COLUMNS, ([r.get(c) for c in ATLAS_COLUMNS] for r in atlas["rows"]))


# -- snapshots ---------------------------------------------------------------------------------

def save_snapshot(traj: Trajectory, path: str) -> None:
    S, K = traj.snapshots.shape
    R = traj.ledger["t"].size
    block = np.concatenate([np.asarray(traj.snapshot_times, dtype="<f8"),
                            np.asarray(traj.snapshots, dtype="<f8").ravel()]
                           + [np.asarray(traj.ledger[c], dtype="<f8") for c in LEDGER_COLUMNS])
    raw = block.astype("<f8").tobytes()
    header = {
        "format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION,
        "params": traj.params.as_dict(), "grid": traj.grid.describe(),
        "solver": solver_config_to_dict(traj.config), "u0_inf": traj.u0_inf,
        "status": traj.status, "message": traj.message,
        "n_snapshots": S, "n_nodes": K, "n_ledger": R,
        "ledger_columns": list(LEDGER_COLUMNS), "nbytes": len(raw),
        "sha256": hashlib.sha256(raw).hexdigest(),
    }
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(raw)


def load_snapshot(path: str, expect_grid: Optional[Grid] = None) -> Trajectory:
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise SnapshotError("missing header line")
    try:
        header = json.loads(data[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"unreadable header: {exc}") from None
    if header.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"not a snapshot file (format={header.get('format')!r})")
    if header.get("version") != SNAPSHOT_VERSION:
        raise SnapshotVersionError(
            f"snapshot version {header.get('version')!r}, this reader handles {SNAPSHOT_VERSION}")
    raw = data[nl + 1:]
    if len(raw) != header["nbytes"]:
        raise SnapshotChecksumError(
            f"data block has {len(raw)} bytes, header declares {header['nbytes']} (truncated or padded)")
    if hashlib.sha256(raw).hexdigest() != header["sha256"]:
        raise SnapshotChecksumError("sha256 of the data block does not match the header")
    S, K, R = header["n_snapshots"], header["n_nodes"], header["n_ledger"]
    cols = header["ledger_columns"]
    if 8 * (S + S * K + R * len(cols)) != len(raw):
        raise SnapshotChecksumError("declared shapes do not match the data length")
    gs = header["grid"]
    grid = Grid(gs["geometry"], gs["L"], gs["M"], gs["N"])
    if grid.n_nodes != K:
        raise SnapshotShapeError(f"grid has {grid.n_nodes} nodes, snapshot rows have {K}")
    if expect_grid is not None and not expect_grid.same_shape(grid):
        raise SnapshotShapeError(f"snapshot grid {grid.describe()} differs from expected {expect_grid.describe()}")
    arr = np.frombuffer(raw, dtype="<f8").astype(float)
    times = arr[:S].copy()
    snaps = arr[S:S + S * K].reshape(S, K).copy()
    off = S + S * K
    ledger = {}
    for c in cols:
        ledger[c] = arr[off:off + R].copy()
        off += R
    pd = header["params"]
    return Trajectory(Params(pd["p"], pd["q"], pd["N"]), solver_config_from_dict(header["solver"]),
                      grid, times, snaps, ledger, header["u0_inf"], header["status"], header["message"])


# -- plot data ---------------------------------------------------------------------------------

PLOT_KINDS = ("DecayLogLog", "MassLedger", "ProfileEvolution", "EstimateRatio")


def emit_plot_data(report, kind: str, estimate_id: Optional[str] = None) -> str:
    """Headered CSV, one row per time sample, fixed column order."""
    rep = report.as_dict() if isinstance(report, RunReport) else report
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    series = rep.get("series")
    if kind in ("DecayLogLog", "MassLedger"):
        if not series:
            raise ValueError(f"{kind} needs the ledger series; the report has none")
        t = np.asarray(series["t"], dtype=float)
    if kind == "DecayLogLog":
        l1 = np.asarray(series["l1"], dtype=float)
        li = np.asarray(series["linf"], dtype=float)
        rows = []
        for a, b, c in zip(t, l1, li):
            if a > 0:
                rows.append((a, b, c, math.log(a), math.log(c) if c > 0 else None))
        return write_csv(("t", "l1", "linf", "log_t", "log_linf"), rows)
    if kind == "MassLedger":
        l1 = np.asarray(series["l1"], dtype=float)
        ab = np.cumsum(np.asarray(series["absorption_increment"], dtype=float))
        bf = np.cumsum(np.asarray(series["boundary_flux"], dtype=float))
        res = np.abs(l1 + ab - l1[0] - bf) / l1[0]
        return write_csv(("t", "l1", "absorption_cum", "boundary_cum", "residual"),
                         zip(t, l1, ab, bf, res))
    if kind == "ProfileEvolution":
        prof = rep.get("profiles")
        if not prof:
            raise ValueError("ProfileEvolution needs the profile snapshots; the report has none")
        header = ["t"] + [f"x={fmt(x)}" for x in prof["x"]]
        return write_csv(header, ([tt] + list(row) for tt, row in zip(prof["t"], prof["excess"])))
    est = rep.get("estimates") or {}
    if not est:
        raise ValueError("EstimateRatio needs a gradient_estimate check; the report has none")
    if estimate_id is None:
        estimate_id = sorted(est)[0]
    if estimate_id not in est:
        raise ValueError(f"EstimateRatio: series for {estimate_id!r} missing (have {sorted(est)})")
    e = est[estimate_id]
    return write_csv(("t", "lhs_max", "rhs", "ratio"), zip(e["t"], e["lhs_max"], e["rhs"], e["ratio"]))
