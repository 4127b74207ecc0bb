"""Command line entry point.

Exit codes: 0 every requested check within tolerance, 1 check failures,
2 usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .exponents import DomainError, Params, classify, critical_exponents, sigma_constants
from .functionals import FitError, fit_exponential_decay, fit_power_decay
from .harness import (
    PLOT_KINDS,
    ConfigError,
    ExperimentConfig,
    RunReport,
    SweepConfig,
    atlas_csv,
    dumps,
    _write,
    emit_plot_data,
    run_experiment,
    run_sweep,
)
from .verify import (
    RhoChoice,
    RhoId,
    TimeSupersolution,
    certify_identity,
    check_static_barrier_pc,
    check_stationary_supersolution,
    check_time_supersolution,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
STATIONARY = "StationarySigma"
STATIC_PC = "StaticBarrierPc"


def _emit(text: str, path=None):
    if path:
        _write(path, text)
    else:
        sys.stdout.write(text)


def _window_arg(s: str):
    try:
        a, b = (float(x) for x in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {s!r}")
    if not 0 <= a < b:
        raise argparse.ArgumentTypeError("window needs 0 <= a < b")
    return (a, b)


def _radii_arg(s: str):
    try:
        return [float(x) for x in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated radii, got {s!r}")


def cmd_classify(args) -> int:
    params = Params(args.p, args.q, args.n)
    out = {"params": params.as_dict(), "fast_decay_data": args.fast_decay,
           "prediction": classify(params, args.fast_decay).as_dict(),
           "critical_exponents": critical_exponents(params).as_dict()}
    _emit(dumps(out))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    rep = run_experiment(cfg)
    if args.out:
        _emit(rep.to_json(), args.out)
    elif not cfg.outputs.get("report"):
        _emit(rep.to_json())
    for c in rep.checks:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[c.get("passed")]
        print(f"{status} {c['id']}", file=sys.stderr)
    print(f"wall time {rep.wall_time:.2f}s", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_sweep(args) -> int:
    sweep = SweepConfig.load(args.config)
    atlas = run_sweep(sweep, args.workers)
    if not sweep.outputs.get("csv"):
        _emit(atlas_csv(atlas))
    s = atlas["summary"]
    print(f"agree {s['n_agree']}/{s['n_scored']} scored cells ({s['n_cells']} total)", file=sys.stderr)
    return EXIT_OK if s["passed"] else EXIT_FAIL


def cmd_fit(args) -> int:
    try:
        with open(args.input, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if len(rows) < 2:
        print("error: CSV needs a header and data rows", file=sys.stderr)
        return EXIT_USAGE
    header = rows[0]
    tcol = header.index("t") if "t" in header else 0
    if args.column is None:
        ycol = 1 if tcol == 0 else 0
    elif args.column in header:
        ycol = header.index(args.column)
    else:
        print(f"error: column {args.column!r} not in {header}", file=sys.stderr)
        return EXIT_USAGE
    try:
        t = np.array([float(r[tcol]) for r in rows[1:] if r[ycol] != ""])
        y = np.array([float(r[ycol]) for r in rows[1:] if r[ycol] != ""])
    except (ValueError, IndexError) as exc:
        print(f"error: unreadable numbers: {exc}", file=sys.stderr)
        return EXIT_USAGE
    window = args.window if args.window is not None else (float(t.min()), float(t.max()))
    fitter = fit_power_decay if args.kind == "power" else fit_exponential_decay
    try:
        fit = fitter(t, y, window)
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = {"column": header[ycol], "fit": fit.as_dict()}
    code = EXIT_OK
    if args.expect is not None:
        err = abs(fit.exponent_or_rate - args.expect) / abs(args.expect)
        out.update(expected=args.expect, relative_error=err, passed=err <= args.rel_tol)
        code = EXIT_OK if err <= args.rel_tol else EXIT_FAIL
    _emit(dumps(out))
    return code


def cmd_verify_bernstein(args) -> int:
    params = Params(args.p, args.q, args.n)
    if args.choice != "all":
        rep = certify_identity(RhoChoice(args.choice, params, args.aux), args.samples).as_dict()
        _emit(dumps(rep))
        return EXIT_OK if rep["passed"] else EXIT_FAIL
    # every choice whose domain contains (p, q, N); the others are listed as skipped
    reports, skipped = [], {}
    for cid in RhoId:
        try:
            choice = RhoChoice(cid, params, args.aux)
        except DomainError as exc:
            skipped[cid.value] = str(exc)
            continue
        reports.append(certify_identity(choice, args.samples).as_dict())
    if not reports:
        raise DomainError(f"no rho choice is valid at p={params.p!r}, q={params.q!r}, N={params.N!r}")
    _emit(dumps({"reports": reports, "skipped": skipped}))
    return EXIT_OK if all(r["passed"] for r in reports) else EXIT_FAIL


def cmd_verify_supersolution(args) -> int:
    params = Params(args.p, args.q, args.n)
    if args.which == STATIONARY:
        _, A0 = sigma_constants(params)
        A = args.A if args.A is not None else args.A_factor * A0
        rep = check_stationary_supersolution(A, params, args.radii)
    elif args.which == STATIC_PC:
        rep = check_static_barrier_pc(params, args.C0, args.radii)
    else:
        rep = check_time_supersolution(args.which, params, args.u0, (args.t_min, args.t_max), args.C)
    _emit(dumps(rep.as_dict()))
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_plot_data(args) -> int:
    import json
    try:
        with open(args.report) as fh:
            rep = RunReport.from_dict(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(emit_plot_data(rep, args.kind, args.estimate), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plaplab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def pqn(sp):
        sp.add_argument("--p", type=float, required=True)
        sp.add_argument("--q", type=float, required=True)
        sp.add_argument("--n", type=int, required=True, help="space dimension N")

    sp = sub.add_parser("classify", help="predicted regime and exponents for (p, q, N)")
    pqn(sp)
    sp.add_argument("--fast-decay", action="store_true",
                    help="assume the datum decays at least like the stationary tail")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("simulate", help="run one experiment from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="report path (default: config outputs.report or stdout)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run a parameter sweep and write the atlas")
    sp.add_argument("--config", required=True)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("fit", help="fit a power or exponential decay to a CSV column")
    sp.add_argument("--input", required=True)
    sp.add_argument("--kind", choices=("power", "exp"), required=True)
    sp.add_argument("--window", type=_window_arg, default=None, help="a,b")
    sp.add_argument("--column", default=None, help="value column (default: the first non-t column)")
    sp.add_argument("--expect", type=float, default=None)
    sp.add_argument("--rel-tol", type=float, default=0.15)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("verify-bernstein", help="certify the R1/R2 algebra of a rho choice")
    sp.add_argument("--choice", required=True, choices=[c.value for c in RhoId] + ["all"])
    pqn(sp)
    sp.add_argument("--aux", type=float, default=None, help="||u0||_inf for log/implicit/sqrt choices")
    sp.add_argument("--samples", type=int, default=64)
    sp.set_defaults(func=cmd_verify_bernstein)

    sp = sub.add_parser("verify-supersolution", help="check a supersolution of the catalog")
    sp.add_argument("--which", required=True,
                    choices=[w.value for w in TimeSupersolution] + [STATIONARY, STATIC_PC])
    pqn(sp)
    sp.add_argument("--u0", type=float, default=1.0, help="||u0||_inf")
    sp.add_argument("--C", type=float, default=None, help="free constant (PowerLowQ C, HJ_case1 K)")
    sp.add_argument("--t-min", type=float, default=1e-3)
    sp.add_argument("--t-max", type=float, default=1e3)
    sp.add_argument("--A", type=float, default=None, help="amplitude of A r^-alpha")
    sp.add_argument("--A-factor", type=float, default=1.0, help="amplitude as a multiple of A0")
    sp.add_argument("--C0", type=float, default=1.0, help="amplitude of C0 r^-N")
    sp.add_argument("--radii", type=_radii_arg, default=[0.1, 1.0, 10.0])
    sp.set_defaults(func=cmd_verify_supersolution)

    sp = sub.add_parser("plot-data", help="CSV series from a saved report")
    sp.add_argument("--report", required=True)
    sp.add_argument("--kind", required=True, choices=PLOT_KINDS)
    sp.add_argument("--estimate", default=None, help="estimate id for EstimateRatio")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_plot_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
