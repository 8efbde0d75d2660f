"""Command-line front end: converge, simulate, kernels-check.

A flat key=value config file may supply any flag (keys named like the long
options); explicit flags override file values.  Exit codes: 0 success,
2 invariant violation, 1 error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import (
    check_monitors,
    coarsening_run,
    convergence_study,
    emit,
    kernels_check,
    write_field,
)
from .stepper import AdaptiveConfig, RunAborted

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVARIANT = 2


def _floats(text: str):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str):
    return [int(x) for x in text.split(",") if x.strip()]


def _load_config(path) -> dict:
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"bad config line: {raw.rstrip()}")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tfmbe",
        description="Variable-step L1 solver for the time-fractional MBE equation",
    )
    ap.add_argument("--config", help="flat key=value file supplying any flag")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("converge", help="temporal convergence-order study")
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--gammas", type=str, required=True, help="comma list, e.g. 1,1.5,2")
    c.add_argument("--Ns", type=str, required=True, help="comma list, e.g. 40,80,160,320")
    c.add_argument("--seed", type=int, default=2025)
    c.add_argument("--grid", type=int, default=32)
    c.add_argument("--eps2", type=float, default=0.25)
    c.add_argument("--kappa", type=float, default=1.0)
    c.add_argument("--T", type=float, default=1.0)
    c.add_argument("--scheme", choices=("l1", "splitting", "euler"), default="l1")
    c.add_argument("--out", help="CSV output path")

    s = sub.add_parser("simulate", help="coarsening run (adaptive or uniform steps)")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--eps2", type=float, default=0.1)
    s.add_argument("--kappa", type=float, default=1.0)
    s.add_argument("--eta", type=float, help="adaptive controller gain")
    s.add_argument("--tau-min", type=float, default=1e-3)
    s.add_argument("--tau-max", type=float, default=1e-1)
    s.add_argument("--uniform-tau", type=float, help="fixed step instead of adaptive")
    s.add_argument("--T", type=float, default=30.0)
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--snapshots", type=str, default="", help="comma list of times")
    s.add_argument("--snap-format", choices=("bin", "csv"), default="bin")
    s.add_argument("--scheme", choices=("l1", "splitting", "euler"), default="l1")
    s.add_argument("--enforce", choices=("off", "convergence", "solvability"),
                   default="solvability")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out", help="record output path")

    k = sub.add_parser("kernels-check", help="kernel identity audit")
    k.add_argument("--alpha", type=float, required=True)
    k.add_argument("--mesh", choices=("uniform", "graded", "random"), default="random")
    k.add_argument("--N", type=int, default=50)
    k.add_argument("--gamma", type=float, default=2.0)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--tol", type=float, default=1e-10)
    k.add_argument("--out", help="optional CSV output path")
    return ap


def _parse(argv) -> argparse.Namespace:
    ap = _build_parser()
    args, _ = ap.parse_known_args(argv)
    if args.config:
        overrides = _load_config(args.config)
        for action in ap._subparsers._group_actions[0].choices[args.command]._actions:
            if action.dest in overrides:
                action.default = action.type(overrides[action.dest]) if action.type else overrides[action.dest]
                action.required = False
    return ap.parse_args(argv)


def _cmd_converge(args) -> int:
    tables = convergence_study(
        args.alpha, _floats(args.gammas), _ints(args.Ns),
        eps2=args.eps2, kappa=args.kappa, M=args.grid, T=args.T,
        seed=args.seed, scheme=args.scheme,
    )
    lines = ["gamma,N,tau_max,eN,order"]
    for gamma, rows in tables.items():
        for r in rows:
            order = "" if r.order is None else f"{r.order:.4f}"
            lines.append(f"{gamma},{r.N},{r.tau_max!r},{r.eN!r},{order}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if (args.eta is None) == (args.uniform_tau is None):
        print("simulate: pass exactly one of --eta or --uniform-tau", file=sys.stderr)
        return EXIT_ERROR
    adaptive = None
    if args.eta is not None:
        adaptive = AdaptiveConfig(tau_min=args.tau_min, tau_max=args.tau_max,
                                  eta=args.eta)
    snaps_req = _floats(args.snapshots) if args.snapshots else []
    record, snaps = coarsening_run(
        args.alpha, eps2=args.eps2, kappa=args.kappa, T=args.T, M=args.grid,
        scheme=args.scheme, adaptive=adaptive, uniform_tau=args.uniform_tau,
        enforce_step_bound=args.enforce, snapshot_times=snaps_req,
    )
    print(f"steps={record.steps_taken}  final E={record.E[-1]:.6g}  "
          f"final E_alpha={record.E_alpha[-1]:.6g}")
    if args.out:
        emit(record, args.format, args.out)
        for tq, (t_actual, phi) in snaps.items():
            ext = "bin" if args.snap_format == "bin" else "csv"
            write_field(phi, f"{args.out}.t{tq:g}.{ext}", args.snap_format)
            print(f"snapshot requested t={tq:g} written at t={t_actual:.6g}")
    issues = check_monitors(record, dissipation=(args.scheme != "splitting"))
    if issues:
        for msg in issues:
            print(f"INVARIANT VIOLATION: {msg}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_kernels_check(args) -> int:
    rep = kernels_check(args.alpha, args.mesh, args.N, gamma=args.gamma,
                        seed=args.seed)
    rows = [
        ("max orthogonality residual", rep["max_orthogonality_residual"]),
        ("max complementarity residual", rep["max_complementarity_residual"]),
        ("min DCC kernel", rep["min_dcc"]),
        ("min integral-cap gap", rep["min_integral_cap_gap"]),
    ]
    width = max(len(k) for k, _ in rows)
    print(f"kernel audit: alpha={args.alpha} mesh={args.mesh} N={args.N}")
    for k, v in rows:
        print(f"  {k:<{width}}  {v: .3e}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("quantity,value\n")
            for k, v in rows:
                fh.write(f"{k.replace(' ', '_')},{v!r}\n")
    bad = (rep["max_orthogonality_residual"] > args.tol
           or rep["max_complementarity_residual"] > args.tol
           or rep["min_dcc"] < -args.tol
           or rep["min_integral_cap_gap"] < -args.tol)
    if bad:
        print("INVARIANT VIOLATION: kernel identities out of tolerance", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _parse(sys.argv[1:] if argv is None else argv)
        if args.command == "converge":
            return _cmd_converge(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_kernels_check(args)
    except RunAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
