"""Command line front end.

    ussfboost simulate --config scenario.json [--out trace.csv]
                       [--summary summary.json] [--backend NAME]
    ussfboost compare  --config scenario.json [--out report.json]
                       [--backend NAME]
    ussfboost verify-ussf --kind {tanh,atan,alg,erf} [--span S] [--tol T]
    ussfboost sweep    --config scenario.json [--v0 2,6,10] [--band F]
                       [--bound S] [--backend NAME]
    ussfboost bench    [--config scenario.json] [--iters N] [--out FILE]

Exit codes: 0 success, 1 validation error, 2 runtime fault,
3 acceptance regression (wrong MSE ordering, sweep out of bound, or a
saturating-function certificate that fails its axioms).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import List, Optional

from . import backend as _backend
from .config import Scenario, ValidationError, load_scenario
from .harness import (benchmark_step_latency, event_times_of, run_comparison,
                      run_scenario, settling_times, summary_dict,
                      sweep_initial_conditions, write_summary_json,
                      write_trace_csv)
from .ussf import CertificationError, certify_epsilon, verify_axioms

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_FAULT = 2
EXIT_REGRESSION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ussfboost",
        description="Boost-converter simulations with saturating "
                    "fixed-time control")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one scenario")
    sim.add_argument("--config", required=True, help="scenario JSON file")
    sim.add_argument("--out", help="write the trace CSV here")
    sim.add_argument("--summary", help="write the summary JSON here")
    sim.add_argument("--backend", choices=("compiled", "python"),
                     help="force a kernel backend")

    cmp_ = sub.add_parser(
        "compare", help="rank ftc/baseline/pid on one scenario by MSE")
    cmp_.add_argument("--config", required=True, help="scenario JSON file")
    cmp_.add_argument("--out", help="write the comparison report JSON here")
    cmp_.add_argument("--backend", choices=("compiled", "python"))

    ver = sub.add_parser(
        "verify-ussf",
        help="certify a saturating function and print its certificate")
    ver.add_argument("--kind", required=True,
                     choices=("tanh", "atan", "alg", "erf"))
    ver.add_argument("--span", type=float, default=1e3,
                     help="grid span for the certification scan")
    ver.add_argument("--tol", type=float, default=1e-6,
                     help="tolerance for the residual cross-check")

    swp = sub.add_parser(
        "sweep", help="settling times across initial output voltages")
    swp.add_argument("--config", required=True, help="scenario JSON file")
    swp.add_argument("--v0", default="2,6,10",
                     help="comma-separated initial v0 values [V]")
    swp.add_argument("--band", type=float, default=0.02,
                     help="settling band as a fraction of vr")
    swp.add_argument("--bound", type=float,
                     help="enforce: all recoveries below this many "
                          "seconds and within a 2x spread")
    swp.add_argument("--backend", choices=("compiled", "python"))

    ben = sub.add_parser(
        "bench", help="per-step latency of each kernel backend")
    ben.add_argument("--config", help="scenario JSON file (default: the "
                                      "stock load-step scenario)")
    ben.add_argument("--iters", type=int, default=100000,
                     help="number of steps to time")
    ben.add_argument("--out", help="write the benchmark JSON here")
    return parser


def _parse_floats(text: str) -> List[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ValidationError(f"bad float list {text!r}: {exc}") from exc
    if not values:
        raise ValidationError("empty value list")
    return values


def _cmd_simulate(args) -> int:
    sc = load_scenario(args.config)
    res = run_scenario(sc, backend=args.backend)
    if args.out:
        write_trace_csv(args.out, res.trace)
    settling = settling_times(res.trace, sc.plant.vr, event_times_of(sc))
    if args.summary:
        write_summary_json(args.summary, res, settling)
    m = res.metrics
    print(f"backend={res.backend} controller={sc.controller.type} "
          f"steps={sc.n_steps} wall={res.wall_s:.3f}s")
    print(f"mse={m['mse']:.9g} rmse={m['rmse']:.9g} mae={m['mae']:.9g} "
          f"final_v0={res.final['v0']:.9g}")
    for ev in settling:
        print(f"event t={ev.t_event:g}s R={ev.R:g}ohm "
              f"recovery={ev.recovery_s:.9g}s")
    if not res.ok:
        print(f"FAULT: {res.fault_name} at step {res.fault_step}",
              file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def _cmd_compare(args) -> int:
    sc = load_scenario(args.config)
    report, results = run_comparison(sc, backend=args.backend)
    doc = report.as_dict()
    doc["runs"] = {name: summary_dict(res) for name, res in
                   sorted(results.items())}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    for e in report.entries:
        print(f"{e.name:<10} mse={e.mse:.9g} rmse={e.rmse:.9g} "
              f"mae={e.mae:.9g}")
    print(f"ordering: {' < '.join(report.ordering)} "
          f"(expected {' < '.join(report.expected)})")
    if any(r.fault for r in results.values()):
        for name, r in sorted(results.items()):
            if r.fault:
                print(f"FAULT in {name}: {r.fault_name} at step "
                      f"{r.fault_step}", file=sys.stderr)
        return EXIT_FAULT
    if not report.matches_expected:
        print("MSE ordering does not match the expected ranking",
              file=sys.stderr)
        return EXIT_REGRESSION
    return EXIT_OK


def _cmd_verify_ussf(args) -> int:
    try:
        cert = certify_epsilon(args.kind, grid_span=args.span,
                               tolerance=args.tol)
        report = verify_axioms(args.kind, span=args.span)
    except CertificationError as exc:
        print(json.dumps({"kind": args.kind, "error": str(exc)}, indent=2))
        return EXIT_REGRESSION
    doc = {
        "kind": cert.kind,
        "epsilon": cert.epsilon,
        "m_bound": cert.m_bound,
        "grid_span": cert.grid_span,
        "tolerance": cert.tolerance,
        "axioms": report.asdict(),
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK if report.passed else EXIT_REGRESSION


def _cmd_sweep(args) -> int:
    sc = load_scenario(args.config)
    values = _parse_floats(args.v0)
    rows = sweep_initial_conditions(sc, values, band_frac=args.band,
                                    backend=args.backend)
    print("v0_0[V]  recovery[s]  mse[V^2]")
    for row in rows:
        print(f"{row['v0_0']:<8g} {row['recovery_s']:<12.9g} "
              f"{row['mse']:.9g}")
    if any(row["fault"] for row in rows):
        print("FAULT during sweep", file=sys.stderr)
        return EXIT_FAULT
    if args.bound is not None:
        recs = [row["recovery_s"] for row in rows]
        worst = max(recs)
        best = min(recs)
        spread = 1.0 if worst == 0.0 else (
            math.inf if best == 0.0 else worst / best)
        print(f"max={worst:.9g}s spread={spread:.9g}x bound={args.bound:g}s")
        if worst > args.bound or spread >= 2.0:
            print("sweep violates the settling bound", file=sys.stderr)
            return EXIT_REGRESSION
    return EXIT_OK


def _cmd_bench(args) -> int:
    sc = load_scenario(args.config) if args.config else Scenario()
    report = benchmark_step_latency(sc, iterations=args.iters)
    backends = _backend.available_backends()
    for name in backends:
        row = report[name]
        print(f"{name:<9} mean={row['mean'] * 1e9:.0f}ns "
              f"p99={row['p99'] * 1e9:.0f}ns steps={row['steps']}")
    if "speedup" in report:
        print(f"speedup: {report['speedup']:.1f}x (python mean over "
              f"compiled mean)")
    else:
        print("compiled kernel not available; timed the pure-Python "
              "loop only")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    if any(report[name].get("fault") for name in backends):
        return EXIT_FAULT
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "verify-ussf": _cmd_verify_ussf,
    "sweep": _cmd_sweep,
    "bench": _cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
