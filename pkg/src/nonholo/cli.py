"""Command-line front end.

    nonholo run --scenario rolling-sphere --method flannery --t-end 2 --adaptive --tol 1e-10 --out f.csv
    nonholo compare --scenario rolling-sphere --method oracle --method dirac --method flannery --t-end 2
    nonholo check [--filter brackets]

Exit codes: 0 success, 1 usage or bad input, 2 numerical failure, 3 drift abort.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from . import checks, scenarios, simulate
from .dynamics import F_METRICS
from .errors import ConstraintViolated, DriftAbort, NumericalError
from .exprlang import ExprError
from .integrate import IntegratorOpts

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_DRIFT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for numerical failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RunReport:
    scenario: str
    method: str
    opts: dict
    wall_time: float
    steps: int
    rhs_evals: int
    final_time: float
    final_state: dict
    max_residual: float
    max_plam: float
    energy_drift: float
    outputs: dict

    def to_json(self) -> dict:
        return asdict(self)


def _relative_drift(values) -> float:
    e = np.asarray(values, dtype=float)
    scale = abs(e[0]) if e[0] != 0 else 1.0
    return float(np.max(np.abs(e - e[0])) / scale)


def make_report(result: simulate.RunResult, wall: float) -> RunReport:
    spec = result.cfg.spec
    traj = result.trajectory
    final = result.system.describe(traj.times[-1], traj.states[-1])
    state = {c: float(v) for c, v in zip(spec.coords, final["q"])}
    state.update({pn: float(v) for pn, v in zip(spec.momenta_names, final["p"])})
    state.update({ln: float(v) for ln, v in zip(spec.lam_names, final["lam"])})
    state.update({vn: float(v) for vn, v in zip(spec.velocities, final["qd"])})
    diag = traj.diag
    outputs = {}
    if result.cfg.outputs:
        vals = simulate.evaluate_outputs(spec, [final], result.cfg.outputs)[0]
        outputs = {src: float(v) for src, v in zip(result.cfg.outputs, vals)}
    return RunReport(
        scenario=spec.name,
        method=result.method,
        opts=asdict(result.opts),
        wall_time=wall,
        steps=len(traj) - 1,
        rhs_evals=traj.rhs_evals,
        final_time=float(traj.times[-1]),
        final_state=state,
        max_residual=max(d["residual"] for d in diag),
        max_plam=max(d.get("plam", 0.0) for d in diag),
        energy_drift=_relative_drift([d["energy"] for d in diag]),
        outputs=outputs,
    )


def csv_header(spec, observables=()) -> list[str]:
    cols = ["t"]
    cols += [f"q:{c}" for c in spec.coords]
    cols += [f"p:{c}" for c in spec.coords]
    cols += [f"lam:{k + 1}" for k in range(spec.m)]
    cols += [f"g:{k + 1}" for k in range(spec.m)]
    cols += ["energy", "H"]
    cols += [f"obs:{src}" for src in observables]
    return cols


def write_csv(path, spec, records, observables=()) -> None:
    extra = (simulate.evaluate_outputs(spec, records, observables)
             if observables else np.zeros((len(records), 0)))
    lines = [",".join(csv_header(spec, observables))]
    for rec, obs in zip(records, extra):
        row = [rec["t"], *rec["q"], *rec["p"], *rec["lam"], *rec["g"], rec["energy"], rec["H"],
               *obs]
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def opts_from_args(args) -> IntegratorOpts:
    if args.dt is not None and args.adaptive:
        raise UsageError("--dt and --adaptive are mutually exclusive")
    if args.tol is not None and args.dt is not None:
        raise UsageError("--tol only applies with --adaptive")
    common = dict(drift_abort=args.drift_abort, stabilization=args.stabilize,
                  max_steps=args.max_steps)
    try:
        if args.dt is not None:
            return IntegratorOpts(scheme="rk4", dt=args.dt, **common)
        tol = 1e-10 if args.tol is None else args.tol
        return IntegratorOpts(scheme="dp45", rel_tol=tol, abs_tol=tol, **common)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(args):
    try:
        return scenarios.resolve(args.scenario)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc


def _sample_times(args) -> np.ndarray:
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    if not args.t_end > 0:
        raise UsageError("--t-end must be positive")
    return np.linspace(0.0, args.t_end, args.samples)


def _observables(args) -> tuple[str, ...]:
    if not args.observables:
        return ()
    return tuple(s.strip() for s in args.observables.split(";") if s.strip())


def _timed_run(cfg, method, t_end, opts, f_metric="mass"):
    start = time.perf_counter()
    result = simulate.run(cfg, method, t_end, opts, f_metric)
    return result, time.perf_counter() - start


def cmd_run(args) -> int:
    cfg = _load(args)
    opts = opts_from_args(args)
    ts = _sample_times(args)
    observables = _observables(args)
    result, wall = _timed_run(cfg, args.method, args.t_end, opts, args.f_metric)
    records = result.table(ts)
    out = args.out or f"{cfg.spec.name}_{args.method}.csv"
    write_csv(out, cfg.spec, records, observables)
    report = make_report(result, wall).to_json()
    report["csv"] = str(out)
    report["samples"] = len(ts)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def compare_runs(cfg, results: dict, ts) -> list[dict]:
    coords = cfg.spec.coords
    sampled = {m: r.sample_q(ts) for m, r in results.items()}
    pairs = []
    for a, b in combinations(results, 2):
        diff = np.abs(sampled[a] - sampled[b])
        pairs.append({
            "a": a,
            "b": b,
            "max_abs": {c: float(v) for c, v in zip(coords, diff.max(axis=0))},
            "final": {c: float(v) for c, v in zip(coords, diff[-1])},
            "max_abs_overall": float(diff.max()),
        })
    return pairs


def cmd_compare(args) -> int:
    methods = list(dict.fromkeys(args.method or []))
    if len(methods) < 2:
        raise UsageError("compare needs at least two distinct --method values")
    cfg = _load(args)
    opts = opts_from_args(args)
    ts = _sample_times(args)
    results, reports = {}, []
    for method in methods:
        result, wall = _timed_run(cfg, method, args.t_end, opts, args.f_metric)
        results[method] = result
        reports.append(make_report(result, wall).to_json())
    doc = {"scenario": cfg.spec.name, "samples": len(ts), "t_end": args.t_end,
           "runs": reports, "pairs": compare_runs(cfg, results, ts)}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_check(args) -> int:
    results = checks.run_checks(args.filter)
    for res in results:
        line = f"{'PASS' if res.ok else 'FAIL'} {res.group}/{res.name}"
        print(line if res.ok else f"{line}: {res.detail}")
    if not results:
        print(f"no invariants match filter {args.filter!r}", file=sys.stderr)
        return EXIT_USAGE
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} invariants hold")
    return EXIT_NUMERICAL if failed else EXIT_OK


def _add_run_flags(p, multi_method: bool):
    p.add_argument("--scenario", required=True, help="builtin name or path to a .json scenario")
    if multi_method:
        p.add_argument("--method", action="append", choices=simulate.METHODS,
                       help="repeat for each method to compare")
    else:
        p.add_argument("--method", default="flannery", choices=simulate.METHODS)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dt", type=float, help="fixed RK4 step")
    p.add_argument("--adaptive", action="store_true", help="Dormand-Prince 5(4) (default)")
    p.add_argument("--tol", type=float, help="relative and absolute tolerance for --adaptive")
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--stabilize", choices=("none", "projection"), default="none")
    p.add_argument("--drift-abort", type=float, default=None,
                   help="abort with exit 3 when max|g| exceeds this")
    p.add_argument("--max-steps", type=int, default=1_000_000)
    p.add_argument("--f-metric", choices=F_METRICS, default="mass",
                   help="metric for the minimum-norm transposition solve")
    p.add_argument("--out", help="CSV path (run) or JSON path (compare)")
    if not multi_method:
        p.add_argument("--observables", help='extra CSV columns, e.g. "x^2+y^2;p_x"')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nonholo", description="Constrained dynamics with Flannery brackets.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_run_flags(sub.add_parser("run", help="integrate one scenario and write CSV"), False)
    _add_run_flags(sub.add_parser("compare", help="run several methods on a shared grid"), True)
    check = sub.add_parser("check", help="run the invariant suite")
    check.add_argument("--filter", default=None, help="group name or substring of invariant names")
    return parser


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "check": cmd_check}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (scenarios.ScenarioError, ConstraintViolated, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DriftAbort as exc:
        print(f"drift abort: {exc}", file=sys.stderr)
        return EXIT_DRIFT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
