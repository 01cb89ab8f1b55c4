"""Command line entry point: ``python3 -m lcvx {solve,sweep,check,micp}``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import rocket
from .conditions import a_priori_report, full_report
from .driver import (InfeasibleBracket, SolveFailure, audit_losslessness, golden_search_tf,
                     solve_fixed_tf)
from .ocp import SemiContinuousOCP, ValidationError, relax, validate
from .transcription import OCPSolution, transcribe

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_CONDITIONS = 0, 2, 3, 4, 5


class ConfigError(Exception):
    pass


def load_config(path):
    """Return ("rocket", RocketConfig) or ("ocp", (SemiContinuousOCP, solve options))."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        if "dynamics" in data:
            opts = data.get("solve", {})
            return "ocp", (SemiContinuousOCP.from_dict(data), opts)
        return "rocket", rocket.RocketConfig.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _rocket_overrides(cfg, args):
    kw = {}
    if isinstance(getattr(args, "h0", None), (int, float)):
        kw["h0"] = args.h0
    if getattr(args, "zeta", None) is not None:
        kw["zeta"] = args.zeta
    if getattr(args, "nodes", None) is not None:
        kw["N"] = args.nodes
    try:
        return cfg.replace(**kw) if kw else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _print(obj):
    print(json.dumps(obj, indent=2, default=rocket._json_default))


def cmd_check(args) -> int:
    kind, cfg = load_config(args.config)
    if kind == "rocket":
        problem = rocket.build_rocket_ocp(cfg)
        D = rocket.running_cost_directions(cfg)
    else:
        problem, D = cfg[0], None
    report = validate(problem)
    out = {"valid": report.ok,
           "violations": [{"code": v.code, "message": v.message, "channel": v.channel}
                          for v in report.violations]}
    if not report.ok:
        _print(out)
        return EXIT_INVALID
    rep = a_priori_report(problem, D)
    out.update(condition1=rep.condition1, unobservable_dim=rep.unobservable_dim,
               assumption1=rep.assumption1, assumption2=rep.assumption2)
    _print(out)
    return EXIT_OK if rep.condition1 else EXIT_CONDITIONS


def _solve_generic(problem, opts, args) -> int:
    relaxed = relax(problem)
    N = args.nodes or int(opts.get("N", 50))
    if "t_f" in opts:
        t_f = float(opts["t_f"])
        sol = solve_fixed_tf(relaxed, N, t_f)
        if not isinstance(sol, OCPSolution):
            print(f"infeasible at t_f = {t_f}", file=sys.stderr)
            return EXIT_INFEASIBLE
        evals = 1
    else:
        lo, hi = opts.get("t_f_bracket", [1.0, 100.0])
        t_f, sol, info = golden_search_tf(relaxed, N, (lo, hi), float(opts.get("tol_t", 0.05)))
        evals = info["evaluations"]
    tp = transcribe(relaxed, N, t_f)
    report, adj = full_report(tp, sol)
    audit = audit_losslessness(sol, relaxed)
    summary = {"status": "Optimal", "cost": sol.cost, "t_f": t_f, "N": N,
               "golden_evaluations": evals,
               "solver": {k: sol.stats.get(k) for k in ("iterations", "solve_time")},
               "conditions": report.to_dict(), "lossless": audit.to_dict()}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rocket.write_trajectory(sol, out / "trajectory.csv", rocket=False)
        rocket.write_gains(adj, out / "gains.csv")
        rocket.write_json(summary, out / "summary.json")
    _print({k: summary[k] for k in ("status", "cost", "t_f", "N")})
    return EXIT_OK if (report.all_hold and audit.verdict) else EXIT_CONDITIONS


def cmd_solve(args) -> int:
    kind, cfg = load_config(args.config)
    if kind == "ocp":
        return _solve_generic(*cfg, args)
    cfg = _rocket_overrides(cfg, args)
    bundle = rocket.run_case(cfg, args.out)
    s = bundle.summary()
    _print({k: s[k] for k in ("status", "h0", "zeta", "cost", "t_f", "N", "runtime")}
           | {"lossless": bundle.lossless.verdict, "conditions_hold": bundle.conditions.all_hold})
    return EXIT_OK if bundle.ok else EXIT_CONDITIONS


def parse_range(text: str):
    try:
        lo, hi, count = text.split(":")
        return list(np.linspace(float(lo), float(hi), int(count)))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count, got {text!r}") from exc


def cmd_sweep(args) -> int:
    kind, cfg = load_config(args.config)
    if kind != "rocket":
        raise ConfigError("sweep needs a rocket configuration")
    cfg = _rocket_overrides(cfg, argparse.Namespace(zeta=args.zeta, nodes=args.nodes))
    rows = rocket.run_sweep(cfg, args.h0, args.out, args.workers)
    for r in rows:
        print(",".join(str(r.get(k, "")) for k in rocket.SWEEP_FIELDS))
    if any(r["status"] != "Optimal" for r in rows):
        return EXIT_NUMERICAL if any(r["status"] not in ("Optimal", "Infeasible")
                                     for r in rows) else EXIT_INFEASIBLE
    ok = all(r["lossless"] and r["condition1"] and r["condition2"] and r["condition3"]
             and r["condition4"] for r in rows)
    return EXIT_OK if ok else EXIT_CONDITIONS


def cmd_micp(args) -> int:
    kind, cfg = load_config(args.config)
    if kind != "rocket":
        raise ConfigError("micp needs a rocket configuration")
    if args.nodes > 20:
        raise ConfigError("--nodes must be at most 20 for the oracle")
    cfg = _rocket_overrides(cfg, argparse.Namespace(zeta=args.zeta, h0=args.h0, nodes=None))
    row = rocket.run_micp_comparison(cfg, args.nodes, args.max_nodes)
    _print(row)
    if row["micp_status"] != "Optimal":
        return EXIT_INFEASIBLE
    return EXIT_OK if row["equivalent"] else EXIT_CONDITIONS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcvx", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="golden search over t_f, conditions and audit")
    s.add_argument("--config", required=True)
    s.add_argument("--h0", type=float)
    s.add_argument("--zeta", type=int, choices=(0, 1))
    s.add_argument("--nodes", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="parallel cases over a range of h0")
    w.add_argument("--config", required=True)
    w.add_argument("--h0", required=True, type=parse_range, help="lo:hi:count")
    w.add_argument("--zeta", type=int, choices=(0, 1), required=True)
    w.add_argument("--nodes", type=int)
    w.add_argument("--out")
    w.add_argument("--workers", type=int)
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="validation and strong observability only")
    c.add_argument("--config", required=True)
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("micp", help="compare against branch and bound on a small grid")
    m.add_argument("--config", required=True)
    m.add_argument("--nodes", type=int, required=True)
    m.add_argument("--max-nodes", type=int, default=100_000)
    m.add_argument("--h0", type=float)
    m.add_argument("--zeta", type=int, choices=(0, 1))
    m.set_defaults(func=cmd_micp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleBracket as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolveFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
