"""Command-line entry point: ``poolsim {run,cap,prop1,validate}``.

Exit codes: 0 success, 1 configuration error, 2 experiment assertion failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

from poolsim import __version__
from poolsim.errors import ConfigInvalid, IndistinguishabilityBroken
from poolsim.experiments import (
    growth_counts, partition_growth, prop1_analytic, prop1_montecarlo, run_cap_experiment, run_scenario,
    security_violation,
)
from poolsim.permitter import Prop1Params
from poolsim.resources import constant_pool
from poolsim.scenario import load_scenario
from poolsim.world import ScenarioSpec, Seeds

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 1, 2


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _provenance(spec: Optional[ScenarioSpec], args) -> dict:
    out = {"tool": "poolsim", "version": __version__}
    if spec is not None:
        out.update({"scenario": spec.name, "config_digest": spec.digest})
    if getattr(args, "seed_base", None) is not None:
        out["seed_base"] = args.seed_base
    return out


def _write_csv(path: Path, rows: list[tuple]) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["scenario", "metric", "value"])
        w.writerows(rows)


def _load(args) -> tuple[ScenarioSpec, dict]:
    spec = load_scenario(args.scenario, args.set)
    return spec, json.loads(spec.source).get("analysis", {})


def _run_growth(trace, windows) -> dict:
    out: dict[str, list[int]] = {}
    for by_w in growth_counts(trace, windows).values():
        for w, (g, n) in by_w.items():
            acc = out.setdefault(str(w), [0, 0])
            acc[0] += g
            acc[1] += n
    return out


def cmd_run(args) -> int:
    spec, analysis = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    windows = analysis.get("liveness", {}).get("windows", [])
    violations = 0
    totals: dict[str, list[int]] = {}
    final_conf = []
    for i in range(args.runs):
        seed = args.seed_base + i
        run_spec = spec.with_seeds(Seeds.from_base(seed))
        trace = run_scenario(run_spec, keep_events=args.emit in ("trace", "both"))
        if args.emit in ("trace", "both"):
            with (out / f"trace_{i:04d}.jsonl").open("w") as f:
                for line in trace.event_lines():
                    f.write(line + "\n")
        v = security_violation(trace)
        violations += v is not None
        live = _run_growth(trace, windows)
        for w, (g, n) in live.items():
            acc = totals.setdefault(w, [0, 0])
            acc[0] += g
            acc[1] += n
        conf = {u: trace.conf_len[j][-1] if trace.duration else 1 for j, u in enumerate(trace.user_ids)}
        final_conf.extend(conf.values())
        if args.emit in ("report", "both"):
            report = dict(_provenance(spec, args), run=i, seed=seed, trace_digest=trace.digest,
                          duration=spec.duration, final_confirmed_length=conf,
                          security_violation=v, growth_counts=live)
            if analysis.get("partition_growth"):
                report["partition_growth"] = partition_growth(trace)
            _dump(out / f"report_{i:04d}.json", report)
    rows = [(spec.name, "runs", args.runs), (spec.name, "violation_runs", violations),
            (spec.name, "mean_final_confirmed_length", sum(final_conf) / max(len(final_conf), 1))]
    for w, (g, n) in totals.items():
        rows.append((spec.name, f"growth_fraction_w{w}", g / n if n else ""))
    _write_csv(out / "summary.csv", rows)
    _dump(out / "summary.json", dict(_provenance(spec, args), runs=args.runs, violation_runs=violations,
                                     growth_counts=totals))
    return EXIT_OK


def cmd_cap(args) -> int:
    spec, analysis = _load(args)
    cap = analysis.get("cap", {})
    I = args.I if args.I is not None else float(cap.get("I", 1.0))
    base = spec.with_seeds(Seeds.from_base(args.seed_base))
    try:
        rep = run_cap_experiment(I, base, runs=args.runs, t0_window=cap.get("t0"))
    except IndistinguishabilityBroken as e:
        print(f"indistinguishability broken: {e}", file=sys.stderr)
        return EXIT_ASSERT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    body = dict(_provenance(spec, args), **rep.to_json())
    _dump(out / "cap_report.json", body)
    _write_csv(out / "summary.csv", [(spec.name, k, body[k]) for k in (
        "dagger", "t0", "confirm_freq_ex1", "confirm_freq_ex2", "incompatible_freq")])
    print(json.dumps(body, sort_keys=True))
    return EXIT_OK if rep.passed else EXIT_ASSERT


def cmd_prop1(args) -> int:
    grid = []
    for lr in (1e-2, 1e-3, 1e-4):
        for y in range(1, 21):
            p, ratio = prop1_analytic(lr, y)
            series = 1 - (y - 1) * lr / 2
            grid.append({"lambda_r": lr, "y": y, "p_u": p, "ratio": ratio,
                         "series": series, "ok": abs(ratio - series) < (y * lr) ** 2})
    xs = [int(x) for x in args.x.split(",")]
    keys = {f"K{x}": x for x in xs}
    params = Prop1Params.build(args.lam, args.ext_no, keys)
    mc = prop1_montecarlo(params, constant_pool({k: 1.0 for k in keys}), args.trials, prf_seed=args.seed_base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checks = {
        "analytic_grid": all(g["ok"] for g in grid),
        "within_3sigma": all(r.within_3sigma for r in mc.rows),
        "residual_below_1pct": mc.max_residual is not None and mc.max_residual < 0.01,
    }
    body = dict(_provenance(None, args), analytic=grid, montecarlo=mc.to_json(), checks=checks)
    _dump(out / "prop1_report.json", body)
    _write_csv(out / "summary.csv", [("prop1", k, v) for k, v in checks.items()]
               + [("prop1", "max_residual", mc.max_residual)])
    print(json.dumps(checks, sort_keys=True))
    return EXIT_OK if all(checks.values()) else EXIT_ASSERT


def cmd_validate(args) -> int:
    spec = load_scenario(args.scenario, args.set)
    print(f"ok: {spec.name} (config digest {spec.digest})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poolsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"poolsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_default=None, runs=10):
        sp.add_argument("--scenario", default=scenario_default, required=scenario_default is None,
                        help="scenario file or shipped scenario name")
        sp.add_argument("--runs", type=int, default=runs)
        sp.add_argument("--seed-base", type=int, default=0)
        sp.add_argument("--out", default="out")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a dotted config field (value parsed as JSON)")

    r = sub.add_parser("run", help="execute a scenario N times and emit reports")
    common(r)
    r.add_argument("--emit", choices=("trace", "report", "both"), default="report")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("cap", help="partition experiment on pools R0/R1/R2")
    common(c, scenario_default="cap_theorem", runs=100)
    c.add_argument("--I", type=float, default=None, help="balance I (defaults to the scenario's)")
    c.set_defaults(fn=cmd_cap)

    q = sub.add_parser("prop1", help="analytic grid and Monte Carlo for single-permitter proportionality")
    q.add_argument("--lam", type=float, default=1e-3)
    q.add_argument("--ext-no", type=int, default=10)
    q.add_argument("--x", default="1,2,4,8", help="comma-separated computational powers")
    q.add_argument("--trials", type=int, default=10 ** 6)
    q.add_argument("--seed-base", type=int, default=0)
    q.add_argument("--out", default="out")
    q.set_defaults(fn=cmd_prop1)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("scenario", nargs="?")
    v.add_argument("--scenario", dest="scenario_flag")
    v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate":
        args.scenario = args.scenario or args.scenario_flag
        if not args.scenario:
            parser.error("validate needs a scenario")
    if getattr(args, "runs", 1) < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: scenario not found: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigInvalid as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IndistinguishabilityBroken as e:
        print(f"assertion failed: {e}", file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
