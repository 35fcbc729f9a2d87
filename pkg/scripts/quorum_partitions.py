"""Randomized partition runs of the quorum protocol: safety and growth during splits.

    python scripts/quorum_partitions.py --runs 1000 --scenario quorum_byzantine
"""
import argparse
import json
from pathlib import Path

from poolsim.experiments import (
    partition_growth, randomized_partition_spec, run_scenario, security_violation, side_stake_fractions,
)
from poolsim.scenario import load_scenario


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="quorum_byzantine")
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--max-windows", type=int, default=3)
    ap.add_argument("--out", default="out/quorum_partitions")
    args = ap.parse_args()

    base = load_scenario(args.scenario)
    violations, split_runs, growth = [], 0, 0
    for i in range(args.runs):
        spec = randomized_partition_spec(base, i, args.max_windows)
        tr = run_scenario(spec)
        v = security_violation(tr)
        if v is not None:
            violations.append(dict(v, run=i))
        if all(f < 2 / 3 for f in side_stake_fractions(spec)):
            split_runs += 1
            growth += sum(r["growth"] > 0 for r in partition_growth(tr))
    summary = {"scenario": base.name, "runs": args.runs, "violation_runs": len(violations),
               "runs_split_below_quorum": split_runs, "growth_intervals_during_split": growth,
               "first_violation": violations[0] if violations else None}
    print(json.dumps(summary, indent=2, sort_keys=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0 if not violations and growth == 0 else 2


if __name__ == "__main__":
    raise SystemExit(main())
