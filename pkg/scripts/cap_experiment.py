"""Partition experiment on pools R0/R1/R2 for a two-miner PoW scenario.

    python scripts/cap_experiment.py --runs 100 --I 1 --out out/cap
"""
import argparse
import json
import sys
from pathlib import Path

from poolsim.errors import IndistinguishabilityBroken
from poolsim.experiments import run_cap_experiment
from poolsim.scenario import load_scenario
from poolsim.world import Seeds


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="cap_theorem")
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--I", type=float, nargs="+", default=[1.0], help="one or more balances to sweep")
    ap.add_argument("--seed-base", type=int, default=0)
    ap.add_argument("--out", default="out/cap")
    args = ap.parse_args()

    base = load_scenario(args.scenario).with_seeds(Seeds.from_base(args.seed_base))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, ok = [], True
    for I in args.I:
        try:
            rep = run_cap_experiment(I, base, runs=args.runs)
        except IndistinguishabilityBroken as e:
            print(f"indistinguishability broken at I={I}: {e}", file=sys.stderr)
            return 2
        rows.append(rep.to_json())
        ok &= rep.passed
        print(f"I={I:g}  t0={rep.t0}  confirm Ex1={rep.confirm_freq_ex1}  Ex2={rep.confirm_freq_ex2}  "
              f"Ex0 incompatible={rep.incompatible_freq}  passed={rep.passed}")
    (out / "cap_sweep.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
