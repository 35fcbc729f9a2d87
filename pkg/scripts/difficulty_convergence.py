"""Closed-loop PoW difficulty: per-epoch mean block time from a mis-set starting difficulty.

    python scripts/difficulty_convergence.py --seeds 10 --p-initial 0.1
"""
import argparse
import json
from pathlib import Path

from poolsim.experiments import epoch_block_times, run_scenario
from poolsim.scenario import load_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="pow_sync")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--p-initial", type=float, default=0.1)
    ap.add_argument("--duration", type=int, default=9000)
    ap.add_argument("--out", default="out/difficulty")
    args = ap.parse_args()

    rows = []
    for seed in range(args.seeds):
        spec = load_scenario(args.scenario, [f"duration={args.duration}",
                                             f"protocol.difficulty.p_initial={args.p_initial}",
                                             f"seeds.scheduler_seed={seed}", f"seeds.prf_seed={seed}"])
        times = epoch_block_times(run_scenario(spec), spec.users[0].id)
        rows.append({"seed": seed, "slots_per_block": times})
        print(f"seed {seed}: " + " ".join(f"{x:5.1f}" for x in times))
    target = spec.protocol.difficulty.target_seconds_per_block / spec.protocol.difficulty.timeslot_seconds
    print(f"target {target:g} slots per block")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "difficulty.json").write_text(json.dumps({"target": target, "runs": rows}, indent=2) + "\n")


if __name__ == "__main__":
    main()
