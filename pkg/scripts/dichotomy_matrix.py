"""Liveness in the unsized setting against security under partition, per shipped protocol.

    python scripts/dichotomy_matrix.py --runs 10
"""
import argparse
import json
from pathlib import Path

from poolsim.experiments import (
    cap_executions, check_security, estimate_liveness, halves_partition_spec, randomized_partition_spec,
)
from poolsim.scenario import load_scenario

WINDOWS = [10, 20, 40, 60, 80, 120, 160, 240]


def live(name: str, runs: int) -> dict:
    rep = estimate_liveness(load_scenario(name), 0.1, WINDOWS, runs)
    return {"scenario": name, "window": rep.window, "growth_fraction": rep.growth_fraction,
            "max_fraction": max((rep.fraction(w) or 0.0) for w in rep.windows)}


def secure(spec, runs: int, label: str) -> dict:
    rep = check_security(spec, runs)
    return {"execution": label, "runs": runs, "violation_runs": rep.violation_runs}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=10, help="runs per liveness estimate")
    ap.add_argument("--security-runs", type=int, default=100)
    ap.add_argument("--out", default="out/dichotomy")
    args = ap.parse_args()
    n, m = args.runs, args.security_runs

    ex0, _, _ = cap_executions(1.0, load_scenario("cap_theorem"))
    matrix = {
        "pow": {
            "liveness": [live(s, n) for s in ("pow_sync", "pow_unsized_drift", "pow_unsized_drop")],
            "security": [secure(ex0, m, "Ex0 all-async partition")],
        },
        "pos": {
            "liveness": [live("pos_sync", n)],
            "security": [secure(halves_partition_spec(load_scenario("pos_sync")), m, "all-async halves")],
        },
        "quorum": {
            "liveness": [live("quorum_stall", n)],
            "security": [secure(load_scenario(s), m, s) for s in ("quorum_partition", "quorum_byzantine")]
            + [secure(halves_partition_spec(load_scenario("quorum_sync")), m, "all-async halves")],
        },
    }
    q_base = load_scenario("quorum_partition")
    bad = sum(check_security(randomized_partition_spec(q_base, i), 1).violation_runs for i in range(m))
    matrix["quorum"]["security"].append({"execution": "randomized partitions", "runs": m, "violation_runs": bad})

    print(f"{'protocol':<8} {'liveness (window / growth fraction)':<48} security violations")
    for proto, cols in matrix.items():
        lv = ", ".join(f"{r['scenario']}={r['window']}/{(r['growth_fraction'] or r['max_fraction']):.2f}"
                       for r in cols["liveness"])
        sv = ", ".join(f"{r['violation_runs']}/{r['runs']}" for r in cols["security"])
        print(f"{proto:<8} {lv:<48} {sv}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dichotomy.json").write_text(json.dumps(matrix, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
