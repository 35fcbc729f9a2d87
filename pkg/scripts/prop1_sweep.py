"""Single-permitter proportionality: analytic ratios and Monte Carlo at several rates.

    python scripts/prop1_sweep.py --trials 1000000 --lam 1e-3 1e-2
"""
import argparse
import json
from pathlib import Path

from poolsim.experiments import prop1_analytic, prop1_montecarlo
from poolsim.permitter import Prop1Params
from poolsim.resources import constant_pool


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lam", type=float, nargs="+", default=[1e-3])
    ap.add_argument("--ext-no", type=int, default=10)
    ap.add_argument("--x", default="1,2,4,8")
    ap.add_argument("--trials", type=int, default=10 ** 6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/prop1")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("analytic ratio p_U / (lambda R y):")
    print("  y   " + "  ".join(f"{lr:>9.0e}" for lr in (1e-2, 1e-3, 1e-4)))
    for y in (1, 2, 5, 10, 20):
        print(f"  {y:<3} " + "  ".join(f"{prop1_analytic(lr, y)[1]:9.6f}" for lr in (1e-2, 1e-3, 1e-4)))

    keys = {f"K{x}": int(x) for x in args.x.split(",")}
    results = []
    for lam in args.lam:
        params = Prop1Params.build(lam, args.ext_no, keys)
        rep = prop1_montecarlo(params, constant_pool({k: 1.0 for k in keys}), args.trials, prf_seed=args.seed)
        results.append(rep.to_json())
        print(f"\nlambda R = {lam:g}, {args.trials} trials, fitted c = {rep.c:.6g} "
              f"(max relative residual {rep.max_residual:.2%})")
        for r in rep.rows:
            print(f"  X={r.x:<3} Y={r.y:<3} p_hat={r.p_hat:.6f}  analytic={r.p_analytic:.6f}  z={r.z:+.2f}  "
                  f"residual={r.residual:.2%}")
    (out / "prop1_sweep.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
