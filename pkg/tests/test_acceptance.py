"""Acceptance criteria, one PASS/FAIL line each.

Run directly (``python tests/test_acceptance.py``) or through pytest; in
pytest the lines are also repeated in the terminal summary.
"""
import math
import os
import random
import sys
import time

sys.path.insert(0, os.path.dirname(__file__))

import pytest  # noqa: E402

from conftest import shipped  # noqa: E402
from oracles import (  # noqa: E402
    CAP_CONFIRM_THRESHOLD, CAP_INCOMPATIBLE_THRESHOLD, DIFFICULTY_CLOSED_LOOP_TOL, DIFFICULTY_GRID,
    LIVENESS_GROWTH_MIN, PROP1_RESIDUAL_MAX, QUORUM_THRESHOLD, SIGMA_BAND,
)
from poolsim.chain import (  # noqa: E402
    GENESIS, Block, ConfirmationRule, MessageState, Vote, confirmed, is_ancestor_or_equal, is_compatible,
)
from poolsim.experiments import (  # noqa: E402
    cap_executions, check_security, epoch_block_times, estimate_liveness, halves_partition_spec, partition_growth, prop1_analytic, prop1_montecarlo,
    randomized_partition_spec, run_cap_experiment, run_scenario, security_violation, side_stake_fractions,
)
from poolsim.permitter import (  # noqa: E402
    DENIED, POS, POW, PROP1, QUORUM, DifficultyState, PermitRequest, PermitterKernel, Prop1Params,
    difficulty_update, extension_block, respond,
)
from poolsim.quorum import QuorumParams  # noqa: E402
from poolsim.resources import constant_pool  # noqa: E402
from poolsim.scenario import load_scenario, shipped_scenarios  # noqa: E402

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


# --- 1 ------------------------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    worst = 0.0
    for lr in (1e-2, 1e-3, 1e-4):
        for y in range(1, 21):
            _, ratio = prop1_analytic(lr, y)
            dev = abs(ratio - (1 - (y - 1) * lr / 2))
            worst = max(worst, dev / (y * lr) ** 2)
    elapsed = time.perf_counter() - start
    ok = worst < 1 and elapsed < 1.0
    report(1, ok, f"max deviation / (y*lr)^2 = {worst:.3f} (< 1), runtime {elapsed * 1e3:.1f} ms (< 1 s)")
    return ok, worst, elapsed


# --- 2 ------------------------------------------------------------------------

_PROP1 = {}


def _prop1_report():
    if "rep" not in _PROP1:
        start = time.perf_counter()
        keys = {f"K{x}": x for x in (1, 2, 4, 8)}
        params = Prop1Params.build(1e-3, 10, keys)
        _PROP1["rep"] = prop1_montecarlo(params, constant_pool({k: 1.0 for k in keys}), 10 ** 6)
        _PROP1["elapsed"] = time.perf_counter() - start
    return _PROP1["rep"], _PROP1["elapsed"]


def criterion_2():
    rep, elapsed = _prop1_report()
    z_ok = all(abs(r.z) <= SIGMA_BAND for r in rep.rows)
    res_ok = rep.max_residual < PROP1_RESIDUAL_MAX
    ok = z_ok and res_ok and elapsed < 120
    zs = ", ".join(f"X={r.x}: z={r.z:+.2f}" for r in rep.rows)
    report(2, ok, f"3-sigma {'ok' if z_ok else 'FAILED'} ({zs}); max residual {rep.max_residual:.2%} "
                  f"(needs < {PROP1_RESIDUAL_MAX:.0%}); runtime {elapsed:.1f} s")
    return z_ok, res_ok, elapsed


# --- 3 ------------------------------------------------------------------------

def closed_loop_mean(seed: int) -> float:
    """Mean inter-block time over epochs 6..10 of a PoW run started 4x too easy."""
    spec = shipped("pow_sync", "duration=9000", "protocol.difficulty.p_initial=0.1",
                   f"seeds.scheduler_seed={seed}", f"seeds.prf_seed={seed}")
    per_epoch = epoch_block_times(run_scenario(spec), "U0")
    return sum(per_epoch[5:10]) / 5 if len(per_epoch) >= 10 else math.inf


def criterion_3():
    d = DifficultyState(p_initial=1e-6, epoch_length_blocks=64, target_seconds_per_block=10)
    grid_ok = all(difficulty_update(1e-6, m * 640, d) / 1e-6 == pytest.approx(r, rel=1e-12)
                  for m, r in DIFFICULTY_GRID.items())
    means = [closed_loop_mean(s) for s in range(10)]
    loop_ok = all(abs(m / 10 - 1) <= DIFFICULTY_CLOSED_LOOP_TOL for m in means)
    ok = grid_ok and loop_ok
    report(3, ok, f"grid {'exact' if grid_ok else 'MISMATCH'}; closed-loop slots/block over epochs 6-10: "
                  f"{min(means):.2f}..{max(means):.2f} (target 10 +/- 20%)")
    return grid_ok, loop_ok, means


# --- 4 ------------------------------------------------------------------------

def criterion_4():
    start = time.perf_counter()
    spec = load_scenario("cap_theorem")
    rep = run_cap_experiment(1.0, spec, runs=100)  # raises IndistinguishabilityBroken on any mismatch
    elapsed = time.perf_counter() - start
    ok = (rep.dagger_pass and rep.t0 is not None
          and rep.confirm_freq_ex1 > CAP_CONFIRM_THRESHOLD and rep.confirm_freq_ex2 > CAP_CONFIRM_THRESHOLD
          and rep.incompatible_freq > CAP_INCOMPATIBLE_THRESHOLD and elapsed < 300)
    report(4, ok, f"(dagger) exact over {rep.dagger_comparisons} comparisons; t0={rep.t0}; "
                  f"confirm Ex1/Ex2 = {rep.confirm_freq_ex1:.2f}/{rep.confirm_freq_ex2:.2f} (> 0.75); "
                  f"Ex0 incompatible = {rep.incompatible_freq:.2f} (> 0.5); runtime {elapsed:.0f} s")
    return ok, rep


# --- 5 ------------------------------------------------------------------------

def criterion_5(runs: int = 1000):
    base = load_scenario("quorum_byzantine")
    violations = split_runs = growth = 0
    for i in range(runs):
        spec = randomized_partition_spec(base, i)
        tr = run_scenario(spec)
        violations += security_violation(tr) is not None
        if all(f < QUORUM_THRESHOLD for f in side_stake_fractions(spec)):
            split_runs += 1
            growth += sum(r["growth"] > 0 for r in partition_growth(tr))
    ok = violations == 0 and growth == 0 and split_runs > 0
    report(5, ok, f"{violations} security violations in {runs} randomized partition runs; "
                  f"{growth} growth intervals across {split_runs} runs splitting stake below 2/3")
    return violations, growth, split_runs


# --- 6 ------------------------------------------------------------------------

def _live(name: str, runs: int = 10):
    spec = load_scenario(name)
    return estimate_liveness(spec, 0.1, [10, 20, 40, 60, 80, 120, 160, 240], runs)


def criterion_6():
    rows = {}
    # PoW: live in the unsized family, insecure under the partition execution
    pow_live = [_live(n) for n in ("pow_sync", "pow_unsized_drift", "pow_unsized_drop")]
    ex0, _, _ = cap_executions(1.0, load_scenario("cap_theorem"))
    pow_sec = check_security(ex0, 100)
    rows["pow"] = (all(r.window is not None and r.growth_fraction >= LIVENESS_GROWTH_MIN for r in pow_live),
                   pow_sec.violation_runs == 0)
    # PoS (sized only): security under a partition of its shipped scenario
    pos_live = _live("pos_sync")
    pos_sec = check_security(halves_partition_spec(load_scenario("pos_sync")), 20)
    rows["pos"] = (None, pos_sec.violation_runs == 0)
    # quorum: secure under every tested partition, stalls when participation drifts down
    q_sec = [check_security(load_scenario(n), 20) for n in ("quorum_partition", "quorum_byzantine")]
    q_sec.append(check_security(halves_partition_spec(load_scenario("quorum_sync")), 20))
    q_rand = sum(security_violation(run_scenario(randomized_partition_spec(load_scenario("quorum_partition"), i)))
                 is not None for i in range(100))
    stall = _live("quorum_stall")
    rows["quorum"] = (stall.window is not None, all(r.violation_runs == 0 for r in q_sec) and q_rand == 0)
    expect = rows["pow"] == (True, False) and rows["quorum"] == (False, True) and rows["pos"][1] is False
    none_both = not any(live and sec for live, sec in rows.values())
    ok = expect and none_both

    def cell(v):
        return "n/a" if v is None else ("yes" if v else "no")
    matrix = "; ".join(f"{k}: live-unsized={cell(a)} secure-partitions={cell(b)}" for k, (a, b) in rows.items())
    windows = ",".join(str(r.window) for r in pow_live)
    report(6, ok, f"{matrix}; PoW windows {windows}; PoW Ex0 violations {pow_sec.violation_runs}/100; "
                  f"PoS sync window {pos_live.window}; quorum stall window {stall.window}")
    return rows, ok


# --- 7 ------------------------------------------------------------------------

def _random_tree(rng: random.Random, n: int, max_gap: int):
    blocks = [GENESIS]
    for i in range(n):
        parent = blocks[rng.randrange(len(blocks))]
        blocks.append(Block(parent.id, rng.choice("abc"), parent.timestamp + rng.randint(1, max_gap), b"%d" % i))
    return MessageState.from_messages(blocks), blocks


def _no_balance_no_voice(n: int = 10 ** 4) -> int:
    rng = random.Random(7)
    pool = constant_pool({"z": 0.0, "a": 1.0})
    kernels = {
        POW: lambda: PermitterKernel(POW, b"nb", difficulty=DifficultyState(p_initial=1.0)),
        POS: lambda: PermitterKernel(POS, b"nb", window_slots=10 ** 6),
        PROP1: lambda: PermitterKernel(PROP1, b"nb", prop1=Prop1Params.build(1.0, 10, {"z": 10, "a": 1})),
        QUORUM: lambda: PermitterKernel(QUORUM, b"nb", quorum=QuorumParams.from_weights({"z": 1, "a": 1})),
    }
    grants = 0
    for i in range(n):
        kind = rng.choice(sorted(kernels))
        k = kernels[kind]()
        t = rng.randrange(1, 10 ** 5)
        s = MessageState.with_genesis()
        data = {
            POW: Block(GENESIS.id, "z", t),
            POS: b"",
            PROP1: extension_block(GENESIS.id, "z", t, rng.randrange(10)),
            QUORUM: rng.choice([b"", Vote("z", GENESIS.id, t // 4)]),
        }[kind]
        grants += respond(k, PermitRequest("z", s, rng.choice([t, t + 1, rng.randrange(10 ** 5)]), data), t,
                          pool).kind != DENIED
    return grants


def criterion_7():
    grants = _no_balance_no_voice()
    # monotonicity and replay determinism on every shipped scenario
    mono_ok = replay_ok = True
    for path in shipped_scenarios():
        spec = load_scenario(path)
        a, b = run_scenario(spec), run_scenario(spec)
        replay_ok &= a.digest == b.digest
        for i, uid in enumerate(a.user_ids):
            row = a.state_len[i]
            mono_ok &= all(x <= y for x, y in zip(row, row[1:]))
            final = a.final_states[uid].arrival_order
            for t in range(0, a.duration, max(a.duration // 20, 1)):
                mono_ok &= a.snapshot(uid, t).arrival_order == final[:row[t]]
    rng = random.Random(11)
    compat_ok = True
    for _ in range(1000):
        s, blocks = _random_tree(rng, rng.randint(0, 25), 5)
        b1, b2, b3 = (rng.choice(blocks) for _ in range(3))
        compat_ok &= is_compatible(b1, b1, s)
        compat_ok &= is_compatible(b1, b2, s) == is_compatible(b2, b1, s)
        if is_ancestor_or_equal(s, b1.id, b2.id) and is_ancestor_or_equal(s, b2.id, b3.id):
            compat_ok &= is_compatible(b1, b3, s)
    rate_ok = True
    for _ in range(1000):
        s, _ = _random_tree(rng, rng.randint(0, 25), 3000)
        k = rng.randint(0, 8)
        rate = ConfirmationRule("rate", k, rate_hours_per_block=rng.uniform(0.01, 2.0), timeslot_seconds=1.0)
        rate_ok &= set(confirmed(s, rate).ids) <= set(confirmed(s, ConfirmationRule("depth", k)).ids)
    ok = grants == 0 and mono_ok and replay_ok and compat_ok and rate_ok
    report(7, ok, f"zero-balance grants {grants}/10^4; monotone {mono_ok}; replay {replay_ok} "
                  f"({len(shipped_scenarios())} scenarios); compatibility {compat_ok} (10^3 trees); "
                  f"rate within depth {rate_ok} (10^3 chains)")
    return grants, mono_ok, replay_ok, compat_ok, rate_ok


# --- 8 ------------------------------------------------------------------------

def criterion_8(n: int = 10 ** 5):
    k = PermitterKernel(POS, b"fair", window_slots=n)
    pool = constant_pool({"a": 3.0, "b": 1.0})
    g = MessageState.with_genesis()
    wins_a = 0
    unique = True
    for t in range(1, n + 1):
        won = [key for key in ("a", "b") if respond(k, PermitRequest(key, g, t, b""), t, pool).granted]
        unique &= len(won) == 1
        wins_a += won == ["a"]
    sd = math.sqrt(n * 0.75 * 0.25)
    z = (wins_a - 0.75 * n) / sd
    ok = unique and abs(z) <= SIGMA_BAND
    report(8, ok, f"freq a/b = {wins_a / n:.4f}/{1 - wins_a / n:.4f} (z={z:+.2f}); "
                  f"exactly one winner per slot: {unique}")
    return unique, z


# --- pytest entry points ----------------------------------------------------------

def test_criterion_1_prop1_analytic():
    ok, worst, elapsed = criterion_1()
    assert worst < 1 and elapsed < 1.0


def test_criterion_2_prop1_montecarlo_within_3sigma():
    z_ok, _, elapsed = criterion_2()
    assert z_ok and elapsed < 120


def test_criterion_2_prop1_montecarlo_residual():
    rep, _ = _prop1_report()
    assert rep.max_residual < PROP1_RESIDUAL_MAX


def test_criterion_3_difficulty():
    grid_ok, loop_ok, means = criterion_3()
    assert grid_ok and loop_ok, means


def test_criterion_4_cap():
    ok, rep = criterion_4()
    assert ok, rep.to_json()


@pytest.mark.slow
def test_criterion_5_finality():
    violations, growth, split_runs = criterion_5()
    assert violations == 0 and growth == 0 and split_runs > 0


@pytest.mark.slow
def test_criterion_6_dichotomy():
    rows, ok = criterion_6()
    assert ok, rows


def test_criterion_7_properties():
    grants, *flags = criterion_7()
    assert grants == 0 and all(flags)


def test_criterion_8_pos_fairness():
    unique, z = criterion_8()
    assert unique and abs(z) <= SIGMA_BAND


if __name__ == "__main__":
    for fn in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
               criterion_8):
        fn()
