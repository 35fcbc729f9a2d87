"""Liveness and security estimation, the partition attack, and the
single-permitter proportionality check.

Every estimator takes a :class:`ScenarioSpec` and derives run ``i``'s seeds
as the scenario's seeds plus ``i``. Aggregation is by counting only, so results
do not depend on run order.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from poolsim import __version__, prf
from poolsim.chain import GENESIS, Block
from poolsim.errors import IndistinguishabilityBroken
from poolsim.network import ASYNC, SYNC, AdversaryDeliveryPolicy, SyncSchedule
from poolsim.permitter import PROP1, PermitterKernel, Prop1Params
from poolsim.resources import ResourcePool, balance, make_proof_pools
from poolsim.world import RunTrace, ScenarioSpec, Seeds, UserSpec, run_world

__all__ = [
    "ScenarioSpec", "UserSpec", "Seeds", "run_scenario", "LivenessReport", "estimate_liveness",
    "growth_counts", "SecurityReport", "check_security", "security_violation", "CapReport", "run_cap_experiment",
    "prop1_analytic", "Prop1Report", "prop1_montecarlo", "prop1_trial_draws", "partition_growth",
    "cap_executions", "randomized_partition_spec", "side_stake_fractions", "halves_partition_spec",
    "epoch_block_times",
]


def run_scenario(spec: ScenarioSpec, keep_events: bool = False) -> RunTrace:
    """Execute one run; raises ConfigInvalid (ConstraintError) if the pool is inadmissible."""
    return run_world(spec, keep_events=keep_events)


def _runs(spec: ScenarioSpec, runs: int, keep_events: bool = False) -> Iterable[tuple[int, RunTrace]]:
    if runs < 1:
        raise ValueError("runs must be >= 1")
    for i in range(runs):
        yield i, run_scenario(spec.run_seeds(i), keep_events=keep_events)


# --- block ancestry over the global registry ------------------------------------

class _Ancestry:
    def __init__(self, blocks: dict[str, Block]):
        self.blocks = blocks
        self._h: dict[str, int] = {GENESIS.id: 0}

    def height(self, bid: str) -> int:
        stack = []
        cur = bid
        while cur not in self._h:
            stack.append(cur)
            cur = self.blocks[cur].parent
        h = self._h[cur]
        for b in reversed(stack):
            h += 1
            self._h[b] = h
        return self._h[bid]

    def ancestor_at(self, bid: str, height: int) -> str:
        h = self.height(bid)
        while h > height:
            bid = self.blocks[bid].parent
            h -= 1
        return bid

    def compatible(self, a: str, b: str) -> bool:
        ha, hb = self.height(a), self.height(b)
        if ha > hb:
            a, b, ha, hb = b, a, hb, ha
        return self.ancestor_at(b, ha) == a


# --- liveness -------------------------------------------------------------------

@dataclass
class LivenessReport:
    epsilon: float
    windows: tuple[int, ...]
    runs: int
    counts: dict[int, tuple[int, int]]  # window -> (growth intervals, qualifying windows)
    window: Optional[int]
    growth_fraction: Optional[float]
    per_user_breakdown: dict[str, dict[int, tuple[int, int]]] = field(default_factory=dict)

    def fraction(self, w: int) -> Optional[float]:
        g, n = self.counts[w]
        return g / n if n else None

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon, "windows": list(self.windows), "runs": self.runs,
            "counts": {str(w): list(c) for w, c in self.counts.items()},
            "window": self.window, "growth_fraction": self.growth_fraction,
            "per_user_breakdown": {u: {str(w): list(c) for w, c in d.items()}
                                   for u, d in self.per_user_breakdown.items()},
        }


def _sync_intervals(schedule: SyncSchedule, start: int, end: int) -> list[tuple[int, int]]:
    out = []
    for a, b, mode in schedule.intervals:
        a, b = max(a, start), min(b, end)
        if mode == SYNC and b > a:
            if out and out[-1][1] == a:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
    return out


def growth_counts(trace: RunTrace, windows: Sequence[int], warmup: int = 0) -> dict[str, dict[int, tuple[int, int]]]:
    """Per honest user and window length: (growth intervals, qualifying windows).

    Windows [t1, t1 + w] tile each maximal synchronous interval (after
    ``warmup``) without overlap.
    """
    spec = trace.spec
    intervals = _sync_intervals(spec.schedule, warmup, min(spec.duration, trace.duration))
    honest = {u.id for u in spec.users if u.honest}
    out = {}
    for i, uid in enumerate(trace.user_ids):
        if uid not in honest:
            continue
        conf = trace.conf_len[i]
        mine = {}
        for w in windows:
            g = n = 0
            for a, b in intervals:
                for t1 in range(a, b - w, w):
                    g += conf[t1 + w] > conf[t1]
                    n += 1
            mine[w] = (g, n)
        out[uid] = mine
    return out


def estimate_liveness(spec: ScenarioSpec, epsilon: float, windows: Sequence[int], runs: int,
                      warmup: int = 0) -> LivenessReport:
    """Fraction of fully synchronous windows that are growth intervals, per window
    length, and the smallest length reaching 1 - epsilon."""
    windows = tuple(sorted(set(int(w) for w in windows)))
    if any(w < 1 for w in windows):
        raise ValueError("windows must be positive")
    counts = {w: [0, 0] for w in windows}
    per_user: dict[str, dict[int, list[int]]] = {}
    for _, trace in _runs(spec, runs):
        for uid, by_w in growth_counts(trace, windows, warmup).items():
            mine = per_user.setdefault(uid, {w: [0, 0] for w in windows})
            for w, (g, n) in by_w.items():
                counts[w][0] += g
                counts[w][1] += n
                mine[w][0] += g
                mine[w][1] += n
    best = None
    for w in windows:
        g, n = counts[w]
        if n and g / n >= 1 - epsilon:
            best = w
            break
    return LivenessReport(
        epsilon=epsilon, windows=windows, runs=runs,
        counts={w: tuple(c) for w, c in counts.items()},
        window=best,
        growth_fraction=(counts[best][0] / counts[best][1]) if best is not None else None,
        per_user_breakdown={u: {w: tuple(c) for w, c in d.items()} for u, d in per_user.items()},
    )


# --- security -------------------------------------------------------------------

@dataclass
class SecurityReport:
    runs: int
    violation_runs: int
    witness: Optional[dict] = None

    @property
    def violation_rate(self) -> float:
        return self.violation_runs / self.runs

    def to_json(self) -> dict:
        return {"runs": self.runs, "violation_runs": self.violation_runs, "witness": self.witness}


def security_violation(trace: RunTrace, honest_only: bool = True) -> Optional[dict]:
    """First incompatible pair of confirmed blocks across users and timeslots, if any.

    Confirmed sets are chains, so all of them are pairwise compatible iff every
    confirmed tip is an ancestor of the highest one.
    """
    honest = {u.id for u in trace.spec.users if u.honest}
    seen: dict[str, tuple[str, int]] = {}
    for i, uid in enumerate(trace.user_ids):
        if honest_only and uid not in honest:
            continue
        prev = None
        for t, tip in enumerate(trace.conf_tip[i]):
            if tip is not None and tip != prev and tip not in seen:
                seen[tip] = (uid, t)
            prev = tip
    if len(seen) < 2:
        return None
    anc = _Ancestry(trace.blocks)
    top = max(seen, key=lambda b: (anc.height(b), seen[b][1]))
    chain = set()
    cur: Optional[str] = top
    while cur is not None:
        chain.add(cur)
        cur = trace.blocks[cur].parent
    for tip, (uid, t) in seen.items():
        if tip not in chain:
            # tip is off the top chain; pair it with the first top-chain tip it conflicts with
            for other, (uid2, t2) in seen.items():
                if other in chain and not anc.compatible(tip, other):
                    return {"users": [uid, uid2], "timeslots": [t, t2], "blocks": [tip, other]}
            return {"users": [uid, seen[top][0]], "timeslots": [t, seen[top][1]], "blocks": [tip, top]}
    return None


def check_security(spec: ScenarioSpec, runs: int) -> SecurityReport:
    violations, witness = 0, None
    for i, trace in _runs(spec, runs):
        v = security_violation(trace)
        if v is not None:
            violations += 1
            if witness is None:
                witness = dict(v, run=i)
    return SecurityReport(runs, violations, witness)


def partition_growth(trace: RunTrace) -> list[dict]:
    """Finality growth inside each ASYNC interval once pre-partition traffic has settled.

    For user ``i`` and ASYNC interval [a, b), the settle time is the last
    delivery during [a, b) of a block broadcast before ``a`` or of a vote
    on such a block. Growth after that can only come from blocks proposed
    during the partition.
    """
    out = []
    fb = trace.first_broadcast
    for a, b, mode in trace.spec.schedule.intervals:
        b = min(b, trace.duration)
        if mode != ASYNC or b <= a:
            continue
        settle = {i: a for i in range(len(trace.user_ids))}
        for t, ui, _, msg in trace.deliveries:
            if a <= t < b:
                ref = msg.id if isinstance(msg, Block) else getattr(msg, "block", None)
                if fb.get(ref, b) < a:
                    settle[ui] = max(settle[ui], t)
        for i, uid in enumerate(trace.user_ids):
            s = min(settle[i], b - 1)
            out.append({"user": uid, "interval": [a, b], "settle": s,
                        "growth": trace.conf_len[i][b - 1] - trace.conf_len[i][s]})
    return out


# --- the partition attack --------------------------------------------------------

@dataclass
class CapReport:
    I: float
    runs: int
    duration: int
    dagger_pass: bool
    dagger_comparisons: int
    t0: Optional[int]
    confirm_freq_ex1: Optional[float]
    confirm_freq_ex2: Optional[float]
    ex0_confirm_freq: tuple[Optional[float], Optional[float]]
    incompatible_freq: Optional[float]
    seeds: tuple[int, int]
    spec_digest: str
    version: str = __version__

    @property
    def passed(self) -> bool:
        return (self.dagger_pass and self.t0 is not None
                and self.confirm_freq_ex1 > 0.75 and self.confirm_freq_ex2 > 0.75
                and self.incompatible_freq > 0.5)

    def to_json(self) -> dict:
        return {
            "I": self.I, "runs": self.runs, "duration": self.duration,
            "dagger": "pass" if self.dagger_pass else "fail",
            "dagger_comparisons": self.dagger_comparisons, "t0": self.t0,
            "confirm_freq_ex1": self.confirm_freq_ex1, "confirm_freq_ex2": self.confirm_freq_ex2,
            "ex0_confirm_freq": list(self.ex0_confirm_freq),
            "incompatible_freq": self.incompatible_freq,
            "seeds": list(self.seeds), "spec_digest": self.spec_digest, "version": self.version,
            "passed": self.passed,
        }


def cap_executions(I: float, base_spec: ScenarioSpec) -> tuple[ScenarioSpec, ScenarioSpec, ScenarioSpec]:
    """Ex0 (R0, all asynchronous, partitioned) and Ex1/Ex2 (R1/R2, all synchronous)."""
    users = sorted(base_spec.users, key=lambda u: u.id)
    if len(users) != 2 or not all(u.honest for u in users):
        raise ValueError("the partition experiment needs exactly two honest users")
    u0, u1 = users
    if len(u0.keys) != 1 or len(u1.keys) != 1:
        raise ValueError("each user must control exactly one key")
    r0, r1, r2 = make_proof_pools(I, (u0.keys[0], u1.keys[0]))
    d = base_spec.duration
    ex0 = replace(base_spec, pool=r0, schedule=SyncSchedule.all_async(d),
                  adversary=AdversaryDeliveryPolicy.partition(u0.keys, u1.keys))
    sync = SyncSchedule.all_sync(d)
    ex1 = replace(base_spec, pool=r1, schedule=sync, adversary=AdversaryDeliveryPolicy())
    ex2 = replace(base_spec, pool=r2, schedule=sync, adversary=AdversaryDeliveryPolicy())
    return ex0, ex1, ex2


def _dagger(a: RunTrace, b: RunTrace, uid: str, run: int, label: str) -> int:
    ia, ib = a.user_index(uid), b.user_index(uid)
    va, vb = a.view_digest[ia], b.view_digest[ib]
    if len(va) != len(vb):
        raise IndistinguishabilityBroken(f"run {run}: trace lengths differ for {uid} ({label})")
    for t, (x, y) in enumerate(zip(va, vb)):
        if x != y:
            raise IndistinguishabilityBroken(f"run {run}: {uid}'s view differs at t={t} ({label})")
    return len(va)


def run_cap_experiment(I: float, base_spec: ScenarioSpec, runs: int = 100,
                       t0_window: Optional[int] = None) -> CapReport:
    """Run Ex0/Ex1/Ex2 with shared seeds, check per-user indistinguishability at
    every timeslot, locate t0 and measure cross-side incompatibility in Ex0.

    ``t0_window`` fixes t0 instead of locating it.
    """
    ex0, ex1, ex2 = cap_executions(I, base_spec)
    u0, u1 = sorted(u.id for u in base_spec.users)
    d = base_spec.duration
    c1 = np.zeros(d, dtype=np.int64)
    c2 = np.zeros(d, dtype=np.int64)
    ex0_tips: list[tuple] = []
    comparisons = 0
    for i in range(runs):
        t0_, t1_, t2_ = (run_scenario(s.run_seeds(i)) for s in (ex0, ex1, ex2))
        comparisons += _dagger(t0_, t1_, u0, i, "Ex0 vs Ex1")
        comparisons += _dagger(t0_, t2_, u1, i, "Ex0 vs Ex2")
        c1 += np.asarray(t1_.conf_len[t1_.user_index(u0)]) >= 2
        c2 += np.asarray(t2_.conf_len[t2_.user_index(u1)]) >= 2
        ex0_tips.append((t0_.conf_tip[t0_.user_index(u0)], t0_.conf_tip[t0_.user_index(u1)],
                         t0_.conf_len[t0_.user_index(u0)], t0_.conf_len[t0_.user_index(u1)],
                         t0_.blocks))
    if t0_window is not None:
        t0 = t0_window if 0 <= t0_window < d else None
    else:
        ok = np.nonzero((c1 > 0.75 * runs) & (c2 > 0.75 * runs))[0]
        t0 = int(ok[0]) if len(ok) else None
    f1 = f2 = inc = None
    side = (None, None)
    if t0 is not None:
        f1, f2 = float(c1[t0]) / runs, float(c2[t0]) / runs
        s0 = s1 = bad = 0
        for tips0, tips1, len0, len1, blocks in ex0_tips:
            a, b = len0[t0] >= 2, len1[t0] >= 2
            s0 += a
            s1 += b
            if a and b and not _Ancestry(blocks).compatible(tips0[t0], tips1[t0]):
                bad += 1
        side = (s0 / runs, s1 / runs)
        inc = bad / runs
    s = base_spec.seeds
    return CapReport(I, runs, d, True, comparisons, t0, f1, f2, side, inc,
                     (s.scheduler_seed, s.prf_seed), base_spec.digest)


# --- single-permitter proportionality -----------------------------------------------

def prop1_analytic(lambda_r: float, y: int) -> tuple[float, float]:
    """(p_U, ratio) with p_U = 1 - (1 - lambda_r)^y and ratio = p_U / (lambda_r * y)."""
    if not 0 <= lambda_r <= 1:
        raise ValueError("lambda_r must lie in [0, 1]")
    if y < 0:
        raise ValueError("y must be nonnegative")
    if y == 0:
        return 0.0, 1.0
    if lambda_r == 1:
        return 1.0, 1.0 / y
    p = -math.expm1(y * math.log1p(-lambda_r))
    ratio = p / (lambda_r * y) if lambda_r > 0 else 1.0
    return p, ratio


@dataclass
class Prop1Row:
    key: str
    x: int
    y: int
    R: float
    hits: int
    p_hat: float
    p_analytic: float
    sigma: float
    z: float
    corrected: float
    residual: Optional[float] = None

    @property
    def within_3sigma(self) -> bool:
        return abs(self.z) <= 3.0


@dataclass
class Prop1Report:
    lam: float
    ext_no: int
    n_trials: int
    rows: list[Prop1Row]
    c: Optional[float]
    max_residual: Optional[float]

    def to_json(self) -> dict:
        return {
            "lambda": self.lam, "ext_no": self.ext_no, "n_trials": self.n_trials,
            "c": self.c, "max_residual": self.max_residual,
            "rows": [r.__dict__ | {"within_3sigma": r.within_3sigma} for r in self.rows],
        }


def prop1_trial_draws(kernel: PermitterKernel, key: str, leaf: str, trials: int, y: int,
                      start: int = 0) -> np.ndarray:
    """The first ``y`` extension uniforms of ``key`` at timeslots start..start+trials-1.

    Equal to ``prop1_draws(kernel, t, key, leaf)[:y]`` for each t; built from the
    same XOF stream with the per-trial encoding assembled directly.
    """
    if y == 0 or trials == 0:
        return np.zeros((trials, y))
    base = kernel._prop1_prefix._h
    tail = prf.encode_parts(key, leaf)[4:]
    head = struct.pack(">I", 3) + bytes((3,))
    nbytes = 8 * y
    chunks = []
    for t in range(start, start + trials):
        h = base.copy()
        h.update(head + struct.pack(">Iq", 8, t) + tail)
        chunks.append(h.digest(nbytes))
    words = np.frombuffer(b"".join(chunks), dtype=">u8").astype(np.uint64).reshape(trials, y)
    return prf.words_to_uniform(words)


def prop1_montecarlo(params: Prop1Params, pool: ResourcePool, n_trials: int,
                     prf_seed: int = 0, leaf: str = GENESIS.id) -> Prop1Report:
    """Empirical p_U per key when every key submits min(X_U, Ext_No) distinct requests
    for extensions of a common chain, one independent trial per timeslot."""
    kernel = PermitterKernel(PROP1, prf.derive_key(prf_seed, "permitter"), prop1=params)
    rows = []
    for key, x in params.x_of:
        y = params.requests_allowed(key)
        R = balance(pool, key, 0)
        lr = min(params.lam * R, 1.0)
        if y > 0 and lr > 0:
            u = prop1_trial_draws(kernel, key, leaf, n_trials, y)
            hits = int(np.count_nonzero((u < lr).any(axis=1)))
        else:
            hits = 0
        p_a, ratio = prop1_analytic(lr, y)
        p_hat = hits / n_trials
        sigma = math.sqrt(p_a * (1 - p_a) / n_trials)
        z = (p_hat - p_a) / sigma if sigma > 0 else (0.0 if p_hat == p_a else math.inf)
        rows.append(Prop1Row(key, x, y, R, hits, p_hat, p_a, sigma, z, p_hat / ratio))
    # fit corrected ~ c * R * Y by weighted least squares (weights 1/sigma^2)
    fit = [r for r in rows if r.y > 0 and r.R > 0 and r.sigma > 0]
    c = max_res = None
    if fit:
        w = np.array([1 / r.sigma ** 2 for r in fit])
        zx = np.array([r.R * r.y for r in fit])
        q = np.array([r.corrected for r in fit])
        c = float(np.sum(w * zx * q) / np.sum(w * zx * zx))
        for r in fit:
            r.residual = abs(r.corrected / (c * r.R * r.y) - 1)
        max_res = max(r.residual for r in fit)
    return Prop1Report(params.lam, params.ext_no, n_trials, rows, c, max_res)


# --- randomized partitions for the finality demonstrator ------------------------

def randomized_partition_spec(base: ScenarioSpec, index: int, max_windows: int = 3) -> ScenarioSpec:
    """``base`` with random ASYNC windows, a random two-sided key partition and
    per-index seeds. The randomness comes from ``index`` alone."""
    import random

    rng = random.Random(index)
    d = base.duration
    keys = sorted(k for u in base.users for k in u.keys)
    wins = []
    for _ in range(rng.randint(1, max_windows)):
        a = rng.randrange(0, max(d - 1, 1))
        wins.append((a, min(d, a + rng.randint(4, max(5, d // 2)))))
    side = set(rng.sample(keys, rng.randint(1, len(keys) - 1)))
    policy = AdversaryDeliveryPolicy.partition(sorted(side), sorted(set(keys) - side))
    return replace(base, schedule=SyncSchedule.from_async_windows(d, wins), adversary=policy,
                   seeds=Seeds(base.seeds.scheduler_seed + index, base.seeds.prf_seed + index))


def side_stake_fractions(spec: ScenarioSpec) -> list[float]:
    """Declared-stake share of each side of a partition policy."""
    q = spec.protocol.quorum
    w = q.weights
    return [sum(w.get(k, 0.0) for k in s) / q.total for s in spec.adversary.sets]


def halves_partition_spec(spec: ScenarioSpec) -> ScenarioSpec:
    """``spec`` run fully asynchronous with users (sorted by id) split into two halves."""
    users = sorted(spec.users, key=lambda u: u.id)
    half = len(users) // 2
    sides = ([k for u in users[:half] for k in u.keys], [k for u in users[half:] for k in u.keys])
    return replace(spec, schedule=SyncSchedule.all_async(spec.duration),
                   adversary=AdversaryDeliveryPolicy.partition(*sides))


# --- difficulty ---------------------------------------------------------------------

def epoch_block_times(trace: RunTrace, user_id: str) -> list[float]:
    """Mean slots per block for each complete difficulty epoch of a user's final longest chain."""
    from poolsim.chain import longest_chain

    E = trace.spec.protocol.difficulty.epoch_length_blocks
    ts = [b.timestamp for b in longest_chain(trace.final_states[user_id]).blocks]
    return [(ts[(e + 1) * E] - ts[e * E]) / E for e in range((len(ts) - 1) // E)]
