"""Resource pools: who holds how much hashrate or stake, and when."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from poolsim.chain import Block, GENESIS, MessageState

TABLE = "table"
STAKE = "stake"

XFER_PREFIX = b"xfer:"


@dataclass(frozen=True)
class PoolRow:
    key: str
    from_t: int
    to_t: Optional[int]  # exclusive; None means open-ended
    balance: float

    def covers(self, t: int) -> bool:
        return self.from_t <= t and (self.to_t is None or t < self.to_t)


@dataclass(frozen=True)
class ResourcePool:
    """A constant table of per-key balances, or stake read off the longest chain."""

    kind: str = TABLE
    rows: tuple[PoolRow, ...] = ()
    lookback_seconds: float = 3600.0
    timeslot_seconds: float = 30.0
    genesis_allocation: tuple[tuple[str, float], ...] = ()
    _by_key: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (TABLE, STAKE):
            raise ValueError(f"unknown pool kind {self.kind!r}")
        by_key: dict[str, list[PoolRow]] = {}
        for r in self.rows:
            by_key.setdefault(r.key, []).append(r)
        self._by_key.update(by_key)

    @property
    def lookback_slots(self) -> int:
        return int(round(self.lookback_seconds / self.timeslot_seconds))

    def keys(self) -> list[str]:
        if self.kind == TABLE:
            return sorted(self._by_key)
        return sorted(k for k, _ in self.genesis_allocation)


def table_pool(rows: Iterable[tuple]) -> ResourcePool:
    return ResourcePool(kind=TABLE, rows=tuple(PoolRow(k, int(a), None if b is None else int(b), float(v)) for k, a, b, v in rows))


def constant_pool(balances: dict[str, float]) -> ResourcePool:
    return table_pool((k, 0, None, v) for k, v in sorted(balances.items()))


def stake_pool(genesis_allocation: dict[str, float], lookback_seconds: float = 3600.0,
               timeslot_seconds: float = 30.0) -> ResourcePool:
    return ResourcePool(
        kind=STAKE,
        lookback_seconds=lookback_seconds,
        timeslot_seconds=timeslot_seconds,
        genesis_allocation=tuple(sorted((k, float(v)) for k, v in genesis_allocation.items())),
    )


def drift_rows(key: str, start: float, end: float, from_t: int, to_t: int, steps: int) -> list[PoolRow]:
    """Piecewise-constant linear drift of one key's balance over [from_t, to_t)."""
    rows = []
    span = to_t - from_t
    for i in range(steps):
        a = from_t + span * i // steps
        b = from_t + span * (i + 1) // steps
        frac = i / max(steps - 1, 1)
        rows.append(PoolRow(key, a, b, start + (end - start) * frac))
    return rows


def transfer_payload(transfers: list[tuple[str, str, float]]) -> bytes:
    return XFER_PREFIX + json.dumps([[a, b, float(x)] for a, b, x in transfers], separators=(",", ":")).encode()


def _block_transfers(b: Block) -> list:
    if not b.payload.startswith(XFER_PREFIX):
        return []
    try:
        return json.loads(b.payload[len(XFER_PREFIX):])
    except ValueError:
        return []


def stake_snapshot(pool: ResourcePool, state: MessageState) -> dict[str, float]:
    """Stake per key at t* = max(t(C_M) - lookback, 0) as recorded in the longest chain."""
    leaf = state.best_leaf
    cache = state.cache.setdefault(("stake", pool), {})
    if leaf in cache:
        return cache[leaf]
    ledger = dict(pool.genesis_allocation)
    if leaf is not None:
        tip = state.get(leaf)
        t_star = max(tip.timestamp - pool.lookback_slots, 0)
        path = []
        cur = leaf
        while cur is not None:
            b = state.get(cur)
            if not b.is_genesis and b.timestamp <= t_star:
                path.append(b)
            cur = b.parent
        for b in reversed(path):
            for src, dst, amount in _block_transfers(b):
                amount = float(amount)
                if amount > 0 and ledger.get(src, 0.0) >= amount:
                    ledger[src] -= amount
                    ledger[dst] = ledger.get(dst, 0.0) + amount
    cache[leaf] = ledger
    return ledger


def balance(pool: ResourcePool, key: str, t: int, state: Optional[MessageState] = None) -> float:
    if pool.kind == TABLE:
        for r in pool._by_key.get(key, ()):
            if r.covers(t):
                return r.balance
        return 0.0
    if state is None:
        state = MessageState.with_genesis()
    return stake_snapshot(pool, state).get(key, 0.0)


def total_balance(pool: ResourcePool, t: int, state: Optional[MessageState] = None) -> float:
    if pool.kind == TABLE:
        return sum(balance(pool, k, t, state) for k in pool._by_key)
    if state is None:
        state = MessageState.with_genesis()
    return sum(stake_snapshot(pool, state).values())


@dataclass(frozen=True)
class PoolBounds:
    i0: float = 1.0
    i1: float = 1e6
    adversary_fraction_cap: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.i0 < self.i1:
            raise ValueError("bounds need 0 < i0 < i1")
        cap = self.adversary_fraction_cap
        if cap is not None and not 0 <= cap <= 1:
            raise ValueError("adversary_fraction_cap must lie in [0, 1]")


@dataclass(frozen=True)
class ResourceSetting:
    sized: bool = False
    bounds: PoolBounds = PoolBounds()
    declared_total: Optional[Union[float, Callable[[int, MessageState], float]]] = None

    def __post_init__(self):
        if self.sized and self.declared_total is None:
            raise ValueError("the sized setting needs a declared total")

    def expected_total(self, t: int, state: MessageState) -> float:
        d = self.declared_total
        return d(t, state) if callable(d) else float(d)


@dataclass(frozen=True)
class PoolViolation:
    t: int
    state_id: str
    value: float
    reason: str


def validate_pool(pool: ResourcePool, setting: ResourceSetting, duration: int,
                  probe_states: Optional[Iterable[MessageState]] = None,
                  adversary_keys: Iterable[str] = ()) -> Optional[PoolViolation]:
    """First violation of the setting's constraints, or None if the pool is admissible."""
    probes = list(probe_states) if probe_states is not None else [MessageState.with_genesis()]
    adversary = set(adversary_keys)
    for r in pool.rows:
        if r.balance < 0:
            return PoolViolation(r.from_t, "-", r.balance, f"negative balance for {r.key}")
    for k, v in pool.genesis_allocation:
        if v < 0:
            return PoolViolation(0, "-", v, f"negative genesis stake for {k}")
    for t in range(max(duration, 1)):
        for s in probes:
            total = total_balance(pool, t, s)
            if setting.sized:
                want = setting.expected_total(t, s)
                if abs(total - want) > 1e-9 * max(1.0, abs(want)):
                    return PoolViolation(t, s.digest, total, f"total differs from declared {want}")
                continue
            b = setting.bounds
            if not b.i0 <= total <= b.i1:
                return PoolViolation(t, s.digest, total, f"total outside [{b.i0}, {b.i1}]")
            if b.adversary_fraction_cap is not None and adversary:
                adv = sum(balance(pool, k, t, s) for k in adversary)
                if adv > b.adversary_fraction_cap * total:
                    return PoolViolation(t, s.digest, adv, "adversary share above cap")
    return None


def make_proof_pools(I: float, keys: tuple[str, str] = ("U0", "U1")) -> tuple[ResourcePool, ResourcePool, ResourcePool]:
    """Pools for the partition argument: both keys at I, only the first, only the second."""
    if I <= 0:
        raise ValueError("I must be positive")
    u0, u1 = keys
    return (
        constant_pool({u0: I, u1: I}),
        constant_pool({u0: I, u1: 0.0}),
        constant_pool({u0: 0.0, u1: I}),
    )


__all__ = [
    "GENESIS", "PoolRow", "ResourcePool", "PoolBounds", "ResourceSetting", "PoolViolation",
    "table_pool", "constant_pool", "stake_pool", "drift_rows", "transfer_payload",
    "stake_snapshot", "balance", "total_balance", "validate_pool", "make_proof_pools",
]
