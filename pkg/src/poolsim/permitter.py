"""Permitter oracles.

A kernel answers permission requests ``(key, state, slot_claim, data)``.
Its answer may depend only on the protocol parameters, the actual
timeslot, the requesting key's own request history, the request itself
and the key's balance. All randomness is a keyed PRF over exactly those
inputs, so the contract is enforced by construction rather than by care.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Union

from poolsim import prf
from poolsim.chain import Block, MessageState, Vote, ancestor_at
from poolsim.errors import MalformedRequest
from poolsim.quorum import QuorumParams
from poolsim.resources import ResourcePool, balance

POW = "pow"
POS = "pos"
PROP1 = "prop1"
QUORUM = "quorum"

DENIED = "DENIED"
SPECIFIC = "SPECIFIC"
CRITERIA = "CRITERIA"

BITCOIN_P1 = 1 / (600 * 2 ** 32)


@dataclass(frozen=True)
class PermitRequest:
    key: str
    state: MessageState
    slot_claim: int
    data: Union[bytes, Block, Vote] = b""

    @property
    def digest(self) -> bytes:
        d = self.data
        data_ref = ("msg", d.id) if isinstance(d, (Block, Vote)) else ("raw", bytes(d))
        return prf.digest("request", self.key, self.state.digest, int(self.slot_claim), list(data_ref))


@dataclass(frozen=True)
class Permission:
    kind: str
    key: str
    slot: int
    message_id: Optional[str] = None
    chain_ref: Optional[str] = None
    scope: str = "block"
    reason: str = ""

    @property
    def granted(self) -> bool:
        return self.kind != DENIED

    def covers(self, msg) -> bool:
        if self.kind == SPECIFIC:
            return msg.id == self.message_id
        if self.kind == CRITERIA:
            return (isinstance(msg, Block) and msg.miner == self.key
                    and msg.parent == self.chain_ref and msg.timestamp == self.slot)
        return False

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "key": self.key, "slot": self.slot, "message_id": self.message_id,
            "chain_ref": self.chain_ref, "scope": self.scope, "reason": self.reason,
        }


def _denied(req: PermitRequest, t: int, reason: str) -> Permission:
    scope = "vote" if isinstance(req.data, Vote) else "block"
    return Permission(DENIED, req.key, t, scope=scope, reason=reason)


@dataclass(frozen=True)
class DifficultyState:
    """Adjustable PoW difficulty: per-hash success probability and its retarget rule."""

    p_initial: float = BITCOIN_P1
    epoch_length_blocks: int = 2016
    target_seconds_per_block: float = 600.0
    timeslot_seconds: float = 1.0
    max_factor: float = 4.0

    def __post_init__(self):
        if self.p_initial <= 0 or self.epoch_length_blocks < 1 or self.target_seconds_per_block <= 0:
            raise ValueError("difficulty parameters must be positive")


@dataclass(frozen=True)
class Prop1Params:
    lam: float
    ext_no: int
    x_max: int
    x_of: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if self.lam <= 0 or self.ext_no < 1 or self.x_max < 0:
            raise ValueError("invalid Prop1 parameters")
        for k, x in self.x_of:
            if not 0 <= x <= self.x_max:
                raise ValueError(f"computational power of {k} exceeds x_max")

    @classmethod
    def build(cls, lam: float, ext_no: int, x_of: dict[str, int], x_max: Optional[int] = None) -> "Prop1Params":
        return cls(lam, ext_no, x_max if x_max is not None else max(x_of.values(), default=0),
                   tuple(sorted(x_of.items())))

    def requests_allowed(self, key: str) -> int:
        return min(dict(self.x_of).get(key, 0), self.ext_no)


def extension_block(leaf: str, key: str, t: int, j: int) -> Block:
    """The j-th possible extension of a chain by ``key`` at timeslot ``t``."""
    return Block(leaf, key, t, b"ext:%d" % j)


class _KeyLedger:
    __slots__ = ("digest", "slot", "slot_digests", "count")

    def __init__(self):
        self.digest = b"\x00" * 32
        self.slot = None
        self.slot_digests: set[bytes] = set()
        self.count = 0

    def in_slot(self, t: int) -> set:
        if self.slot != t:
            return set()
        return self.slot_digests

    def record(self, t: int, rd: bytes) -> None:
        if self.slot != t:
            self.slot, self.slot_digests = t, set()
        self.slot_digests.add(rd)
        self.digest = hashlib.blake2b(self.digest + rd, digest_size=32).digest()
        self.count += 1


@dataclass
class PermitterKernel:
    kind: str
    prf_key: bytes
    difficulty: Optional[DifficultyState] = None
    window_slots: int = 120
    prop1: Optional[Prop1Params] = None
    quorum: Optional[QuorumParams] = None
    ledger: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in (POW, POS, PROP1, QUORUM):
            raise ValueError(f"unknown permitter kind {self.kind!r}")
        if self.kind == POW and self.difficulty is None:
            self.difficulty = DifficultyState()
        if self.kind == PROP1 and self.prop1 is None:
            raise ValueError("PROP1 kernel needs Prop1Params")
        if self.kind == QUORUM and self.quorum is None:
            raise ValueError("QUORUM kernel needs QuorumParams")
        self.params_digest = prf.digest(
            "params", self.kind, repr(self.difficulty), self.window_slots, repr(self.prop1), repr(self.quorum)
        )
        self._prop1_prefix = prf.PrfPrefix(self.prf_key, self.params_digest, "prop1")

    def key_ledger(self, key: str) -> _KeyLedger:
        led = self.ledger.get(key)
        if led is None:
            led = self.ledger[key] = _KeyLedger()
        return led


def prf_draw(kernel: PermitterKernel, *inputs) -> float:
    """Uniform in [0, 1) keyed by the kernel's PRF key and protocol parameters."""
    return prf.prf_uniform(kernel.prf_key, kernel.params_digest, *inputs)


def _check_request(req: PermitRequest) -> None:
    if not isinstance(req.state, MessageState):
        raise MalformedRequest("request state must be a MessageState")
    if len(req.state) == 0 or req.state.best_leaf is None:
        raise MalformedRequest("request state must contain the genesis block")


# --- proof of work -------------------------------------------------------

def difficulty_update(p_i: float, T_i: float, params: DifficultyState) -> float:
    """Next-epoch success probability from the last epoch's production time (seconds)."""
    if p_i <= 0:
        raise ValueError("p_i must be positive")
    raw = p_i * T_i / (params.epoch_length_blocks * params.target_seconds_per_block)
    return min(max(raw, p_i / params.max_factor), p_i * params.max_factor)


def _p_after(state: MessageState, block_id: str, params: DifficultyState) -> float:
    memo = state.cache.setdefault(("difficulty", params), {})
    stack = []
    cur = block_id
    while cur not in memo:
        b = state.get(cur)
        if b.parent is None:
            memo[cur] = params.p_initial
            break
        stack.append(cur)
        cur = b.parent
    E = params.epoch_length_blocks
    for bid in reversed(stack):
        b = state.get(bid)
        h = state.height(bid)
        p = memo[b.parent]
        if h % E == 0:
            start = state.get(ancestor_at(state, bid, h - E))
            p = difficulty_update(p, (b.timestamp - start.timestamp) * params.timeslot_seconds, params)
        memo[bid] = p
    return memo[block_id]


def difficulty_schedule(state: MessageState, params: DifficultyState) -> float:
    """p(M): success probability for a block extending the longest chain of ``state``."""
    leaf = state.best_leaf
    if leaf is None:
        return params.p_initial
    return _p_after(state, leaf, params)


def is_valid_extension(block, state: MessageState, key: str, t: int) -> bool:
    return (isinstance(block, Block) and block.parent == state.best_leaf
            and block.miner == key and block.timestamp == t and isinstance(block.payload, bytes))


def pow_respond(kernel: PermitterKernel, req: PermitRequest, actual_t: int, pool: ResourcePool) -> Permission:
    _check_request(req)
    led = kernel.key_ledger(req.key)
    prior = led.digest
    first = not led.in_slot(actual_t)
    rd = req.digest
    led.record(actual_t, rd)
    if not first:
        return _denied(req, actual_t, "not the first request this timeslot")
    R = balance(pool, req.key, actual_t, req.state)
    if R <= 0:
        return _denied(req, actual_t, "no balance")
    if not is_valid_extension(req.data, req.state, req.key, actual_t):
        return _denied(req, actual_t, "not a valid extension of the longest chain")
    p = difficulty_schedule(req.state, kernel.difficulty)
    u = prf_draw(kernel, "pow", int(actual_t), prior, rd)
    if u < min(p * R, 1.0):
        return Permission(SPECIFIC, req.key, actual_t, message_id=req.data.id)
    return _denied(req, actual_t, "lost")


# --- longest-chain proof of stake -----------------------------------------

def weighted_pick(u: float, stakes: dict[str, float]) -> Optional[str]:
    """Key whose cumulative-stake interval contains ``u`` (keys in sorted order)."""
    live = [(k, v) for k, v in sorted(stakes.items()) if v > 0]
    total = sum(v for _, v in live)
    if total <= 0:
        return None
    acc = 0.0
    target = u * total
    for k, v in live:
        acc += v
        if target < acc:
            return k
    return live[-1][0]


def _stakes(pool: ResourcePool, t: int, state: MessageState) -> dict[str, float]:
    return {k: balance(pool, k, t, state) for k in pool.keys()}


def lottery_winner(kernel: PermitterKernel, leaf: str, slot: int, stakes: dict[str, float]) -> Optional[str]:
    return weighted_pick(prf_draw(kernel, "pos-lottery", leaf, int(slot)), stakes)


def pos_respond(kernel: PermitterKernel, req: PermitRequest, actual_t: int, pool: ResourcePool) -> Permission:
    _check_request(req)
    led = kernel.key_ledger(req.key)
    led.record(actual_t, req.digest)
    leaf = req.state.best_leaf
    t_c = req.state.get(leaf).timestamp
    slot = req.slot_claim
    if not t_c < slot <= t_c + kernel.window_slots:
        return _denied(req, actual_t, "slot outside the chain's window")
    if slot < actual_t:
        return _denied(req, actual_t, "slot already past")
    stakes = _stakes(pool, slot, req.state)
    if stakes.get(req.key, 0.0) <= 0:
        return _denied(req, actual_t, "no balance")
    if lottery_winner(kernel, leaf, slot, stakes) != req.key:
        return _denied(req, actual_t, "lost")
    return Permission(CRITERIA, req.key, slot, chain_ref=leaf)


# --- single-permitter of the PoW-vs-PoS argument ------------------------------

def prop1_draws(kernel: PermitterKernel, actual_t: int, key: str, leaf: str) -> list[float]:
    """Uniforms for all possible extensions (index j) by ``key`` at ``actual_t``."""
    return kernel._prop1_prefix.stream((int(actual_t), key, leaf), kernel.prop1.ext_no)


def _extension_index(block, leaf: str, key: str, t: int, ext_no: int) -> Optional[int]:
    if not (isinstance(block, Block) and block.parent == leaf and block.miner == key and block.timestamp == t):
        return None
    if not block.payload.startswith(b"ext:"):
        return None
    try:
        j = int(block.payload[4:])
    except ValueError:
        return None
    return j if 0 <= j < ext_no and block.payload == b"ext:%d" % j else None


def prop1_respond(kernel: PermitterKernel, req: PermitRequest, actual_t: int, pool: ResourcePool) -> Permission:
    _check_request(req)
    params = kernel.prop1
    led = kernel.key_ledger(req.key)
    rd = req.digest
    seen = led.in_slot(actual_t)
    if rd in seen:
        raise MalformedRequest("requests within a timeslot must be distinct")
    used = len(seen)
    led.record(actual_t, rd)
    if used >= params.requests_allowed(req.key):
        return _denied(req, actual_t, "request budget exhausted")
    R = balance(pool, req.key, actual_t, req.state)
    if R <= 0:
        return _denied(req, actual_t, "no balance")
    leaf = req.state.best_leaf
    j = _extension_index(req.data, leaf, req.key, actual_t, params.ext_no)
    if j is None:
        return _denied(req, actual_t, "not a possible extension")
    if prop1_draws(kernel, actual_t, req.key, leaf)[j] < min(params.lam * R, 1.0):
        return Permission(SPECIFIC, req.key, actual_t, message_id=req.data.id)
    return _denied(req, actual_t, "lost")


# --- quorum-certificate protocol ----------------------------------------------

def round_leader(kernel: PermitterKernel, rnd: int) -> Optional[str]:
    return weighted_pick(prf_draw(kernel, "quorum-leader", int(rnd)), kernel.quorum.weights)


def quorum_respond(kernel: PermitterKernel, req: PermitRequest, actual_t: int, pool: ResourcePool) -> Permission:
    _check_request(req)
    led = kernel.key_ledger(req.key)
    led.record(actual_t, req.digest)
    if balance(pool, req.key, actual_t, req.state) <= 0:
        return _denied(req, actual_t, "no balance")
    q = kernel.quorum
    if isinstance(req.data, Vote):
        if req.data.voter != req.key:
            return _denied(req, actual_t, "vote must be cast by the requesting key")
        return Permission(SPECIFIC, req.key, actual_t, message_id=req.data.id, scope="vote")
    if round_leader(kernel, actual_t // q.round_slots) != req.key:
        return _denied(req, actual_t, "not the round leader")
    tip = q.notarized_tip(req.state)
    return Permission(CRITERIA, req.key, actual_t, chain_ref=tip)


_RESPONDERS = {POW: pow_respond, POS: pos_respond, PROP1: prop1_respond, QUORUM: quorum_respond}


def respond(kernel: PermitterKernel, req: PermitRequest, actual_t: int, pool: ResourcePool) -> Permission:
    return _RESPONDERS[kernel.kind](kernel, req, actual_t, pool)
