"""Blocks, message states, fork choice and confirmation rules.

A :class:`MessageState` is an immutable prefix of an append-only log of
delivered messages. Inserting into the newest prefix of a log appends in
place and returns the longer prefix, so per-timeslot snapshots of a user's
state cost O(1); inserting into an older prefix copies it first. Every
state is downward closed by construction.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from poolsim.errors import MissingParent
from poolsim.prf import encode_parts


def _content_id(*parts) -> str:
    return hashlib.blake2b(encode_parts(*parts), digest_size=32).hexdigest()


@dataclass(frozen=True, eq=False)
class Block:
    parent: Optional[str]
    miner: str
    timestamp: int
    payload: bytes = b""
    epoch_meta: Optional[int] = None
    id: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "id", _content_id("block", self.parent, self.miner, int(self.timestamp), bytes(self.payload))
        )

    def __eq__(self, other):
        return isinstance(other, Block) and other.id == self.id

    def __hash__(self):
        return hash(self.id)

    @property
    def is_genesis(self) -> bool:
        return self.parent is None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "miner": self.miner,
            "timestamp": self.timestamp,
            "payload": self.payload.hex(),
            "epoch_meta": self.epoch_meta,
        }


@dataclass(frozen=True, eq=False)
class Vote:
    """A stake-weighted vote for a block in a round (quorum protocol only)."""

    voter: str
    block: str
    round: int
    id: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "id", _content_id("vote", self.voter, self.block, int(self.round)))

    def __eq__(self, other):
        return isinstance(other, Vote) and other.id == self.id

    def __hash__(self):
        return hash(self.id)

    def to_json(self) -> dict:
        return {"id": self.id, "kind": "vote", "voter": self.voter, "block": self.block, "round": self.round}


Message = Union[Block, Vote]

GENESIS = Block(parent=None, miner="", timestamp=0, payload=b"genesis")


def message_from_json(d: dict) -> Message:
    if d.get("kind") == "vote":
        msg = Vote(d["voter"], d["block"], int(d["round"]))
    else:
        msg = Block(d["parent"], d["miner"], int(d["timestamp"]), bytes.fromhex(d["payload"]), d.get("epoch_meta"))
    if "id" in d and d["id"] != msg.id:
        raise ValueError(f"id mismatch for message {d['id']}")
    return msg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


_EMPTY_DIGEST = hashlib.blake2b(b"poolsim-state", digest_size=32).digest()


class _Log:
    __slots__ = ("msgs", "index", "height", "best", "rolling", "cache")

    def __init__(self):
        self.msgs: list[Message] = []
        self.index: dict[str, int] = {}
        self.height: dict[str, int] = {}
        self.best: list[Optional[str]] = [None]
        self.rolling: list[bytes] = [_EMPTY_DIGEST]
        self.cache: dict = {}

    def append(self, msg: Message) -> None:
        self.index[msg.id] = len(self.msgs)
        self.msgs.append(msg)
        best = self.best[-1]
        if isinstance(msg, Block):
            h = 0 if msg.parent is None else self.height[msg.parent] + 1
            self.height[msg.id] = h
            # strict '>' keeps the earliest-arriving leaf on ties
            if best is None or h > self.height[best]:
                best = msg.id
        self.best.append(best)
        self.rolling.append(hashlib.blake2b(self.rolling[-1] + msg.id.encode(), digest_size=32).digest())

    def fork(self, n: int) -> "_Log":
        log = _Log()
        for m in self.msgs[:n]:
            log.append(m)
        return log


class MessageState:
    """The set of messages delivered to a user, with first-delivery order."""

    __slots__ = ("_log", "_n")

    def __init__(self, log: Optional[_Log] = None, n: int = 0):
        self._log = log if log is not None else _Log()
        self._n = n

    @classmethod
    def empty(cls) -> "MessageState":
        return cls()

    @classmethod
    def with_genesis(cls) -> "MessageState":
        return cls().insert(GENESIS)

    @classmethod
    def from_messages(cls, msgs) -> "MessageState":
        s = cls()
        for m in msgs:
            s = s.insert(m)
        return s

    def insert(self, msg: Message) -> "MessageState":
        log = self._log
        pos = log.index.get(msg.id)
        if pos is not None and pos < self._n:
            return self
        if isinstance(msg, Block):
            if msg.parent is None:
                if msg.id != GENESIS.id:
                    raise MissingParent("only the predefined genesis block may lack a parent")
            elif msg.parent not in self:
                raise MissingParent(f"parent {msg.parent[:12]} of block {msg.id[:12]} is not in the state")
        if len(log.msgs) != self._n:
            log = log.fork(self._n)
        log.append(msg)
        return MessageState(log, self._n + 1)

    def __contains__(self, item) -> bool:
        key = item if isinstance(item, str) else item.id
        pos = self._log.index.get(key)
        return pos is not None and pos < self._n

    def __len__(self) -> int:
        return self._n

    def __eq__(self, other) -> bool:
        return isinstance(other, MessageState) and self.digest == other.digest

    def __hash__(self):
        return hash(self.digest)

    def __repr__(self) -> str:
        return f"MessageState(n={self._n}, digest={self.digest[:12]})"

    def get(self, msg_id: str) -> Message:
        if msg_id not in self:
            raise KeyError(msg_id)
        return self._log.msgs[self._log.index[msg_id]]

    def position(self, msg_id: str) -> int:
        if msg_id not in self:
            raise KeyError(msg_id)
        return self._log.index[msg_id]

    def height(self, block_id: str) -> int:
        if block_id not in self:
            raise MissingParent(f"block {block_id[:12]} is not in the state")
        return self._log.height[block_id]

    def __iter__(self) -> Iterator[Message]:
        return iter(self._log.msgs[: self._n])

    def iter_from(self, start: int) -> Iterator[Message]:
        msgs = self._log.msgs
        for i in range(start, self._n):
            yield msgs[i]

    @property
    def arrival_order(self) -> tuple[str, ...]:
        return tuple(m.id for m in self)

    @property
    def messages(self) -> frozenset:
        return frozenset(self)

    def blocks(self) -> Iterator[Block]:
        return (m for m in self if isinstance(m, Block))

    def votes(self) -> Iterator[Vote]:
        return (m for m in self if isinstance(m, Vote))

    @property
    def best_leaf(self) -> Optional[str]:
        return self._log.best[self._n]

    @property
    def digest(self) -> str:
        return self._log.rolling[self._n].hex()

    def prefix(self, n: int) -> "MessageState":
        """The state as it was after its first ``n`` deliveries."""
        if not 0 <= n <= self._n:
            raise ValueError(n)
        return MessageState(self._log, n)

    @property
    def cache(self) -> dict:
        """Scratch space shared by all prefixes of this log (derived data only)."""
        return self._log.cache

    def to_json(self) -> dict:
        return {
            "arrival_order": list(self.arrival_order),
            "messages": [m.to_json() for m in sorted(self, key=lambda m: m.id)],
        }


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...]

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __contains__(self, b) -> bool:
        key = b if isinstance(b, str) else b.id
        return key in self.ids

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.blocks)

    @property
    def leaf(self) -> Optional[Block]:
        return self.blocks[-1] if self.blocks else None

    def is_prefix_of(self, other: "Chain") -> bool:
        return other.blocks[: len(self.blocks)] == self.blocks


@dataclass(frozen=True)
class ConfirmationRule:
    """How a message state maps to its confirmed chain.

    ``depth``: blocks followed by at least ``depth`` blocks on the longest chain.
    ``rate``: as depth, and those successors must have been produced in fewer
    than ``depth * rate_hours_per_block`` hours.
    ``finality``: the finalized chain of a quorum protocol (``quorum`` must be set).
    """

    kind: str = "depth"
    depth: int = 6
    rate_hours_per_block: float = 1 / 5.5
    epsilon: float = 0.1
    timeslot_seconds: float = 1.0
    quorum: Optional[object] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("depth", "rate", "finality"):
            raise ValueError(f"unknown confirmation kind {self.kind!r}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.rate_hours_per_block <= 0 or self.timeslot_seconds <= 0:
            raise ValueError("rate and timeslot length must be positive")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.kind == "finality" and self.quorum is None:
            raise ValueError("finality confirmation needs quorum parameters")

    @property
    def rate_budget_slots(self) -> float:
        return self.depth * self.rate_hours_per_block * 3600.0 / self.timeslot_seconds


def insert_block(state: MessageState, b: Block) -> MessageState:
    return state.insert(b)


def ancestor_at(state: MessageState, block_id: str, height: int) -> str:
    h = state.height(block_id)
    if height > h:
        raise ValueError("requested ancestor is above the block")
    cur = block_id
    while h > height:
        cur = state.get(cur).parent
        h -= 1
    return cur


def chain_to(state: MessageState, block_id: str) -> Chain:
    out = []
    cur: Optional[str] = block_id
    while cur is not None:
        b = state.get(cur)
        out.append(b)
        cur = b.parent
    return Chain(tuple(reversed(out)))


def longest_chain(state: MessageState) -> Chain:
    leaf = state.best_leaf
    if leaf is None:
        return Chain(())
    return chain_to(state, leaf)


def is_ancestor_or_equal(state: MessageState, a: str, b: str) -> bool:
    ha, hb = state.height(a), state.height(b)
    if ha > hb:
        return False
    return ancestor_at(state, b, ha) == a


def is_compatible(b1: Block, b2: Block, state: MessageState) -> bool:
    """True iff the blocks are equal or one is an ancestor of the other."""
    if b1.id == b2.id:
        return True
    if state.height(b1.id) <= state.height(b2.id):
        return is_ancestor_or_equal(state, b1.id, b2.id)
    return is_ancestor_or_equal(state, b2.id, b1.id)


def confirmed_tip(state: MessageState, rule: ConfirmationRule) -> tuple[Optional[str], int]:
    """(leaf id, length) of the confirmed chain without materialising it."""
    if rule.kind == "finality":
        return rule.quorum.finalized_tip(state)
    leaf = state.best_leaf
    if leaf is None:
        return None, 0
    top = state.height(leaf)
    if rule.kind == "depth":
        k = max(top - rule.depth, 0)
        return ancestor_at(state, leaf, k), k + 1
    # rate: walk the longest chain once, deepest qualifying block wins
    ts = [0] * (top + 1)
    ids = [""] * (top + 1)
    cur, h = leaf, top
    while cur is not None:
        b = state.get(cur)
        ts[h], ids[h] = b.timestamp, b.id
        cur, h = b.parent, h - 1
    budget = rule.rate_budget_slots
    x = rule.depth
    for i in range(top - x, 0, -1):
        if ts[i + x] - ts[i] < budget:
            return ids[i], i + 1
    return ids[0], 1


def confirmed(state: MessageState, rule: ConfirmationRule) -> Chain:
    tip, _ = confirmed_tip(state, rule)
    if tip is None:
        return Chain(())
    return chain_to(state, tip)


def growth_interval(trace_t1: MessageState, trace_t2: MessageState, rule: ConfirmationRule) -> bool:
    return confirmed_tip(trace_t2, rule)[1] > confirmed_tip(trace_t1, rule)[1]
