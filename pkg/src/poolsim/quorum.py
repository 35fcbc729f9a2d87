"""Notarization and finality bookkeeping for the quorum-certificate protocol.

A block is notarized once its parent is notarized and votes from its own
round carry more than ``threshold`` of the declared stake. Whenever three
notarized blocks A <- B <- C sit in consecutive rounds, B and all of its
ancestors are final. Honest keys vote at most
once per round, and only for blocks extending a longest notarized chain,
so two conflicting blocks can never both be final while adversarial stake
stays at or below one third.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from poolsim.chain import Block, MessageState, Vote


@dataclass(frozen=True)
class QuorumParams:
    stake_weights: tuple[tuple[str, float], ...]
    round_slots: int = 4
    threshold: float = 2 / 3

    def __post_init__(self):
        if self.round_slots < 1:
            raise ValueError("round_slots must be >= 1")
        if any(w < 0 for _, w in self.stake_weights):
            raise ValueError("stake weights must be nonnegative")

    @classmethod
    def from_weights(cls, weights: dict[str, float], round_slots: int = 4, threshold: float = 2 / 3) -> "QuorumParams":
        return cls(tuple(sorted((k, float(v)) for k, v in weights.items())), round_slots, threshold)

    @property
    def weights(self) -> dict[str, float]:
        return dict(self.stake_weights)

    @property
    def total(self) -> float:
        return sum(w for _, w in self.stake_weights)

    def round_of(self, b: Block) -> int:
        return -1 if b.is_genesis else b.timestamp // self.round_slots

    def tracker(self, state: MessageState) -> "_Tracker":
        return _tracker_for(self, state)

    def finalized_tip(self, state: MessageState) -> tuple[Optional[str], int]:
        tr = _tracker_for(self, state)
        tip = tr.final_best[len(state)]
        return (tip, tr.height[tip] + 1) if tip is not None else (None, 0)

    def notarized_tip(self, state: MessageState) -> Optional[str]:
        return _tracker_for(self, state).notar_best[len(state)]

    def is_notarized(self, state: MessageState, block_id: str) -> bool:
        tr = _tracker_for(self, state)
        pos = tr.notarized.get(block_id)
        return pos is not None and pos <= len(state)


class _Tracker:
    def __init__(self, params: QuorumParams):
        self.p = params
        self.weights = params.weights
        self.need = params.threshold * params.total
        self.processed = 0
        self.blocks: dict[str, Block] = {}
        self.height: dict[str, int] = {}
        self.children: dict[str, list[str]] = {}
        self.by_round: dict[int, list[str]] = {}
        self.votes: dict[str, dict[str, set]] = {}
        # block id -> number of messages processed when it became notarized/final
        self.notarized: dict[str, int] = {}
        self.final: dict[str, int] = {}
        self.notar_best: list[Optional[str]] = [None]
        self.final_best: list[Optional[str]] = [None]
        self._nb: Optional[str] = None
        self._fb: Optional[str] = None

    def feed(self, msg) -> None:
        self.processed += 1
        if isinstance(msg, Block):
            self.blocks[msg.id] = msg
            self.height[msg.id] = 0 if msg.parent is None else self.height[msg.parent] + 1
            if msg.parent is not None:
                self.children.setdefault(msg.parent, []).append(msg.id)
                self.by_round.setdefault(self.p.round_of(msg), []).append(msg.id)
            self._try(msg.id)
        elif isinstance(msg, Vote):
            if self.weights.get(msg.voter, 0.0) > 0:
                # an equivocating key may vote for several blocks in one round; each tally sees it
                self.votes.setdefault(msg.block, {}).setdefault(msg.voter, set()).add(msg.round)
                if msg.block in self.blocks:
                    self._try(msg.block)
        self.notar_best.append(self._nb)
        self.final_best.append(self._fb)

    def _tally(self, b: Block) -> float:
        r = self.p.round_of(b)
        return sum(self.weights.get(v, 0.0) for v, rounds in self.votes.get(b.id, {}).items() if r in rounds)

    def _try(self, bid: str) -> None:
        todo = [bid]
        while todo:
            cur = todo.pop()
            if cur in self.notarized:
                continue
            b = self.blocks[cur]
            if b.parent is not None:
                if b.parent not in self.notarized or self._tally(b) <= self.need:
                    continue
            self.notarized[cur] = self.processed
            if b.parent is None:
                self.final[cur] = self.processed
                self._fb = self._fb or cur
            h = self.height[cur]
            if self._nb is None or h > self.height[self._nb]:
                self._nb = cur
            self._check_final(b)
            todo.extend(self.children.get(cur, ()))

    def _check_final(self, c: Block) -> None:
        if c.parent is None:
            return
        b = self.blocks[c.parent]
        if b.parent is None:
            return
        a = self.blocks[b.parent]
        ra, rb, rc = (self.p.round_of(x) for x in (a, b, c))
        if rb == ra + 1 and rc == rb + 1:
            # b and every ancestor of b become final
            cur: Optional[str] = b.id
            while cur is not None and cur not in self.final:
                self.final[cur] = self.processed
                cur = self.blocks[cur].parent
            if self._fb is None or self.height[b.id] > self.height[self._fb]:
                self._fb = b.id


def _tracker_for(params: QuorumParams, state: MessageState) -> _Tracker:
    # one tracker per log; prefixes read its per-length history
    key = ("quorum", params)
    tr = state.cache.get(key)
    if tr is None:
        tr = state.cache[key] = _Tracker(params)
    if tr.processed < len(state):
        for msg in state.iter_from(tr.processed):
            tr.feed(msg)
    return tr
