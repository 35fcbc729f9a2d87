"""Honest instruction sets and adversary programs.

A step function maps an :class:`AgentView` to a list of actions. It is a
pure function of the view: the world replays it within a slot until it
emits nothing new, feeding back the permitter's answers as permissions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

from poolsim.chain import Block, ConfirmationRule, MessageState, Vote
from poolsim.network import AdversaryDeliveryPolicy
from poolsim.permitter import (
    CRITERIA, SPECIFIC, DifficultyState, PermitRequest, Permission, PermitterKernel, Prop1Params,
)
from poolsim.quorum import QuorumParams


@dataclass(frozen=True)
class ProtocolParams:
    kind: str
    confirmation: ConfirmationRule
    difficulty: Optional[DifficultyState] = None
    window_slots: int = 120
    quorum: Optional[QuorumParams] = None
    prop1: Optional[Prop1Params] = None


@dataclass(frozen=True)
class AgentView:
    keys: tuple[str, ...]
    t: int
    state: MessageState
    permissions: tuple[Permission, ...]
    params: ProtocolParams


@dataclass(frozen=True)
class Request:
    request: PermitRequest


@dataclass(frozen=True)
class Broadcast:
    key: str
    message: Union[Block, Vote]


Action = Union[Request, Broadcast]
StepFn = Callable[[AgentView], list]


@dataclass
class ExtendedProtocol:
    """The triple of instructions, permitter and confirmation notion."""

    instructions: str
    permitter: PermitterKernel
    confirmation: ConfirmationRule

    @property
    def step(self) -> StepFn:
        return PROGRAMS[self.instructions]


def _asked(view: AgentView, key: str, slot: int, scope: Optional[str] = None) -> bool:
    return any(p.key == key and p.slot == slot and (scope is None or p.scope == scope) for p in view.permissions)


def pow_candidate(state: MessageState, key: str, t: int, params: ProtocolParams) -> Block:
    leaf = state.best_leaf
    epoch = None
    if params.difficulty is not None:
        epoch = state.height(leaf) // params.difficulty.epoch_length_blocks
    return Block(leaf, key, t, b"", epoch)


def pow_step(view: AgentView) -> list:
    out = []
    for key in view.keys:
        cand = pow_candidate(view.state, key, view.t, view.params)
        held = [p for p in view.permissions if p.key == key and p.slot == view.t and p.kind == SPECIFIC]
        if any(p.message_id == cand.id for p in held):
            if cand.id not in view.state:
                out.append(Broadcast(key, cand))
        elif not _asked(view, key, view.t):
            out.append(Request(PermitRequest(key, view.state, view.t, cand)))
    return out


def pos_step(view: AgentView) -> list:
    out = []
    leaf = view.state.best_leaf
    for key in view.keys:
        grant = next((p for p in view.permissions if p.key == key and p.slot == view.t
                      and p.kind == CRITERIA and p.chain_ref == leaf), None)
        if grant is not None:
            out.append(Broadcast(key, Block(leaf, key, view.t)))
        elif not _asked(view, key, view.t):
            out.append(Request(PermitRequest(key, view.state, view.t, b"")))
    return out


def _round_proposals(view: AgentView, rnd: int) -> list[str]:
    """Proposals of a round in arrival order, as seen by ``view.state``."""
    tr = view.params.quorum.tracker(view.state)
    n = len(view.state)
    return [b for b in tr.by_round.get(rnd, ()) if view.state.position(b) < n]


def _valid_proposal(view: AgentView, bid: str) -> bool:
    q = view.params.quorum
    state = view.state
    parent = state.get(bid).parent
    tip = q.notarized_tip(state)
    return q.is_notarized(state, parent) and state.height(parent) == state.height(tip)


def _vote_for(view: AgentView, key: str, rnd: int, message_id: str) -> Optional[Vote]:
    for bid in _round_proposals(view, rnd):
        v = Vote(key, bid, rnd)
        if v.id == message_id:
            return v
    return None


def _propose(view: AgentView, key: str, tip: str, out: list) -> None:
    grant = next((p for p in view.permissions if p.key == key and p.slot == view.t
                  and p.kind == CRITERIA and p.chain_ref == tip), None)
    if grant is not None:
        b = Block(tip, key, view.t)
        if b.id not in view.state:
            out.append(Broadcast(key, b))
    elif not _asked(view, key, view.t, "block"):
        out.append(Request(PermitRequest(key, view.state, view.t, b"")))


def _vote_grants(view: AgentView, key: str, rnd: int) -> list[Permission]:
    rs = view.params.quorum.round_slots
    return [p for p in view.permissions if p.key == key and p.scope == "vote" and p.slot // rs == rnd]


def _send_votes(view: AgentView, key: str, rnd: int, grants: list[Permission], out: list) -> None:
    for p in grants:
        if p.kind == SPECIFIC and p.message_id not in view.state:
            v = _vote_for(view, key, rnd, p.message_id)
            if v is not None:
                out.append(Broadcast(key, v))


def quorum_step(view: AgentView) -> list:
    """Propose on round starts when elected; vote once per round for the first valid proposal."""
    q = view.params.quorum
    rnd = view.t // q.round_slots
    tip = q.notarized_tip(view.state)
    out: list = []
    for key in view.keys:
        if view.t % q.round_slots == 0:
            _propose(view, key, tip, out)
        grants = _vote_grants(view, key, rnd)
        if grants:
            _send_votes(view, key, rnd, grants, out)
            continue
        target = next((b for b in _round_proposals(view, rnd) if _valid_proposal(view, b)), None)
        if target is not None:
            out.append(Request(PermitRequest(key, view.state, view.t, Vote(key, target, rnd))))
    return out


# --- adversary programs --------------------------------------------------------

def silent_step(view: AgentView) -> list:
    return []


def equivocate_step(view: AgentView) -> list:
    """Quorum adversary: votes for every proposal of the round, and when elected
    proposes both on the notarized tip and on an older notarized block."""
    q = view.params.quorum
    rnd = view.t // q.round_slots
    tr = q.tracker(view.state)
    n = len(view.state)
    tip = tr.notar_best[n]
    out: list = []
    for key in view.keys:
        if view.t % q.round_slots == 0:
            _propose(view, key, tip, out)
            # an older prefix of our own state whose notarized tip differs
            old = next((m for m in range(n, -1, -1) if tr.notar_best[m] not in (None, tip)), None)
            if old is not None:
                older = view.state.prefix(old)
                otip = tr.notar_best[old]
                grant = next((p for p in view.permissions if p.key == key and p.slot == view.t
                              and p.kind == CRITERIA and p.chain_ref == otip), None)
                if grant is not None:
                    b = Block(otip, key, view.t)
                    if b.id not in view.state:
                        out.append(Broadcast(key, b))
                elif sum(1 for p in view.permissions if p.key == key and p.slot == view.t and p.scope == "block") < 2:
                    out.append(Request(PermitRequest(key, older, view.t, b"")))
        grants = _vote_grants(view, key, rnd)
        _send_votes(view, key, rnd, grants, out)
        asked = {p.message_id for p in grants}
        for bid in _round_proposals(view, rnd):
            v = Vote(key, bid, rnd)
            if v.id not in asked:
                out.append(Request(PermitRequest(key, view.state, view.t, v)))
    return out


def partition_adversary(world, sides: Optional[Iterable[Iterable[str]]] = None) -> AdversaryDeliveryPolicy:
    """PARTITION policy isolating each user's keys, or the configured key sets."""
    if sides is None:
        sides = [u.keys for u in world.users]
    return AdversaryDeliveryPolicy.partition(*sides)


PROGRAMS: dict[str, StepFn] = {
    "pow": pow_step,
    "pos": pos_step,
    "quorum": quorum_step,
    "silent": silent_step,
    "equivocate": equivocate_step,
}
HONEST_PROGRAMS = frozenset({"pow", "pos", "quorum"})
