"""The simulation world: users, permitter, event queue and per-slot observations."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

from poolsim import prf
from poolsim.agents import (
    HONEST_PROGRAMS, PROGRAMS, AgentView, Broadcast, ExtendedProtocol, ProtocolParams, Request,
)
from poolsim.chain import GENESIS, Block, MessageState, canonical_json, confirmed_tip
from poolsim.errors import ConfigInvalid, ConstraintError
from poolsim.network import AdversaryDeliveryPolicy, DelayDist, SyncSchedule, broadcast, deliver_due
from poolsim.permitter import POS, POW, PROP1, QUORUM, Permission, PermitterKernel, respond
from poolsim.resources import ResourcePool, ResourceSetting, validate_pool

MAX_ACTION_ROUNDS = 16

_KERNEL_KIND = {"pow": POW, "pos": POS, "quorum": QUORUM, "prop1": PROP1}


@dataclass(frozen=True)
class UserSpec:
    id: str
    keys: tuple[str, ...]
    program: str

    @property
    def honest(self) -> bool:
        return self.program in HONEST_PROGRAMS


@dataclass(frozen=True)
class Seeds:
    scheduler_seed: int = 0
    prf_seed: int = 0

    @classmethod
    def from_base(cls, base: int) -> "Seeds":
        return cls(int(base), int(base))


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything an execution depends on; two runs of one spec are bit-identical."""

    name: str
    protocol: ProtocolParams
    pool: ResourcePool
    setting: ResourceSetting
    schedule: SyncSchedule
    duration: int
    users: tuple[UserSpec, ...]
    delay: DelayDist = DelayDist()
    adversary: AdversaryDeliveryPolicy = AdversaryDeliveryPolicy()
    seeds: Seeds = Seeds()
    source: Optional[str] = field(default=None, compare=False, repr=False)

    @property
    def adversary_keys(self) -> tuple[str, ...]:
        return tuple(k for u in self.users if not u.honest for k in u.keys)

    @property
    def digest(self) -> str:
        """Config digest: the canonical source text when loaded from a file."""
        body = self.source if self.source is not None else repr(self)
        return hashlib.blake2b(body.encode(), digest_size=16).hexdigest()

    def with_seeds(self, seeds: Seeds) -> "ScenarioSpec":
        return replace(self, seeds=seeds)

    def run_seeds(self, index: int) -> "ScenarioSpec":
        s = self.seeds
        return replace(self, seeds=Seeds(s.scheduler_seed + index, s.prf_seed + index))

    def extended_protocol(self, user: UserSpec, kernel: PermitterKernel) -> ExtendedProtocol:
        return ExtendedProtocol(user.program, kernel, self.protocol.confirmation)


class UserRecord:
    def __init__(self, spec: UserSpec, index: int):
        self.id = spec.id
        self.index = index
        self.keys = tuple(spec.keys)
        self.program = spec.program
        self.honest = spec.honest
        self.step = PROGRAMS[spec.program]
        self.state = MessageState.with_genesis()
        self.recent: list[Permission] = []
        self.perm_count = 0
        self.perm_digest = b"\x00" * 32
        self.buffer: dict[str, list] = {}

    @property
    def granted(self) -> list[Permission]:
        return [p for p in self.recent if p.granted]

    def add_permission(self, p: Permission) -> None:
        self.recent.append(p)
        self.perm_count += 1
        self.perm_digest = hashlib.blake2b(
            self.perm_digest + canonical_json(p.to_json()).encode(), digest_size=32).digest()


@dataclass(frozen=True)
class TraceRecord:
    t: int
    user: str
    state_len: int
    digest: str
    confirmed_tip: Optional[str]
    confirmed_len: int
    longest_len: int


@dataclass
class RunTrace:
    """Per-slot, per-user observations of one execution."""

    spec: ScenarioSpec
    user_ids: tuple[str, ...]
    final_states: dict[str, MessageState]
    state_len: list[list[int]]
    view_digest: list[list[bytes]]
    conf_tip: list[list[Optional[str]]]
    conf_len: list[list[int]]
    longest_len: list[list[int]]
    blocks: dict[str, Block]
    first_broadcast: dict[str, int]
    deliveries: list[tuple]
    events: Optional[list[tuple]]
    digest: str

    @property
    def duration(self) -> int:
        return len(self.state_len[0]) if self.state_len else 0

    def user_index(self, user_id: str) -> int:
        return self.user_ids.index(user_id)

    def snapshot(self, user_id: str, t: int) -> MessageState:
        i = self.user_index(user_id)
        return self.final_states[user_id].prefix(self.state_len[i][t])

    def records(self) -> Iterator[TraceRecord]:
        for t in range(self.duration):
            for i, u in enumerate(self.user_ids):
                yield TraceRecord(t, u, self.state_len[i][t], self.view_digest[i][t].hex(),
                                  self.conf_tip[i][t], self.conf_len[i][t], self.longest_len[i][t])

    def event_lines(self) -> Iterator[str]:
        for t, kind, sender, recipient, mid in self.events or ():
            yield json.dumps({"t": t, "kind": kind, "sender": sender, "recipient": recipient,
                              "message-id": mid}, sort_keys=True)


class World:
    def __init__(self, spec: ScenarioSpec, keep_events: bool = False):
        self.spec = spec
        p = spec.protocol
        kind = _KERNEL_KIND.get(p.kind)
        if kind is None:
            raise ConfigInvalid(f"unknown protocol {p.kind!r}")
        self.params = p
        self.kernel = PermitterKernel(
            kind, prf.derive_key(spec.seeds.prf_seed, "permitter"), difficulty=p.difficulty,
            window_slots=p.window_slots, prop1=p.prop1, quorum=p.quorum,
        )
        self.pool = spec.pool
        self.schedule = spec.schedule
        self.delay = spec.delay
        self.policy = spec.adversary
        self.sched_key = prf.derive_key(spec.seeds.scheduler_seed, "scheduler")
        self.users = [UserRecord(u, i) for i, u in enumerate(sorted(spec.users, key=lambda u: u.id))]
        self._by_id = {u.id: u for u in self.users}
        self._owner = {}
        for u in self.users:
            for k in u.keys:
                if k in self._owner:
                    raise ConfigInvalid(f"key {k!r} is controlled by two users")
                self._owner[k] = u
        self.t = 0
        self.queue: dict[int, list] = {}
        self.withheld: list = []
        self.blocks: dict[str, Block] = {GENESIS.id: GENESIS}
        self.first_broadcast: dict[str, int] = {GENESIS.id: -1}
        self.deliveries: list[tuple] = []
        self.events: Optional[list[tuple]] = [] if keep_events else None
        self._hash = hashlib.blake2b(digest_size=32)
        n = len(self.users)
        self.state_len = [[] for _ in range(n)]
        self.view_digest = [[] for _ in range(n)]
        self.conf_tip = [[] for _ in range(n)]
        self.conf_len = [[] for _ in range(n)]
        self.longest_len = [[] for _ in range(n)]
        self._last = [None] * n
        self._view_keep = p.quorum.round_slots if p.kind == "quorum" else 1

    # lookups used by the network layer
    def user(self, user_id: str) -> UserRecord:
        return self._by_id[user_id]

    def owner_of(self, key: str) -> UserRecord:
        try:
            return self._owner[key]
        except KeyError:
            raise ConfigInvalid(f"key {key!r} is not controlled by any user") from None

    def log_event(self, t: int, kind: str, sender, recipient, mid: str) -> None:
        rec = (t, kind, sender, recipient, mid)
        self._hash.update(f"{t}\x1f{kind}\x1f{sender}\x1f{recipient}\x1f{mid}\x1e".encode())
        if self.events is not None:
            self.events.append(rec)

    def deliver(self, user: UserRecord, msg, sender: str, t: int, broadcast_t: Optional[int] = None) -> None:
        self.log_event(t, "DELIVER", sender, user.id, msg.id)
        self.deliveries.append((t, user.index, t if broadcast_t is None else broadcast_t, msg))
        if msg.id in user.state:
            return
        if isinstance(msg, Block) and msg.parent not in user.state:
            user.buffer.setdefault(msg.parent, []).append(msg)
            return
        todo = [msg]
        while todo:
            m = todo.pop()
            if m.id in user.state:
                continue
            user.state = user.state.insert(m)
            todo.extend(reversed(user.buffer.pop(m.id, [])))

    def _act(self, user: UserRecord) -> None:
        t = self.t
        for _ in range(MAX_ACTION_ROUNDS):
            view = AgentView(user.keys, t, user.state, tuple(user.recent), self.params)
            actions = user.step(view)
            if not actions:
                return
            for a in actions:
                if isinstance(a, Request):
                    if a.request.key not in user.keys:
                        continue
                    user.add_permission(respond(self.kernel, a.request, t, self.pool))
                elif isinstance(a, Broadcast):
                    broadcast(self, a.key, a.message, t)

    def _observe(self) -> None:
        rule = self.params.confirmation
        for u in self.users:
            i = u.index
            key = (len(u.state), u.perm_count)
            last = self._last[i]
            if last is None or last[0] != key:
                s = u.state
                vd = hashlib.blake2b(bytes.fromhex(s.digest) + u.perm_digest, digest_size=32).digest()
                if last is not None and last[0][0] == key[0]:
                    tip, clen, llen = last[2], last[3], last[4]
                else:
                    tip, clen = confirmed_tip(s, rule)
                    llen = s.height(s.best_leaf) + 1
                last = self._last[i] = (key, vd, tip, clen, llen)
                self._hash.update(vd)
            _, vd, tip, clen, llen = last
            self.state_len[i].append(key[0])
            self.view_digest[i].append(vd)
            self.conf_tip[i].append(tip)
            self.conf_len[i].append(clen)
            self.longest_len[i].append(llen)

    def step(self) -> list:
        """One timeslot: deliveries, agent actions in fixed user order, observation."""
        delivered = deliver_due(self)
        keep_from = self.t - self._view_keep + 1
        for u in self.users:
            if u.recent and u.recent[0].slot < keep_from:
                u.recent = [p for p in u.recent if p.slot >= keep_from]
            self._act(u)
        self._observe()
        self.t += 1
        return delivered

    def run(self) -> RunTrace:
        for _ in range(self.spec.duration):
            self.step()
        return RunTrace(
            spec=self.spec,
            user_ids=tuple(u.id for u in self.users),
            final_states={u.id: u.state for u in self.users},
            state_len=self.state_len, view_digest=self.view_digest, conf_tip=self.conf_tip,
            conf_len=self.conf_len, longest_len=self.longest_len, blocks=self.blocks,
            first_broadcast=self.first_broadcast,
            deliveries=self.deliveries, events=self.events, digest=self._hash.hexdigest(),
        )


def advance_timeslot(world: World) -> list:
    return world.step()


def validate_spec(spec: ScenarioSpec) -> None:
    if spec.duration < 0:
        raise ConstraintError("duration must be nonnegative")
    if not spec.schedule.covers(spec.duration):
        raise ConstraintError("sync schedule does not cover the duration")
    v = validate_pool(spec.pool, spec.setting, spec.duration, adversary_keys=spec.adversary_keys)
    if v is not None:
        raise ConstraintError(f"pool violates the resource setting at t={v.t}: {v.reason} (value {v.value})")


def run_world(spec: ScenarioSpec, keep_events: bool = False, validate: bool = True) -> RunTrace:
    if validate:
        validate_spec(spec)
    return World(spec, keep_events=keep_events).run()
