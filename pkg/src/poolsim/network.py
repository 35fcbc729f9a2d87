"""Timeslots, broadcast and delivery, and adversarial control during asynchrony.

Delays are drawn from a keyed PRF over (message, recipient, time), so a
delivery time never depends on the order in which other draws happened.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

from poolsim import prf
from poolsim.chain import Block, Message
from poolsim.errors import NotPermitted, ParentNotDelivered

SYNC = "sync"
ASYNC = "async"


@dataclass(frozen=True)
class SyncSchedule:
    intervals: tuple[tuple[int, int, str], ...]

    def __post_init__(self):
        prev = 0
        for a, b, mode in self.intervals:
            if mode not in (SYNC, ASYNC):
                raise ValueError(f"unknown interval mode {mode!r}")
            if a != prev or b <= a:
                raise ValueError("intervals must be ordered, disjoint and contiguous from 0")
            prev = b

    @classmethod
    def all_sync(cls, duration: int) -> "SyncSchedule":
        return cls(((0, max(duration, 1), SYNC),))

    @classmethod
    def all_async(cls, duration: int) -> "SyncSchedule":
        return cls(((0, max(duration, 1), ASYNC),))

    @classmethod
    def from_async_windows(cls, duration: int, windows: Iterable[tuple[int, int]]) -> "SyncSchedule":
        out, t = [], 0
        for a, b in sorted(windows):
            a, b = max(a, t), min(b, duration)
            if b <= a:
                continue
            if a > t:
                out.append((t, a, SYNC))
            out.append((a, b, ASYNC))
            t = b
        if t < duration or not out:
            out.append((t, max(duration, t + 1), SYNC))
        return cls(tuple(out))

    @property
    def end(self) -> int:
        return self.intervals[-1][1] if self.intervals else 0

    def covers(self, duration: int) -> bool:
        return self.end >= duration

    def mode_at(self, t: int) -> str:
        for a, b, mode in self.intervals:
            if a <= t < b:
                return mode
        return SYNC

    def is_sync(self, t: int) -> bool:
        return self.mode_at(t) == SYNC

    @property
    def synchronous(self) -> bool:
        return all(m == SYNC for _, _, m in self.intervals)


@dataclass(frozen=True)
class DelayDist:
    kind: str = "geometric"
    q: float = 0.5
    d: int = 1

    def __post_init__(self):
        if self.kind not in ("geometric", "fixed"):
            raise ValueError(f"unknown delay distribution {self.kind!r}")
        if self.kind == "geometric" and not 0 < self.q <= 1:
            raise ValueError("geometric q must lie in (0, 1]")
        if self.kind == "fixed" and self.d < 1:
            raise ValueError("fixed delay must be >= 1")


def synchronous_delay(u: float, dist: DelayDist) -> int:
    """Delay in timeslots from a uniform draw ``u`` in [0, 1)."""
    if dist.kind == "fixed":
        return dist.d
    if dist.q >= 1.0:
        return 1
    # inverse CDF: P(delay > k) = (1 - q)^k
    return int(math.floor(math.log1p(-u) / math.log1p(-dist.q))) + 1


@dataclass(frozen=True)
class AdversaryDeliveryPolicy:
    """What the adversary does with deliveries due during asynchronous slots.

    ``partition``: withhold events whose sender and recipient fall on different
    sides. ``scripted``: explicit overrides ``(message_id, recipient, action, at)``
    with action ``withhold`` or ``deliver`` (the latter may deliver early).
    """

    kind: str = "none"
    sets: tuple[frozenset, ...] = ()
    overrides: tuple[tuple[str, str, str, Optional[int]], ...] = ()

    def __post_init__(self):
        if self.kind not in ("none", "partition", "scripted"):
            raise ValueError(f"unknown delivery policy {self.kind!r}")

    @classmethod
    def partition(cls, *sides: Iterable[str]) -> "AdversaryDeliveryPolicy":
        return cls("partition", tuple(frozenset(s) for s in sides))

    def side(self, key: str) -> Optional[int]:
        for i, s in enumerate(self.sets):
            if key in s:
                return i
        return None

    def cuts(self, sender_key: str, recipient_keys: Iterable[str]) -> bool:
        a = self.side(sender_key)
        if a is None:
            return False
        for k in recipient_keys:
            b = self.side(k)
            if b is not None and b != a:
                return True
        return False


@dataclass
class DeliveryEvent:
    message: Message
    sender: str
    recipient: str
    broadcast_t: int
    due_t: Optional[int]  # None while withheld


# --- world-level operations --------------------------------------------------
# ``world`` is a poolsim.world.World; these functions own its event queue.

def _enqueue(world, ev: DeliveryEvent) -> None:
    world.queue.setdefault(ev.due_t, []).append(ev)


def broadcast(world, sender: str, message: Message, t: int) -> list[DeliveryEvent]:
    """Broadcast a permitted message: self-delivery now, delayed delivery to everyone else."""
    owner = world.owner_of(sender)
    if not any(p.key == sender and p.covers(message) for p in owner.granted):
        raise NotPermitted(f"{sender} holds no permission for message {message.id[:12]}")
    if isinstance(message, Block):
        if message.miner != sender:
            raise NotPermitted("blocks may only be broadcast by their miner")
        if message.parent not in owner.state:
            raise ParentNotDelivered(f"{sender} has not received the parent of {message.id[:12]}")
        world.blocks[message.id] = message
    world.first_broadcast.setdefault(message.id, t)
    world.log_event(t, "BROADCAST", sender, None, message.id)
    events = []
    for user in world.users:
        if user is owner:
            ev = DeliveryEvent(message, sender, user.id, t, t)
            world.deliver(user, message, sender, t)
        else:
            u = prf.prf_uniform(world.sched_key, "delay", message.id, user.id, int(t))
            ev = DeliveryEvent(message, sender, user.id, t, t + synchronous_delay(u, world.delay))
            _enqueue(world, ev)
        events.append(ev)
    return events


def deliver_due(world) -> list[tuple[str, Message]]:
    """Start-of-slot deliveries for ``world.t`` under the schedule and adversary policy."""
    t = world.t
    delivered = []
    if world.schedule.is_sync(t):
        if world.withheld:
            # asynchrony just ended: withheld events get a fresh delay from the last async slot
            for ev in world.withheld:
                u = prf.prf_uniform(world.sched_key, "redraw", ev.message.id, ev.recipient, int(t))
                ev.due_t = t - 1 + synchronous_delay(u, world.delay)
                _enqueue(world, ev)
            world.withheld = []
        for ev in world.queue.pop(t, ()):
            world.deliver(world.user(ev.recipient), ev.message, ev.sender, t, ev.broadcast_t)
            delivered.append((ev.recipient, ev.message))
        return delivered

    policy = world.policy
    due = world.queue.pop(t, [])
    if policy.kind == "scripted":
        early = {(m, r) for m, r, action, at in policy.overrides if action == "deliver" and at == t}
        if early:
            for when in sorted(k for k in world.queue if k > t):
                keep = []
                for ev in world.queue[when]:
                    (due if (ev.message.id, ev.recipient) in early else keep).append(ev)
                world.queue[when] = keep
        blocked = {(m, r) for m, r, action, _ in policy.overrides if action == "withhold"}
    for ev in due:
        if policy.kind == "partition":
            withhold = policy.cuts(ev.sender, world.user(ev.recipient).keys)
        elif policy.kind == "scripted":
            withhold = (ev.message.id, ev.recipient) in blocked
        else:
            withhold = False
        if withhold:
            ev.due_t = None
            world.withheld.append(ev)
            world.log_event(t, "WITHHOLD", ev.sender, ev.recipient, ev.message.id)
        else:
            world.deliver(world.user(ev.recipient), ev.message, ev.sender, t, ev.broadcast_t)
            delivered.append((ev.recipient, ev.message))
    return delivered
