"""Strict JSON scenario files.

Unknown fields are rejected. Errors are reported as ParseError (with line
and column), SchemaError (naming the dotted field path) or ConstraintError
(a semantically invalid value, including pool-setting violations).
"""
from __future__ import annotations

import copy
import json
from importlib import resources as ilr
from pathlib import Path
from typing import Any, Optional, Union

from poolsim.agents import PROGRAMS, ProtocolParams
from poolsim.chain import ConfirmationRule, canonical_json
from poolsim.errors import ConstraintError, ParseError, SchemaError
from poolsim.network import AdversaryDeliveryPolicy, DelayDist, SyncSchedule
from poolsim.permitter import DifficultyState, Prop1Params
from poolsim.quorum import QuorumParams
from poolsim.resources import (
    STAKE, TABLE, PoolBounds, PoolRow, ResourcePool, ResourceSetting, balance, drift_rows,
)
from poolsim.world import ScenarioSpec, Seeds, UserSpec, validate_spec

NUM = (int, float)
OPT_NUM = (int, float, type(None))

# field -> (accepted types, required, nested schema or None)
_CONFIRMATION = {
    "kind": (str, True, None),
    "depth": (int, False, None),
    "rate_hours_per_block": (NUM, False, None),
    "epsilon": (NUM, False, None),
    "timeslot_seconds": (NUM, False, None),
}
_DIFFICULTY = {
    "p_initial": (NUM, False, None),
    "epoch_length_blocks": (int, False, None),
    "target_seconds_per_block": (NUM, False, None),
    "timeslot_seconds": (NUM, False, None),
    "max_factor": (NUM, False, None),
}
_QUORUM = {
    "round_slots": (int, False, None),
    "threshold": (NUM, False, None),
    "stake_weights": (dict, False, None),
}
_PROP1 = {
    "lambda": (NUM, True, None),
    "ext_no": (int, True, None),
    "x_of": (dict, True, None),
    "x_max": (int, False, None),
}
_PROTOCOL = {
    "kind": (str, True, None),
    "confirmation": (dict, False, _CONFIRMATION),
    "difficulty": (dict, False, _DIFFICULTY),
    "window_slots": (int, False, None),
    "quorum": (dict, False, _QUORUM),
    "prop1": (dict, False, _PROP1),
}
_ROW = {
    "key": (str, True, None),
    "from_t": (int, False, None),
    "to_t": ((int, type(None)), False, None),
    "balance": (NUM, True, None),
}
_DRIFT = {
    "key": (str, True, None),
    "start": (NUM, True, None),
    "end": (NUM, True, None),
    "from_t": (int, True, None),
    "to_t": (int, True, None),
    "steps": (int, True, None),
}
_POOL = {
    "kind": (str, True, None),
    "rows": (list, False, _ROW),
    "drift": (list, False, _DRIFT),
    "lookback_seconds": (NUM, False, None),
    "timeslot_seconds": (NUM, False, None),
    "genesis_allocation": (dict, False, None),
}
_BOUNDS = {
    "i0": (NUM, False, None),
    "i1": (NUM, False, None),
    "adversary_fraction_cap": (OPT_NUM, False, None),
}
_SETTING = {
    "sized": (bool, True, None),
    "bounds": (dict, False, _BOUNDS),
    "declared_total": (OPT_NUM, False, None),
}
_SCHEDULE = {
    "intervals": (list, False, None),
    "async_windows": (list, False, None),
}
_DELAY = {
    "kind": (str, True, None),
    "q": (NUM, False, None),
    "d": (int, False, None),
}
_OVERRIDE = {
    "message_id": (str, True, None),
    "recipient": (str, True, None),
    "action": (str, True, None),
    "at": ((int, type(None)), False, None),
}
_ADVERSARY = {
    "kind": (str, True, None),
    "sets": (list, False, None),
    "overrides": (list, False, _OVERRIDE),
}
_USER = {
    "id": (str, True, None),
    "keys": (list, False, None),
    "program": (str, True, None),
}
_SEEDS = {
    "scheduler_seed": (int, False, None),
    "prf_seed": (int, False, None),
}
_ANALYSIS = {
    "liveness": (dict, False, {
        "epsilon": (NUM, True, None),
        "windows": (list, True, None),
        "warmup": (int, False, None),
    }),
    "security": (bool, False, None),
    "partition_growth": (bool, False, None),
    "cap": (dict, False, {
        "I": (NUM, True, None),
        "t0": ((int, type(None)), False, None),
    }),
}
SCHEMA = {
    "name": (str, True, None),
    "description": (str, False, None),
    "protocol": (dict, True, _PROTOCOL),
    "pool": (dict, True, _POOL),
    "setting": (dict, True, _SETTING),
    "schedule": (dict, False, _SCHEDULE),
    "delay": (dict, False, _DELAY),
    "adversary": (dict, False, _ADVERSARY),
    "duration": (int, True, None),
    "seeds": (dict, False, _SEEDS),
    "users": (list, True, _USER),
    "analysis": (dict, False, _ANALYSIS),
}


def _check(obj: Any, schema: dict, path: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(path or "<root>", f"{path or '<root>'} must be an object")
    for k in obj:
        if k not in schema:
            raise SchemaError(f"{path}{k}", f"unknown field '{path}{k}'")
    for k, (types, required, sub) in schema.items():
        name = f"{path}{k}"
        if k not in obj:
            if required:
                raise SchemaError(name, f"missing required field '{name}'")
            continue
        v = obj[k]
        # bools are ints in Python; only accept them where bool is asked for
        if isinstance(v, bool) and types is not bool and not (isinstance(types, tuple) and bool in types):
            raise SchemaError(name, f"field '{name}' has the wrong type")
        if not isinstance(v, types):
            raise SchemaError(name, f"field '{name}' has the wrong type")
        if sub is not None:
            if isinstance(v, list):
                for i, item in enumerate(v):
                    _check(item, sub, f"{name}[{i}].")
            else:
                _check(v, sub, f"{name}.")


def _parse(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None
    return data


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """``a.b.c=VALUE`` edits; VALUE is parsed as JSON, falling back to a string."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise SchemaError(item, f"override {item!r} is not KEY=VALUE")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = path.split(".")
        cur = data
        for p in parts[:-1]:
            if not isinstance(cur, dict):
                raise SchemaError(path)
            cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise SchemaError(path)
        cur[parts[-1]] = value
    return data


def _constraint(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ValueError, TypeError) as e:
        raise ConstraintError(str(e)) from None


def _pool(d: dict) -> ResourcePool:
    kind = d["kind"]
    if kind not in (TABLE, STAKE):
        raise SchemaError("pool.kind", f"pool.kind must be '{TABLE}' or '{STAKE}'")
    rows = [PoolRow(r["key"], r.get("from_t", 0), r.get("to_t"), float(r["balance"])) for r in d.get("rows", [])]
    for dr in d.get("drift", []):
        rows.extend(_constraint(drift_rows, dr["key"], float(dr["start"]), float(dr["end"]),
                                dr["from_t"], dr["to_t"], dr["steps"]))
    alloc = d.get("genesis_allocation", {})
    for k, v in alloc.items():
        if not isinstance(v, NUM) or isinstance(v, bool):
            raise SchemaError(f"pool.genesis_allocation.{k}", "stake must be a number")
    return _constraint(ResourcePool, kind=kind, rows=tuple(rows),
                       lookback_seconds=float(d.get("lookback_seconds", 3600.0)),
                       timeslot_seconds=float(d.get("timeslot_seconds", 30.0)),
                       genesis_allocation=tuple(sorted((k, float(v)) for k, v in alloc.items())))


def _schedule(d: Optional[dict], duration: int) -> SyncSchedule:
    if not d:
        return SyncSchedule.all_sync(duration)
    if "intervals" in d and "async_windows" in d:
        raise SchemaError("schedule", "give either schedule.intervals or schedule.async_windows")
    if "intervals" in d:
        try:
            iv = tuple((int(a), int(b), str(m)) for a, b, m in d["intervals"])
        except (TypeError, ValueError):
            raise SchemaError("schedule.intervals", "intervals are [from_t, to_t, mode] triples") from None
        return _constraint(SyncSchedule, iv)
    try:
        wins = [(int(a), int(b)) for a, b in d.get("async_windows", [])]
    except (TypeError, ValueError):
        raise SchemaError("schedule.async_windows", "async windows are [from_t, to_t] pairs") from None
    return SyncSchedule.from_async_windows(duration, wins)


def _protocol(d: dict, pool: ResourcePool, duration: int) -> ProtocolParams:
    kind = d["kind"]
    if kind not in ("pow", "pos", "quorum"):
        raise SchemaError("protocol.kind", "protocol.kind must be 'pow', 'pos' or 'quorum'")
    quorum = None
    if kind == "quorum":
        qd = d.get("quorum", {})
        weights = qd.get("stake_weights")
        if weights is None:
            weights = {k: balance(pool, k, 0) for k in pool.keys()}
        quorum = _constraint(QuorumParams.from_weights, weights, qd.get("round_slots", 4),
                             float(qd.get("threshold", 2 / 3)))
    cd = dict(d.get("confirmation", {"kind": "finality" if kind == "quorum" else "depth"}))
    conf = _constraint(ConfirmationRule, quorum=quorum, **cd)
    difficulty = None
    if kind == "pow":
        difficulty = _constraint(DifficultyState, **d.get("difficulty", {}))
    prop1 = None
    if "prop1" in d:
        pd = d["prop1"]
        prop1 = _constraint(Prop1Params.build, float(pd["lambda"]), pd["ext_no"], pd["x_of"], pd.get("x_max"))
    window = d.get("window_slots", 120)
    if window < 1:
        raise ConstraintError("window_slots must be >= 1")
    return ProtocolParams(kind, conf, difficulty, window, quorum, prop1)


def spec_from_dict(data: dict, source: Optional[str] = None) -> ScenarioSpec:
    _check(data, SCHEMA, "")
    duration = data["duration"]
    if duration < 0:
        raise ConstraintError("duration must be nonnegative")
    pool = _pool(data["pool"])
    sd = data["setting"]
    bd = sd.get("bounds", {})
    bounds = _constraint(PoolBounds, float(bd.get("i0", 1.0)), float(bd.get("i1", 1e6)),
                         bd.get("adversary_fraction_cap"))
    setting = _constraint(ResourceSetting, sd["sized"], bounds, sd.get("declared_total"))
    protocol = _protocol(data["protocol"], pool, duration)
    users = []
    for i, u in enumerate(data["users"]):
        if u["program"] not in PROGRAMS:
            raise SchemaError(f"users[{i}].program", f"unknown program {u['program']!r}")
        keys = tuple(u.get("keys", [u["id"]]))
        if not keys or not all(isinstance(k, str) for k in keys):
            raise SchemaError(f"users[{i}].keys", "keys must be a nonempty list of strings")
        users.append(UserSpec(u["id"], keys, u["program"]))
    if len({u.id for u in users}) != len(users):
        raise ConstraintError("user ids must be unique")
    dd = data.get("delay", {"kind": "geometric", "q": 0.5})
    delay = _constraint(DelayDist, dd["kind"], float(dd.get("q", 0.5)), dd.get("d", 1))
    ad = data.get("adversary", {"kind": "none"})
    try:
        sets = tuple(frozenset(s) for s in ad.get("sets", []))
    except TypeError:
        raise SchemaError("adversary.sets", "sets are lists of keys") from None
    overrides = tuple((o["message_id"], o["recipient"], o["action"], o.get("at")) for o in ad.get("overrides", []))
    for o in overrides:
        if o[2] not in ("withhold", "deliver"):
            raise SchemaError("adversary.overrides.action", "action must be 'withhold' or 'deliver'")
    adversary = _constraint(AdversaryDeliveryPolicy, ad["kind"], sets, overrides)
    seeds = Seeds(**data.get("seeds", {}))
    spec = ScenarioSpec(
        name=data["name"], protocol=protocol, pool=pool, setting=setting,
        schedule=_schedule(data.get("schedule"), duration), duration=duration, users=tuple(users),
        delay=delay, adversary=adversary, seeds=seeds,
        source=source if source is not None else canonical_json(data),
    )
    validate_spec(spec)
    return spec


def scenario_dir() -> Path:
    return Path(str(ilr.files("poolsim") / "scenarios"))


def resolve_path(path: Union[str, Path]) -> Path:
    """A file path, or the name of a shipped scenario (with or without .json)."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix == ".json" else p.name + ".json"
    shipped = scenario_dir() / name
    if shipped.exists():
        return shipped
    raise FileNotFoundError(str(path))


def load_raw(path: Union[str, Path]) -> dict:
    return _parse(resolve_path(path).read_text())


def load_scenario(path: Union[str, Path], overrides: Optional[list[str]] = None) -> ScenarioSpec:
    data = load_raw(path)
    if overrides:
        data = apply_overrides(data, overrides)
    _check(data, SCHEMA, "")
    return spec_from_dict(data, canonical_json(data))


def shipped_scenarios() -> list[Path]:
    return sorted(scenario_dir().glob("*.json"))
