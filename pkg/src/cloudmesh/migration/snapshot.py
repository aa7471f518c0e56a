"""Switch snapshots: flow table with counters and remaining timeouts, config and queues."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping, Optional

from cloudmesh.errors import MalformedSnapshot
from cloudmesh.openflow import (
    Action,
    FlowRule,
    Match,
    QueueConfig,
    Switch,
    action_from_dict,
    action_to_dict,
)


@dataclass(frozen=True)
class RuleState:
    """One captured rule.  Times are relative to the capture tick."""

    rule_id: int
    priority: int
    match: Match
    actions: tuple[Action, ...]
    install_age: int
    idle_timeout: Optional[int]
    hard_timeout: Optional[int]
    idle_remaining: Optional[int]
    hard_remaining: Optional[int]
    packets: int
    bytes: int
    cookie: Optional[tuple[int, int]] = None
    flow_id: Optional[str] = None
    version: int = 0
    redirect: bool = False
    suppressed: bool = False

    def canonical_key(self) -> tuple[int, int, int]:
        return (-self.priority, -self.install_age, self.rule_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "priority": self.priority,
            "match": self.match.to_dict(),
            "actions": [action_to_dict(a) for a in self.actions],
            "install_age": self.install_age,
            "idle_timeout": self.idle_timeout,
            "hard_timeout": self.hard_timeout,
            "idle_remaining": self.idle_remaining,
            "hard_remaining": self.hard_remaining,
            "packets": self.packets,
            "bytes": self.bytes,
            "cookie": None if self.cookie is None else list(self.cookie),
            "flow_id": self.flow_id,
            "version": self.version,
            "redirect": self.redirect,
            "suppressed": self.suppressed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RuleState":
        cookie = d.get("cookie")
        return cls(
            rule_id=int(d["rule_id"]),
            priority=int(d["priority"]),
            match=Match.from_dict(d["match"]),
            actions=tuple(action_from_dict(a) for a in d["actions"]),
            install_age=int(d["install_age"]),
            idle_timeout=d.get("idle_timeout"),
            hard_timeout=d.get("hard_timeout"),
            idle_remaining=d.get("idle_remaining"),
            hard_remaining=d.get("hard_remaining"),
            packets=int(d["packets"]),
            bytes=int(d["bytes"]),
            cookie=None if cookie is None else (int(cookie[0]), int(cookie[1])),
            flow_id=d.get("flow_id"),
            version=int(d.get("version", 0)),
            redirect=bool(d.get("redirect", False)),
            suppressed=bool(d.get("suppressed", False)),
        )


@dataclass(frozen=True)
class SwitchSnapshot:
    switch_id: str
    capture_tick: int
    rules: tuple[RuleState, ...]
    config: Mapping[str, Any]
    queues: tuple[QueueConfig, ...]
    next_rule_id: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "switch_id": self.switch_id,
            "capture_tick": self.capture_tick,
            "rules": [r.to_dict() for r in self.rules],
            "config": dict(self.config),
            "queues": [q.to_dict() for q in self.queues],
            "next_rule_id": self.next_rule_id,
        }

    def to_json(self) -> str:
        """Canonical form: sorted keys, rules in (priority desc, install tick asc) order."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SwitchSnapshot":
        try:
            snap = cls(
                switch_id=str(d["switch_id"]),
                capture_tick=int(d["capture_tick"]),
                rules=tuple(RuleState.from_dict(r) for r in d["rules"]),
                config=dict(d["config"]),
                queues=tuple(
                    QueueConfig(int(q["queue_id"]), int(q["max_rate"]), int(q.get("pending_depth", 0)))
                    for q in d["queues"]
                ),
                next_rule_id=int(d["next_rule_id"]),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise MalformedSnapshot(f"bad snapshot document: {exc!r}") from exc
        check_snapshot(snap)
        return snap

    @classmethod
    def from_json(cls, text: str) -> "SwitchSnapshot":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedSnapshot(str(exc)) from exc
        return cls.from_dict(doc)


def check_snapshot(snap: SwitchSnapshot) -> None:
    ids = set()
    keys = set()
    for r in snap.rules:
        if r.rule_id in ids:
            raise MalformedSnapshot(f"duplicate rule id {r.rule_id}")
        ids.add(r.rule_id)
        if (r.priority, r.match) in keys:
            raise MalformedSnapshot(f"two rules share priority {r.priority} and match {r.match}")
        keys.add((r.priority, r.match))
        for rem, timeout in ((r.idle_remaining, r.idle_timeout), (r.hard_remaining, r.hard_timeout)):
            if (rem is None) != (timeout is None):
                raise MalformedSnapshot(f"rule {r.rule_id}: timeout and remaining disagree")
            if rem is not None and rem < 0:
                raise MalformedSnapshot(f"rule {r.rule_id}: negative remaining time")
        if r.install_age < 0 or r.packets < 0 or r.bytes < 0 or r.priority < 0:
            raise MalformedSnapshot(f"rule {r.rule_id}: negative field")
    if ids and snap.next_rule_id <= max(ids):
        raise MalformedSnapshot("next_rule_id must exceed every rule id")
    if list(snap.rules) != sorted(snap.rules, key=RuleState.canonical_key):
        raise MalformedSnapshot("rules are not in canonical order")


def _live(rule: FlowRule, now: int) -> bool:
    d = rule.deadline
    return rule.suppressed_since is not None or d is None or d > now


def capture_rule(rule: FlowRule, now: int) -> RuleState:
    idle, hard = rule.remaining(now)
    return RuleState(
        rule_id=rule.rule_id,
        priority=rule.priority,
        match=rule.match,
        actions=rule.actions,
        install_age=now - rule.install_tick,
        idle_timeout=rule.idle_timeout,
        hard_timeout=rule.hard_timeout,
        idle_remaining=idle,
        hard_remaining=hard,
        packets=rule.packets,
        bytes=rule.bytes,
        cookie=rule.cookie,
        flow_id=rule.flow_id,
        version=rule.version,
        redirect=rule.redirect,
        suppressed=rule.suppressed_since is not None,
    )


def snapshot_switch(switch: Switch, now: int) -> SwitchSnapshot:
    """Capture ``switch`` at ``now`` without modifying it.

    Rules already past their deadline (expired but not yet swept) are not
    part of the observable table and are left out.
    """
    rules = tuple(
        sorted((capture_rule(r, now) for r in switch.rules.values() if _live(r, now)), key=RuleState.canonical_key)
    )
    return SwitchSnapshot(
        switch_id=switch.switch_id,
        capture_tick=now,
        rules=rules,
        config=dict(switch.config),
        queues=tuple(switch.queues),
        next_rule_id=switch.next_rule_id,
    )


def materialize(state: RuleState, now: int) -> FlowRule:
    """A live rule from ``state`` with its clock restarted at ``now``."""
    return FlowRule(
        rule_id=state.rule_id,
        priority=state.priority,
        match=state.match,
        actions=state.actions,
        install_tick=now - state.install_age,
        idle_timeout=state.idle_timeout,
        hard_timeout=state.hard_timeout,
        packets=state.packets,
        bytes=state.bytes,
        idle_deadline=None if state.idle_remaining is None else now + state.idle_remaining,
        hard_deadline=None if state.hard_remaining is None else now + state.hard_remaining,
        cookie=state.cookie,
        flow_id=state.flow_id,
        version=state.version,
        redirect=state.redirect,
        suppressed_since=now if state.suppressed else None,
    )


def restore_switch(snapshot: SwitchSnapshot, now: int) -> Switch:
    """A fresh switch equal to the captured one, with every deadline at ``now + remaining``."""
    if not isinstance(snapshot, SwitchSnapshot):
        raise MalformedSnapshot(f"expected SwitchSnapshot, got {type(snapshot).__name__}")
    check_snapshot(snapshot)
    if now < snapshot.capture_tick:
        raise MalformedSnapshot("cannot restore before the capture tick")
    sw = Switch(snapshot.switch_id, snapshot.config, snapshot.queues)
    for state in snapshot.rules:
        sw.add_rule(materialize(state, now))
    sw.next_rule_id = snapshot.next_rule_id
    return sw
