"""OpenFlow-like switch model: match/action rules, counters, idle and hard timeouts.

Rules whose deadline is ``d`` still match at tick ``d - 1`` and are gone at
tick ``d``.  Timer expiry can be suspended per rule (used while a switch is
being cloned); a suspended rule sees a frozen clock and its deadlines are
shifted forward by the length of the pause when the timer resumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Union

# -- matches and actions -------------------------------------------------------


@dataclass(frozen=True)
class Match:
    """``None`` in any field is a wildcard."""

    in_port: Optional[str] = None
    src_mac: Optional[int] = None
    dst_mac: Optional[int] = None

    @property
    def exact(self) -> bool:
        return None not in (self.in_port, self.src_mac, self.dst_mac)

    def key(self) -> tuple:
        return (self.in_port, self.src_mac, self.dst_mac)

    def matches(self, in_port: str, src: int, dst: int) -> bool:
        return (
            (self.in_port is None or self.in_port == in_port)
            and (self.src_mac is None or self.src_mac == src)
            and (self.dst_mac is None or self.dst_mac == dst)
        )

    def to_dict(self) -> dict[str, Any]:
        return {"in_port": self.in_port, "src_mac": self.src_mac, "dst_mac": self.dst_mac}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Match":
        return cls(d.get("in_port"), d.get("src_mac"), d.get("dst_mac"))


@dataclass(frozen=True)
class Forward:
    port: str


@dataclass(frozen=True)
class RewriteSrc:
    mac: int


@dataclass(frozen=True)
class RewriteDst:
    mac: int


@dataclass(frozen=True)
class SendToController:
    pass


@dataclass(frozen=True)
class Drop:
    pass


Action = Union[Forward, RewriteSrc, RewriteDst, SendToController, Drop]


def action_to_dict(a: Action) -> dict[str, Any]:
    if isinstance(a, Forward):
        return {"type": "forward", "port": a.port}
    if isinstance(a, RewriteSrc):
        return {"type": "rewrite_src", "mac": a.mac}
    if isinstance(a, RewriteDst):
        return {"type": "rewrite_dst", "mac": a.mac}
    if isinstance(a, SendToController):
        return {"type": "controller"}
    return {"type": "drop"}


def action_from_dict(d: Mapping[str, Any]) -> Action:
    kind = d["type"]
    if kind == "forward":
        return Forward(str(d["port"]))
    if kind == "rewrite_src":
        return RewriteSrc(int(d["mac"]))
    if kind == "rewrite_dst":
        return RewriteDst(int(d["mac"]))
    if kind == "controller":
        return SendToController()
    if kind == "drop":
        return Drop()
    raise ValueError(f"unknown action type {kind!r}")


# -- rules -----------------------------------------------------------------------


@dataclass(frozen=True)
class RuleSpec:
    """What a controller asks a switch to install (a flow-mod)."""

    priority: int
    match: Match
    actions: tuple[Action, ...]
    idle_timeout: Optional[int] = None
    hard_timeout: Optional[int] = None
    cookie: Optional[tuple[int, int]] = None
    flow_id: Optional[str] = None
    version: int = 0
    redirect: bool = False

    def __post_init__(self) -> None:
        if self.priority < 0:
            raise ValueError("priority must be >= 0")


@dataclass
class FlowRule:
    rule_id: int
    priority: int
    match: Match
    actions: tuple[Action, ...]
    install_tick: int
    idle_timeout: Optional[int] = None
    hard_timeout: Optional[int] = None
    packets: int = 0
    bytes: int = 0
    idle_deadline: Optional[int] = None
    hard_deadline: Optional[int] = None
    cookie: Optional[tuple[int, int]] = None
    flow_id: Optional[str] = None
    version: int = 0
    redirect: bool = False
    suppressed_since: Optional[int] = None

    @property
    def deadline(self) -> Optional[int]:
        ds = [d for d in (self.idle_deadline, self.hard_deadline) if d is not None]
        return min(ds) if ds else None

    def sort_key(self) -> tuple[int, int, int]:
        return (-self.priority, self.install_tick, self.rule_id)

    def remaining(self, now: int) -> tuple[Optional[int], Optional[int]]:
        clock = now if self.suppressed_since is None else self.suppressed_since
        idle = None if self.idle_deadline is None else max(0, self.idle_deadline - clock)
        hard = None if self.hard_deadline is None else max(0, self.hard_deadline - clock)
        return idle, hard

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "priority": self.priority,
            "match": self.match.to_dict(),
            "actions": [action_to_dict(a) for a in self.actions],
            "install_tick": self.install_tick,
            "idle_timeout": self.idle_timeout,
            "hard_timeout": self.hard_timeout,
            "packets": self.packets,
            "bytes": self.bytes,
            "idle_deadline": self.idle_deadline,
            "hard_deadline": self.hard_deadline,
            "cookie": list(self.cookie) if self.cookie is not None else None,
            "flow_id": self.flow_id,
            "version": self.version,
            "redirect": self.redirect,
        }


@dataclass(frozen=True)
class QueueConfig:
    queue_id: int
    max_rate: int
    pending_depth: int = 0

    def to_dict(self) -> dict[str, int]:
        return {"queue_id": self.queue_id, "max_rate": self.max_rate, "pending_depth": self.pending_depth}


# -- packets -----------------------------------------------------------------------


@dataclass
class Packet:
    """A packet in flight.  ``src``/``dst`` are the current (possibly rewritten) MACs."""

    packet_id: int
    src: int
    dst: int
    size: int
    seq_no: int
    flow: tuple  # accounting key fixed at injection
    tenant: Optional[int]
    origin: Optional[tuple]  # endpoint that emitted it
    sent_tick: int
    generator: int = 0
    kind: str = "data"  # data | echo_request | echo_reply
    in_port: str = ""
    detoured: bool = False
    tunnels: int = 0
    intended: Optional[tuple] = None  # endpoint the sender addressed, if any
    ref_tick: int = 0  # for echo replies: send tick of the request


@dataclass(frozen=True)
class ForwardDecision:
    rule: Optional[FlowRule]
    actions: tuple[Action, ...]

    @property
    def miss(self) -> bool:
        return self.rule is None


def default_config(switch_id: str) -> dict[str, Any]:
    return {"datapath_id": switch_id, "fail_mode": "secure", "miss_send_len": 128}


class Switch:
    """A flow table plus switch configuration and queues."""

    def __init__(
        self,
        switch_id: str,
        config: Optional[Mapping[str, Any]] = None,
        queues: Iterable[QueueConfig] = (),
    ) -> None:
        self.switch_id = switch_id
        self.config: dict[str, Any] = dict(config) if config is not None else default_config(switch_id)
        self.queues: list[QueueConfig] = list(queues)
        self.rules: dict[int, FlowRule] = {}
        self.next_rule_id = 1
        self._exact: dict[tuple, set[int]] = {}
        self._by_match: dict[tuple, int] = {}
        self._wild: set[int] = set()

    def __repr__(self) -> str:
        return f"Switch({self.switch_id!r}, rules={len(self.rules)})"

    # -- table maintenance ----------------------------------------------------
    def _index(self, rule: FlowRule) -> None:
        self._by_match[(rule.priority, rule.match)] = rule.rule_id
        if rule.match.exact:
            self._exact.setdefault(rule.match.key(), set()).add(rule.rule_id)
        else:
            self._wild.add(rule.rule_id)

    def _unindex(self, rule: FlowRule) -> None:
        self._by_match.pop((rule.priority, rule.match), None)
        if rule.match.exact:
            bucket = self._exact.get(rule.match.key())
            if bucket is not None:
                bucket.discard(rule.rule_id)
                if not bucket:
                    del self._exact[rule.match.key()]
        else:
            self._wild.discard(rule.rule_id)

    def add_rule(self, rule: FlowRule) -> FlowRule:
        """Insert a fully formed rule (used by restore)."""
        if rule.rule_id in self.rules:
            raise ValueError(f"duplicate rule id {rule.rule_id} on {self.switch_id}")
        self.rules[rule.rule_id] = rule
        self._index(rule)
        self.next_rule_id = max(self.next_rule_id, rule.rule_id + 1)
        return rule

    def install(self, spec: RuleSpec, now: int) -> FlowRule:
        """Flow-mod add.  An identical (priority, match) rule is modified in place,
        keeping its id and counters."""
        existing_id = self._by_match.get((spec.priority, spec.match))
        if existing_id is not None:
            rule = self.rules[existing_id]
            rule.actions = spec.actions
            rule.idle_timeout = spec.idle_timeout
            rule.hard_timeout = spec.hard_timeout
            rule.cookie = spec.cookie
            rule.flow_id = spec.flow_id
            rule.version = spec.version
            rule.redirect = spec.redirect
            clock = now if rule.suppressed_since is None else rule.suppressed_since
            rule.idle_deadline = None if spec.idle_timeout is None else clock + spec.idle_timeout
            rule.hard_deadline = None if spec.hard_timeout is None else clock + spec.hard_timeout
            return rule
        rule = FlowRule(
            rule_id=self.next_rule_id,
            priority=spec.priority,
            match=spec.match,
            actions=spec.actions,
            install_tick=now,
            idle_timeout=spec.idle_timeout,
            hard_timeout=spec.hard_timeout,
            idle_deadline=None if spec.idle_timeout is None else now + spec.idle_timeout,
            hard_deadline=None if spec.hard_timeout is None else now + spec.hard_timeout,
            cookie=spec.cookie,
            flow_id=spec.flow_id,
            version=spec.version,
            redirect=spec.redirect,
        )
        self.next_rule_id += 1
        self.rules[rule.rule_id] = rule
        self._index(rule)
        return rule

    def remove(self, rule_id: int) -> Optional[FlowRule]:
        rule = self.rules.pop(rule_id, None)
        if rule is not None:
            self._unindex(rule)
        return rule

    def find(self, priority: int, match: Match) -> Optional[FlowRule]:
        rid = self._by_match.get((priority, match))
        return None if rid is None else self.rules[rid]

    def remove_match(self, priority: int, match: Match) -> Optional[FlowRule]:
        rid = self._by_match.get((priority, match))
        return None if rid is None else self.remove(rid)

    def remove_where(self, pred) -> list[FlowRule]:
        doomed = [r for r in self.rules.values() if pred(r)]
        for r in doomed:
            self.remove(r.rule_id)
        return doomed

    def remove_cookie(self, cookie: tuple[int, int]) -> list[FlowRule]:
        return self.remove_where(lambda r: r.cookie == cookie)

    def expire(self, now: int) -> list[FlowRule]:
        expired = [
            r
            for r in self.rules.values()
            if r.suppressed_since is None and r.deadline is not None and r.deadline <= now
        ]
        for r in expired:
            self.remove(r.rule_id)
        return expired

    # -- timers ------------------------------------------------------------------
    def suppress_timers(self, rule_ids: Iterable[int], now: int) -> set[int]:
        done = set()
        for rid in rule_ids:
            rule = self.rules.get(rid)
            if rule is not None and rule.suppressed_since is None:
                rule.suppressed_since = now
                done.add(rid)
        return done

    def resume_timers(self, rule_ids: Iterable[int], now: int) -> set[int]:
        done = set()
        for rid in rule_ids:
            rule = self.rules.get(rid)
            if rule is None or rule.suppressed_since is None:
                continue
            shift = now - rule.suppressed_since
            if rule.idle_deadline is not None:
                rule.idle_deadline += shift
            if rule.hard_deadline is not None:
                rule.hard_deadline += shift
            rule.suppressed_since = None
            done.add(rid)
        return done

    # -- lookup ------------------------------------------------------------------
    def lookup(self, in_port: str, src: int, dst: int) -> Optional[FlowRule]:
        """Best matching rule, without side effects.  Call :meth:`expire` first."""
        cands = self._candidates(in_port, src, dst)
        if not cands:
            return None
        return min(cands, key=FlowRule.sort_key)

    def lookup_live(self, in_port: str, src: int, dst: int, now: int) -> Optional[FlowRule]:
        """Like :meth:`lookup`, dropping any candidate whose deadline has passed."""
        best = None
        for rule in self._candidates(in_port, src, dst):
            d = rule.deadline
            if rule.suppressed_since is None and d is not None and d <= now:
                self.remove(rule.rule_id)
                continue
            if best is None or rule.sort_key() < best.sort_key():
                best = rule
        return best

    def _candidates(self, in_port: str, src: int, dst: int) -> list[FlowRule]:
        cands = [self.rules[i] for i in sorted(self._exact.get((in_port, src, dst), ()))]
        cands.extend(
            self.rules[i] for i in sorted(self._wild) if self.rules[i].match.matches(in_port, src, dst)
        )
        return cands

    def rules_sorted(self) -> list[FlowRule]:
        return sorted(self.rules.values(), key=FlowRule.sort_key)

    def rules_for_flow(self, flow_id: str) -> list[FlowRule]:
        return [r for r in self.rules_sorted() if r.flow_id == flow_id]


def forward(switch: Switch, packet: Packet, now: int) -> ForwardDecision:
    """Match ``packet`` against ``switch``; update counters and idle deadline on a hit."""
    rule = switch.lookup_live(packet.in_port, packet.src, packet.dst, now)
    if rule is None:
        return ForwardDecision(None, ())
    rule.packets += 1
    rule.bytes += packet.size
    if rule.idle_timeout is not None:
        clock = now if rule.suppressed_since is None else rule.suppressed_since
        rule.idle_deadline = clock + rule.idle_timeout
    return ForwardDecision(rule, rule.actions)
