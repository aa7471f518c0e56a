from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudmesh.bench.experiments import check_round_trip, fuzz_switch, random_trace
from cloudmesh.errors import MalformedSnapshot
from cloudmesh.openflow import Drop, Forward, Match, QueueConfig, RuleSpec, Switch
from cloudmesh.migration.snapshot import SwitchSnapshot, restore_switch, snapshot_switch


def test_empty_switch_round_trip():
    sw = Switch("s1", queues=[QueueConfig(0, 100)])
    snap = snapshot_switch(sw, 7)
    assert snap.rules == ()
    back = restore_switch(SwitchSnapshot.from_json(snap.to_json()), 7)
    assert back.rules == {} and back.config == sw.config and back.queues == sw.queues


def test_remaining_idle_timeout():
    sw = Switch("s1")
    sw.install(RuleSpec(0, Match(), (Drop(),), idle_timeout=60), 0)
    (state,) = snapshot_switch(sw, 0).rules
    assert state.idle_remaining == 60 and state.hard_remaining is None


def test_delayed_restore_shifts_deadlines():
    sw = Switch("s1")
    sw.install(RuleSpec(0, Match(), (Drop(),), idle_timeout=60, hard_timeout=100), 0)
    snap = snapshot_switch(sw, 10)
    later = restore_switch(snap, 510)
    (rule,) = later.rules.values()
    assert (rule.idle_deadline, rule.hard_deadline) == (560, 600)
    assert rule.install_tick == 500


def test_expired_rules_are_not_captured():
    sw = Switch("s1")
    sw.install(RuleSpec(0, Match(src_mac=1), (Drop(),), hard_timeout=5), 0)
    sw.install(RuleSpec(0, Match(src_mac=2), (Forward("p"),)), 0)
    assert len(snapshot_switch(sw, 5).rules) == 1


def test_canonical_json_order():
    sw = Switch("s1")
    sw.install(RuleSpec(1, Match(src_mac=1), (Drop(),)), 0)
    sw.install(RuleSpec(9, Match(src_mac=2), (Drop(),)), 3)
    sw.install(RuleSpec(9, Match(src_mac=3), (Drop(),)), 1)
    doc = json.loads(snapshot_switch(sw, 10).to_json())
    assert [(r["priority"], r["match"]["src_mac"]) for r in doc["rules"]] == [(9, 3), (9, 2), (1, 1)]


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("rules"),
        lambda d: d["rules"][0].update(idle_remaining=-1),
        lambda d: d["rules"][0].update(idle_timeout=None),
        lambda d: d.update(next_rule_id=1),
        lambda d: d["rules"].append(dict(d["rules"][0])),
        lambda d: d["rules"].reverse(),
    ],
)
def test_malformed_snapshots_rejected(mutate):
    sw = Switch("s1")
    sw.install(RuleSpec(5, Match(src_mac=1), (Drop(),), idle_timeout=10), 0)
    sw.install(RuleSpec(1, Match(src_mac=2), (Drop(),), idle_timeout=10), 0)
    doc = snapshot_switch(sw, 3).to_dict()
    mutate(doc)
    with pytest.raises(MalformedSnapshot):
        SwitchSnapshot.from_dict(doc)


def test_garbage_json_and_wrong_type():
    with pytest.raises(MalformedSnapshot):
        SwitchSnapshot.from_json("{not json")
    with pytest.raises(MalformedSnapshot):
        restore_switch({"switch_id": "x"}, 0)


def test_restore_before_capture_rejected():
    snap = snapshot_switch(Switch("s"), 10)
    with pytest.raises(MalformedSnapshot):
        restore_switch(snap, 9)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 5_000))
def test_round_trip_property(seed, delay):
    rng = random.Random(seed)
    sw, now = fuzz_switch(rng, 0, max_rules=30)
    result = check_round_trip(sw, now, delay, random_trace(rng))
    assert result.field_equal
    assert result.json_equal
    assert result.replay_equal
    assert result.shift_exact
