from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from cloudmesh.openflow import Drop, Forward, Match, Packet, RuleSpec, Switch, forward


def pkt(src=1, dst=2, port="p1", size=100):
    return Packet(0, src, dst, size, 0, (src, dst), None, None, 0, in_port=port)


def test_priority_then_install_order():
    sw = Switch("s")
    sw.install(RuleSpec(1, Match(), (Forward("low"),)), 0)
    sw.install(RuleSpec(5, Match(src_mac=1), (Forward("first"),)), 1)
    sw.install(RuleSpec(5, Match(dst_mac=2), (Forward("second"),)), 2)
    assert forward(sw, pkt(), 3).actions == (Forward("first"),)
    assert forward(sw, pkt(src=9), 3).actions == (Forward("second"),)
    assert forward(sw, pkt(src=9, dst=9), 3).actions == (Forward("low"),)


def test_miss_and_counters():
    sw = Switch("s")
    assert forward(sw, pkt(), 0).miss
    r = sw.install(RuleSpec(0, Match("p1", 1, 2), (Drop(),)), 0)
    forward(sw, pkt(size=60), 1)
    forward(sw, pkt(size=40), 2)
    assert (r.packets, r.bytes) == (2, 100)


def test_reinstall_same_match_keeps_id_and_counters():
    sw = Switch("s")
    r = sw.install(RuleSpec(3, Match("p1", 1, 2), (Drop(),), idle_timeout=10), 0)
    forward(sw, pkt(), 1)
    again = sw.install(RuleSpec(3, Match("p1", 1, 2), (Forward("x"),), idle_timeout=10), 5)
    assert again.rule_id == r.rule_id and again.packets == 1 and again.idle_deadline == 15


def test_idle_refresh_on_hit():
    sw = Switch("s")
    sw.install(RuleSpec(0, Match(), (Drop(),), idle_timeout=10), 0)
    assert not forward(sw, pkt(), 9).miss
    assert not forward(sw, pkt(), 18).miss
    assert forward(sw, pkt(), 28).miss


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5_000), st.booleans())
def test_timeout_boundary(install, timeout, idle):
    """A rule with deadline d matches at d - 1 and is gone at d."""
    kw = {"idle_timeout": timeout} if idle else {"hard_timeout": timeout}
    deadline = install + timeout

    sw = Switch("s")
    sw.install(RuleSpec(0, Match(), (Drop(),), **kw), install)
    assert not forward(sw, pkt(), deadline - 1).miss

    sw = Switch("s")
    sw.install(RuleSpec(0, Match(), (Drop(),), **kw), install)
    assert forward(sw, pkt(), deadline).miss
    assert sw.expire(deadline) == [] and not sw.rules


def test_hard_timeout_not_refreshed():
    sw = Switch("s")
    sw.install(RuleSpec(0, Match(), (Drop(),), idle_timeout=5, hard_timeout=12), 0)
    for t in (4, 8, 11):
        assert not forward(sw, pkt(), t).miss
    assert forward(sw, pkt(), 12).miss


def test_suppressed_timer_freezes_and_shifts():
    sw = Switch("s")
    r = sw.install(RuleSpec(0, Match(), (Drop(),), hard_timeout=10), 0)
    sw.suppress_timers([r.rule_id], 4)
    assert sw.expire(100) == []
    assert r.remaining(100) == (None, 6)
    sw.resume_timers([r.rule_id], 50)
    assert r.hard_deadline == 56
    assert not forward(sw, pkt(), 55).miss and forward(sw, pkt(), 56).miss


def test_remove_cookie():
    sw = Switch("s")
    sw.install(RuleSpec(0, Match(src_mac=1), (Drop(),), cookie=(1, 0)), 0)
    sw.install(RuleSpec(0, Match(src_mac=2), (Drop(),), cookie=(2, 0)), 0)
    assert len(sw.remove_cookie((1, 0))) == 1
    assert [r.cookie for r in sw.rules.values()] == [(2, 0)]
