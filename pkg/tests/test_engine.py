from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudmesh.errors import InvalidScenario, TickLimitExceeded, UnknownEndpoint
from cloudmesh.sim import traffic
from cloudmesh.sim.engine import TICK_LIMIT_ENV, Constants, METRICS_COLUMNS
from cloudmesh.sim.scenario import build, scenario_from_dict

ACME_FRONT = {"tenant": "acme", "network": "web", "vnode": "front"}
ACME_BACK = {"tenant": "acme", "network": "web", "vnode": "back"}


def ping(count=10, interval=10, src=ACME_FRONT, dst=ACME_BACK):
    return {"type": "ping", "src": src, "dst": dst, "count": count, "interval": interval}


def stream(rate, duration, size=100):
    return {"type": "stream", "src": ACME_FRONT, "dst": ACME_BACK, "rate": rate, "duration": duration,
            "packet_size": size}


def run_doc(doc, seed=0):
    built = build(scenario_from_dict(doc), seed)
    return built, built.engine.run()


def test_same_inputs_same_trace(three_clouds):
    _, a = run_doc(three_clouds)
    _, b = run_doc(three_clouds)
    assert a.to_json() == b.to_json()
    assert len(a.trace_digest) == 64


def test_fuzz_seed_changes_trace(three_clouds):
    three_clouds["traffic"] = [{"type": "fuzz", "count": 200}]
    _, a = run_doc(three_clouds, seed=1)
    _, b = run_doc(three_clouds, seed=2)
    assert a.trace_digest != b.trace_digest


def test_no_traffic_no_counters(three_clouds):
    three_clouds["traffic"] = []
    _, m = run_doc(three_clouds)
    row = dict(zip(METRICS_COLUMNS, m.csv_row()))
    for col in ("packets_injected", "packets_delivered", "packet_in_count", "rules_installed", "events_processed"):
        assert row[col] == 0
    assert m.tunnel_count == 2 and m.setup_cost == 12


def test_steady_ping_latency_matches_path(three_clouds):
    three_clouds["traffic"] = [ping()]
    built, m = run_doc(three_clouds)
    c = Constants()
    # east-h1 -> east-gw, two tunnels via west, lab-gw -> lab-sw1 -> lab-h1
    expected = 3 * c.intra_hop_latency + 2 * (c.tunnel_latency + c.encap_overhead)
    stats = built.engine.stats(built.generators[0][1])
    assert traffic.steady_latency(stats) == expected == 107
    assert stats.received == 10 and m.packets_lost == 0


def test_one_packet_in_per_flow_direction(three_clouds):
    three_clouds["traffic"] = [ping()]
    built, m = run_doc(three_clouds)
    eng = built.engine
    front, back = eng.vms[(0, 0, "front")].vmac, eng.vms[(0, 0, "back")].vmac
    assert eng.packet_ins((0, front, back)) == 1
    assert eng.packet_ins((0, back, front)) == 1
    assert m.packet_in_count == 2


def test_ping_schedule():
    assert traffic.ping_schedule(10, 100) == [0, 100, 200, 300, 400, 500, 600, 700, 800, 900]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 200), st.integers(1, 1500))
def test_stream_schedule_totals(rate, duration, size):
    sched = traffic.stream_schedule(rate, duration, size)
    assert sum(n for _, n in sched) == (rate * duration) // size
    assert all(0 <= t < duration for t, _ in sched)


def test_stream_limited_by_tunnel(three_clouds):
    three_clouds["traffic"] = [stream(300, 400)]
    built, m = run_doc(three_clouds)
    stats = built.engine.stats(built.generators[0][1])
    assert traffic.throughput(stats, 200) == Constants().tunnel_bandwidth
    assert m.packets_delivered == 1200 and m.conservation_violations == 0


def test_tenant_link_share_caps_throughput(three_clouds):
    three_clouds["constants"] = {"tenant_link_share": 50}
    three_clouds["traffic"] = [stream(300, 400)]
    built, _ = run_doc(three_clouds)
    assert traffic.throughput(built.engine.stats(built.generators[0][1]), 200) == 50


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 400))
def test_conservation_under_fuzz(seed, count):
    from cloudmesh.bench import workloads

    doc = workloads.bundled_scenario("three_clouds")
    doc["traffic"] = [{"type": "fuzz", "count": count}, stream(150, 50)]
    built, m = run_doc(doc, seed)
    assert m.conservation_violations == 0
    assert built.engine.audit()
    assert m.cross_tenant_deliveries == 0 and m.misdeliveries == 0


def test_tick_limit_from_environment(three_clouds, monkeypatch):
    monkeypatch.setenv(TICK_LIMIT_ENV, "500")
    three_clouds["traffic"] = [ping(count=10, interval=100)]
    with pytest.raises(TickLimitExceeded):
        run_doc(three_clouds)


def test_bad_tick_limit_value(three_clouds, monkeypatch):
    monkeypatch.setenv(TICK_LIMIT_ENV, "soon")
    with pytest.raises(InvalidScenario):
        run_doc(three_clouds)


def test_unknown_constant_rejected(three_clouds):
    three_clouds["constants"] = {"warp_factor": 9}
    with pytest.raises(InvalidScenario):
        scenario_from_dict(three_clouds)


def test_ping_across_networks_rejected(three_clouds):
    three_clouds["traffic"] = [ping(dst={"tenant": "globex", "network": "web", "vnode": "back"})]
    with pytest.raises(InvalidScenario):
        scenario_from_dict(three_clouds)
    three_clouds["traffic"] = []
    eng = build(scenario_from_dict(three_clouds)).engine
    with pytest.raises(UnknownEndpoint):
        traffic.ping_generator(eng, (0, 0, "front"), (1, 0, "back"), 1, 1)


def test_teardown_then_replay_raises_packet_ins_again(three_clouds):
    three_clouds["traffic"] = [ping(count=3)]
    built, m = run_doc(three_clouds)
    eng = built.engine
    first = m.packet_in_count
    eng.hv.teardown(0, 0)
    assert not any(r.cookie and r.cookie[0] == 0 for sw in eng.switches.values() for r in sw.rules.values())
    vn = eng.add_network(0, scenario_from_dict(three_clouds).networks[0].spec)
    start = eng.now + 1
    traffic.ping_generator(eng, (0, vn, "front"), (0, vn, "back"), 3, 10, start)
    m2 = eng.run()
    assert m2.packet_in_count == first + 2
