"""Acceptance criteria, each checked at its stated threshold.

Every test prints one ``[PASS]``/``[FAIL]`` line; the lines are also repeated
in the terminal summary at the end of the run.
"""

from __future__ import annotations

import pytest

from cloudmesh.bench.acceptance import CRITERIA, Suite, evaluate

LINES: list[str] = []


@pytest.fixture(scope="module")
def suite() -> Suite:
    return Suite(seed=0)


def check(number: int, suite: Suite):
    res = evaluate(number, suite)
    line = res.line()
    LINES.append(line)
    print(line)
    return res


def within_runtime(res) -> None:
    if "runtime_s" in res.threshold:
        assert res.measured["within_runtime"], res.detail


def test_01_tunnel_minimization(suite):
    res = check(1, suite)
    assert res.measured["points_checked"] == 62 and res.measured["mismatches"] == 0
    within_runtime(res)
    assert res.passed


def test_02_setup_scaling(suite):
    res = check(2, suite)
    m = res.measured
    assert m["r2_mst"] >= 0.999 and m["r2_mesh"] >= 0.999
    assert m["mesh_leading_coefficient"] > 0 and m["mesh_above_mst_from_3"]
    within_runtime(res)
    assert res.passed


def test_03_mst_optimality(suite):
    res = check(3, suite)
    assert res.measured == {"trials": 100, "mismatches": 0, "within_runtime": True}
    assert res.passed


def test_04_tenant_capacity(suite):
    res = check(4, suite)
    m = res.measured
    assert m["admitted"] == 65536 and m["error_after_limit"] and m["ratio_vs_vlan"] >= 10
    assert res.passed


def test_05_isolation(suite):
    res = check(5, suite)
    m = res.measured
    assert m["seeds"] >= 5
    assert m["cross_tenant_deliveries"] == 0
    assert m["substrate_identifiers_exposed"] == 0
    assert m["misdeliveries"] == 0 and m["addressed_not_delivered"] == 0
    within_runtime(res)
    assert res.passed


def test_06_reactive_control(suite):
    res = check(6, suite)
    m = res.measured
    assert m["rules_left_before_second_burst"] == 0
    assert m["packet_ins_before_expiry"] == [1, 1] and m["packet_ins_after_expiry"] == [1, 1]
    assert res.passed


def test_07_control_constancy(suite):
    res = check(7, suite)
    m = res.measured
    assert m["relative_change"] <= 0.10
    assert m["baseline_translation_steps"] == 0
    within_runtime(res)
    assert res.passed


def test_08_data_overhead_decomposition(suite):
    res = check(8, suite)
    for path, got in res.measured.items():
        expected = res.threshold[path]["expected_delta"]
        assert got["measured_deltas"] == [expected], path
    assert res.measured["intra"]["measured_deltas"] == [0]
    assert res.passed


def test_09_snapshot_fidelity(suite):
    res = check(9, suite)
    m = res.measured
    assert m["switches"] >= 500
    for key in ("field_equal", "json_equal", "replay_equal", "shift_exact"):
        assert m[key] == m["switches"], key
    within_runtime(res)
    assert res.passed


def test_10_migration_transparency(suite):
    res = check(10, suite)
    m = res.measured
    assert m["completed"] and m["all_pings_answered"]
    assert m["packets_lost"] == 0 and m["per_flow_order_violations"] == 0
    assert m["stale_rule_inconsistencies"] == 0
    assert m["barrier_timeout_rolled_back"] and m["rollback_state_equal"] is True
    within_runtime(res)
    assert res.passed


def test_11_determinism(suite):
    res = check(11, suite)
    assert res.measured["differing"] == [] and res.measured["artifacts_compared"] == 12
    assert res.passed


def test_every_criterion_has_a_test():
    numbers = {int(name.split("_")[1]) for name in globals() if name.startswith("test_") and name[5:7].isdigit()}
    assert numbers == {c[0] for c in CRITERIA}
