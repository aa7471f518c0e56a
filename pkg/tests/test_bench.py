from __future__ import annotations

import csv
import io
import json

import pytest

import cloudmesh.hypervisor.core as hv_core
from cloudmesh.bench import cli
from cloudmesh.bench.experiments import (
    control_bench,
    data_bench,
    fit_polynomial,
    isolation_run,
    setup_bench,
    snapshot_check,
)
from cloudmesh.bench.output import render_csv, render_json, sidecar
from cloudmesh.bench.spec import BenchSpec, Experiment, validate_spec
from cloudmesh.errors import InvalidSpec
from cloudmesh.fabric import CostModel
from cloudmesh.sim.engine import TICK_LIMIT_ENV

# -- specs ----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "spec",
    [
        BenchSpec(Experiment.SETUP_TIME, {"clouds": (1, 2)}),
        BenchSpec(Experiment.SETUP_TIME, {"fabric": ("ring",)}),
        BenchSpec(Experiment.SETUP_TIME, {"clouds": ()}),
        BenchSpec(Experiment.CONTROL_OVERHEAD, {"switches": (5,)}),
        BenchSpec(Experiment.CONTROL_OVERHEAD, repetitions=0),
        BenchSpec(Experiment.SNAPSHOT_ROUND_TRIP, {"switches": (True,)}),
        BenchSpec(Experiment.ISOLATION_FUZZ, seed="7"),
        BenchSpec("SetupTime"),
    ],
)
def test_invalid_specs(spec):
    with pytest.raises(InvalidSpec):
        validate_spec(spec)


def test_defaults_are_valid():
    for exp in Experiment:
        validate_spec(BenchSpec(exp))


# -- output ------------------------------------------------------------------------------


def test_csv_rendering():
    text = render_csv(("a", "b", "c", "d"), [{"a": 1, "b": 0.1 + 0.2, "c": True, "d": None}])
    assert text == "a,b,c,d\n1,0.3,true,\n"


def test_json_rendering_is_canonical():
    assert render_json({"b": 1, "a": [2]}) == render_json({"a": [2], "b": 1})
    assert render_json({}).endswith("\n")


def test_sidecar_path():
    assert str(sidecar("runs/setup.csv", ".json")) == "runs/setup.json"


# -- experiments ---------------------------------------------------------------------------


def test_fit_recovers_polynomial():
    xs = list(range(2, 20))
    fit = fit_polynomial(xs, [3 * x * x - 2 * x + 7 for x in xs], 2)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.coefficients == pytest.approx((3, -2, 7))


def test_setup_bench_rows_and_fits():
    res = setup_bench(BenchSpec(Experiment.SETUP_TIME, {"clouds": (2, 3, 4, 5, 6)}))
    cost = {(r["fabric_kind"], r["n_clouds"]): r["setup_cost"] for r in res.rows}
    # unit weights, fixed 5 plus 1 per unit weight
    for n in range(2, 7):
        assert cost[("mst", n)] == 6 * (n - 1)
        assert cost[("mesh", n)] == 6 * n * (n - 1) // 2
    assert res.summary["fits"]["mst"]["coefficients"] == pytest.approx((6, -6), abs=1e-9)
    assert res.passed


def test_setup_bench_custom_cost_model():
    res = setup_bench(BenchSpec(Experiment.SETUP_TIME, {"clouds": (4,), "fabric": ("mst",)}), CostModel(0, 2))
    assert [r["setup_cost"] for r in res.rows] == [6]


def test_control_bench_small():
    res = control_bench(BenchSpec(Experiment.CONTROL_OVERHEAD, {"networks": (5, 50)}))
    virt = {r["n_virtual_networks"]: r["mean_steps_virtualized"] for r in res.rows}
    assert virt[5] == virt[50]
    assert res.summary["baseline_translation_steps"] == 0


def test_data_bench_mesh_has_no_two_tunnel_path():
    res = data_bench(BenchSpec(Experiment.DATA_OVERHEAD), fabric="mesh")
    dec = res.summary["decomposition"]
    assert all(d["measured_deltas"] == [d["closed_form"]] for d in dec.values())
    assert max(d["tunnels"] for d in dec.values()) == 1


def test_snapshot_check_small():
    res = snapshot_check(BenchSpec(Experiment.SNAPSHOT_ROUND_TRIP, {"switches": (20,)}))
    assert len(res.rows) == 20 and res.passed


def test_isolation_run_small():
    out = isolation_run(3, 1000, 4)
    assert out["cross_tenant_deliveries"] == 0 and out["passed"]
    assert out["lldp_substrate_leaks"] == 0 and out["topology_leaks"] == 0
    assert out["tenants"] == 4 and out["lldp_probes_intercepted"] > 0
    assert out["packets_addressed"] == out["deliveries_on_target"]


# -- command line ----------------------------------------------------------------------------


def test_cli_setup_bench_writes_csv_and_sidecar(tmp_path):
    out = tmp_path / "runs" / "setup.csv"
    assert cli.main(["setup-bench", "--clouds", "2-5", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 8
    summary = json.loads(out.with_suffix(".json").read_text())
    assert summary["experiment"] == "SetupTime" and summary["passed"] is True


def test_cli_stdout_when_no_out(capsys):
    assert cli.main(["setup-bench", "--clouds", "3", "--fabric", "mesh"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and "mesh" in lines[1]


def test_cli_invalid_spec_writes_nothing(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert cli.main(["setup-bench", "--clouds", "1-3", "--out", str(out)]) == 2
    assert not out.exists() and not out.with_suffix(".json").exists()
    assert "InvalidSpec" in capsys.readouterr().err


def test_cli_bad_scenario_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"clouds\": 3}")
    assert cli.main(["migrate-demo", "--scenario", str(bad), "--out", str(tmp_path / "m.csv")]) == 2
    assert not (tmp_path / "m.csv").exists()


def test_cli_tick_limit_override(tmp_path, monkeypatch):
    monkeypatch.setenv(TICK_LIMIT_ENV, "500")
    assert cli.main(["migrate-demo", "--out", str(tmp_path / "m.csv")]) == 2
    monkeypatch.setenv(TICK_LIMIT_ENV, "lots")
    assert cli.main(["setup-bench", "--clouds", "2"]) == 2


def test_cli_migrate_demo_timeline(tmp_path, capsys):
    out = tmp_path / "mig.csv"
    assert cli.main(["migrate-demo", "--out", str(out)]) == 0
    err = capsys.readouterr().err
    for step in ("Clone", "DualReplica", "SerializeUpdates", "MoveVm", "Cutover", "Decommission"):
        assert step in err
    header = out.read_text().splitlines()[0]
    assert header == "vm,step,switch,start,end"


def test_cli_migrate_demo_fault_and_negative_control(tmp_path):
    assert cli.main(["migrate-demo", "--fault", "cutover", "--out", str(tmp_path / "f.csv")]) == 0
    assert json.loads((tmp_path / "f.json").read_text())["summary"]["reports"][0]["rollback_equal"] is True
    assert cli.main(["migrate-demo", "--no-serialize", "--out", str(tmp_path / "n.csv")]) == 1


def test_cli_report_subset(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert cli.main(["report", "--criteria", "1,3-4", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert [c["number"] for c in doc["criteria"]] == [1, 3, 4]
    assert doc["all_passed"] is True
    assert all("measured" in c and "threshold" in c for c in doc["criteria"])
    assert capsys.readouterr().out.count("[PASS]") == 3


def test_cli_report_unknown_criterion():
    assert cli.main(["report", "--criteria", "12"]) == 2


def test_report_fails_when_isolation_is_broken(monkeypatch, tmp_path, capsys):
    """Negative control: a corrupted tenant decoder must fail the isolation criterion."""
    real = hv_core.decode_mac

    def broken(mac):
        tenant, local = real(mac)
        return (tenant + 1) % 3, local

    monkeypatch.setattr(hv_core, "decode_mac", broken)
    out = tmp_path / "report.json"
    assert cli.main(["report", "--criteria", "5", "--out", str(out)]) == 1
    doc = json.loads(out.read_text())
    assert doc["failed"] == ["isolation fuzz"]
    assert "isolation fuzz" in capsys.readouterr().err
