import json
import shutil

import pytest

from modelsink.cli import main as cli_main
from modelsink.report import render_report, write_report
from modelsink.scenario import ScenarioError, load_scenario, validate_scenario
from modelsink.sim import run_simulated_path

from conftest import FIXTURES

STROKE = FIXTURES / "stroke" / "scenario.toml"
FAULTS = FIXTURES / "stroke" / "scenario_faults.toml"
SEPSIS = FIXTURES / "sepsis" / "scenario.toml"


# -- validation --------------------------------------------------------------

def test_fixture_scenarios_validate():
    for path in (STROKE, FAULTS, SEPSIS):
        loaded = validate_scenario(load_scenario(path))
        assert loaded.report.ok, loaded.report.summary()


def test_local_only_event_warns_no_route():
    loaded = validate_scenario(load_scenario(STROKE))
    assert any("NoRoute" in w and "ev_ct_ordered" in w
               for w in loaded.report.warnings)


def test_unknown_node_is_line_anchored_error(tmp_path):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "scenario.toml"
    text = scen.read_text().replace('node = "rural"', 'node = "nowhere"', 1)
    scen.write_text(text)
    loaded = validate_scenario(load_scenario(scen))
    assert not loaded.report.ok
    assert any("unknown node 'nowhere'" in e and e.startswith("line ")
               for e in loaded.report.errors)


def test_unknown_event_in_model_is_error(tmp_path):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "scenario.toml"
    text = scen.read_text().replace('event = "ev_patient_arrived"', 'event = "ev_ghost"')
    scen.write_text(text)
    loaded = validate_scenario(load_scenario(scen))
    assert any("ev_ghost" in e for e in loaded.report.errors)


def test_script_time_beyond_duration_is_error(tmp_path):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "scenario.toml"
    text = scen.read_text().replace("t_ms = 4013", "t_ms = 99999")
    scen.write_text(text)
    loaded = validate_scenario(load_scenario(scen))
    assert any("exceeds duration" in e for e in loaded.report.errors)


def test_unknown_scenario_keys_rejected(tmp_path):
    scen = tmp_path / "s.toml"
    scen.write_text('duration_ms = 100\nmapping = "m.toml"\nspeed = 3\n')
    with pytest.raises(ScenarioError, match="unknown key 'speed'"):
        load_scenario(scen)


def test_bad_fault_kind_rejected(tmp_path):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "scenario_faults.toml"
    scen.write_text(scen.read_text().replace('kind = "drop_all"', 'kind = "explode"'))
    with pytest.raises(ScenarioError, match="explode|kind"):
        load_scenario(scen)


# -- simulated runs -----------------------------------------------------------

def test_stroke_pipeline_reaches_tpa_therapy():
    report = run_simulated_path(STROKE, seed=1)
    assert not report["meta"]["incomplete"]
    tpa = [e for e in report["per_event"] if e["event"] == "ev_tpa_recommended"]
    assert tpa[0]["deliveries"][0]["status"] == "applied"
    # propagation happens by the target's next poll tick
    assert tpa[0]["deliveries"][0]["latency_ms"] <= 100
    assert report["conservation"]["balanced"]


def test_drop_all_forces_fallback_within_bound():
    report = run_simulated_path(FAULTS, seed=1)
    (fb,) = report["fallbacks"]
    assert fb["cause"] == "comm_down"
    assert fb["from"] == "tPA_Therapy"
    assert fb["to"] == "GeneralAssessment"
    # threshold 3 x poll 100ms + supervisor 100ms
    assert fb["since_fault_ms"] <= 3 * 100 + 100


def test_restore_resumes_propagation_within_one_poll():
    report = run_simulated_path(FAULTS, seed=1)
    last = report["per_event"][-1]
    assert last["event"] == "ev_status_update"
    (delivery,) = last["deliveries"]
    assert delivery["status"] == "applied"
    assert delivery["latency_ms"] <= 100


def test_sepsis_shock_fans_out_to_both_organs():
    report = run_simulated_path(SEPSIS, seed=1)
    shock = [e for e in report["per_event"] if e["event"] == "ev_septic_shock"][0]
    statuses = {d["target"][-2:]: d["status"] for d in shock["deliveries"]}
    assert statuses == {"e1": "applied", "f1": "applied"}
    assert report["conservation"]["balanced"]


def test_empty_script_only_ping_traffic(tmp_path):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "quiet.toml"
    scen.write_text("""
duration_ms = 5000
clock = "simulated"
mapping = "mapping.toml"

[hub]
key = "000102030405060708090a0b0c0d0e0f"

[[node]]
name = "rural"
models = ["rural.model.toml"]
poll_interval_ms = 100

[[node]]
name = "center"
models = ["center.model.toml"]
poll_interval_ms = 100
""")
    report = run_simulated_path(scen, seed=0)
    hub = report["counters"]["hub"]
    assert hub["events_normalized"] == 0
    assert hub["unknown_events"] == 0
    assert report["latency_ms"]["count"] == 0
    assert hub["frames_in"] > 0  # pings and polls still flow
    for counters in report["counters"]["agents"].values():
        assert counters["pings_ok"] > 0
        assert counters["polls_ok"] > 0


def test_equal_seeds_produce_byte_identical_reports():
    for path in (STROKE, FAULTS, SEPSIS):
        a = render_report(run_simulated_path(path, seed=42))
        b = render_report(run_simulated_path(path, seed=42))
        assert a == b, path


def test_runtime_failure_yields_partial_report_flagged_incomplete(monkeypatch):
    from modelsink.hub import HubCore
    calls = {"n": 0}
    original = HubCore.serve_poll

    def flaky(self, uid, batch_limit_override=None):
        calls["n"] += 1
        if calls["n"] > 5:
            raise RuntimeError("injected harness failure")
        return original(self, uid, batch_limit_override)

    monkeypatch.setattr(HubCore, "serve_poll", flaky)
    report = run_simulated_path(STROKE, seed=0)
    assert report["meta"]["incomplete"] is True
    assert "injected harness failure" in report["meta"]["error"]
    # partial data is still present: the polls before the injected failure
    assert report["counters"]["hub"]["frames_out"] == 5


def test_invalid_scenario_refuses_to_run(tmp_path):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "scenario.toml"
    scen.write_text(scen.read_text().replace('node = "rural"', 'node = "ghost"', 1))
    with pytest.raises(ScenarioError):
        run_simulated_path(scen, seed=0)


def test_report_files_written(tmp_path):
    report = run_simulated_path(STROKE, seed=2)
    path = write_report(report, tmp_path)
    assert path.name == "report.json"
    assert json.loads(path.read_text())["meta"]["seed"] == 2
    for name in ("latencies.csv", "queue_depth.csv", "counters.csv"):
        assert (tmp_path / name).exists()
    lat_rows = (tmp_path / "latencies.csv").read_text().strip().splitlines()
    assert len(lat_rows) == 1 + report["latency_ms"]["count"]


# -- CLI ----------------------------------------------------------------------

def test_cli_validate_ok(capsys):
    assert cli_main(["validate", str(STROKE)]) == 0
    assert "OK" in capsys.readouterr().out


def test_cli_validate_failure(tmp_path, capsys):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "scenario.toml"
    scen.write_text(scen.read_text().replace('node = "rural"', 'node = "ghost"', 1))
    assert cli_main(["validate", str(scen)]) == 1


def test_cli_run_and_plot(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli_main(["run", str(STROKE), "--seed", "5", "--out", str(out)]) == 0
    assert (out / "report.json").exists()
    plot_dir = tmp_path / "plots"
    assert cli_main(["plot", str(out / "report.json"), "--out", str(plot_dir)]) == 0
    assert (plot_dir / "latencies.csv").exists()


def test_cli_duration_parsing():
    from modelsink.cli import parse_duration_ms
    assert parse_duration_ms("100ms") == 100
    assert parse_duration_ms("1s") == 1000
    assert parse_duration_ms("5s") == 5000
    assert parse_duration_ms("300s") == 300000
    assert parse_duration_ms("2m") == 120000
    assert parse_duration_ms("250") == 250


def test_cli_run_real_clock_scenario(tmp_path):
    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    scen = tmp_path / "stroke" / "tiny_real.toml"
    scen.write_text("""
duration_ms = 1500
clock = "real"
mapping = "mapping.toml"

[hub]
key = "000102030405060708090a0b0c0d0e0f"

[[node]]
name = "rural"
models = ["rural.model.toml"]
poll_interval_ms = 100

[[node]]
name = "center"
models = ["center.model.toml"]
poll_interval_ms = 100

[[script]]
t_ms = 310
node = "rural"
model = "ab0000000000000000000000000000a1"
event = "ev_patient_arrived"
""")
    out = tmp_path / "out"
    assert cli_main(["run", str(scen), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["meta"]["clock"] == "real"
    assert report["counters"]["pipeline"]["delivery_applied"] == 1


def test_cli_bench_smoke(tmp_path):
    out = tmp_path / "bench"
    assert cli_main(["bench", "--clients", "1", "--poll", "100ms",
                     "--duration", "1200ms", "--reps", "1",
                     "--out", str(out)]) == 0
    report = json.loads((out / "bench.json").read_text())
    assert report["meta"]["clients"] == 1
    assert report["aggregate"]["all_conserved"]


def test_cli_agent_port_conflict(tmp_path):
    import socket

    shutil.copytree(FIXTURES / "stroke", tmp_path / "stroke")
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    port = blocker.getsockname()[1]
    config = tmp_path / "agent.toml"
    config.write_text(f"""
[agent]
name = "center"
key = "000102030405060708090a0b0c0d0e0f"
models = ["stroke/center.model.toml"]
hub_push = "127.0.0.1:1"
hub_poll = "127.0.0.1:1"
api_port = {port}
""")
    try:
        assert cli_main(["agent", "--config", str(config)]) == 1
    finally:
        blocker.close()
