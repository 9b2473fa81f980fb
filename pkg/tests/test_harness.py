import json
import math

import pytest
import requests
from click.testing import CliRunner

from hawk.cli import main as cli_main
from hawk.harness.demo import demo_up, wait_settled
from hawk.harness.loadgen import (
    LoadProfile,
    build_payload,
    bench_overhead,
    overhead_report_from_samples,
    percentile,
    run_load,
    summarize_latencies,
)
from hawk.harness.scenario import ScenarioError, load_scenario
from hawk.harness.topology import (
    CyclicTopology,
    decode_topology,
    default_topology,
    render_template,
)
from hawk.httpkit import HttpServerHandle, Response, Router, free_port
from hawk.model import HawkError


class TestTopology:
    def test_default_topology_is_acyclic(self):
        default_topology().validate()

    def test_cycle_rejected(self):
        data = {
            "services": [
                {"name": "a", "endpoints": [
                    {"method": "GET", "path": "/x",
                     "downstreamCalls": [{"service": "b", "path": "/y"}]}]},
                {"name": "b", "endpoints": [
                    {"method": "GET", "path": "/y",
                     "downstreamCalls": [{"service": "a", "path": "/x"}]}]},
            ]
        }
        with pytest.raises(CyclicTopology):
            decode_topology(data)

    def test_endpoint_pattern_matching(self):
        topology = default_topology()
        endpoint = topology.endpoint("user", "GET", "/users/1001")
        assert endpoint.path == "/users/{id}"
        with pytest.raises(HawkError):
            topology.endpoint("user", "GET", "/nope")

    def test_render_template_substitutes_sentinel(self):
        template = {"email": "{{sentinel}}", "nested": [{"note": "x {{sentinel}} y"}]}
        rendered = render_template(template, "CANARY-123")
        assert rendered == {"email": "CANARY-123", "nested": [{"note": "x CANARY-123 y"}]}


class TestLoadProfile:
    def test_total_requests_arithmetic(self):
        assert LoadProfile(100, 10).total_requests == 1000
        assert LoadProfile(2.5, 2).total_requests == 5

    @pytest.mark.parametrize("kw", [
        {"requests_per_second": 0, "duration_seconds": 1},
        {"requests_per_second": 10, "duration_seconds": 0},
        {"requests_per_second": 10, "duration_seconds": 1, "payload_bytes": 0},
    ])
    def test_nonpositive_values_rejected(self, kw):
        with pytest.raises(HawkError):
            LoadProfile(**kw)

    def test_build_payload_size_and_shape(self):
        body = build_payload(1024)
        assert abs(len(body) - 1024) <= 1
        document = json.loads(body)
        assert document["user"]["email"] == "SENTINEL"


class TestPercentiles:
    def test_nearest_rank(self):
        values = [float(v) for v in range(1, 101)]
        assert percentile(values, 0.50) == 50
        assert percentile(values, 0.99) == 99
        assert percentile(values, 1.0) == 100

    def test_single_sample(self):
        assert summarize_latencies([7.0]) == {"p50": 7.0, "p90": 7.0, "p99": 7.0}

    def test_empty_is_nan(self):
        assert math.isnan(percentile([], 0.5))


@pytest.fixture
def stub_target():
    router = Router()
    router.add("POST", "/checkout", lambda _r: Response.json({"ok": True}))
    server = HttpServerHandle(router).start()
    yield server
    server.stop()


class TestRunLoad:
    def test_sends_scheduled_request_count(self, stub_target):
        profile = LoadProfile(200, 0.5, concurrent_clients=8)
        report = run_load(stub_target.url + "/checkout", profile)
        assert report.sent == 100
        assert report.succeeded == 100
        assert report.failed == 0
        assert report.latencies_ms["p50"] > 0

    def test_target_down_counts_failures(self):
        profile = LoadProfile(100, 0.2, concurrent_clients=4)
        report = run_load(f"http://127.0.0.1:{free_port()}/checkout", profile)
        assert report.succeeded == 0
        assert report.failed == report.sent == 20


class TestOverheadReport:
    def test_report_recomputes_identically_from_samples(self, stub_target, tmp_path):
        samples_file = str(tmp_path / "samples.json")
        profile = LoadProfile(100, 0.3, concurrent_clients=4)
        report = bench_overhead(
            stub_target.url + "/checkout", stub_target.url + "/checkout",
            profile, samples_file,
        )
        recomputed = overhead_report_from_samples(samples_file)
        for key in ("direct", "proxied", "ratio"):
            assert report[key] == recomputed[key]
        assert report["samplesFile"] == samples_file


class TestScenarioLoader:
    def test_malformed_json_reports_line(self, tmp_path):
        scenario_file = tmp_path / "bad.json"
        scenario_file.write_text('{\n "name": "x",\n broken\n}')
        with pytest.raises(ScenarioError, match="line 3"):
            load_scenario(str(scenario_file))

    def test_missing_sections_rejected(self, tmp_path):
        scenario_file = tmp_path / "incomplete.json"
        scenario_file.write_text('{"name": "x"}')
        with pytest.raises(ScenarioError):
            load_scenario(str(scenario_file))

    def test_loads_full_scenario(self):
        import pathlib

        fixture = pathlib.Path(__file__).parent / "scenarios" / "promote.json"
        scenario = load_scenario(str(fixture))
        assert scenario.service_name == "profile"
        assert scenario.canary.rules
        assert scenario.mappings


class TestDemoStack:
    def test_demo_smoke(self, tmp_path):
        handle = demo_up(spool_dir=str(tmp_path / "spool"))
        try:
            response = requests.post(
                handle.entry_url + "/checkout",
                json={"user": {"id": "u-1", "email": "SENTINEL"}},
                timeout=10,
            )
            assert response.status_code == 200
            count = wait_settled(handle.core_url, handle.collector_url)
            # one checkout fans out to orders, payment, user: 4 exchanges x 4
            assert count == 16
            flows = requests.get(
                handle.core_url + "/v1/aggregations/FLOWS_BETWEEN_SERVICES", timeout=5
            ).json()["rows"]
            pairs = {(row["client"], row["server"]) for row in flows}
            assert pairs == {
                ("loadgen", "front"), ("front", "orders"),
                ("orders", "payment"), ("orders", "user"),
            }
        finally:
            handle.stop()

    def test_second_demo_up_detected_via_state_file(self, tmp_path, monkeypatch):
        router = Router()
        router.add("GET", "/control/state", lambda _r: Response.json({"core": "x"}))
        control = HttpServerHandle(router).start()
        state_file = tmp_path / "hawk-demo.json"
        state_file.write_text(json.dumps({"control": control.url}))
        try:
            result = CliRunner().invoke(
                cli_main, ["demo", "up", "--state", str(state_file)]
            )
            assert result.exit_code != 0
            assert "PORT_IN_USE" in result.output
        finally:
            control.stop()
