"""Canary simulation: two versions of one toy service behind a seeded
weighted splitter, observed through the full interception pipeline and
gated by the canary analysis engine. Deterministic for a fixed scenario.
"""
from __future__ import annotations

import json
import logging
import tempfile
from dataclasses import dataclass
from typing import Any, Optional

import requests

from ..collector import Collector, serve_collector
from ..core import CoreConfig, CoreRegistry, serve_core
from ..gate.canary import (
    CanaryConfig,
    CanaryState,
    HttpSplitterControl,
    LogicalClock,
    RegistryMetricSource,
    decision_log_ndjson,
    decode_canary_config,
    run_analysis,
)
from ..gate.rules import PurposeRule
from ..model import HawkError, decode_field_definition
from ..proxy import InterceptProxy, ProxyConfig, ProxyRole
from .demo import wait_settled
from .splitter import TrafficSplitter
from .topology import EndpointSpec, ServiceSpec, ToyService, render_template

log = logging.getLogger(__name__)


class ScenarioError(HawkError):
    code = "BAD_SCENARIO"


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    requests_per_tick: int
    service_name: str
    method: str
    path: str
    request_body: Any
    v1_response: Any
    v2_response: Any
    v2_third_country_host: Optional[str]
    mappings: tuple
    purpose_rules: tuple[PurposeRule, ...]
    canary: CanaryConfig
    sentinel: str


def load_scenario(path: str) -> Scenario:
    with open(path) as handle:
        text = handle.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}: {exc.msg}") from exc
    try:
        service = data["service"]
        versions = data["versions"]
        return Scenario(
            name=str(data.get("name", "scenario")),
            seed=int(data.get("seed", 0)),
            requests_per_tick=int(data.get("requestsPerTick", 40)),
            service_name=str(service["name"]),
            method=str(service["method"]).upper(),
            path=str(service["path"]),
            request_body=service.get("requestBody"),
            v1_response=versions["v1"].get("responseBody", {}),
            v2_response=versions["v2"].get("responseBody", {}),
            v2_third_country_host=versions["v2"].get("thirdCountryHost"),
            mappings=tuple(decode_field_definition(m) for m in data.get("mappings", ())),
            purpose_rules=tuple(
                PurposeRule(
                    name=str(r["name"]),
                    target_service=str(r["targetService"]),
                    method=str(r["method"]).upper(),
                    required_purpose=str(r["requiredPurpose"]),
                )
                for r in data.get("purposeRules", ())
            ),
            canary=decode_canary_config(data["canary"]),
            sentinel=str(data.get("sentinel", "SENTINEL")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def _version_service(
    scenario: Scenario,
    response_body: Any,
    third_country_host: Optional[str],
    resolver,
    collector_endpoint: str,
    host: str,
) -> tuple[ToyService, InterceptProxy, list[InterceptProxy]]:
    """One version of the canary service plus its ingress (and, when it
    calls out to a third country, a sink chain through an egress proxy)."""
    from .topology import DownstreamCall

    extras: list[InterceptProxy] = []
    downstream: tuple[DownstreamCall, ...] = ()
    if third_country_host is not None:
        sink = ToyService(
            ServiceSpec(
                name="sink",
                endpoints=(EndpointSpec(method="GET", path="/ping", response_body_template={}),),
            ),
            resolver,
            host=host,
        ).start()
        egress = InterceptProxy(
            ProxyConfig(
                listen_address=f"{host}:0",
                upstream_address=sink.address,
                service_name=scenario.service_name,
                collector_endpoint=collector_endpoint,
                role=ProxyRole.CLIENT_SIDE,
            )
        ).start()
        egress._sink = sink  # keep alive for teardown
        extras.append(egress)
        downstream = (
            DownstreamCall("sink", "GET", "/ping", host_header=third_country_host),
        )

        def version_resolver(caller: str, target: str) -> str:
            return egress.url

        resolver = version_resolver

    service = ToyService(
        ServiceSpec(
            name=scenario.service_name,
            endpoints=(
                EndpointSpec(
                    method=scenario.method,
                    path=scenario.path,
                    response_body_template=response_body,
                    downstream_calls=downstream,
                ),
            ),
        ),
        resolver,
        sentinel=scenario.sentinel,
        host=host,
    ).start()
    ingress = InterceptProxy(
        ProxyConfig(
            listen_address=f"{host}:0",
            upstream_address=service.address,
            service_name=scenario.service_name,
            collector_endpoint=collector_endpoint,
            role=ProxyRole.SERVER_SIDE,
        )
    ).start()
    return service, ingress, extras


def canary_simulate(scenario: Scenario, host: str = "127.0.0.1") -> tuple[CanaryState, str]:
    """Run one scenario to a terminal state; returns the state and the
    decision log as newline-delimited JSON."""
    spool_dir = tempfile.mkdtemp(prefix="hawk-canary-spool-")
    core = CoreRegistry(config=CoreConfig(purpose_rules=scenario.purpose_rules))
    core_server = serve_core(core, host=host)
    collector = Collector(spool_dir, core_server.url + "/v1/records")
    collector_server = serve_collector(collector, host=host)
    collector_endpoint = collector_server.url + "/v1/records"

    def no_resolver(caller: str, target: str) -> str:
        raise HawkError(f"no downstream route {caller}->{target}", code="UNKNOWN_SERVICE")

    v1, v1_ingress, v1_extras = _version_service(
        scenario, scenario.v1_response, None, no_resolver, collector_endpoint, host
    )
    v2, v2_ingress, v2_extras = _version_service(
        scenario,
        scenario.v2_response,
        scenario.v2_third_country_host,
        no_resolver,
        collector_endpoint,
        host,
    )
    splitter = TrafficSplitter(
        v1_ingress.address, v2_ingress.address, seed=scenario.seed, host=host
    ).start()
    entry = InterceptProxy(
        ProxyConfig(
            listen_address=f"{host}:0",
            upstream_address=splitter.address,
            service_name="loadgen",
            collector_endpoint=collector_endpoint,
            role=ProxyRole.CLIENT_SIDE,
        )
    ).start()

    for definition in scenario.mappings:
        core.upsert_field_definition(definition)

    body = json.dumps(render_template(scenario.request_body or {}, scenario.sentinel)).encode()
    session = requests.Session()

    def drive_traffic(_state: CanaryState) -> None:
        # Sequential on purpose: the splitter's seeded draws must consume
        # requests in a deterministic order.
        for _ in range(scenario.requests_per_tick):
            session.request(
                scenario.method,
                entry.url + scenario.path,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=30,
            )
        wait_settled(core_server.url, collector_server.url)

    source = RegistryMetricSource(
        core_server.url, tuple(r.metric_query for r in scenario.canary.rules)
    )
    control = HttpSplitterControl(splitter.url)
    try:
        final = run_analysis(
            scenario.canary,
            source,
            control,
            clock=LogicalClock(),
            on_interval=drive_traffic,
        )
    finally:
        entry.stop()
        splitter.stop()
        for proxy in (v1_ingress, v2_ingress, *v1_extras, *v2_extras):
            proxy.stop()
            sink = getattr(proxy, "_sink", None)
            if sink is not None:
                sink.stop()
        v1.stop()
        v2.stop()
        collector_server.stop()
        collector.stop()
        core_server.stop()
    return final, decision_log_ndjson(final)
