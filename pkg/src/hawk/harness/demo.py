"""Wiring of the full desk-scale stack: toy services, per-service intercept
proxies, collector, and core registry, all on ephemeral local ports.
"""
from __future__ import annotations

import logging
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Optional

import requests

from ..collector import Collector, serve_collector
from ..core import CoreConfig, CoreRegistry, serve_core
from ..httpkit import HttpServerHandle
from ..model import HawkError
from ..proxy import InterceptProxy, ProxyConfig, ProxyRole
from ..store import InMemoryStore, SqliteStore
from .topology import TopologySpec, ToyService, default_topology

log = logging.getLogger(__name__)

LOADGEN_SERVICE = "loadgen"


class PortInUse(HawkError):
    code = "PORT_IN_USE"


@dataclass
class DemoHandle:
    topology: TopologySpec
    core: CoreRegistry
    core_server: HttpServerHandle
    collector: Collector
    collector_server: HttpServerHandle
    services: dict[str, ToyService]
    ingress: dict[str, InterceptProxy]
    egress: dict[tuple[str, str], InterceptProxy]
    entry_proxy: InterceptProxy
    entry_service: str
    spool_dir: str

    @property
    def core_url(self) -> str:
        return self.core_server.url

    @property
    def collector_url(self) -> str:
        return self.collector_server.url

    @property
    def entry_url(self) -> str:
        """Client-side entry: traffic through here is fully intercepted."""
        return self.entry_proxy.url

    @property
    def direct_url(self) -> str:
        """The entry service itself, bypassing all interception."""
        return self.services[self.entry_service].url

    def state(self) -> dict[str, Any]:
        return {
            "core": self.core_url,
            "collector": self.collector_url,
            "entry": self.entry_url,
            "direct": self.direct_url,
            "entryService": self.entry_service,
            "spoolDir": self.spool_dir,
            "services": {name: svc.url for name, svc in self.services.items()},
            "ingress": {name: proxy.url for name, proxy in self.ingress.items()},
            "egress": {f"{a}->{b}": proxy.url for (a, b), proxy in self.egress.items()},
        }

    def stop(self) -> None:
        for proxy in [self.entry_proxy, *self.egress.values(), *self.ingress.values()]:
            proxy.stop()
        for service in self.services.values():
            service.stop()
        self.collector_server.stop()
        self.collector.stop()
        self.core_server.stop()


def demo_up(
    topology: Optional[TopologySpec] = None,
    sentinel: str = "SENTINEL",
    spool_dir: Optional[str] = None,
    db_path: Optional[str] = None,
    core_config: Optional[CoreConfig] = None,
    host: str = "127.0.0.1",
) -> DemoHandle:
    """Start the whole stack and wait for every health endpoint."""
    topology = topology or default_topology()
    topology.validate()
    spool_dir = spool_dir or tempfile.mkdtemp(prefix="hawk-spool-")
    store = SqliteStore(db_path) if db_path else InMemoryStore()

    core = CoreRegistry(store=store, config=core_config)
    core_server = serve_core(core, host=host)

    collector = Collector(spool_dir, core_server.url + "/v1/records")
    collector_server = serve_collector(collector, host=host)
    collector_endpoint = collector_server.url + "/v1/records"

    resolver_table: dict[tuple[str, str], str] = {}

    def resolver(caller: str, target: str) -> str:
        return resolver_table[(caller, target)]

    services: dict[str, ToyService] = {}
    for spec in topology.services:
        service = ToyService(spec, resolver, sentinel=sentinel, host=host)
        service.topology = topology
        services[spec.name] = service.start()

    ingress: dict[str, InterceptProxy] = {}
    for name, service in services.items():
        proxy = InterceptProxy(
            ProxyConfig(
                listen_address=f"{host}:0",
                upstream_address=service.address,
                service_name=name,
                collector_endpoint=collector_endpoint,
                role=ProxyRole.SERVER_SIDE,
            )
        )
        ingress[name] = proxy.start()

    egress: dict[tuple[str, str], InterceptProxy] = {}
    for spec in topology.services:
        for endpoint in spec.endpoints:
            for call in endpoint.downstream_calls:
                edge = (spec.name, call.service)
                if edge in egress:
                    continue
                proxy = InterceptProxy(
                    ProxyConfig(
                        listen_address=f"{host}:0",
                        upstream_address=ingress[call.service].address,
                        service_name=spec.name,
                        collector_endpoint=collector_endpoint,
                        role=ProxyRole.CLIENT_SIDE,
                    )
                )
                egress[edge] = proxy.start()
                resolver_table[edge] = proxy.url

    entry_service = topology.services[0].name
    entry_proxy = InterceptProxy(
        ProxyConfig(
            listen_address=f"{host}:0",
            upstream_address=ingress[entry_service].address,
            service_name=LOADGEN_SERVICE,
            collector_endpoint=collector_endpoint,
            role=ProxyRole.CLIENT_SIDE,
        )
    ).start()

    handle = DemoHandle(
        topology=topology,
        core=core,
        core_server=core_server,
        collector=collector,
        collector_server=collector_server,
        services=services,
        ingress=ingress,
        egress=egress,
        entry_proxy=entry_proxy,
        entry_service=entry_service,
        spool_dir=spool_dir,
    )
    _wait_healthy(handle)
    return handle


def _wait_healthy(handle: DemoHandle, timeout: float = 10.0) -> None:
    deadline = time.monotonic() + timeout
    urls = [handle.core_url + "/-/health", handle.collector_url + "/-/health"]
    urls += [svc.url + "/-/health" for svc in handle.services.values()]
    for url in urls:
        while True:
            try:
                if requests.get(url, timeout=1).status_code == 200:
                    break
            except requests.RequestException:
                pass
            if time.monotonic() > deadline:
                handle.stop()
                raise HawkError(f"component not healthy: {url}", code="START_FAILED")
            time.sleep(0.05)


def wait_settled(
    core_url: str,
    collector_url: str,
    timeout: float = 30.0,
    stable_polls: int = 3,
    poll_interval: float = 0.05,
) -> int:
    """Wait until the collector spool is drained and the core record count
    stops moving; returns the final count."""
    deadline = time.monotonic() + timeout
    last_count = -1
    stable = 0
    while time.monotonic() < deadline:
        try:
            drained = requests.get(collector_url + "/-/health", timeout=2).json()["drained"]
            count = requests.get(core_url + "/-/health", timeout=2).json()["records"]
        except requests.RequestException:
            time.sleep(poll_interval)
            continue
        if drained and count == last_count:
            stable += 1
            if stable >= stable_polls:
                return count
        else:
            stable = 0
        last_count = count
        time.sleep(poll_interval)
    return max(last_count, 0)
