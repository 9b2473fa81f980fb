"""Toy multi-service shop topology: in-process HTTP services with scripted
bodies and downstream calls, used for demos, benchmarks, and scenarios.
"""
from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler
from typing import Any, Callable, Mapping, Optional

import requests

from ..httpkit import ThreadedServer
from ..model import HawkError

log = logging.getLogger(__name__)

SENTINEL_PLACEHOLDER = "{{sentinel}}"


class CyclicTopology(HawkError):
    code = "CYCLIC_TOPOLOGY"


@dataclass(frozen=True)
class DownstreamCall:
    service: str
    method: str
    path: str
    host_header: Optional[str] = None  # overrides the recorded authority


@dataclass(frozen=True)
class EndpointSpec:
    method: str
    path: str  # may contain {name} segments
    request_body_template: Optional[dict[str, Any]] = None
    response_body_template: Optional[dict[str, Any]] = None
    downstream_calls: tuple[DownstreamCall, ...] = ()
    echo: bool = False  # respond with the request body verbatim

    def matches(self, method: str, path: str) -> bool:
        if method != self.method:
            return False
        pattern = re.sub(r"\{[^/]+\}", "[^/]+", self.path)
        return re.fullmatch(pattern, path.split("?", 1)[0]) is not None


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    endpoints: tuple[EndpointSpec, ...]


@dataclass(frozen=True)
class TopologySpec:
    services: tuple[ServiceSpec, ...]

    def service(self, name: str) -> ServiceSpec:
        for service in self.services:
            if service.name == name:
                return service
        raise HawkError(name, code="UNKNOWN_SERVICE")

    def endpoint(self, service: str, method: str, path: str) -> EndpointSpec:
        for endpoint in self.service(service).endpoints:
            if endpoint.matches(method, path):
                return endpoint
        raise HawkError(f"{service} {method} {path}", code="UNKNOWN_ENDPOINT")

    def validate(self) -> None:
        """Reject cyclic downstream call graphs."""
        edges: dict[str, set[str]] = {s.name: set() for s in self.services}
        for service in self.services:
            for endpoint in service.endpoints:
                for call in endpoint.downstream_calls:
                    edges[service.name].add(call.service)
        state: dict[str, int] = {}

        def visit(node: str) -> None:
            state[node] = 1
            for neighbor in edges.get(node, ()):
                if state.get(neighbor) == 1:
                    raise CyclicTopology(f"{node} -> {neighbor}")
                if state.get(neighbor) is None:
                    visit(neighbor)
            state[node] = 2

        for name in edges:
            if state.get(name) is None:
                visit(name)


def render_template(template: Any, sentinel: str) -> Any:
    """Substitute the sentinel placeholder throughout a JSON-able template."""
    if isinstance(template, str):
        return template.replace(SENTINEL_PLACEHOLDER, sentinel)
    if isinstance(template, list):
        return [render_template(item, sentinel) for item in template]
    if isinstance(template, dict):
        return {k: render_template(v, sentinel) for k, v in template.items()}
    return template


def default_topology() -> TopologySpec:
    """Minimal shop: front takes checkouts, orders fans out to payment and user."""
    topology = TopologySpec(
        services=(
            ServiceSpec(
                name="front",
                endpoints=(
                    EndpointSpec(
                        method="POST",
                        path="/checkout",
                        request_body_template={
                            "user": {"id": "u-1001", "email": SENTINEL_PLACEHOLDER},
                            "items": [{"sku": "sock-blue", "qty": 2}],
                            "note": SENTINEL_PLACEHOLDER,
                        },
                        response_body_template={
                            "orderId": "o-1",
                            "status": "accepted",
                            "customer": {"email": SENTINEL_PLACEHOLDER},
                        },
                        downstream_calls=(DownstreamCall("orders", "POST", "/orders"),),
                    ),
                ),
            ),
            ServiceSpec(
                name="orders",
                endpoints=(
                    EndpointSpec(
                        method="POST",
                        path="/orders",
                        request_body_template={
                            "customer": {
                                "id": "u-1001",
                                "email": SENTINEL_PLACEHOLDER,
                                "address": {"street": SENTINEL_PLACEHOLDER, "city": "Berlin"},
                            },
                            "items": [{"sku": "sock-blue", "qty": 2}],
                        },
                        response_body_template={"orderId": "o-1", "state": "created"},
                        downstream_calls=(
                            DownstreamCall("payment", "POST", "/pay"),
                            DownstreamCall("user", "GET", "/users/1001"),
                        ),
                    ),
                ),
            ),
            ServiceSpec(
                name="payment",
                endpoints=(
                    EndpointSpec(
                        method="POST",
                        path="/pay",
                        request_body_template={
                            "card": {"holder": SENTINEL_PLACEHOLDER, "last4": "4242"},
                            "amount": 1999,
                        },
                        response_body_template={"paymentId": "p-1", "status": "ok"},
                    ),
                ),
            ),
            ServiceSpec(
                name="user",
                endpoints=(
                    EndpointSpec(
                        method="GET",
                        path="/users/{id}",
                        response_body_template={
                            "id": "u-1001",
                            "email": SENTINEL_PLACEHOLDER,
                            "birthdate": SENTINEL_PLACEHOLDER,
                        },
                    ),
                ),
            ),
        )
    )
    topology.validate()
    return topology


def decode_topology(data: Mapping[str, Any]) -> TopologySpec:
    services = tuple(
        ServiceSpec(
            name=s["name"],
            endpoints=tuple(
                EndpointSpec(
                    method=e["method"].upper(),
                    path=e["path"],
                    request_body_template=e.get("requestBodyTemplate"),
                    response_body_template=e.get("responseBodyTemplate"),
                    downstream_calls=tuple(
                        DownstreamCall(
                            service=c["service"],
                            method=c.get("method", "GET").upper(),
                            path=c["path"],
                            host_header=c.get("hostHeader"),
                        )
                        for c in e.get("downstreamCalls", ())
                    ),
                    echo=bool(e.get("echo", False)),
                )
                for e in s["endpoints"]
            ),
        )
        for s in data["services"]
    )
    topology = TopologySpec(services=services)
    topology.validate()
    return topology


# EgressResolver maps (callerService, targetService) to a base URL, normally
# the caller's client-side proxy in front of the target's server-side proxy.
EgressResolver = Callable[[str, str], str]


class ToyService:
    """One scripted HTTP service from the topology."""

    def __init__(
        self,
        spec: ServiceSpec,
        resolver: EgressResolver,
        sentinel: str = "SENTINEL",
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.spec = spec
        self.resolver = resolver
        self.sentinel = sentinel
        self._session = requests.Session()
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, format: str, *args: object) -> None:  # noqa: A002
                log.debug("%s", format % args)

            def _handle(self) -> None:
                service.handle(self)

            do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = _handle

        self.server = ThreadedServer((host, port), Handler)
        self.host = host
        self.port = self.server.server_address[1]
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def url(self) -> str:
        return f"http://{self.address}"

    def start(self) -> "ToyService":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join(timeout=5)

    def handle(self, handler: BaseHTTPRequestHandler) -> None:
        length = int(handler.headers.get("Content-Length") or 0)
        body = handler.rfile.read(length) if length else b""
        path = handler.path.split("?", 1)[0]
        if path == "/-/health":
            self._reply(handler, 200, b'{"status":"ok"}')
            return
        endpoint = next(
            (e for e in self.spec.endpoints if e.matches(handler.command, path)), None
        )
        if endpoint is None:
            self._reply(handler, 404, b'{"error":"UNKNOWN_ENDPOINT"}')
            return
        for call in endpoint.downstream_calls:
            self._call_downstream(call)
        if endpoint.echo:
            self._reply(handler, 200, body or b"{}")
            return
        payload = render_template(endpoint.response_body_template or {}, self.sentinel)
        self._reply(handler, 200, json.dumps(payload).encode("utf-8"))

    topology: Optional[TopologySpec] = None  # injected by the demo wiring

    def _call_downstream(self, call: DownstreamCall) -> None:
        base = self.resolver(self.spec.name, call.service)
        headers = {}
        if call.host_header:
            headers["Host"] = call.host_header
        body = None
        if self.topology is not None:
            try:
                template = self.topology.endpoint(call.service, call.method, call.path)
                if template.request_body_template is not None:
                    body = render_template(template.request_body_template, self.sentinel)
            except HawkError:
                pass
        try:
            # The exchange id must not propagate: each hop is its own exchange.
            self._session.request(
                call.method, base + call.path, json=body, headers=headers, timeout=30
            )
        except requests.RequestException:
            log.warning("downstream call %s %s failed", call.service, call.path)

    def _reply(self, handler: BaseHTTPRequestHandler, status: int, body: bytes) -> None:
        try:
            handler.send_response(status)
            handler.send_header("Content-Type", "application/json")
            handler.send_header("Content-Length", str(len(body)))
            handler.end_headers()
            handler.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass
