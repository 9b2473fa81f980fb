"""Sidecar-style intercepting reverse proxy.

Forwards HTTP traffic byte-identically to a configured upstream (save for
request-id injection) while asynchronously emitting value-free traffic
records toward the collector. Emission never blocks or fails the data
path: a bounded buffer absorbs bursts and evicts the oldest record under
pressure.
"""
from __future__ import annotations

import http.client
import json
import logging
import os
import threading
import time
import uuid

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from http.server import BaseHTTPRequestHandler
from typing import Iterable, Optional

import requests

from .extract import ExchangeContext, ExtractionConfig, build_record, now_ms
from .httpkit import ThreadedServer
from .model import (
    EndpointId,
    HttpMeta,
    Phase,
    Side,
    TrafficRecord,
    encode_record,
    normalize_endpoint,
)

log = logging.getLogger(__name__)

_HOP_BY_HOP = frozenset(
    {
        "connection",
        "keep-alive",
        "proxy-authenticate",
        "proxy-authorization",
        "te",
        "trailers",
        "transfer-encoding",
        "upgrade",
    }
)

RETRY_BASE_SECONDS = 0.1
RETRY_FACTOR = 2.0
RETRY_CAP_SECONDS = 10.0
EMIT_BATCH_SIZE = 500


class ProxyRole(str, Enum):
    CLIENT_SIDE = "client_side"
    SERVER_SIDE = "server_side"
    BOTH = "both"


_ROLE_SIDES = {
    ProxyRole.CLIENT_SIDE: (Side.CLIENT,),
    ProxyRole.SERVER_SIDE: (Side.SERVER,),
    ProxyRole.BOTH: (Side.CLIENT, Side.SERVER),
}


@dataclass(frozen=True)
class ProxyConfig:
    listen_address: str
    upstream_address: str
    service_name: str
    collector_endpoint: str
    role: ProxyRole = ProxyRole.BOTH
    request_id_header: str = "x-request-id"
    emit_buffer_capacity: int = 10_000
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)

    def __post_init__(self) -> None:
        if self.emit_buffer_capacity <= 0:
            raise ValueError("emit_buffer_capacity must be positive")


def load_proxy_config(path: Optional[str] = None, env: Optional[dict[str, str]] = None) -> ProxyConfig:
    """Build a ProxyConfig from a TOML file, overridable via HAWK_PROXY_* env vars."""
    values: dict[str, str] = {}
    if path:
        with open(path, "rb") as handle:
            for key, value in tomllib.load(handle).items():
                values[key] = str(value)
    environ = os.environ if env is None else env
    for key in (
        "listen_address",
        "upstream_address",
        "service_name",
        "collector_endpoint",
        "role",
        "request_id_header",
        "emit_buffer_capacity",
    ):
        env_key = "HAWK_PROXY_" + key.upper()
        if env_key in environ:
            values[key] = environ[env_key]
    missing = [
        k
        for k in ("listen_address", "upstream_address", "service_name", "collector_endpoint")
        if k not in values
    ]
    if missing:
        raise ValueError(f"missing proxy config keys: {', '.join(missing)}")
    return ProxyConfig(
        listen_address=values["listen_address"],
        upstream_address=values["upstream_address"],
        service_name=values["service_name"],
        collector_endpoint=values["collector_endpoint"],
        role=ProxyRole(values.get("role", "both")),
        request_id_header=values.get("request_id_header", "x-request-id"),
        emit_buffer_capacity=int(values.get("emit_buffer_capacity", 10_000)),
    )


@dataclass
class EmitStats:
    emitted: int = 0
    dropped: int = 0
    anomalies: int = 0

    def as_dict(self) -> dict[str, int]:
        return {"emitted": self.emitted, "dropped": self.dropped, "anomalies": self.anomalies}


def ensure_request_id(headers: list[tuple[str, str]], cfg: ProxyConfig) -> str:
    """Return the exchange id, generating and injecting a UUIDv4 if absent."""
    wanted = cfg.request_id_header.lower()
    for name, value in headers:
        if name.lower() == wanted and value:
            return value
    request_id = str(uuid.uuid4())
    headers.append((cfg.request_id_header, request_id))
    return request_id


class Emitter:
    """Bounded multi-producer buffer drained by one background sender.

    Producers never block: under pressure the oldest buffered record is
    evicted (counted in stats.dropped). The sender batches records to the
    collector and retries with exponential backoff on failure.
    """

    def __init__(self, collector_endpoint: str, capacity: int):
        self.collector_endpoint = collector_endpoint
        self.capacity = capacity
        self.stats = EmitStats()
        self._queue: deque[TrafficRecord] = deque()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._session = requests.Session()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> "Emitter":
        self._thread.start()
        return self

    def stop(self, flush_timeout: float = 2.0) -> None:
        deadline = time.monotonic() + flush_timeout
        while time.monotonic() < deadline:
            with self._lock:
                if not self._queue:
                    break
            time.sleep(0.02)
        self._stop.set()
        self._thread.join(timeout=5)

    def emit_async(self, record: TrafficRecord) -> bool:
        """Enqueue a record; returns False when the buffer had to drop one."""
        with self._lock:
            if len(self._queue) >= self.capacity:
                self._queue.popleft()
                self._queue.append(record)
                self.stats.dropped += 1
                return False
            self._queue.append(record)
            return True

    def note_anomaly(self) -> None:
        with self._lock:
            self.stats.anomalies += 1

    def pending(self) -> int:
        with self._lock:
            return len(self._queue)

    def _take_batch(self) -> list[TrafficRecord]:
        with self._lock:
            batch = []
            while self._queue and len(batch) < EMIT_BATCH_SIZE:
                batch.append(self._queue.popleft())
            return batch

    def _requeue_front(self, batch: list[TrafficRecord]) -> None:
        with self._lock:
            for record in reversed(batch):
                self._queue.appendleft(record)
            overflow = len(self._queue) - self.capacity
            for _ in range(max(0, overflow)):
                self._queue.popleft()
                self.stats.dropped += 1

    def _run(self) -> None:
        backoff = RETRY_BASE_SECONDS
        while not self._stop.is_set():
            batch = self._take_batch()
            if not batch:
                self._stop.wait(0.02)
                continue
            try:
                response = self._session.post(
                    self.collector_endpoint,
                    json=[encode_record(r) for r in batch],
                    timeout=5,
                )
                ok = response.status_code < 500
            except requests.RequestException:
                ok = False
            if ok:
                with self._lock:
                    self.stats.emitted += len(batch)
                backoff = RETRY_BASE_SECONDS
            else:
                self._requeue_front(batch)
                self._stop.wait(backoff)
                backoff = min(backoff * RETRY_FACTOR, RETRY_CAP_SECONDS)


class _ProxyHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    proxy: "InterceptProxy"  # set on subclass

    def log_message(self, format: str, *args: object) -> None:  # noqa: A002
        log.debug("%s %s", self.address_string(), format % args)

    def _handle(self) -> None:
        self.proxy.handle_exchange(self)

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = do_HEAD = do_OPTIONS = _handle


class InterceptProxy:
    """One proxy instance bound to a listen address and a fixed upstream."""

    def __init__(self, config: ProxyConfig, emitter: Optional[Emitter] = None):
        self.config = config
        self.emitter = emitter or Emitter(config.collector_endpoint, config.emit_buffer_capacity)
        host, port = config.listen_address.rsplit(":", 1)
        handler = type("BoundProxyHandler", (_ProxyHandler,), {"proxy": self})
        self.server = ThreadedServer((host, int(port)), handler)
        self.host = host
        self.port = self.server.server_address[1]
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def url(self) -> str:
        return f"http://{self.address}"

    def start(self) -> "InterceptProxy":
        self.emitter.start()
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join(timeout=5)
        self.emitter.stop()

    # -- data path ----------------------------------------------------------

    def _emit(self, ctx: ExchangeContext, phase: Phase, side: Side, body: bytes,
              headers: Iterable[tuple[str, str]]) -> None:
        record, anomaly = build_record(
            ctx, phase, side, now_ms(), body, headers, self.config.extraction
        )
        if anomaly is not None:
            self.emitter.note_anomaly()
        self.emitter.emit_async(record)

    def _emit_request_stages(self, ctx: ExchangeContext, body: bytes,
                             headers: list[tuple[str, str]]) -> None:
        sides = _ROLE_SIDES[self.config.role]
        for side in (Side.CLIENT, Side.SERVER):
            if side in sides:
                self._emit(ctx, Phase.REQUEST, side, body, headers)

    def _emit_response_stages(self, ctx: ExchangeContext, body: bytes,
                              headers: list[tuple[str, str]]) -> None:
        sides = _ROLE_SIDES[self.config.role]
        for side in (Side.SERVER, Side.CLIENT):
            if side in sides:
                self._emit(ctx, Phase.RESPONSE, side, body, headers)

    def handle_exchange(self, handler: BaseHTTPRequestHandler) -> None:
        if handler.path == "/-/stats":
            self._serve_stats(handler)
            return
        length = int(handler.headers.get("Content-Length") or 0)
        body = handler.rfile.read(length) if length else b""
        headers = [(k, v) for k, v in handler.headers.items()]
        request_id = ensure_request_id(headers, self.config)
        host = handler.headers.get("Host") or self.config.upstream_address
        path = handler.path.split("?", 1)[0]
        ctx = ExchangeContext(
            request_id=request_id,
            http=HttpMeta(
                protocol=handler.request_version,
                method=handler.command,
                host=host,
                path=path,
            ),
            endpoint=normalize_endpoint(self.config.service_name, handler.command, path),
        )
        self._emit_request_stages(ctx, body, headers)

        try:
            status, reason, resp_headers, resp_body = self._forward(
                handler.command, handler.path, headers, body
            )
        except OSError:
            self.emitter.note_anomaly()  # NO_UPSTREAM
            self._reply(handler, 502, [("Content-Type", "application/json")], b'{"error":"NO_UPSTREAM"}')
            return

        self._emit_response_stages(ctx, resp_body, resp_headers)
        self._reply(handler, status, resp_headers, resp_body, reason)

    def _forward(self, method: str, path: str, headers: list[tuple[str, str]],
                 body: bytes) -> tuple[int, str, list[tuple[str, str]], bytes]:
        upstream_host, upstream_port = self.config.upstream_address.rsplit(":", 1)
        conn = http.client.HTTPConnection(upstream_host, int(upstream_port), timeout=30)
        try:
            out_headers = {
                k: v for k, v in headers if k.lower() not in _HOP_BY_HOP
            }
            out_headers["Content-Length"] = str(len(body))
            conn.request(method, path, body=body, headers=out_headers)
            response = conn.getresponse()
            resp_body = response.read()
            resp_headers = [
                (k, v)
                for k, v in response.getheaders()
                if k.lower() not in _HOP_BY_HOP and k.lower() != "content-length"
            ]
            return response.status, response.reason, resp_headers, resp_body
        finally:
            conn.close()

    def _reply(self, handler: BaseHTTPRequestHandler, status: int,
               headers: list[tuple[str, str]], body: bytes, reason: str = "") -> None:
        try:
            handler.send_response(status, reason or None)
            for name, value in headers:
                handler.send_header(name, value)
            handler.send_header("Content-Length", str(len(body)))
            handler.end_headers()
            if body:
                handler.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _serve_stats(self, handler: BaseHTTPRequestHandler) -> None:
        payload = json.dumps(self.emitter.stats.as_dict()).encode()
        self._reply(handler, 200, [("Content-Type", "application/json")], payload)
