"""Weighted traffic splitter: routes each request to a primary or canary
upstream by a seeded random draw, controllable over HTTP.
"""
from __future__ import annotations

import http.client
import json
import logging
import random
import threading
from http.server import BaseHTTPRequestHandler

from ..httpkit import ThreadedServer

log = logging.getLogger(__name__)

_HOP_BY_HOP = frozenset(
    {"connection", "keep-alive", "te", "trailers", "transfer-encoding", "upgrade"}
)


class TrafficSplitter:
    """Seeded weighted random router; reproducible for a fixed seed."""

    def __init__(
        self,
        primary_upstream: str,
        canary_upstream: str,
        seed: int = 0,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.primary_upstream = primary_upstream
        self.canary_upstream = canary_upstream
        self.canary_percent = 0
        self.weight_history: list[int] = []
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        splitter = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, format: str, *args: object) -> None:  # noqa: A002
                log.debug("%s", format % args)

            def _handle(self) -> None:
                splitter.handle(self)

            do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = _handle

        self.server = ThreadedServer((host, port), Handler)
        self.host = host
        self.port = self.server.server_address[1]
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "TrafficSplitter":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join(timeout=5)

    def set_weight(self, canary_percent: int) -> None:
        if not 0 <= canary_percent <= 100:
            raise ValueError("canary weight must be within [0, 100]")
        with self._lock:
            self.canary_percent = canary_percent
            self.weight_history.append(canary_percent)

    def _choose_upstream(self) -> str:
        with self._lock:
            draw = self._rng.random() * 100
            return self.canary_upstream if draw < self.canary_percent else self.primary_upstream

    def handle(self, handler: BaseHTTPRequestHandler) -> None:
        length = int(handler.headers.get("Content-Length") or 0)
        body = handler.rfile.read(length) if length else b""
        path = handler.path
        if path == "/control/weight" and handler.command == "POST":
            payload = json.loads(body.decode("utf-8"))
            self.set_weight(int(payload["canaryPercent"]))
            self._reply(handler, 200, b'{"status":"ok"}')
            return
        if path == "/control/state":
            state = {
                "canaryPercent": self.canary_percent,
                "weightHistory": self.weight_history,
            }
            self._reply(handler, 200, json.dumps(state).encode("utf-8"))
            return
        upstream = self._choose_upstream()
        try:
            status, resp_headers, resp_body = self._forward(
                upstream, handler.command, path, list(handler.headers.items()), body
            )
        except OSError:
            self._reply(handler, 502, b'{"error":"NO_UPSTREAM"}')
            return
        try:
            handler.send_response(status)
            for name, value in resp_headers:
                handler.send_header(name, value)
            handler.send_header("Content-Length", str(len(resp_body)))
            handler.end_headers()
            if resp_body:
                handler.wfile.write(resp_body)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _forward(
        self,
        upstream: str,
        method: str,
        path: str,
        headers: list[tuple[str, str]],
        body: bytes,
    ) -> tuple[int, list[tuple[str, str]], bytes]:
        host, port = upstream.rsplit(":", 1)
        conn = http.client.HTTPConnection(host, int(port), timeout=30)
        try:
            out_headers = {k: v for k, v in headers if k.lower() not in _HOP_BY_HOP}
            out_headers["Content-Length"] = str(len(body))
            conn.request(method, path, body=body, headers=out_headers)
            response = conn.getresponse()
            resp_body = response.read()
            resp_headers = [
                (k, v)
                for k, v in response.getheaders()
                if k.lower() not in _HOP_BY_HOP and k.lower() != "content-length"
            ]
            return response.status, resp_headers, resp_body
        finally:
            conn.close()

    def _reply(self, handler: BaseHTTPRequestHandler, status: int, body: bytes) -> None:
        try:
            handler.send_response(status)
            handler.send_header("Content-Type", "application/json")
            handler.send_header("Content-Length", str(len(body)))
            handler.end_headers()
            handler.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass
