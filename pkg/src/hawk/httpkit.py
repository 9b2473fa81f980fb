"""Minimal threaded HTTP server plumbing shared by the services.

Desk-scale by design: a route table dispatched from a ThreadingHTTPServer,
JSON in, JSON out. Not a web framework.
"""
from __future__ import annotations

import json
import logging
import re
import socket
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Optional
from urllib.parse import parse_qs, urlsplit

log = logging.getLogger(__name__)


class ThreadedServer(ThreadingHTTPServer):
    """ThreadingHTTPServer with a listen backlog that survives many
    clients connecting at once (the stock backlog of 5 drops SYNs under
    startup bursts, costing a 1 s retransmit)."""

    request_queue_size = 128
    daemon_threads = True


@dataclass
class Request:
    method: str
    path: str
    query: dict[str, str]
    headers: dict[str, str]  # lowercased names
    body: bytes
    params: dict[str, str] = field(default_factory=dict)

    def json(self) -> Any:
        return json.loads(self.body.decode("utf-8"))


@dataclass
class Response:
    status: int = 200
    body: bytes = b""
    content_type: str = "application/json"

    @classmethod
    def json(cls, payload: Any, status: int = 200) -> "Response":
        return cls(status=status, body=json.dumps(payload).encode("utf-8"))

    @classmethod
    def text(cls, text: str, status: int = 200, content_type: str = "text/plain; version=0.0.4") -> "Response":
        return cls(status=status, body=text.encode("utf-8"), content_type=content_type)

    @classmethod
    def error(cls, code: str, status: int = 400, detail: str = "") -> "Response":
        return cls.json({"error": code, "detail": detail}, status=status)


Handler = Callable[[Request], Response]

_PARAM_RE = re.compile(r"\{([a-zA-Z_]+)\}")


class Router:
    def __init__(self) -> None:
        self._routes: list[tuple[str, re.Pattern[str], Handler]] = []

    def add(self, method: str, pattern: str, handler: Handler) -> None:
        regex = re.compile("^" + _PARAM_RE.sub(r"(?P<\1>[^/]+)", pattern) + "$")
        self._routes.append((method.upper(), regex, handler))

    def dispatch(self, request: Request) -> Response:
        for method, regex, handler in self._routes:
            if method != request.method:
                continue
            match = regex.match(request.path)
            if match:
                request.params = match.groupdict()
                try:
                    return handler(request)
                except Exception:  # route bugs must not kill the server thread
                    log.exception("handler failure on %s %s", request.method, request.path)
                    return Response.error("INTERNAL", status=500)
        return Response.error("NOT_FOUND", status=404)


class _RouterHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    router: Router  # set on subclass

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002
        log.debug("%s %s", self.address_string(), format % args)

    def _handle(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        parts = urlsplit(self.path)
        query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        request = Request(
            method=self.command,
            path=parts.path,
            query=query,
            headers={k.lower(): v for k, v in self.headers.items()},
            body=body,
        )
        if request.method == "OPTIONS":
            response = Response(status=204)  # CORS preflight for browser clients
        else:
            response = self.router.dispatch(request)
        try:
            self.send_response(response.status)
            self.send_header("Content-Type", response.content_type)
            self.send_header("Content-Length", str(len(response.body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, PATCH, DELETE, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()
            self.wfile.write(response.body)
        except (BrokenPipeError, ConnectionResetError):
            pass

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = do_HEAD = do_OPTIONS = _handle


class HttpServerHandle:
    """A router served on a background thread; stop() joins it."""

    def __init__(self, router: Router, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_RouterHandler,), {"router": router})
        self.server = ThreadedServer((host, port), handler)
        self.host = host
        self.port = self.server.server_address[1]
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "HttpServerHandle":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join(timeout=5)


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]
