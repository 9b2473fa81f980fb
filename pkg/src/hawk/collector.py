"""Ingestion service: validate incoming record batches, dead-letter invalid
input verbatim for audit, spool valid records durably, and forward them to
the core registry with at-least-once delivery.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Optional

import requests

from .httpkit import HttpServerHandle, Request, Response, Router
from .model import (
    HawkError,
    TrafficRecord,
    decode_record,
    encode_record,
    record_from_json,
    record_to_json,
    validate_record,
)

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 10 * 1024 * 1024
MAX_BATCH_RECORDS = 1000
FORWARD_BATCH_SIZE = 500
RETRY_BASE_SECONDS = 0.1
RETRY_CAP_SECONDS = 5.0


@dataclass(frozen=True)
class IngestReport:
    accepted: int
    dead_lettered: int

    def as_dict(self) -> dict[str, int]:
        return {"accepted": self.accepted, "deadLettered": self.dead_lettered}


@dataclass(frozen=True)
class DeadLetter:
    raw_payload: bytes
    violations: tuple[str, ...]
    received_at: int
    source: str

    def as_dict(self) -> dict[str, Any]:
        return {
            "rawPayload": base64.b64encode(self.raw_payload).decode("ascii"),
            "violations": list(self.violations),
            "receivedAt": self.received_at,
            "source": self.source,
        }


class Spool:
    """Append-only newline-delimited file of canonical record encodings.

    A sidecar offset file tracks the byte position up to which records
    have been acknowledged by the core; replay after a crash restarts
    from that offset (duplicates are possible, the core deduplicates).
    """

    def __init__(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        self.path = os.path.join(directory, "spool.ndjson")
        self.offset_path = os.path.join(directory, "spool.offset")
        self._lock = threading.Lock()
        self._file = open(self.path, "ab")

    def append(self, record: TrafficRecord) -> None:
        self.append_many([record])

    def append_many(self, records: list[TrafficRecord]) -> None:
        if not records:
            return
        data = "".join(record_to_json(r) + "\n" for r in records).encode("utf-8")
        with self._lock:
            self._file.write(data)
            self._file.flush()
            os.fsync(self._file.fileno())

    def committed_offset(self) -> int:
        try:
            with open(self.offset_path) as handle:
                return int(handle.read().strip() or 0)
        except FileNotFoundError:
            return 0

    def commit_offset(self, offset: int) -> None:
        tmp = self.offset_path + ".tmp"
        with open(tmp, "w") as handle:
            handle.write(str(offset))
        os.replace(tmp, self.offset_path)

    def read_from(self, offset: int, limit: int) -> tuple[list[TrafficRecord], int]:
        """Read up to ``limit`` records starting at byte ``offset``."""
        records: list[TrafficRecord] = []
        with open(self.path, "rb") as handle:
            handle.seek(offset)
            position = offset
            for _ in range(limit):
                line = handle.readline()
                if not line.endswith(b"\n"):
                    break
                position += len(line)
                records.append(record_from_json(line.decode("utf-8")))
        return records, position

    def close(self) -> None:
        with self._lock:
            self._file.close()


class DeadLetterStore:
    """Append-only audit trail; raw payloads retained verbatim."""

    def __init__(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        self.path = os.path.join(directory, "deadletters.ndjson")
        self._lock = threading.Lock()
        self._entries: list[DeadLetter] = []
        self._load()

    def _load(self) -> None:
        try:
            with open(self.path) as handle:
                for line in handle:
                    data = json.loads(line)
                    self._entries.append(
                        DeadLetter(
                            raw_payload=base64.b64decode(data["rawPayload"]),
                            violations=tuple(data["violations"]),
                            received_at=int(data["receivedAt"]),
                            source=str(data["source"]),
                        )
                    )
        except FileNotFoundError:
            pass

    def append(self, entry: DeadLetter) -> None:
        with self._lock:
            with open(self.path, "a") as handle:
                handle.write(json.dumps(entry.as_dict()) + "\n")
            self._entries.append(entry)

    def page(
        self,
        from_ms: Optional[int] = None,
        to_ms: Optional[int] = None,
        page: int = 0,
        size: int = 100,
    ) -> list[DeadLetter]:
        with self._lock:
            selected = [
                e
                for e in self._entries
                if (from_ms is None or e.received_at >= from_ms)
                and (to_ms is None or e.received_at <= to_ms)
            ]
        selected.sort(key=lambda e: e.received_at)
        return selected[page * size : (page + 1) * size]

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class Collector:
    """Validates, dead-letters, spools, and forwards record batches."""

    def __init__(self, spool_dir: str, core_records_endpoint: str):
        self.spool = Spool(spool_dir)
        self.dead_letters = DeadLetterStore(spool_dir)
        self.core_records_endpoint = core_records_endpoint
        self.received_total = 0
        self.accepted_total = 0
        self.dead_lettered_total = 0
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._session = requests.Session()
        self._forwarder: Optional[threading.Thread] = None

    # -- ingestion ----------------------------------------------------------

    def ingest(self, raw_body: bytes, source: str = "unknown") -> IngestReport:
        """Validate each record independently; invalid ones are dead-lettered."""
        now = int(time.time() * 1000)
        try:
            payload = json.loads(raw_body.decode("utf-8"))
            if not isinstance(payload, list):
                raise ValueError("batch must be a JSON array")
        except (ValueError, UnicodeDecodeError):
            self.dead_letters.append(
                DeadLetter(raw_body, ("UNDECODABLE_BATCH",), now, source)
            )
            with self._lock:
                self.received_total += 1
                self.dead_lettered_total += 1
            return IngestReport(accepted=0, dead_lettered=1)
        if len(payload) > MAX_BATCH_RECORDS:
            raise HawkError("batch exceeds 1000 records", code="BATCH_TOO_LARGE")

        valid: list[TrafficRecord] = []
        dead = 0
        for item in payload:
            raw_item = json.dumps(item).encode("utf-8")
            try:
                record = decode_record(item)
                violations = validate_record(record)
            except HawkError as exc:
                self.dead_letters.append(DeadLetter(raw_item, (exc.code,), now, source))
                dead += 1
                continue
            if violations:
                self.dead_letters.append(DeadLetter(raw_item, tuple(violations), now, source))
                dead += 1
            else:
                valid.append(record)
        self.spool.append_many(valid)
        with self._lock:
            self.received_total += len(payload)
            self.accepted_total += len(valid)
            self.dead_lettered_total += dead
        return IngestReport(accepted=len(valid), dead_lettered=dead)

    # -- forwarding ---------------------------------------------------------

    def forward_once(self) -> int:
        """Drain one batch from the spool toward the core; returns count sent."""
        offset = self.spool.committed_offset()
        records, new_offset = self.spool.read_from(offset, FORWARD_BATCH_SIZE)
        if not records:
            return 0
        response = self._session.post(
            self.core_records_endpoint,
            json=[encode_record(r) for r in records],
            timeout=10,
        )
        if response.status_code >= 300:
            raise HawkError(f"core returned {response.status_code}", code="FORWARD_FAILED")
        self.spool.commit_offset(new_offset)
        return len(records)

    def _forward_loop(self) -> None:
        backoff = RETRY_BASE_SECONDS
        while not self._stop.is_set():
            try:
                sent = self.forward_once()
            except (HawkError, requests.RequestException):
                self._stop.wait(backoff)
                backoff = min(backoff * 2, RETRY_CAP_SECONDS)
                continue
            backoff = RETRY_BASE_SECONDS
            if sent == 0:
                self._stop.wait(0.05)

    def start_forwarder(self) -> None:
        self._forwarder = threading.Thread(target=self._forward_loop, daemon=True)
        self._forwarder.start()

    def stop(self) -> None:
        self._stop.set()
        if self._forwarder is not None:
            self._forwarder.join(timeout=5)
        self.spool.close()

    def drained(self) -> bool:
        offset = self.spool.committed_offset()
        return os.path.getsize(self.spool.path) == offset


def build_router(collector: Collector) -> Router:
    router = Router()

    def post_records(request: Request) -> Response:
        if len(request.body) > MAX_BODY_BYTES:
            return Response.error("PAYLOAD_TOO_LARGE", status=413)
        source = request.headers.get("x-forwarded-for", request.headers.get("host", "unknown"))
        try:
            report = collector.ingest(request.body, source=source)
        except HawkError as exc:
            if exc.code == "BATCH_TOO_LARGE":
                return Response.error(exc.code, status=400)
            return Response.error("STORAGE_UNAVAILABLE", status=503)
        return Response.json(report.as_dict())

    def get_dead_letters(request: Request) -> Response:
        def _int(name: str) -> Optional[int]:
            value = request.query.get(name)
            return int(value) if value is not None else None

        page = collector.dead_letters.page(
            from_ms=_int("from"),
            to_ms=_int("to"),
            page=int(request.query.get("page", "0")),
            size=int(request.query.get("size", "100")),
        )
        return Response.json(
            {
                "total": len(collector.dead_letters),
                "entries": [e.as_dict() for e in page],
            }
        )

    def health(_request: Request) -> Response:
        return Response.json(
            {
                "status": "ok",
                "received": collector.received_total,
                "accepted": collector.accepted_total,
                "deadLettered": collector.dead_lettered_total,
                "drained": collector.drained(),
            }
        )

    router.add("POST", "/v1/records", post_records)
    router.add("GET", "/v1/deadletters", get_dead_letters)
    router.add("GET", "/-/health", health)
    return router


def serve_collector(
    collector: Collector, host: str = "127.0.0.1", port: int = 0
) -> HttpServerHandle:
    handle = HttpServerHandle(build_router(collector), host=host, port=port)
    collector.start_forwarder()
    return handle.start()
