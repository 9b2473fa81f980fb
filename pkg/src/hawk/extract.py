"""Reduction of message bodies and headers to value-free structural metadata.

Only the structure of a payload is kept: property names become path
expressions like ``$.user.email``, array indices collapse to ``[*]``,
and scalar values are discarded entirely.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .model import (
    EndpointId,
    HawkError,
    HttpMeta,
    Phase,
    ROOT_PATH,
    Side,
    TrafficRecord,
    array_path,
    child_path,
)

DEFAULT_MAX_BODY_BYTES = 1_048_576
DEFAULT_HEADER_DENY_LIST = frozenset({"authorization", "cookie", "set-cookie"})


class ExtractionError(HawkError):
    pass


class UnsupportedContentType(ExtractionError):
    code = "UNSUPPORTED_CONTENT_TYPE"


class BodyTooLarge(ExtractionError):
    code = "BODY_TOO_LARGE"


class MalformedBody(ExtractionError):
    code = "MALFORMED_BODY"


@dataclass(frozen=True)
class ExtractionConfig:
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES
    supported_content_types: tuple[str, ...] = ("application/json", "+json")
    header_deny_list: frozenset[str] = DEFAULT_HEADER_DENY_LIST

    def supports(self, content_type: str) -> bool:
        base = content_type.split(";", 1)[0].strip().lower()
        for entry in self.supported_content_types:
            if entry.startswith("+"):
                if base.endswith(entry):
                    return True
            elif base == entry:
                return True
        return False


def _walk(node: object, prefix: str, out: set[str]) -> None:
    if isinstance(node, dict):
        for key, value in node.items():
            path = child_path(prefix, str(key))
            out.add(path)
            _walk(value, path, out)
    elif isinstance(node, list):
        if node:
            path = array_path(prefix)
            out.add(path)
            for element in node:
                _walk(element, path, out)


def extract_paths(body: bytes, content_type: str, cfg: ExtractionConfig) -> set[str]:
    """Return the structural path set of a JSON body, values discarded.

    Every property path is emitted, intermediate and leaf alike; array
    indices collapse to ``[*]``. Raises ExtractionError subclasses for
    oversized, unsupported, or unparseable input.
    """
    if len(body) > cfg.max_body_bytes:
        raise BodyTooLarge(f"{len(body)} bytes > {cfg.max_body_bytes}")
    if not cfg.supports(content_type):
        raise UnsupportedContentType(content_type)
    try:
        document = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedBody(str(exc)) from exc
    paths: set[str] = set()
    _walk(document, ROOT_PATH, paths)
    return paths


def extract_header_keys(
    headers: Iterable[tuple[str, str]], cfg: ExtractionConfig
) -> set[str]:
    """Lowercased header names, deny-listed ones withheld entirely."""
    return {
        name.lower()
        for name, _value in headers
        if name and name.lower() not in cfg.header_deny_list
    }


@dataclass(frozen=True)
class ExchangeContext:
    """Identity shared by the four records of one exchange."""

    request_id: str
    http: HttpMeta
    endpoint: EndpointId


def now_ms() -> int:
    return int(time.time() * 1000)


def build_record(
    ctx: ExchangeContext,
    phase: Phase,
    side: Side,
    now: int,
    body: bytes,
    headers: Iterable[tuple[str, str]],
    cfg: ExtractionConfig,
) -> tuple[TrafficRecord, Optional[str]]:
    """Assemble one TrafficRecord from a message at one exchange stage.

    Extraction failures never abort the data path: they yield an empty
    path set and the anomaly code as the second return value.
    """
    header_list = list(headers)
    anomaly: Optional[str] = None
    paths: set[str] = set()
    if body:
        content_type = ""
        for name, value in header_list:
            if name.lower() == "content-type":
                content_type = value
                break
        try:
            paths = extract_paths(body, content_type, cfg)
        except ExtractionError as exc:
            anomaly = exc.code
    record = TrafficRecord(
        request_id=ctx.request_id,
        phase=phase,
        side=side,
        timestamp=now,
        http=ctx.http,
        endpoint=ctx.endpoint,
        header_keys=frozenset(extract_header_keys(header_list, cfg)),
        payload_paths=frozenset(paths),
        payload_bytes=len(body),
    )
    return record, anomaly
