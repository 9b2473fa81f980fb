"""Shared domain types for the traffic transparency pipeline.

Everything here is an immutable value object: records, endpoint identities,
field paths, and the personal-data labels attached to them. All other
modules build on these types and on the canonical JSON wire encoding
defined at the bottom.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Pattern, Sequence


class HawkError(Exception):
    """Error with a stable machine-readable code."""

    code = "ERROR"

    def __init__(self, message: str = "", code: Optional[str] = None):
        super().__init__(message or code or self.code)
        if code is not None:
            self.code = code


class MalformedPath(HawkError):
    code = "MALFORMED_PATH"


class Phase(str, Enum):
    REQUEST = "request"
    RESPONSE = "response"


class Side(str, Enum):
    CLIENT = "client"
    SERVER = "server"


class MetricKind(str, Enum):
    COUNTER = "counter"
    GAUGE = "gauge"
    HISTOGRAM = "histogram"


ALLOWED_METHODS = frozenset({"GET", "POST", "PUT", "PATCH", "DELETE", "HEAD", "OPTIONS"})

# Four observation stages of one exchange, in wire order.
STAGE_ORDER = (
    (Side.CLIENT, Phase.REQUEST),
    (Side.SERVER, Phase.REQUEST),
    (Side.SERVER, Phase.RESPONSE),
    (Side.CLIENT, Phase.RESPONSE),
)


# ---------------------------------------------------------------------------
# Field paths
# ---------------------------------------------------------------------------

# Grammar: "$" followed by steps: ".key" (dot-safe keys), ["quoted key"]
# (anything else, with backslash escapes), or [*] (collapsed array element).
_DOT_KEY_RE = re.compile(r"[A-Za-z0-9_-]+\Z")
FIELD_PATH_RE = re.compile(r'\$(?:\.[A-Za-z0-9_-]+|\[\*\]|\["(?:[^"\\]|\\.)*"\])*\Z')

ROOT_PATH = "$"


def is_valid_field_path(expression: str) -> bool:
    return bool(FIELD_PATH_RE.match(expression))


def child_path(parent: str, key: str) -> str:
    """Append an object-key step to a path, quoting when necessary."""
    if _DOT_KEY_RE.match(key):
        return f"{parent}.{key}"
    escaped = key.replace("\\", "\\\\").replace('"', '\\"')
    return f'{parent}["{escaped}"]'


def array_path(parent: str) -> str:
    """Append the collapsed any-element step to a path."""
    return f"{parent}[*]"


# ---------------------------------------------------------------------------
# Endpoint identity
# ---------------------------------------------------------------------------

_INT_SEGMENT_RE = re.compile(r"[0-9]+\Z")
_UUID_SEGMENT_RE = re.compile(
    r"[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}\Z"
)

DEFAULT_SEGMENT_RULES: tuple[Pattern[str], ...] = (_INT_SEGMENT_RE, _UUID_SEGMENT_RE)

DYNAMIC_SEGMENT = "{*}"


@dataclass(frozen=True)
class EndpointId:
    """Unique endpoint key: (service, method, pathPattern)."""

    service: str
    method: str
    path_pattern: str


def normalize_endpoint(
    service: str,
    method: str,
    raw_path: str,
    rules: Sequence[Pattern[str]] = DEFAULT_SEGMENT_RULES,
) -> EndpointId:
    """Build an EndpointId, collapsing dynamic path segments to ``{*}``.

    Segments matching any rule (by default decimal integers and UUIDs)
    are normalized; any query string is discarded. Deterministic for a
    fixed rule set.
    """
    if not raw_path.startswith("/"):
        raise MalformedPath(f"path must begin with '/': {raw_path!r}")
    path = raw_path.split("?", 1)[0]
    segments = path.split("/")
    normalized = [
        DYNAMIC_SEGMENT if seg and any(rule.match(seg) for rule in rules) else seg
        for seg in segments
    ]
    return EndpointId(service=service, method=method.upper(), path_pattern="/".join(normalized))


# ---------------------------------------------------------------------------
# Traffic records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HttpMeta:
    protocol: str
    method: str
    host: str
    path: str


@dataclass(frozen=True)
class TrafficRecord:
    """One value-free observation of a message at one (phase, side) stage.

    Never stores a payload or header value: only header names, structural
    payload paths, and the payload size in bytes.
    """

    request_id: str
    phase: Phase
    side: Side
    timestamp: int  # UTC milliseconds since epoch
    http: HttpMeta
    endpoint: EndpointId
    header_keys: frozenset[str] = frozenset()
    payload_paths: frozenset[str] = frozenset()
    payload_bytes: int = 0

    @property
    def dedup_key(self) -> tuple[str, Phase, Side]:
        return (self.request_id, self.phase, self.side)


def validate_record(record: TrafficRecord) -> list[str]:
    """Check every type invariant; returns the list of violated ones.

    Total function: never raises, empty list means the record is valid.
    """
    violations: list[str] = []
    if not record.request_id:
        violations.append("EMPTY_REQUEST_ID")
    if not isinstance(record.phase, Phase):
        violations.append("BAD_PHASE")
    if not isinstance(record.side, Side):
        violations.append("BAD_SIDE")
    if not isinstance(record.timestamp, int) or record.timestamp < 0:
        violations.append("BAD_TIMESTAMP")
    if record.http.method not in ALLOWED_METHODS:
        violations.append("BAD_METHOD")
    if not record.http.path.startswith("/"):
        violations.append("BAD_PATH")
    if not record.http.host:
        violations.append("EMPTY_HOST")
    if record.endpoint.method not in ALLOWED_METHODS:
        violations.append("BAD_ENDPOINT_METHOD")
    if any(not is_valid_field_path(p) for p in record.payload_paths):
        violations.append("BAD_FIELD_PATH")
    if any((not k) or k != k.lower() for k in record.header_keys):
        violations.append("BAD_HEADER_KEY")
    if not isinstance(record.payload_bytes, int) or record.payload_bytes < 0:
        violations.append("BAD_PAYLOAD_BYTES")
    return violations


# ---------------------------------------------------------------------------
# Personal-data labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldDefinition:
    """Personal-data indicator attached to one (endpoint, path) pair."""

    endpoint: EndpointId
    path: str
    name: str
    personal_data: bool
    description: str = ""
    special_category: bool = False
    purposes: tuple[str, ...] = ()
    legal_basis: str = ""
    recipients: tuple[str, ...] = ()
    storage_period: Optional[str] = None


def validate_field_definition(definition: FieldDefinition) -> list[str]:
    violations: list[str] = []
    if definition.special_category and not definition.personal_data:
        violations.append("SPECIAL_CATEGORY_WITHOUT_PERSONAL_DATA")
    if definition.personal_data and not definition.purposes:
        violations.append("EMPTY_PURPOSES")
    if not is_valid_field_path(definition.path):
        violations.append("BAD_FIELD_PATH")
    return violations


@dataclass(frozen=True)
class TemplateEntry:
    """FieldDefinition attributes without an endpoint binding."""

    path: str
    name: str
    personal_data: bool
    description: str = ""
    special_category: bool = False
    purposes: tuple[str, ...] = ()
    legal_basis: str = ""
    recipients: tuple[str, ...] = ()
    storage_period: Optional[str] = None

    def bind(self, endpoint: EndpointId) -> FieldDefinition:
        return FieldDefinition(
            endpoint=endpoint,
            path=self.path,
            name=self.name,
            personal_data=self.personal_data,
            description=self.description,
            special_category=self.special_category,
            purposes=self.purposes,
            legal_basis=self.legal_basis,
            recipients=self.recipients,
            storage_period=self.storage_period,
        )


@dataclass(frozen=True)
class MappingTemplate:
    template_id: str
    entries: tuple[TemplateEntry, ...] = ()


# ---------------------------------------------------------------------------
# Wire encoding (canonical UTF-8 JSON)
# ---------------------------------------------------------------------------


def encode_record(record: TrafficRecord) -> dict[str, Any]:
    return {
        "requestId": record.request_id,
        "phase": record.phase.value,
        "side": record.side.value,
        "timestamp": record.timestamp,
        "protocol": record.http.protocol,
        "method": record.http.method,
        "host": record.http.host,
        "path": record.http.path,
        "service": record.endpoint.service,
        "pathPattern": record.endpoint.path_pattern,
        "headerKeys": sorted(record.header_keys),
        "payloadPaths": sorted(record.payload_paths),
        "payloadBytes": record.payload_bytes,
    }


def decode_record(data: Mapping[str, Any]) -> TrafficRecord:
    """Inverse of encode_record; raises HawkError(DECODE_ERROR) on bad shape."""
    try:
        return TrafficRecord(
            request_id=str(data["requestId"]),
            phase=Phase(data["phase"]),
            side=Side(data["side"]),
            timestamp=int(data["timestamp"]),
            http=HttpMeta(
                protocol=str(data["protocol"]),
                method=str(data["method"]),
                host=str(data["host"]),
                path=str(data["path"]),
            ),
            endpoint=EndpointId(
                service=str(data["service"]),
                method=str(data["method"]),
                path_pattern=str(data["pathPattern"]),
            ),
            header_keys=frozenset(str(k) for k in data["headerKeys"]),
            payload_paths=frozenset(str(p) for p in data["payloadPaths"]),
            payload_bytes=int(data["payloadBytes"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise HawkError(f"undecodable record: {exc}", code="DECODE_ERROR") from exc


def record_to_json(record: TrafficRecord) -> str:
    return json.dumps(encode_record(record), sort_keys=True, separators=(",", ":"))


def record_from_json(line: str) -> TrafficRecord:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise HawkError(f"bad record JSON: {exc}", code="DECODE_ERROR") from exc
    if not isinstance(data, Mapping):
        raise HawkError("record must be a JSON object", code="DECODE_ERROR")
    return decode_record(data)


def encode_endpoint(endpoint: EndpointId) -> dict[str, Any]:
    return {
        "service": endpoint.service,
        "method": endpoint.method,
        "pathPattern": endpoint.path_pattern,
    }


def decode_endpoint(data: Mapping[str, Any]) -> EndpointId:
    return EndpointId(
        service=str(data["service"]),
        method=str(data["method"]),
        path_pattern=str(data["pathPattern"]),
    )


def encode_field_definition(definition: FieldDefinition) -> dict[str, Any]:
    return {
        "endpoint": encode_endpoint(definition.endpoint),
        "path": definition.path,
        "name": definition.name,
        "description": definition.description,
        "personalData": definition.personal_data,
        "specialCategory": definition.special_category,
        "purposes": list(definition.purposes),
        "legalBasis": definition.legal_basis,
        "recipients": list(definition.recipients),
        "storagePeriod": definition.storage_period,
    }


def decode_field_definition(data: Mapping[str, Any]) -> FieldDefinition:
    try:
        return FieldDefinition(
            endpoint=decode_endpoint(data["endpoint"]),
            path=str(data["path"]),
            name=str(data.get("name", "")),
            description=str(data.get("description", "")),
            personal_data=bool(data["personalData"]),
            special_category=bool(data.get("specialCategory", False)),
            purposes=tuple(str(p) for p in data.get("purposes", ())),
            legal_basis=str(data.get("legalBasis", "")),
            recipients=tuple(str(r) for r in data.get("recipients", ())),
            storage_period=(
                None if data.get("storagePeriod") is None else str(data["storagePeriod"])
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise HawkError(f"undecodable field definition: {exc}", code="DECODE_ERROR") from exc


def encode_template(template: MappingTemplate) -> dict[str, Any]:
    entries = []
    for entry in template.entries:
        entries.append(
            {
                "path": entry.path,
                "name": entry.name,
                "description": entry.description,
                "personalData": entry.personal_data,
                "specialCategory": entry.special_category,
                "purposes": list(entry.purposes),
                "legalBasis": entry.legal_basis,
                "recipients": list(entry.recipients),
                "storagePeriod": entry.storage_period,
            }
        )
    return {"templateId": template.template_id, "entries": entries}


def decode_template(data: Mapping[str, Any]) -> MappingTemplate:
    try:
        entries = tuple(
            TemplateEntry(
                path=str(e["path"]),
                name=str(e.get("name", "")),
                description=str(e.get("description", "")),
                personal_data=bool(e["personalData"]),
                special_category=bool(e.get("specialCategory", False)),
                purposes=tuple(str(p) for p in e.get("purposes", ())),
                legal_basis=str(e.get("legalBasis", "")),
                recipients=tuple(str(r) for r in e.get("recipients", ())),
                storage_period=(
                    None if e.get("storagePeriod") is None else str(e["storagePeriod"])
                ),
            )
            for e in data["entries"]
        )
        return MappingTemplate(template_id=str(data["templateId"]), entries=entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise HawkError(f"undecodable template: {exc}", code="DECODE_ERROR") from exc
