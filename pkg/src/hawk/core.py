"""Central registry: persists traffic records, manages personal-data field
definitions and mapping templates, and serves aggregations, the records-of-
processing export, and the metrics exposition endpoint.
"""
from __future__ import annotations

import threading
import time
from collections import Counter as TallyCounter
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .gate.rules import (
    CidrTable,
    GeoClass,
    PurposeRule,
    classify_host,
    evaluate_purpose_rule,
    load_cidr_table,
    load_eu_set,
)
from .httpkit import HttpServerHandle, Request, Response, Router
from .metrics import DEFAULT_PAYLOAD_BUCKETS, Registry
from .model import (
    EndpointId,
    FieldDefinition,
    HawkError,
    MappingTemplate,
    Phase,
    Side,
    TrafficRecord,
    decode_endpoint,
    decode_field_definition,
    decode_record,
    decode_template,
    encode_endpoint,
    encode_field_definition,
    encode_record,
    encode_template,
    validate_field_definition,
)
from .store import InMemoryStore, RecordStore


class InvalidDefinition(HawkError):
    code = "INVALID_DEFINITION"


class NotFound(HawkError):
    code = "NOT_FOUND"


class TemplateNotFound(HawkError):
    code = "TEMPLATE_NOT_FOUND"


class NoObservations(HawkError):
    code = "NO_OBSERVATIONS"


class UnknownQuery(HawkError):
    code = "UNKNOWN_QUERY"


AGGREGATION_QUERIES = frozenset(
    {
        "REQUESTS_PER_SERVICE",
        "REQUESTS_PER_ENDPOINT",
        "FLOWS_BETWEEN_SERVICES",
        "FIELD_OCCURRENCES",
        "INITIATORS",
    }
)


@dataclass(frozen=True)
class Exchange:
    """The up-to-four records sharing one request id, interpreted once.

    The endpoint is taken from the server side when observed there (labels
    attach to server endpoints), falling back to the client side for
    egress-only observations.
    """

    request_id: str
    client_request: Optional[TrafficRecord]
    server_request: Optional[TrafficRecord]
    server_response: Optional[TrafficRecord]
    client_response: Optional[TrafficRecord]

    @property
    def anchor(self) -> TrafficRecord:
        record = self.client_request or self.server_request or self.server_response or self.client_response
        assert record is not None
        return record

    @property
    def timestamp(self) -> int:
        return self.anchor.timestamp

    @property
    def client_service(self) -> Optional[str]:
        return self.client_request.endpoint.service if self.client_request else None

    @property
    def server_service(self) -> Optional[str]:
        record = self.server_request or self.server_response
        return record.endpoint.service if record else None

    @property
    def endpoint(self) -> EndpointId:
        record = self.server_request or self.server_response or self.anchor
        return record.endpoint

    @property
    def observed_paths(self) -> frozenset[str]:
        if self.server_request or self.server_response:
            pair = (self.server_request, self.server_response)
        else:
            pair = (self.client_request, self.client_response)
        paths: set[str] = set()
        for record in pair:
            if record is not None:
                paths.update(record.payload_paths)
        return frozenset(paths)

    @property
    def request_payload_bytes(self) -> int:
        record = self.client_request or self.server_request
        return record.payload_bytes if record else 0


def build_exchanges(records: Iterable[TrafficRecord]) -> list[Exchange]:
    groups: dict[str, dict[tuple[Side, Phase], TrafficRecord]] = {}
    order: list[str] = []
    for record in records:
        group = groups.get(record.request_id)
        if group is None:
            group = groups[record.request_id] = {}
            order.append(record.request_id)
        group[(record.side, record.phase)] = record
    return [
        Exchange(
            request_id=rid,
            client_request=groups[rid].get((Side.CLIENT, Phase.REQUEST)),
            server_request=groups[rid].get((Side.SERVER, Phase.REQUEST)),
            server_response=groups[rid].get((Side.SERVER, Phase.RESPONSE)),
            client_response=groups[rid].get((Side.CLIENT, Phase.RESPONSE)),
        )
        for rid in order
    ]


@dataclass
class CoreConfig:
    purpose_rules: tuple[PurposeRule, ...] = ()
    geo_table_path: Optional[str] = None
    eu_set_path: Optional[str] = None
    purpose_vocabulary: Optional[frozenset[str]] = None  # opt-in rejection when set


class CoreRegistry:
    """Thread-safe service object behind the REST surface."""

    def __init__(self, store: Optional[RecordStore] = None, config: Optional[CoreConfig] = None):
        self.store = store or InMemoryStore()
        self.config = config or CoreConfig()
        self.geo_table: CidrTable = load_cidr_table(self.config.geo_table_path)
        self.eu_set = load_eu_set(self.config.eu_set_path)
        self._definitions: dict[tuple[EndpointId, str], FieldDefinition] = {}
        self._templates: dict[str, MappingTemplate] = {}
        self._lock = threading.Lock()

    # -- records ------------------------------------------------------------

    def store_records(self, records: Iterable[TrafficRecord]) -> int:
        return self.store.insert_many(records)

    def exchanges(
        self, from_ms: Optional[int] = None, to_ms: Optional[int] = None
    ) -> list[Exchange]:
        return build_exchanges(self.store.query(from_ms, to_ms))

    # -- field definitions --------------------------------------------------

    def upsert_field_definition(self, definition: FieldDefinition) -> None:
        violations = validate_field_definition(definition)
        if self.config.purpose_vocabulary is not None:
            unknown = set(definition.purposes) - self.config.purpose_vocabulary
            if unknown:
                violations.append("UNKNOWN_PURPOSE")
        if violations:
            raise InvalidDefinition(", ".join(violations))
        with self._lock:
            self._definitions[(definition.endpoint, definition.path)] = definition

    def get_field_definition(self, endpoint: EndpointId, path: str) -> FieldDefinition:
        with self._lock:
            definition = self._definitions.get((endpoint, path))
        if definition is None:
            raise NotFound(f"{endpoint} {path}")
        return definition

    def list_field_definitions(
        self, endpoint: Optional[EndpointId] = None
    ) -> list[FieldDefinition]:
        with self._lock:
            values = list(self._definitions.values())
        if endpoint is not None:
            values = [d for d in values if d.endpoint == endpoint]
        return sorted(values, key=lambda d: (d.endpoint.service, d.endpoint.method, d.endpoint.path_pattern, d.path))

    def delete_field_definition(self, endpoint: EndpointId, path: str) -> None:
        with self._lock:
            if (endpoint, path) not in self._definitions:
                raise NotFound(f"{endpoint} {path}")
            del self._definitions[(endpoint, path)]

    # -- templates ----------------------------------------------------------

    def put_template(self, template: MappingTemplate) -> None:
        for entry in template.entries:
            violations = validate_field_definition(entry.bind(EndpointId("_", "GET", "/")))
            if violations:
                raise InvalidDefinition(f"entry {entry.path}: {', '.join(violations)}")
        with self._lock:
            self._templates[template.template_id] = template

    def get_template(self, template_id: str) -> MappingTemplate:
        with self._lock:
            template = self._templates.get(template_id)
        if template is None:
            raise TemplateNotFound(template_id)
        return template

    def list_templates(self) -> list[MappingTemplate]:
        with self._lock:
            return sorted(self._templates.values(), key=lambda t: t.template_id)

    def apply_template(self, template_id: str, endpoint: EndpointId) -> int:
        """Create one definition per template entry observed on the endpoint.

        Existing definitions are left untouched; returns the number created.
        """
        template = self.get_template(template_id)
        observed = self._observed_paths_for(endpoint)
        created = 0
        with self._lock:
            for entry in template.entries:
                key = (endpoint, entry.path)
                if entry.path in observed and key not in self._definitions:
                    self._definitions[key] = entry.bind(endpoint)
                    created += 1
        return created

    # -- observation-derived views ------------------------------------------

    def _observed_paths_for(self, endpoint: EndpointId) -> set[str]:
        paths: set[str] = set()
        for exchange in self.exchanges():
            if exchange.endpoint == endpoint:
                paths.update(exchange.observed_paths)
        return paths

    def suggest_mappings(self, endpoint: EndpointId) -> list[dict[str, Any]]:
        """Rank templates by Jaccard similarity to the endpoint's path set."""
        observed = self._observed_paths_for(endpoint)
        if not observed:
            raise NoObservations(f"{endpoint}")
        suggestions = []
        for template in self.list_templates():
            template_paths = {entry.path for entry in template.entries}
            union = observed | template_paths
            score = len(observed & template_paths) / len(union) if union else 0.0
            suggestions.append({"templateId": template.template_id, "score": score})
        suggestions.sort(key=lambda s: (-s["score"], s["templateId"]))
        return [
            {
                "endpoint": encode_endpoint(endpoint),
                "templateId": s["templateId"],
                "score": s["score"],
            }
            for s in suggestions
        ]

    def list_unmapped_fields(
        self, from_ms: Optional[int] = None, to_ms: Optional[int] = None
    ) -> list[tuple[EndpointId, str, int]]:
        """Observed (endpoint, path) pairs with no definition, with exchange counts."""
        tally: TallyCounter[tuple[EndpointId, str]] = TallyCounter()
        for exchange in self.exchanges(from_ms, to_ms):
            for path in exchange.observed_paths:
                tally[(exchange.endpoint, path)] += 1
        with self._lock:
            mapped = set(self._definitions.keys())
        rows = [
            (endpoint, path, count)
            for (endpoint, path), count in tally.items()
            if (endpoint, path) not in mapped
        ]
        rows.sort(key=lambda r: (r[0].service, r[0].method, r[0].path_pattern, r[1]))
        return rows

    # -- aggregations -------------------------------------------------------

    def aggregate(
        self,
        query: str,
        from_ms: Optional[int] = None,
        to_ms: Optional[int] = None,
        purpose: Optional[str] = None,
        path: Optional[str] = None,
        name: Optional[str] = None,
    ) -> list[dict[str, Any]]:
        if query not in AGGREGATION_QUERIES:
            raise UnknownQuery(query)
        exchanges = [e for e in self.exchanges(from_ms, to_ms) if e.client_request is not None]

        if query == "REQUESTS_PER_SERVICE":
            tally = TallyCounter(e.server_service or e.anchor.http.host for e in exchanges)
            return [
                {"service": service, "count": count}
                for service, count in sorted(tally.items())
            ]

        if query == "REQUESTS_PER_ENDPOINT":
            if purpose is not None:
                allowed = {
                    d.endpoint
                    for d in self.list_field_definitions()
                    if purpose in d.purposes
                }
                exchanges = [e for e in exchanges if e.endpoint in allowed]
            tally = TallyCounter(e.endpoint for e in exchanges)
            return [
                {**encode_endpoint(endpoint), "count": count}
                for endpoint, count in sorted(
                    tally.items(), key=lambda kv: (kv[0].service, kv[0].method, kv[0].path_pattern)
                )
            ]

        if query == "FLOWS_BETWEEN_SERVICES":
            tally = TallyCounter(
                (e.client_service, e.server_service)
                for e in exchanges
                if e.client_service and e.server_service
            )
            return [
                {"client": client, "server": server, "count": count}
                for (client, server), count in sorted(tally.items())
            ]

        if query == "INITIATORS":
            tally = TallyCounter(e.client_service for e in exchanges if e.client_service)
            return [
                {"service": service, "count": count}
                for service, count in sorted(tally.items())
            ]

        # FIELD_OCCURRENCES: count exchanges observing a path, optionally
        # resolved from a human-readable field name via the definitions.
        wanted_pairs: Optional[set[tuple[EndpointId, str]]] = None
        if name is not None:
            wanted_pairs = {
                (d.endpoint, d.path) for d in self.list_field_definitions() if d.name == name
            }
        tally = TallyCounter()
        for exchange in exchanges:
            for observed in exchange.observed_paths:
                if path is not None and observed != path:
                    continue
                if wanted_pairs is not None and (exchange.endpoint, observed) not in wanted_pairs:
                    continue
                tally[(exchange.endpoint, observed)] += 1
        return [
            {**encode_endpoint(endpoint), "path": observed, "count": count}
            for (endpoint, observed), count in sorted(
                tally.items(),
                key=lambda kv: (kv[0][0].service, kv[0][0].method, kv[0][0].path_pattern, kv[0][1]),
            )
        ]

    # -- RoPA export --------------------------------------------------------

    def export_ropa(
        self, from_ms: Optional[int] = None, to_ms: Optional[int] = None
    ) -> dict[str, Any]:
        """Aggregated records-of-processing input: labeled fields per endpoint
        plus a distinct uncategorized section; never any payload value."""
        exchanges = self.exchanges(from_ms, to_ms)
        per_endpoint: dict[EndpointId, list[Exchange]] = {}
        for exchange in exchanges:
            per_endpoint.setdefault(exchange.endpoint, []).append(exchange)

        entries = []
        for endpoint in sorted(
            per_endpoint, key=lambda e: (e.service, e.method, e.path_pattern)
        ):
            group = per_endpoint[endpoint]
            timestamps = [e.timestamp for e in group]
            recipients = sorted(
                {
                    e.server_service
                    for e in exchanges
                    if e.client_service == endpoint.service and e.server_service
                }
            )
            cross_border: TallyCounter[str] = TallyCounter()
            for exchange in group:
                geo = classify_host(exchange.anchor.http.host, self.geo_table, self.eu_set)
                cross_border[geo.value] += 1
            entries.append(
                {
                    "endpoint": encode_endpoint(endpoint),
                    "fields": [
                        encode_field_definition(d)
                        for d in self.list_field_definitions(endpoint)
                    ],
                    "observedWindow": [min(timestamps), max(timestamps)],
                    "requestCount": sum(1 for e in group if e.client_request is not None),
                    "recipients": recipients,
                    "crossBorder": dict(sorted(cross_border.items())),
                }
            )
        uncategorized = [
            {**encode_endpoint(endpoint), "path": path, "occurrences": count}
            for endpoint, path, count in self.list_unmapped_fields(from_ms, to_ms)
        ]
        return {
            "generatedAt": int(time.time() * 1000),
            "perEndpoint": entries,
            "uncategorized": uncategorized,
        }

    # -- metrics ------------------------------------------------------------

    def _purpose_violations(self) -> TallyCounter:
        tally: TallyCounter[str] = TallyCounter()
        definitions = self.list_field_definitions()
        purposes_by_endpoint: dict[EndpointId, set[str]] = {}
        for definition in definitions:
            purposes_by_endpoint.setdefault(definition.endpoint, set()).update(
                definition.purposes
            )
        for exchange in self.exchanges():
            record = exchange.server_request
            if record is None:
                continue
            labeled = frozenset(purposes_by_endpoint.get(record.endpoint, set()))
            for rule in self.config.purpose_rules:
                violation = evaluate_purpose_rule(
                    record, rule, labeled, client_service=exchange.client_service
                )
                if violation is not None:
                    tally[rule.name] += 1
        return tally

    def build_metrics(self) -> Registry:
        """Metrics snapshot computed from the store; counters are monotone
        across scrapes because the store is insert-only and deduplicated."""
        registry = Registry()
        exchanges_total = registry.counter(
            "hawk_exchanges_total", "Observed exchanges by client and server service"
        )
        unmapped = registry.gauge(
            "hawk_unmapped_fields", "Observed field paths without a personal-data label"
        )
        third_country = registry.counter(
            "hawk_third_country_requests_total",
            "Exchanges by destination geolocation class",
        )
        purpose_violations = registry.counter(
            "hawk_purpose_violations_total", "Purpose-limitation rule violations"
        )
        payload_bytes = registry.histogram(
            "hawk_payload_bytes", DEFAULT_PAYLOAD_BUCKETS, "Request payload sizes in bytes"
        )

        exchanges = self.exchanges()
        pair_tally: TallyCounter[tuple[str, str]] = TallyCounter()
        geo_tally: TallyCounter[str] = TallyCounter()
        for exchange in exchanges:
            if exchange.client_service and exchange.server_service:
                pair_tally[(exchange.client_service, exchange.server_service)] += 1
            if exchange.client_request is not None:
                geo = classify_host(
                    exchange.client_request.http.host, self.geo_table, self.eu_set
                )
                geo_tally[geo.value] += 1
                payload_bytes.observe(exchange.request_payload_bytes)
        for (client, server), count in pair_tally.items():
            exchanges_total.set_total(count, {"client": client, "server": server})
        for geo_class in GeoClass:
            third_country.set_total(geo_tally.get(geo_class.value, 0), {"class": geo_class.value})
        unmapped.set(len(self.list_unmapped_fields()))
        for rule in self.config.purpose_rules:
            purpose_violations.set_total(0, {"rule": rule.name})
        for rule_name, count in self._purpose_violations().items():
            purpose_violations.set_total(count, {"rule": rule_name})
        return registry

    def metrics_exposition(self) -> str:
        return self.build_metrics().render()


# ---------------------------------------------------------------------------
# REST surface
# ---------------------------------------------------------------------------


def _endpoint_from_query(request: Request) -> EndpointId:
    try:
        return EndpointId(
            service=request.query["service"],
            method=request.query["method"].upper(),
            path_pattern=request.query.get("pathPattern") or request.query["path"],
        )
    except KeyError as exc:
        raise HawkError(f"missing query parameter {exc}", code="MISSING_PARAMETER") from exc


def _range_from_query(request: Request) -> tuple[Optional[int], Optional[int]]:
    from_ms = request.query.get("from")
    to_ms = request.query.get("to")
    return (int(from_ms) if from_ms else None, int(to_ms) if to_ms else None)


_ERROR_STATUS = {
    "INVALID_DEFINITION": 400,
    "NOT_FOUND": 404,
    "TEMPLATE_NOT_FOUND": 404,
    "NO_OBSERVATIONS": 404,
    "UNKNOWN_QUERY": 400,
    "MISSING_PARAMETER": 400,
    "DECODE_ERROR": 400,
}


def build_router(registry: CoreRegistry) -> Router:
    router = Router()

    def guarded(handler):
        def wrapped(request: Request) -> Response:
            try:
                return handler(request)
            except HawkError as exc:
                return Response.error(exc.code, status=_ERROR_STATUS.get(exc.code, 400), detail=str(exc))

        return wrapped

    def post_records(request: Request) -> Response:
        payload = request.json()
        if not isinstance(payload, list):
            raise HawkError("expected a JSON array", code="DECODE_ERROR")
        stored = registry.store_records([decode_record(item) for item in payload])
        return Response.json({"stored": stored})

    def get_records(request: Request) -> Response:
        from_ms, to_ms = _range_from_query(request)
        page = int(request.query.get("page", "0"))
        size = int(request.query.get("size", "10000"))
        rows = registry.store.query(from_ms, to_ms)
        return Response.json(
            {
                "total": len(rows),
                "records": [encode_record(r) for r in rows[page * size : (page + 1) * size]],
            }
        )

    def post_field(request: Request) -> Response:
        registry.upsert_field_definition(decode_field_definition(request.json()))
        return Response.json({"status": "ok"})

    def get_fields(request: Request) -> Response:
        endpoint = _endpoint_from_query(request) if "service" in request.query else None
        return Response.json(
            {"fields": [encode_field_definition(d) for d in registry.list_field_definitions(endpoint)]}
        )

    def delete_field(request: Request) -> Response:
        endpoint = _endpoint_from_query(request)
        registry.delete_field_definition(endpoint, request.query["fieldPath"])
        return Response.json({"status": "ok"})

    def post_template(request: Request) -> Response:
        registry.put_template(decode_template(request.json()))
        return Response.json({"status": "ok"})

    def get_templates(_request: Request) -> Response:
        return Response.json({"templates": [encode_template(t) for t in registry.list_templates()]})

    def apply_template(request: Request) -> Response:
        body = request.json()
        created = registry.apply_template(request.params["template_id"], decode_endpoint(body))
        return Response.json({"created": created})

    def get_suggestions(request: Request) -> Response:
        return Response.json({"suggestions": registry.suggest_mappings(_endpoint_from_query(request))})

    def get_unmapped(request: Request) -> Response:
        from_ms, to_ms = _range_from_query(request)
        rows = registry.list_unmapped_fields(from_ms, to_ms)
        return Response.json(
            {
                "unmapped": [
                    {**encode_endpoint(endpoint), "path": path, "occurrences": count}
                    for endpoint, path, count in rows
                ]
            }
        )

    def get_aggregation(request: Request) -> Response:
        from_ms, to_ms = _range_from_query(request)
        rows = registry.aggregate(
            request.params["query"].upper(),
            from_ms=from_ms,
            to_ms=to_ms,
            purpose=request.query.get("purpose"),
            path=request.query.get("path"),
            name=request.query.get("name"),
        )
        return Response.json({"rows": rows})

    def get_ropa(request: Request) -> Response:
        from_ms, to_ms = _range_from_query(request)
        return Response.json(registry.export_ropa(from_ms, to_ms))

    def get_metrics(_request: Request) -> Response:
        return Response.text(registry.metrics_exposition())

    def health(_request: Request) -> Response:
        return Response.json({"status": "ok", "records": registry.store.count()})

    router.add("POST", "/v1/records", guarded(post_records))
    router.add("GET", "/v1/records", guarded(get_records))
    router.add("POST", "/v1/fields", guarded(post_field))
    router.add("GET", "/v1/fields", guarded(get_fields))
    router.add("DELETE", "/v1/fields", guarded(delete_field))
    router.add("POST", "/v1/templates", guarded(post_template))
    router.add("GET", "/v1/templates", guarded(get_templates))
    router.add("POST", "/v1/templates/{template_id}/apply", guarded(apply_template))
    router.add("GET", "/v1/suggestions", guarded(get_suggestions))
    router.add("GET", "/v1/unmapped", guarded(get_unmapped))
    router.add("GET", "/v1/aggregations/{query}", guarded(get_aggregation))
    router.add("GET", "/v1/ropa", guarded(get_ropa))
    router.add("GET", "/metrics", guarded(get_metrics))
    router.add("GET", "/-/health", guarded(health))
    return router


def serve_core(registry: CoreRegistry, host: str = "127.0.0.1", port: int = 0) -> HttpServerHandle:
    return HttpServerHandle(build_router(registry), host=host, port=port).start()
