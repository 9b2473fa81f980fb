import dataclasses
import json

import pytest

from hawk.model import (
    EndpointId,
    FieldDefinition,
    HawkError,
    MalformedPath,
    MappingTemplate,
    Phase,
    Side,
    TemplateEntry,
    child_path,
    decode_field_definition,
    decode_record,
    decode_template,
    encode_field_definition,
    encode_record,
    encode_template,
    is_valid_field_path,
    normalize_endpoint,
    record_from_json,
    record_to_json,
    validate_field_definition,
    validate_record,
)
from tests.conftest import make_record


class TestFieldPathGrammar:
    @pytest.mark.parametrize(
        "expr",
        ["$", "$.k", "$.user.email", "$.c[*]", "$.c[*].d", '$["first.name"]',
         '$.a["we ird"][*].z', "$.a-b_c9"],
    )
    def test_valid(self, expr):
        assert is_valid_field_path(expr)

    @pytest.mark.parametrize(
        "expr",
        ["", "users", "$.", "$[0]", "$.a..b", "$.sp ace", '$["unterminated]', "$.k."],
    )
    def test_invalid(self, expr):
        assert not is_valid_field_path(expr)

    def test_child_path_quotes_non_dot_safe_keys(self):
        assert child_path("$", "first.name") == '$["first.name"]'
        assert child_path("$", 'say "hi"') == '$["say \\"hi\\""]'
        assert is_valid_field_path(child_path("$", 'say "hi"'))


class TestNormalizeEndpoint:
    def test_integer_segment_collapses(self):
        ep = normalize_endpoint("orders", "GET", "/orders/42")
        assert ep == EndpointId("orders", "GET", "/orders/{*}")

    def test_static_path_unchanged(self):
        assert normalize_endpoint("user", "GET", "/health").path_pattern == "/health"

    def test_uuid_segment_collapses(self):
        ep = normalize_endpoint(
            "user", "GET", "/u/550e8400-e29b-41d4-a716-446655440000"
        )
        assert ep.path_pattern == "/u/{*}"

    def test_query_string_discarded(self):
        assert normalize_endpoint("s", "GET", "/a/7?x=1").path_pattern == "/a/{*}"

    def test_method_uppercased(self):
        assert normalize_endpoint("s", "get", "/a").method == "GET"

    def test_relative_path_rejected(self):
        with pytest.raises(MalformedPath):
            normalize_endpoint("s", "GET", "orders/42")

    def test_deterministic(self):
        a = normalize_endpoint("s", "GET", "/orders/42/items/9")
        b = normalize_endpoint("s", "GET", "/orders/42/items/9")
        assert a == b
        assert a.path_pattern == "/orders/{*}/items/{*}"


class TestValidateRecord:
    def test_valid_record_has_no_violations(self, record):
        assert validate_record(record) == []

    def test_empty_request_id(self):
        assert validate_record(make_record(request_id="")) == ["EMPTY_REQUEST_ID"]

    def test_bad_field_path(self):
        assert validate_record(make_record(payload_paths=("users",))) == [
            "BAD_FIELD_PATH"
        ]

    def test_bad_method(self):
        violations = validate_record(make_record(method="YEET"))
        assert "BAD_METHOD" in violations

    def test_negative_timestamp(self):
        assert "BAD_TIMESTAMP" in validate_record(make_record(timestamp=-1))

    def test_uppercase_header_key(self):
        assert "BAD_HEADER_KEY" in validate_record(
            make_record(header_keys=("Content-Type",))
        )

    def test_multiple_violations_all_reported(self):
        violations = validate_record(
            make_record(request_id="", payload_paths=("nope",), payload_bytes=-1)
        )
        assert set(violations) == {
            "EMPTY_REQUEST_ID",
            "BAD_FIELD_PATH",
            "BAD_PAYLOAD_BYTES",
        }


class TestRecordWire:
    def test_round_trip(self, record):
        assert decode_record(encode_record(record)) == record

    def test_json_round_trip(self, record):
        assert record_from_json(record_to_json(record)) == record

    def test_wire_keys_are_flat_camel_case(self, record):
        data = encode_record(record)
        assert set(data) == {
            "requestId", "phase", "side", "timestamp", "protocol", "method",
            "host", "path", "service", "pathPattern", "headerKeys",
            "payloadPaths", "payloadBytes",
        }
        assert data["phase"] == "request"
        assert data["side"] == "client"

    def test_canonical_json_is_stable(self, record):
        assert record_to_json(record) == record_to_json(record)
        # sorted keys and no whitespace: byte-stable across processes
        assert " " not in record_to_json(record)

    def test_decode_rejects_missing_key(self, record):
        data = encode_record(record)
        del data["requestId"]
        with pytest.raises(HawkError) as err:
            decode_record(data)
        assert err.value.code == "DECODE_ERROR"

    def test_decode_rejects_bad_enum(self, record):
        data = encode_record(record)
        data["phase"] = "sideways"
        with pytest.raises(HawkError):
            decode_record(data)

    def test_record_from_json_rejects_non_object(self):
        with pytest.raises(HawkError):
            record_from_json("[1,2]")
        with pytest.raises(HawkError):
            record_from_json("{not json")


def _definition(**overrides):
    base = dict(
        endpoint=EndpointId("orders", "POST", "/orders"),
        path="$.customer.email",
        name="customer email",
        personal_data=True,
        purposes=("order fulfilment",),
        legal_basis="contract",
    )
    base.update(overrides)
    return FieldDefinition(**base)


class TestFieldDefinition:
    def test_valid(self):
        assert validate_field_definition(_definition()) == []

    def test_special_category_requires_personal_data(self):
        bad = _definition(personal_data=False, special_category=True, purposes=())
        assert "SPECIAL_CATEGORY_WITHOUT_PERSONAL_DATA" in validate_field_definition(bad)

    def test_personal_data_requires_purposes(self):
        assert validate_field_definition(_definition(purposes=())) == ["EMPTY_PURPOSES"]

    def test_non_personal_data_needs_no_purpose(self):
        assert validate_field_definition(_definition(personal_data=False, purposes=())) == []

    def test_bad_path(self):
        assert "BAD_FIELD_PATH" in validate_field_definition(_definition(path="email"))

    def test_wire_round_trip(self):
        definition = _definition(special_category=True, recipients=("payment",),
                                 storage_period="P1Y")
        assert decode_field_definition(encode_field_definition(definition)) == definition

    def test_wire_is_json_serializable(self):
        json.dumps(encode_field_definition(_definition()))


class TestTemplates:
    def test_bind_preserves_attributes(self):
        entry = TemplateEntry(path="$.email", name="email", personal_data=True,
                              purposes=("support",))
        endpoint = EndpointId("user", "GET", "/users/{*}")
        bound = entry.bind(endpoint)
        assert bound.endpoint == endpoint
        assert bound.path == "$.email"
        assert bound.purposes == ("support",)

    def test_wire_round_trip(self):
        template = MappingTemplate(
            template_id="contact-details",
            entries=(
                TemplateEntry(path="$.email", name="email", personal_data=True,
                              purposes=("support",)),
                TemplateEntry(path="$.version", name="api version", personal_data=False),
            ),
        )
        assert decode_template(encode_template(template)) == template

    def test_decode_rejects_entry_without_path(self):
        with pytest.raises(HawkError):
            decode_template({"templateId": "t", "entries": [{"personalData": True}]})


def test_records_are_immutable(record):
    with pytest.raises(dataclasses.FrozenInstanceError):
        record.request_id = "other"
