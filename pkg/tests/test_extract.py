import json
import random
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hawk.extract import (
    BodyTooLarge,
    ExchangeContext,
    ExtractionConfig,
    MalformedBody,
    UnsupportedContentType,
    build_record,
    extract_header_keys,
    extract_paths,
)
from hawk.model import EndpointId, HttpMeta, Phase, Side

CFG = ExtractionConfig()


def paths_of(document, cfg=CFG):
    return extract_paths(json.dumps(document).encode("utf-8"), "application/json", cfg)


# ---------------------------------------------------------------------------
# Independent oracle: iterative stack walk with its own quoting logic.
# Kept deliberately separate from the production recursion so the two can
# disagree.
# ---------------------------------------------------------------------------

_DOT_SAFE = set(string.ascii_letters + string.digits + "_-")


def _oracle_step(key):
    if key and all(ch in _DOT_SAFE for ch in key):
        return "." + key
    return '["' + key.replace("\\", "\\\\").replace('"', '\\"') + '"]'


def oracle_paths(document):
    out = set()
    stack = [("$", document)]
    while stack:
        prefix, node = stack.pop()
        if isinstance(node, dict):
            for key, value in node.items():
                path = prefix + _oracle_step(str(key))
                out.add(path)
                stack.append((path, value))
        elif isinstance(node, list) and node:
            path = prefix + "[*]"
            out.add(path)
            for element in node:
                stack.append((path, element))
    return out


# ---------------------------------------------------------------------------
# Worked examples
# ---------------------------------------------------------------------------


class TestExtractPaths:
    def test_single_property(self):
        assert paths_of({"k": 1}) == {"$.k"}

    def test_empty_object(self):
        assert paths_of({}) == set()

    def test_nested_object_and_array(self):
        assert paths_of({"a": {"b": 1}, "c": [{"d": 2}, {"e": 3}]}) == {
            "$.a", "$.a.b", "$.c", "$.c[*]", "$.c[*].d", "$.c[*].e",
        }

    def test_non_dot_safe_key_is_bracket_quoted(self):
        assert paths_of({"first.name": "x"}) == {'$["first.name"]'}

    def test_empty_array_emits_no_element_path(self):
        assert paths_of({"items": []}) == {"$.items"}

    def test_scalar_root_has_no_paths(self):
        assert paths_of(42) == set()

    def test_values_never_appear(self):
        paths = paths_of({"email": "person@example.org", "n": [1, 2, 3]})
        assert not any("person" in p or "example" in p for p in paths)

    def test_suffixed_json_content_type_supported(self):
        got = extract_paths(b'{"k":1}', "application/problem+json", CFG)
        assert got == {"$.k"}

    def test_content_type_parameters_ignored(self):
        assert extract_paths(b"{}", "application/json; charset=utf-8", CFG) == set()


class TestExtractErrors:
    def test_oversized_body(self):
        small = ExtractionConfig(max_body_bytes=4)
        with pytest.raises(BodyTooLarge):
            extract_paths(b'{"k":1}', "application/json", small)

    def test_unsupported_content_type(self):
        with pytest.raises(UnsupportedContentType):
            extract_paths(b"<k/>", "application/xml", CFG)

    def test_malformed_body(self):
        with pytest.raises(MalformedBody):
            extract_paths(b"{not json", "application/json", CFG)

    def test_non_utf8_body(self):
        with pytest.raises(MalformedBody):
            extract_paths(b'{"k": "\xff"}', "application/json", CFG)


class TestHeaderKeys:
    def test_deny_list_drops_authorization(self):
        got = extract_header_keys(
            [("Content-Type", "application/json"), ("Authorization", "Bearer x")], CFG
        )
        assert got == {"content-type"}

    def test_empty(self):
        assert extract_header_keys([], CFG) == set()

    def test_names_lowercased_values_dropped(self):
        assert extract_header_keys([("X-Request-Id", "abc")], CFG) == {"x-request-id"}

    def test_cookie_headers_withheld(self):
        got = extract_header_keys([("Cookie", "a=b"), ("Set-Cookie", "c=d")], CFG)
        assert got == set()


# ---------------------------------------------------------------------------
# Randomized properties
# ---------------------------------------------------------------------------

keys = st.text(
    alphabet=string.ascii_letters + string.digits + "_-. @\"\\", min_size=1, max_size=8
)
scalars = st.one_of(st.none(), st.booleans(), st.integers(), st.text(max_size=12))
documents = st.recursive(
    scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(keys, children, max_size=4),
    ),
    max_leaves=25,
)


@settings(max_examples=300, deadline=None)
@given(documents)
def test_matches_independent_oracle(document):
    assert paths_of(document) == oracle_paths(document)


@settings(max_examples=150, deadline=None)
@given(documents, st.randoms(use_true_random=False))
def test_values_do_not_change_structure(document, rng):
    def rewrite(node):
        if isinstance(node, dict):
            return {k: rewrite(v) for k, v in node.items()}
        if isinstance(node, list):
            return [rewrite(v) for v in node]
        return rng.choice([None, True, 0, 7.5, "SENTINEL-" + str(rng.random())])

    assert paths_of(document) == paths_of(rewrite(document))


@settings(max_examples=150, deadline=None)
@given(documents, st.integers())
def test_array_permutation_invariance(document, seed):
    rng = random.Random(seed)

    def shuffle(node):
        if isinstance(node, dict):
            return {k: shuffle(v) for k, v in node.items()}
        if isinstance(node, list):
            shuffled = [shuffle(v) for v in node]
            rng.shuffle(shuffled)
            return shuffled
        return node

    assert paths_of(document) == paths_of(shuffle(document))


@settings(max_examples=150, deadline=None)
@given(documents)
def test_planted_sentinel_values_never_leak(document):
    marker = "XyzzySentinel77"

    def plant(node):
        if isinstance(node, dict):
            return {k: plant(v) for k, v in node.items()}
        if isinstance(node, list):
            return [plant(v) for v in node]
        return marker

    for path in paths_of(plant(document)):
        assert marker not in path


# ---------------------------------------------------------------------------
# Record assembly
# ---------------------------------------------------------------------------


def _ctx():
    return ExchangeContext(
        request_id="r-1",
        http=HttpMeta("HTTP/1.1", "POST", "127.0.0.1:9000", "/orders"),
        endpoint=EndpointId("orders", "POST", "/orders"),
    )


class TestBuildRecord:
    def test_request_client_stage(self):
        record, anomaly = build_record(
            _ctx(), Phase.REQUEST, Side.CLIENT, 123, b'{"k":1}',
            [("Content-Type", "application/json")], CFG,
        )
        assert anomaly is None
        assert record.phase is Phase.REQUEST
        assert record.side is Side.CLIENT
        assert record.payload_paths == frozenset({"$.k"})
        assert record.payload_bytes == 7
        assert record.timestamp == 123

    def test_empty_body(self):
        record, anomaly = build_record(
            _ctx(), Phase.RESPONSE, Side.SERVER, 123, b"", [], CFG
        )
        assert anomaly is None
        assert record.payload_paths == frozenset()
        assert record.payload_bytes == 0

    def test_malformed_body_yields_anomaly_not_failure(self):
        record, anomaly = build_record(
            _ctx(), Phase.REQUEST, Side.SERVER, 123, b"{broken",
            [("Content-Type", "application/json")], CFG,
        )
        assert anomaly == "MALFORMED_BODY"
        assert record.payload_paths == frozenset()
        assert record.payload_bytes == len(b"{broken")

    def test_header_values_absent_from_record(self):
        secret = "Bearer very-secret-token"
        record, _ = build_record(
            _ctx(), Phase.REQUEST, Side.CLIENT, 123, b"",
            [("Authorization", secret), ("X-Trace", "t-1")], CFG,
        )
        assert record.header_keys == frozenset({"x-trace"})
        assert secret not in repr(record)
