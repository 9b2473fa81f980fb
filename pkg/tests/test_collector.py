import base64
import json
import os
import time

import pytest
import requests

from hawk.collector import Collector, DeadLetter, Spool, serve_collector
from hawk.core import CoreRegistry, serve_core
from hawk.model import encode_record
from tests.conftest import make_record


def batch(*records):
    return json.dumps([encode_record(r) for r in records]).encode("utf-8")


def raw_batch(*items):
    return json.dumps(list(items)).encode("utf-8")


@pytest.fixture
def core_server():
    registry = CoreRegistry()
    server = serve_core(registry)
    yield registry, server
    server.stop()


@pytest.fixture
def collector(tmp_path, core_server):
    _registry, server = core_server
    instance = Collector(str(tmp_path / "spool"), server.url + "/v1/records")
    yield instance
    instance.stop()


class TestIngestion:
    def test_all_valid(self, collector):
        report = collector.ingest(batch(
            make_record(request_id="a"),
            make_record(request_id="b"),
            make_record(request_id="c"),
        ))
        assert report.as_dict() == {"accepted": 3, "deadLettered": 0}

    def test_mixed_batch_dead_letters_the_invalid_record(self, collector):
        report = collector.ingest(batch(
            make_record(request_id="a"),
            make_record(request_id=""),
            make_record(request_id="b"),
        ))
        assert report.accepted == 2
        assert report.dead_lettered == 1
        (entry,) = collector.dead_letters.page()
        assert entry.violations == ("EMPTY_REQUEST_ID",)

    def test_empty_batch(self, collector):
        report = collector.ingest(b"[]")
        assert (report.accepted, report.dead_lettered) == (0, 0)

    def test_undecodable_batch_dead_lettered_whole(self, collector):
        report = collector.ingest(b"{not json at all")
        assert report.dead_lettered == 1
        (entry,) = collector.dead_letters.page()
        assert entry.raw_payload == b"{not json at all"
        assert entry.violations == ("UNDECODABLE_BATCH",)

    def test_undecodable_record_kept_verbatim(self, collector):
        payload = {"requestId": "x", "phase": "sideways"}
        collector.ingest(raw_batch(payload))
        (entry,) = collector.dead_letters.page()
        assert json.loads(entry.raw_payload) == payload
        assert entry.violations == ("DECODE_ERROR",)

    def test_conservation_over_many_batches(self, collector):
        for i in range(20):
            records = [encode_record(make_record(request_id=f"r-{i}-{j}")) for j in range(5)]
            if i % 3 == 0:
                records[2]["timestamp"] = -5  # planted invalid
            collector.ingest(json.dumps(records).encode())
        assert (
            collector.accepted_total + collector.dead_lettered_total
            == collector.received_total
            == 100
        )


class TestForwarding:
    def test_records_reach_core_and_deduplicate(self, collector, core_server):
        registry, _server = core_server
        record = make_record(request_id="dup")
        collector.ingest(batch(record))
        collector.ingest(batch(record))  # redelivery
        assert collector.forward_once() == 2
        assert registry.store.count() == 1  # dedup on (requestId, phase, side)

    def test_forward_commits_offset(self, collector):
        collector.ingest(batch(make_record(request_id="a")))
        assert not collector.drained()
        collector.forward_once()
        assert collector.drained()
        assert collector.forward_once() == 0  # nothing left

    def test_core_down_then_recovery_loses_nothing(self, tmp_path):
        registry = CoreRegistry()
        server = serve_core(registry)
        server.stop()  # core down from the start
        down = Collector(str(tmp_path / "s"), server.url + "/v1/records")
        down.ingest(batch(make_record(request_id="a"), make_record(request_id="b")))
        with pytest.raises(Exception):
            down.forward_once()
        assert not down.drained()

        # recovery: same spool, reachable core
        recovered_registry = CoreRegistry()
        recovered = serve_core(recovered_registry)
        try:
            up = Collector(str(tmp_path / "s"), recovered.url + "/v1/records")
            while up.forward_once():
                pass
            assert recovered_registry.store.count() == 2
            assert up.drained()
            up.stop()
        finally:
            down.stop()
            recovered.stop()

    def test_crash_between_ack_and_forward_replays_from_spool(self, tmp_path, core_server):
        registry, server = core_server
        first = Collector(str(tmp_path / "s"), server.url + "/v1/records")
        first.ingest(batch(*[make_record(request_id=f"r-{i}") for i in range(10)]))
        # simulated crash: acknowledged to the proxy, never forwarded
        first.spool.close()

        replacement = Collector(str(tmp_path / "s"), server.url + "/v1/records")
        while replacement.forward_once():
            pass
        assert registry.store.count() == 10
        replacement.stop()


class TestSpool:
    def test_offset_survives_reopen(self, tmp_path):
        spool = Spool(str(tmp_path))
        spool.append_many([make_record(request_id=str(i)) for i in range(3)])
        _records, position = spool.read_from(0, 2)
        spool.commit_offset(position)
        spool.close()

        reopened = Spool(str(tmp_path))
        remaining, _ = reopened.read_from(reopened.committed_offset(), 100)
        assert [r.request_id for r in remaining] == ["2"]
        reopened.close()

    def test_partial_trailing_line_ignored(self, tmp_path):
        spool = Spool(str(tmp_path))
        spool.append(make_record(request_id="whole"))
        with open(spool.path, "ab") as handle:
            handle.write(b'{"half')  # torn write, no newline
        records, position = spool.read_from(0, 100)
        assert [r.request_id for r in records] == ["whole"]
        assert position < os.path.getsize(spool.path)
        spool.close()


class TestDeadLetterPagination:
    def test_page_size_two_over_five(self, tmp_path):
        collector = Collector(str(tmp_path), "http://127.0.0.1:1/v1/records")
        for i in range(5):
            collector.dead_letters.append(
                DeadLetter(f"p{i}".encode(), ("E",), received_at=1000 + i, source="t")
            )
        pages = [collector.dead_letters.page(page=p, size=2) for p in range(3)]
        assert [len(p) for p in pages] == [2, 2, 1]
        flattened = [e.raw_payload for page in pages for e in page]
        assert flattened == [b"p0", b"p1", b"p2", b"p3", b"p4"]
        collector.stop()

    def test_time_range_filter(self, tmp_path):
        collector = Collector(str(tmp_path), "http://127.0.0.1:1/v1/records")
        for ts in (100, 200, 300):
            collector.dead_letters.append(DeadLetter(b"x", ("E",), ts, "t"))
        assert len(collector.dead_letters.page(from_ms=150, to_ms=250)) == 1
        collector.stop()

    def test_entries_survive_restart(self, tmp_path):
        first = Collector(str(tmp_path), "http://127.0.0.1:1/v1/records")
        first.dead_letters.append(DeadLetter(b"audit-me", ("E",), 1, "t"))
        first.stop()
        second = Collector(str(tmp_path), "http://127.0.0.1:1/v1/records")
        assert second.dead_letters.page()[0].raw_payload == b"audit-me"
        second.stop()


class TestHttpSurface:
    def test_ingest_and_health_over_http(self, tmp_path, core_server):
        _registry, core = core_server
        collector = Collector(str(tmp_path / "s"), core.url + "/v1/records")
        server = serve_collector(collector)
        try:
            response = requests.post(
                server.url + "/v1/records",
                data=batch(make_record(request_id="a"), make_record(request_id="")),
                timeout=5,
            )
            assert response.json() == {"accepted": 1, "deadLettered": 1}

            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                health = requests.get(server.url + "/-/health", timeout=5).json()
                if health["drained"]:
                    break
                time.sleep(0.02)
            assert health["received"] == 2
            assert health["accepted"] == 1
            assert health["deadLettered"] == 1

            letters = requests.get(server.url + "/v1/deadletters", timeout=5).json()
            assert letters["total"] == 1
            raw = base64.b64decode(letters["entries"][0]["rawPayload"])
            assert json.loads(raw)["requestId"] == ""
        finally:
            server.stop()
            collector.stop()

    def test_oversized_body_rejected(self, tmp_path, core_server):
        _registry, core = core_server
        collector = Collector(str(tmp_path / "s"), core.url + "/v1/records")
        server = serve_collector(collector)
        try:
            response = requests.post(
                server.url + "/v1/records",
                data=b"[" + b" " * (10 * 1024 * 1024) + b"]",
                timeout=30,
            )
            assert response.status_code == 413
            assert collector.received_total == 0
        finally:
            server.stop()
            collector.stop()

    def test_batch_over_limit_rejected(self, tmp_path, core_server):
        _registry, core = core_server
        collector = Collector(str(tmp_path / "s"), core.url + "/v1/records")
        server = serve_collector(collector)
        try:
            oversize = [encode_record(make_record(request_id=str(i))) for i in range(1001)]
            response = requests.post(
                server.url + "/v1/records", json=oversize, timeout=30
            )
            assert response.status_code == 400
            assert response.json()["error"] == "BATCH_TOO_LARGE"
        finally:
            server.stop()
            collector.stop()
