import math

import pytest

from hawk.metrics import (
    Counter,
    DEFAULT_PAYLOAD_BUCKETS,
    Gauge,
    Histogram,
    Registry,
    parse_exposition,
)


class TestCounter:
    def test_starts_at_zero_and_accumulates(self):
        c = Counter("t_total")
        assert c.value() == 0
        c.inc()
        c.inc(2)
        assert c.value() == 3

    def test_negative_increment_rejected(self):
        with pytest.raises(ValueError):
            Counter("t_total").inc(-1)

    def test_labels_tracked_separately(self):
        c = Counter("t_total")
        c.inc(labels={"service": "a"})
        c.inc(5, labels={"service": "b"})
        assert c.value({"service": "a"}) == 1
        assert c.value({"service": "b"}) == 5

    def test_set_total_must_not_regress(self):
        c = Counter("t_total")
        c.set_total(10)
        c.set_total(10)
        with pytest.raises(ValueError):
            c.set_total(9)


class TestGauge:
    def test_set_and_move(self):
        g = Gauge("t")
        g.set(4)
        g.inc()
        g.dec(2)
        assert g.value() == 3


class TestHistogram:
    def test_buckets_must_increase(self):
        with pytest.raises(ValueError):
            Histogram("t", buckets=(10, 5))
        with pytest.raises(ValueError):
            Histogram("t", buckets=(5, 5))

    def test_observation_lands_in_one_bucket(self):
        h = Histogram("t", buckets=(256, 1024))
        h.observe(1000)
        # cumulative: nothing <=256, one <=1024
        assert h.bucket_count(256) == 0
        assert h.bucket_count(1024) == 1
        assert h.bucket_count(math.inf) == 1

    def test_exposition_buckets_are_cumulative(self):
        h = Histogram("hawk_payload_bytes", buckets=DEFAULT_PAYLOAD_BUCKETS)
        for value in (100, 1000, 5000, 2_000_000):
            h.observe(value)
        samples = {(name, le): v for name, _labels, v, le in h.samples()}
        assert samples[("hawk_payload_bytes_bucket", "256")] == 1
        assert samples[("hawk_payload_bytes_bucket", "1024")] == 2
        assert samples[("hawk_payload_bytes_bucket", "1048576")] == 3
        assert samples[("hawk_payload_bytes_bucket", "+Inf")] == 4
        assert samples[("hawk_payload_bytes_count", None)] == 4
        assert samples[("hawk_payload_bytes_sum", None)] == 2_006_100


class TestExposition:
    def test_render_and_parse_round_trip(self):
        registry = Registry()
        c = registry.counter("hawk_exchanges_total", "help text")
        c.inc(3, labels={"client": "a", "server": "b"})
        g = registry.gauge("hawk_unmapped_fields")
        g.set(7)
        h = registry.histogram("hawk_payload_bytes", buckets=(256, 1024))
        h.observe(100)

        text = registry.render()
        assert "# TYPE hawk_exchanges_total counter" in text
        assert "# HELP hawk_exchanges_total help text" in text

        samples = parse_exposition(text)
        key = ("hawk_exchanges_total", (("client", "a"), ("server", "b")))
        assert samples[key] == 3
        assert samples[("hawk_unmapped_fields", ())] == 7
        assert samples[("hawk_payload_bytes_bucket", (("le", "+Inf"),))] == 1
        assert samples[("hawk_payload_bytes_count", ())] == 1

    def test_label_values_escaped(self):
        registry = Registry()
        registry.counter("t_total").inc(labels={"path": 'a"b\\c'})
        samples = parse_exposition(registry.render())
        assert samples[("t_total", (("path", 'a"b\\c'),))] == 1
