"""Counter, gauge, and histogram primitives plus text exposition rendering.

The exposition output follows the plain-text format v0.0.4 understood by
common scrapers: ``# HELP`` / ``# TYPE`` comment lines followed by sample
lines with optional labels, cumulative ``le`` buckets plus ``_sum`` and
``_count`` series for histograms.
"""
from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

LabelValues = tuple[tuple[str, str], ...]

DEFAULT_PAYLOAD_BUCKETS = (256.0, 1024.0, 4096.0, 16384.0, 65536.0, 262144.0, 1048576.0)


def _labels_key(labels: Optional[Mapping[str, str]]) -> LabelValues:
    if not labels:
        return ()
    return tuple(sorted(labels.items()))


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def _render_labels(labels: LabelValues, extra: Optional[tuple[str, str]] = None) -> str:
    pairs = list(labels)
    if extra is not None:
        pairs.append(extra)
    if not pairs:
        return ""
    inner = ",".join(f'{name}="{_escape(value)}"' for name, value in pairs)
    return "{" + inner + "}"


def _format_value(value: float) -> str:
    if value == math.inf:
        return "+Inf"
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


class Counter:
    """Monotonically non-decreasing between explicit resets."""

    kind = "counter"

    def __init__(self, name: str, help_text: str = ""):
        self.name = name
        self.help_text = help_text
        self._values: dict[LabelValues, float] = {}
        self._lock = threading.Lock()

    def inc(self, amount: float = 1.0, labels: Optional[Mapping[str, str]] = None) -> None:
        if amount < 0:
            raise ValueError("counter increments must be non-negative")
        key = _labels_key(labels)
        with self._lock:
            self._values[key] = self._values.get(key, 0.0) + amount

    def set_total(self, value: float, labels: Optional[Mapping[str, str]] = None) -> None:
        """Install an externally computed running total; must not regress."""
        key = _labels_key(labels)
        with self._lock:
            if value < self._values.get(key, 0.0):
                raise ValueError("counter totals must be non-decreasing")
            self._values[key] = value

    def reset(self) -> None:
        with self._lock:
            self._values.clear()

    def value(self, labels: Optional[Mapping[str, str]] = None) -> float:
        return self._values.get(_labels_key(labels), 0.0)

    def samples(self) -> Iterable[tuple[str, LabelValues, float]]:
        with self._lock:
            items = sorted(self._values.items())
        for labels, value in items:
            yield self.name, labels, value


class Gauge:
    kind = "gauge"

    def __init__(self, name: str, help_text: str = ""):
        self.name = name
        self.help_text = help_text
        self._values: dict[LabelValues, float] = {}
        self._lock = threading.Lock()

    def set(self, value: float, labels: Optional[Mapping[str, str]] = None) -> None:
        with self._lock:
            self._values[_labels_key(labels)] = float(value)

    def inc(self, amount: float = 1.0, labels: Optional[Mapping[str, str]] = None) -> None:
        key = _labels_key(labels)
        with self._lock:
            self._values[key] = self._values.get(key, 0.0) + amount

    def dec(self, amount: float = 1.0, labels: Optional[Mapping[str, str]] = None) -> None:
        self.inc(-amount, labels)

    def value(self, labels: Optional[Mapping[str, str]] = None) -> float:
        return self._values.get(_labels_key(labels), 0.0)

    def samples(self) -> Iterable[tuple[str, LabelValues, float]]:
        with self._lock:
            items = sorted(self._values.items())
        for labels, value in items:
            yield self.name, labels, value


@dataclass
class _HistogramState:
    bucket_counts: list[float]
    total: float = 0.0
    count: float = 0.0


class Histogram:
    """Each observation lands in exactly one bucket; exposition is cumulative."""

    kind = "histogram"

    def __init__(
        self,
        name: str,
        buckets: Sequence[float] = DEFAULT_PAYLOAD_BUCKETS,
        help_text: str = "",
    ):
        if list(buckets) != sorted(buckets) or len(set(buckets)) != len(buckets):
            raise ValueError("buckets must be strictly increasing")
        self.name = name
        self.help_text = help_text
        self.buckets = tuple(float(b) for b in buckets)
        self._states: dict[LabelValues, _HistogramState] = {}
        self._lock = threading.Lock()

    def observe(self, value: float, labels: Optional[Mapping[str, str]] = None) -> None:
        key = _labels_key(labels)
        with self._lock:
            state = self._states.get(key)
            if state is None:
                state = _HistogramState(bucket_counts=[0.0] * (len(self.buckets) + 1))
                self._states[key] = state
            index = len(self.buckets)  # +Inf bucket
            for i, bound in enumerate(self.buckets):
                if value <= bound:
                    index = i
                    break
            state.bucket_counts[index] += 1
            state.total += value
            state.count += 1

    def bucket_count(self, le: float, labels: Optional[Mapping[str, str]] = None) -> float:
        """Cumulative count of observations <= le (must be a bound or inf)."""
        state = self._states.get(_labels_key(labels))
        if state is None:
            return 0.0
        cumulative = 0.0
        for i, bound in enumerate(self.buckets):
            cumulative += state.bucket_counts[i]
            if bound == le:
                return cumulative
        return cumulative + state.bucket_counts[-1]

    def samples(self) -> Iterable[tuple[str, LabelValues, float, Optional[str]]]:
        with self._lock:
            items = sorted(
                (labels, _HistogramState(list(s.bucket_counts), s.total, s.count))
                for labels, s in self._states.items()
            )
        for labels, state in items:
            cumulative = 0.0
            for i, bound in enumerate(self.buckets):
                cumulative += state.bucket_counts[i]
                yield f"{self.name}_bucket", labels, cumulative, _format_value(bound)
            cumulative += state.bucket_counts[-1]
            yield f"{self.name}_bucket", labels, cumulative, "+Inf"
            yield f"{self.name}_sum", labels, state.total, None
            yield f"{self.name}_count", labels, state.count, None


Metric = Counter | Gauge | Histogram


class Registry:
    def __init__(self) -> None:
        self._metrics: list[Metric] = []

    def register(self, metric: Metric) -> Metric:
        self._metrics.append(metric)
        return metric

    def counter(self, name: str, help_text: str = "") -> Counter:
        return self.register(Counter(name, help_text))  # type: ignore[return-value]

    def gauge(self, name: str, help_text: str = "") -> Gauge:
        return self.register(Gauge(name, help_text))  # type: ignore[return-value]

    def histogram(
        self, name: str, buckets: Sequence[float] = DEFAULT_PAYLOAD_BUCKETS, help_text: str = ""
    ) -> Histogram:
        return self.register(Histogram(name, buckets, help_text))  # type: ignore[return-value]

    def render(self) -> str:
        lines: list[str] = []
        for metric in self._metrics:
            if metric.help_text:
                lines.append(f"# HELP {metric.name} {metric.help_text}")
            lines.append(f"# TYPE {metric.name} {metric.kind}")
            if isinstance(metric, Histogram):
                for name, labels, value, le in metric.samples():
                    extra = ("le", le) if le is not None else None
                    lines.append(f"{name}{_render_labels(labels, extra)} {_format_value(value)}")
            else:
                for name, labels, value in metric.samples():
                    lines.append(f"{name}{_render_labels(labels)} {_format_value(value)}")
        return "\n".join(lines) + "\n"


def parse_exposition(text: str) -> dict[tuple[str, LabelValues], float]:
    """Parse exposition text back into {(name, labels): value} samples."""
    samples: dict[tuple[str, LabelValues], float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name_part, value_part = line.rsplit(" ", 1)
        if "{" in name_part:
            name, label_part = name_part.split("{", 1)
            label_part = label_part.rstrip("}")
            labels = []
            for item in re.findall(r'(\w+)="((?:[^"\\]|\\.)*)"', label_part):
                raw = item[1].replace("\\n", "\n").replace('\\"', '"').replace("\\\\", "\\")
                labels.append((item[0], raw))
            key = (name, tuple(sorted(labels)))
        else:
            key = (name_part, ())
        value = math.inf if value_part == "+Inf" else float(value_part)
        samples[key] = value
    return samples
