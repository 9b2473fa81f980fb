"""Canary release analysis: progressive traffic shifting gated on privacy
metrics, with automatic promotion or rollback.

The transition function is pure and fail-closed: a missing metric value
counts as a breach, and breaches must be consecutive to trigger rollback.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Mapping, Optional, Protocol

import requests

from ..metrics import parse_exposition
from ..model import HawkError

log = logging.getLogger(__name__)


class Comparator(str, Enum):
    LT = "LT"
    LE = "LE"
    GT = "GT"
    GE = "GE"

    def holds(self, value: float, bound: float) -> bool:
        if self is Comparator.LT:
            return value < bound
        if self is Comparator.LE:
            return value <= bound
        if self is Comparator.GT:
            return value > bound
        return value >= bound


class CanaryPhase(str, Enum):
    DEPLOYING = "deploying"
    SHIFTING = "shifting"
    OBSERVING = "observing"
    PROMOTED = "promoted"
    ROLLED_BACK = "rolled_back"


TERMINAL_PHASES = frozenset({CanaryPhase.PROMOTED, CanaryPhase.ROLLED_BACK})


@dataclass(frozen=True)
class ThresholdRule:
    metric_query: str
    comparator: Comparator
    bound: float
    window_seconds: int = 30


@dataclass(frozen=True)
class CanaryConfig:
    step_weight_percent: int = 10
    max_weight_percent: int = 50
    interval_seconds: int = 30
    failure_threshold: int = 3
    rules: tuple[ThresholdRule, ...] = ()

    def __post_init__(self) -> None:
        if not (0 < self.step_weight_percent <= self.max_weight_percent <= 100):
            raise ValueError("need 0 < step <= max <= 100")
        if self.failure_threshold < 1:
            raise ValueError("failure_threshold must be >= 1")
        if not self.rules:
            raise ValueError("at least one threshold rule is required")


def decode_canary_config(data: Mapping[str, Any]) -> CanaryConfig:
    return CanaryConfig(
        step_weight_percent=int(data.get("stepWeightPercent", 10)),
        max_weight_percent=int(data.get("maxWeightPercent", 50)),
        interval_seconds=int(data.get("intervalSeconds", 30)),
        failure_threshold=int(data.get("failureThreshold", 3)),
        rules=tuple(
            ThresholdRule(
                metric_query=str(r["metricQuery"]),
                comparator=Comparator(r["comparator"].upper()),
                bound=float(r["bound"]),
                window_seconds=int(r.get("windowSeconds", 30)),
            )
            for r in data["rules"]
        ),
    )


@dataclass(frozen=True)
class CanaryState:
    phase: CanaryPhase = CanaryPhase.DEPLOYING
    current_weight_percent: int = 0
    consecutive_failures: int = 0
    iteration: int = 0
    decision_log: tuple[dict[str, Any], ...] = ()

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES


def _breached_rules(
    config: CanaryConfig, snapshot: Optional[Mapping[str, float]]
) -> list[str]:
    breached = []
    for rule in config.rules:
        value = None if snapshot is None else snapshot.get(rule.metric_query)
        if value is None or not rule.comparator.holds(value, rule.bound):
            breached.append(rule.metric_query)
    return breached


def canary_tick(
    state: CanaryState,
    config: CanaryConfig,
    snapshot: Optional[Mapping[str, float]],
    timestamp: Optional[int] = None,
) -> CanaryState:
    """One analysis step. Total over non-terminal states.

    All rules passing resets the failure streak and shifts one step of
    weight; passing beyond the maximum weight promotes. Any breach (or a
    missing metric value, fail-closed) counts toward the consecutive
    failure budget; exhausting it rolls back to weight zero.
    """
    if state.terminal:
        raise HawkError("tick on terminal canary state", code="TERMINAL_STATE")
    ts = timestamp if timestamp is not None else int(time.time() * 1000)
    breached = _breached_rules(config, snapshot)
    iteration = state.iteration + 1
    snapshot_view = dict(snapshot) if snapshot is not None else None

    if not breached:
        if state.current_weight_percent + config.step_weight_percent > config.max_weight_percent:
            event = {
                "timestamp": ts,
                "iteration": iteration,
                "event": "promoted",
                "weight": state.current_weight_percent,
                "snapshot": snapshot_view,
            }
            return replace(
                state,
                phase=CanaryPhase.PROMOTED,
                consecutive_failures=0,
                iteration=iteration,
                decision_log=state.decision_log + (event,),
            )
        new_weight = state.current_weight_percent + config.step_weight_percent
        event = {
            "timestamp": ts,
            "iteration": iteration,
            "event": "shifted",
            "weight": new_weight,
            "snapshot": snapshot_view,
        }
        return replace(
            state,
            phase=CanaryPhase.OBSERVING,
            current_weight_percent=new_weight,
            consecutive_failures=0,
            iteration=iteration,
            decision_log=state.decision_log + (event,),
        )

    failures = state.consecutive_failures + 1
    if failures >= config.failure_threshold:
        event = {
            "timestamp": ts,
            "iteration": iteration,
            "event": "rolled_back",
            "weight": 0,
            "breached": breached,
            "snapshot": snapshot_view,
        }
        return replace(
            state,
            phase=CanaryPhase.ROLLED_BACK,
            current_weight_percent=0,
            consecutive_failures=failures,
            iteration=iteration,
            decision_log=state.decision_log + (event,),
        )
    event = {
        "timestamp": ts,
        "iteration": iteration,
        "event": "breach",
        "weight": state.current_weight_percent,
        "breached": breached,
        "snapshot": snapshot_view,
    }
    return replace(
        state,
        phase=CanaryPhase.OBSERVING,
        consecutive_failures=failures,
        iteration=iteration,
        decision_log=state.decision_log + (event,),
    )


# ---------------------------------------------------------------------------
# Analysis loop
# ---------------------------------------------------------------------------


class MetricSource(Protocol):
    def sample(self) -> Optional[Mapping[str, float]]:
        """Values per rule metricQuery, or None when unreachable."""


class TrafficSplitterControl(Protocol):
    def set_weight(self, canary_percent: int) -> None: ...


class Clock(Protocol):
    def sleep(self, seconds: float) -> None: ...

    def now_ms(self) -> int: ...


class WallClock:
    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)

    def now_ms(self) -> int:
        return int(time.time() * 1000)


class LogicalClock:
    """Deterministic clock for simulation: advances only on sleep()."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def sleep(self, seconds: float) -> None:
        self._now += int(seconds * 1000)

    def now_ms(self) -> int:
        return self._now


def run_analysis(
    config: CanaryConfig,
    metric_source: MetricSource,
    splitter: TrafficSplitterControl,
    clock: Optional[Clock] = None,
    on_interval: Optional[Callable[[CanaryState], None]] = None,
) -> CanaryState:
    """Drive a canary to a terminal state.

    Each iteration observes the metrics, ticks the transition function,
    then applies the resulting weight to the splitter before the next
    observation window. Promotion routes 100% to the new version; rollback
    restores the old one. ``on_interval`` runs once per observation window
    (the harness uses it to generate traffic).
    """
    clock = clock or WallClock()
    state = CanaryState(phase=CanaryPhase.SHIFTING)
    while True:
        try:
            snapshot = metric_source.sample()
        except Exception:
            log.warning("metric source unreachable; treating as breach", exc_info=True)
            snapshot = None
        state = canary_tick(state, config, snapshot, timestamp=clock.now_ms())
        if state.phase is CanaryPhase.PROMOTED:
            splitter.set_weight(100)
            return state
        if state.phase is CanaryPhase.ROLLED_BACK:
            splitter.set_weight(0)
            return state
        splitter.set_weight(state.current_weight_percent)
        if on_interval is not None:
            on_interval(state)
        clock.sleep(config.interval_seconds)


def decision_log_ndjson(state: CanaryState) -> str:
    return "".join(json.dumps(event, sort_keys=True) + "\n" for event in state.decision_log)


# ---------------------------------------------------------------------------
# Metric sources and splitter client over the registry's HTTP surface
# ---------------------------------------------------------------------------

UNMAPPED_FIELDS = "UNMAPPED_FIELDS"
THIRD_COUNTRY_RATE = "THIRD_COUNTRY_RATE"
PURPOSE_VIOLATIONS_RATE = "PURPOSE_VIOLATIONS_RATE"


class RegistryMetricSource:
    """Answers rule queries from the registry's /metrics and /v1/unmapped.

    RATE queries report the counter increase since the previous sample
    (fail-closed: the very first sample reports the absolute value).
    """

    def __init__(self, base_url: str, queries: tuple[str, ...]):
        self.base_url = base_url.rstrip("/")
        self.queries = queries
        self._previous: dict[str, float] = {}
        self._session = requests.Session()

    def _counter_sum(self, samples: Mapping, name: str, label: Optional[tuple[str, str]] = None) -> float:
        total = 0.0
        for (sample_name, labels), value in samples.items():
            if sample_name != name:
                continue
            if label is not None and label not in labels:
                continue
            total += value
        return total

    def sample(self) -> Optional[Mapping[str, float]]:
        try:
            response = self._session.get(self.base_url + "/metrics", timeout=5)
            response.raise_for_status()
            samples = parse_exposition(response.text)
        except requests.RequestException:
            return None
        values: dict[str, float] = {}
        for query in self.queries:
            if query == UNMAPPED_FIELDS:
                values[query] = self._counter_sum(samples, "hawk_unmapped_fields")
            elif query == THIRD_COUNTRY_RATE:
                current = self._counter_sum(
                    samples, "hawk_third_country_requests_total", ("class", "non_eu")
                )
                values[query] = current - self._previous.get(query, 0.0)
                self._previous[query] = current
            elif query == PURPOSE_VIOLATIONS_RATE:
                current = self._counter_sum(samples, "hawk_purpose_violations_total")
                values[query] = current - self._previous.get(query, 0.0)
                self._previous[query] = current
            else:
                # Raw sample reference: "name" or "name{label=value}".
                if "{" in query:
                    name, label_part = query.split("{", 1)
                    key, value = label_part.rstrip("}").split("=", 1)
                    values[query] = self._counter_sum(samples, name, (key, value.strip('"')))
                else:
                    values[query] = self._counter_sum(samples, query)
        return values


class HttpSplitterControl:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")
        self.history: list[int] = []

    def set_weight(self, canary_percent: int) -> None:
        requests.post(
            self.base_url + "/control/weight",
            json={"canaryPercent": canary_percent},
            timeout=5,
        ).raise_for_status()
        self.history.append(canary_percent)
