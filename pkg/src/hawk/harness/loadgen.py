"""Open-loop load generation and comparative overhead benchmarking."""
from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Optional

import requests

from ..model import HawkError


@dataclass(frozen=True)
class LoadProfile:
    requests_per_second: float
    duration_seconds: float
    concurrent_clients: int = 16
    payload_bytes: int = 1024

    def __post_init__(self) -> None:
        if min(
            self.requests_per_second,
            self.duration_seconds,
            self.concurrent_clients,
            self.payload_bytes,
        ) <= 0:
            raise HawkError("all load profile values must be positive", code="BAD_PROFILE")

    @property
    def total_requests(self) -> int:
        return int(round(self.requests_per_second * self.duration_seconds))


def build_payload(payload_bytes: int, sentinel: str = "SENTINEL") -> bytes:
    """JSON body padded to approximately the requested size."""
    skeleton = {"user": {"id": "u-1001", "email": sentinel}, "note": sentinel, "pad": ""}
    overhead = len(json.dumps(skeleton).encode("utf-8"))
    skeleton["pad"] = "x" * max(0, payload_bytes - overhead)
    return json.dumps(skeleton).encode("utf-8")


def percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile over an ascending list."""
    if not sorted_values:
        return math.nan
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


def summarize_latencies(latencies_ms: list[float]) -> dict[str, float]:
    ordered = sorted(latencies_ms)
    return {
        "p50": percentile(ordered, 0.50),
        "p90": percentile(ordered, 0.90),
        "p99": percentile(ordered, 0.99),
    }


@dataclass(frozen=True)
class LoadReport:
    sent: int
    succeeded: int
    failed: int
    latencies_ms: dict[str, float]
    samples_ms: tuple[float, ...]

    def as_dict(self, include_samples: bool = False) -> dict[str, Any]:
        data: dict[str, Any] = {
            "sent": self.sent,
            "succeeded": self.succeeded,
            "failed": self.failed,
            "latenciesMs": self.latencies_ms,
        }
        if include_samples:
            data["samplesMs"] = list(self.samples_ms)
        return data


def run_load(
    url: str,
    profile: LoadProfile,
    method: str = "POST",
    body: Optional[bytes] = None,
    headers: Optional[dict[str, str]] = None,
) -> LoadReport:
    """Open-loop generation: requests are scheduled at the target rate on a
    shared timetable regardless of completion of earlier ones."""
    total = profile.total_requests
    payload = body if body is not None else build_payload(profile.payload_bytes)
    request_headers = {"Content-Type": "application/json", **(headers or {})}
    interval = 1.0 / profile.requests_per_second
    start = time.monotonic()

    next_index = [0]
    index_lock = threading.Lock()
    results: list[tuple[float, bool]] = []
    results_lock = threading.Lock()

    def worker() -> None:
        session = requests.Session()
        while True:
            with index_lock:
                i = next_index[0]
                if i >= total:
                    return
                next_index[0] += 1
            target_time = start + i * interval
            delay = target_time - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            begin = time.monotonic()
            try:
                response = session.request(
                    method, url, data=payload, headers=request_headers, timeout=30
                )
                ok = response.status_code < 500
            except requests.RequestException:
                ok = False
            elapsed_ms = (time.monotonic() - begin) * 1000.0
            with results_lock:
                results.append((elapsed_ms, ok))

    threads = [
        threading.Thread(target=worker, daemon=True)
        for _ in range(profile.concurrent_clients)
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    latencies = [ms for ms, ok in results if ok]
    succeeded = len(latencies)
    return LoadReport(
        sent=len(results),
        succeeded=succeeded,
        failed=len(results) - succeeded,
        latencies_ms=summarize_latencies(latencies) if latencies else {},
        samples_ms=tuple(ms for ms, _ in results),
    )


def bench_overhead(
    direct_url: str,
    proxied_url: str,
    profile: LoadProfile,
    samples_path: str,
    body: Optional[bytes] = None,
) -> dict[str, Any]:
    """Run an identical load with and without the intercept path and report
    per-percentile ratios. Raw samples go to ``samples_path`` so the report
    can be recomputed deterministically."""
    direct = run_load(direct_url, profile, body=body)
    proxied = run_load(proxied_url, profile, body=body)
    with open(samples_path, "w") as handle:
        json.dump(
            {
                "profile": {
                    "requestsPerSecond": profile.requests_per_second,
                    "durationSeconds": profile.duration_seconds,
                    "concurrentClients": profile.concurrent_clients,
                    "payloadBytes": profile.payload_bytes,
                },
                "directSamplesMs": list(direct.samples_ms),
                "proxiedSamplesMs": list(proxied.samples_ms),
            },
            handle,
        )
    return overhead_report_from_samples(samples_path) | {"samplesFile": samples_path}


def overhead_report_from_samples(samples_path: str) -> dict[str, Any]:
    """Recompute the overhead report from a raw samples file."""
    with open(samples_path) as handle:
        data = json.load(handle)
    direct = summarize_latencies(list(data["directSamplesMs"]))
    proxied = summarize_latencies(list(data["proxiedSamplesMs"]))
    ratio = {
        key: (proxied[key] / direct[key]) if direct.get(key) else math.nan
        for key in ("p50", "p90", "p99")
    }
    return {"direct": direct, "proxied": proxied, "ratio": ratio}
