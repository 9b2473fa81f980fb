"""Record persistence behind a small repository interface.

Two implementations share the same contract: an in-memory store for tests
and an embedded SQLite store for runtime use. Both deduplicate on the
natural key (requestId, phase, side), making inserts idempotent under
redelivery.
"""
from __future__ import annotations

import sqlite3
import threading
from abc import ABC, abstractmethod
from typing import Iterable, Optional

from .model import TrafficRecord, record_from_json, record_to_json


class RecordStore(ABC):
    @abstractmethod
    def insert_many(self, records: Iterable[TrafficRecord]) -> int:
        """Insert records, skipping duplicates; returns how many were new."""

    @abstractmethod
    def query(
        self, from_ms: Optional[int] = None, to_ms: Optional[int] = None
    ) -> list[TrafficRecord]:
        """Time-range scan over the timestamp index, inclusive bounds."""

    @abstractmethod
    def count(self) -> int: ...

    def insert(self, record: TrafficRecord) -> bool:
        return self.insert_many([record]) == 1


class InMemoryStore(RecordStore):
    def __init__(self) -> None:
        self._rows: dict[tuple, TrafficRecord] = {}
        self._lock = threading.Lock()

    def insert_many(self, records: Iterable[TrafficRecord]) -> int:
        inserted = 0
        with self._lock:
            for record in records:
                key = record.dedup_key
                if key not in self._rows:
                    self._rows[key] = record
                    inserted += 1
        return inserted

    def query(
        self, from_ms: Optional[int] = None, to_ms: Optional[int] = None
    ) -> list[TrafficRecord]:
        with self._lock:
            rows = list(self._rows.values())
        return sorted(
            (
                r
                for r in rows
                if (from_ms is None or r.timestamp >= from_ms)
                and (to_ms is None or r.timestamp <= to_ms)
            ),
            key=lambda r: (r.timestamp, r.request_id, r.side.value, r.phase.value),
        )

    def count(self) -> int:
        with self._lock:
            return len(self._rows)


class SqliteStore(RecordStore):
    def __init__(self, path: str):
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock:
            self._conn.execute(
                """
                CREATE TABLE IF NOT EXISTS records (
                    request_id TEXT NOT NULL,
                    phase TEXT NOT NULL,
                    side TEXT NOT NULL,
                    ts INTEGER NOT NULL,
                    wire TEXT NOT NULL,
                    PRIMARY KEY (request_id, phase, side)
                )
                """
            )
            self._conn.execute("CREATE INDEX IF NOT EXISTS idx_records_ts ON records (ts)")
            self._conn.commit()

    def insert_many(self, records: Iterable[TrafficRecord]) -> int:
        rows = [
            (r.request_id, r.phase.value, r.side.value, r.timestamp, record_to_json(r))
            for r in records
        ]
        if not rows:
            return 0
        with self._lock:
            before = self._conn.total_changes
            self._conn.executemany(
                "INSERT OR IGNORE INTO records (request_id, phase, side, ts, wire)"
                " VALUES (?, ?, ?, ?, ?)",
                rows,
            )
            self._conn.commit()
            return self._conn.total_changes - before

    def query(
        self, from_ms: Optional[int] = None, to_ms: Optional[int] = None
    ) -> list[TrafficRecord]:
        clauses = []
        args: list[int] = []
        if from_ms is not None:
            clauses.append("ts >= ?")
            args.append(from_ms)
        if to_ms is not None:
            clauses.append("ts <= ?")
            args.append(to_ms)
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        with self._lock:
            cursor = self._conn.execute(
                f"SELECT wire FROM records{where} ORDER BY ts, request_id, side, phase", args
            )
            rows = cursor.fetchall()
        return [record_from_json(wire) for (wire,) in rows]

    def count(self) -> int:
        with self._lock:
            (n,) = self._conn.execute("SELECT COUNT(*) FROM records").fetchone()
        return n

    def close(self) -> None:
        with self._lock:
            self._conn.close()
