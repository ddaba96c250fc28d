"""Embedded transactional store backing the orchestrator and analysis engine.

Single sqlite database in WAL mode under the service data directory. All
mutations run inside explicit transactions serialized by one process-wide
lock; readers take the same lock, so every read sees a consistent snapshot.
The schema version is recorded on creation and checked on every open.
"""

from __future__ import annotations

import contextlib
import dataclasses
import json
import sqlite3
import threading
from pathlib import Path

from .model import (
    ExperimentInstance,
    ExperimentStatus,
    LogLevel,
    LogRecord,
    MetricRecord,
    Study,
    StudyStatus,
    StudyTemplate,
    assignment_from_doc,
    assignment_to_doc,
    instance_from_doc,
    study_from_doc,
    study_to_doc,
    template_from_doc,
    template_to_doc,
)

SCHEMA_VERSION = 1

_UNSET = object()

_SCHEMA = """
CREATE TABLE meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE templates (
    id TEXT PRIMARY KEY,
    doc TEXT NOT NULL,
    created_at REAL NOT NULL
);
CREATE TABLE studies (
    id TEXT PRIMARY KEY,
    template_id TEXT NOT NULL REFERENCES templates(id),
    doc TEXT NOT NULL,
    status TEXT NOT NULL,
    created_at REAL NOT NULL
);
CREATE TABLE experiments (
    id TEXT PRIMARY KEY,
    study_id TEXT NOT NULL REFERENCES studies(id),
    combo_index INTEGER NOT NULL,
    repetition_index INTEGER NOT NULL,
    assignment TEXT NOT NULL,
    seed TEXT NOT NULL,
    status TEXT NOT NULL,
    attempt INTEGER NOT NULL DEFAULT 0,
    exit_detail TEXT,
    started_at REAL,
    finished_at REAL,
    UNIQUE (study_id, combo_index, repetition_index)
);
CREATE INDEX experiments_by_status ON experiments (status, study_id);
CREATE TABLE workers (
    id TEXT PRIMARY KEY,
    labels TEXT NOT NULL,
    last_heartbeat REAL NOT NULL,
    current_experiment TEXT
);
CREATE TABLE leases (
    experiment_id TEXT PRIMARY KEY REFERENCES experiments(id),
    worker_id TEXT NOT NULL UNIQUE REFERENCES workers(id),
    granted_at REAL NOT NULL,
    expires_at REAL NOT NULL,
    attempt INTEGER NOT NULL
);
CREATE TABLE metrics (
    experiment_id TEXT NOT NULL,
    metric TEXT NOT NULL,
    seq INTEGER NOT NULL,
    value REAL NOT NULL,
    wall_offset_ms INTEGER NOT NULL,
    PRIMARY KEY (experiment_id, metric, seq)
);
CREATE TABLE logs (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    experiment_id TEXT NOT NULL,
    level TEXT NOT NULL,
    message TEXT NOT NULL,
    wall_offset_ms INTEGER NOT NULL
);
"""


class SchemaMismatchError(RuntimeError):
    """The on-disk store was written by an incompatible release."""


class Store:
    """Thread-safe data access layer over the embedded database."""

    def __init__(self, path: str | Path, synchronous: str = "NORMAL"):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        existed = self.path.exists()
        self._lock = threading.RLock()
        self._template_cache: dict[str, StudyTemplate] = {}
        self._study_cache: dict[str, Study] = {}
        self._conn = sqlite3.connect(
            str(self.path), check_same_thread=False, isolation_level=None
        )
        self._conn.row_factory = sqlite3.Row
        # synchronous=OFF is the throwaway/test mode: no WAL, and exclusive
        # locking to skip the per-transaction fcntl dance.
        if synchronous.upper() == "OFF":
            self._conn.execute("PRAGMA journal_mode=MEMORY")
            self._conn.execute("PRAGMA locking_mode=EXCLUSIVE")
        else:
            self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute(f"PRAGMA synchronous={synchronous}")
        with self.transaction() as cur:
            if not existed or not self._has_meta(cur):
                cur.executescript(_SCHEMA)
                cur.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                    (str(SCHEMA_VERSION),),
                )
            else:
                row = cur.execute(
                    "SELECT value FROM meta WHERE key = 'schema_version'"
                ).fetchone()
                found = int(row["value"]) if row else None
                if found != SCHEMA_VERSION:
                    raise SchemaMismatchError(
                        f"store at {self.path} has schema version {found}, "
                        f"this release requires {SCHEMA_VERSION}"
                    )

    @staticmethod
    def _has_meta(cur: sqlite3.Cursor) -> bool:
        row = cur.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name='meta'"
        ).fetchone()
        return row is not None

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    @contextlib.contextmanager
    def transaction(self):
        """Serialized read-write transaction; rolls back on any exception."""
        with self._lock:
            cur = self._conn.cursor()
            cur.execute("BEGIN IMMEDIATE")
            try:
                yield cur
            except BaseException:
                self._conn.rollback()
                # drop parse caches: they may hold objects from this txn
                self._template_cache.clear()
                self._study_cache.clear()
                raise
            else:
                self._conn.commit()
            finally:
                cur.close()

    @contextlib.contextmanager
    def snapshot(self):
        """Consistent read-only view (same lock, no write intent)."""
        with self._lock:
            cur = self._conn.cursor()
            try:
                yield cur
            finally:
                cur.close()

    # -- templates --------------------------------------------------------

    def put_template(self, cur: sqlite3.Cursor, template: StudyTemplate) -> None:
        cur.execute(
            "INSERT INTO templates (id, doc, created_at) VALUES (?, ?, ?)",
            (template.id, json.dumps(template_to_doc(template)), template.created_at),
        )
        self._template_cache[template.id] = template

    def get_template(self, cur: sqlite3.Cursor, template_id: str) -> StudyTemplate | None:
        # Templates are immutable once stored, so the parse cache never goes stale.
        cached = self._template_cache.get(template_id)
        if cached is not None:
            return cached
        row = cur.execute("SELECT doc FROM templates WHERE id = ?", (template_id,)).fetchone()
        if row is None:
            return None
        template = template_from_doc(json.loads(row["doc"]))
        self._template_cache[template_id] = template
        return template

    def list_templates(self, cur: sqlite3.Cursor) -> list[StudyTemplate]:
        rows = cur.execute("SELECT doc FROM templates ORDER BY created_at, id").fetchall()
        return [template_from_doc(json.loads(r["doc"])) for r in rows]

    # -- studies ----------------------------------------------------------

    def put_study(self, cur: sqlite3.Cursor, study: Study) -> None:
        cur.execute(
            "INSERT INTO studies (id, template_id, doc, status, created_at) "
            "VALUES (?, ?, ?, ?, ?)",
            (
                study.id,
                study.template_id,
                json.dumps(study_to_doc(study)),
                study.status.value,
                study.created_at,
            ),
        )
        self._study_cache[study.id] = study

    def get_study(self, cur: sqlite3.Cursor, study_id: str) -> Study | None:
        # Only status mutates after creation; it lives in its own column, so
        # cached parses just get the current status patched in.
        cached = self._study_cache.get(study_id)
        if cached is not None:
            row = cur.execute(
                "SELECT status FROM studies WHERE id = ?", (study_id,)
            ).fetchone()
            if row is None:
                return None
            return dataclasses.replace(cached, status=StudyStatus(row["status"]))
        row = cur.execute(
            "SELECT doc, status FROM studies WHERE id = ?", (study_id,)
        ).fetchone()
        if row is None:
            return None
        doc = json.loads(row["doc"])
        doc["status"] = row["status"]
        study = study_from_doc(doc)
        self._study_cache[study_id] = study
        return study

    def list_studies(self, cur: sqlite3.Cursor) -> list[Study]:
        rows = cur.execute(
            "SELECT doc, status FROM studies ORDER BY created_at, id"
        ).fetchall()
        out = []
        for r in rows:
            doc = json.loads(r["doc"])
            doc["status"] = r["status"]
            out.append(study_from_doc(doc))
        return out

    def set_study_status(self, cur: sqlite3.Cursor, study_id: str, status: StudyStatus) -> None:
        cur.execute("UPDATE studies SET status = ? WHERE id = ?", (status.value, study_id))

    # -- experiments ------------------------------------------------------

    def insert_instances(self, cur: sqlite3.Cursor, instances: list[ExperimentInstance]) -> None:
        cur.executemany(
            "INSERT INTO experiments "
            "(id, study_id, combo_index, repetition_index, assignment, seed, status, attempt, exit_detail) "
            "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
            [
                (
                    e.id,
                    e.study_id,
                    e.combo_index,
                    e.repetition_index,
                    json.dumps(assignment_to_doc(e.assignment)),
                    str(e.seed),
                    e.status.value,
                    e.attempt,
                    e.exit_detail,
                )
                for e in instances
            ],
        )

    @staticmethod
    def _row_to_instance(row: sqlite3.Row) -> ExperimentInstance:
        return instance_from_doc(
            {
                "id": row["id"],
                "study_id": row["study_id"],
                "combo_index": row["combo_index"],
                "repetition_index": row["repetition_index"],
                "assignment": json.loads(row["assignment"]),
                "seed": int(row["seed"]),
                "status": row["status"],
                "attempt": row["attempt"],
                "exit_detail": row["exit_detail"],
            }
        )

    def get_instance(self, cur: sqlite3.Cursor, experiment_id: str) -> ExperimentInstance | None:
        row = cur.execute(
            "SELECT * FROM experiments WHERE id = ?", (experiment_id,)
        ).fetchone()
        return self._row_to_instance(row) if row else None

    def list_instances(self, cur: sqlite3.Cursor, study_id: str) -> list[ExperimentInstance]:
        rows = cur.execute(
            "SELECT * FROM experiments WHERE study_id = ? "
            "ORDER BY combo_index, repetition_index",
            (study_id,),
        ).fetchall()
        return [self._row_to_instance(r) for r in rows]

    def oldest_pending(self, cur: sqlite3.Cursor) -> ExperimentInstance | None:
        row = cur.execute(
            "SELECT e.* FROM experiments e JOIN studies s ON s.id = e.study_id "
            "WHERE e.status = 'pending' AND s.status = 'running' "
            "ORDER BY s.created_at, s.id, e.combo_index, e.repetition_index LIMIT 1"
        ).fetchone()
        return self._row_to_instance(row) if row else None

    def update_instance_status(
        self,
        cur: sqlite3.Cursor,
        experiment_id: str,
        status: ExperimentStatus,
        *,
        attempt: object = _UNSET,
        exit_detail: object = _UNSET,
        started_at: object = _UNSET,
        finished_at: object = _UNSET,
    ) -> None:
        # _UNSET leaves a column untouched; explicit None clears it.
        sets = ["status = ?"]
        args: list[object] = [status.value]
        for column, value in (
            ("attempt", attempt),
            ("exit_detail", exit_detail),
            ("started_at", started_at),
            ("finished_at", finished_at),
        ):
            if value is not _UNSET:
                sets.append(f"{column} = ?")
                args.append(value)
        args.append(experiment_id)
        cur.execute(f"UPDATE experiments SET {', '.join(sets)} WHERE id = ?", args)

    def has_live_instances(self, cur: sqlite3.Cursor, study_id: str) -> bool:
        row = cur.execute(
            "SELECT 1 FROM experiments WHERE study_id = ? "
            "AND status IN ('pending', 'leased', 'running') LIMIT 1",
            (study_id,),
        ).fetchone()
        return row is not None

    def status_counts(self, cur: sqlite3.Cursor, study_id: str) -> dict[str, int]:
        rows = cur.execute(
            "SELECT status, COUNT(*) AS n FROM experiments WHERE study_id = ? GROUP BY status",
            (study_id,),
        ).fetchall()
        counts = {status.value: 0 for status in ExperimentStatus}
        for r in rows:
            counts[r["status"]] = r["n"]
        return counts

    def mean_duration_s(self, cur: sqlite3.Cursor, study_id: str) -> float | None:
        row = cur.execute(
            "SELECT AVG(finished_at - started_at) AS avg_s FROM experiments "
            "WHERE study_id = ? AND status = 'finished' "
            "AND started_at IS NOT NULL AND finished_at IS NOT NULL",
            (study_id,),
        ).fetchone()
        return row["avg_s"] if row and row["avg_s"] is not None else None

    # -- workers and leases -------------------------------------------------

    def put_worker(self, cur: sqlite3.Cursor, worker_id: str, labels: list[str], now: float) -> None:
        cur.execute(
            "INSERT INTO workers (id, labels, last_heartbeat, current_experiment) "
            "VALUES (?, ?, ?, NULL)",
            (worker_id, json.dumps(labels), now),
        )

    def get_worker(self, cur: sqlite3.Cursor, worker_id: str) -> sqlite3.Row | None:
        return cur.execute("SELECT * FROM workers WHERE id = ?", (worker_id,)).fetchone()

    def list_workers(self, cur: sqlite3.Cursor) -> list[sqlite3.Row]:
        return cur.execute("SELECT * FROM workers ORDER BY id").fetchall()

    def touch_worker(self, cur: sqlite3.Cursor, worker_id: str, now: float) -> None:
        cur.execute("UPDATE workers SET last_heartbeat = ? WHERE id = ?", (now, worker_id))

    def set_worker_experiment(
        self, cur: sqlite3.Cursor, worker_id: str, experiment_id: str | None
    ) -> None:
        cur.execute(
            "UPDATE workers SET current_experiment = ? WHERE id = ?",
            (experiment_id, worker_id),
        )

    def insert_lease(
        self,
        cur: sqlite3.Cursor,
        experiment_id: str,
        worker_id: str,
        granted_at: float,
        expires_at: float,
        attempt: int,
    ) -> None:
        cur.execute(
            "INSERT INTO leases (experiment_id, worker_id, granted_at, expires_at, attempt) "
            "VALUES (?, ?, ?, ?, ?)",
            (experiment_id, worker_id, granted_at, expires_at, attempt),
        )

    def get_lease(self, cur: sqlite3.Cursor, experiment_id: str) -> sqlite3.Row | None:
        return cur.execute(
            "SELECT * FROM leases WHERE experiment_id = ?", (experiment_id,)
        ).fetchone()

    def lease_for_worker(self, cur: sqlite3.Cursor, worker_id: str) -> sqlite3.Row | None:
        return cur.execute(
            "SELECT * FROM leases WHERE worker_id = ?", (worker_id,)
        ).fetchone()

    def delete_lease(self, cur: sqlite3.Cursor, experiment_id: str) -> None:
        cur.execute("DELETE FROM leases WHERE experiment_id = ?", (experiment_id,))

    def expired_leases(self, cur: sqlite3.Cursor, now: float) -> list[sqlite3.Row]:
        return cur.execute(
            "SELECT * FROM leases WHERE expires_at <= ?", (now,)
        ).fetchall()

    def leases_for_study(self, cur: sqlite3.Cursor, study_id: str) -> list[sqlite3.Row]:
        return cur.execute(
            "SELECT l.* FROM leases l JOIN experiments e ON e.id = l.experiment_id "
            "WHERE e.study_id = ?",
            (study_id,),
        ).fetchall()

    # -- metric / log records ------------------------------------------------

    def next_seq(self, cur: sqlite3.Cursor, experiment_id: str, metric: str) -> int:
        row = cur.execute(
            "SELECT MAX(seq) AS m FROM metrics WHERE experiment_id = ? AND metric = ?",
            (experiment_id, metric),
        ).fetchone()
        return (row["m"] + 1) if row and row["m"] is not None else 0

    def insert_metric(self, cur: sqlite3.Cursor, record: MetricRecord) -> None:
        cur.execute(
            "INSERT INTO metrics (experiment_id, metric, seq, value, wall_offset_ms) "
            "VALUES (?, ?, ?, ?, ?)",
            (
                record.experiment_id,
                record.metric,
                record.seq,
                record.value,
                record.wall_offset_ms,
            ),
        )

    def metrics_for_experiment(
        self, cur: sqlite3.Cursor, experiment_id: str
    ) -> list[MetricRecord]:
        rows = cur.execute(
            "SELECT * FROM metrics WHERE experiment_id = ? ORDER BY metric, seq",
            (experiment_id,),
        ).fetchall()
        return [
            MetricRecord(
                experiment_id=r["experiment_id"],
                metric=r["metric"],
                seq=r["seq"],
                value=r["value"],
                wall_offset_ms=r["wall_offset_ms"],
            )
            for r in rows
        ]

    def metrics_for_study(self, cur: sqlite3.Cursor, study_id: str) -> list[MetricRecord]:
        rows = cur.execute(
            "SELECT m.* FROM metrics m JOIN experiments e ON e.id = m.experiment_id "
            "WHERE e.study_id = ? ORDER BY m.experiment_id, m.metric, m.seq",
            (study_id,),
        ).fetchall()
        return [
            MetricRecord(
                experiment_id=r["experiment_id"],
                metric=r["metric"],
                seq=r["seq"],
                value=r["value"],
                wall_offset_ms=r["wall_offset_ms"],
            )
            for r in rows
        ]

    def insert_log(self, cur: sqlite3.Cursor, record: LogRecord) -> None:
        cur.execute(
            "INSERT INTO logs (experiment_id, level, message, wall_offset_ms) "
            "VALUES (?, ?, ?, ?)",
            (record.experiment_id, record.level.value, record.message, record.wall_offset_ms),
        )

    def logs_for_experiment(self, cur: sqlite3.Cursor, experiment_id: str) -> list[LogRecord]:
        rows = cur.execute(
            "SELECT * FROM logs WHERE experiment_id = ? ORDER BY id", (experiment_id,)
        ).fetchall()
        return [
            LogRecord(
                experiment_id=r["experiment_id"],
                level=LogLevel(r["level"]),
                message=r["message"],
                wall_offset_ms=r["wall_offset_ms"],
            )
            for r in rows
        ]

    def experiment_started_at(self, cur: sqlite3.Cursor, experiment_id: str) -> float | None:
        row = cur.execute(
            "SELECT started_at FROM experiments WHERE id = ?", (experiment_id,)
        ).fetchone()
        return row["started_at"] if row else None
