"""Content-addressed blob directory plus a single-file relational store.

Zero external infrastructure: blobs are files named by their sha256, session
and verdict rows live in one sqlite database. Writes are atomic per record
(temp-then-rename for blobs, sqlite transactions for rows).
"""
from __future__ import annotations

import hashlib
import json
import os
import sqlite3
import threading
import time
from typing import Any

_SCHEMA = """
CREATE TABLE IF NOT EXISTS candidates (
    candidate_id TEXT PRIMARY KEY,
    created REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    candidate_id TEXT NOT NULL,
    mode TEXT NOT NULL,
    status TEXT NOT NULL,
    step INTEGER,
    payload TEXT NOT NULL,
    created REAL NOT NULL,
    updated REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS verdicts (
    candidate_id TEXT PRIMARY KEY,
    verdict TEXT NOT NULL,
    trace TEXT NOT NULL,
    updated REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS reports (
    dataset TEXT PRIMARY KEY,
    report TEXT NOT NULL,
    updated REAL NOT NULL
);
"""


class BlobStore:
    def __init__(self, directory: str) -> None:
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, digest: str) -> str:
        return os.path.join(self.directory, digest)

    def put(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self._path(digest)
        if not os.path.exists(path):
            tmp = path + f".{os.getpid()}.{threading.get_ident()}.tmp"
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        return digest

    def get(self, digest: str) -> bytes | None:
        try:
            with open(self._path(digest), "rb") as fh:
                return fh.read()
        except OSError:
            return None

    def exists(self, digest: str) -> bool:
        return os.path.exists(self._path(digest))


class Store:
    """Sessions, verdicts and reports in sqlite; images in the blob store."""

    def __init__(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        self.directory = directory
        self.blobs = BlobStore(os.path.join(directory, "blobs"))
        self.db_path = os.path.join(directory, "memetect.db")
        self._lock = threading.Lock()
        with self._connect() as conn:
            conn.executescript(_SCHEMA)

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path, timeout=10.0)
        conn.row_factory = sqlite3.Row
        return conn

    # -- candidates ---------------------------------------------------------

    def put_candidate(self, data: bytes) -> str:
        digest = self.blobs.put(data)
        with self._lock, self._connect() as conn:
            conn.execute(
                "INSERT OR IGNORE INTO candidates (candidate_id, created) VALUES (?, ?)",
                (digest, time.time()),
            )
        return digest

    def candidate_exists(self, candidate_id: str) -> bool:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT 1 FROM candidates WHERE candidate_id = ?", (candidate_id,)
            ).fetchone()
        return row is not None

    def candidate_bytes(self, candidate_id: str) -> bytes | None:
        return self.blobs.get(candidate_id)

    def list_candidates(self) -> list[dict[str, Any]]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT candidate_id, created FROM candidates ORDER BY created"
            ).fetchall()
        return [dict(r) for r in rows]

    # -- sessions -------------------------------------------------------------

    def save_session(
        self,
        session_id: str,
        candidate_id: str,
        mode: str,
        status: str,
        step: int | None,
        payload: dict[str, Any],
    ) -> None:
        now = time.time()
        with self._lock, self._connect() as conn:
            conn.execute(
                """
                INSERT INTO sessions (session_id, candidate_id, mode, status, step, payload, created, updated)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                ON CONFLICT(session_id) DO UPDATE SET
                    status = excluded.status,
                    step = excluded.step,
                    payload = excluded.payload,
                    updated = excluded.updated
                """,
                (session_id, candidate_id, mode, status, step, json.dumps(payload), now, now),
            )

    def load_session(self, session_id: str) -> dict[str, Any] | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM sessions WHERE session_id = ?", (session_id,)
            ).fetchone()
        if row is None:
            return None
        record = dict(row)
        record["payload"] = json.loads(record["payload"])
        return record

    def sessions_for_candidate(self, candidate_id: str) -> list[dict[str, Any]]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT session_id, status, mode, updated FROM sessions "
                "WHERE candidate_id = ? ORDER BY created",
                (candidate_id,),
            ).fetchall()
        return [dict(r) for r in rows]

    # -- verdicts ----------------------------------------------------------------

    def save_verdict(self, candidate_id: str, verdict: dict[str, Any], trace: dict[str, Any]) -> None:
        with self._lock, self._connect() as conn:
            conn.execute(
                """
                INSERT INTO verdicts (candidate_id, verdict, trace, updated)
                VALUES (?, ?, ?, ?)
                ON CONFLICT(candidate_id) DO UPDATE SET
                    verdict = excluded.verdict,
                    trace = excluded.trace,
                    updated = excluded.updated
                """,
                (candidate_id, json.dumps(verdict), json.dumps(trace), time.time()),
            )

    def load_verdict(self, candidate_id: str) -> tuple[dict[str, Any], dict[str, Any]] | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT verdict, trace FROM verdicts WHERE candidate_id = ?", (candidate_id,)
            ).fetchone()
        if row is None:
            return None
        return json.loads(row["verdict"]), json.loads(row["trace"])

    # -- reports -------------------------------------------------------------------

    def save_report(self, dataset: str, report: dict[str, Any]) -> None:
        with self._lock, self._connect() as conn:
            conn.execute(
                """
                INSERT INTO reports (dataset, report, updated) VALUES (?, ?, ?)
                ON CONFLICT(dataset) DO UPDATE SET
                    report = excluded.report, updated = excluded.updated
                """,
                (dataset, json.dumps(report), time.time()),
            )

    def load_report(self, dataset: str) -> dict[str, Any] | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT report FROM reports WHERE dataset = ?", (dataset,)
            ).fetchone()
        return json.loads(row["report"]) if row else None
