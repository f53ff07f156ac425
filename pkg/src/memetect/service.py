"""HTTP+JSON API over the engine: candidate ingestion, protocol sessions with
human judgements, verdict and report retrieval.

The service is additive: the library and CLI work without it. Sessions are
serialised per session id; a judgement arriving while another is being
applied is rejected with a conflict rather than queued, surfacing annotator
races instead of hiding them. Completed sessions, verdicts and traces are
persisted and survive restarts; in-flight interactive sessions are rebuilt by
replaying their recorded judgements (deterministic for a fixed index).
"""
from __future__ import annotations

import threading
import uuid
from typing import Any

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import protocol
from .config import Config
from .decompose import CandidateMeme
from .errors import ConflictError, ImageDecodeError, MemetectError, StateError
from .imaging import RasterImage
from .index import LocalIndex, load_index
from .protocol import ProtocolSession, Verdict
from .search import LocalSearchProvider
from .storage import Store

SCHEMA_VERSION = 1
MAX_UPLOAD_BYTES = 20 * 1024 * 1024

_PROBLEM = "application/problem+json"


def _problem(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(
        {
            "type": f"about:blank#{code}",
            "title": code.replace("_", " "),
            "status": status,
            "code": code,
            "detail": detail,
            "schema_version": SCHEMA_VERSION,
        },
        status_code=status,
        media_type=_PROBLEM,
    )


class SessionHost:
    """Live protocol sessions plus their persistence and rehydration."""

    def __init__(self, store: Store, provider: LocalSearchProvider, config: Config) -> None:
        self.store = store
        self.provider = provider
        self.config = config
        self._live: dict[str, ProtocolSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry:
            if session_id not in self._locks:
                self._locks[session_id] = threading.Lock()
            return self._locks[session_id]

    def _candidate(self, candidate_id: str) -> CandidateMeme:
        data = self.store.candidate_bytes(candidate_id)
        if data is None:
            raise StateError(f"candidate {candidate_id} has no stored image")
        image = RasterImage.from_bytes(data)
        return CandidateMeme.prepare(image, self.config.ocr_backend)

    def start(self, candidate_id: str, mode: str) -> tuple[str, ProtocolSession]:
        session_id = uuid.uuid4().hex
        session = ProtocolSession(
            self._candidate(candidate_id), self.provider, mode=mode, config=self.config
        )
        session.advance()
        with self._registry:
            self._live[session_id] = session
        self._persist(session_id, candidate_id, session, judgements=[])
        return session_id, session

    def get(self, session_id: str) -> tuple[ProtocolSession, dict[str, Any]] | None:
        record = self.store.load_session(session_id)
        if record is None:
            return None
        with self._registry:
            session = self._live.get(session_id)
        if session is None:
            session = self._rehydrate(record)
            with self._registry:
                self._live[session_id] = session
        return session, record

    def _rehydrate(self, record: dict[str, Any]) -> ProtocolSession:
        session = ProtocolSession(
            self._candidate(record["candidate_id"]),
            self.provider,
            mode=record["mode"],
            config=self.config,
        )
        session.advance()
        for entry in record["payload"].get("judgements", []):
            if session.status != protocol.AWAITING_JUDGEMENT:
                break
            session.submit_judgement(entry["hit_id"], entry["choice"])
        return session

    def submit(self, session_id: str, hit_id: str, choice: str) -> ProtocolSession:
        lock = self._lock_for(session_id)
        if not lock.acquire(blocking=False):
            raise ConflictError("another judgement for this session is in flight")
        try:
            found = self.get(session_id)
            if found is None:
                raise StateError(f"unknown session {session_id}")
            session, record = found
            session.submit_judgement(hit_id, choice)
            judgements = record["payload"].get("judgements", [])
            judgements.append({"hit_id": hit_id, "choice": choice})
            self._persist(session_id, record["candidate_id"], session, judgements)
            return session
        finally:
            lock.release()

    def _persist(
        self,
        session_id: str,
        candidate_id: str,
        session: ProtocolSession,
        judgements: list[dict[str, str]],
    ) -> None:
        self.store.save_session(
            session_id,
            candidate_id,
            session.mode,
            session.status,
            session.pending_step(),
            {"judgements": judgements},
        )
        if session.status == protocol.COMPLETED and session.verdict is not None:
            self.store.save_verdict(
                candidate_id, session.verdict.to_json(), session.trace.to_json()
            )


def _session_view(session_id: str, candidate_id: str, session: ProtocolSession) -> dict[str, Any]:
    pending = [
        {
            "hit_id": hit.hit_id,
            "visual_distance": round(hit.visual_distance, 6),
            "text": hit.text,
            "text_score": hit.text_score,
            "origin": hit.origin,
            "image_url": f"/sessions/{session_id}/hits/{hit.hit_id}/image",
        }
        for hit in session.pending_hits()
    ]
    judged = session.judged_docs()
    view: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "session_id": session_id,
        "candidate_id": candidate_id,
        "mode": session.mode,
        "status": session.status,
        "current_step": session.pending_step(),
        "pending_hits": pending,
        "judgements": judged,
        "verdict": session.verdict.to_json() if session.verdict else None,
    }
    return view


def create_app(
    store_dir: str,
    index_path: str | None = None,
    config: Config | None = None,
) -> FastAPI:
    config = config or Config()
    store = Store(store_dir)
    index = load_index(index_path) if index_path else LocalIndex([])
    provider = LocalSearchProvider(index, config)
    host = SessionHost(store, provider, config)

    app = FastAPI(title="memetect", version="0.1.0")
    app.state.store = store
    app.state.provider = provider
    app.state.host = host

    @app.exception_handler(MemetectError)
    async def on_error(request: Request, exc: MemetectError):
        status = {
            "conflict": 409,
            "state_error": 409,
            "image_decode_error": 422,
            "input_error": 400,
            "provider_unavailable": 503,
        }.get(exc.code, 500)
        return _problem(status, exc.code, str(exc))

    @app.get("/healthz")
    def healthz() -> dict[str, Any]:
        return {"status": "ok", "schema_version": SCHEMA_VERSION}

    @app.post("/candidates", status_code=201)
    async def create_candidate(request: Request):
        data = await request.body()
        if len(data) > MAX_UPLOAD_BYTES:
            return _problem(413, "payload_too_large", "image exceeds 20 MB")
        try:
            RasterImage.from_bytes(data)
        except ImageDecodeError as exc:
            return _problem(422, "image_decode_error", str(exc))
        candidate_id = store.put_candidate(data)
        return {"schema_version": SCHEMA_VERSION, "candidate_id": candidate_id}

    @app.get("/candidates")
    def list_candidates() -> dict[str, Any]:
        rows = []
        for record in store.list_candidates():
            cid = record["candidate_id"]
            stored = store.load_verdict(cid)
            sessions = store.sessions_for_candidate(cid)
            rows.append(
                {
                    "candidate_id": cid,
                    "verdict": stored[0] if stored else None,
                    "sessions": sessions,
                }
            )
        return {"schema_version": SCHEMA_VERSION, "candidates": rows}

    @app.get("/candidates/{candidate_id}/image")
    def candidate_image(candidate_id: str):
        data = store.candidate_bytes(candidate_id)
        if data is None:
            return _problem(404, "not_found", f"unknown candidate {candidate_id}")
        return Response(content=data, media_type="image/png")

    @app.post("/sessions", status_code=201)
    async def start_session(request: Request):
        body = await request.json()
        candidate_id = body.get("candidate_id", "")
        mode = body.get("mode", protocol.MODE_AUTOMATED)
        if mode not in (protocol.MODE_AUTOMATED, protocol.MODE_INTERACTIVE):
            return _problem(400, "input_error", f"unknown mode {mode!r}")
        if not store.candidate_exists(candidate_id):
            return _problem(404, "not_found", f"unknown candidate {candidate_id}")
        session_id, session = host.start(candidate_id, mode)
        return _session_view(session_id, candidate_id, session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        found = host.get(session_id)
        if found is None:
            return _problem(404, "not_found", f"unknown session {session_id}")
        session, record = found
        return _session_view(session_id, record["candidate_id"], session)

    @app.post("/sessions/{session_id}/judgements")
    def submit_judgement(session_id: str, body: dict):
        hit_id = body.get("hit_id", "")
        choice = body.get("choice", "")
        found = host.get(session_id)
        if found is None:
            return _problem(404, "not_found", f"unknown session {session_id}")
        session = host.submit(session_id, hit_id, choice)
        record = host.store.load_session(session_id)
        return _session_view(session_id, record["candidate_id"], session)

    @app.get("/sessions/{session_id}/hits/{hit_id}/image")
    def hit_image(session_id: str, hit_id: str):
        image = provider.load_entry_image(hit_id)
        if image is None:
            return _problem(404, "not_found", f"no image for hit {hit_id}")
        return Response(content=image.to_png_bytes(), media_type="image/png")

    @app.get("/verdicts/{candidate_id}")
    def get_verdict(candidate_id: str):
        stored = store.load_verdict(candidate_id)
        if stored is None:
            return _problem(404, "not_found", f"no verdict for {candidate_id}")
        verdict, trace = stored
        return {"schema_version": SCHEMA_VERSION, "verdict": verdict, "trace": trace}

    @app.get("/reports/{dataset}")
    def get_report(dataset: str):
        report = store.load_report(dataset)
        if report is None:
            return _problem(404, "not_found", f"no report for dataset {dataset}")
        return {"schema_version": SCHEMA_VERSION, "dataset": dataset, "report": report}

    @app.put("/reports/{dataset}")
    def put_report(dataset: str, body: dict):
        store.save_report(dataset, body)
        return {"schema_version": SCHEMA_VERSION, "dataset": dataset}

    return app
