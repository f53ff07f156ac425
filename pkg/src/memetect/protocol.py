"""The identification walk: decide meme vs non-meme for one candidate and
record the full evidence path.

Steps: 0 modality gate, 1 whole-image reverse search, 2 layout routing,
3 text-free template search, 4 per-segment search, 5 whitespace-removed
search, 6 superimposed-element search, 7 text search for trends, 8 the
non-memetic terminal. Every run emits a trace whose transitions must lie in
the legal step graph; automated runs are deterministic for a fixed index and
configuration and can be replayed from the trace's config snapshot.
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from typing import Any

from . import decompose, relate
from .config import Config
from .decompose import CandidateMeme, DerivedView, LayoutKind, ViewKind
from .errors import ContractViolationError, MemetectError, NothingLeftAfterCropError, ProviderUnavailableError
from .imaging import dhash64, normalized_hamming
from .search import SearchHit, SearchProvider
from .textmatch import containment

TRACE_SCHEMA_VERSION = 1

# meme types
CM = "CM"
FM = "FM"
MI = "MI"
TS = "TS"
MT = "MT"
# non-meme types
NMIT = "nMIT"
NMM = "nMM"

MEME_TYPES = (CM, FM, MI, TS, MT)
NONMEME_TYPES = (NMIT, NMM)
ALL_OUTCOMES = MEME_TYPES + NONMEME_TYPES

# step -> allowed successors; "verdict" covers any typed outcome
LEGAL_TRANSITIONS: dict[int, set[int | str]] = {
    0: {NMM, 1},
    1: {"verdict", 2},
    2: {3, 4, 5, 6},
    3: {"verdict", 6},
    4: {"verdict", 6},
    5: {"verdict", 6},
    6: {"verdict", 7},
    7: {"verdict", 8},
    8: {NMIT},
}

MODE_AUTOMATED = "automated"
MODE_INTERACTIVE = "interactive"

RUNNING = "running"
AWAITING_JUDGEMENT = "awaiting_judgement"
COMPLETED = "completed"
ABORTED = "aborted"


class ProtocolAborted(MemetectError):
    code = "protocol_aborted"

    def __init__(self, message: str, trace: "ProtocolTrace") -> None:
        super().__init__(message)
        self.trace = trace


@dataclass
class Verdict:
    candidate_id: str
    outcome: str
    viral_flag: bool = False
    decided_by: str = relate.AUTOMATED
    thresholds: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.outcome not in ALL_OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.viral_flag and self.outcome != NMIT:
            raise ValueError("viral_flag is only valid with an nMIT outcome")

    @property
    def is_meme(self) -> bool:
        return self.outcome in MEME_TYPES

    def to_json(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "outcome": self.outcome,
            "viral_flag": self.viral_flag,
            "decided_by": self.decided_by,
            "thresholds": self.thresholds,
        }

    @staticmethod
    def from_json(doc: dict[str, Any]) -> "Verdict":
        return Verdict(
            candidate_id=doc["candidate_id"],
            outcome=doc["outcome"],
            viral_flag=doc.get("viral_flag", False),
            decided_by=doc.get("decided_by", relate.AUTOMATED),
            thresholds=doc.get("thresholds", {}),
        )


@dataclass
class StepRecord:
    step: int
    view_kind: str = ""
    queries: list[dict[str, Any]] = field(default_factory=list)
    hits_reviewed: int = 0
    judgements: list[dict[str, Any]] = field(default_factory=list)
    decision: str = ""
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "view_kind": self.view_kind,
            "queries": self.queries,
            "hits_reviewed": self.hits_reviewed,
            "judgements": self.judgements,
            "decision": self.decision,
            "notes": self.notes,
        }


@dataclass
class ProtocolTrace:
    candidate_id: str
    provider: str
    mode: str
    config_snapshot: dict[str, Any]
    records: list[StepRecord] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""
    status: str = RUNNING
    schema_version: int = TRACE_SCHEMA_VERSION

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "candidate_id": self.candidate_id,
            "provider": self.provider,
            "mode": self.mode,
            "config_snapshot": self.config_snapshot,
            "records": [r.to_json() for r in self.records],
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "status": self.status,
        }

    @staticmethod
    def from_json(doc: dict[str, Any]) -> "ProtocolTrace":
        trace = ProtocolTrace(
            candidate_id=doc["candidate_id"],
            provider=doc["provider"],
            mode=doc["mode"],
            config_snapshot=doc["config_snapshot"],
            started_at=doc.get("started_at", ""),
            finished_at=doc.get("finished_at", ""),
            status=doc.get("status", COMPLETED),
            schema_version=doc.get("schema_version", TRACE_SCHEMA_VERSION),
        )
        for rec in doc.get("records", []):
            trace.records.append(
                StepRecord(
                    step=rec["step"],
                    view_kind=rec.get("view_kind", ""),
                    queries=rec.get("queries", []),
                    hits_reviewed=rec.get("hits_reviewed", 0),
                    judgements=rec.get("judgements", []),
                    decision=rec.get("decision", ""),
                    notes=rec.get("notes", []),
                )
            )
        return trace


def validate_trace(trace: ProtocolTrace) -> list[str]:
    """Transition errors for a trace; empty list means it's a legal walk."""
    errors: list[str] = []
    records = trace.records
    if not records:
        return ["trace has no records"]
    if records[0].step != 0:
        errors.append(f"trace starts at step {records[0].step}, not 0")
    for i, record in enumerate(records):
        allowed = LEGAL_TRANSITIONS.get(record.step)
        if allowed is None:
            errors.append(f"record {i}: unknown step {record.step}")
            continue
        decision = record.decision
        if decision.startswith("advance:"):
            target = int(decision.split(":", 1)[1])
            if target not in allowed:
                errors.append(f"record {i}: illegal transition {record.step} -> {target}")
            if i + 1 >= len(records) or records[i + 1].step != target:
                errors.append(f"record {i}: advance to {target} not followed")
        elif decision.startswith("verdict:"):
            outcome = decision.split(":", 1)[1]
            if outcome in NONMEME_TYPES:
                if outcome not in allowed and "verdict" not in allowed:
                    errors.append(f"record {i}: step {record.step} cannot emit {outcome}")
            elif "verdict" not in allowed:
                errors.append(f"record {i}: step {record.step} cannot emit a verdict")
            if i != len(records) - 1:
                errors.append(f"record {i}: verdict before the last record")
        else:
            errors.append(f"record {i}: malformed decision {decision!r}")
    last = records[-1]
    if not last.decision.startswith("verdict:"):
        errors.append("last record carries no verdict")
    return errors


def step0_modality_check(candidate: CandidateMeme) -> bool:
    """True when the candidate is multimodal; False routes to nMM."""
    confident = candidate.confident_regions
    if not confident:
        return False
    if candidate.text_area_fraction() >= 0.95:
        return False
    return True


def subtype_template(layout: decompose.PanelLayout) -> str:
    """Character Macro for the single-character-caption shape, else Format
    Macro (the stricter shape wins; everything else falls back to FM)."""
    return CM if layout.kind == LayoutKind.SINGLE_CHARACTER_CAPTION else FM


def detect_memetic_trend(
    c_text: str,
    hits: list[SearchHit],
    candidate_hash: int,
    config: Config | None = None,
) -> bool:
    """Shared caption across at least two mutually dissimilar images."""
    cfg = config or Config()
    if not c_text:
        return False
    eligible = []
    for hit in hits:
        if containment(c_text, hit.text) < cfg.relate_tau_text:
            continue
        hit_hash = hit.dhash64 if hit.dhash64 is not None else (
            dhash64(hit.image) if hit.image is not None else None
        )
        if hit_hash is None:
            continue
        if normalized_hamming(candidate_hash, hit_hash) < cfg.protocol_trend_dissimilarity:
            continue
        eligible.append(hit_hash)
    if len(eligible) < cfg.protocol_trend_min_hits:
        return False
    for i in range(len(eligible)):
        for j in range(i + 1, len(eligible)):
            if (
                normalized_hamming(eligible[i], eligible[j])
                >= cfg.protocol_trend_dissimilarity
            ):
                return True
    return False


@dataclass
class _ReviewQuery:
    view: DerivedView
    hits: list[SearchHit]
    query_info: dict[str, Any]


@dataclass
class _ReviewPoint:
    step: int
    kinds: frozenset[relate.ElementKind]
    queries: list[_ReviewQuery]
    success_outcome: str
    fail_step: int
    notes: list[str] = field(default_factory=list)
    # progress
    query_index: int = 0
    judged: dict[str, dict[str, Any]] = field(default_factory=dict)
    judgements: list[relate.RelatednessJudgement] = field(default_factory=list)
    trend_mode: bool = False
    trend_accepts: int = 0

    def current_query(self) -> _ReviewQuery | None:
        if self.query_index < len(self.queries):
            return self.queries[self.query_index]
        return None

    def pending_hits(self) -> list[SearchHit]:
        query = self.current_query()
        if query is None:
            return []
        return [h for h in query.hits if _judged_key(self.query_index, h.hit_id) not in self.judged]


def _judged_key(query_index: int, hit_id: str) -> str:
    return f"{query_index}:{hit_id}"


class ProtocolSession:
    """Stepwise engine; automated mode runs to completion inside advance(),
    interactive mode pauses whenever a hit needs a human judgement."""

    def __init__(
        self,
        candidate: CandidateMeme,
        provider: SearchProvider,
        mode: str = MODE_AUTOMATED,
        config: Config | None = None,
    ) -> None:
        self.candidate = candidate
        self.provider = provider
        self.mode = mode
        self.config = config or Config()
        self.status = RUNNING
        self.verdict: Verdict | None = None
        self.trace = ProtocolTrace(
            candidate_id=candidate.candidate_id,
            provider=getattr(provider, "identity", str(provider)),
            mode=mode,
            config_snapshot=self.config.snapshot(),
            started_at=_now(),
        )
        self._next_step: int = 0
        self._current_view_image = candidate.image
        self._review: _ReviewPoint | None = None
        self._step1_judgements: list[relate.RelatednessJudgement] = []
        self._matcher = getattr(provider, "match_evidence", None)

    # -- public surface ------------------------------------------------------

    def advance(self) -> str:
        """Run until completion or the next judgement point; returns status."""
        try:
            while self.status == RUNNING:
                if self._review is not None:
                    if not self._work_review():
                        return self.status
                else:
                    self._run_step(self._next_step)
            return self.status
        except ProviderUnavailableError as exc:
            self.status = ABORTED
            self.trace.status = ABORTED
            self.trace.finished_at = _now()
            raise ProtocolAborted(f"provider unavailable: {exc}", self.trace) from exc

    def pending_hits(self) -> list[SearchHit]:
        if self._review is None:
            return []
        return self._review.pending_hits()

    def pending_step(self) -> int | None:
        return self._review.step if self._review is not None else None

    def judged_docs(self) -> list[dict[str, Any]]:
        """Judgements collected at the active review point (for UIs)."""
        if self._review is None:
            return []
        return list(self._review.judged.values())

    def submit_judgement(self, hit_id: str, choice: str) -> str:
        """Record a human judgement for a pending hit and continue."""
        from .errors import ConflictError, StateError

        if self.status != AWAITING_JUDGEMENT or self._review is None:
            raise StateError("session is not awaiting a judgement")
        review = self._review
        query = review.current_query()
        if query is None:
            raise StateError("no pending query")
        key = _judged_key(review.query_index, hit_id)
        if key in review.judged:
            raise ConflictError(f"hit {hit_id} already judged")
        hit = next((h for h in query.hits if h.hit_id == hit_id), None)
        if hit is None:
            raise ConflictError(f"hit {hit_id} is not pending in this step")
        self._current_view_image = query.view.image or self.candidate.image
        judgement = self._judge(hit, review.kinds, human_choice=choice)
        review.judged[key] = judgement.to_json()
        review.judgements.append(judgement)
        self.status = RUNNING
        return self.advance()

    # -- internals -------------------------------------------------------------

    def _judge(
        self,
        hit: SearchHit,
        kinds: frozenset[relate.ElementKind],
        human_choice: str | None = None,
    ) -> relate.RelatednessJudgement:
        matcher = None
        if self._matcher is not None and hit.origin == "local_corpus":
            provider_matcher = self._matcher

            def matcher(image, h):  # noqa: ANN001 - local adapter
                return provider_matcher(image, h.hit_id)

        view_image = self._current_view_image
        return relate.judge(
            view_image,
            hit,
            mode=relate.HUMAN if human_choice is not None else relate.AUTOMATED,
            kinds=kinds,
            candidate_text=self.candidate.text,
            config=self.config,
            matcher=matcher,
            human_choice=human_choice,
        )

    def _work_review(self) -> bool:
        """Progress the active review point; False when awaiting a human."""
        review = self._review
        assert review is not None
        while True:
            query = review.current_query()
            if query is None:
                break
            self._current_view_image = query.view.image
            if review.trend_mode:
                done = self._work_trend_query(review, query)
            else:
                done = self._work_match_query(review, query)
            if done == "await":
                self.status = AWAITING_JUDGEMENT
                return False
            if done == "success":
                self._finish_review(review, success=True)
                return True
            review.query_index += 1
        self._finish_review(review, success=False)
        return True

    def _work_match_query(self, review: _ReviewPoint, query: _ReviewQuery) -> str:
        for hit in query.hits:
            key = _judged_key(review.query_index, hit.hit_id)
            judgement_doc = review.judged.get(key)
            if judgement_doc is None:
                if self.mode == MODE_AUTOMATED:
                    judgement = self._judge(hit, review.kinds)
                    review.judged[key] = judgement.to_json()
                    review.judgements.append(judgement)
                    judgement_doc = review.judged[key]
                else:
                    return "await"
            if judgement_doc["related_but_distinct"]:
                return "success"
        return "exhausted"

    def _work_trend_query(self, review: _ReviewPoint, query: _ReviewQuery) -> str:
        if self.mode == MODE_AUTOMATED:
            found = detect_memetic_trend(
                self.candidate.text,
                query.hits,
                dhash64(self.candidate.image),
                self.config,
            )
            review.notes.append(
                f"trend check over {len(query.hits)} text hits: {'found' if found else 'not found'}"
            )
            review.judged.update(
                {
                    _judged_key(review.query_index, h.hit_id): {"related_but_distinct": False}
                    for h in query.hits
                }
            )
            return "success" if found else "exhausted"
        accepts = sum(
            1
            for doc in review.judged.values()
            if doc.get("related_but_distinct") and doc.get("decided_by") == relate.HUMAN
        )
        if accepts >= self.config.protocol_trend_min_hits:
            review.notes.append(f"annotator confirmed {accepts} trend relatives")
            return "success"
        if review.pending_hits():
            return "await"
        return "exhausted"

    def _finish_review(self, review: _ReviewPoint, success: bool) -> None:
        judgement_docs = [
            j.to_json() if isinstance(j, relate.RelatednessJudgement) else j
            for j in review.judgements
        ]
        record = StepRecord(
            step=review.step,
            view_kind=review.queries[0].view.kind.value if review.queries else "",
            queries=[q.query_info for q in review.queries],
            hits_reviewed=len(review.judged),
            judgements=judgement_docs,
            notes=review.notes,
        )
        if review.step == 1:
            self._step1_judgements = list(review.judgements)
        if success:
            outcome = review.success_outcome
            record.decision = f"verdict:{outcome}"
            self.trace.records.append(record)
            self._complete(outcome)
        else:
            record.decision = f"advance:{review.fail_step}"
            self.trace.records.append(record)
            self._next_step = review.fail_step
        self._review = None

    def _complete(self, outcome: str) -> None:
        viral = False
        if outcome == NMIT:
            viral = relate.viral_check(self._step1_judgements)
        decided_by = relate.HUMAN if self.mode == MODE_INTERACTIVE else relate.AUTOMATED
        self.verdict = Verdict(
            candidate_id=self.candidate.candidate_id,
            outcome=outcome,
            viral_flag=viral,
            decided_by=decided_by,
            thresholds=self.config.snapshot(),
        )
        self.status = COMPLETED
        self.trace.status = COMPLETED
        self.trace.finished_at = _now()

    def _record_simple(self, step: int, decision: str, notes: list[str] | None = None) -> None:
        self.trace.records.append(
            StepRecord(step=step, decision=decision, notes=notes or [])
        )

    def _run_step(self, step: int) -> None:
        candidate = self.candidate
        self._current_view_image = candidate.image
        if step == 0:
            if step0_modality_check(candidate):
                self._record_simple(0, "advance:1")
                self._next_step = 1
            else:
                self._record_simple(0, f"verdict:{NMM}", ["candidate is not multimodal"])
                self._complete(NMM)
            return
        if step == 1:
            hits = self.provider.image_search(candidate.image, self.config.search_n)
            layout = candidate.layout
            if layout.kind == LayoutKind.IMAGE_PLUS_WHITESPACE:
                outcome = MI
                note = "whole-image match on an image+whitespace layout is a Memetic Image"
            else:
                outcome = subtype_template(layout)
                note = f"template verdict subtyped by layout {layout.kind.value}"
            view = DerivedView(ViewKind.FULL_IMAGE, image=candidate.image)
            self._review = _ReviewPoint(
                step=1,
                kinds=frozenset({relate.ElementKind.BACKGROUND}),
                queries=[
                    _ReviewQuery(
                        view,
                        hits,
                        {"kind": "image", "view": "full_image", "digest": candidate.candidate_id},
                    )
                ],
                success_outcome=outcome,
                fail_step=2,
                notes=[note],
            )
            return
        if step == 2:
            layout = candidate.layout
            target = {
                LayoutKind.SINGLE_CHARACTER_CAPTION: 3,
                LayoutKind.MULTI_SEGMENT: 4,
                LayoutKind.IMAGE_PLUS_WHITESPACE: 5,
                LayoutKind.OTHER: 6,
            }[layout.kind]
            self._record_simple(2, f"advance:{target}", [f"layout={layout.kind.value}"])
            self._next_step = target
            return
        if step == 3:
            try:
                view = decompose.crop_remove_text(candidate.image, candidate.regions)
            except (NothingLeftAfterCropError, ContractViolationError) as exc:
                self._record_simple(3, "advance:6", [f"no text-free crop: {exc}"])
                self._next_step = 6
                return
            hits = self.provider.image_search(view.image, self.config.search_n)
            self._review = _ReviewPoint(
                step=3,
                kinds=frozenset({relate.ElementKind.BACKGROUND}),
                queries=[
                    _ReviewQuery(
                        view,
                        hits,
                        {"kind": "image", "view": "text_removed", "digest": view.image.content_digest},
                    )
                ],
                success_outcome=CM,
                fail_step=6,
            )
            return
        if step == 4:
            try:
                views = decompose.split_segments(
                    candidate.image, candidate.regions, candidate.layout
                )
            except ContractViolationError as exc:
                self._record_simple(4, "advance:6", [f"segment split failed: {exc}"])
                self._next_step = 6
                return
            queries = []
            for view in views:
                hits = self.provider.image_search(view.image, self.config.search_n)
                queries.append(
                    _ReviewQuery(
                        view,
                        hits,
                        {
                            "kind": "image",
                            "view": f"segment[{view.index}]",
                            "digest": view.image.content_digest,
                        },
                    )
                )
            self._review = _ReviewPoint(
                step=4,
                kinds=frozenset({relate.ElementKind.SEGMENT}),
                queries=queries,
                success_outcome=TS,
                fail_step=6,
            )
            return
        if step == 5:
            try:
                view = decompose.crop_remove_whitespace(
                    candidate.image, candidate.regions, candidate.layout
                )
            except ContractViolationError as exc:
                self._record_simple(5, "advance:6", [f"whitespace crop failed: {exc}"])
                self._next_step = 6
                return
            hits = self.provider.image_search(view.image, self.config.search_n)
            self._review = _ReviewPoint(
                step=5,
                kinds=frozenset({relate.ElementKind.BACKGROUND}),
                queries=[
                    _ReviewQuery(
                        view,
                        hits,
                        {
                            "kind": "image",
                            "view": "whitespace_removed",
                            "digest": view.image.content_digest,
                        },
                    )
                ],
                success_outcome=MI,
                fail_step=6,
            )
            return
        if step == 6:
            exclude = [r.bbox for r in candidate.regions]
            views = decompose.extract_superimposed_elements(candidate.image, exclude=exclude)
            queries = []
            for view in views:
                if view.image.width < 32 or view.image.height < 32:
                    continue
                hits = self.provider.image_search(view.image, self.config.search_n)
                queries.append(
                    _ReviewQuery(
                        view,
                        hits,
                        {
                            "kind": "image",
                            "view": f"element[{view.index}]",
                            "digest": view.image.content_digest,
                        },
                    )
                )
            if not queries:
                self._record_simple(6, "advance:7", ["no superimposed-element proposals"])
                self._next_step = 7
                return
            self._review = _ReviewPoint(
                step=6,
                kinds=frozenset({relate.ElementKind.SUPERIMPOSED_ELEMENT}),
                queries=queries,
                success_outcome=TS,
                fail_step=7,
            )
            return
        if step == 7:
            c_text = candidate.text
            if not c_text:
                self._record_simple(7, "advance:8", ["candidate has no extractable text"])
                self._next_step = 8
                return
            hits = self.provider.text_search(c_text, self.config.search_n)
            view = DerivedView(ViewKind.EXTRACTED_TEXT, text=c_text)
            review = _ReviewPoint(
                step=7,
                kinds=frozenset({relate.ElementKind.TEXT}),
                queries=[_ReviewQuery(view, hits, {"kind": "text", "text": c_text})],
                success_outcome=MT,
                fail_step=8,
            )
            review.trend_mode = True
            self._review = review
            return
        if step == 8:
            self._record_simple(8, f"verdict:{NMIT}")
            self._complete(NMIT)
            return
        raise MemetectError(f"unknown step {step}")


def run(
    candidate: CandidateMeme,
    provider: SearchProvider,
    mode: str = MODE_AUTOMATED,
    config: Config | None = None,
) -> tuple[Verdict, ProtocolTrace]:
    """Automated end-to-end run; raises ProtocolAborted on provider failure."""
    if mode != MODE_AUTOMATED:
        raise ValueError("use ProtocolSession directly for interactive runs")
    session = ProtocolSession(candidate, provider, mode=mode, config=config)
    status = session.advance()
    if status != COMPLETED or session.verdict is None:
        raise MemetectError(f"run ended in status {status}")
    return session.verdict, session.trace


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def trace_to_json_str(trace: ProtocolTrace) -> str:
    return json.dumps(trace.to_json(), sort_keys=True, indent=2)
