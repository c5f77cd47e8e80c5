"""Author-in-the-loop sessions: per-segment stage machine over the pipeline.

A session starts with segment-wise drafts for every review segment. When the
author rejects a draft, that segment walks the staged pipeline: the
deficiency prediction is shown as a natural-language statement, then (for
deficient segments) the error type, then the rebuttal action, then the
regenerated rebuttal. At every step the author accepts, rejects with
feedback, or overrides with an explicit label; the session ends by
consolidating the accepted per-segment texts.

State is event-sourced: every transition appends events to a per-session
append-only log and rewrites a snapshot, and replaying the log reconstructs
the identical session. Commands on one session are serialized; distinct
sessions are fully concurrent.
"""

from __future__ import annotations

import copy
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

from rebutkit.pipeline import RebuttalPipeline
from rebutkit.records import ContextMode, PaperRecord, RebuttalDraft
from rebutkit.segmentation import ReviewSegment
from rebutkit.taxonomy import (
    DeficiencyOutcome,
    ErrorType,
    Provenance,
    RebuttalAction,
    SegmentLabels,
    action_statement,
    allowed_actions,
    deficiency_statement,
    error_type_statement,
)

EVENT_SCHEMA_VERSION = 1
FEEDBACK_ROUND_CAP = 3


class Stage(str, Enum):
    DRAFT_PROPOSED = "draft_proposed"
    DEFICIENCY_SHOWN = "deficiency_shown"
    ERROR_TYPE_SHOWN = "error_type_shown"
    ACTION_SHOWN = "action_shown"
    REBUTTAL_SHOWN = "rebuttal_shown"
    ACCEPTED = "accepted"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class SessionError(Exception):
    pass


class UnknownSession(SessionError):
    pass


class UnknownSegment(SessionError):
    pass


class InvalidTransition(SessionError):
    pass


class OverrideOutsideAllowedSet(SessionError):
    pass


class NotAllAccepted(SessionError):
    pass


class FeedbackRoundsExhausted(SessionError):
    """Re-prediction rounds for a stage are used up; only an override advances."""


class EmptyEdit(SessionError):
    pass


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    ts: float
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": EVENT_SCHEMA_VERSION,
            "seq": self.seq,
            "ts": self.ts,
            "kind": self.kind,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SessionEvent":
        version = raw.get("schema_version")
        if version != EVENT_SCHEMA_VERSION:
            raise SessionError(f"unsupported event schema_version: {version!r}")
        return cls(seq=raw["seq"], ts=raw["ts"], kind=raw["kind"], payload=raw["payload"])


@dataclass
class SegmentFlow:
    """Interactive state of one review segment within a session."""

    segment: ReviewSegment
    stage: Stage = Stage.DRAFT_PROPOSED
    draft: Optional[RebuttalDraft] = None
    draft_error: Optional[str] = None
    deficiency: Optional[DeficiencyOutcome] = None
    deficiency_provenance: Optional[Provenance] = None
    error_type: Optional[ErrorType] = None
    error_type_provenance: Optional[Provenance] = None
    action: Optional[RebuttalAction] = None
    action_provenance: Optional[Provenance] = None
    feedback: list = field(default_factory=list)
    edit: Optional[str] = None
    feedback_rounds: dict = field(default_factory=dict)

    def statement(self) -> Optional[str]:
        """The text shown to the author at the current stage.

        Label stages show exactly the statement-table text for the current
        label; draft stages show the draft text.
        """
        if self.stage is Stage.DEFICIENCY_SHOWN:
            return deficiency_statement(self.deficiency)
        if self.stage is Stage.ERROR_TYPE_SHOWN:
            return error_type_statement(self.error_type)
        if self.stage is Stage.ACTION_SHOWN:
            return action_statement(self.action)
        if self.stage in (Stage.REBUTTAL_SHOWN, Stage.DRAFT_PROPOSED):
            return self.draft.text if self.draft else None
        if self.stage is Stage.ACCEPTED:
            return self.accepted_text()
        return None

    def accepted_text(self) -> Optional[str]:
        if self.edit is not None:
            return self.edit
        return self.draft.text if self.draft else None

    def legal_moves(self) -> list[dict]:
        """Moves the state machine permits right now; the UI derives its
        controls from this list, never from hardcoded stage knowledge."""
        if self.stage is Stage.DRAFT_PROPOSED:
            moves = []
            if self.draft is not None:
                moves.append({"type": "accept"})
            moves.append({"type": "reject", "requires_feedback": False})
            return moves
        if self.stage is Stage.DEFICIENCY_SHOWN:
            # rejecting flips the binary label; no feedback needed
            return [{"type": "accept"}, {"type": "reject", "requires_feedback": False}]
        if self.stage is Stage.ERROR_TYPE_SHOWN:
            return [
                {"type": "accept"},
                {"type": "reject", "requires_feedback": True},
                {"type": "override", "allowed": [e.value for e in ErrorType]},
            ]
        if self.stage is Stage.ACTION_SHOWN:
            allowed = allowed_actions(self.deficiency, self.error_type)
            return [
                {"type": "accept"},
                {"type": "reject", "requires_feedback": True},
                {"type": "override", "allowed": sorted(a.value for a in allowed)},
            ]
        if self.stage is Stage.REBUTTAL_SHOWN:
            return [
                {"type": "accept"},
                {"type": "reject", "requires_feedback": True},
                {"type": "edit"},
            ]
        return [{"type": "edit"}]

    def to_dict(self) -> dict:
        return {
            "segment": self.segment.to_dict(),
            "stage": self.stage.value,
            "draft": self.draft.to_dict() if self.draft else None,
            "draft_error": self.draft_error,
            "labels": {
                "deficiency": self.deficiency.value if self.deficiency else None,
                "deficiency_provenance": self.deficiency_provenance.value
                if self.deficiency_provenance
                else None,
                "error_type": self.error_type.value if self.error_type else None,
                "error_type_provenance": self.error_type_provenance.value
                if self.error_type_provenance
                else None,
                "action": self.action.value if self.action else None,
                "action_provenance": self.action_provenance.value
                if self.action_provenance
                else None,
            },
            "feedback": list(self.feedback),
            "edit": self.edit,
            "feedback_rounds": dict(self.feedback_rounds),
            "statement": self.statement(),
            "legal_moves": self.legal_moves(),
        }


@dataclass
class Session:
    session_id: str
    paper: PaperRecord
    review: str
    context_mode: ContextMode
    created_at: float
    updated_at: float
    segments: list[ReviewSegment] = field(default_factory=list)
    flows: dict[str, SegmentFlow] = field(default_factory=dict)
    final_rebuttal: Optional[str] = None
    event_count: int = 0

    def flow(self, segment_id: str) -> SegmentFlow:
        try:
            return self.flows[segment_id]
        except KeyError:
            raise UnknownSegment(f"unknown segment: {segment_id}") from None

    def all_accepted(self) -> bool:
        return bool(self.flows) and all(
            f.stage is Stage.ACCEPTED for f in self.flows.values()
        )

    def ordered_flows(self) -> list[SegmentFlow]:
        return [self.flows[s.segment_id] for s in self.segments]

    def to_dict(self) -> dict:
        return {
            "schema_version": EVENT_SCHEMA_VERSION,
            "session_id": self.session_id,
            "paper": self.paper.to_dict(),
            "review": self.review,
            "context_mode": self.context_mode.value,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "segments": [s.to_dict() for s in self.segments],
            "flows": {sid: flow.to_dict() for sid, flow in self.flows.items()},
            "final_rebuttal": self.final_rebuttal,
            "event_count": self.event_count,
        }

    # -- event application -------------------------------------------------

    def apply(self, event: SessionEvent) -> None:
        handler = getattr(self, f"_apply_{event.kind}", None)
        if handler is None:
            raise SessionError(f"unknown event kind: {event.kind}")
        handler(event)
        self.updated_at = event.ts
        self.event_count = event.seq + 1

    def _apply_session_created(self, event: SessionEvent) -> None:
        pass  # construction is handled by replay()

    def _apply_segments_set(self, event: SessionEvent) -> None:
        self.segments = [ReviewSegment.from_dict(raw) for raw in event.payload["segments"]]
        self.flows = {s.segment_id: SegmentFlow(segment=s) for s in self.segments}

    def _apply_draft_set(self, event: SessionEvent) -> None:
        flow = self.flow(event.payload["segment_id"])
        raw = event.payload.get("draft")
        flow.draft = RebuttalDraft.from_dict(raw) if raw else None
        flow.draft_error = event.payload.get("error")

    def _apply_verdict_recorded(self, event: SessionEvent) -> None:
        flow = self.flow(event.payload["segment_id"])
        feedback = event.payload.get("feedback")
        if feedback:
            flow.feedback.append(
                {"ts": event.ts, "stage": flow.stage.value, "text": feedback}
            )
            if (
                event.payload["verdict"] == Verdict.REJECT.value
                and not event.payload.get("override")
                and flow.stage
                in (Stage.ERROR_TYPE_SHOWN, Stage.ACTION_SHOWN, Stage.REBUTTAL_SHOWN)
            ):
                key = flow.stage.value
                flow.feedback_rounds[key] = flow.feedback_rounds.get(key, 0) + 1

    def _apply_deficiency_set(self, event: SessionEvent) -> None:
        flow = self.flow(event.payload["segment_id"])
        value = event.payload.get("value")
        flow.deficiency = DeficiencyOutcome(value) if value else None
        provenance = event.payload.get("provenance")
        flow.deficiency_provenance = Provenance(provenance) if provenance else None

    def _apply_error_type_set(self, event: SessionEvent) -> None:
        flow = self.flow(event.payload["segment_id"])
        value = event.payload.get("value")
        flow.error_type = ErrorType(value) if value else None
        provenance = event.payload.get("provenance")
        flow.error_type_provenance = Provenance(provenance) if provenance else None

    def _apply_action_set(self, event: SessionEvent) -> None:
        flow = self.flow(event.payload["segment_id"])
        value = event.payload.get("value")
        flow.action = RebuttalAction(value) if value else None
        provenance = event.payload.get("provenance")
        flow.action_provenance = Provenance(provenance) if provenance else None

    def _apply_stage_set(self, event: SessionEvent) -> None:
        flow = self.flow(event.payload["segment_id"])
        flow.stage = Stage(event.payload["stage"])

    def _apply_edit_set(self, event: SessionEvent) -> None:
        flow = self.flow(event.payload["segment_id"])
        flow.edit = event.payload["text"]

    def _apply_finalized(self, event: SessionEvent) -> None:
        self.final_rebuttal = event.payload["text"]

    @classmethod
    def replay(cls, events: list[SessionEvent]) -> "Session":
        """Reconstruct a session by folding its event log."""
        if not events or events[0].kind != "session_created":
            raise SessionError("event log must start with session_created")
        first = events[0]
        session = cls(
            session_id=first.payload["session_id"],
            paper=PaperRecord.from_dict(first.payload["paper"]),
            review=first.payload["review"],
            context_mode=ContextMode(first.payload["context_mode"]),
            created_at=first.ts,
            updated_at=first.ts,
            event_count=1,
        )
        for event in events[1:]:
            session.apply(event)
        return session


class SessionStore:
    """Append-only event log plus snapshot, one directory per session."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, session_id: str) -> Path:
        path = self.root / session_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def append_events(self, session_id: str, events: list[SessionEvent]) -> None:
        if not events:
            return
        path = self._dir(session_id) / "events.jsonl"
        with path.open("a", encoding="utf-8") as handle:
            for event in events:
                handle.write(json.dumps(event.to_dict(), sort_keys=True, ensure_ascii=False))
                handle.write("\n")

    def write_snapshot(self, session: Session) -> None:
        path = self._dir(session.session_id) / "snapshot.json"
        path.write_text(
            json.dumps(session.to_dict(), sort_keys=True, ensure_ascii=False, indent=2),
            "utf-8",
        )

    def load_events(self, session_id: str) -> list[SessionEvent]:
        path = self.root / session_id / "events.jsonl"
        if not path.exists():
            raise UnknownSession(f"no event log for session {session_id}")
        return [
            SessionEvent.from_dict(json.loads(line))
            for line in path.read_text("utf-8").splitlines()
            if line.strip()
        ]

    def event_log_bytes(self, session_id: str) -> bytes:
        path = self.root / session_id / "events.jsonl"
        return path.read_bytes() if path.exists() else b""

    def list_ids(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())


class _Transaction:
    """Buffers events for one command, applying them to a working copy."""

    def __init__(self, session: Session, clock: Callable[[], float]):
        self.session = session
        self.clock = clock
        self.events: list[SessionEvent] = []

    def emit(self, kind: str, payload: dict) -> SessionEvent:
        event = SessionEvent(
            seq=self.session.event_count, ts=self.clock(), kind=kind, payload=payload
        )
        self.session.apply(event)
        self.events.append(event)
        return event


class SessionEngine:
    """Executes session commands, persisting every transition."""

    def __init__(
        self,
        pipeline: RebuttalPipeline,
        store: Optional[SessionStore] = None,
        clock: Callable[[], float] = time.time,
        id_factory: Callable[[], str] = lambda: uuid.uuid4().hex[:12],
    ):
        self.pipeline = pipeline
        self.store = store
        self.clock = clock
        self.id_factory = id_factory
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    # -- plumbing ------------------------------------------------------------

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None and self.store is not None:
            session = Session.replay(self.store.load_events(session_id))
            with self._guard:
                self._sessions.setdefault(session_id, session)
        if session is None:
            raise UnknownSession(f"unknown session: {session_id}")
        return session

    def session_ids(self) -> list[str]:
        with self._guard:
            ids = set(self._sessions)
        if self.store is not None:
            ids.update(self.store.list_ids())
        return sorted(ids)

    def _commit(self, txn: _Transaction) -> Session:
        if self.store is not None:
            self.store.append_events(txn.session.session_id, txn.events)
            self.store.write_snapshot(txn.session)
        self._sessions[txn.session.session_id] = txn.session
        return txn.session

    def _begin(self, session_id: str) -> _Transaction:
        return _Transaction(copy.deepcopy(self.get(session_id)), self.clock)

    # -- commands --------------------------------------------------------------

    def create_session(
        self,
        paper: PaperRecord,
        review: str,
        context_mode: ContextMode = ContextMode.FULL_PAPER,
    ) -> Session:
        """Segment the review and draft every segment; all flows start at
        the proposed-draft stage (a failed draft is kept as a marker)."""
        session_id = self.id_factory()
        meta = {"session_id": session_id}
        segments = self.pipeline.segment_review(review, metadata=meta)
        outcomes = self.pipeline.generate_segmentwise(
            paper, review, segments, context_mode, metadata=meta
        )

        now = self.clock()
        session = Session(
            session_id=session_id,
            paper=paper,
            review=review,
            context_mode=context_mode,
            created_at=now,
            updated_at=now,
        )
        txn = _Transaction(session, self.clock)
        txn.events.append(
            SessionEvent(
                seq=0,
                ts=now,
                kind="session_created",
                payload={
                    "session_id": session_id,
                    "paper": paper.to_dict(),
                    "review": review,
                    "context_mode": context_mode.value,
                },
            )
        )
        session.event_count = 1
        txn.emit("segments_set", {"segments": [s.to_dict() for s in segments]})
        for outcome in outcomes:
            txn.emit(
                "draft_set",
                {
                    "segment_id": outcome.segment_id,
                    "draft": outcome.draft.to_dict() if outcome.draft else None,
                    "error": outcome.error,
                },
            )
        with self._lock_for(session_id):
            return self._commit(txn)

    def submit_verdict(
        self,
        session_id: str,
        segment_id: str,
        verdict: Verdict,
        feedback: Optional[str] = None,
        override: Optional[str] = None,
    ) -> SegmentFlow:
        """Advance one segment per the transition table; returns the updated flow."""
        verdict = Verdict(verdict)
        with self._lock_for(session_id):
            txn = self._begin(session_id)
            flow = txn.session.flow(segment_id)
            self._check_verdict_preconditions(flow, verdict, feedback, override)
            txn.emit(
                "verdict_recorded",
                {
                    "segment_id": segment_id,
                    "verdict": verdict.value,
                    "feedback": feedback,
                    "override": override,
                },
            )
            self._transition(txn, flow, verdict, feedback, override)
            self._commit(txn)
            return flow

    def edit_rebuttal(self, session_id: str, segment_id: str, text: str) -> SegmentFlow:
        if not text or not text.strip():
            raise EmptyEdit("edited rebuttal text must be non-empty")
        with self._lock_for(session_id):
            txn = self._begin(session_id)
            flow = txn.session.flow(segment_id)
            if flow.stage not in (Stage.REBUTTAL_SHOWN, Stage.ACCEPTED):
                raise InvalidTransition(
                    f"cannot edit at stage {flow.stage.value}; a rebuttal must be shown first"
                )
            txn.emit("edit_set", {"segment_id": segment_id, "text": text})
            if flow.stage is not Stage.ACCEPTED:
                txn.emit("stage_set", {"segment_id": segment_id, "stage": Stage.ACCEPTED.value})
            self._commit(txn)
            return flow

    def finalize(self, session_id: str) -> str:
        """Consolidate accepted texts in segment order; idempotent."""
        with self._lock_for(session_id):
            session = self.get(session_id)
            if session.final_rebuttal is not None:
                return session.final_rebuttal
            if not session.all_accepted():
                pending = [
                    f.segment.segment_id
                    for f in session.ordered_flows()
                    if f.stage is not Stage.ACCEPTED
                ]
                raise NotAllAccepted(f"segments not yet accepted: {', '.join(pending)}")
            txn = self._begin(session_id)
            texts = [f.accepted_text() for f in txn.session.ordered_flows()]
            final = self.pipeline.consolidate(texts, metadata={"session_id": session_id})
            txn.emit("finalized", {"text": final})
            self._commit(txn)
            return final

    # -- transition table ---------------------------------------------------------

    @staticmethod
    def _check_verdict_preconditions(
        flow: SegmentFlow, verdict: Verdict, feedback: Optional[str], override: Optional[str]
    ) -> None:
        if flow.stage is Stage.ACCEPTED:
            raise InvalidTransition("segment is already accepted")
        if verdict is Verdict.ACCEPT and override:
            raise InvalidTransition("an override accompanies a reject verdict")
        if override and flow.stage not in (Stage.ERROR_TYPE_SHOWN, Stage.ACTION_SHOWN):
            raise InvalidTransition(
                "an explicit override is only accepted at the error-type and action stages"
            )
        if verdict is Verdict.REJECT and flow.stage in (
            Stage.ERROR_TYPE_SHOWN,
            Stage.ACTION_SHOWN,
            Stage.REBUTTAL_SHOWN,
        ):
            if not feedback and not override:
                raise InvalidTransition(
                    "rejecting at this stage needs feedback or an explicit override"
                )
            if feedback and not override:
                key = flow.stage.value
                if flow.feedback_rounds.get(key, 0) >= FEEDBACK_ROUND_CAP:
                    raise FeedbackRoundsExhausted(
                        f"re-prediction rounds for {key} are exhausted; "
                        "accept, override explicitly, or edit the rebuttal"
                    )

    def _transition(
        self,
        txn: _Transaction,
        flow: SegmentFlow,
        verdict: Verdict,
        feedback: Optional[str],
        override: Optional[str],
    ) -> None:
        session = txn.session
        segment_id = flow.segment.segment_id
        stage = flow.stage

        if stage is Stage.DRAFT_PROPOSED:
            if verdict is Verdict.ACCEPT:
                if flow.draft is None:
                    raise InvalidTransition(
                        "no draft to accept; reject to walk the staged pipeline"
                    )
                txn.emit("stage_set", {"segment_id": segment_id, "stage": Stage.ACCEPTED.value})
                return
            # reject: discard the proposed draft, start the staged pipeline
            if flow.draft is not None:
                txn.emit("draft_set", {"segment_id": segment_id, "draft": None, "error": None})
            value = self.pipeline.predict_deficiency(
                session.paper, session.review, flow.segment, metadata=self._meta(session)
            )
            txn.emit(
                "deficiency_set",
                {
                    "segment_id": segment_id,
                    "value": value.value,
                    "provenance": Provenance.PREDICTED.value,
                },
            )
            txn.emit(
                "stage_set", {"segment_id": segment_id, "stage": Stage.DEFICIENCY_SHOWN.value}
            )
            return

        if stage is Stage.DEFICIENCY_SHOWN:
            if verdict is Verdict.ACCEPT:
                value = flow.deficiency
                provenance = Provenance.AUTHOR_CONFIRMED
            else:
                # binary task: disagreement fully determines the flipped value
                value = (
                    DeficiencyOutcome.NON_DEFICIENT
                    if flow.deficiency is DeficiencyOutcome.DEFICIENT
                    else DeficiencyOutcome.DEFICIENT
                )
                provenance = Provenance.AUTHOR_OVERRIDDEN
            txn.emit(
                "deficiency_set",
                {"segment_id": segment_id, "value": value.value, "provenance": provenance.value},
            )
            self._discard_downstream(txn, flow, after="deficiency")
            self._advance_after_deficiency(txn, flow)
            return

        if stage is Stage.ERROR_TYPE_SHOWN:
            if verdict is Verdict.ACCEPT:
                txn.emit(
                    "error_type_set",
                    {
                        "segment_id": segment_id,
                        "value": flow.error_type.value,
                        "provenance": Provenance.AUTHOR_CONFIRMED.value,
                    },
                )
                self._predict_and_show_action(txn, flow)
                return
            if override:
                value = self._parse_error_type_override(override)
                txn.emit(
                    "error_type_set",
                    {
                        "segment_id": segment_id,
                        "value": value.value,
                        "provenance": Provenance.AUTHOR_OVERRIDDEN.value,
                    },
                )
                self._discard_downstream(txn, flow, after="error_type")
                self._predict_and_show_action(txn, flow)
                return
            value = self.pipeline.predict_error_type(
                session.paper,
                session.review,
                flow.segment,
                feedback=feedback,
                metadata=self._meta(session),
            )
            txn.emit(
                "error_type_set",
                {
                    "segment_id": segment_id,
                    "value": value.value,
                    "provenance": Provenance.PREDICTED.value,
                },
            )
            self._discard_downstream(txn, flow, after="error_type")
            return  # re-shown at the same stage with the fresh prediction

        if stage is Stage.ACTION_SHOWN:
            if verdict is Verdict.ACCEPT:
                txn.emit(
                    "action_set",
                    {
                        "segment_id": segment_id,
                        "value": flow.action.value,
                        "provenance": Provenance.AUTHOR_CONFIRMED.value,
                    },
                )
                self._generate_and_show_rebuttal(txn, flow)
                return
            if override:
                value = self._parse_action_override(override, flow)
                txn.emit(
                    "action_set",
                    {
                        "segment_id": segment_id,
                        "value": value.value,
                        "provenance": Provenance.AUTHOR_OVERRIDDEN.value,
                    },
                )
                self._discard_downstream(txn, flow, after="action")
                return  # re-shown with the overridden action
            value = self.pipeline.predict_action(
                flow.segment,
                flow.deficiency,
                flow.error_type,
                feedback=feedback,
                metadata=self._meta(session),
            )
            txn.emit(
                "action_set",
                {
                    "segment_id": segment_id,
                    "value": value.value,
                    "provenance": Provenance.PREDICTED.value,
                },
            )
            self._discard_downstream(txn, flow, after="action")
            return

        if stage is Stage.REBUTTAL_SHOWN:
            if verdict is Verdict.ACCEPT:
                txn.emit("stage_set", {"segment_id": segment_id, "stage": Stage.ACCEPTED.value})
                return
            self._generate_and_show_rebuttal(txn, flow, feedback=feedback)
            return

        raise InvalidTransition(f"no verdict expected at stage {stage.value}")

    # -- transition helpers ----------------------------------------------------

    def _meta(self, session: Session) -> dict:
        return {"session_id": session.session_id}

    def _advance_after_deficiency(self, txn: _Transaction, flow: SegmentFlow) -> None:
        segment_id = flow.segment.segment_id
        if flow.deficiency is DeficiencyOutcome.DEFICIENT:
            value = self.pipeline.predict_error_type(
                txn.session.paper,
                txn.session.review,
                flow.segment,
                metadata=self._meta(txn.session),
            )
            txn.emit(
                "error_type_set",
                {
                    "segment_id": segment_id,
                    "value": value.value,
                    "provenance": Provenance.PREDICTED.value,
                },
            )
            txn.emit(
                "stage_set", {"segment_id": segment_id, "stage": Stage.ERROR_TYPE_SHOWN.value}
            )
        else:
            self._predict_and_show_action(txn, flow)

    def _predict_and_show_action(self, txn: _Transaction, flow: SegmentFlow) -> None:
        segment_id = flow.segment.segment_id
        value = self.pipeline.predict_action(
            flow.segment, flow.deficiency, flow.error_type, metadata=self._meta(txn.session)
        )
        txn.emit(
            "action_set",
            {
                "segment_id": segment_id,
                "value": value.value,
                "provenance": Provenance.PREDICTED.value,
            },
        )
        txn.emit("stage_set", {"segment_id": segment_id, "stage": Stage.ACTION_SHOWN.value})

    def _generate_and_show_rebuttal(
        self, txn: _Transaction, flow: SegmentFlow, feedback: Optional[str] = None
    ) -> None:
        session = txn.session
        segment_id = flow.segment.segment_id
        labels = SegmentLabels(
            deficiency=flow.deficiency,
            error_type=flow.error_type,
            action=flow.action,
            deficiency_provenance=flow.deficiency_provenance,
            error_type_provenance=flow.error_type_provenance,
            action_provenance=flow.action_provenance,
        )
        draft = self.pipeline.generate_segment_rebuttal(
            session.paper,
            flow.segment,
            labels,
            context_mode=session.context_mode,
            review=session.review,
            feedback=feedback,
            metadata=self._meta(session),
        )
        txn.emit(
            "draft_set", {"segment_id": segment_id, "draft": draft.to_dict(), "error": None}
        )
        txn.emit("stage_set", {"segment_id": segment_id, "stage": Stage.REBUTTAL_SHOWN.value})

    def _discard_downstream(self, txn: _Transaction, flow: SegmentFlow, after: str) -> None:
        """Freshness rule: changing a label at stage S clears everything
        produced after S so no stale value can reach the final rebuttal."""
        segment_id = flow.segment.segment_id
        if after == "deficiency":
            if flow.error_type is not None:
                txn.emit(
                    "error_type_set",
                    {"segment_id": segment_id, "value": None, "provenance": None},
                )
        if after in ("deficiency", "error_type"):
            if flow.action is not None:
                txn.emit(
                    "action_set", {"segment_id": segment_id, "value": None, "provenance": None}
                )
        if flow.draft is not None:
            txn.emit("draft_set", {"segment_id": segment_id, "draft": None, "error": None})

    @staticmethod
    def _parse_error_type_override(override: str) -> ErrorType:
        try:
            return ErrorType(override)
        except ValueError:
            raise OverrideOutsideAllowedSet(
                f"{override!r} is not one of the error-type categories"
            ) from None

    @staticmethod
    def _parse_action_override(override: str, flow: SegmentFlow) -> RebuttalAction:
        try:
            action = RebuttalAction(override)
        except ValueError:
            raise OverrideOutsideAllowedSet(f"{override!r} is not a rebuttal action") from None
        allowed = allowed_actions(flow.deficiency, flow.error_type)
        if action not in allowed:
            raise OverrideOutsideAllowedSet(
                f"action {action.value!r} is outside the allowed set "
                f"{sorted(a.value for a in allowed)}"
            )
        return action
