"""Shared record types passed between the pipeline, sessions, and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

from rebutkit.taxonomy import SegmentLabels

if TYPE_CHECKING:
    from rebutkit.retrieval import EvidenceSnippet


class ContextMode(str, Enum):
    FULL_PAPER = "full_paper"
    PAPER_CONTEXT_ONLY = "paper_context_only"
    LITERATURE_AUGMENTED = "literature_augmented"


class Paradigm(str, Enum):
    DIRECT = "drg"
    SEGMENT_WISE = "swrg"
    STAGED = "sa"


@dataclass(frozen=True)
class PaperRecord:
    title: str
    body: str
    source_ref: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.title.strip():
            raise ValueError("paper title must be non-empty")
        if not self.body.strip():
            raise ValueError("paper body must be non-empty")

    def to_dict(self) -> dict:
        return {"title": self.title, "body": self.body, "source_ref": self.source_ref}

    @classmethod
    def from_dict(cls, raw: dict) -> "PaperRecord":
        return cls(title=raw["title"], body=raw["body"], source_ref=raw.get("source_ref"))


@dataclass(frozen=True)
class RebuttalDraft:
    """One generated rebuttal plus the provenance of how it was produced.

    ``segment_id`` is absent for whole-review direct generation. Staged
    drafts always carry the label triple they were generated from; the other
    paradigms never do.
    """

    text: str
    paradigm: Paradigm
    context_used: ContextMode
    segment_id: Optional[str] = None
    labels_used: Optional[SegmentLabels] = None
    context_excerpt: Optional[str] = None
    evidence: tuple["EvidenceSnippet", ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("draft text must be non-empty")
        if (self.paradigm is Paradigm.STAGED) != (self.labels_used is not None):
            raise ValueError("labels_used is carried by staged drafts and only by them")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "paradigm": self.paradigm.value,
            "context_used": self.context_used.value,
            "segment_id": self.segment_id,
            "labels_used": self.labels_used.to_dict() if self.labels_used else None,
            "context_excerpt": self.context_excerpt,
            "evidence": [snippet.to_dict() for snippet in self.evidence],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RebuttalDraft":
        from rebutkit.retrieval import EvidenceSnippet

        return cls(
            text=raw["text"],
            paradigm=Paradigm(raw["paradigm"]),
            context_used=ContextMode(raw["context_used"]),
            segment_id=raw.get("segment_id"),
            labels_used=SegmentLabels.from_dict(raw["labels_used"])
            if raw.get("labels_used")
            else None,
            context_excerpt=raw.get("context_excerpt"),
            evidence=tuple(EvidenceSnippet.from_dict(s) for s in raw.get("evidence", ())),
        )


@dataclass(frozen=True)
class DraftOutcome:
    """Per-segment result of segment-wise generation: a draft or a failure."""

    segment_id: str
    ordinal: int
    draft: Optional[RebuttalDraft] = None
    error: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.draft is None) == (self.error is None):
            raise ValueError("outcome carries exactly one of draft or error")
