"""Gold-annotated review corpus: schema, ingestion, validation, round-trip.

One corpus file is line-delimited JSON, one record per paper, each line
carrying a top-level ``schema_version``. A record holds the paper, its
decision, and its reviews; every review is a list of gold segment records
(segment, label triple, and the manually mapped gold rebuttal segments).
Skeleton records (fresh imports awaiting annotation) carry no labels and
are marked as such.

Saving is canonical: records are sorted and serialized deterministically,
so save -> load -> save is byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from rebutkit.records import PaperRecord
from rebutkit.segmentation import ReviewSegment
from rebutkit.taxonomy import SegmentLabels

CORPUS_SCHEMA_VERSION = 1


class DatasetError(Exception):
    pass


class SchemaVersionUnsupported(DatasetError):
    pass


class MalformedExport(DatasetError):
    pass


class ValidationFailed(DatasetError):
    def __init__(self, diagnostics: list[str]):
        super().__init__(
            f"{len(diagnostics)} validation problem(s):\n" + "\n".join(diagnostics)
        )
        self.diagnostics = diagnostics


class Decision(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class GoldSegmentRecord:
    """One review segment with its gold labels and mapped rebuttal segments.

    ``labels`` is absent in skeleton records; ``gold_rebuttals`` may be empty
    (a reviewer point the authors never answered).
    """

    segment: ReviewSegment
    labels: Optional[SegmentLabels] = None
    gold_rebuttals: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "segment": self.segment.to_dict(),
            "labels": self.labels.to_dict() if self.labels else None,
            "gold_rebuttals": list(self.gold_rebuttals),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "GoldSegmentRecord":
        return cls(
            segment=ReviewSegment.from_dict(raw["segment"]),
            labels=SegmentLabels.from_dict(raw["labels"]) if raw.get("labels") else None,
            gold_rebuttals=tuple(raw.get("gold_rebuttals", ())),
        )


@dataclass(frozen=True)
class ReviewRecord:
    review_text: str
    segments: tuple[GoldSegmentRecord, ...]
    rebuttal_text: Optional[str] = None  # raw thread kept on skeletons for annotation

    def to_dict(self) -> dict:
        return {
            "review_text": self.review_text,
            "segments": [s.to_dict() for s in self.segments],
            "rebuttal_text": self.rebuttal_text,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ReviewRecord":
        return cls(
            review_text=raw["review_text"],
            segments=tuple(GoldSegmentRecord.from_dict(s) for s in raw["segments"]),
            rebuttal_text=raw.get("rebuttal_text"),
        )


@dataclass(frozen=True)
class CorpusRecord:
    paper: PaperRecord
    decision: Decision
    reviews: tuple[ReviewRecord, ...]
    annotation_state: str = "gold"  # gold | skeleton

    def to_dict(self) -> dict:
        return {
            "schema_version": CORPUS_SCHEMA_VERSION,
            "paper": self.paper.to_dict(),
            "decision": self.decision.value,
            "annotation_state": self.annotation_state,
            "reviews": [r.to_dict() for r in self.reviews],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CorpusRecord":
        return cls(
            paper=PaperRecord.from_dict(raw["paper"]),
            decision=Decision(raw["decision"]),
            reviews=tuple(ReviewRecord.from_dict(r) for r in raw["reviews"]),
            annotation_state=raw.get("annotation_state", "gold"),
        )


@dataclass(frozen=True)
class CorpusStats:
    n_papers: int
    n_reviews: int
    n_segments: int
    deficiency_counts: dict = field(default_factory=dict)
    error_type_counts: dict = field(default_factory=dict)
    action_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_papers": self.n_papers,
            "n_reviews": self.n_reviews,
            "n_segments": self.n_segments,
            "deficiency_counts": dict(self.deficiency_counts),
            "error_type_counts": dict(self.error_type_counts),
            "action_counts": dict(self.action_counts),
        }


def compute_stats(records: Sequence[CorpusRecord]) -> CorpusStats:
    """Pure recomputation of corpus counts from the records."""
    deficiency: dict[str, int] = {}
    error_types: dict[str, int] = {}
    actions: dict[str, int] = {}
    n_reviews = 0
    n_segments = 0
    for record in records:
        for review in record.reviews:
            n_reviews += 1
            for gold in review.segments:
                n_segments += 1
                if gold.labels is None:
                    continue
                deficiency[gold.labels.deficiency.value] = (
                    deficiency.get(gold.labels.deficiency.value, 0) + 1
                )
                if gold.labels.error_type is not None:
                    error_types[gold.labels.error_type.value] = (
                        error_types.get(gold.labels.error_type.value, 0) + 1
                    )
                actions[gold.labels.action.value] = actions.get(gold.labels.action.value, 0) + 1
    return CorpusStats(
        n_papers=len(records),
        n_reviews=n_reviews,
        n_segments=n_segments,
        deficiency_counts=dict(sorted(deficiency.items())),
        error_type_counts=dict(sorted(error_types.items())),
        action_counts=dict(sorted(actions.items())),
    )


def validate_records(records: Sequence[CorpusRecord]) -> list[str]:
    """All invariant violations across the corpus; empty means valid."""
    diagnostics: list[str] = []
    for p, record in enumerate(records):
        where = f"paper[{p}] ({record.paper.title!r})"
        if record.annotation_state not in ("gold", "skeleton"):
            diagnostics.append(f"{where}: unknown annotation_state {record.annotation_state!r}")
        for r, review in enumerate(record.reviews):
            rwhere = f"{where} review[{r}]"
            if not review.review_text.strip():
                diagnostics.append(f"{rwhere}: empty review text")
            ordinals = [g.segment.ordinal for g in review.segments]
            if ordinals != list(range(len(ordinals))):
                diagnostics.append(f"{rwhere}: segment ordinals not contiguous: {ordinals}")
            seen_ids = set()
            for gold in review.segments:
                swhere = f"{rwhere} segment {gold.segment.segment_id}"
                if gold.segment.segment_id in seen_ids:
                    diagnostics.append(f"{swhere}: duplicate segment id")
                seen_ids.add(gold.segment.segment_id)
                if not gold.segment.text.strip():
                    diagnostics.append(f"{swhere}: empty segment text")
                if record.annotation_state == "gold" and gold.labels is None:
                    diagnostics.append(f"{swhere}: gold record is missing labels")
                if record.annotation_state == "skeleton" and gold.labels is not None:
                    diagnostics.append(f"{swhere}: skeleton record carries labels")
    return diagnostics


def _parse_line(line: str, lineno: int, diagnostics: list[str]) -> Optional[CorpusRecord]:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        diagnostics.append(f"line {lineno}: invalid JSON: {exc}")
        return None
    version = raw.get("schema_version")
    if version != CORPUS_SCHEMA_VERSION:
        raise SchemaVersionUnsupported(
            f"line {lineno}: schema_version {version!r} is not supported"
        )
    try:
        return CorpusRecord.from_dict(raw)
    except (KeyError, ValueError, TypeError) as exc:
        diagnostics.append(f"line {lineno}: {exc}{_locate_bad_segment(raw)}")
        return None


def _locate_bad_segment(raw: dict) -> str:
    """Name the segment whose labels break the invariants, if any."""
    for review in raw.get("reviews", ()) or ():
        for seg in review.get("segments", ()) or ():
            labels = seg.get("labels")
            if not labels:
                continue
            try:
                SegmentLabels.from_dict(labels)
            except (KeyError, ValueError, TypeError):
                segment_id = (seg.get("segment") or {}).get("segment_id", "?")
                return f" (segment {segment_id})"
    return ""


def load_corpus(path: Union[str, Path]) -> tuple[list[CorpusRecord], CorpusStats]:
    """Parse, validate, and summarize a corpus file.

    Raises :class:`SchemaVersionUnsupported` for unknown versions and
    :class:`ValidationFailed` with per-record diagnostics for any invariant
    violation.
    """
    path = Path(path)
    diagnostics: list[str] = []
    records: list[CorpusRecord] = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = _parse_line(line, lineno, diagnostics)
        if record is not None:
            records.append(record)
    diagnostics.extend(validate_records(records))
    if diagnostics:
        raise ValidationFailed(diagnostics)
    return records, compute_stats(records)


def save_corpus(records: Sequence[CorpusRecord], path: Union[str, Path]) -> None:
    """Write a corpus file in canonical order; refuses invalid records."""
    diagnostics = validate_records(records)
    if diagnostics:
        raise ValidationFailed(diagnostics)
    ordered = sorted(records, key=lambda r: (r.paper.title, r.paper.source_ref or ""))
    lines = [
        json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) for record in ordered
    ]
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def import_openreview_dump(
    raw_records: Sequence[dict],
    segmenter: Callable[[str], Sequence[ReviewSegment]],
) -> list[CorpusRecord]:
    """Turn raw review/rebuttal exports into unlabeled skeleton records.

    Each raw record needs a paper title, paper body, a decision, and its
    reviews; a review missing its rebuttal thread is kept but flagged
    no-gold (``rebuttal_text`` stays empty). Segmentation runs on every
    review; labels stay empty for the annotation tooling downstream.
    """
    skeletons: list[CorpusRecord] = []
    for index, raw in enumerate(raw_records):
        try:
            paper = PaperRecord(
                title=raw["title"],
                body=raw.get("body") or raw.get("content") or "",
                source_ref=raw.get("id"),
            )
            decision = Decision(raw["decision"])
            reviews_raw = raw["reviews"]
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedExport(f"export record [{index}]: {exc}") from exc
        if not isinstance(reviews_raw, list) or not reviews_raw:
            raise MalformedExport(f"export record [{index}]: no reviews")
        reviews = []
        for review_raw in reviews_raw:
            text = review_raw.get("text", "")
            if not text.strip():
                raise MalformedExport(f"export record [{index}]: empty review text")
            segments = tuple(
                GoldSegmentRecord(segment=s) for s in segmenter(text)
            )
            reviews.append(
                ReviewRecord(
                    review_text=text,
                    segments=segments,
                    rebuttal_text=review_raw.get("rebuttal"),
                )
            )
        skeletons.append(
            CorpusRecord(
                paper=paper,
                decision=decision,
                reviews=tuple(reviews),
                annotation_state="skeleton",
            )
        )
    return skeletons
