"""Split a review into ordered semantic segments via one gateway call.

The segmentation prompt asks the model for delimiter-tagged verbatim spans
so coverage is checkable: concatenating the spans (ignoring whitespace) must
reproduce the review body. A violating reply gets one repair re-prompt;
after that the review is split on paragraph boundaries instead, so a
non-empty review always segments.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from rebutkit.gateway import Decoding, LLMGateway, PromptRequest

SEGMENTATION_DECODING = Decoding(temperature=0.0, max_output_tokens=4096)


class EmptyReview(ValueError):
    """The review is empty after trimming."""


class SegmentationFailed(RuntimeError):
    """Reserved for contract violations; the paragraph fallback prevents it."""


class SegmentKind(str, Enum):
    SUMMARY = "summary"
    STRENGTH = "strength"
    WEAKNESS = "weakness"
    QUESTION = "question"
    SUGGESTION = "suggestion"
    OTHER = "other"


@dataclass(frozen=True)
class ReviewSegment:
    segment_id: str
    ordinal: int
    kind: SegmentKind
    text: str

    def to_dict(self) -> dict:
        return {
            "segment_id": self.segment_id,
            "ordinal": self.ordinal,
            "kind": self.kind.value,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ReviewSegment":
        return cls(
            segment_id=raw["segment_id"],
            ordinal=raw["ordinal"],
            kind=SegmentKind(raw["kind"]),
            text=raw["text"],
        )


_BLOCK_RE = re.compile(r"<<<segment kind=([A-Za-z_]+)>>>\s*\n(.*?)\n?<<<end>>>", re.DOTALL)
_WS_RE = re.compile(r"\s+")


def segment_id_for(ordinal: int, text: str) -> str:
    """Content-hash id: re-segmenting an unchanged review keeps ids stable."""
    digest = hashlib.sha1(f"{ordinal}:{text}".encode("utf-8")).hexdigest()
    return f"seg-{digest[:12]}"


def strip_whitespace(text: str) -> str:
    return _WS_RE.sub("", text)


def parse_segment_blocks(raw: str) -> list[tuple[SegmentKind, str]]:
    """Extract (kind, span) pairs from a tagged model reply; unknown kinds map to OTHER."""
    blocks = []
    for kind_raw, span in _BLOCK_RE.findall(raw):
        try:
            kind = SegmentKind(kind_raw.strip().lower())
        except ValueError:
            kind = SegmentKind.OTHER
        if span.strip():
            blocks.append((kind, span))
    return blocks


def covers(review: str, spans: list[str]) -> bool:
    """True when the spans reproduce the review exactly, ignoring whitespace."""
    return strip_whitespace("".join(spans)) == strip_whitespace(review)


def paragraph_fallback(review: str) -> list[tuple[SegmentKind, str]]:
    paragraphs = [p for p in re.split(r"\n\s*\n", review) if p.strip()]
    if not paragraphs:
        paragraphs = [review]
    return [(SegmentKind.OTHER, p) for p in paragraphs]


def build_segments(blocks: list[tuple[SegmentKind, str]]) -> list[ReviewSegment]:
    return [
        ReviewSegment(
            segment_id=segment_id_for(ordinal, text),
            ordinal=ordinal,
            kind=kind,
            text=text,
        )
        for ordinal, (kind, text) in enumerate(blocks)
    ]


def segment_review(
    gateway: LLMGateway, review: str, metadata: Optional[dict] = None
) -> list[ReviewSegment]:
    """Segment a review into ordered semantic units.

    Raises :class:`EmptyReview` for blank input. A model reply that breaks
    the coverage invariant triggers one repair re-prompt, then the
    deterministic paragraph fallback.
    """
    if not review.strip():
        raise EmptyReview("review is empty")
    metadata = {"stage": "segmentation", **(metadata or {})}

    result = gateway.complete(
        PromptRequest(
            template_id="review_segmentation",
            slots={"review": review},
            decoding=SEGMENTATION_DECODING,
            metadata=metadata,
        )
    )
    blocks = parse_segment_blocks(result.text)
    if not blocks or not covers(review, [text for _, text in blocks]):
        problem = (
            "the segments did not reproduce the review text verbatim"
            if blocks
            else "no well-formed segment blocks were found"
        )
        result = gateway.complete(
            PromptRequest(
                template_id="review_segmentation_repair",
                slots={"review": review, "problem": problem},
                decoding=SEGMENTATION_DECODING,
                metadata={**metadata, "repair": "1"},
            )
        )
        blocks = parse_segment_blocks(result.text)
        if not blocks or not covers(review, [text for _, text in blocks]):
            blocks = paragraph_fallback(review)

    segments = build_segments(blocks)
    if not segments:
        raise SegmentationFailed("produced zero segments for non-empty review")
    return segments
