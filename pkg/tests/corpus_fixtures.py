"""Builders for synthetic gold corpora used across dataset and benchmark tests."""

from rebutkit.dataset import CorpusRecord, Decision, GoldSegmentRecord, ReviewRecord
from rebutkit.records import PaperRecord
from rebutkit.segmentation import ReviewSegment, SegmentKind, segment_id_for
from rebutkit.taxonomy import (
    DeficiencyOutcome,
    ErrorType,
    RebuttalAction,
    SegmentLabels,
    allowed_actions,
)

# Valid label triples cycled through generated segments.
LABEL_CYCLE = [
    (DeficiencyOutcome.DEFICIENT, ErrorType.INCORRECT_REFERENCES, RebuttalAction.REJECT_REQUEST),
    (DeficiencyOutcome.NON_DEFICIENT, None, RebuttalAction.ANSWER_QUESTION),
    (
        DeficiencyOutcome.DEFICIENT,
        ErrorType.MISINTERPRETATION_OF_CLAIMS,
        RebuttalAction.CONTRADICT_ASSERTION,
    ),
    (DeficiencyOutcome.NON_DEFICIENT, None, RebuttalAction.ACCEPT_PRAISE),
    (
        DeficiencyOutcome.DEFICIENT,
        ErrorType.SUPERFICIAL_VAGUE_REVIEW,
        RebuttalAction.REFUTE_QUESTION,
    ),
    (DeficiencyOutcome.NON_DEFICIENT, None, RebuttalAction.CONCEDE_CRITICISM),
]


def make_gold_segment(ordinal, text, labels_index=0, gold_rebuttals=("We address this point.",)):
    deficiency, error_type, action = LABEL_CYCLE[labels_index % len(LABEL_CYCLE)]
    assert action in allowed_actions(deficiency, error_type)
    return GoldSegmentRecord(
        segment=ReviewSegment(
            segment_id=segment_id_for(ordinal, text),
            ordinal=ordinal,
            kind=SegmentKind.WEAKNESS if deficiency is DeficiencyOutcome.DEFICIENT
            else SegmentKind.OTHER,
            text=text,
        ),
        labels=SegmentLabels(deficiency=deficiency, error_type=error_type, action=action),
        gold_rebuttals=tuple(gold_rebuttals),
    )


def make_review(paper_index, review_index, n_segments):
    segments = tuple(
        make_gold_segment(
            ordinal,
            f"Paper {paper_index} review {review_index} point {ordinal}: "
            f"the claim needs scrutiny.",
            labels_index=ordinal,
        )
        for ordinal in range(n_segments)
    )
    review_text = "\n\n".join(g.segment.text for g in segments)
    return ReviewRecord(review_text=review_text, segments=segments)


def make_corpus(segment_plan):
    """Build records from a plan: list of (decision, [segments-per-review])."""
    records = []
    for paper_index, (decision, reviews_plan) in enumerate(segment_plan):
        reviews = tuple(
            make_review(paper_index, review_index, n_segments)
            for review_index, n_segments in enumerate(reviews_plan)
        )
        records.append(
            CorpusRecord(
                paper=PaperRecord(
                    title=f"Synthetic Paper {paper_index}",
                    body=f"Body of synthetic paper {paper_index}. It makes modest claims.",
                    source_ref=f"syn-{paper_index}",
                ),
                decision=decision,
                reviews=reviews,
            )
        )
    return records


def toy_corpus():
    """Two papers, three reviews, five segments; all labels valid."""
    return make_corpus(
        [
            (Decision.ACCEPTED, [2, 1]),
            (Decision.REJECTED, [2]),
        ]
    )


def reference_shape_corpus():
    """Structurally faithful shape: 4 papers, 13 reviews, 185 segments."""
    return make_corpus(
        [
            (Decision.ACCEPTED, [15, 15, 15, 14]),
            (Decision.ACCEPTED, [14, 14, 14]),
            (Decision.REJECTED, [14, 14, 14]),
            (Decision.REJECTED, [14, 14, 14]),
        ]
    )
