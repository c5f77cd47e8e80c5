"""Review segmentation: coverage invariant, repair, fallback, stable ids."""

import pytest

from rebutkit.segmentation import (
    EmptyReview,
    SegmentKind,
    covers,
    parse_segment_blocks,
    segment_review,
    strip_whitespace,
)

from conftest import ORACLE_SPANS, make_gateway, tagged_reply


def test_scripted_wellformed_spans(oracle_review, oracle_reply):
    gw = make_gateway({"review_segmentation": [oracle_reply]})
    segments = segment_review(gw, oracle_review)
    assert [s.kind for s in segments] == [
        SegmentKind.SUMMARY,
        SegmentKind.WEAKNESS,
        SegmentKind.WEAKNESS,
    ]
    assert [s.text for s in segments] == [text for _, text in ORACLE_SPANS]
    assert [s.ordinal for s in segments] == [0, 1, 2]


def test_two_segment_review():
    review = "Good summary here.\n\nBut the proof of Lemma 2 is wrong."
    reply = tagged_reply(
        [("SUMMARY", "Good summary here."), ("WEAKNESS", "But the proof of Lemma 2 is wrong.")]
    )
    gw = make_gateway({"review_segmentation": [reply]})
    segments = segment_review(gw, review)
    assert len(segments) == 2
    assert segments[0].kind is SegmentKind.SUMMARY
    assert segments[1].kind is SegmentKind.WEAKNESS


def test_empty_review_raises():
    gw = make_gateway([])
    with pytest.raises(EmptyReview):
        segment_review(gw, "   \n\t ")


def test_coverage_invariant_holds(oracle_review, oracle_reply):
    gw = make_gateway({"review_segmentation": [oracle_reply]})
    segments = segment_review(gw, oracle_review)
    assert covers(oracle_review, [s.text for s in segments])
    joined = strip_whitespace("".join(s.text for s in segments))
    assert joined == strip_whitespace(oracle_review)


def test_repair_reprompt_on_lossy_reply(oracle_review, oracle_reply):
    lossy = tagged_reply([("SUMMARY", "A paraphrase that drops text.")])
    gw = make_gateway({"review_segmentation": [lossy], "review_segmentation_repair": [oracle_reply]})
    segments = segment_review(gw, oracle_review)
    assert covers(oracle_review, [s.text for s in segments])
    assert gw.audit.count("review_segmentation_repair") == 1


def test_fallback_paragraph_split_when_repair_also_fails(oracle_review):
    bad = "no tags at all"
    gw = make_gateway(
        {"review_segmentation": [bad], "review_segmentation_repair": ["still no tags"]}
    )
    segments = segment_review(gw, oracle_review)
    assert len(segments) == 3  # one per paragraph
    assert all(s.kind is SegmentKind.OTHER for s in segments)
    assert covers(oracle_review, [s.text for s in segments])


def test_fallback_single_paragraph():
    review = "One paragraph only, no blank lines."
    gw = make_gateway({"review_segmentation": ["junk"], "review_segmentation_repair": ["junk"]})
    segments = segment_review(gw, review)
    assert len(segments) == 1
    assert covers(review, [s.text for s in segments])


def test_unknown_kind_normalizes_to_other():
    blocks = parse_segment_blocks("<<<segment kind=RANT>>>\nsome text\n<<<end>>>")
    assert blocks == [(SegmentKind.OTHER, "some text")]


def test_idempotent_under_scripted_backend(oracle_review, oracle_reply):
    results = []
    for _ in range(2):
        gw = make_gateway({"review_segmentation": [oracle_reply]})
        results.append(segment_review(gw, oracle_review))
    assert results[0] == results[1]


def test_segment_ids_stable_and_distinct(oracle_review, oracle_reply):
    gw = make_gateway({"review_segmentation": [oracle_reply]})
    segments = segment_review(gw, oracle_review)
    ids = [s.segment_id for s in segments]
    assert len(set(ids)) == len(ids)
    gw2 = make_gateway({"review_segmentation": [oracle_reply]})
    assert [s.segment_id for s in segment_review(gw2, oracle_review)] == ids


def test_segmentation_prompt_carries_review(oracle_review, oracle_reply):
    gw = make_gateway({"review_segmentation": [oracle_reply]})
    segment_review(gw, oracle_review)
    record = gw.audit.records("review_segmentation")[0]
    assert oracle_review in record.prompt
