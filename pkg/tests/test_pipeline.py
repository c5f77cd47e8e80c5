"""Pipeline paradigms: direct, segment-wise, staged stages, consolidation."""

import httpx
import pytest

from rebutkit.gateway import TransientBackendError, UnparseableOutput
from rebutkit.pipeline import RebuttalPipeline, UnsupportedContextMode, consolidation_fallback
from rebutkit.records import ContextMode, Paradigm
from rebutkit.retrieval import LiteratureClient
from rebutkit.segmentation import SegmentKind
from rebutkit.taxonomy import (
    DeficiencyOutcome,
    ErrorType,
    LabelValidationError,
    Provenance,
    RebuttalAction,
    SegmentLabels,
    action_statement,
    allowed_actions,
)

from conftest import make_gateway, make_segment

D = DeficiencyOutcome.DEFICIENT
N = DeficiencyOutcome.NON_DEFICIENT


def make_pipeline(script, **kwargs):
    gw = make_gateway(script)
    return RebuttalPipeline(gw, **kwargs), gw


def stub_literature(records):
    def handler(request):
        return httpx.Response(200, json={"results": records})

    return LiteratureClient(
        base_url="https://scholar.test/api",
        transport=httpx.MockTransport(handler),
        sleep=lambda _s: None,
    )


# -- direct generation ---------------------------------------------------------


def test_direct_scripted_echo(paper):
    pipe, _ = make_pipeline({"direct_rebuttal": ["We thank the reviewer for the comments."]})
    draft = pipe.generate_direct(paper, "The evaluation is too narrow.")
    assert draft.text == "We thank the reviewer for the comments."
    assert draft.paradigm is Paradigm.DIRECT
    assert draft.segment_id is None
    assert draft.labels_used is None


def test_direct_empty_review_rejected(paper):
    pipe, _ = make_pipeline([])
    with pytest.raises(ValueError):
        pipe.generate_direct(paper, "   ")


def test_direct_prompt_contains_all_three_inputs(paper):
    review = "The ablation study is missing a dense baseline."
    pipe, gw = make_pipeline({"direct_rebuttal": ["ok"]})
    pipe.generate_direct(paper, review)
    prompt = gw.audit.records("direct_rebuttal")[0].prompt
    assert paper.title in prompt
    assert paper.body in prompt
    assert review in prompt


def test_direct_paper_context_mode_unsupported(paper):
    pipe, _ = make_pipeline([])
    with pytest.raises(UnsupportedContextMode):
        pipe.generate_direct(paper, "review", ContextMode.PAPER_CONTEXT_ONLY)


def test_direct_literature_augmented(paper):
    pipe, gw = make_pipeline(
        {"literature_query": ["sparse routing translation"], "direct_rebuttal": ["ok"]},
        literature=stub_literature([{"id": "P9", "title": "Prior", "snippet": "Known result."}]),
    )
    draft = pipe.generate_direct(paper, "This was done before.", ContextMode.LITERATURE_AUGMENTED)
    assert [s.source_id for s in draft.evidence] == ["P9"]
    prompt = gw.audit.records("direct_rebuttal")[0].prompt
    assert "P9" in prompt and "Known result." in prompt


# -- segment-wise generation ----------------------------------------------------


def segments3():
    return [
        make_segment(0, "Summary of the approach.", SegmentKind.SUMMARY),
        make_segment(1, "The baseline is weak."),
        make_segment(2, "Missing related work."),
    ]


def test_segmentwise_arity_and_order(paper):
    pipe, _ = make_pipeline({"segment_rebuttal": ["r0", "r1", "r2"]})
    outcomes = pipe.generate_segmentwise(paper, "full review", segments3())
    assert [o.ordinal for o in outcomes] == [0, 1, 2]
    assert [o.draft.text for o in outcomes] == ["r0", "r1", "r2"]
    assert all(o.draft.paradigm is Paradigm.SEGMENT_WISE for o in outcomes)
    assert all(o.draft.segment_id == o.segment_id for o in outcomes)


def test_segmentwise_empty_list(paper):
    pipe, _ = make_pipeline([])
    assert pipe.generate_segmentwise(paper, "review", []) == []


def test_segmentwise_fault_injection_preserves_siblings(paper):
    # middle segment fails persistently: three transient errors exhaust retries
    script = {
        "segment_rebuttal": [
            "r0",
            TransientBackendError("boom"),
            TransientBackendError("boom"),
            TransientBackendError("boom"),
            "r2",
        ]
    }
    pipe, _ = make_pipeline(script)
    outcomes = pipe.generate_segmentwise(paper, "review", segments3())
    assert [o.ordinal for o in outcomes] == [0, 1, 2]
    assert outcomes[0].draft.text == "r0"
    assert outcomes[1].draft is None and "boom" in outcomes[1].error
    assert outcomes[2].draft.text == "r2"


def test_segmentwise_prompt_includes_review_and_segment(paper):
    pipe, gw = make_pipeline({"segment_rebuttal": ["r0"]})
    segment = make_segment(0, "The baseline is weak.")
    pipe.generate_segmentwise(paper, "entire review text", [segment])
    prompt = gw.audit.records("segment_rebuttal")[0].prompt
    assert "entire review text" in prompt
    assert segment.text in prompt
    assert paper.body in prompt


def test_segmentwise_paper_context_only_uses_excerpt(paper):
    quote = "Ablations show the gain comes mostly from routing diversity"
    pipe, gw = make_pipeline({"paper_context": [quote], "segment_rebuttal": ["r0"]})
    segment = make_segment(0, "Where does the gain come from?")
    outcomes = pipe.generate_segmentwise(
        paper, "review", [segment], ContextMode.PAPER_CONTEXT_ONLY
    )
    prompt = gw.audit.records("segment_rebuttal")[0].prompt
    assert quote in prompt
    assert paper.body not in prompt
    assert outcomes[0].draft.context_excerpt == quote


# -- deficiency prediction -------------------------------------------------------


def test_dp_scripted_deficient(paper):
    pipe, _ = make_pipeline({"deficiency_classify": ["Deficient"]})
    assert pipe.predict_deficiency(paper, "review", make_segment(0, "seg")) is D


def test_dp_case_fold(paper):
    pipe, _ = make_pipeline({"deficiency_classify": ["non-deficient"]})
    assert pipe.predict_deficiency(paper, "review", make_segment(0, "seg")) is N


def test_dp_reasks_limit_two(paper):
    pipe, gw = make_pipeline({"deficiency_classify": ["it depends", "it depends", "Deficient"]})
    assert pipe.predict_deficiency(paper, "review", make_segment(0, "seg")) is D
    assert gw.audit.count("deficiency_classify") == 3


def test_dp_prompt_contents(paper):
    pipe, gw = make_pipeline({"deficiency_classify": ["Deficient"]})
    segment = make_segment(0, "The claims are overstated.")
    pipe.predict_deficiency(paper, "whole review body", segment)
    prompt = gw.audit.records("deficiency_classify")[0].prompt
    for needle in (paper.title, paper.body, "whole review body", segment.text):
        assert needle in prompt
    assert "deficient" in prompt.lower()


# -- error-type prediction --------------------------------------------------------


def test_etp_scripted_display_name(paper):
    pipe, _ = make_pipeline({"error_type_classify": ["Superficial and vague review"]})
    label = pipe.predict_error_type(paper, "review", make_segment(0, "seg"))
    assert label is ErrorType.SUPERFICIAL_VAGUE_REVIEW


def test_etp_fine_grained_member_normalizes(paper):
    pipe, _ = make_pipeline({"error_type_classify": ["Misunderstanding"]})
    label = pipe.predict_error_type(paper, "review", make_segment(0, "seg"))
    assert label is ErrorType.MISINTERPRETATION_OF_CLAIMS


def test_etp_on_non_deficient_is_contract_violation(paper):
    pipe, _ = make_pipeline([])
    with pytest.raises(LabelValidationError):
        pipe.predict_error_type(paper, "review", make_segment(0, "seg"), deficiency=N)


def test_etp_prompt_lists_all_categories_with_definitions(paper):
    pipe, gw = make_pipeline({"error_type_classify": ["Incorrect references"]})
    pipe.predict_error_type(paper, "review", make_segment(0, "seg"))
    prompt = gw.audit.records("error_type_classify")[0].prompt
    from rebutkit.taxonomy import DEFAULT_TAXONOMY

    for info in DEFAULT_TAXONOMY.error_types.values():
        assert info.display in prompt
        assert info.definition in prompt


def test_etp_feedback_enters_prompt(paper):
    pipe, gw = make_pipeline({"error_type_classify": ["Incorrect references"]})
    pipe.predict_error_type(
        paper, "review", make_segment(0, "seg"), feedback="the cited work is unpublished"
    )
    prompt = gw.audit.records("error_type_classify")[0].prompt
    assert "the cited work is unpublished" in prompt


# -- action prediction --------------------------------------------------------------


def test_rap_singleton_bypass_makes_no_call(paper):
    pipe, gw = make_pipeline([])
    action = pipe.predict_action(make_segment(0, "seg"), D, ErrorType.INCORRECT_REFERENCES)
    assert action is RebuttalAction.REJECT_REQUEST
    assert gw.audit.count("action_classify") == 0


def test_rap_scripted_choice_within_allowed(paper):
    pipe, _ = make_pipeline({"action_classify": ["Answer question"]})
    action = pipe.predict_action(make_segment(0, "seg"), N)
    assert action is RebuttalAction.ANSWER_QUESTION


def test_rap_out_of_set_reply_triggers_reask(paper):
    pipe, gw = make_pipeline({"action_classify": ["Reject Request", "Answer question"]})
    action = pipe.predict_action(make_segment(0, "seg"), N)
    assert action is RebuttalAction.ANSWER_QUESTION
    assert gw.audit.count("action_classify") == 2
    assert gw.audit.count("action_classify", reask="1") == 1


def test_rap_out_of_set_exhausts_reasks(paper):
    pipe, _ = make_pipeline({"action_classify": ["Reject Request"] * 3})
    with pytest.raises(UnparseableOutput):
        pipe.predict_action(make_segment(0, "seg"), N)


def all_valid_label_inputs():
    yield N, None
    for error_type in ErrorType:
        yield D, error_type


def test_rap_exhaustive_result_always_in_allowed_set(paper):
    # Adversarial script: first reply is always an out-of-set action name,
    # second is a valid candidate. Result must land in the allowed set.
    for deficiency, error_type in all_valid_label_inputs():
        candidates = sorted(allowed_actions(deficiency, error_type), key=lambda a: a.value)
        if len(candidates) == 1:
            pipe, gw = make_pipeline([])
            action = pipe.predict_action(make_segment(0, "seg"), deficiency, error_type)
            assert gw.audit.count("action_classify") == 0
        else:
            from rebutkit.taxonomy import DEFAULT_TAXONOMY

            outside = [a for a in RebuttalAction if a not in candidates]
            replies = ["not a real action"]
            if outside:  # the "all actions" row has no out-of-set name
                replies.append(DEFAULT_TAXONOMY.actions[outside[0]].display)
            replies.append(DEFAULT_TAXONOMY.actions[candidates[0]].display)
            pipe, _ = make_pipeline({"action_classify": replies})
            action = pipe.predict_action(make_segment(0, "seg"), deficiency, error_type)
        assert action in allowed_actions(deficiency, error_type)


def test_rap_all_row_has_no_outside_action(paper):
    # The summary row allows all 11 actions; any parsable action is valid.
    pipe, _ = make_pipeline({"action_classify": ["Concede criticism"]})
    action = pipe.predict_action(
        make_segment(0, "seg"), D, ErrorType.INCOMPLETE_INCORRECT_COPIED_SUMMARY
    )
    assert action is RebuttalAction.CONCEDE_CRITICISM


# -- staged rebuttal generation ----------------------------------------------------


def staged_labels():
    return SegmentLabels(
        deficiency=D,
        error_type=ErrorType.MISINTERPRETATION_OF_CLAIMS,
        action=RebuttalAction.CONTRADICT_ASSERTION,
        deficiency_provenance=Provenance.AUTHOR_CONFIRMED,
    )


def test_rg_scripted_echo(paper):
    pipe, _ = make_pipeline({"staged_rebuttal": ["We respectfully disagree."]})
    draft = pipe.generate_segment_rebuttal(paper, make_segment(0, "seg"), staged_labels())
    assert draft.text == "We respectfully disagree."
    assert draft.paradigm is Paradigm.STAGED
    assert draft.labels_used == staged_labels()


def test_rg_prompt_contains_statements(paper):
    pipe, gw = make_pipeline({"staged_rebuttal": ["ok"]})
    labels = staged_labels()
    pipe.generate_segment_rebuttal(paper, make_segment(0, "seg"), labels)
    prompt = gw.audit.records("staged_rebuttal")[0].prompt
    assert action_statement(labels.action) in prompt
    from rebutkit.taxonomy import deficiency_statement, error_type_statement

    assert deficiency_statement(labels.deficiency) in prompt
    assert error_type_statement(labels.error_type) in prompt


def test_rg_feedback_verbatim_in_prompt(paper):
    pipe, gw = make_pipeline({"staged_rebuttal": ["ok"]})
    pipe.generate_segment_rebuttal(
        paper,
        make_segment(0, "seg"),
        staged_labels(),
        feedback="mention Table 3 explicitly",
    )
    prompt = gw.audit.records("staged_rebuttal")[0].prompt
    assert "mention Table 3 explicitly" in prompt


def test_rg_includes_review_with_full_paper_context(paper):
    pipe, gw = make_pipeline({"staged_rebuttal": ["ok"]})
    pipe.generate_segment_rebuttal(
        paper, make_segment(0, "seg"), staged_labels(), review="the entire review"
    )
    prompt = gw.audit.records("staged_rebuttal")[0].prompt
    assert "the entire review" in prompt


def test_rg_non_deficient_labels_omit_error_type_line(paper):
    pipe, gw = make_pipeline({"staged_rebuttal": ["ok"]})
    labels = SegmentLabels(deficiency=N, action=RebuttalAction.ANSWER_QUESTION)
    pipe.generate_segment_rebuttal(paper, make_segment(0, "seg"), labels)
    prompt = gw.audit.records("staged_rebuttal")[0].prompt
    from rebutkit.taxonomy import deficiency_statement

    assert deficiency_statement(N) in prompt


# -- consolidation -------------------------------------------------------------------


def test_consolidate_single_draft_fallback_is_heading_plus_text(paper):
    pipe, _ = make_pipeline({"consolidate": ["untagged"], "consolidate_repair": ["untagged"]})
    final = pipe.consolidate(["only draft text"])
    assert final == consolidation_fallback(["only draft text"])
    assert "only draft text" in final


def test_consolidate_accepts_fully_tagged_reply(paper):
    reply = "[S1] covered one\n[S2] covered two\n[S3] covered three"
    pipe, gw = make_pipeline({"consolidate": [reply]})
    final = pipe.consolidate(["a", "b", "c"])
    assert final == reply
    assert gw.audit.count("consolidate_repair") == 0


def test_consolidate_incomplete_then_fallback_keeps_order(paper):
    pipe, gw = make_pipeline(
        {"consolidate": ["[S1] one [S2] two"], "consolidate_repair": ["[S1] one [S3] three"]}
    )
    final = pipe.consolidate(["alpha", "bravo", "charlie"])
    assert gw.audit.count("consolidate_repair") == 1
    assert final.index("alpha") < final.index("bravo") < final.index("charlie")


def test_consolidate_requires_at_least_one_draft(paper):
    pipe, _ = make_pipeline([])
    with pytest.raises(ValueError):
        pipe.consolidate([])


# -- determinism ------------------------------------------------------------------


def test_runs_byte_identical_with_same_script(paper):
    def run():
        pipe, _ = make_pipeline(
            {
                "deficiency_classify": ["Deficient"],
                "error_type_classify": ["Misunderstanding"],
                "action_classify": ["Refute question"],
                "staged_rebuttal": ["final text"],
                "segment_rebuttal": ["sw text"],
                "direct_rebuttal": ["direct text"],
            }
        )
        segment = make_segment(0, "seg")
        deficiency = pipe.predict_deficiency(paper, "review", segment)
        error_type = pipe.predict_error_type(paper, "review", segment)
        action = pipe.predict_action(segment, deficiency, error_type)
        labels = SegmentLabels(deficiency=deficiency, error_type=error_type, action=action)
        staged = pipe.generate_segment_rebuttal(paper, segment, labels)
        swrg = pipe.generate_segmentwise(paper, "review", [segment])
        direct = pipe.generate_direct(paper, "review")
        return (staged.text, swrg[0].draft.text, direct.text, labels)

    assert run() == run()
