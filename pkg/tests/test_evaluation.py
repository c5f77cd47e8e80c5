"""Judging harness: alignment, aspect verdicts, metrics, benchmark contracts."""

import random

import pytest

from rebutkit.dataset import GoldSegmentRecord
from rebutkit.evaluation import (
    Aspect,
    BenchmarkParadigm,
    BenchmarkRunner,
    ClassificationStage,
    JudgeVerdict,
    RebuttalJudge,
    action_refutes,
    align_generated_to_segments,
    aspect_precision,
    stage_metrics,
)
from rebutkit.pipeline import RebuttalPipeline
from rebutkit.records import ContextMode
from rebutkit.taxonomy import (
    DeficiencyOutcome,
    ErrorType,
    RebuttalAction,
    SegmentLabels,
)

from conftest import make_gateway, make_segment, tagged_reply
from corpus_fixtures import toy_corpus

D = DeficiencyOutcome.DEFICIENT
N = DeficiencyOutcome.NON_DEFICIENT


def make_gold(ordinal=0, action=RebuttalAction.REFUTE_QUESTION, gold_rebuttals=("Gold text.",)):
    deficient = action not in (RebuttalAction.ANSWER_QUESTION, RebuttalAction.ACCEPT_PRAISE)
    labels = SegmentLabels(
        deficiency=D if deficient else N,
        error_type=ErrorType.MISINTERPRETATION_OF_CLAIMS if deficient else None,
        action=action,
    )
    return GoldSegmentRecord(
        segment=make_segment(ordinal, f"Reviewer point {ordinal}."),
        labels=labels,
        gold_rebuttals=tuple(gold_rebuttals),
    )


# -- alignment ------------------------------------------------------------------


def test_alignment_scripted_map():
    segments = [make_segment(0, "W1 point"), make_segment(1, "W2 point")]
    rebuttal_blocks = tagged_reply([("OTHER", "Reply to first."), ("OTHER", "Reply to second.")])
    gw = make_gateway(
        {
            "rebuttal_segmentation": [rebuttal_blocks],
            "rebuttal_alignment": ["R1 -> G2\nR2 -> G1"],
        }
    )
    mapping = align_generated_to_segments(gw, segments, "full rebuttal text")
    assert mapping[segments[0].segment_id] == "Reply to second."
    assert mapping[segments[1].segment_id] == "Reply to first."


def test_alignment_absences_are_valid():
    segments = [make_segment(i, f"seg {i}") for i in range(3)]
    rebuttal_blocks = tagged_reply([("OTHER", "Only one reply.")])
    gw = make_gateway(
        {
            "rebuttal_segmentation": [rebuttal_blocks],
            "rebuttal_alignment": ["R1 -> G1\nR2 -> none\nR3 -> none"],
        }
    )
    mapping = align_generated_to_segments(gw, segments, "rebuttal")
    values = [mapping[s.segment_id] for s in segments]
    assert values == ["Only one reply.", None, None]


def test_alignment_matches_marker_oracle():
    # Oracle: a rebuttal whose paragraphs carry explicit "Re: W<i>" markers;
    # the expected mapping comes from mechanical marker matching.
    segments = [make_segment(i, f"W{i + 1}: concern number {i + 1}") for i in range(3)]
    paragraphs = ["Re: W2 - we fixed it.", "Re: W1 - we disagree."]
    full_rebuttal = "\n\n".join(paragraphs)

    def marker_oracle():
        expected = {}
        for i, segment in enumerate(segments):
            marker = f"Re: W{i + 1}"
            matches = [p for p in paragraphs if p.startswith(marker)]
            expected[segment.segment_id] = matches[0] if matches else None
        return expected

    alignment_lines = []
    for i in range(len(segments)):
        marker = f"Re: W{i + 1}"
        hit = next((j for j, p in enumerate(paragraphs) if p.startswith(marker)), None)
        alignment_lines.append(f"R{i + 1} -> G{hit + 1}" if hit is not None else f"R{i + 1} -> none")

    gw = make_gateway(
        {
            "rebuttal_segmentation": [tagged_reply([("OTHER", p) for p in paragraphs])],
            "rebuttal_alignment": ["\n".join(alignment_lines)],
        }
    )
    mapping = align_generated_to_segments(gw, segments, full_rebuttal)
    assert mapping == marker_oracle()


def test_alignment_falls_back_to_paragraphs_when_untagged():
    segments = [make_segment(0, "seg")]
    gw = make_gateway(
        {
            "rebuttal_segmentation": ["no tags here"],
            "rebuttal_alignment": ["R1 -> G1"],
        }
    )
    mapping = align_generated_to_segments(gw, segments, "para one\n\npara two")
    assert mapping[segments[0].segment_id] == "para one"


# -- judging ---------------------------------------------------------------------


def test_identity_candidate_positive_on_all_aspects():
    gold = make_gold(action=RebuttalAction.REFUTE_QUESTION)
    gw = make_gateway(
        {"judge_refutation": ["yes"], "judge_factual": ["yes"], "judge_consistency": ["yes"]}
    )
    judge = RebuttalJudge(gw)
    candidate = gold.gold_rebuttals[0]
    for aspect in Aspect:
        verdict = judge.judge(gold, candidate, aspect)
        assert verdict.positive, aspect
        assert verdict.rationale


def test_refutation_stance_mismatch_negative():
    gold = make_gold(action=RebuttalAction.REFUTE_QUESTION)  # gold refutes
    gw = make_gateway({"judge_refutation": ["no"]})  # candidate concedes
    verdict = RebuttalJudge(gw).judge(gold, "We agree and will fix.", Aspect.STRENGTH_OF_REFUTATION)
    assert not verdict.positive


def test_refutation_matching_non_refuting_stances_positive():
    gold = make_gold(action=RebuttalAction.ANSWER_QUESTION)  # gold does not refute
    gw = make_gateway({"judge_refutation": ["no"]})
    verdict = RebuttalJudge(gw).judge(gold, "Here is the answer.", Aspect.STRENGTH_OF_REFUTATION)
    assert verdict.positive


def test_absent_candidate_with_refuting_gold_negative_without_call():
    gold = make_gold(action=RebuttalAction.REFUTE_QUESTION)
    gw = make_gateway([])  # any call would blow up
    verdict = RebuttalJudge(gw).judge(gold, None, Aspect.STRENGTH_OF_REFUTATION)
    assert not verdict.positive
    assert gw.audit.count() == 0


def test_absent_candidate_with_non_refuting_gold_positive():
    gold = make_gold(action=RebuttalAction.ANSWER_QUESTION)
    gw = make_gateway([])
    verdict = RebuttalJudge(gw).judge(gold, None, Aspect.STRENGTH_OF_REFUTATION)
    assert verdict.positive


def test_factual_requires_candidate_and_gold():
    gold = make_gold()
    judge = RebuttalJudge(make_gateway([]))
    with pytest.raises(ValueError):
        judge.judge(gold, None, Aspect.FACTUAL_CORRECTNESS)
    empty_gold = make_gold(gold_rebuttals=())
    with pytest.raises(ValueError):
        judge.judge(empty_gold, "candidate", Aspect.FACTUAL_CORRECTNESS)


def test_refuting_action_partition():
    refuting = {a for a in RebuttalAction if action_refutes(a)}
    assert refuting == {
        RebuttalAction.REJECT_REQUEST,
        RebuttalAction.REJECT_CRITICISM,
        RebuttalAction.REFUTE_QUESTION,
        RebuttalAction.CONTRADICT_ASSERTION,
    }


# -- aspect precision ----------------------------------------------------------------


def verdicts_of(aspect, flags):
    return [JudgeVerdict(aspect=aspect, positive=f, rationale="r") for f in flags]


def test_aspect_precision_all_positive():
    assert aspect_precision(verdicts_of(Aspect.CONSISTENCY, [True] * 4)) == 1.0


def test_aspect_precision_hand_counts():
    assert aspect_precision(verdicts_of(Aspect.CONSISTENCY, [True, True, True, False])) == 0.75
    flags = [True] * 37 + [False] * 13
    assert aspect_precision(verdicts_of(Aspect.FACTUAL_CORRECTNESS, flags)) == 0.74


def test_aspect_precision_one_iff_all_positive():
    rng = random.Random(13)
    for _ in range(50):
        flags = [rng.random() < 0.5 for _ in range(rng.randint(1, 12))]
        precision = aspect_precision(verdicts_of(Aspect.CONSISTENCY, flags))
        assert 0.0 <= precision <= 1.0
        assert (precision == 1.0) == all(flags)


def test_aspect_precision_rejects_empty_and_mixed():
    with pytest.raises(ValueError):
        aspect_precision([])
    mixed = verdicts_of(Aspect.CONSISTENCY, [True]) + verdicts_of(
        Aspect.FACTUAL_CORRECTNESS, [True]
    )
    with pytest.raises(ValueError):
        aspect_precision(mixed)


# -- stage metrics ----------------------------------------------------------------------


def brute_force_metrics(gold, predicted, positive=None):
    """Independent oracle: explicit confusion matrix, per-class P/R/F1."""
    classes = [positive] if positive is not None else sorted(set(gold), key=lambda c: c.value)
    per_class = []
    for cls in classes:
        matrix = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
        for g, p in zip(gold, predicted):
            if g == cls and p == cls:
                matrix["tp"] += 1
            elif g != cls and p == cls:
                matrix["fp"] += 1
            elif g == cls and p != cls:
                matrix["fn"] += 1
            else:
                matrix["tn"] += 1
        precision = matrix["tp"] / (matrix["tp"] + matrix["fp"]) if matrix["tp"] + matrix["fp"] else 0.0
        recall = matrix["tp"] / (matrix["tp"] + matrix["fn"]) if matrix["tp"] + matrix["fn"] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append((precision, recall, f1))
    n = len(per_class)
    return (
        sum(x[0] for x in per_class) / n,
        sum(x[1] for x in per_class) / n,
        sum(x[2] for x in per_class) / n,
    )


def test_perfect_predictor():
    gold = [D, N, D]
    metrics = stage_metrics(gold, gold, ClassificationStage.DEFICIENCY)
    assert (metrics.precision, metrics.recall, metrics.f1) == (1.0, 1.0, 1.0)


def test_dp_hand_count():
    gold = [D, N, D, N]
    predicted = [D, D, D, N]
    metrics = stage_metrics(gold, predicted, ClassificationStage.DEFICIENCY)
    assert metrics.precision == pytest.approx(2 / 3)
    assert metrics.recall == 1.0
    assert metrics.f1 == pytest.approx(0.8)


def test_etp_three_class_hand_built_confusion():
    a = ErrorType.INCORRECT_REFERENCES
    b = ErrorType.SUPERFICIAL_VAGUE_REVIEW
    c = ErrorType.MISINTERPRETATION_OF_CLAIMS
    gold = [a, a, b, b, c, c]
    predicted = [a, b, b, c, c, c]
    metrics = stage_metrics(gold, predicted, ClassificationStage.ERROR_TYPE)
    expected = brute_force_metrics(gold, predicted)
    assert metrics.precision == pytest.approx(expected[0], abs=1e-12)
    assert metrics.recall == pytest.approx(expected[1], abs=1e-12)
    assert metrics.f1 == pytest.approx(expected[2], abs=1e-12)


def test_stage_metrics_matches_oracle_on_random_instances():
    rng = random.Random(42)
    stage_pools = {
        ClassificationStage.DEFICIENCY: list(DeficiencyOutcome),
        ClassificationStage.ERROR_TYPE: list(ErrorType),
        ClassificationStage.ACTION: list(RebuttalAction),
    }
    for _ in range(200):
        stage = rng.choice(list(ClassificationStage))
        pool = stage_pools[stage]
        n = rng.randint(1, 20)
        gold = [rng.choice(pool) for _ in range(n)]
        predicted = [rng.choice(pool) for _ in range(n)]
        metrics = stage_metrics(gold, predicted, stage)
        positive = D if stage is ClassificationStage.DEFICIENCY else None
        expected = brute_force_metrics(gold, predicted, positive=positive)
        assert abs(metrics.precision - expected[0]) <= 1e-12
        assert abs(metrics.recall - expected[1]) <= 1e-12
        assert abs(metrics.f1 - expected[2]) <= 1e-12


def test_stage_metrics_validation():
    with pytest.raises(ValueError):
        stage_metrics([D], [D, N], ClassificationStage.DEFICIENCY)
    with pytest.raises(ValueError):
        stage_metrics([D], ["not_a_label"], ClassificationStage.DEFICIENCY)
    with pytest.raises(ValueError):
        stage_metrics([], [], ClassificationStage.DEFICIENCY)


# -- benchmark runner -----------------------------------------------------------------


def judged_script():
    # judge templates reply deterministically for every call
    return {
        "judge_refutation": "yes",
        "judge_factual": "yes",
        "judge_consistency": "no",
    }


def test_benchmark_segmentwise_toy_cells():
    records = toy_corpus()
    gw = make_gateway({"segment_rebuttal": "A fine rebuttal.", **judged_script()})
    runner = BenchmarkRunner(RebuttalPipeline(gw), RebuttalJudge(gw))
    report = runner.run(records, BenchmarkParadigm.SEGMENT_WISE)
    assert report.n_segments == 5
    assert report.n_candidates == 5
    assert report.coverage == 1.0
    assert report.aspects["factual_correctness"] == {
        "positives": 5,
        "total": 5,
        "precision": 1.0,
    }
    assert report.aspects["consistency"]["precision"] == 0.0
    # gold refutes 3 of 5 (label cycle); candidate always refutes per judge
    assert report.aspects["strength_of_refutation"]["positives"] == 3
    assert report.judge_model_id == "scripted"


def test_benchmark_deterministic_across_runs():
    records = toy_corpus()

    def run():
        gw = make_gateway({"segment_rebuttal": "A fine rebuttal.", **judged_script()})
        runner = BenchmarkRunner(RebuttalPipeline(gw), RebuttalJudge(gw))
        return runner.run(records, BenchmarkParadigm.SEGMENT_WISE).to_dict()

    assert run() == run()


def test_benchmark_gold_mode_never_calls_predictors():
    records = toy_corpus()
    gw = make_gateway({"staged_rebuttal": "Staged rebuttal.", **judged_script()})
    runner = BenchmarkRunner(RebuttalPipeline(gw), RebuttalJudge(gw))
    report = runner.run(records, BenchmarkParadigm.STAGED_GOLD)
    assert report.n_candidates == 5
    for template in ("deficiency_classify", "error_type_classify", "action_classify"):
        assert gw.audit.count(template) == 0
    assert report.stage_metrics == {}


def test_benchmark_predicted_mode_call_counts():
    records = toy_corpus()
    gw = make_gateway(
        {
            # gold cycle over the toy corpus: D, N, D, D, N
            "deficiency_classify": ["Deficient", "Non-deficient", "Deficient", "Deficient",
                                    "Non-deficient"],
            "error_type_classify": "Misunderstanding",
            "action_classify": "Refute question",
            "staged_rebuttal": "Staged rebuttal.",
            **judged_script(),
        }
    )
    runner = BenchmarkRunner(RebuttalPipeline(gw), RebuttalJudge(gw))
    report = runner.run(records, BenchmarkParadigm.STAGED_PREDICTED)
    assert gw.audit.count("deficiency_classify") == 5  # one per segment
    assert gw.audit.count("error_type_classify") == 3  # only predicted-deficient
    assert "dp" in report.stage_metrics
    assert "rap" in report.stage_metrics
    assert report.stage_metrics["dp"]["precision"] == 1.0  # cycle matches gold


def test_benchmark_direct_mode_aligns():
    records = toy_corpus()
    gw = make_gateway(
        {
            "direct_rebuttal": "One big rebuttal.",
            "rebuttal_segmentation": tagged_reply([("OTHER", "One big rebuttal.")]),
            "rebuttal_alignment": lambda prompt: "\n".join(
                f"R{i} -> G1" for i in range(1, prompt.count("R") + 1)
            ),
            **judged_script(),
        }
    )
    runner = BenchmarkRunner(RebuttalPipeline(gw), RebuttalJudge(gw))
    report = runner.run(records, BenchmarkParadigm.DIRECT)
    assert report.n_segments == 5
    assert report.n_candidates == 5


def test_benchmark_direct_paper_context_cell_unsupported():
    records = toy_corpus()
    gw = make_gateway([])
    runner = BenchmarkRunner(RebuttalPipeline(gw), RebuttalJudge(gw))
    report = runner.run(records, BenchmarkParadigm.DIRECT, ContextMode.PAPER_CONTEXT_ONLY)
    assert not report.supported
    assert report.n_segments == 0


def test_benchmark_marks_per_segment_failures():
    records = toy_corpus()
    gw = make_gateway(
        {
            "deficiency_classify": ["junk", "junk", "junk"] + ["Non-deficient"] * 4,
            "action_classify": "Answer question",
            "staged_rebuttal": "Staged rebuttal.",
            **judged_script(),
        }
    )
    runner = BenchmarkRunner(RebuttalPipeline(gw), RebuttalJudge(gw))
    report = runner.run(records, BenchmarkParadigm.STAGED_PREDICTED)
    failed = [s for s in report.segments if s.error]
    assert len(failed) == 1
    assert report.n_candidates == 4
    assert report.coverage == pytest.approx(0.8)
