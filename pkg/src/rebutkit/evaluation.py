"""Segment-level judging of generated rebuttals plus per-stage metrics.

Every candidate rebuttal is judged against the gold corpus on three binary
aspects: strength of refutation (does the candidate's refute/not-refute
stance match the gold rebuttal's stance), factual correctness (with the
gold rebuttal as ground-truth context), and consistency. Precision per
aspect is positives over total verdicts.

The gold stance needs no model call: it is determined by the gold rebuttal
action (reject/refute/contradict actions refute; the rest do not), so a
segment whose candidate is absent can still be scored for refutation.

The classification stages of the staged pipeline get precision/recall/F1:
binary with the deficient class as positive for deficiency prediction, and
macro-averaged over the classes present in gold for error types and
actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

from rebutkit.dataset import CorpusRecord, GoldSegmentRecord
from rebutkit.gateway import (
    CLASSIFY_DECODING,
    GatewayError,
    LLMGateway,
    PromptRequest,
    UnparseableOutput,
)
from rebutkit.pipeline import RebuttalPipeline, UnsupportedContextMode
from rebutkit.records import ContextMode
from rebutkit.retrieval import LiteratureError
from rebutkit.segmentation import (
    SEGMENTATION_DECODING,
    ReviewSegment,
    paragraph_fallback,
    parse_segment_blocks,
)
from rebutkit.taxonomy import (
    DeficiencyOutcome,
    ErrorType,
    RebuttalAction,
    SegmentLabels,
)


class Aspect(str, Enum):
    STRENGTH_OF_REFUTATION = "strength_of_refutation"
    FACTUAL_CORRECTNESS = "factual_correctness"
    CONSISTENCY = "consistency"


class ClassificationStage(str, Enum):
    DEFICIENCY = "dp"
    ERROR_TYPE = "etp"
    ACTION = "rap"


REFUTING_ACTIONS = frozenset(
    {
        RebuttalAction.REJECT_REQUEST,
        RebuttalAction.REJECT_CRITICISM,
        RebuttalAction.REFUTE_QUESTION,
        RebuttalAction.CONTRADICT_ASSERTION,
    }
)


def action_refutes(action: RebuttalAction) -> bool:
    return action in REFUTING_ACTIONS


@dataclass(frozen=True)
class JudgeVerdict:
    aspect: Aspect
    positive: bool
    rationale: str

    def __post_init__(self) -> None:
        if not self.rationale.strip():
            raise ValueError("verdict rationale must be non-empty")


# ---------------------------------------------------------------------------
# Alignment of a whole-review rebuttal back onto review segments


def align_generated_to_segments(
    gateway: LLMGateway,
    segments: Sequence[ReviewSegment],
    full_rebuttal: str,
    metadata: Optional[dict] = None,
) -> dict[str, Optional[str]]:
    """Map each review segment to its best-matching rebuttal segment, if any.

    Two gateway calls: the first segments the rebuttal, the second assigns
    each review segment one rebuttal segment or none. One rebuttal segment
    may serve several review segments.
    """
    if not full_rebuttal.strip():
        raise ValueError("full_rebuttal must be non-empty")
    metadata = {"stage": "alignment", **(metadata or {})}

    reply = gateway.complete(
        PromptRequest(
            "rebuttal_segmentation",
            {"rebuttal": full_rebuttal},
            SEGMENTATION_DECODING,
            metadata,
        )
    ).text
    blocks = parse_segment_blocks(reply)
    if not blocks:
        blocks = paragraph_fallback(full_rebuttal)
    rebuttal_segments = [text for _, text in blocks]

    review_block = "\n".join(
        f"R{i + 1}: {segment.text}" for i, segment in enumerate(segments)
    )
    rebuttal_block = "\n".join(f"G{i + 1}: {text}" for i, text in enumerate(rebuttal_segments))
    reply = gateway.complete(
        PromptRequest(
            "rebuttal_alignment",
            {"review_segments": review_block, "rebuttal_segments": rebuttal_block},
            CLASSIFY_DECODING,
            metadata,
        )
    ).text

    assigned: dict[int, Optional[int]] = {}
    for line in reply.splitlines():
        line = line.strip()
        if "->" not in line:
            continue
        left, _, right = line.partition("->")
        left = left.strip().lstrip("Rr")
        right = right.strip()
        if not left.isdigit():
            continue
        review_index = int(left) - 1
        if right.lower().startswith("none"):
            assigned[review_index] = None
            continue
        right = right.lstrip("Gg").split()[0] if right else ""
        if right.isdigit():
            assigned[review_index] = int(right) - 1

    mapping: dict[str, Optional[str]] = {}
    for i, segment in enumerate(segments):
        target = assigned.get(i)
        if target is not None and 0 <= target < len(rebuttal_segments):
            mapping[segment.segment_id] = rebuttal_segments[target]
        else:
            mapping[segment.segment_id] = None
    return mapping


# ---------------------------------------------------------------------------
# Judging


class RebuttalJudge:
    """LLM-as-judge over one (gold segment, candidate, aspect) triple.

    Judge prompts are independent templates from the generation side; the
    judged model id is recorded on the runner's report.
    """

    def __init__(self, gateway: LLMGateway):
        self.gateway = gateway
        self.last_model_id: Optional[str] = None

    def judge(
        self,
        gold: GoldSegmentRecord,
        candidate: Optional[str],
        aspect: Aspect,
        metadata: Optional[dict] = None,
    ) -> JudgeVerdict:
        metadata = {"stage": f"judge_{aspect.value}", **(metadata or {})}
        if aspect is Aspect.STRENGTH_OF_REFUTATION:
            return self._judge_refutation(gold, candidate, metadata)
        if candidate is None or not candidate.strip():
            raise ValueError(f"{aspect.value} needs a candidate rebuttal")
        if aspect is Aspect.FACTUAL_CORRECTNESS:
            if not gold.gold_rebuttals:
                raise ValueError("factual judging needs gold rebuttal context")
            positive, rationale = self._yes_no(
                "judge_factual",
                {
                    "segment": gold.segment.text,
                    "gold": "\n\n".join(gold.gold_rebuttals),
                    "candidate": candidate,
                },
                metadata,
            )
        else:
            positive, rationale = self._yes_no(
                "judge_consistency",
                {"segment": gold.segment.text, "candidate": candidate},
                metadata,
            )
        return JudgeVerdict(aspect=aspect, positive=positive, rationale=rationale)

    def _judge_refutation(
        self, gold: GoldSegmentRecord, candidate: Optional[str], metadata: dict
    ) -> JudgeVerdict:
        if gold.labels is None:
            raise ValueError("refutation judging needs gold labels")
        gold_refutes = action_refutes(gold.labels.action)
        if candidate is None or not candidate.strip():
            # nothing was generated: it cannot refute, so the stance matches
            # exactly when the gold rebuttal does not refute either
            return JudgeVerdict(
                aspect=Aspect.STRENGTH_OF_REFUTATION,
                positive=not gold_refutes,
                rationale="no candidate rebuttal for this segment",
            )
        candidate_refutes, rationale = self._yes_no(
            "judge_refutation",
            {"segment": gold.segment.text, "candidate": candidate},
            metadata,
        )
        return JudgeVerdict(
            aspect=Aspect.STRENGTH_OF_REFUTATION,
            positive=candidate_refutes == gold_refutes,
            rationale=rationale,
        )

    def _yes_no(self, template_id: str, slots: dict, metadata: dict) -> tuple[bool, str]:
        label, result = self.gateway.complete_choice(
            PromptRequest(template_id, slots, CLASSIFY_DECODING, metadata),
            ["yes", "no"],
        )
        self.last_model_id = result.model_id
        return label == "yes", result.text.strip() or label


# ---------------------------------------------------------------------------
# Metrics


def aspect_precision(verdicts: Sequence[JudgeVerdict]) -> float:
    """Positives over total for one aspect's verdicts."""
    if not verdicts:
        raise ValueError("aspect_precision needs at least one verdict")
    aspects = {v.aspect for v in verdicts}
    if len(aspects) != 1:
        raise ValueError(f"verdicts mix aspects: {sorted(a.value for a in aspects)}")
    return sum(1 for v in verdicts if v.positive) / len(verdicts)


@dataclass(frozen=True)
class StageMetrics:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


_STAGE_ENUMS = {
    ClassificationStage.DEFICIENCY: DeficiencyOutcome,
    ClassificationStage.ERROR_TYPE: ErrorType,
    ClassificationStage.ACTION: RebuttalAction,
}


def _safe_div(num: float, denom: float) -> float:
    return num / denom if denom else 0.0


def stage_metrics(
    gold: Sequence, predicted: Sequence, stage: ClassificationStage
) -> StageMetrics:
    """Precision/recall/F1 for one classification stage.

    Deficiency prediction is binary with the deficient class as positive.
    Error types and actions are macro-averaged over the classes present in
    gold; F1 is the per-class harmonic mean, then averaged.
    """
    stage = ClassificationStage(stage)
    if len(gold) != len(predicted):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(predicted)} predicted")
    if not gold:
        raise ValueError("stage_metrics needs at least one pair")
    enum_cls = _STAGE_ENUMS[stage]
    gold = [enum_cls(g) for g in gold]
    predicted = [enum_cls(p) for p in predicted]

    if stage is ClassificationStage.DEFICIENCY:
        positive = DeficiencyOutcome.DEFICIENT
        tp = sum(1 for g, p in zip(gold, predicted) if g is positive and p is positive)
        fp = sum(1 for g, p in zip(gold, predicted) if g is not positive and p is positive)
        fn = sum(1 for g, p in zip(gold, predicted) if g is positive and p is not positive)
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        return StageMetrics(precision, recall, f1)

    classes = sorted(set(gold), key=lambda c: c.value)
    precisions, recalls, f1s = [], [], []
    for cls in classes:
        tp = sum(1 for g, p in zip(gold, predicted) if g is cls and p is cls)
        fp = sum(1 for g, p in zip(gold, predicted) if g is not cls and p is cls)
        fn = sum(1 for g, p in zip(gold, predicted) if g is cls and p is not cls)
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(_safe_div(2 * precision * recall, precision + recall))
    n = len(classes)
    return StageMetrics(sum(precisions) / n, sum(recalls) / n, sum(f1s) / n)


# ---------------------------------------------------------------------------
# Benchmark runner


class BenchmarkParadigm(str, Enum):
    DIRECT = "drg"
    SEGMENT_WISE = "swrg"
    STAGED_PREDICTED = "sa_predicted"
    STAGED_GOLD = "sa_gold"  # generation from gold labels; predictors untouched


@dataclass
class SegmentResult:
    segment_id: str
    candidate: Optional[str] = None
    error: Optional[str] = None
    verdicts: dict = field(default_factory=dict)  # aspect value -> bool

    def to_dict(self) -> dict:
        return {
            "segment_id": self.segment_id,
            "candidate_present": self.candidate is not None,
            "error": self.error,
            "verdicts": dict(self.verdicts),
        }


@dataclass
class BenchmarkReport:
    paradigm: BenchmarkParadigm
    context_mode: ContextMode
    judge_model_id: str
    n_segments: int
    n_candidates: int
    aspects: dict  # aspect value -> {positives, total, precision}
    stage_metrics: dict = field(default_factory=dict)  # stage value -> metrics dict
    segments: list = field(default_factory=list)
    supported: bool = True
    note: str = ""

    @property
    def coverage(self) -> float:
        return _safe_div(self.n_candidates, self.n_segments)

    def to_dict(self) -> dict:
        return {
            "paradigm": self.paradigm.value,
            "context_mode": self.context_mode.value,
            "judge_model_id": self.judge_model_id,
            "n_segments": self.n_segments,
            "n_candidates": self.n_candidates,
            "coverage": self.coverage,
            "aspects": self.aspects,
            "stage_metrics": self.stage_metrics,
            "segments": [s.to_dict() for s in self.segments],
            "supported": self.supported,
            "note": self.note,
        }


class BenchmarkRunner:
    """Runs one paradigm/context cell of the evaluation grid over a corpus."""

    def __init__(self, pipeline: RebuttalPipeline, judge: RebuttalJudge):
        self.pipeline = pipeline
        self.judge = judge

    def run(
        self,
        records: Sequence[CorpusRecord],
        paradigm: BenchmarkParadigm,
        context_mode: ContextMode = ContextMode.FULL_PAPER,
    ) -> BenchmarkReport:
        paradigm = BenchmarkParadigm(paradigm)
        context_mode = ContextMode(context_mode)
        results: list[SegmentResult] = []
        gold_by_id: dict[str, GoldSegmentRecord] = {}
        dp_pairs: list[tuple[DeficiencyOutcome, DeficiencyOutcome]] = []
        etp_pairs: list[tuple[ErrorType, ErrorType]] = []
        rap_pairs: list[tuple[RebuttalAction, RebuttalAction]] = []

        if paradigm is BenchmarkParadigm.DIRECT and context_mode is ContextMode.PAPER_CONTEXT_ONLY:
            return self._unsupported(
                paradigm, context_mode, "direct generation has no per-segment paper context"
            )
        if (
            context_mode is ContextMode.LITERATURE_AUGMENTED
            and self.pipeline.literature is None
        ):
            return self._unsupported(
                paradigm, context_mode, "no literature service configured"
            )

        for record in records:
            for review in record.reviews:
                segments = [g.segment for g in review.segments]
                for gold in review.segments:
                    gold_by_id[gold.segment.segment_id] = gold
                candidates = self._generate(
                    record, review.review_text, review.segments, paradigm, context_mode,
                    dp_pairs, etp_pairs, rap_pairs,
                )
                for gold in review.segments:
                    candidate, error = candidates[gold.segment.segment_id]
                    results.append(
                        SegmentResult(
                            segment_id=gold.segment.segment_id,
                            candidate=candidate,
                            error=error,
                        )
                    )

        verdicts: dict[Aspect, list[JudgeVerdict]] = {aspect: [] for aspect in Aspect}
        for result in results:
            gold = gold_by_id[result.segment_id]
            refutation = self.judge.judge(
                gold, result.candidate, Aspect.STRENGTH_OF_REFUTATION
            )
            verdicts[Aspect.STRENGTH_OF_REFUTATION].append(refutation)
            result.verdicts[Aspect.STRENGTH_OF_REFUTATION.value] = refutation.positive
            # factual correctness and consistency are judged only when there
            # is a candidate and a gold rebuttal to hold it against
            if result.candidate and gold.gold_rebuttals:
                for aspect in (Aspect.FACTUAL_CORRECTNESS, Aspect.CONSISTENCY):
                    verdict = self.judge.judge(gold, result.candidate, aspect)
                    verdicts[aspect].append(verdict)
                    result.verdicts[aspect.value] = verdict.positive

        aspects = {}
        for aspect, aspect_verdicts in verdicts.items():
            positives = sum(1 for v in aspect_verdicts if v.positive)
            total = len(aspect_verdicts)
            aspects[aspect.value] = {
                "positives": positives,
                "total": total,
                "precision": aspect_precision(aspect_verdicts) if aspect_verdicts else None,
            }

        stage_table = {}
        if paradigm is BenchmarkParadigm.STAGED_PREDICTED:
            if dp_pairs:
                stage_table[ClassificationStage.DEFICIENCY.value] = stage_metrics(
                    [g for g, _ in dp_pairs], [p for _, p in dp_pairs],
                    ClassificationStage.DEFICIENCY,
                ).to_dict()
            if etp_pairs:
                stage_table[ClassificationStage.ERROR_TYPE.value] = stage_metrics(
                    [g for g, _ in etp_pairs], [p for _, p in etp_pairs],
                    ClassificationStage.ERROR_TYPE,
                ).to_dict()
            if rap_pairs:
                stage_table[ClassificationStage.ACTION.value] = stage_metrics(
                    [g for g, _ in rap_pairs], [p for _, p in rap_pairs],
                    ClassificationStage.ACTION,
                ).to_dict()

        return BenchmarkReport(
            paradigm=paradigm,
            context_mode=context_mode,
            judge_model_id=self.judge.last_model_id or "",
            n_segments=len(results),
            n_candidates=sum(1 for r in results if r.candidate is not None),
            aspects=aspects,
            stage_metrics=stage_table,
            segments=results,
        )

    @staticmethod
    def _unsupported(
        paradigm: BenchmarkParadigm, context_mode: ContextMode, note: str
    ) -> BenchmarkReport:
        return BenchmarkReport(
            paradigm=paradigm,
            context_mode=context_mode,
            judge_model_id="",
            n_segments=0,
            n_candidates=0,
            aspects={},
            supported=False,
            note=note,
        )

    def _generate(
        self,
        record: CorpusRecord,
        review_text: str,
        gold_segments: Sequence[GoldSegmentRecord],
        paradigm: BenchmarkParadigm,
        context_mode: ContextMode,
        dp_pairs: list,
        etp_pairs: list,
        rap_pairs: list,
    ) -> dict[str, tuple[Optional[str], Optional[str]]]:
        """Candidate text (or error) per segment id for one review."""
        segments = [g.segment for g in gold_segments]
        out: dict[str, tuple[Optional[str], Optional[str]]] = {}

        if paradigm is BenchmarkParadigm.DIRECT:
            draft = self.pipeline.generate_direct(record.paper, review_text, context_mode)
            mapping = align_generated_to_segments(
                self.pipeline.gateway, segments, draft.text
            )
            for segment in segments:
                out[segment.segment_id] = (mapping.get(segment.segment_id), None)
            return out

        if paradigm is BenchmarkParadigm.SEGMENT_WISE:
            outcomes = self.pipeline.generate_segmentwise(
                record.paper, review_text, segments, context_mode
            )
            for outcome in outcomes:
                text = outcome.draft.text if outcome.draft else None
                out[outcome.segment_id] = (text, outcome.error)
            return out

        for gold in gold_segments:
            segment = gold.segment
            try:
                if paradigm is BenchmarkParadigm.STAGED_GOLD:
                    labels = gold.labels
                else:
                    deficiency = self.pipeline.predict_deficiency(
                        record.paper, review_text, segment
                    )
                    dp_pairs.append((gold.labels.deficiency, deficiency))
                    error_type = None
                    if deficiency is DeficiencyOutcome.DEFICIENT:
                        error_type = self.pipeline.predict_error_type(
                            record.paper, review_text, segment
                        )
                        if gold.labels.error_type is not None:
                            etp_pairs.append((gold.labels.error_type, error_type))
                    action = self.pipeline.predict_action(segment, deficiency, error_type)
                    rap_pairs.append((gold.labels.action, action))
                    labels = SegmentLabels(
                        deficiency=deficiency, error_type=error_type, action=action
                    )
                draft = self.pipeline.generate_segment_rebuttal(
                    record.paper,
                    segment,
                    labels,
                    context_mode=context_mode,
                    review=review_text,
                )
                out[segment.segment_id] = (draft.text, None)
            except (GatewayError, LiteratureError, UnsupportedContextMode) as exc:
                out[segment.segment_id] = (None, str(exc))
        return out


def run_benchmark(
    pipeline: RebuttalPipeline,
    judge: RebuttalJudge,
    records: Sequence[CorpusRecord],
    paradigm: Union[BenchmarkParadigm, str],
    context_mode: Union[ContextMode, str] = ContextMode.FULL_PAPER,
) -> BenchmarkReport:
    return BenchmarkRunner(pipeline, judge).run(
        records, BenchmarkParadigm(paradigm), ContextMode(context_mode)
    )
