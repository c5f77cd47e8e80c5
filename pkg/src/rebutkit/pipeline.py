"""The three rebuttal-generation paradigms over the gateway.

* direct: one call over paper + complete review.
* segment-wise: one call per review segment, later consolidated.
* staged: per segment, deficiency -> error type -> rebuttal action ->
  generation, with each classification parsed against its closed label set.

Stage order within a segment is strictly sequential; the error-type step is
skipped for non-deficient segments, and the action step is skipped entirely
when the static table leaves only one candidate.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

from rebutkit import taxonomy
from rebutkit.gateway import (
    CLASSIFY_DECODING,
    GENERATE_DECODING,
    GatewayError,
    LLMGateway,
    PromptRequest,
)
from rebutkit.records import ContextMode, DraftOutcome, Paradigm, PaperRecord, RebuttalDraft
from rebutkit.retrieval import (
    LiteratureClient,
    LiteratureError,
    PaperContextRetriever,
    build_literature_query,
)
from rebutkit.segmentation import ReviewSegment, segment_review
from rebutkit.taxonomy import (
    DeficiencyOutcome,
    ErrorType,
    RebuttalAction,
    SegmentLabels,
    allowed_actions,
)

DEFICIENCY_DEFINITION = (
    "A review segment is deficient when it contains misunderstandings of the "
    "paper, factual errors, invalid or unsubstantiated criticism, or purely "
    "subjective remarks without evidence; it is non-deficient when it is "
    "factually sound and constructive."
)


class UnsupportedContextMode(ValueError):
    """The requested paradigm/context combination is not available."""


def _guidance_block(feedback: Optional[str]) -> str:
    if not feedback or not feedback.strip():
        return ""
    return f"\nAuthor guidance:\n{feedback}\n"


def _evidence_block(snippets) -> str:
    if not snippets:
        return ""
    lines = ["\nExternal evidence:"]
    for snippet in snippets:
        title = f" ({snippet.title})" if snippet.title else ""
        lines.append(f"- [{snippet.source_id}]{title} {snippet.snippet}")
    return "\n".join(lines) + "\n"


class RebuttalPipeline:
    """Shared entry point for segmentation, generation, and classification calls."""

    def __init__(
        self,
        gateway: LLMGateway,
        retriever: Optional[PaperContextRetriever] = None,
        literature: Optional[LiteratureClient] = None,
        evidence_k: int = 3,
        generation_decoding=GENERATE_DECODING,
    ):
        self.gateway = gateway
        self.retriever = retriever or PaperContextRetriever(gateway)
        self.literature = literature
        self.evidence_k = evidence_k
        self.generation_decoding = generation_decoding

    # -- segmentation -------------------------------------------------------

    def segment_review(self, review: str, metadata: Optional[dict] = None) -> list[ReviewSegment]:
        return segment_review(self.gateway, review, metadata)

    # -- context assembly ---------------------------------------------------

    def _context_for(
        self,
        paper: PaperRecord,
        segment: Union[ReviewSegment, str],
        context_mode: ContextMode,
        metadata: dict,
    ) -> tuple[str, str, Optional[str], tuple]:
        """Return (paper_context, evidence_block, excerpt_text, snippets)."""
        if context_mode is ContextMode.PAPER_CONTEXT_ONLY:
            excerpt = self.retriever.retrieve(paper, segment, metadata)
            return excerpt.excerpt, "", excerpt.excerpt, ()
        if context_mode is ContextMode.LITERATURE_AUGMENTED:
            if self.literature is None:
                raise UnsupportedContextMode(
                    "literature-augmented mode requires a configured literature client"
                )
            query = build_literature_query(self.gateway, segment, metadata=metadata)
            snippets = tuple(self.literature.search(query, self.evidence_k))
            return paper.body, _evidence_block(snippets), None, snippets
        return paper.body, "", None, ()

    # -- direct generation --------------------------------------------------

    def generate_direct(
        self,
        paper: PaperRecord,
        review: str,
        context_mode: ContextMode = ContextMode.FULL_PAPER,
        metadata: Optional[dict] = None,
    ) -> RebuttalDraft:
        """One-shot rebuttal over the whole review."""
        if not review.strip():
            raise ValueError("review must be non-empty")
        if context_mode is ContextMode.PAPER_CONTEXT_ONLY:
            raise UnsupportedContextMode(
                "direct generation works over the whole review; there is no "
                "per-segment excerpt to retrieve"
            )
        metadata = {"stage": "drg", **(metadata or {})}
        _, evidence_block, _, snippets = self._context_for(paper, review, context_mode, metadata)
        result = self.gateway.complete(
            PromptRequest(
                "direct_rebuttal",
                {
                    "paper_title": paper.title,
                    "paper_body": paper.body,
                    "review": review,
                    "evidence_block": evidence_block,
                },
                self.generation_decoding,
                metadata,
            )
        )
        return RebuttalDraft(
            text=result.text,
            paradigm=Paradigm.DIRECT,
            context_used=context_mode,
            evidence=snippets,
        )

    # -- segment-wise generation --------------------------------------------

    def generate_segmentwise(
        self,
        paper: PaperRecord,
        review: str,
        segments: Sequence[ReviewSegment],
        context_mode: ContextMode = ContextMode.FULL_PAPER,
        metadata: Optional[dict] = None,
    ) -> list[DraftOutcome]:
        """One draft per segment, same order; a failing segment never aborts its siblings."""
        outcomes = []
        for segment in segments:
            seg_meta = {
                "stage": "swrg",
                "segment_id": segment.segment_id,
                **(metadata or {}),
            }
            try:
                context, evidence_block, excerpt, snippets = self._context_for(
                    paper, segment, context_mode, seg_meta
                )
                result = self.gateway.complete(
                    PromptRequest(
                        "segment_rebuttal",
                        {
                            "paper_title": paper.title,
                            "paper_context": context,
                            "evidence_block": evidence_block,
                            "review": review,
                            "segment": segment.text,
                        },
                        self.generation_decoding,
                        seg_meta,
                    )
                )
            except (GatewayError, LiteratureError) as exc:
                outcomes.append(
                    DraftOutcome(
                        segment_id=segment.segment_id, ordinal=segment.ordinal, error=str(exc)
                    )
                )
                continue
            outcomes.append(
                DraftOutcome(
                    segment_id=segment.segment_id,
                    ordinal=segment.ordinal,
                    draft=RebuttalDraft(
                        text=result.text,
                        paradigm=Paradigm.SEGMENT_WISE,
                        context_used=context_mode,
                        segment_id=segment.segment_id,
                        context_excerpt=excerpt,
                        evidence=snippets,
                    ),
                )
            )
        return outcomes

    # -- staged classification ----------------------------------------------

    def predict_deficiency(
        self,
        paper: PaperRecord,
        review: str,
        segment: ReviewSegment,
        metadata: Optional[dict] = None,
    ) -> DeficiencyOutcome:
        metadata = {"stage": "dp", "segment_id": segment.segment_id, **(metadata or {})}
        label, _ = self.gateway.complete_choice(
            PromptRequest(
                "deficiency_classify",
                {
                    "paper_title": paper.title,
                    "paper_body": paper.body,
                    "review": review,
                    "segment": segment.text,
                    "deficiency_definition": DEFICIENCY_DEFINITION,
                },
                CLASSIFY_DECODING,
                metadata,
            ),
            list(DeficiencyOutcome),
        )
        return label

    def predict_error_type(
        self,
        paper: PaperRecord,
        review: str,
        segment: ReviewSegment,
        feedback: Optional[str] = None,
        metadata: Optional[dict] = None,
        *,
        deficiency: DeficiencyOutcome = DeficiencyOutcome.DEFICIENT,
    ) -> ErrorType:
        """Classify what is wrong with a deficient segment.

        This step is only defined for deficient segments; passing the
        caller's deficiency value makes the precondition checkable.
        """
        if deficiency is not DeficiencyOutcome.DEFICIENT:
            raise taxonomy.LabelValidationError(
                "error-type prediction is skipped for non-deficient segments"
            )
        metadata = {"stage": "etp", "segment_id": segment.segment_id, **(metadata or {})}
        categories = "\n".join(
            f"- {info.display}: {info.definition}"
            for info in taxonomy.DEFAULT_TAXONOMY.error_types.values()
        )
        label, _ = self.gateway.complete_choice(
            PromptRequest(
                "error_type_classify",
                {
                    "paper_title": paper.title,
                    "paper_body": paper.body,
                    "review": review,
                    "segment": segment.text,
                    "categories": categories,
                    "guidance_block": _guidance_block(feedback),
                },
                CLASSIFY_DECODING,
                metadata,
            ),
            list(ErrorType),
        )
        return label

    def predict_action(
        self,
        segment: ReviewSegment,
        deficiency: DeficiencyOutcome,
        error_type: Optional[ErrorType] = None,
        feedback: Optional[str] = None,
        metadata: Optional[dict] = None,
    ) -> RebuttalAction:
        """Pick the rebuttal action from the static table's candidate set.

        When the table leaves a single candidate it is returned without a
        gateway call; otherwise the model chooses, constrained to the set.
        """
        candidates = sorted(allowed_actions(deficiency, error_type), key=lambda a: a.value)
        if len(candidates) == 1:
            return candidates[0]
        metadata = {"stage": "rap", "segment_id": segment.segment_id, **(metadata or {})}
        labels_lines = [f"- {taxonomy.deficiency_statement(deficiency)}"]
        if error_type is not None:
            labels_lines.append(f"- {taxonomy.error_type_statement(error_type)}")
        label, _ = self.gateway.complete_choice(
            PromptRequest(
                "action_classify",
                {
                    "segment": segment.text,
                    "labels_block": "\n".join(labels_lines),
                    "candidates": "\n".join(
                        f"- {taxonomy.DEFAULT_TAXONOMY.actions[a].display}" for a in candidates
                    ),
                    "guidance_block": _guidance_block(feedback),
                },
                CLASSIFY_DECODING,
                metadata,
            ),
            candidates,
        )
        return label

    # -- staged generation ---------------------------------------------------

    def generate_segment_rebuttal(
        self,
        paper: PaperRecord,
        segment: ReviewSegment,
        labels: SegmentLabels,
        context_mode: ContextMode = ContextMode.FULL_PAPER,
        review: Optional[str] = None,
        feedback: Optional[str] = None,
        metadata: Optional[dict] = None,
    ) -> RebuttalDraft:
        """Generate the rebuttal for one segment from its finalized labels.

        The labels enter the prompt as their natural-language statements.
        The full review rides along for cross-segment coherence whenever the
        full paper body is in context.
        """
        metadata = {"stage": "rg", "segment_id": segment.segment_id, **(metadata or {})}
        context, evidence_block, excerpt, snippets = self._context_for(
            paper, segment, context_mode, metadata
        )
        review_block = ""
        if review and context_mode is not ContextMode.PAPER_CONTEXT_ONLY:
            review_block = f"\nFull review:\n{review}\n"
        error_type_line = ""
        if labels.error_type is not None:
            error_type_line = f"- {taxonomy.error_type_statement(labels.error_type)}\n"
        result = self.gateway.complete(
            PromptRequest(
                "staged_rebuttal",
                {
                    "paper_title": paper.title,
                    "paper_context": context,
                    "evidence_block": evidence_block,
                    "review_block": review_block,
                    "segment": segment.text,
                    "deficiency_statement": taxonomy.deficiency_statement(labels.deficiency),
                    "error_type_line": error_type_line,
                    "action_statement": taxonomy.action_statement(labels.action),
                    "guidance_block": _guidance_block(feedback),
                },
                self.generation_decoding,
                metadata,
            )
        )
        return RebuttalDraft(
            text=result.text,
            paradigm=Paradigm.STAGED,
            context_used=context_mode,
            segment_id=segment.segment_id,
            labels_used=labels,
            context_excerpt=excerpt,
            evidence=snippets,
        )

    # -- consolidation --------------------------------------------------------

    def consolidate(
        self,
        drafts: Sequence[Union[RebuttalDraft, str]],
        metadata: Optional[dict] = None,
    ) -> str:
        """Merge per-segment rebuttals into one final rebuttal.

        The model must tag each output paragraph with the input segment it
        covers; missing coverage triggers one repair re-prompt and then the
        deterministic fallback (ordered concatenation under headings), so
        consolidation never fails outright.
        """
        if not drafts:
            raise ValueError("consolidate requires at least one draft")
        texts = [d.text if isinstance(d, RebuttalDraft) else d for d in drafts]
        metadata = {"stage": "consolidate", **(metadata or {})}

        drafts_block = "\n\n".join(f"[S{i + 1}]\n{text}" for i, text in enumerate(texts))
        slots = {"drafts_block": drafts_block, "n_drafts": str(len(texts))}
        reply = self.gateway.complete(
            PromptRequest("consolidate", slots, self.generation_decoding, metadata)
        ).text
        if self._covers_all(reply, len(texts)):
            return reply

        missing = [f"[S{i + 1}]" for i in range(len(texts)) if f"[S{i + 1}]" not in reply]
        reply = self.gateway.complete(
            PromptRequest(
                "consolidate_repair",
                {**slots, "problem": f"these segment tags were missing: {', '.join(missing)}"},
                self.generation_decoding,
                {**metadata, "repair": "1"},
            )
        ).text
        if self._covers_all(reply, len(texts)):
            return reply
        return consolidation_fallback(texts)

    @staticmethod
    def _covers_all(reply: str, n: int) -> bool:
        return bool(reply.strip()) and all(f"[S{i + 1}]" in reply for i in range(n))


def consolidation_fallback(texts: Sequence[str]) -> str:
    """Ordered concatenation under per-segment headings; always succeeds."""
    return "\n\n".join(
        f"## Response to segment {i + 1}\n\n{text}" for i, text in enumerate(texts)
    )
