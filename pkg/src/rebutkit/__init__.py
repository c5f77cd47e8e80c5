"""Author-in-the-loop rebuttal drafting toolkit.

Builds rebuttals for peer reviews three ways: in one direct shot over the
whole review, segment by segment, or through a staged per-segment pipeline
(deficiency -> error type -> rebuttal action -> generation) that an author
can steer interactively. Ships a segment-level judging harness, a corpus
format for gold-annotated reviews, and a REST service for the companion UI.
"""

__version__ = "0.1.0"

from rebutkit.taxonomy import (  # noqa: F401
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
