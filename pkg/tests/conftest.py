"""Shared fixtures: scripted gateways, toy papers, and tagged-reply builders."""

import pytest

_acceptance_outcomes = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    if not _acceptance_outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    labels = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for nodeid, outcome in sorted(_acceptance_outcomes.items()):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{labels.get(outcome, outcome.upper()):<5} {name}")

from rebutkit.gateway import AuditLog, LLMGateway, ScriptedBackend
from rebutkit.records import PaperRecord
from rebutkit.segmentation import ReviewSegment, SegmentKind, segment_id_for


def make_gateway(script, **kwargs):
    kwargs.setdefault("sleep", lambda _s: None)
    return LLMGateway(ScriptedBackend(script), **kwargs)


def tagged_reply(blocks):
    """Build a segmentation reply in the tagged-span wire format."""
    return "\n".join(
        f"<<<segment kind={kind}>>>\n{text}\n<<<end>>>" for kind, text in blocks
    )


def make_segment(ordinal, text, kind=SegmentKind.WEAKNESS):
    return ReviewSegment(
        segment_id=segment_id_for(ordinal, text), ordinal=ordinal, kind=kind, text=text
    )


@pytest.fixture
def paper():
    return PaperRecord(
        title="Sparse Routing for Low-Resource Translation",
        body=(
            "We study sparse expert routing for translation into low-resource "
            "languages. Our router activates two experts per token and is trained "
            "with a load-balancing loss. Experiments on twelve language pairs show "
            "an average gain of 2.1 BLEU over a dense baseline of the same size. "
            "We release all code and checkpoints. Ablations show the gain comes "
            "mostly from routing diversity rather than parameter count."
        ),
        source_ref="toy-paper-1",
    )


# One oracle review used across segmentation and session tests: three
# paragraphs, hand-segmented (summary, weakness, weakness).
ORACLE_REVIEW = (
    "The paper proposes sparse expert routing for low-resource translation and "
    "reports BLEU gains on twelve language pairs.\n\n"
    "The baseline is not tuned: a dense model with a matched training budget "
    "would likely close most of the reported gap.\n\n"
    "The claim of releasing checkpoints is not verifiable from the submission."
)

ORACLE_SPANS = [
    (
        "SUMMARY",
        "The paper proposes sparse expert routing for low-resource translation and "
        "reports BLEU gains on twelve language pairs.",
    ),
    (
        "WEAKNESS",
        "The baseline is not tuned: a dense model with a matched training budget "
        "would likely close most of the reported gap.",
    ),
    (
        "WEAKNESS",
        "The claim of releasing checkpoints is not verifiable from the submission.",
    ),
]


@pytest.fixture
def oracle_review():
    return ORACLE_REVIEW


@pytest.fixture
def oracle_reply():
    return tagged_reply(ORACLE_SPANS)
