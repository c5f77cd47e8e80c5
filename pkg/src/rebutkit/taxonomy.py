"""Closed label taxonomies shared by every stage of the toolkit.

Three label families are defined here: the binary deficiency outcome of a
review segment, the seven coarse error-type categories for deficient
segments, and the eleven rebuttal actions. The families are closed enums;
their display texts, definitions, natural-language statements, and the
static error-type -> allowed-actions table are loaded from a versioned
configuration file (``data/taxonomy.json`` ships as the default).

Everything in this module is immutable after load and safe for concurrent
reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

TAXONOMY_SCHEMA_VERSION = 1


class TaxonomyError(ValueError):
    """Raised when a taxonomy configuration file is malformed."""


class LabelValidationError(ValueError):
    """Raised when a label combination violates the taxonomy invariants."""


class DeficiencyOutcome(str, Enum):
    DEFICIENT = "deficient"
    NON_DEFICIENT = "non_deficient"


class ErrorType(str, Enum):
    INCORRECT_REFERENCES = "incorrect_references"
    LESS_RIGOR_METHODOLOGY_EXPERIMENTS = "less_rigor_methodology_experiments"
    MISINTERPRETATION_OF_CLAIMS = "misinterpretation_of_claims"
    SUPERFICIAL_VAGUE_REVIEW = "superficial_vague_review"
    INCOMPLETE_INCORRECT_COPIED_SUMMARY = "incomplete_incorrect_copied_summary"
    SYNTACTIC_ISSUES_IN_REVIEW = "syntactic_issues_in_review"
    MISIDENTIFIED_STRUCTURAL_ISSUES_IN_PAPER = "misidentified_structural_issues_in_paper"


class RebuttalAction(str, Enum):
    REJECT_REQUEST = "reject_request"
    ACCEPT_FOR_FUTURE_WORK = "accept_for_future_work"
    REJECT_CRITICISM = "reject_criticism"
    REFUTE_QUESTION = "refute_question"
    CONTRADICT_ASSERTION = "contradict_assertion"
    MITIGATE_CRITICISM = "mitigate_criticism"
    ANSWER_QUESTION = "answer_question"
    TASK_IS_DONE = "task_is_done"
    TASK_WILL_BE_DONE = "task_will_be_done"
    CONCEDE_CRITICISM = "concede_criticism"
    ACCEPT_PRAISE = "accept_praise"


class Provenance(str, Enum):
    PREDICTED = "predicted"
    AUTHOR_CONFIRMED = "author_confirmed"
    AUTHOR_OVERRIDDEN = "author_overridden"


@dataclass(frozen=True)
class LabelInfo:
    """Display text, parse aliases, and NL statement for one label value."""

    display: str
    statement: str
    aliases: tuple[str, ...] = ()


@dataclass(frozen=True)
class ErrorTypeInfo(LabelInfo):
    definition: str = ""
    fine_grained: tuple[str, ...] = ()


@dataclass(frozen=True)
class Taxonomy:
    """One loaded taxonomy version: label texts plus the action mapping."""

    schema_version: int
    deficiency: dict[DeficiencyOutcome, LabelInfo]
    error_types: dict[ErrorType, ErrorTypeInfo]
    actions: dict[RebuttalAction, LabelInfo]
    action_map: dict[ErrorType, frozenset[RebuttalAction]]
    non_deficient_actions: frozenset[RebuttalAction]

    def allowed_actions(
        self,
        deficiency: DeficiencyOutcome,
        error_type: Optional[ErrorType] = None,
    ) -> frozenset[RebuttalAction]:
        """Allowed rebuttal actions for a (deficiency, error type) pair.

        The pair must satisfy the label invariant: an error type is given
        iff the segment is deficient.
        """
        if deficiency is DeficiencyOutcome.DEFICIENT:
            if error_type is None:
                raise LabelValidationError("deficient segments require an error type")
            return self.action_map[ErrorType(error_type)]
        if error_type is not None:
            raise LabelValidationError("non-deficient segments carry no error type")
        return self.non_deficient_actions

    def deficiency_statement(self, outcome: DeficiencyOutcome) -> str:
        return self.deficiency[DeficiencyOutcome(outcome)].statement

    def error_type_statement(self, error_type: ErrorType) -> str:
        return self.error_types[ErrorType(error_type)].statement

    def action_statement(self, action: RebuttalAction) -> str:
        return self.actions[RebuttalAction(action)].statement

    def parse_names(self, label: DeficiencyOutcome | ErrorType | RebuttalAction) -> tuple[str, ...]:
        """All texts a model reply may use to denote ``label``, display first.

        Error types additionally accept their fine-grained member names.
        """
        if isinstance(label, DeficiencyOutcome):
            info: LabelInfo = self.deficiency[label]
            extra: tuple[str, ...] = ()
        elif isinstance(label, ErrorType):
            info = self.error_types[label]
            extra = self.error_types[label].fine_grained
        elif isinstance(label, RebuttalAction):
            info = self.actions[label]
            extra = ()
        else:
            raise TypeError(f"not a taxonomy label: {label!r}")
        return (info.display, label.value, *info.aliases, *extra)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise TaxonomyError(message)


def _label_info(raw: dict, key: str) -> LabelInfo:
    display = raw.get("display", "")
    statement = raw.get("statement", "")
    _require(isinstance(display, str) and display.strip() != "", f"{key}: empty display")
    _require(isinstance(statement, str) and statement.strip() != "", f"{key}: empty statement")
    return LabelInfo(
        display=display,
        statement=statement,
        aliases=tuple(raw.get("aliases", ())),
    )


def load_taxonomy(path: str | Path | None = None) -> Taxonomy:
    """Load and validate a taxonomy configuration file.

    With no path, loads the packaged default tables. Raises
    :class:`TaxonomyError` when the file does not cover exactly the known
    label identifiers or carries an unsupported schema version.
    """
    if path is None:
        raw_text = resources.files("rebutkit").joinpath("data/taxonomy.json").read_text("utf-8")
    else:
        raw_text = Path(path).read_text("utf-8")
    raw = json.loads(raw_text)

    version = raw.get("schema_version")
    _require(version == TAXONOMY_SCHEMA_VERSION, f"unsupported taxonomy schema_version: {version!r}")

    def check_cover(section: str, expected: set[str]) -> dict:
        table = raw.get(section)
        _require(isinstance(table, dict), f"missing section: {section}")
        got = set(table)
        _require(got == expected, f"{section}: identifiers {sorted(got ^ expected)} mismatch")
        return table

    deficiency_raw = check_cover("deficiency", {o.value for o in DeficiencyOutcome})
    error_types_raw = check_cover("error_types", {e.value for e in ErrorType})
    actions_raw = check_cover("actions", {a.value for a in RebuttalAction})

    deficiency = {
        outcome: _label_info(deficiency_raw[outcome.value], outcome.value)
        for outcome in DeficiencyOutcome
    }
    actions = {
        action: _label_info(actions_raw[action.value], action.value) for action in RebuttalAction
    }

    all_actions = frozenset(RebuttalAction)
    error_types: dict[ErrorType, ErrorTypeInfo] = {}
    action_map: dict[ErrorType, frozenset[RebuttalAction]] = {}
    for error_type in ErrorType:
        entry = error_types_raw[error_type.value]
        info = _label_info(entry, error_type.value)
        definition = entry.get("definition", "")
        _require(definition.strip() != "", f"{error_type.value}: empty definition")
        error_types[error_type] = ErrorTypeInfo(
            display=info.display,
            statement=info.statement,
            aliases=info.aliases,
            definition=definition,
            fine_grained=tuple(entry.get("fine_grained", ())),
        )
        mapped = entry.get("actions")
        if mapped == "all":
            action_map[error_type] = all_actions
        else:
            _require(
                isinstance(mapped, list) and len(mapped) > 0,
                f"{error_type.value}: empty action mapping",
            )
            action_map[error_type] = frozenset(RebuttalAction(a) for a in mapped)

    non_deficient = frozenset(RebuttalAction(a) for a in raw.get("non_deficient_actions", ()))
    _require(len(non_deficient) > 0, "non_deficient_actions must not be empty")

    for section_name, table in (
        ("deficiency", deficiency),
        ("error_types", error_types),
        ("actions", actions),
    ):
        statements = [info.statement for info in table.values()]
        _require(
            len(set(statements)) == len(statements),
            f"{section_name}: statements must be distinct",
        )

    return Taxonomy(
        schema_version=version,
        deficiency=deficiency,
        error_types=error_types,
        actions=actions,
        action_map=action_map,
        non_deficient_actions=non_deficient,
    )


DEFAULT_TAXONOMY = load_taxonomy()


def allowed_actions(
    deficiency: DeficiencyOutcome, error_type: Optional[ErrorType] = None
) -> frozenset[RebuttalAction]:
    return DEFAULT_TAXONOMY.allowed_actions(deficiency, error_type)


def deficiency_statement(outcome: DeficiencyOutcome) -> str:
    return DEFAULT_TAXONOMY.deficiency_statement(outcome)


def error_type_statement(error_type: ErrorType) -> str:
    return DEFAULT_TAXONOMY.error_type_statement(error_type)


def action_statement(action: RebuttalAction) -> str:
    return DEFAULT_TAXONOMY.action_statement(action)


def parse_names(label: DeficiencyOutcome | ErrorType | RebuttalAction) -> tuple[str, ...]:
    return DEFAULT_TAXONOMY.parse_names(label)


@dataclass(frozen=True)
class SegmentLabels:
    """Complete label triple for one review segment.

    Invariants: an error type is present iff the segment is deficient, and
    the action must be allowed for the (deficiency, error type) pair.
    """

    deficiency: DeficiencyOutcome
    action: RebuttalAction
    error_type: Optional[ErrorType] = None
    deficiency_provenance: Provenance = Provenance.PREDICTED
    error_type_provenance: Optional[Provenance] = None
    action_provenance: Provenance = Provenance.PREDICTED

    def __post_init__(self) -> None:
        deficient = self.deficiency is DeficiencyOutcome.DEFICIENT
        if deficient and self.error_type is None:
            raise LabelValidationError("deficient segment is missing an error type")
        if not deficient and self.error_type is not None:
            raise LabelValidationError("non-deficient segment must not carry an error type")
        allowed = allowed_actions(self.deficiency, self.error_type)
        if self.action not in allowed:
            raise LabelValidationError(
                f"action {self.action.value!r} not allowed for "
                f"({self.deficiency.value}, {self.error_type.value if self.error_type else None})"
            )
        if deficient and self.error_type_provenance is None:
            object.__setattr__(self, "error_type_provenance", Provenance.PREDICTED)

    def to_dict(self) -> dict:
        return {
            "deficiency": self.deficiency.value,
            "error_type": self.error_type.value if self.error_type else None,
            "action": self.action.value,
            "provenance": {
                "deficiency": self.deficiency_provenance.value,
                "error_type": self.error_type_provenance.value
                if self.error_type_provenance
                else None,
                "action": self.action_provenance.value,
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SegmentLabels":
        provenance = raw.get("provenance") or {}
        return cls(
            deficiency=DeficiencyOutcome(raw["deficiency"]),
            action=RebuttalAction(raw["action"]),
            error_type=ErrorType(raw["error_type"]) if raw.get("error_type") else None,
            deficiency_provenance=Provenance(provenance.get("deficiency", "predicted")),
            error_type_provenance=Provenance(provenance["error_type"])
            if provenance.get("error_type")
            else None,
            action_provenance=Provenance(provenance.get("action", "predicted")),
        )
