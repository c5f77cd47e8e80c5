"""Provider-agnostic gateway for text-completion calls.

All model traffic in the toolkit goes through :class:`LLMGateway`: prompt
templates are versioned assets under ``prompts/``, every call is retried on
transient transport failures with exponential backoff, every attempt lands
in an append-only audit log, and classification replies are parsed against
closed label sets with a bounded re-ask loop.

Two backends ship: :class:`ScriptedBackend` (deterministic, for tests and
demos) and :class:`OpenAICompatBackend` (any chat-completions-compatible
HTTP endpoint, configured via environment variables).
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence, TypeVar

import httpx

from rebutkit import taxonomy


class GatewayError(Exception):
    """Base class for gateway failures."""


class TemplateSlotMissing(GatewayError):
    """A template slot was left unfilled."""


class BackendUnavailable(GatewayError):
    """All retry attempts against the backend failed."""


class TransientBackendError(GatewayError):
    """Raised by backends for retryable transport failures."""


class UnparseableOutput(GatewayError):
    """Model output could not be matched to any allowed label."""


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


CLASSIFY_DECODING = Decoding(temperature=0.0, max_output_tokens=64)
GENERATE_DECODING = Decoding(temperature=0.7, max_output_tokens=2048)


@dataclass(frozen=True)
class PromptRequest:
    template_id: str
    slots: dict
    decoding: Decoding = Decoding()
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    model_id: str
    latency_ms: int
    attempt: int
    truncated: bool = False


# ---------------------------------------------------------------------------
# Templates

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")
_VERSION_RE = re.compile(r"\.v(\d+)\.txt$")

TEMPLATE_ASSETS = {
    "review_segmentation": "review_segmentation.v1.txt",
    "review_segmentation_repair": "review_segmentation_repair.v1.txt",
    "direct_rebuttal": "direct_rebuttal.v1.txt",
    "segment_rebuttal": "segment_rebuttal.v1.txt",
    "deficiency_classify": "deficiency_classify.v1.txt",
    "error_type_classify": "error_type_classify.v1.txt",
    "action_classify": "action_classify.v1.txt",
    "staged_rebuttal": "staged_rebuttal.v1.txt",
    "consolidate": "consolidate.v1.txt",
    "consolidate_repair": "consolidate_repair.v1.txt",
    "paper_context": "paper_context.v1.txt",
    "paper_context_repair": "paper_context_repair.v1.txt",
    "literature_query": "literature_query.v1.txt",
    "judge_refutation": "judge_refutation.v1.txt",
    "judge_factual": "judge_factual.v1.txt",
    "judge_consistency": "judge_consistency.v1.txt",
    "rebuttal_segmentation": "rebuttal_segmentation.v1.txt",
    "rebuttal_alignment": "rebuttal_alignment.v1.txt",
}


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    version: int
    text: str

    @property
    def required_slots(self) -> frozenset[str]:
        return frozenset(_SLOT_RE.findall(self.text))

    def render(self, slots: dict) -> str:
        missing = sorted(self.required_slots - set(slots))
        if missing:
            raise TemplateSlotMissing(
                f"template {self.template_id!r} is missing slots: {', '.join(missing)}"
            )
        rendered = _SLOT_RE.sub(lambda m: str(slots[m.group(1)]), self.text)
        if not rendered.strip():
            raise GatewayError(f"template {self.template_id!r} rendered empty")
        return rendered


def load_templates() -> dict[str, PromptTemplate]:
    templates = {}
    prompt_dir = resources.files("rebutkit").joinpath("prompts")
    for template_id, filename in TEMPLATE_ASSETS.items():
        text = prompt_dir.joinpath(filename).read_text("utf-8")
        version = int(_VERSION_RE.search(filename).group(1))
        templates[template_id] = PromptTemplate(template_id, version, text)
    return templates


_TEMPLATES = load_templates()


# ---------------------------------------------------------------------------
# Backends


@dataclass(frozen=True)
class BackendReply:
    text: str
    model_id: str
    truncated: bool = False


class Backend(Protocol):
    def complete(self, prompt: str, *, template_id: str, decoding: Decoding) -> BackendReply:
        """Return the model reply for one rendered prompt."""


class ScriptedBackend:
    """Deterministic backend replaying scripted replies; for tests and demos.

    ``script`` is either a list (one global FIFO queue shared by all
    templates) or a dict keyed by template id. Dict values may be a list
    (consumed in order), a plain string (repeats forever), or a callable
    taking the rendered prompt. A ``"*"`` key catches templates without
    their own entry. Queue entries that are exceptions are raised instead
    of returned; use :class:`TransientBackendError` to exercise retries.
    """

    def __init__(self, script, model_id: str = "scripted"):
        self.model_id = model_id
        self._lock = threading.Lock()
        if isinstance(script, dict):
            self._queues = {key: self._as_queue(value) for key, value in script.items()}
            self._global: Optional[list] = None
        else:
            self._queues = {}
            self._global = list(script)

    @staticmethod
    def _as_queue(value):
        if isinstance(value, list):
            return list(value)
        return value  # str or callable: repeats

    def complete(self, prompt: str, *, template_id: str, decoding: Decoding) -> BackendReply:
        with self._lock:
            entry = self._dequeue(template_id)
        if callable(entry):
            entry = entry(prompt)
        if isinstance(entry, Exception):
            raise entry
        return BackendReply(text=str(entry), model_id=self.model_id)

    def _dequeue(self, template_id: str):
        if self._global is not None:
            if not self._global:
                raise LookupError("scripted backend exhausted")
            return self._global.pop(0)
        queue = self._queues.get(template_id, self._queues.get("*"))
        if queue is None:
            raise LookupError(f"no scripted reply for template {template_id!r}")
        if isinstance(queue, list):
            if not queue:
                raise LookupError(f"scripted replies for {template_id!r} exhausted")
            return queue.pop(0)
        return queue


class OpenAICompatBackend:
    """Live backend for any OpenAI-compatible chat-completions endpoint.

    Configuration comes from arguments or environment variables:
    ``REBUTKIT_LLM_BASE_URL``, ``REBUTKIT_LLM_API_KEY``,
    ``REBUTKIT_LLM_MODEL``.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        model: Optional[str] = None,
        timeout: float = 120.0,
        client: Optional[httpx.Client] = None,
    ):
        self.base_url = (base_url or os.environ.get("REBUTKIT_LLM_BASE_URL", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("REBUTKIT_LLM_API_KEY", "")
        self.model = model or os.environ.get("REBUTKIT_LLM_MODEL", "")
        if not self.base_url or not self.model:
            raise GatewayError(
                "live backend not configured: set REBUTKIT_LLM_BASE_URL and REBUTKIT_LLM_MODEL"
            )
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, prompt: str, *, template_id: str, decoding: Decoding) -> BackendReply:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_output_tokens,
        }
        try:
            response = self._client.post(
                f"{self.base_url}/chat/completions", json=payload, headers=headers
            )
        except httpx.HTTPError as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"provider returned {response.status_code}")
        if response.status_code >= 400:
            raise BackendUnavailable(f"provider rejected request: {response.status_code}")
        data = response.json()
        choice = data["choices"][0]
        return BackendReply(
            text=choice["message"]["content"] or "",
            model_id=data.get("model", self.model),
            truncated=choice.get("finish_reason") == "length",
        )


# ---------------------------------------------------------------------------
# Audit log


@dataclass(frozen=True)
class AuditRecord:
    index: int
    timestamp: float
    template_id: str
    prompt: str
    response: str
    model_id: str
    attempt: int
    latency_ms: int
    outcome: str  # ok | transient_error | truncated
    metadata: dict


class AuditLog:
    """Append-only record of every gateway attempt, optionally mirrored to JSONL."""

    def __init__(self, path: Optional[str | Path] = None):
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()
        self._path = Path(path) if path else None

    def append(self, record: AuditRecord) -> None:
        with self._lock:
            self._records.append(record)
            if self._path:
                with self._path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record.__dict__, ensure_ascii=False) + "\n")

    def records(
        self, template_id: Optional[str] = None, outcome: Optional[str] = None, **metadata
    ) -> list[AuditRecord]:
        with self._lock:
            snapshot = list(self._records)
        out = []
        for record in snapshot:
            if template_id is not None and record.template_id != template_id:
                continue
            if outcome is not None and record.outcome != outcome:
                continue
            if any(record.metadata.get(key) != value for key, value in metadata.items()):
                continue
            out.append(record)
        return out

    def count(self, template_id: Optional[str] = None, outcome: str = "ok", **metadata) -> int:
        return len(self.records(template_id, outcome, **metadata))


# ---------------------------------------------------------------------------
# Choice parsing

T = TypeVar("T")

_WORD_BREAK_RE = re.compile(r"[\s_\-]+")


def _normalize(text: str) -> str:
    return _WORD_BREAK_RE.sub(" ", text.strip().casefold()).strip()


def _default_names(label) -> tuple[str, ...]:
    if isinstance(label, (taxonomy.DeficiencyOutcome, taxonomy.ErrorType, taxonomy.RebuttalAction)):
        return taxonomy.parse_names(label)
    if isinstance(label, Enum):
        return (str(label.value),)
    return (str(label),)


def parse_choice(
    raw: str,
    allowed: Sequence[T],
    *,
    names: Optional[Callable[[T], Iterable[str]]] = None,
) -> T:
    """Match raw model output against a closed, ordered label set.

    Matching is case-insensitive and whitespace-insensitive. An exact match
    against any accepted name wins; otherwise a unique substring match is
    accepted. Taxonomy labels match their identifier, display name, aliases,
    and (for error types) fine-grained member names.

    Raises :class:`UnparseableOutput` when nothing matches or the match is
    ambiguous.
    """
    if not allowed:
        raise ValueError("allowed label set must not be empty")
    names_of = names or _default_names
    nraw = _normalize(raw)
    if not nraw:
        raise UnparseableOutput("empty model output")

    normalized = [(label, [_normalize(n) for n in names_of(label)]) for label in allowed]

    exact = [label for label, nlist in normalized if nraw in nlist]
    if len(exact) == 1:
        return exact[0]
    if len(exact) > 1:
        raise UnparseableOutput(f"ambiguous output {raw!r}")

    contains: list[tuple[T, str]] = []
    for label, nlist in normalized:
        hits = [n for n in nlist if n and n in nraw]
        if hits:
            contains.append((label, max(hits, key=len)))
    if len(contains) == 1:
        return contains[0][0]
    if len(contains) > 1:
        # Keep the longest matched name if removing it explains away the rest,
        # e.g. "non-deficient" subsumes the embedded "deficient" hit.
        best_label, best_name = max(contains, key=lambda item: len(item[1]))
        residual = nraw.replace(best_name, " ")
        leftovers = [
            label
            for label, name in contains
            if label is not best_label and name in residual
        ]
        if not leftovers:
            return best_label
        raise UnparseableOutput(f"ambiguous output {raw!r}")

    within = [label for label, nlist in normalized if any(nraw in n for n in nlist)]
    if len(within) == 1:
        return within[0]
    raise UnparseableOutput(f"no allowed label matches output {raw!r}")


# ---------------------------------------------------------------------------
# Gateway


class LLMGateway:
    """Template rendering + retry + audit around a completion backend."""

    def __init__(
        self,
        backend: Backend,
        templates: Optional[dict[str, PromptTemplate]] = None,
        audit: Optional[AuditLog] = None,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.backend = backend
        self.templates = templates or _TEMPLATES
        self.audit = audit if audit is not None else AuditLog()
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._index = 0
        self._index_lock = threading.Lock()

    def template(self, template_id: str) -> PromptTemplate:
        try:
            return self.templates[template_id]
        except KeyError:
            raise GatewayError(f"unknown template {template_id!r}") from None

    def render(self, request: PromptRequest) -> str:
        return self.template(request.template_id).render(request.slots)

    def complete(self, request: PromptRequest) -> CompletionResult:
        """Render and complete one request, retrying transient failures."""
        prompt = self.render(request)
        return self._complete_prompt(
            request.template_id, prompt, request.decoding, request.metadata
        )

    def complete_choice(
        self,
        request: PromptRequest,
        allowed: Sequence[T],
        *,
        names: Optional[Callable[[T], Iterable[str]]] = None,
        max_reasks: int = 2,
    ) -> tuple[T, CompletionResult]:
        """Complete and parse against ``allowed``, re-asking on bad output.

        Each re-ask appends a stricter instruction listing the allowed
        options verbatim. After ``max_reasks`` failed re-asks the last
        :class:`UnparseableOutput` is raised.
        """
        prompt = self.render(request)
        names_of = names or _default_names
        options = "\n".join(f"- {names_of(label)[0]}" for label in allowed)
        last_error: Optional[UnparseableOutput] = None
        for ask in range(max_reasks + 1):
            if ask == 0:
                ask_prompt = prompt
                metadata = request.metadata
            else:
                ask_prompt = (
                    f"{prompt}\n\nYour previous answer did not match any allowed option."
                    f" Reply with exactly one of the following options and nothing else:\n{options}"
                )
                metadata = {**request.metadata, "reask": str(ask)}
            result = self._complete_prompt(
                request.template_id, ask_prompt, request.decoding, metadata
            )
            try:
                return parse_choice(result.text, allowed, names=names), result
            except UnparseableOutput as exc:
                last_error = exc
        raise last_error

    def _complete_prompt(
        self, template_id: str, prompt: str, decoding: Decoding, metadata: dict
    ) -> CompletionResult:
        last_error: Optional[Exception] = None
        for attempt in range(1, self.max_attempts + 1):
            started = time.perf_counter()
            try:
                reply = self.backend.complete(prompt, template_id=template_id, decoding=decoding)
            except TransientBackendError as exc:
                self._audit(template_id, prompt, str(exc), "", attempt, 0, "transient_error", metadata)
                last_error = exc
                self._backoff(attempt)
                continue
            latency_ms = max(0, int((time.perf_counter() - started) * 1000))
            if reply.truncated:
                self._audit(
                    template_id, prompt, reply.text, reply.model_id, attempt, latency_ms,
                    "truncated", metadata,
                )
                last_error = TransientBackendError("provider reported truncated output")
                self._backoff(attempt)
                continue
            self._audit(
                template_id, prompt, reply.text, reply.model_id, attempt, latency_ms, "ok", metadata
            )
            return CompletionResult(
                text=reply.text,
                model_id=reply.model_id,
                latency_ms=latency_ms,
                attempt=attempt,
            )
        raise BackendUnavailable(
            f"backend failed after {self.max_attempts} attempts: {last_error}"
        ) from last_error

    def _backoff(self, attempt: int) -> None:
        if attempt < self.max_attempts and self.backoff_base > 0:
            self._sleep(self.backoff_base * (2 ** (attempt - 1)))

    def _audit(
        self,
        template_id: str,
        prompt: str,
        response: str,
        model_id: str,
        attempt: int,
        latency_ms: int,
        outcome: str,
        metadata: dict,
    ) -> None:
        with self._index_lock:
            index = self._index
            self._index += 1
        self.audit.append(
            AuditRecord(
                index=index,
                timestamp=time.time(),
                template_id=template_id,
                prompt=prompt,
                response=response,
                model_id=model_id,
                attempt=attempt,
                latency_ms=latency_ms,
                outcome=outcome,
                metadata=dict(metadata),
            )
        )
