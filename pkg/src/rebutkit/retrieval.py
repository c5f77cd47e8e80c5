"""Retrieval for rebuttal grounding: paper-internal excerpts and external literature.

Two independent mechanisms. :class:`PaperContextRetriever` asks the model to
quote the paper passages most relevant to a review segment and verifies the
quotes really come from the paper body. :class:`LiteratureClient` turns a
review segment into a search query and fetches evidence snippets from a
scholarly-search HTTP endpoint, with caching, retries, and a global
request-rate ceiling.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import httpx

from rebutkit.gateway import Decoding, LLMGateway, PromptRequest
from rebutkit.records import PaperRecord
from rebutkit.segmentation import ReviewSegment

CONTEXT_DECODING = Decoding(temperature=0.0, max_output_tokens=2048)
QUERY_DECODING = Decoding(temperature=0.0, max_output_tokens=64)

DEFAULT_EXCERPT_CAP = 2000
DEFAULT_QUERY_MAX_LEN = 200


class LiteratureError(Exception):
    pass


class ServiceUnavailable(LiteratureError):
    pass


class RateLimited(LiteratureError):
    def __init__(self, message: str, retry_after: float = 0.0):
        super().__init__(message)
        self.retry_after = retry_after


@dataclass(frozen=True)
class ContextExcerpt:
    segment_id: str
    excerpt: str
    method: str = "llm_extracted"

    def __post_init__(self) -> None:
        if not self.excerpt.strip():
            raise ValueError("excerpt must be non-empty")


@dataclass(frozen=True)
class EvidenceSnippet:
    query: str
    title: str
    snippet: str
    source_id: str
    fetched_at: str

    def __post_init__(self) -> None:
        if not self.snippet.strip():
            raise ValueError("snippet must be non-empty")
        if not self.source_id:
            raise ValueError("source_id must be present")

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "title": self.title,
            "snippet": self.snippet,
            "source_id": self.source_id,
            "fetched_at": self.fetched_at,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvidenceSnippet":
        return cls(
            query=raw["query"],
            title=raw.get("title", ""),
            snippet=raw["snippet"],
            source_id=raw["source_id"],
            fetched_at=raw.get("fetched_at", ""),
        )


_WS_RUN_RE = re.compile(r"\s+")


def _normalize_ws(text: str) -> str:
    return _WS_RUN_RE.sub(" ", text).strip()


def truncate_on_whitespace(text: str, cap: int) -> str:
    """Cut ``text`` to at most ``cap`` characters, breaking at whitespace."""
    if len(text) <= cap:
        return text
    prefix = text[:cap]
    if text[cap].isspace():
        return prefix.rstrip()
    breaks = [m.start() for m in re.finditer(r"\s", prefix)]
    if not breaks:
        return prefix
    return prefix[: breaks[-1]].rstrip()


class PaperContextRetriever:
    """Extract the paper passages most relevant to one review segment.

    The model must quote verbatim: the reply is accepted only when, after
    whitespace normalization, it is a substring of the paper body. One
    repair re-prompt is allowed; after that the leading slice of the body
    (up to the cap) is used, so a result is always produced.
    """

    def __init__(self, gateway: LLMGateway, max_chars: int = DEFAULT_EXCERPT_CAP):
        if max_chars <= 0:
            raise ValueError("max_chars must be positive")
        self.gateway = gateway
        self.max_chars = max_chars

    def retrieve(
        self,
        paper: PaperRecord,
        segment: Union[ReviewSegment, str],
        metadata: Optional[dict] = None,
    ) -> ContextExcerpt:
        segment_text = segment.text if isinstance(segment, ReviewSegment) else segment
        segment_id = segment.segment_id if isinstance(segment, ReviewSegment) else ""
        if not segment_text.strip():
            raise ValueError("segment text must be non-empty")
        metadata = {"stage": "paper_context", **(metadata or {})}

        slots = {
            "paper_title": paper.title,
            "paper_body": paper.body,
            "segment": segment_text,
        }
        reply = self.gateway.complete(
            PromptRequest("paper_context", slots, CONTEXT_DECODING, metadata)
        ).text.strip()
        if not self._is_quote(paper.body, reply):
            reply = self.gateway.complete(
                PromptRequest(
                    "paper_context_repair",
                    {**slots, "problem": "the reply was not a verbatim quote from the paper"},
                    CONTEXT_DECODING,
                    {**metadata, "repair": "1"},
                )
            ).text.strip()
        if not self._is_quote(paper.body, reply):
            reply = paper.body.strip()

        return ContextExcerpt(
            segment_id=segment_id,
            excerpt=truncate_on_whitespace(reply, self.max_chars),
        )

    @staticmethod
    def _is_quote(body: str, reply: str) -> bool:
        if not reply:
            return False
        return _normalize_ws(reply) in _normalize_ws(body)


def first_sentence(text: str) -> str:
    stripped = text.strip()
    parts = re.split(r"(?<=[.!?])\s+", stripped, maxsplit=1)
    candidate = parts[0].strip() if parts else ""
    if not candidate:
        candidate = stripped.splitlines()[0] if stripped else ""
    return candidate


def build_literature_query(
    gateway: LLMGateway,
    segment: Union[ReviewSegment, str],
    max_len: int = DEFAULT_QUERY_MAX_LEN,
    metadata: Optional[dict] = None,
) -> str:
    """Turn a review segment into a single-line search query.

    Empty, multi-line, or over-length model output falls back to the
    segment's first sentence (truncated to the limit).
    """
    segment_text = segment.text if isinstance(segment, ReviewSegment) else segment
    if not segment_text.strip():
        raise ValueError("segment text must be non-empty")
    metadata = {"stage": "literature_query", **(metadata or {})}

    reply = gateway.complete(
        PromptRequest("literature_query", {"segment": segment_text}, QUERY_DECODING, metadata)
    ).text.strip()
    if reply and "\n" not in reply and len(reply) <= max_len:
        return reply
    return truncate_on_whitespace(first_sentence(segment_text), max_len)


class LiteratureClient:
    """HTTP client for a scholarly-search endpoint.

    Endpoint and key come from arguments or the environment
    (``REBUTKIT_SCHOLAR_BASE_URL``, ``REBUTKIT_SCHOLAR_API_KEY``). The
    endpoint is expected to answer ``GET {base}/search?query=...&limit=k``
    with ``{"results": [{"id": ..., "title": ..., "snippet": ...}, ...]}``.

    Responses are cached by query hash with a TTL; 429s honour Retry-After;
    transport failures are retried; a configurable minimum interval between
    requests is enforced across all callers of one client.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        *,
        transport: Optional[httpx.BaseTransport] = None,
        cache_dir: Optional[Union[str, Path]] = None,
        cache_ttl_s: float = 24 * 3600.0,
        max_retries: int = 3,
        min_interval_s: float = 0.0,
        timeout: float = 30.0,
        sleep=time.sleep,
        clock=time.monotonic,
    ):
        self.base_url = (base_url or os.environ.get("REBUTKIT_SCHOLAR_BASE_URL", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("REBUTKIT_SCHOLAR_API_KEY", "")
        if not self.base_url:
            raise LiteratureError(
                "literature service not configured: set REBUTKIT_SCHOLAR_BASE_URL"
            )
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.cache_ttl_s = cache_ttl_s
        self.max_retries = max_retries
        self.min_interval_s = min_interval_s
        self._sleep = sleep
        self._clock = clock
        self._memory_cache: dict[str, tuple[float, list[dict]]] = {}
        self._lock = threading.Lock()
        self._last_request = -float("inf")
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def search(self, query: str, k: int = 3) -> list[EvidenceSnippet]:
        """Fetch up to ``k`` evidence snippets for ``query``; empty results are valid."""
        if not query.strip():
            raise ValueError("query must be non-empty")
        if k <= 0:
            raise ValueError("k must be positive")

        key = hashlib.sha1(f"{k}:{query}".encode("utf-8")).hexdigest()
        cached = self._cache_get(key)
        if cached is not None:
            return [EvidenceSnippet.from_dict(raw) for raw in cached]

        raw_results = self._fetch(query, k)
        fetched_at = datetime.now(timezone.utc).isoformat()
        snippets = []
        for record in raw_results[:k]:
            snippet_text = (record.get("snippet") or "").strip()
            source_id = str(record.get("id") or "").strip()
            if not snippet_text or not source_id:
                continue
            snippets.append(
                EvidenceSnippet(
                    query=query,
                    title=record.get("title", ""),
                    snippet=snippet_text,
                    source_id=source_id,
                    fetched_at=fetched_at,
                )
            )
        self._cache_put(key, [s.to_dict() for s in snippets])
        return snippets

    def _fetch(self, query: str, k: int) -> list[dict]:
        headers = {}
        if self.api_key:
            headers["x-api-key"] = self.api_key
        last_error: Optional[Exception] = None
        for attempt in range(1, self.max_retries + 1):
            self._throttle()
            try:
                response = self._client.get(
                    f"{self.base_url}/search",
                    params={"query": query, "limit": k},
                    headers=headers,
                )
            except httpx.HTTPError as exc:
                last_error = exc
                if attempt < self.max_retries:
                    self._sleep(0.5 * (2 ** (attempt - 1)))
                continue
            if response.status_code == 429:
                retry_after = float(response.headers.get("Retry-After", "1"))
                if attempt < self.max_retries:
                    self._sleep(retry_after)
                    continue
                raise RateLimited("literature service rate limit exhausted", retry_after)
            if response.status_code >= 500:
                last_error = ServiceUnavailable(f"service returned {response.status_code}")
                if attempt < self.max_retries:
                    self._sleep(0.5 * (2 ** (attempt - 1)))
                continue
            if response.status_code >= 400:
                raise ServiceUnavailable(f"service rejected request: {response.status_code}")
            payload = response.json()
            results = payload.get("results", payload if isinstance(payload, list) else [])
            return list(results)
        raise ServiceUnavailable(f"literature service unreachable: {last_error}")

    def _throttle(self) -> None:
        with self._lock:
            now = self._clock()
            wait = self.min_interval_s - (now - self._last_request)
            if wait > 0:
                self._sleep(wait)
            self._last_request = self._clock()

    def _cache_get(self, key: str) -> Optional[list[dict]]:
        now = time.time()
        with self._lock:
            hit = self._memory_cache.get(key)
            if hit and now - hit[0] <= self.cache_ttl_s:
                return hit[1]
        if self.cache_dir:
            path = self.cache_dir / f"{key}.json"
            if path.exists():
                raw = json.loads(path.read_text("utf-8"))
                if now - raw.get("stored_at", 0) <= self.cache_ttl_s:
                    return raw.get("snippets", [])
        return None

    def _cache_put(self, key: str, snippets: list[dict]) -> None:
        stored_at = time.time()
        with self._lock:
            self._memory_cache[key] = (stored_at, snippets)
        if self.cache_dir:
            path = self.cache_dir / f"{key}.json"
            path.write_text(
                json.dumps({"stored_at": stored_at, "snippets": snippets}, ensure_ascii=False),
                "utf-8",
            )
