"""Chat/embedding gateway: HTTP and scripted mock backends, retries, cost ledger."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import httpx
import numpy as np

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Transient failure that survived every retry."""


class BackendRefusal(GatewayError):
    """Non-retryable rejection (4xx other than 408/429)."""


class Timeout(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass
class ChatRequest:
    messages: list[Message]
    model_id: str = "mock"
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        self.messages = [m if isinstance(m, Message) else Message(*m) for m in self.messages]
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("chat request needs at least one user message")
        if any(m.role not in ROLES for m in self.messages):
            raise ValueError(f"message roles must be one of {ROLES}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def user(cls, content: str, **kw) -> "ChatRequest":
        return cls([Message("user", content)], **kw)

    @property
    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass
class ChatResponse:
    content: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0


class Backend(Protocol):
    name: str

    def complete(self, req: ChatRequest, timeout: float) -> ChatResponse: ...

    def embed(self, texts: Sequence[str], timeout: float) -> list[list[float]]: ...


# --------------------------------------------------------------------------
# cost accounting

@dataclass
class CallRecord:
    model_id: str
    task: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    cost: float
    attempts: int = 1


@dataclass
class UsageTotals:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = 0.0
    cost: float = 0.0

    def add(self, r: CallRecord) -> None:
        self.calls += 1
        self.prompt_tokens += r.prompt_tokens
        self.completion_tokens += r.completion_tokens
        self.wall_time += r.latency
        self.cost += r.cost


class CostLedger:
    """Thread-safe log of every completed call; totals are always derived from it.

    ``prices`` maps model id to ``{"prompt": x, "completion": y}`` in currency
    units per 1,000 tokens.
    """

    def __init__(self, prices: Optional[dict[str, dict[str, float]]] = None):
        self.prices = prices or {}
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def price(self, model_id: str, prompt_tokens: int, completion_tokens: int) -> float:
        p = self.prices.get(model_id, {})
        return (prompt_tokens * p.get("prompt", 0.0) + completion_tokens * p.get("completion", 0.0)) / 1000.0

    def record(self, model_id: str, task: str, resp: ChatResponse, attempts: int = 1) -> CallRecord:
        rec = CallRecord(model_id, task, resp.prompt_tokens, resp.completion_tokens, resp.latency,
                         self.price(model_id, resp.prompt_tokens, resp.completion_tokens), attempts)
        with self._lock:
            self._records.append(rec)
        return rec

    @property
    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def totals(self, by: Optional[str] = None) -> Union[UsageTotals, dict[str, UsageTotals]]:
        """Overall totals, or totals keyed by ``"model_id"`` or ``"task"``."""
        records = self.records
        if by is None:
            t = UsageTotals()
            for r in records:
                t.add(r)
            return t
        out: dict[str, UsageTotals] = {}
        for r in records:
            out.setdefault(getattr(r, by), UsageTotals()).add(r)
        return out

    def dump(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def load(cls, path, prices=None) -> "CostLedger":
        ledger = cls(prices)
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    ledger._records.append(CallRecord(**json.loads(line)))
        return ledger


# --------------------------------------------------------------------------
# backends

def count_tokens(text: str) -> int:
    """Rough whitespace/punctuation token count used when a backend reports none."""
    return len(re.findall(r"\w+|[^\w\s]", text))


def _normalize(vec) -> list[float]:
    arr = np.asarray(vec, dtype=float)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise GatewayError("cannot normalize a zero embedding")
    return (arr / norm).tolist()


def hashed_ngram_embedding(text: str, dim: int = 1024, n_values: Sequence[int] = (1, 2, 3)) -> list[float]:
    """Feature-hashed character n-gram counts, L2-normalized.

    Strings sharing more surface n-grams get higher cosine similarity.
    """
    padded = f" {' '.join(text.lower().split())} "
    vec = np.zeros(dim)
    for n in n_values:
        for i in range(len(padded) - n + 1):
            gram = padded[i:i + n]
            h = int.from_bytes(hashlib.blake2b(gram.encode(), digest_size=8).digest(), "big")
            vec[h % dim] += 1.0
    if not vec.any():
        vec[0] = 1.0
    return _normalize(vec)


Matcher = Union[str, "re.Pattern[str]", Callable[[ChatRequest], bool]]


@dataclass
class ScriptStep:
    matcher: Matcher
    response: str
    repeat: bool = False
    consumed: bool = False

    def matches(self, req: ChatRequest) -> bool:
        m = self.matcher
        if isinstance(m, str):
            return m in req.text
        if isinstance(m, re.Pattern):
            return m.search(req.text) is not None
        return bool(m(req))


class MockBackend:
    """Scripted chat backend and deterministic n-gram embedder.

    Each chat call consumes the first unconsumed step whose matcher accepts
    the request (``repeat`` steps are never consumed). Matchers are plain
    substrings, compiled regexes, or predicates on the request.
    """

    name = "mock"
    sequential = True

    def __init__(self, steps: Sequence = (), embeddings: Optional[dict[str, Sequence[float]]] = None,
                 dim: int = 1024, failures: Sequence[BaseException] = ()):
        self.steps = [s if isinstance(s, ScriptStep) else ScriptStep(*s) for s in steps]
        self.embeddings = dict(embeddings or {})
        self.dim = dim
        self.failures = list(failures)
        self.transcript: list[tuple[str, str]] = []
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest, timeout: float = 0.0) -> ChatResponse:
        with self._lock:
            self.calls += 1
            if self.failures:
                exc = self.failures.pop(0)
                if exc is not None:  # None lets that call through
                    raise exc
            for step in self.steps:
                if not step.consumed and step.matches(req):
                    step.consumed = not step.repeat
                    self.transcript.append((req.text, step.response))
                    return ChatResponse(step.response, count_tokens(req.text), count_tokens(step.response))
        snippet = req.messages[-1].content[-400:]
        raise ScriptExhausted(f"no unconsumed script step matches request ending: {snippet!r}")

    def embed(self, texts: Sequence[str], timeout: float = 0.0) -> list[list[float]]:
        out = []
        for t in texts:
            if t in self.embeddings:
                out.append(_normalize(self.embeddings[t]))
            else:
                out.append(hashed_ngram_embedding(t, self.dim))
        return out

    @property
    def unconsumed(self) -> list[ScriptStep]:
        return [s for s in self.steps if not s.consumed and not s.repeat]


def mock_script(steps: Sequence) -> MockBackend:
    return MockBackend(steps)


def load_mock_script(path) -> MockBackend:
    """Script file: one JSON object per line with ``response`` and one of
    ``match`` (substring) or ``regex``; optional ``repeat``. A line of the form
    ``{"embedding": text, "vector": [...]}`` pins a mock embedding.
    """
    steps, embeddings = [], {}
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if "embedding" in row:
                embeddings[row["embedding"]] = row["vector"]
                continue
            if "regex" in row:
                matcher: Matcher = re.compile(row["regex"], re.S)
            elif "match" in row:
                matcher = row["match"]
            else:
                raise ValueError(f"{path}:{n}: script step needs 'match' or 'regex'")
            steps.append(ScriptStep(matcher, row["response"], bool(row.get("repeat", False))))
    return MockBackend(steps, embeddings)


class HttpBackend:
    """Any endpoint speaking the chat-completions / embeddings JSON shape."""

    name = "http"
    sequential = False

    def __init__(self, base_url: str, api_key: Optional[str] = None,
                 embedding_model: Optional[str] = None,
                 transport: Optional[httpx.BaseTransport] = None):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.embedding_model = embedding_model
        self.client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, transport=transport)

    def _post(self, path: str, payload: dict, timeout: float) -> dict:
        try:
            resp = self.client.post(path, json=payload, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise Timeout(f"{path} timed out after {timeout}s") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"{path}: {exc}") from exc
        if resp.status_code in (408, 429) or resp.status_code >= 500:
            raise TransportError(f"{path}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendRefusal(f"{path}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"{path}: invalid JSON body") from exc

    def complete(self, req: ChatRequest, timeout: float) -> ChatResponse:
        body = self._post("/chat/completions", {
            "model": req.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }, timeout)
        try:
            content = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion body: {str(body)[:200]}") from exc
        usage = body.get("usage") or {}
        return ChatResponse(content,
                            int(usage.get("prompt_tokens", count_tokens(req.text))),
                            int(usage.get("completion_tokens", count_tokens(content))))

    def embed(self, texts: Sequence[str], timeout: float) -> list[list[float]]:
        body = self._post("/embeddings", {"model": self.embedding_model, "input": list(texts)}, timeout)
        try:
            rows = sorted(body["data"], key=lambda d: d.get("index", 0))
            return [_normalize(r["embedding"]) for r in rows]
        except (KeyError, TypeError) as exc:
            raise TransportError("malformed embeddings body") from exc


# --------------------------------------------------------------------------
# gateway

@dataclass
class RetryPolicy:
    max_retries: int = 3
    backoff: float = 0.5
    timeout: float = 60.0


@dataclass
class Gateway:
    """Single entry point for model calls: retries, timeouts, in-flight cap, ledger."""

    backend: Backend
    model_id: str = "mock"
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    ledger: CostLedger = field(default_factory=CostLedger)
    max_in_flight: int = 4
    temperature: float = 0.0
    max_tokens: int = 1024
    sleep: Callable[[float], None] = time.sleep
    last_attempts: int = 0

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(max(1, self.max_in_flight))

    def _with_retries(self, fn):
        attempt = 0
        while True:
            attempt += 1
            try:
                with self._slots:
                    return fn(), attempt
            except (TransportError, Timeout) as exc:
                if attempt > self.retry.max_retries:
                    raise
                delay = self.retry.backoff * (2 ** (attempt - 1))
                log.warning("attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                self.sleep(delay)

    def chat(self, req: Union[ChatRequest, str], task: str = "") -> ChatResponse:
        if isinstance(req, str):
            req = ChatRequest.user(req, model_id=self.model_id, temperature=self.temperature,
                                   max_tokens=self.max_tokens)
        start = time.perf_counter()
        resp, attempts = self._with_retries(lambda: self.backend.complete(req, self.retry.timeout))
        resp.latency = time.perf_counter() - start
        self.last_attempts = attempts
        self.ledger.record(req.model_id, task, resp, attempts)
        return resp

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed needs at least one text")
        vectors, _ = self._with_retries(lambda: self.backend.embed(list(texts), self.retry.timeout))
        if len(vectors) != len(texts):
            raise TransportError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        return vectors


def chat(gateway: Gateway, req: Union[ChatRequest, str], task: str = "") -> ChatResponse:
    return gateway.chat(req, task)


def embed(gateway: Gateway, texts: Sequence[str]) -> list[list[float]]:
    return gateway.embed(texts)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    a, b = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float(a @ b / denom) if denom else 0.0


def api_key_from_env(var: str) -> Optional[str]:
    return os.environ.get(var) or None


__all__ = [
    "ChatRequest", "ChatResponse", "Message", "CostLedger", "CallRecord", "UsageTotals",
    "MockBackend", "HttpBackend", "Gateway", "RetryPolicy", "ScriptStep",
    "TransportError", "BackendRefusal", "Timeout", "ScriptExhausted", "GatewayError",
    "chat", "embed", "mock_script", "load_mock_script", "hashed_ngram_embedding", "cosine",
    "count_tokens",
]
