"""Chat-completion and embedding provider contracts.

The pipeline treats providers as pluggable: a chat provider takes an ordered
message list and returns text; an embedding provider takes a batch of texts
and returns equal-length vectors plus a model tag. Deterministic scripted,
replay and hashing implementations back the test suite; an HTTP client talks
to any OpenAI-style endpoint configured via base URL and a credential
environment variable.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    text: str


class ProviderError(Exception):
    """Provider failure. ``retryable`` distinguishes transient faults."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class ChatProvider(Protocol):
    def complete(self, messages: Sequence[ChatMessage], session_id: Optional[str] = None) -> str:
        """Return the assistant response for an ordered message list.

        ``session_id`` is a bookkeeping hint (e.g. the conversation being
        processed) that replay providers use to pick the right transcript.
        """
        ...


def request_key(messages: Sequence[ChatMessage]) -> str:
    """Stable digest of a request, used to key recorded responses."""
    payload = json.dumps([[m.role, m.text] for m in messages], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ScriptedChatProvider:
    """Pops canned responses in order; optionally one queue per session."""

    def __init__(self, responses: Sequence[str] = (), by_session: Optional[dict[str, Sequence[str]]] = None):
        self._queue = list(responses)
        self._by_session = {k: list(v) for k, v in (by_session or {}).items()}
        self.requests: list[list[ChatMessage]] = []

    def complete(self, messages: Sequence[ChatMessage], session_id: Optional[str] = None) -> str:
        self.requests.append(list(messages))
        queue = self._queue
        if session_id is not None and session_id in self._by_session:
            queue = self._by_session[session_id]
        if not queue:
            raise ProviderError("scripted provider exhausted", retryable=False)
        return queue.pop(0)


class ReplayChatProvider:
    """Replays recorded responses keyed by request digest, with a per-session
    ordered fallback for transcripts recorded before keying was added."""

    def __init__(
        self,
        keyed: Optional[dict[str, str]] = None,
        sessions: Optional[dict[str, Sequence[str]]] = None,
    ):
        self._keyed = dict(keyed or {})
        self._sessions = {k: list(v) for k, v in (sessions or {}).items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayChatProvider":
        """Load a replay file: {"keyed": {digest: text}, "sessions": {id: [text, ...]}}.

        A bare {id: [text, ...]} mapping is accepted as sessions-only shorthand.
        """
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if "keyed" in data or "sessions" in data:
            return cls(keyed=data.get("keyed"), sessions=data.get("sessions"))
        return cls(sessions=data)

    def complete(self, messages: Sequence[ChatMessage], session_id: Optional[str] = None) -> str:
        key = request_key(messages)
        if key in self._keyed:
            return self._keyed[key]
        if session_id is not None:
            queue = self._sessions.get(session_id)
            if queue:
                return queue.pop(0)
        raise ProviderError(f"no recorded response for request {key[:12]}", retryable=False)


class EchoChatProvider:
    """Returns the last user message verbatim."""

    def complete(self, messages: Sequence[ChatMessage], session_id: Optional[str] = None) -> str:
        for m in reversed(messages):
            if m.role == "user":
                return m.text
        return ""


class FailingChatProvider:
    """Always raises; used to exercise error paths."""

    def __init__(self, message: str = "provider unavailable", retryable: bool = True):
        self._error = ProviderError(message, retryable=retryable)
        self.calls = 0

    def complete(self, messages: Sequence[ChatMessage], session_id: Optional[str] = None) -> str:
        self.calls += 1
        raise self._error


class HttpChatProvider:
    """OpenAI-style chat completion client.

    The credential is read from the environment variable named by
    ``credential_env`` so secrets never land in project files.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        credential_env: str = "CHAT_PROVIDER_TOKEN",
        temperature: float = 0.0,
        timeout: float = 60.0,
        transport=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self._credential_env = credential_env
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, messages: Sequence[ChatMessage], session_id: Optional[str] = None) -> str:
        import httpx

        headers = {}
        token = os.environ.get(self._credential_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": m.role, "content": m.text} for m in messages],
        }
        try:
            resp = self._client.post(
                f"{self.base_url}/v1/chat/completions", json=body, headers=headers
            )
        except httpx.TransportError as exc:
            raise ProviderError(str(exc), retryable=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ProviderError(f"HTTP {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed completion payload: {exc}", retryable=False) from exc


def complete_with_retries(
    provider: ChatProvider,
    messages: Sequence[ChatMessage],
    session_id: Optional[str] = None,
    max_attempts: int = 3,
    backoff: float = 0.0,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[str, int]:
    """Call the provider with bounded retries on retryable errors.

    Returns (response, retry_count). Non-retryable errors propagate at once.
    """
    attempt = 0
    while True:
        try:
            return provider.complete(messages, session_id=session_id), attempt
        except ProviderError as exc:
            attempt += 1
            if not exc.retryable or attempt >= max_attempts:
                raise
            if backoff:
                sleep(backoff * (2 ** (attempt - 1)))


# ---------------------------------------------------------------------------
# Embeddings


class EmbeddingProvider(Protocol):
    model_tag: str

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        """Return one equal-length vector per input text."""
        ...


def l2_normalize(vector: Sequence[float]) -> list[float]:
    norm = math.sqrt(sum(x * x for x in vector))
    if norm == 0.0:
        return list(vector)
    return [x / norm for x in vector]


@dataclass
class HashedNgramEmbedder:
    """Deterministic text embedder: hashed character trigrams, L2-normalized.

    Not a semantic model; it gives similar texts similar vectors and identical
    texts identical vectors, which is what deterministic pipeline runs and
    tests need. Dim and version are baked into the model tag so mixed-model
    projects are rejected by validation.
    """

    dim: int = 64

    def __post_init__(self) -> None:
        self.model_tag = f"hashed-trigram-{self.dim}-v1"

    def _features(self, text: str) -> Iterable[str]:
        padded = f"  {text.lower()} "
        for i in range(len(padded) - 2):
            yield padded[i : i + 3]

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            vec = [0.0] * self.dim
            for gram in self._features(text):
                digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
                slot = int.from_bytes(digest[:4], "big") % self.dim
                sign = 1.0 if digest[4] & 1 else -1.0
                vec[slot] += sign
            out.append(l2_normalize(vec))
        return out


@dataclass
class ReplayEmbedder:
    """Returns pre-recorded vectors keyed by exact text."""

    vectors: dict[str, list[float]]
    model_tag: str = "replay-v1"

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            if text not in self.vectors:
                raise ProviderError(f"no recorded embedding for text {text[:40]!r}")
            out.append(list(self.vectors[text]))
        return out
