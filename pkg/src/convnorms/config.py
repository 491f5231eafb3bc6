"""Project configuration: discovery knobs, verification threshold, provider
wiring. Loaded from a JSON file shared by the CLI and the HTTP service."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from . import providers
from .providers import (
    ChatProvider,
    EchoChatProvider,
    EmbeddingProvider,
    HashedNgramEmbedder,
    HttpChatProvider,
    ReplayChatProvider,
    ReplayEmbedder,
)


@dataclass
class Config:
    k: Optional[int] = None  # round-1 default is ceil(sqrt(n/2)) when unset
    tau: float = 0.7
    lam: float = 1.0  # "lambda" in files; weight of the bad-center term
    threshold: float = 0.7
    parallelism: int = 4
    seed: int = 0
    max_iters: int = 100
    embedding_dim: int = 64
    chat_provider: dict[str, Any] = field(default_factory=dict)
    embedding_provider: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Config":
        known = {
            "k": d.get("k"),
            "tau": float(d.get("tau", 0.7)),
            "lam": float(d.get("lambda", d.get("lam", 1.0))),
            "threshold": float(d.get("threshold", 0.7)),
            "parallelism": int(d.get("parallelism", 4)),
            "seed": int(d.get("seed", 0)),
            "max_iters": int(d.get("max_iters", 100)),
            "embedding_dim": int(d.get("embedding_dim", 64)),
            "chat_provider": dict(d.get("chat_provider") or {}),
            "embedding_provider": dict(d.get("embedding_provider") or {}),
        }
        return cls(**known)

    @classmethod
    def load(cls, path: Optional[str | Path]) -> "Config":
        if path is None:
            return cls()
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def build_chat_provider(self) -> ChatProvider:
        spec = self.chat_provider
        kind = spec.get("type", "echo")
        if kind == "replay":
            return ReplayChatProvider.from_file(spec["path"])
        if kind == "http":
            return HttpChatProvider(
                base_url=spec["base_url"],
                model=spec.get("model", "gpt-3.5-turbo"),
                credential_env=spec.get("credential_env", "CHAT_PROVIDER_TOKEN"),
                temperature=float(spec.get("temperature", 0.0)),
            )
        if kind == "echo":
            return EchoChatProvider()
        raise ValueError(f"unknown chat provider type {kind!r}")

    def build_embedder(self) -> EmbeddingProvider:
        spec = self.embedding_provider
        kind = spec.get("type", "hashed")
        if kind == "hashed":
            return HashedNgramEmbedder(dim=int(spec.get("dim", self.embedding_dim)))
        if kind == "replay":
            data = json.loads(Path(spec["path"]).read_text(encoding="utf-8"))
            return ReplayEmbedder(
                vectors=data["vectors"], model_tag=data.get("model_tag", "replay-v1")
            )
        raise ValueError(f"unknown embedding provider type {kind!r}")
