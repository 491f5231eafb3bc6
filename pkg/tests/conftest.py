from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles/helpers importable

from convnorms.providers import request_key
from convnorms.schema import Conversation, Turn
from convnorms.store import ProjectStore

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def make_conversation(conv_id: str, lines: list[tuple[str, str]], source: str = "test", **kwargs) -> Conversation:
    turns = tuple(
        Turn(index=i, speaker=speaker, text=text) for i, (speaker, text) in enumerate(lines)
    )
    return Conversation(id=conv_id, source=source, turns=turns, **kwargs)


def family_conversation() -> Conversation:
    """The elicitation fixture conversation (mother, father, son)."""
    return make_conversation(
        "conv-family",
        [
            ("Mrs. Zuo", "What is that foolish girl worth giving anything to? Zho Zpeng is such a person!"),
            ("Mr. Zuo", "Oh, wife, why do you always say things that are not conducive to unity? It's reasonable for him to go and give something to his classmate!"),
            ("Zho Zpeng", "Dad, Mom, I'm back!"),
            ("Mrs. Zuo", "I'm afraid you've been drugged and your soul has been seduced by that foolish classmate of yours!"),
            ("Mr. Zuo", "Wife, do you sound like a mother when you speak like that? Why do you always oppose their relationship?"),
            ("Zho Zpeng", "Dad, Mom, please stop talking. I have my own opinions on this matter. I know what I should do and what I shouldn't do. I will never act recklessly. Please trust me!"),
        ],
    )


def pregnancy_conversation() -> Conversation:
    """The grounding fixture conversation (expecting couple)."""
    return make_conversation(
        "conv-pregnancy",
        [
            ("Zuo Zhengpeng", "Lihua, how much longer until the baby is due?"),
            ("Xu Lihua", "Probably next week!"),
            ("Zuo Zhengpeng", "Oh, the baby is moving!"),
            ("Xu Lihua", "Look at you, how embarrassing!"),
            ("Xu Lihua", "What's the rush? We still have a few days. You're eager to become a father, aren't you?"),
            ("Zuo Zhengpeng", "No! By then, it might be too late. It's better to go to the hospital a few days early."),
        ],
    )


def store_with_norms(
    vectors: dict[str, list[float]],
    conv_id: str = "conv-pool",
    model_tag: str = "test-model",
) -> ProjectStore:
    """In-memory store holding one conversation plus one norm description per
    vector, embedded with the given (normalized) vectors."""
    store = ProjectStore()
    conv = make_conversation(conv_id, [("A", "hello"), ("B", "hi there")])
    store.append("conversation_added", {"conversation": conv.to_dict()})
    for did, vec in vectors.items():
        arr = np.asarray(vec, dtype=float)
        n = np.linalg.norm(arr)
        unit = (arr / n if n else arr).tolist()
        store.append(
            "description_added",
            {
                "description": {
                    "id": did,
                    "conversation_id": conv_id,
                    "kind": "norm",
                    "title": f"norm {did}",
                    "body": f"body of {did}",
                }
            },
        )
        store.append(
            "embedding_added",
            {
                "embedding": {
                    "target_id": did,
                    "vector": unit,
                    "model_tag": model_tag,
                    "normalized": True,
                }
            },
        )
    return store


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int) -> list[list[float]]:
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.tolist()


class RecordingChatProvider:
    """Wraps a provider, recording request-keyed responses for replay."""

    def __init__(self, inner):
        self.inner = inner
        self.recorded: dict[str, str] = {}

    def complete(self, messages, session_id=None):
        response = self.inner.complete(messages, session_id=session_id)
        self.recorded[request_key(messages)] = response
        return response
