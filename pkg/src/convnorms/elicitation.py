"""Norm description elicitation.

Drives a chat provider through a fixed four-step prompt sequence per
conversation (translate, participants, norms/violations/effects, summary)
and parses the structured response into NormDescription records. The full
exchange is kept as a verbatim transcript for audit and replay.

The section parser is total: any text yields a (possibly empty) parse plus
diagnostics, never an exception.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import providers, schema
from .ingestion import parse_relationship_lines
from .providers import ChatMessage, ChatProvider, ProviderError
from .schema import Conversation, NormDescription
from .store import ProjectStore, canonical_json

STEP_TRANSLATE = "translate"
STEP_PARTICIPANTS = "participants"
STEP_NORMS = "norms_violations_effects"
STEP_SUMMARY = "summary"
_STEP_ORDER = (STEP_TRANSLATE, STEP_PARTICIPANTS, STEP_NORMS, STEP_SUMMARY)


@dataclass(frozen=True)
class PromptStep:
    name: str
    template: str  # may reference {conversation}


@dataclass(frozen=True)
class PromptScript:
    """Ordered elicitation steps. Known step names must keep the canonical
    translate -> participants -> norms -> summary order."""

    steps: tuple[PromptStep, ...]

    def __post_init__(self) -> None:
        known = [s.name for s in self.steps if s.name in _STEP_ORDER]
        if known != sorted(known, key=_STEP_ORDER.index):
            raise ValueError(f"steps out of order: {known}")

    @classmethod
    def default(cls) -> "PromptScript":
        return cls(
            steps=(
                PromptStep(
                    STEP_TRANSLATE,
                    "Translate this conversation into English.\n\nConversation:\n{conversation}",
                ),
                PromptStep(
                    STEP_PARTICIPANTS,
                    "List the people mentioned in the conversation and the social "
                    "relationships between them. Format each as 'Name: Name — relation', "
                    "one per line.",
                ),
                PromptStep(
                    STEP_NORMS,
                    "List the Chinese cultural norms applicable to this situation. "
                    "Are there any cultural norm violations observed in this situation? "
                    "If yes, list them. List the observed and potential effects by index "
                    "for each violation.\n\n"
                    "Use 'Norms:', 'Violations:', and 'Effects:' section headers with one "
                    "'Title: explanation' item per line; write effect lines as "
                    "'<violation title> - Observed effect: <explanation>'.",
                ),
                PromptStep(STEP_SUMMARY, "Summarize the conversation in 3-4 sentences."),
            )
        )


# ---------------------------------------------------------------------------
# Section parsing

_SECTION_HEADERS = {"norms": "norms", "violations": "violations", "effects": "effects",
                    "summary": "summary", "norm": "norms", "violation": "violations",
                    "effect": "effects"}
_ENUM_PREFIX = re.compile(r"^\s*(?:[-•*]|\d+[.)])\s*")


def _clean(text: str) -> str:
    return text.replace("**", "").replace("__", "").strip().strip("*").strip()


def _header_of(line: str) -> Optional[str]:
    """Return the canonical section name if the line is a bare header."""
    stripped = _clean(_ENUM_PREFIX.sub("", line))
    if not stripped.endswith(":"):
        return None
    return _SECTION_HEADERS.get(stripped[:-1].strip().lower())


@dataclass(frozen=True)
class TitledText:
    title: str
    body: str


@dataclass(frozen=True)
class LinkedEffect:
    violation_index: Optional[int]  # None when no violation could be linked
    title: str
    body: str


@dataclass
class ParsedSections:
    norms: list[TitledText] = field(default_factory=list)
    violations: list[TitledText] = field(default_factory=list)
    effects: list[LinkedEffect] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def parse_sections(response_text: str) -> ParsedSections:
    """Parse a norms/violations/effects response into titled items.

    Headers match case-insensitively; items split on the first colon into
    title and body; colon-free lines extend the previous item's body.
    Effect items are linked to violations by title prefix first, ordinal
    position as fallback.
    """
    parsed = ParsedSections()
    sections: dict[str, list[TitledText]] = {"norms": [], "violations": [], "effects": []}
    current: Optional[str] = None
    saw_header = False

    for raw_line in (response_text or "").splitlines():
        if not raw_line.strip():
            continue
        header = _header_of(raw_line)
        if header is not None:
            saw_header = True
            current = header if header in sections else None
            continue
        if current is None:
            continue
        line = _ENUM_PREFIX.sub("", raw_line).strip()
        items = sections[current]
        if ":" not in line:
            if items:  # body overflow onto the nearest open item
                last = items[-1]
                items[-1] = TitledText(last.title, f"{last.body} {_clean(line)}".strip())
            else:
                parsed.diagnostics.append(f"{current}: stray text {line[:60]!r}")
            continue
        title, _, body = line.partition(":")
        items.append(TitledText(_clean(title), body.strip()))

    if not saw_header:
        parsed.diagnostics.append("no recognized section header")
        return parsed

    parsed.norms = sections["norms"]
    parsed.violations = sections["violations"]
    violation_titles = [v.title.lower() for v in parsed.violations]
    for ordinal, item in enumerate(sections["effects"]):
        prefix = item.title.split(" - ")[0].strip().lower()
        if prefix in violation_titles:
            index: Optional[int] = violation_titles.index(prefix)
        elif ordinal < len(parsed.violations):
            index = ordinal  # ordinal fallback
        else:
            index = None
            parsed.diagnostics.append(f"effects: unlinked effect {item.title!r}")
        parsed.effects.append(LinkedEffect(index, item.title, item.body))
    return parsed


# ---------------------------------------------------------------------------
# Elicitation run


def description_id(conversation_id: str, kind: str, title: str, body: str, parent_id: str = "") -> str:
    """Content hash so identical records re-derive the same id."""
    digest = hashlib.sha256(
        canonical_json([conversation_id, kind, title, body, parent_id]).encode("utf-8")
    ).hexdigest()
    return f"d{digest[:16]}"


@dataclass
class ElicitationResult:
    conversation_id: str
    descriptions: list[NormDescription]
    summary: Optional[str]
    relationships: list[tuple[str, str, str]]
    transcript: dict
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def elicit(
    conversation: Conversation,
    provider: ChatProvider,
    script: Optional[PromptScript] = None,
    clock: Callable[[], float] = time.time,
    max_attempts: int = 3,
) -> ElicitationResult:
    """Run the elicitation script against one conversation.

    Provider failures on a step are retried within ``max_attempts`` when
    retryable, then recorded as a per-conversation failure; parsing problems
    in one section never suppress the other sections.
    """
    if not conversation.turns:
        raise ValueError("conversation has no turns")
    script = script or PromptScript.default()

    messages: list[ChatMessage] = [
        ChatMessage("system", "You are a cultural and social norms analysis assistant."),
    ]
    steps: list[dict] = []
    responses: dict[str, str] = {}
    failures: list[str] = []

    for step in script.steps:
        prompt = step.template.replace("{conversation}", conversation.transcript())
        messages.append(ChatMessage("user", prompt))
        started = clock()
        try:
            response, retries = providers.complete_with_retries(
                provider, messages, session_id=conversation.id, max_attempts=max_attempts
            )
        except ProviderError as exc:
            failures.append(f"step {step.name}: {exc}")
            messages.pop()
            steps.append(
                {"step": step.name, "prompt": prompt, "response": None,
                 "started": started, "finished": clock(), "retries": max_attempts - 1}
            )
            continue
        messages.append(ChatMessage("assistant", response))
        steps.append(
            {"step": step.name, "prompt": prompt, "response": response,
             "started": started, "finished": clock(), "retries": retries}
        )
        responses[step.name] = response

    descriptions: list[NormDescription] = []
    if STEP_NORMS in responses:
        parsed = parse_sections(responses[STEP_NORMS])
        failures.extend(parsed.diagnostics)
        descriptions = descriptions_from_sections(conversation.id, parsed)
    elif any(s.name == STEP_NORMS for s in script.steps):
        failures.append("no norms response")

    relationships = (
        parse_relationship_lines(responses.get(STEP_PARTICIPANTS, ""))
        if STEP_PARTICIPANTS in responses
        else []
    )
    summary = responses.get(STEP_SUMMARY, "").strip() or None

    run_id = hashlib.sha256(
        canonical_json([s.get("response") for s in steps]).encode("utf-8")
    ).hexdigest()[:12]
    transcript = {"conversation_id": conversation.id, "run_id": run_id, "steps": steps}
    return ElicitationResult(
        conversation_id=conversation.id,
        descriptions=descriptions,
        summary=summary,
        relationships=relationships,
        transcript=transcript,
        failures=failures,
    )


def descriptions_from_sections(conversation_id: str, parsed: ParsedSections) -> list[NormDescription]:
    """Materialize parsed sections as raw NormDescription records with
    content-hash ids; effects link to their violation's id."""
    out: list[NormDescription] = []
    for item in parsed.norms:
        out.append(
            NormDescription(
                id=description_id(conversation_id, schema.KIND_NORM, item.title, item.body),
                conversation_id=conversation_id,
                kind=schema.KIND_NORM,
                title=item.title,
                body=item.body,
            )
        )
    violation_ids: list[str] = []
    for item in parsed.violations:
        vid = description_id(conversation_id, schema.KIND_VIOLATION, item.title, item.body)
        violation_ids.append(vid)
        out.append(
            NormDescription(
                id=vid,
                conversation_id=conversation_id,
                kind=schema.KIND_VIOLATION,
                title=item.title,
                body=item.body,
            )
        )
    for effect in parsed.effects:
        if effect.violation_index is None or effect.violation_index >= len(violation_ids):
            continue
        parent = violation_ids[effect.violation_index]
        out.append(
            NormDescription(
                id=description_id(
                    conversation_id, schema.KIND_EFFECT, effect.title, effect.body, parent
                ),
                conversation_id=conversation_id,
                kind=schema.KIND_EFFECT,
                title=effect.title,
                body=effect.body,
                parent_id=parent,
            )
        )
    return out


def persist_elicitation(store: ProjectStore, result: ElicitationResult) -> int:
    """Append the transcript and parsed descriptions to the store.

    Re-running with the same transcript is a no-op: content-hash ids make
    duplicate description events idempotent. Returns the number of newly
    inserted descriptions.
    """
    store.append("transcript_recorded", result.transcript)
    added = 0
    for desc in result.descriptions:
        if desc.id not in store.state.descriptions:
            added += 1
        store.append("description_added", {"description": desc.to_dict()})
    for failure in result.failures:
        store.append(
            "error_recorded",
            {"stage": "elicitation", "target_id": result.conversation_id, "message": failure},
        )
    return added
