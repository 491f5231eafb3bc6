"""Symbolic grounding of description-concept pairs.

Sends the grounding protocol prompt for one (conversation, description,
concept) triple and parses the response with a strict header-anchored
grammar. A malformed response earns exactly one repair reprompt that quotes
the expected skeleton back to the provider; a second failure is recorded,
never patched.

Verdicts here never mutate assignments: a no_match or irrelevant outcome
only flags the pair for the verification module.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from . import providers, schema
from .providers import ChatMessage, ChatProvider, ProviderError
from .schema import Conversation, NormConcept, NormDescription, SymbolicGrounding, ViolationDetail
from .store import ProjectStore

PROTOCOL_VERSION = "grounding-protocol v1"

RESPONSE_SKELETON = """Social Norm - Norm Concept Compatibility: <match/doesn't match>
Compatibility Justification: <short justification>
Relevance: <relevant/irrelevant>
Relevance Justification: <short justification>
Enactor Role: <situation specific social role, strictly not the name, of the person>
Acceptor Role: <situation specific social role, strictly not the name, of the person>
Violation Status: <adhere/violate>
Violation Status Justification: <short justification>
Violating Action: <short phrase>
Violator Role: <social role, not a name>
Victim Role: <social role, not a name>
Violator Emotion: <one of 9 basic emotions>
Victim Emotion: <one of 9 basic emotions>"""


class GroundingParseError(Exception):
    pass


class GroundingError(Exception):
    pass


def protocol_template() -> str:
    return resources.files("convnorms.prompts").joinpath("grounding_protocol.txt").read_text(
        encoding="utf-8"
    )


def build_prompt(
    conversation: Conversation, description: NormDescription, concept: NormConcept
) -> str:
    norm_text = f"{description.title}: {description.body}" if description.body else description.title
    return (
        protocol_template()
        .replace("{conversation}", conversation.transcript())
        .replace("{norm}", norm_text)
        .replace("{concept_name}", concept.name)
        .replace("{concept_description}", concept.description)
        .replace("{violation_sketch}", concept.violation_sketch)
        .replace("{concept_settings}", ", ".join(concept.settings))
        .replace("{actor_roles}", concept.actor_roles)
        .replace("{recipient_roles}", concept.recipient_roles)
    )


# ---------------------------------------------------------------------------
# Response grammar

_HEADER_KEYS = {
    "normconceptcompatibility": "compatibility",
    "compatibilityjustification": "compatibility_justification",
    "relevance": "relevance",
    "relevancejustification": "relevance_justification",
    "enactorrole": "enactor_role",
    "acceptorrole": "acceptor_role",
    "violationstatus": "violation_status",
    "violationstatusjustification": "violation_status_justification",
    "violatingaction": "violating_action",
    "violatorrole": "violator_role",
    "victimrole": "victim_role",
    "violatoremotion": "violator_emotion",
    "victimemotion": "victim_emotion",
}
_VIOLATION_FIELDS = (
    "violating_action",
    "violator_role",
    "victim_role",
    "violator_emotion",
    "victim_emotion",
)
_MATCH_FIELDS = ("relevance", "enactor_role", "acceptor_role", "violation_status")
_ALNUM = re.compile(r"[^a-z]+")


def _normalize_header(text: str) -> str:
    return _ALNUM.sub("", text.lower())


def _extract_fields(response_text: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    for line in (response_text or "").splitlines():
        if ":" not in line:
            continue
        head, _, value = line.partition(":")
        key = _normalize_header(head.replace("**", ""))
        canonical = None
        if key.endswith("normconceptcompatibility"):
            canonical = "compatibility"
        else:
            canonical = _HEADER_KEYS.get(key)
        if canonical is not None and canonical not in fields:
            fields[canonical] = value.replace("**", "").strip()
    return fields


def _parse_compatibility(value: str) -> str:
    v = value.lower()
    if "doesn't match" in v or "does not match" in v or v in ("no match", "no_match"):
        return "no_match"
    if "match" in v:
        return "match"
    raise GroundingParseError(f"unrecognized compatibility value {value!r}")


def _parse_relevance(value: str) -> str:
    v = value.lower()
    if v.startswith("irrelevant") or "not relevant" in v:
        return "irrelevant"
    if v.startswith("relevant"):
        return "relevant"
    raise GroundingParseError(f"unrecognized relevance value {value!r}")


def _parse_violation_status(value: str) -> str:
    v = value.lower()
    if v.startswith("adhere"):
        return "adhere"
    if v.startswith("violat"):
        return "violate"
    raise GroundingParseError(f"unrecognized violation status {value!r}")


def _parse_emotion(value: str) -> str:
    v = value.strip().lower()
    if v not in schema.EMOTIONS:
        raise GroundingParseError(f"unknown emotion {value!r}")
    return v


def _check_role(value: str, speakers: Sequence[str], header: str) -> str:
    if value.lower() in {s.lower() for s in speakers}:
        raise GroundingParseError(f"role must not be a name: {header} {value!r}")
    return value


def parse_grounding(
    response_text: str,
    description_id: str = "",
    concept_id: str = "",
    speakers: Sequence[str] = (),
) -> SymbolicGrounding:
    """Parse a protocol response into a SymbolicGrounding.

    Header labels match case-insensitively and tolerate markdown bold;
    justification text is captured verbatim. Raises GroundingParseError on a
    missing required header, a role that names a speaker, an emotion outside
    the closed set, or a violation block that contradicts the status.
    """
    fields = _extract_fields(response_text)
    if "compatibility" not in fields:
        raise GroundingParseError("missing required header: compatibility")
    compatibility = _parse_compatibility(fields["compatibility"])
    justifications: dict[str, str] = {}
    if "compatibility_justification" in fields:
        justifications["compatibility"] = fields["compatibility_justification"]

    if compatibility == "no_match":
        extra = [f for f in (*_MATCH_FIELDS, *_VIOLATION_FIELDS) if f in fields]
        if extra:
            raise GroundingParseError(f"fields present despite no_match: {', '.join(extra)}")
        return SymbolicGrounding(
            description_id=description_id,
            concept_id=concept_id,
            compatibility="no_match",
            justifications=justifications,
        )

    missing = [f for f in _MATCH_FIELDS if f not in fields]
    if missing:
        raise GroundingParseError(f"missing required header: {missing[0]}")
    relevance = _parse_relevance(fields["relevance"])
    if "relevance_justification" in fields:
        justifications["relevance"] = fields["relevance_justification"]
    enactor = _check_role(fields["enactor_role"], speakers, "Enactor Role")
    acceptor = _check_role(fields["acceptor_role"], speakers, "Acceptor Role")
    violation_status = _parse_violation_status(fields["violation_status"])
    if "violation_status_justification" in fields:
        justifications["violation_status"] = fields["violation_status_justification"]

    present_violation = [f for f in _VIOLATION_FIELDS if f in fields]
    violation: Optional[ViolationDetail] = None
    if violation_status == "violate":
        if len(present_violation) < len(_VIOLATION_FIELDS):
            absent = set(_VIOLATION_FIELDS) - set(present_violation)
            raise GroundingParseError(
                f"contradictory violation block: violate status but missing {sorted(absent)}"
            )
        violation = ViolationDetail(
            action=fields["violating_action"],
            violator_role=_check_role(fields["violator_role"], speakers, "Violator Role"),
            victim_role=_check_role(fields["victim_role"], speakers, "Victim Role"),
            violator_emotion=_parse_emotion(fields["violator_emotion"]),
            victim_emotion=_parse_emotion(fields["victim_emotion"]),
        )
    elif present_violation:
        raise GroundingParseError(
            f"contradictory violation block: adhere status with {present_violation[0]}"
        )

    return SymbolicGrounding(
        description_id=description_id,
        concept_id=concept_id,
        compatibility="match",
        relevance=relevance,
        enactor_role=enactor,
        acceptor_role=acceptor,
        violation_status=violation_status,
        violation=violation,
        justifications=justifications,
    )


# Everything str.splitlines() treats as a boundary; the grammar is
# line-oriented, so field values must stay on one line.
_LINE_BREAKS = "\n\r\x0b\x0c\x1c\x1d\x1e\x85  "


def _one_line(value: str, name: str) -> str:
    if any(ch in _LINE_BREAKS for ch in value):
        raise ValueError(f"{name} must not contain line-breaking characters")
    return value


def render_grounding(g: SymbolicGrounding) -> str:
    """Canonical textual form of a grounding; parse_grounding inverts it.

    Field values must be single-line (the grammar is line-anchored)."""
    for key, value in g.justifications.items():
        _one_line(value, f"justification {key}")
    for name in ("enactor_role", "acceptor_role"):
        if getattr(g, name):
            _one_line(getattr(g, name), name)
    if g.violation is not None:
        for name in ("action", "violator_role", "victim_role"):
            _one_line(getattr(g.violation, name), name)
    value = "match" if g.compatibility == "match" else "doesn't match"
    lines = [f"Social Norm - Norm Concept Compatibility: {value}"]
    lines.append(f"Compatibility Justification: {g.justifications.get('compatibility', '')}")
    if g.compatibility == "no_match":
        return "\n".join(lines)
    lines.append(f"Relevance: {g.relevance}")
    lines.append(f"Relevance Justification: {g.justifications.get('relevance', '')}")
    lines.append(f"Enactor Role: {g.enactor_role}")
    lines.append(f"Acceptor Role: {g.acceptor_role}")
    lines.append(f"Violation Status: {g.violation_status}")
    lines.append(
        f"Violation Status Justification: {g.justifications.get('violation_status', '')}"
    )
    if g.violation is not None:
        lines.append(f"Violating Action: {g.violation.action}")
        lines.append(f"Violator Role: {g.violation.violator_role}")
        lines.append(f"Victim Role: {g.violation.victim_role}")
        lines.append(f"Violator Emotion: {g.violation.violator_emotion}")
        lines.append(f"Victim Emotion: {g.violation.victim_emotion}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Provider round trip


@dataclass
class GroundingOutcome:
    grounding: Optional[SymbolicGrounding]
    error: Optional[str] = None
    responses: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.grounding is not None


def ground(
    conversation: Conversation,
    description: NormDescription,
    concept: NormConcept,
    provider: ChatProvider,
    store: Optional[ProjectStore] = None,
) -> GroundingOutcome:
    """Ground one description-concept pair through the provider.

    When a store is given, the description must be actively assigned to the
    concept; the parsed grounding (or the failure) is persisted. One repair
    reprompt quoting the response skeleton is attempted before giving up.
    """
    if store is not None:
        current = store.state.active_assignment(description.id)
        if current is None or current.concept_id != concept.id:
            raise GroundingError(
                f"description {description.id} is not actively assigned to concept {concept.id}"
            )
    prompt = build_prompt(conversation, description, concept)
    messages = [
        ChatMessage("system", "You are a cultural and social norms analysis assistant."),
        ChatMessage("user", prompt),
    ]
    outcome = GroundingOutcome(grounding=None)
    speakers = sorted(conversation.speakers())
    last_error = ""
    for attempt in range(2):
        try:
            response, _ = providers.complete_with_retries(
                provider, messages, session_id=description.id
            )
        except ProviderError as exc:
            outcome.error = f"provider failure: {exc}"
            break
        outcome.responses.append(response)
        try:
            outcome.grounding = parse_grounding(
                response,
                description_id=description.id,
                concept_id=concept.id,
                speakers=speakers,
            )
            outcome.error = None
            break
        except GroundingParseError as exc:
            last_error = str(exc)
            outcome.error = f"parse failure: {exc}"
            if attempt == 0:
                messages.append(ChatMessage("assistant", response))
                messages.append(
                    ChatMessage(
                        "user",
                        "Your previous response did not follow the required format "
                        f"({last_error}). Respond again using exactly this skeleton:\n\n"
                        + RESPONSE_SKELETON,
                    )
                )
    if store is not None:
        persist_grounding(store, description.id, outcome)
    return outcome


def persist_grounding(store: ProjectStore, description_id: str, outcome: GroundingOutcome) -> None:
    """Record a grounding outcome: the parsed grounding on success, an error
    event on failure."""
    if outcome.grounding is not None:
        store.append("grounding_recorded", {"grounding": outcome.grounding.to_dict()})
    else:
        store.append(
            "error_recorded",
            {
                "stage": "grounding",
                "target_id": description_id,
                "message": outcome.error or "unknown failure",
            },
        )
