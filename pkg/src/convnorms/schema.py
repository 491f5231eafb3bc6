"""Domain types for the cultural context schema.

The schema has two segments: a factual segment (conversations, turns,
relationships, settings, summaries) and a cultural segment (norm/violation/
effect descriptions, norm concepts, concept assignments, symbolic
groundings). Every other module builds on the types defined here.

All types are frozen value objects. Mutation happens only through the
project store, so instances are safe to share across threads. Dict-valued
fields (labels, attributes, justifications) are treated as read-only by
convention.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

# Closed label-task set carried on turns.
LABEL_TASKS = ("emotion", "sentiment", "dialogue_act", "norm_violation")

# Closed 9-value emotion set used by violation blocks in symbolic groundings.
EMOTIONS = (
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
    "contempt",
    "anticipation",
    "neutral",
)

GOLD = "gold"
PROVIDER_FILLED = "provider_filled"

KIND_NORM = "norm"
KIND_VIOLATION = "violation"
KIND_EFFECT = "effect"
DESCRIPTION_KINDS = (KIND_NORM, KIND_VIOLATION, KIND_EFFECT)

STATUS_RAW = "raw"
STATUS_SELF_VERIFIED = "self_verified"
STATUS_AGENT_VERIFIED = "agent_verified"
STATUS_DISCARDED = "discarded"
_STATUS_RANK = {STATUS_RAW: 0, STATUS_SELF_VERIFIED: 1, STATUS_AGENT_VERIFIED: 2}

PROVENANCE_HUMAN_SEED = "human_seed"
PROVENANCE_KNN = "knn"
PROVENANCE_REASSIGNED = "reassigned"

ASPECTS = ("relevance", "mapping", "violation")


def status_transition_ok(old: str, new: str) -> bool:
    """Whether a description status change is legal.

    Statuses move strictly rightward (raw -> self_verified -> agent_verified)
    or terminate in discarded. Discarded never transitions out.
    """
    if old == STATUS_DISCARDED:
        return False
    if new == STATUS_DISCARDED:
        return True
    return _STATUS_RANK.get(new, -1) > _STATUS_RANK.get(old, 99)


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: str
    text: str
    labels: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "speaker": self.speaker,
            "text": self.text,
            "labels": dict(self.labels),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Turn":
        return cls(
            index=int(d["index"]),
            speaker=d["speaker"],
            text=d["text"],
            labels=dict(d.get("labels") or {}),
        )


@dataclass(frozen=True)
class Relationship:
    speaker_a: str
    speaker_b: str
    relation: str
    provenance: str = GOLD

    def to_dict(self) -> dict[str, Any]:
        return {
            "speaker_a": self.speaker_a,
            "speaker_b": self.speaker_b,
            "relation": self.relation,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Relationship":
        return cls(d["speaker_a"], d["speaker_b"], d["relation"], d.get("provenance", GOLD))


@dataclass(frozen=True)
class SettingsRecord:
    """Scene/setting metadata. ``provenance`` records gold vs provider-filled
    per attribute name, plus the "field" key when the field itself is set."""

    # "field" (the scene) shadows dataclasses.field inside this class body
    field: Optional[str] = None
    attributes: Mapping[str, str] = dataclasses.field(default_factory=dict)
    provenance: Mapping[str, str] = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "field": self.field,
            "attributes": dict(self.attributes),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SettingsRecord":
        return cls(
            field=d.get("field"),
            attributes=dict(d.get("attributes") or {}),
            provenance=dict(d.get("provenance") or {}),
        )


@dataclass(frozen=True)
class Conversation:
    id: str
    source: str
    turns: tuple[Turn, ...]
    relationships: tuple[Relationship, ...] = ()
    settings: Optional[SettingsRecord] = None
    summary: Optional[str] = None
    summary_provenance: Optional[str] = None
    language: str = "zh"

    def speakers(self) -> set[str]:
        return {t.speaker for t in self.turns}

    def transcript(self) -> str:
        """Plain-text rendering used when prompting a provider."""
        return "\n".join(f"{t.speaker}: {t.text}" for t in self.turns)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "turns": [t.to_dict() for t in self.turns],
            "relationships": [r.to_dict() for r in self.relationships],
            "settings": self.settings.to_dict() if self.settings else None,
            "summary": self.summary,
            "summary_provenance": self.summary_provenance,
            "language": self.language,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Conversation":
        settings = d.get("settings")
        return cls(
            id=d["id"],
            source=d.get("source", ""),
            turns=tuple(Turn.from_dict(t) for t in d.get("turns") or ()),
            relationships=tuple(Relationship.from_dict(r) for r in d.get("relationships") or ()),
            settings=SettingsRecord.from_dict(settings) if settings else None,
            summary=d.get("summary"),
            summary_provenance=d.get("summary_provenance"),
            language=d.get("language", "zh"),
        )


@dataclass(frozen=True)
class NormDescription:
    """One elicited norm/violation/effect text unit tied to a conversation.

    Effects carry a ``parent_id`` naming the violation they describe; other
    kinds never do.
    """

    id: str
    conversation_id: str
    kind: str
    title: str
    body: str
    parent_id: Optional[str] = None
    status: str = STATUS_RAW

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "conversation_id": self.conversation_id,
            "kind": self.kind,
            "title": self.title,
            "body": self.body,
            "parent_id": self.parent_id,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NormDescription":
        return cls(
            id=d["id"],
            conversation_id=d["conversation_id"],
            kind=d["kind"],
            title=d.get("title", ""),
            body=d.get("body", ""),
            parent_id=d.get("parent_id"),
            status=d.get("status", STATUS_RAW),
        )


@dataclass(frozen=True)
class NormConcept:
    """Human-authored abstraction over related norm descriptions.

    The symbolic structure (description, settings, violation sketch,
    actor/recipient roles) is authored by a cultural expert; seed/good/bad
    id sets anchor the concept in data and stay pairwise disjoint.
    """

    id: str
    name: str
    description: str
    settings: tuple[str, ...]
    violation_sketch: str
    actor_roles: str
    recipient_roles: str
    seed_ids: tuple[str, ...]
    good_ids: tuple[str, ...] = ()
    bad_ids: tuple[str, ...] = ()
    created_by: str = ""
    iteration: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "settings": list(self.settings),
            "violation_sketch": self.violation_sketch,
            "actor_roles": self.actor_roles,
            "recipient_roles": self.recipient_roles,
            "seed_ids": list(self.seed_ids),
            "good_ids": list(self.good_ids),
            "bad_ids": list(self.bad_ids),
            "created_by": self.created_by,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NormConcept":
        return cls(
            id=d["id"],
            name=d["name"],
            description=d.get("description", ""),
            settings=tuple(d.get("settings") or ()),
            violation_sketch=d.get("violation_sketch", ""),
            actor_roles=d.get("actor_roles", ""),
            recipient_roles=d.get("recipient_roles", ""),
            seed_ids=tuple(d.get("seed_ids") or ()),
            good_ids=tuple(d.get("good_ids") or ()),
            bad_ids=tuple(d.get("bad_ids") or ()),
            created_by=d.get("created_by", ""),
            iteration=int(d.get("iteration", 1)),
        )


@dataclass(frozen=True)
class ConceptAssignment:
    description_id: str
    concept_id: str
    provenance: str
    score: float
    iteration: int
    active: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "description_id": self.description_id,
            "concept_id": self.concept_id,
            "provenance": self.provenance,
            "score": self.score,
            "iteration": self.iteration,
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ConceptAssignment":
        return cls(
            description_id=d["description_id"],
            concept_id=d["concept_id"],
            provenance=d["provenance"],
            score=float(d["score"]),
            iteration=int(d.get("iteration", 1)),
            active=bool(d.get("active", True)),
        )


@dataclass(frozen=True)
class EmbeddingRecord:
    target_id: str
    vector: tuple[float, ...]
    model_tag: str
    normalized: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "target_id": self.target_id,
            "vector": list(self.vector),
            "model_tag": self.model_tag,
            "normalized": self.normalized,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EmbeddingRecord":
        return cls(
            target_id=d["target_id"],
            vector=tuple(float(x) for x in d["vector"]),
            model_tag=d["model_tag"],
            normalized=bool(d.get("normalized", True)),
        )


@dataclass(frozen=True)
class ViolationDetail:
    action: str
    violator_role: str
    victim_role: str
    violator_emotion: str
    victim_emotion: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "violator_role": self.violator_role,
            "victim_role": self.victim_role,
            "violator_emotion": self.violator_emotion,
            "victim_emotion": self.victim_emotion,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ViolationDetail":
        return cls(
            action=d["action"],
            violator_role=d["violator_role"],
            victim_role=d["victim_role"],
            violator_emotion=d["violator_emotion"],
            victim_emotion=d["victim_emotion"],
        )


@dataclass(frozen=True)
class SymbolicGrounding:
    """Symbolic annotation of one description-concept pair in a conversation.

    A ``no_match`` compatibility short-circuits everything below it: relevance,
    roles, violation status and the violation block are all absent. The
    violation block is present exactly when violation_status is "violate".
    """

    description_id: str
    concept_id: str
    compatibility: str  # "match" | "no_match"
    relevance: Optional[str] = None  # "relevant" | "irrelevant"
    enactor_role: Optional[str] = None
    acceptor_role: Optional[str] = None
    violation_status: Optional[str] = None  # "adhere" | "violate"
    violation: Optional[ViolationDetail] = None
    justifications: Mapping[str, str] = field(default_factory=dict)
    discarded: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "description_id": self.description_id,
            "concept_id": self.concept_id,
            "compatibility": self.compatibility,
            "relevance": self.relevance,
            "enactor_role": self.enactor_role,
            "acceptor_role": self.acceptor_role,
            "violation_status": self.violation_status,
            "violation": self.violation.to_dict() if self.violation else None,
            "justifications": dict(self.justifications),
            "discarded": self.discarded,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SymbolicGrounding":
        violation = d.get("violation")
        return cls(
            description_id=d["description_id"],
            concept_id=d["concept_id"],
            compatibility=d["compatibility"],
            relevance=d.get("relevance"),
            enactor_role=d.get("enactor_role"),
            acceptor_role=d.get("acceptor_role"),
            violation_status=d.get("violation_status"),
            violation=ViolationDetail.from_dict(violation) if violation else None,
            justifications=dict(d.get("justifications") or {}),
            discarded=bool(d.get("discarded", False)),
        )


@dataclass(frozen=True)
class HumanJudgment:
    target_id: str
    annotator_id: str
    aspect: str
    verdict: str  # "yes" | "no"
    likert: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "target_id": self.target_id,
            "annotator_id": self.annotator_id,
            "aspect": self.aspect,
            "verdict": self.verdict,
            "likert": self.likert,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "HumanJudgment":
        likert = d.get("likert")
        return cls(
            target_id=d["target_id"],
            annotator_id=d["annotator_id"],
            aspect=d["aspect"],
            verdict=d["verdict"],
            likert=int(likert) if likert is not None else None,
        )


@dataclass(frozen=True)
class InvariantViolation:
    """One broken invariant found in a project snapshot."""

    target_id: str
    rule: str
    message: str


def _check_conversation(conv: Conversation, out: list[InvariantViolation]) -> None:
    if not conv.turns:
        out.append(InvariantViolation(conv.id, "turns non-empty", "conversation has no turns"))
        return
    for i, turn in enumerate(conv.turns):
        if turn.index != i:
            out.append(
                InvariantViolation(
                    conv.id,
                    "turn indices contiguous",
                    f"turn at position {i} has index {turn.index}",
                )
            )
            break
    speakers = conv.speakers()
    for turn in conv.turns:
        if not turn.text:
            out.append(
                InvariantViolation(conv.id, "turn text non-empty", f"turn {turn.index} empty")
            )
        for task in turn.labels:
            if task not in LABEL_TASKS:
                out.append(
                    InvariantViolation(
                        conv.id, "unknown label task", f"turn {turn.index} labeled for {task!r}"
                    )
                )
    for rel in conv.relationships:
        if rel.speaker_a == rel.speaker_b:
            out.append(
                InvariantViolation(
                    conv.id, "relationship endpoints distinct", f"{rel.speaker_a!r} twice"
                )
            )
        for endpoint in (rel.speaker_a, rel.speaker_b):
            if endpoint not in speakers:
                out.append(
                    InvariantViolation(
                        conv.id,
                        "relationship endpoint unknown",
                        f"{endpoint!r} does not speak in the conversation",
                    )
                )
    if conv.settings is not None:
        if conv.settings.field is not None and not conv.settings.field:
            out.append(InvariantViolation(conv.id, "settings field empty", "field set but blank"))
        for attr in conv.settings.attributes:
            if attr not in conv.settings.provenance:
                out.append(
                    InvariantViolation(
                        conv.id,
                        "settings attribute provenance missing",
                        f"attribute {attr!r} has no provenance",
                    )
                )


def _check_description(
    desc: NormDescription,
    descriptions: Mapping[str, NormDescription],
    conversations: Mapping[str, Conversation],
    out: list[InvariantViolation],
) -> None:
    if desc.kind not in DESCRIPTION_KINDS:
        out.append(InvariantViolation(desc.id, "unknown description kind", desc.kind))
    if desc.conversation_id not in conversations:
        out.append(
            InvariantViolation(
                desc.id, "description conversation missing", desc.conversation_id
            )
        )
    if desc.kind == KIND_EFFECT:
        if desc.parent_id is None:
            out.append(
                InvariantViolation(desc.id, "effect parent required", "effect has no parent_id")
            )
        else:
            parent = descriptions.get(desc.parent_id)
            if parent is None:
                out.append(InvariantViolation(desc.id, "effect parent missing", desc.parent_id))
            elif parent.kind != KIND_VIOLATION:
                out.append(
                    InvariantViolation(
                        desc.id,
                        "effect parent must be violation",
                        f"parent {parent.id} has kind {parent.kind}",
                    )
                )
    elif desc.parent_id is not None:
        out.append(
            InvariantViolation(desc.id, "parent only for effects", f"kind {desc.kind}")
        )
    if desc.status not in (_STATUS_RANK.keys() | {STATUS_DISCARDED}):
        out.append(InvariantViolation(desc.id, "unknown status", desc.status))


def _check_concepts(
    concepts: Mapping[str, NormConcept],
    descriptions: Mapping[str, NormDescription],
    out: list[InvariantViolation],
) -> None:
    names_seen: dict[str, str] = {}
    for concept in concepts.values():
        if not 5 <= len(concept.seed_ids) <= 10:
            out.append(
                InvariantViolation(
                    concept.id, "seed count out of range", f"{len(concept.seed_ids)} seeds"
                )
            )
        sets = {"seed": set(concept.seed_ids), "good": set(concept.good_ids), "bad": set(concept.bad_ids)}
        for (name_a, a), (name_b, b) in (
            (("seed", sets["seed"]), ("good", sets["good"])),
            (("seed", sets["seed"]), ("bad", sets["bad"])),
            (("good", sets["good"]), ("bad", sets["bad"])),
        ):
            overlap = a & b
            if overlap:
                out.append(
                    InvariantViolation(
                        concept.id,
                        "concept example sets overlap",
                        f"{name_a}/{name_b} share {sorted(overlap)}",
                    )
                )
        for did in (*concept.seed_ids, *concept.good_ids, *concept.bad_ids):
            if did not in descriptions:
                out.append(
                    InvariantViolation(
                        concept.id, "concept references unknown description", did
                    )
                )
        prior = names_seen.get(concept.name)
        if prior is not None:
            out.append(
                InvariantViolation(
                    concept.id, "concept name duplicate", f"name also used by {prior}"
                )
            )
        names_seen.setdefault(concept.name, concept.id)


def _check_assignments(
    assignments: Iterable[ConceptAssignment],
    descriptions: Mapping[str, NormDescription],
    concepts: Mapping[str, NormConcept],
    out: list[InvariantViolation],
) -> None:
    active_seen: set[str] = set()
    for a in assignments:
        if a.description_id not in descriptions:
            out.append(
                InvariantViolation(a.description_id, "assignment unknown description", a.concept_id)
            )
        if a.concept_id not in concepts:
            out.append(
                InvariantViolation(a.description_id, "assignment unknown concept", a.concept_id)
            )
        if not -1.0 <= a.score <= 1.0 + 1e-9:
            out.append(
                InvariantViolation(a.description_id, "assignment score out of range", str(a.score))
            )
        if a.active:
            if a.description_id in active_seen:
                out.append(
                    InvariantViolation(
                        a.description_id, "many-to-one violated", "multiple active assignments"
                    )
                )
            active_seen.add(a.description_id)


def _check_embeddings(
    embeddings: Mapping[str, EmbeddingRecord], out: list[InvariantViolation]
) -> None:
    length: Optional[int] = None
    tag: Optional[str] = None
    for rec in embeddings.values():
        if length is None:
            length, tag = len(rec.vector), rec.model_tag
            continue
        if len(rec.vector) != length:
            out.append(
                InvariantViolation(
                    rec.target_id, "embedding length mismatch", f"{len(rec.vector)} != {length}"
                )
            )
        if rec.model_tag != tag:
            out.append(
                InvariantViolation(
                    rec.target_id, "embedding model mismatch", f"{rec.model_tag} != {tag}"
                )
            )
    for rec in embeddings.values():
        if rec.normalized:
            norm = math.sqrt(sum(x * x for x in rec.vector))
            if abs(norm - 1.0) > 1e-6:
                out.append(
                    InvariantViolation(rec.target_id, "embedding not normalized", f"norm {norm}")
                )


def _check_grounding(
    g: SymbolicGrounding,
    conversations: Mapping[str, Conversation],
    descriptions: Mapping[str, NormDescription],
    out: list[InvariantViolation],
) -> None:
    gid = g.description_id
    if g.compatibility == "no_match":
        extra = [
            name
            for name, value in (
                ("relevance", g.relevance),
                ("enactor_role", g.enactor_role),
                ("acceptor_role", g.acceptor_role),
                ("violation_status", g.violation_status),
                ("violation", g.violation),
            )
            if value is not None
        ]
        if extra:
            out.append(
                InvariantViolation(gid, "fields present despite no_match", ", ".join(extra))
            )
        return
    missing = [
        name
        for name, value in (
            ("relevance", g.relevance),
            ("enactor_role", g.enactor_role),
            ("acceptor_role", g.acceptor_role),
            ("violation_status", g.violation_status),
        )
        if value is None
    ]
    if missing:
        out.append(InvariantViolation(gid, "missing fields for match", ", ".join(missing)))
    if g.violation_status == "violate" and g.violation is None:
        out.append(InvariantViolation(gid, "missing violation block", "status violate"))
    if g.violation_status != "violate" and g.violation is not None:
        out.append(InvariantViolation(gid, "contradictory violation block", "status adhere"))
    if g.violation is not None:
        for emo in (g.violation.violator_emotion, g.violation.victim_emotion):
            if emo not in EMOTIONS:
                out.append(InvariantViolation(gid, "unknown emotion", emo))
        desc = descriptions.get(g.description_id)
        conv = conversations.get(desc.conversation_id) if desc else None
        if conv is not None:
            speakers = {s.lower() for s in conv.speakers()}
            for role in (g.violation.violator_role, g.violation.victim_role):
                if role.lower() in speakers:
                    out.append(InvariantViolation(gid, "role must not be a name", role))
    desc = descriptions.get(g.description_id)
    conv = conversations.get(desc.conversation_id) if desc else None
    if conv is not None:
        speakers = {s.lower() for s in conv.speakers()}
        for role in (g.enactor_role, g.acceptor_role):
            if role and role.lower() in speakers:
                out.append(InvariantViolation(gid, "role must not be a name", role))


def _check_judgment(j: HumanJudgment, out: list[InvariantViolation]) -> None:
    if j.aspect not in ASPECTS:
        out.append(InvariantViolation(j.target_id, "unknown judgment aspect", j.aspect))
    if j.verdict not in ("yes", "no"):
        out.append(InvariantViolation(j.target_id, "unknown judgment verdict", j.verdict))
    if j.likert is not None:
        if j.aspect != "relevance":
            out.append(
                InvariantViolation(j.target_id, "likert only for relevance", j.aspect)
            )
        if not 1 <= j.likert <= 5:
            out.append(InvariantViolation(j.target_id, "likert out of range", str(j.likert)))


def validate_project(snapshot: Any) -> list[InvariantViolation]:
    """Report every broken invariant in a project snapshot.

    ``snapshot`` is duck-typed: anything exposing ``conversations``,
    ``descriptions``, ``concepts`` (id-keyed mappings), ``assignments``
    (iterable), ``embeddings`` (id-keyed), ``groundings`` (iterable) and
    ``judgments`` (iterable). Returns an empty list iff the store is
    consistent.
    """
    out: list[InvariantViolation] = []
    conversations: Mapping[str, Conversation] = snapshot.conversations
    descriptions: Mapping[str, NormDescription] = snapshot.descriptions
    concepts: Mapping[str, NormConcept] = snapshot.concepts

    for conv in conversations.values():
        _check_conversation(conv, out)
    for desc in descriptions.values():
        _check_description(desc, descriptions, conversations, out)
    _check_concepts(concepts, descriptions, out)
    _check_assignments(snapshot.assignments, descriptions, concepts, out)
    _check_embeddings(snapshot.embeddings, out)
    for g in snapshot.groundings:
        _check_grounding(g, conversations, descriptions, out)
    for j in snapshot.judgments:
        _check_judgment(j, out)
    return out
