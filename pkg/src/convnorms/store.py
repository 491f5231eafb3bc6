"""Event-sourced project store.

All mutation flows through an append-only event log; the in-memory
``ProjectState`` is a deterministic fold of that log, so replaying the log
reproduces the latest snapshot byte-for-byte. Events are validated against
the schema invariants before they are accepted; a rejected event names the
invariant it would break and leaves the store untouched.

On disk a project is a directory holding ``events.jsonl`` plus optional
``snapshots/v{N}.json`` files and export artifacts. A single writer owns the
log; readers work from immutable snapshots.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterator, Optional

from . import schema
from .schema import (
    ConceptAssignment,
    Conversation,
    EmbeddingRecord,
    HumanJudgment,
    InvariantViolation,
    NormConcept,
    NormDescription,
    Relationship,
    SettingsRecord,
    SymbolicGrounding,
)


class InvariantError(Exception):
    """An event was rejected; ``rule`` names the invariant it violates."""

    def __init__(self, rule: str, message: str = ""):
        super().__init__(f"{rule}: {message}" if message else rule)
        self.rule = rule


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def new_id() -> str:
    return uuid.uuid4().hex


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload}


class ProjectState:
    """Mutable fold target. Treat instances as read-only outside this module."""

    def __init__(self) -> None:
        self.conversations: dict[str, Conversation] = {}
        self.descriptions: dict[str, NormDescription] = {}
        self.concepts: dict[str, NormConcept] = {}  # insertion order = creation order
        self.assignments: list[ConceptAssignment] = []
        self.embeddings: dict[str, EmbeddingRecord] = {}
        self.groundings: list[SymbolicGrounding] = []
        self.judgments: list[HumanJudgment] = []
        self.verdicts: dict[str, dict[str, Any]] = {}  # key: target|aspect|workflow
        self.rubrics: dict[str, dict[str, Any]] = {}
        self.transcripts: dict[str, dict[str, Any]] = {}  # key: conversation|run
        self.clusters: dict[int, list[dict[str, Any]]] = {}
        self.round: int = 0
        self.marks_dirty: bool = False
        self.errors: list[dict[str, Any]] = []
        self._active: dict[str, int] = {}  # description_id -> index into assignments

    # -- derived views --

    def active_assignment(self, description_id: str) -> Optional[ConceptAssignment]:
        idx = self._active.get(description_id)
        return self.assignments[idx] if idx is not None else None

    def active_assignments(self) -> dict[str, ConceptAssignment]:
        return {did: self.assignments[i] for did, i in self._active.items()}

    def norm_ids(self, include_discarded: bool = False) -> list[str]:
        return [
            d.id
            for d in self.descriptions.values()
            if d.kind == schema.KIND_NORM
            and (include_discarded or d.status != schema.STATUS_DISCARDED)
        ]

    def unmapped_norm_ids(self) -> list[str]:
        return [did for did in self.norm_ids() if did not in self._active]

    def concept_order(self) -> list[NormConcept]:
        return list(self.concepts.values())

    def grounding_for(self, description_id: str, concept_id: str) -> Optional[SymbolicGrounding]:
        for g in self.groundings:
            if g.description_id == description_id and g.concept_id == concept_id:
                return g
        return None

    def flagged_for_review(self) -> list[dict[str, str]]:
        """Assignments whose grounding reported no_match or irrelevant.

        Grounding never mutates assignments; these flags are the handoff to
        the verification module, which owns retain/discard.
        """
        flags = []
        for g in self.groundings:
            if g.compatibility == "no_match":
                flags.append(
                    {"description_id": g.description_id, "concept_id": g.concept_id, "reason": "no_match"}
                )
            elif g.relevance == "irrelevant":
                flags.append(
                    {"description_id": g.description_id, "concept_id": g.concept_id, "reason": "irrelevant"}
                )
        return flags

    def to_dict(self) -> dict[str, Any]:
        return {
            "conversations": {cid: c.to_dict() for cid, c in self.conversations.items()},
            "descriptions": {did: d.to_dict() for did, d in self.descriptions.items()},
            "concepts": {cid: c.to_dict() for cid, c in self.concepts.items()},
            "assignments": [a.to_dict() for a in self.assignments],
            "embeddings": {tid: e.to_dict() for tid, e in self.embeddings.items()},
            "groundings": [g.to_dict() for g in self.groundings],
            "judgments": [j.to_dict() for j in self.judgments],
            "verdicts": self.verdicts,
            "rubrics": self.rubrics,
            "transcripts": self.transcripts,
            "clusters": {str(k): v for k, v in self.clusters.items()},
            "round": self.round,
            "marks_dirty": self.marks_dirty,
            "errors": self.errors,
        }

    def canonical_json(self) -> str:
        return canonical_json(self.to_dict())


def _verdict_key(target_id: str, aspect: str, workflow: str) -> str:
    return f"{target_id}|{aspect}|{workflow}"


def _transcript_key(conversation_id: str, run_id: str) -> str:
    return f"{conversation_id}|{run_id}"


def _raise_first(violations: list[InvariantViolation]) -> None:
    if violations:
        v = violations[0]
        raise InvariantError(v.rule, f"{v.target_id}: {v.message}")


# ---------------------------------------------------------------------------
# Per-kind validation. Each validator inspects the payload against the
# current state and raises InvariantError naming the broken rule. Returning
# False marks the event as a no-op duplicate that should not be appended.


def _validate_conversation_added(state: ProjectState, payload: dict) -> bool:
    conv = Conversation.from_dict(payload["conversation"])
    existing = state.conversations.get(conv.id)
    if existing is not None:
        if existing.to_dict() == conv.to_dict():
            return False
        raise InvariantError("conversation id duplicate", conv.id)
    out: list[InvariantViolation] = []
    schema._check_conversation(conv, out)
    _raise_first(out)
    return True


def _apply_conversation_added(state: ProjectState, payload: dict) -> None:
    conv = Conversation.from_dict(payload["conversation"])
    state.conversations[conv.id] = conv


def _validate_fields_filled(state: ProjectState, payload: dict) -> bool:
    conv = state.conversations.get(payload["conversation_id"])
    if conv is None:
        raise InvariantError("conversation missing", payload["conversation_id"])
    if "relationships" in payload and conv.relationships:
        raise InvariantError("field already present", "relationships")
    if "settings" in payload and conv.settings is not None:
        raise InvariantError("field already present", "settings")
    if "summary" in payload and conv.summary is not None:
        raise InvariantError("field already present", "summary")
    if "relationships" in payload:
        rels = [Relationship.from_dict(r) for r in payload["relationships"]]
        speakers = conv.speakers()
        for rel in rels:
            if rel.provenance != schema.PROVIDER_FILLED:
                raise InvariantError("filled field must be provider_filled", rel.relation)
            if rel.speaker_a == rel.speaker_b:
                raise InvariantError("relationship endpoints distinct", rel.speaker_a)
            if rel.speaker_a not in speakers or rel.speaker_b not in speakers:
                raise InvariantError(
                    "relationship endpoint unknown", f"{rel.speaker_a}/{rel.speaker_b}"
                )
    if "settings" in payload:
        settings = SettingsRecord.from_dict(payload["settings"])
        for attr in settings.attributes:
            if settings.provenance.get(attr) != schema.PROVIDER_FILLED:
                raise InvariantError("filled field must be provider_filled", attr)
    return True


def _apply_fields_filled(state: ProjectState, payload: dict) -> None:
    conv = state.conversations[payload["conversation_id"]]
    updates: dict[str, Any] = {}
    if "relationships" in payload:
        updates["relationships"] = tuple(
            Relationship.from_dict(r) for r in payload["relationships"]
        )
    if "settings" in payload:
        updates["settings"] = SettingsRecord.from_dict(payload["settings"])
    if "summary" in payload:
        updates["summary"] = payload["summary"]
        updates["summary_provenance"] = schema.PROVIDER_FILLED
    state.conversations[conv.id] = replace(conv, **updates)


def _validate_description_added(state: ProjectState, payload: dict) -> bool:
    desc = NormDescription.from_dict(payload["description"])
    existing = state.descriptions.get(desc.id)
    if existing is not None:
        if existing.to_dict() == desc.to_dict():
            return False
        raise InvariantError("description id duplicate", desc.id)
    out: list[InvariantViolation] = []
    schema._check_description(desc, state.descriptions, state.conversations, out)
    _raise_first(out)
    return True


def _apply_description_added(state: ProjectState, payload: dict) -> None:
    desc = NormDescription.from_dict(payload["description"])
    state.descriptions[desc.id] = desc


def _validate_embedding_added(state: ProjectState, payload: dict) -> bool:
    rec = EmbeddingRecord.from_dict(payload["embedding"])
    if rec.target_id not in state.descriptions:
        raise InvariantError("embedding target missing", rec.target_id)
    existing = state.embeddings.get(rec.target_id)
    if existing is not None:
        if existing.to_dict() == rec.to_dict():
            return False
        raise InvariantError("embedding already present", rec.target_id)
    probe = dict(state.embeddings)
    probe[rec.target_id] = rec
    out: list[InvariantViolation] = []
    schema._check_embeddings(probe, out)
    _raise_first(out)
    return True


def _apply_embedding_added(state: ProjectState, payload: dict) -> None:
    rec = EmbeddingRecord.from_dict(payload["embedding"])
    state.embeddings[rec.target_id] = rec


def _validate_transcript_recorded(state: ProjectState, payload: dict) -> bool:
    if payload["conversation_id"] not in state.conversations:
        raise InvariantError("conversation missing", payload["conversation_id"])
    key = _transcript_key(payload["conversation_id"], payload["run_id"])
    existing = state.transcripts.get(key)
    if existing is not None:
        if existing == payload:
            return False
        raise InvariantError("transcript already recorded", key)
    return True


def _apply_transcript_recorded(state: ProjectState, payload: dict) -> None:
    key = _transcript_key(payload["conversation_id"], payload["run_id"])
    state.transcripts[key] = payload


def _validate_concept_created(state: ProjectState, payload: dict) -> bool:
    concept = NormConcept.from_dict(payload["concept"])
    if concept.id in state.concepts:
        raise InvariantError("concept id duplicate", concept.id)
    for other in state.concepts.values():
        if other.name == concept.name:
            raise InvariantError("concept name duplicate", concept.name)
    if not 5 <= len(concept.seed_ids) <= 10:
        raise InvariantError("seed count out of range", f"{len(concept.seed_ids)} seeds")
    if len(set(concept.seed_ids)) != len(concept.seed_ids):
        raise InvariantError("seed ids duplicated", concept.id)
    for did in concept.seed_ids:
        desc = state.descriptions.get(did)
        if desc is None:
            raise InvariantError("concept references unknown description", did)
        if desc.kind != schema.KIND_NORM:
            raise InvariantError("seed must be a norm description", did)
        current = state.active_assignment(did)
        if current is not None:
            owner = state.concepts[current.concept_id]
            raise InvariantError(
                "seed already assigned", f"{did} belongs to concept {owner.name!r}"
            )
    return True


def _apply_concept_created(state: ProjectState, payload: dict) -> None:
    concept = NormConcept.from_dict(payload["concept"])
    state.concepts[concept.id] = concept
    for did in concept.seed_ids:
        state.assignments.append(
            ConceptAssignment(
                description_id=did,
                concept_id=concept.id,
                provenance=schema.PROVENANCE_HUMAN_SEED,
                score=1.0,
                iteration=concept.iteration,
                active=True,
            )
        )
        state._active[did] = len(state.assignments) - 1


def _validate_marks_recorded(state: ProjectState, payload: dict) -> bool:
    concept = state.concepts.get(payload["concept_id"])
    if concept is None:
        raise InvariantError("concept missing", payload["concept_id"])
    good = list(payload.get("good") or [])
    bad = list(payload.get("bad") or [])
    if not good and not bad:
        return False
    overlap = set(good) & set(bad)
    if overlap:
        raise InvariantError("concept example sets overlap", f"good/bad share {sorted(overlap)}")
    seeds = set(concept.seed_ids)
    for did in (*good, *bad):
        if did not in state.descriptions:
            raise InvariantError("concept references unknown description", did)
        if did in seeds:
            raise InvariantError("concept example sets overlap", f"{did} is a seed")
    if set(good) & set(concept.bad_ids) or set(bad) & set(concept.good_ids):
        raise InvariantError("concept example sets overlap", "mark contradicts earlier mark")
    return True


def _apply_marks_recorded(state: ProjectState, payload: dict) -> None:
    concept = state.concepts[payload["concept_id"]]
    good = tuple(dict.fromkeys((*concept.good_ids, *(payload.get("good") or ()))))
    bad = tuple(dict.fromkeys((*concept.bad_ids, *(payload.get("bad") or ()))))
    state.concepts[concept.id] = replace(concept, good_ids=good, bad_ids=bad)
    state.marks_dirty = True


def _validate_round_clustered(state: ProjectState, payload: dict) -> bool:
    iteration = int(payload["iteration"])
    if iteration != state.round + 1:
        raise InvariantError("round out of order", f"{iteration} after {state.round}")
    unmapped = set(state.unmapped_norm_ids())
    seen: set[str] = set()
    for cluster in payload["clusters"]:
        for did in cluster["member_ids"]:
            if did not in unmapped:
                raise InvariantError("cluster member not unmapped", did)
            if did in seen:
                raise InvariantError("cluster membership overlap", did)
            seen.add(did)
    return True


def _apply_round_clustered(state: ProjectState, payload: dict) -> None:
    iteration = int(payload["iteration"])
    state.clusters[iteration] = list(payload["clusters"])
    state.round = iteration


def _validate_assignments_applied(state: ProjectState, payload: dict) -> bool:
    provenance = payload["provenance"]
    if provenance not in (schema.PROVENANCE_KNN, schema.PROVENANCE_REASSIGNED):
        raise InvariantError("unknown assignment provenance", provenance)
    assigned = payload.get("assigned") or []
    unassigned = payload.get("unassigned") or []
    if not assigned and not unassigned:
        return False
    touched: set[str] = set()
    for entry in assigned:
        did = entry["description_id"]
        if did in touched:
            raise InvariantError("many-to-one violated", did)
        touched.add(did)
        desc = state.descriptions.get(did)
        if desc is None:
            raise InvariantError("assignment unknown description", did)
        if desc.kind != schema.KIND_NORM:
            raise InvariantError("assignment target must be a norm description", did)
        if entry["concept_id"] not in state.concepts:
            raise InvariantError("assignment unknown concept", entry["concept_id"])
        if not -1.0 - 1e-9 <= float(entry["score"]) <= 1.0 + 1e-9:
            raise InvariantError("assignment score out of range", str(entry["score"]))
        current = state.active_assignment(did)
        if current is not None and current.provenance == schema.PROVENANCE_HUMAN_SEED:
            raise InvariantError("human_seed assignment immutable", did)
        if provenance == schema.PROVENANCE_KNN and current is not None:
            raise InvariantError("knn may not reassign", did)
    for did in unassigned:
        if did in touched:
            raise InvariantError("many-to-one violated", did)
        touched.add(did)
        current = state.active_assignment(did)
        if current is not None and current.provenance == schema.PROVENANCE_HUMAN_SEED:
            raise InvariantError("human_seed assignment immutable", did)
    return True


def _apply_assignments_applied(state: ProjectState, payload: dict) -> None:
    iteration = int(payload.get("iteration", state.round))
    provenance = payload["provenance"]

    def deactivate(did: str) -> None:
        idx = state._active.pop(did, None)
        if idx is not None:
            state.assignments[idx] = replace(state.assignments[idx], active=False)

    for entry in payload.get("assigned") or []:
        did = entry["description_id"]
        deactivate(did)
        state.assignments.append(
            ConceptAssignment(
                description_id=did,
                concept_id=entry["concept_id"],
                provenance=provenance,
                score=float(entry["score"]),
                iteration=iteration,
                active=True,
            )
        )
        state._active[did] = len(state.assignments) - 1
    for did in payload.get("unassigned") or []:
        deactivate(did)
    if provenance == schema.PROVENANCE_REASSIGNED:
        state.marks_dirty = False


def _validate_grounding_recorded(state: ProjectState, payload: dict) -> bool:
    g = SymbolicGrounding.from_dict(payload["grounding"])
    desc = state.descriptions.get(g.description_id)
    if desc is None:
        raise InvariantError("grounding unknown description", g.description_id)
    if g.concept_id not in state.concepts:
        raise InvariantError("grounding unknown concept", g.concept_id)
    current = state.active_assignment(g.description_id)
    if current is None or current.concept_id != g.concept_id:
        raise InvariantError(
            "grounding requires active assignment", f"{g.description_id} -> {g.concept_id}"
        )
    out: list[InvariantViolation] = []
    schema._check_grounding(g, state.conversations, state.descriptions, out)
    _raise_first(out)
    return True


def _apply_grounding_recorded(state: ProjectState, payload: dict) -> None:
    g = SymbolicGrounding.from_dict(payload["grounding"])
    for i, existing in enumerate(state.groundings):
        if existing.description_id == g.description_id and existing.concept_id == g.concept_id:
            state.groundings[i] = g
            return
    state.groundings.append(g)


def _validate_judgment_recorded(state: ProjectState, payload: dict) -> bool:
    j = HumanJudgment.from_dict(payload["judgment"])
    if j.target_id not in state.descriptions:
        raise InvariantError("judgment unknown target", j.target_id)
    out: list[InvariantViolation] = []
    schema._check_judgment(j, out)
    _raise_first(out)
    return True


def _apply_judgment_recorded(state: ProjectState, payload: dict) -> None:
    j = HumanJudgment.from_dict(payload["judgment"])
    for i, existing in enumerate(state.judgments):
        if (
            existing.target_id == j.target_id
            and existing.annotator_id == j.annotator_id
            and existing.aspect == j.aspect
        ):
            state.judgments[i] = j
            return
    state.judgments.append(j)


def _validate_rubric_saved(state: ProjectState, payload: dict) -> bool:
    if payload["aspect"] not in schema.ASPECTS:
        raise InvariantError("unknown judgment aspect", payload["aspect"])
    criteria = payload.get("criteria") or []
    if not criteria:
        raise InvariantError("no criteria", payload["aspect"])
    for c in criteria:
        if not c.get("accepted_values"):
            raise InvariantError("criterion without accepted values", c.get("name", "?"))
    return True


def _apply_rubric_saved(state: ProjectState, payload: dict) -> None:
    state.rubrics[payload["aspect"]] = payload


def _validate_verdict_recorded(state: ProjectState, payload: dict) -> bool:
    v = payload["verdict"]
    aspect, workflow, decision = v["aspect"], v["workflow"], v["decision"]
    target_id = v["target_id"]
    if aspect not in schema.ASPECTS:
        raise InvariantError("unknown judgment aspect", aspect)
    if workflow not in ("self", "multiagent"):
        raise InvariantError("unknown workflow", workflow)
    if decision not in ("retain", "discard"):
        raise InvariantError("unknown decision", decision)
    key = _verdict_key(target_id, aspect, workflow)
    if key in state.verdicts:
        if state.verdicts[key] == v:
            return False
        raise InvariantError("verdict already recorded", key)
    desc = state.descriptions.get(target_id)
    if desc is None:
        raise InvariantError("verdict unknown target", target_id)
    if workflow == "multiagent" and not v.get("scores"):
        raise InvariantError("multiagent verdict requires scores", target_id)
    if aspect == "relevance":
        new_status = _verdict_status(workflow, decision)
        if not schema.status_transition_ok(desc.status, new_status):
            raise InvariantError(
                "illegal status transition", f"{desc.status} -> {new_status}"
            )
    elif aspect == "mapping":
        current = state.active_assignment(target_id)
        if current is None:
            raise InvariantError("verdict target has no active assignment", target_id)
        if decision == "discard" and current.provenance == schema.PROVENANCE_HUMAN_SEED:
            raise InvariantError("human_seed assignment immutable", target_id)
    elif aspect == "violation":
        current = state.active_assignment(target_id)
        if current is None or state.grounding_for(target_id, current.concept_id) is None:
            raise InvariantError("verdict target has no grounding", target_id)
    return True


def _verdict_status(workflow: str, decision: str) -> str:
    if decision == "discard":
        return schema.STATUS_DISCARDED
    return schema.STATUS_SELF_VERIFIED if workflow == "self" else schema.STATUS_AGENT_VERIFIED


def _apply_verdict_recorded(state: ProjectState, payload: dict) -> None:
    v = payload["verdict"]
    aspect, workflow, decision = v["aspect"], v["workflow"], v["decision"]
    target_id = v["target_id"]
    state.verdicts[_verdict_key(target_id, aspect, workflow)] = v
    if aspect == "relevance":
        desc = state.descriptions[target_id]
        state.descriptions[target_id] = replace(
            desc, status=_verdict_status(workflow, decision)
        )
    elif aspect == "mapping" and decision == "discard":
        idx = state._active.pop(target_id, None)
        if idx is not None:
            state.assignments[idx] = replace(state.assignments[idx], active=False)
    elif aspect == "violation" and decision == "discard":
        current_idx = state._active.get(target_id)
        concept_id = state.assignments[current_idx].concept_id if current_idx is not None else None
        for i, g in enumerate(state.groundings):
            if g.description_id == target_id and g.concept_id == concept_id:
                state.groundings[i] = replace(g, discarded=True)
                break


def _validate_error_recorded(state: ProjectState, payload: dict) -> bool:
    return True


def _apply_error_recorded(state: ProjectState, payload: dict) -> None:
    state.errors.append(payload)


_HANDLERS = {
    "conversation_added": (_validate_conversation_added, _apply_conversation_added),
    "fields_filled": (_validate_fields_filled, _apply_fields_filled),
    "description_added": (_validate_description_added, _apply_description_added),
    "embedding_added": (_validate_embedding_added, _apply_embedding_added),
    "transcript_recorded": (_validate_transcript_recorded, _apply_transcript_recorded),
    "concept_created": (_validate_concept_created, _apply_concept_created),
    "marks_recorded": (_validate_marks_recorded, _apply_marks_recorded),
    "round_clustered": (_validate_round_clustered, _apply_round_clustered),
    "assignments_applied": (_validate_assignments_applied, _apply_assignments_applied),
    "grounding_recorded": (_validate_grounding_recorded, _apply_grounding_recorded),
    "judgment_recorded": (_validate_judgment_recorded, _apply_judgment_recorded),
    "rubric_saved": (_validate_rubric_saved, _apply_rubric_saved),
    "verdict_recorded": (_validate_verdict_recorded, _apply_verdict_recorded),
    "error_recorded": (_validate_error_recorded, _apply_error_recorded),
}

EVENT_KINDS = tuple(_HANDLERS)


class ProjectStore:
    """Append-only project store with a disk-backed or in-memory log."""

    def __init__(self, root: Optional[str | Path] = None):
        self.root = Path(root) if root is not None else None
        self.events: list[Event] = []
        self.state = ProjectState()
        self._lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._log_path = self.root / "events.jsonl"
            if self._log_path.exists():
                self._load()
        else:
            self._log_path = None

    # -- log lifecycle --

    def _load(self) -> None:
        with open(self._log_path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                raw = json.loads(line)
                event = Event(seq=raw["seq"], kind=raw["kind"], payload=raw["payload"])
                if event.seq != len(self.events) + 1:
                    raise InvariantError(
                        "event log corrupt", f"line {line_no}: seq {event.seq}"
                    )
                self._fold(event)

    def _fold(self, event: Event) -> None:
        _validate, apply = _HANDLERS[event.kind]
        apply(self.state, event.payload)
        self.events.append(event)

    @property
    def version(self) -> int:
        return len(self.events)

    def append(self, kind: str, payload: dict[str, Any]) -> int:
        """Validate and append one event. Returns the new version.

        A rejected event raises InvariantError and leaves the store
        untouched; an exact-duplicate event is a no-op returning the current
        version.
        """
        if kind not in _HANDLERS:
            raise InvariantError("unknown event kind", kind)
        with self._lock:
            validate, apply = _HANDLERS[kind]
            if not validate(self.state, payload):
                return self.version
            event = Event(seq=self.version + 1, kind=kind, payload=payload)
            if self._log_path is not None:
                with open(self._log_path, "a", encoding="utf-8") as fh:
                    fh.write(canonical_json(event.to_dict()) + "\n")
                    fh.flush()
            apply(self.state, event.payload)
            self.events.append(event)
            return self.version

    def append_all(self, events: list[tuple[str, dict[str, Any]]]) -> int:
        for kind, payload in events:
            self.append(kind, payload)
        return self.version

    # -- snapshots --

    def snapshot(self, version: Optional[int] = None) -> ProjectState:
        """Fold the log up to ``version`` (default: all events)."""
        if version is None:
            version = self.version
        if not 0 <= version <= self.version:
            raise InvariantError("unknown version", str(version))
        state = ProjectState()
        for event in self.events[:version]:
            _validate, apply = _HANDLERS[event.kind]
            apply(state, event.payload)
        return state

    def fork(self) -> "ProjectStore":
        """In-memory copy used for dry runs and what-if computation."""
        twin = ProjectStore(root=None)
        for event in self.events:
            twin._fold(event)
        return twin

    def save_snapshot(self) -> Path:
        if self.root is None:
            raise InvariantError("in-memory store has no disk root")
        snap_dir = self.root / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        path = snap_dir / f"v{self.version}.json"
        payload = {"version": self.version, "state": self.state.to_dict()}
        path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
        return path

    def validate(self) -> list[InvariantViolation]:
        return schema.validate_project(self.state)

    def iter_events(self) -> Iterator[Event]:
        return iter(self.events)
