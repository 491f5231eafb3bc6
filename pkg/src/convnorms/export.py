"""Schema graph export and stage accounting.

The graph has a factual segment (conversation, turn, relationship, settings,
summary nodes) and a cultural segment (norm, violation, effect, concept
nodes). Every edge is emitted as two directed records; concept nodes are
shared across conversations. Discarded items are excluded, and an effect
whose parent violation is excluded is excluded with it.

Output is line-delimited JSON with sorted keys, one node or edge per line,
so exports diff cleanly across project versions.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable

from . import schema
from .store import ProjectState, canonical_json


class ExportError(Exception):
    pass


def _node(node_type: str, node_id: str, attrs: dict) -> dict:
    return {"kind": "node", "node_type": node_type, "id": node_id, "attrs": attrs}


def _edges(edge_type: str, a: str, b: str) -> list[dict]:
    return [
        {"kind": "edge", "edge_type": edge_type, "src": a, "dst": b},
        {"kind": "edge", "edge_type": edge_type, "src": b, "dst": a},
    ]


def export_graph(state: ProjectState) -> list[dict]:
    """Build the node/edge record stream for a consistent project.

    Raises ExportError naming the edge if any endpoint would dangle.
    """
    records: list[dict] = []
    node_ids: set[str] = set()
    edges: list[dict] = []

    def add_node(node_type: str, node_id: str, attrs: dict) -> None:
        records.append(_node(node_type, node_id, attrs))
        node_ids.add(node_id)

    for conv in state.conversations.values():
        cid = f"conversation:{conv.id}"
        add_node(
            "conversation",
            cid,
            {"source": conv.source, "language": conv.language, "turns": len(conv.turns)},
        )
        for turn in conv.turns:
            tid = f"turn:{conv.id}:{turn.index}"
            add_node(
                "turn",
                tid,
                {"speaker": turn.speaker, "text": turn.text, "labels": dict(turn.labels)},
            )
            edges.extend(_edges("has_turn", cid, tid))
        for i, rel in enumerate(conv.relationships):
            rid = f"relationship:{conv.id}:{i}"
            add_node(
                "relationship",
                rid,
                {
                    "speaker_a": rel.speaker_a,
                    "speaker_b": rel.speaker_b,
                    "relation": rel.relation,
                    "provenance": rel.provenance,
                },
            )
            edges.extend(_edges("has_relationship", cid, rid))
        if conv.settings is not None:
            sid = f"settings:{conv.id}"
            add_node("settings", sid, conv.settings.to_dict())
            edges.extend(_edges("has_settings", cid, sid))
        if conv.summary is not None:
            mid = f"summary:{conv.id}"
            add_node(
                "summary", mid, {"text": conv.summary, "provenance": conv.summary_provenance}
            )
            edges.extend(_edges("has_summary", cid, mid))

    included: set[str] = set()
    for desc in state.descriptions.values():
        if desc.status == schema.STATUS_DISCARDED:
            continue
        if desc.kind == schema.KIND_EFFECT:
            continue  # handled after violations so parent exclusion cascades
        included.add(desc.id)
        add_node(
            desc.kind,
            f"description:{desc.id}",
            {"title": desc.title, "body": desc.body, "status": desc.status},
        )
        edges.extend(_edges("describes", f"description:{desc.id}", f"conversation:{desc.conversation_id}"))
    for desc in state.descriptions.values():
        if desc.kind != schema.KIND_EFFECT or desc.status == schema.STATUS_DISCARDED:
            continue
        if desc.parent_id not in included:
            continue  # parent violation discarded; drop the effect with it
        included.add(desc.id)
        add_node(
            desc.kind,
            f"description:{desc.id}",
            {"title": desc.title, "body": desc.body, "status": desc.status},
        )
        edges.extend(_edges("effect_of", f"description:{desc.id}", f"description:{desc.parent_id}"))

    # Concept nodes are shared: one node regardless of how many conversations
    # its assigned descriptions come from.
    for concept in state.concepts.values():
        kid = f"concept:{concept.id}"
        add_node(
            "concept",
            kid,
            {
                "name": concept.name,
                "description": concept.description,
                "settings": list(concept.settings),
                "violation_sketch": concept.violation_sketch,
                "actor_roles": concept.actor_roles,
                "recipient_roles": concept.recipient_roles,
            },
        )
    for did, assignment in state.active_assignments().items():
        if did not in included:
            continue
        edges.extend(
            _edges("assigned_to", f"description:{did}", f"concept:{assignment.concept_id}")
        )

    for edge in edges:
        for endpoint in (edge["src"], edge["dst"]):
            if endpoint not in node_ids:
                raise ExportError(
                    f"dangling edge {edge['edge_type']}: {edge['src']} -> {edge['dst']}"
                )
    records.extend(edges)
    return records


def write_graph(state: ProjectState, path: str | Path, version: int) -> int:
    """Write the export as JSONL tagged with the project version it came
    from. Returns the record count."""
    records = export_graph(state)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json({"kind": "header", "project_version": version}) + "\n")
        for record in records:
            fh.write(canonical_json(record) + "\n")
    return len(records)


def stage_accounting(state: ProjectState) -> dict:
    """Per-corpus pipeline accounting: descriptions by kind and status,
    concepts, active assignments by provenance, groundings, verdicts."""
    per_source: dict[str, dict] = {}
    source_of = {cid: conv.source for cid, conv in state.conversations.items()}
    for source in sorted(set(source_of.values())):
        per_source[source] = {
            "conversations": sum(1 for s in source_of.values() if s == source),
            "descriptions": {
                kind: {"total": 0, "by_status": defaultdict(int)}
                for kind in schema.DESCRIPTION_KINDS
            },
        }
    for desc in state.descriptions.values():
        source = source_of.get(desc.conversation_id)
        if source is None:
            continue
        cell = per_source[source]["descriptions"][desc.kind]
        cell["total"] += 1
        cell["by_status"][desc.status] += 1
    for source in per_source:
        for kind in schema.DESCRIPTION_KINDS:
            cell = per_source[source]["descriptions"][kind]
            cell["by_status"] = dict(cell["by_status"])

    assignments = Counter(a.provenance for a in state.active_assignments().values())
    verdicts = Counter(v["workflow"] for v in state.verdicts.values())
    return {
        "per_source": per_source,
        "concepts": len(state.concepts),
        "assignments": dict(assignments),
        "groundings": sum(1 for g in state.groundings if not g.discarded),
        "verdicts": dict(verdicts),
    }
