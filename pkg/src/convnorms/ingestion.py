"""Corpus loaders and provider-backed field filling.

Three corpus-specific adapters (MPDD-shaped JSON, CPED-shaped CSV, a
directory of per-conversation JSON files) plus the canonical JSONL format
feed one internal representation. Loading is forgiving per record (malformed
records are reported with their line or key and skipped) but strict overall:
a corpus that yields zero conversations is a hard failure.

Field filling asks the chat provider for relationships, settings metadata,
or a summary, never touching fields that already carry gold provenance.
"""

from __future__ import annotations

import csv
import json
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import providers, schema
from .providers import ChatMessage, ChatProvider, ProviderError
from .schema import Conversation, Relationship, SettingsRecord, Turn
from .store import canonical_json

FORMATS = ("mpdd_json", "cped_csv", "ldc_dir", "generic_jsonl")

SUMMARY_PROMPT = "Summarize the conversation in 3-4 sentences."
RELATIONSHIPS_PROMPT = (
    "List the people mentioned in the conversation and the social relationships "
    "between them. Format each as 'Name: Name — relation', one per line."
)
SETTINGS_PROMPT = (
    "Describe the setting of the conversation. Answer with one 'Key: value' line "
    "per item, starting with 'Field: <scene such as family, workplace, hospital>' "
    "and then attributes such as age group, speaker count, and familiarity."
)


class CorpusLoadError(Exception):
    """Raised when a corpus yields no conversations at all."""


@dataclass(frozen=True)
class LoadError:
    location: str  # line number, file, or record key
    message: str


@dataclass
class LoadResult:
    conversations: list[Conversation]
    errors: list[LoadError] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.conversations)


def load_corpus(path: str | Path, format: str) -> LoadResult:
    """Load a corpus file or directory into Conversation records.

    Turn order is preserved and gold labels are carried into ``Turn.labels``.
    Raises CorpusLoadError if nothing parses; per-record problems land in
    ``result.errors`` and loading continues.
    """
    path = Path(path)
    if format == "mpdd_json":
        result = _load_mpdd(path)
    elif format == "cped_csv":
        result = _load_cped(path)
    elif format == "ldc_dir":
        result = _load_ldc(path)
    elif format == "generic_jsonl":
        result = _load_jsonl(path)
    else:
        raise ValueError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    if not result.conversations:
        raise CorpusLoadError(
            f"no conversations parsed from {path} as {format} "
            f"({len(result.errors)} record errors)"
        )
    return result


def _load_mpdd(path: Path) -> LoadResult:
    data = json.loads(path.read_text(encoding="utf-8"))
    result = LoadResult([])
    for key, raw_turns in data.items():
        if not isinstance(raw_turns, list) or not raw_turns:
            result.errors.append(LoadError(str(key), "dialogue is not a non-empty list"))
            continue
        turns: list[Turn] = []
        rels: dict[tuple[str, str], str] = {}
        ok = True
        for i, raw in enumerate(raw_turns):
            try:
                speaker = raw["speaker"]
                text = raw["utterance"]
            except (TypeError, KeyError) as exc:
                result.errors.append(LoadError(f"{key}[{i}]", f"missing field {exc}"))
                ok = False
                break
            labels = {}
            if raw.get("emotion"):
                labels["emotion"] = str(raw["emotion"])
            turns.append(Turn(index=i, speaker=str(speaker), text=str(text), labels=labels))
            for listener in raw.get("listener") or []:
                name, relation = listener.get("name"), listener.get("relation")
                if name and relation and name != speaker:
                    rels.setdefault((str(speaker), str(name)), str(relation))
        if not ok or not turns:
            continue
        speakers = {t.speaker for t in turns}
        relationships = tuple(
            Relationship(a, b, rel, provenance=schema.GOLD)
            for (a, b), rel in rels.items()
            if a in speakers and b in speakers
        )
        result.conversations.append(
            Conversation(
                id=str(key), source="mpdd", turns=tuple(turns), relationships=relationships
            )
        )
    return result


_CPED_LABELS = {"emotion": "emotion", "sentiment": "sentiment", "da": "dialogue_act", "dialogue_act": "dialogue_act"}


def _load_cped(path: Path) -> LoadResult:
    result = LoadResult([])
    grouped: dict[str, list[Turn]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return result
        columns = {name.lower(): name for name in reader.fieldnames}
        did_col = columns.get("dialogue_id")
        speaker_col, utt_col = columns.get("speaker"), columns.get("utterance")
        if not (did_col and speaker_col and utt_col):
            result.errors.append(LoadError("header", "need Dialogue_ID, Speaker, Utterance columns"))
            return result
        for line_no, row in enumerate(reader, start=2):
            did, speaker, text = row.get(did_col), row.get(speaker_col), row.get(utt_col)
            if not did or not speaker or not text:
                result.errors.append(LoadError(f"line {line_no}", "missing dialogue/speaker/utterance"))
                continue
            labels = {}
            for lower, task in _CPED_LABELS.items():
                col = columns.get(lower)
                if col and row.get(col):
                    labels[task] = row[col]  # label values preserved verbatim
            turns = grouped.setdefault(did, [])
            turns.append(Turn(index=len(turns), speaker=speaker, text=text, labels=labels))
    for did, turns in grouped.items():
        result.conversations.append(
            Conversation(id=did, source="cped", turns=tuple(turns))
        )
    return result


def _load_ldc(path: Path) -> LoadResult:
    result = LoadResult([])
    for file in sorted(path.glob("*.json")):
        try:
            raw = json.loads(file.read_text(encoding="utf-8"))
            turns = tuple(
                Turn(
                    index=i,
                    speaker=str(t["speaker"]),
                    text=str(t["text"]),
                    labels={
                        task: str(t[task])
                        for task in schema.LABEL_TASKS
                        if t.get(task) is not None
                    },
                )
                for i, t in enumerate(raw["turns"])
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            result.errors.append(LoadError(file.name, f"malformed record: {exc}"))
            continue
        if not turns:
            result.errors.append(LoadError(file.name, "no turns"))
            continue
        settings = None
        if raw.get("settings"):
            s = raw["settings"]
            attributes = {str(k): str(v) for k, v in (s.get("attributes") or {}).items()}
            provenance = {attr: schema.GOLD for attr in attributes}
            if s.get("field"):
                provenance["field"] = schema.GOLD
            settings = SettingsRecord(
                field=s.get("field"), attributes=attributes, provenance=provenance
            )
        relationships = tuple(
            Relationship(r["speaker_a"], r["speaker_b"], r["relation"], provenance=schema.GOLD)
            for r in raw.get("relationships") or []
        )
        result.conversations.append(
            Conversation(
                id=str(raw.get("id") or file.stem),
                source="ldc",
                turns=turns,
                relationships=relationships,
                settings=settings,
                summary=raw.get("summary"),
                summary_provenance=schema.GOLD if raw.get("summary") else None,
            )
        )
    return result


def _load_jsonl(path: Path) -> LoadResult:
    result = LoadResult([])
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                result.conversations.append(Conversation.from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                result.errors.append(LoadError(f"line {line_no}", f"malformed record: {exc}"))
    return result


def write_jsonl(conversations: Iterable[Conversation], path: str | Path) -> int:
    """Write conversations in the canonical JSONL format (one document per
    line, sorted keys). load -> write -> load is a fixpoint."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(canonical_json(conv.to_dict()) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# Provider-backed field filling

FILLABLE_FIELDS = ("relationships", "settings", "summary")

_RELATION_LINE = re.compile(
    r"^\s*(?P<a>[^:—-]+?)\s*:\s*(?P<b>[^—-]+?)\s*(?:—|-)\s*(?P<rel>.+?)\s*$"
)


def parse_relationship_lines(text: str) -> list[tuple[str, str, str]]:
    """Parse 'Name: Name — relation' lines (plain hyphen accepted)."""
    out = []
    for line in text.splitlines():
        m = _RELATION_LINE.match(line)
        if m:
            out.append((m.group("a").strip(), m.group("b").strip(), m.group("rel").strip()))
    return out


def parse_settings_lines(text: str) -> tuple[Optional[str], dict[str, str]]:
    """Parse 'Key: value' lines; the Field/Scene key becomes the scene field."""
    scene: Optional[str] = None
    attributes: dict[str, str] = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if not key or not value:
            continue
        if key.lower() in ("field", "scene", "setting"):
            scene = value
        else:
            attributes[key.lower().replace(" ", "_")] = value
    return scene, attributes


@dataclass
class FillResult:
    conversation: Conversation
    filled: dict[str, object]  # payload fragments keyed by field name
    errors: list[str] = field(default_factory=list)


def _ask(provider: ChatProvider, conversation: Conversation, prompt: str) -> str:
    messages = [
        ChatMessage("system", "You annotate Chinese conversations with factual metadata."),
        ChatMessage("user", f"Conversation:\n{conversation.transcript()}\n\n{prompt}"),
    ]
    response, _retries = providers.complete_with_retries(
        provider, messages, session_id=conversation.id
    )
    return response


def fill_missing_fields(
    conversation: Conversation,
    fields: Sequence[str],
    provider: ChatProvider,
) -> FillResult:
    """Fill absent factual fields via the provider.

    Requested fields must currently be absent; gold content is never
    overwritten (asking for a field that is already present raises
    ValueError). Provider failures leave the conversation unchanged and are
    reported in ``result.errors``; a response that fails to parse is retried
    once before giving up on that field.
    """
    for name in fields:
        if name not in FILLABLE_FIELDS:
            raise ValueError(f"unknown fillable field {name!r}")
    if "relationships" in fields and conversation.relationships:
        raise ValueError("relationships already present; refusing to overwrite")
    if "settings" in fields and conversation.settings is not None:
        raise ValueError("settings already present; refusing to overwrite")
    if "summary" in fields and conversation.summary is not None:
        raise ValueError("summary already present; refusing to overwrite")

    result = FillResult(conversation=conversation, filled={})
    for name in fields:
        prompt = {
            "relationships": RELATIONSHIPS_PROMPT,
            "settings": SETTINGS_PROMPT,
            "summary": SUMMARY_PROMPT,
        }[name]
        parsed = None
        for attempt in range(2):  # one retry on unparseable output
            try:
                response = _ask(provider, result.conversation, prompt)
            except ProviderError as exc:
                result.errors.append(f"{name}: provider failure: {exc}")
                break
            parsed = _parse_fill(name, response, result.conversation)
            if parsed is not None:
                break
            if attempt == 1:
                result.errors.append(f"{name}: unparseable provider output")
        if parsed is None:
            continue
        result.filled[name] = parsed
        result.conversation = _apply_fill(result.conversation, name, parsed)
    return result


def _parse_fill(name: str, response: str, conversation: Conversation):
    if name == "summary":
        text = response.strip()
        return text or None
    if name == "relationships":
        speakers = conversation.speakers()
        rels = [
            {"speaker_a": a, "speaker_b": b, "relation": rel, "provenance": schema.PROVIDER_FILLED}
            for a, b, rel in parse_relationship_lines(response)
            if a in speakers and b in speakers and a != b
        ]
        return rels or None
    scene, attributes = parse_settings_lines(response)
    if scene is None and not attributes:
        return None
    provenance = {attr: schema.PROVIDER_FILLED for attr in attributes}
    if scene is not None:
        provenance["field"] = schema.PROVIDER_FILLED
    return {"field": scene, "attributes": attributes, "provenance": provenance}


def _apply_fill(conversation: Conversation, name: str, parsed) -> Conversation:
    if name == "summary":
        return replace(
            conversation, summary=parsed, summary_provenance=schema.PROVIDER_FILLED
        )
    if name == "relationships":
        return replace(
            conversation,
            relationships=tuple(Relationship.from_dict(r) for r in parsed),
        )
    return replace(conversation, settings=SettingsRecord.from_dict(parsed))


# ---------------------------------------------------------------------------
# Down-sampling over-represented labels


def downsample_labels(
    conversations: Sequence[Conversation],
    task: str,
    label: str,
    fraction: float,
    seed: int,
) -> tuple[list[Conversation], set[tuple[str, int]]]:
    """Keep only ``fraction`` of the turns labeled ``label`` for ``task``.

    Dropped turns keep their text but lose that one label, so turn
    contiguity is untouched. Deterministic: the same seed always keeps the
    same (conversation_id, turn_index) set.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be within [0, 1]")
    candidates = [
        (conv.id, turn.index)
        for conv in conversations
        for turn in conv.turns
        if turn.labels.get(task) == label
    ]
    keep_count = round(fraction * len(candidates))
    rng = random.Random(seed)
    retained = set(rng.sample(candidates, keep_count)) if candidates else set()

    out = []
    for conv in conversations:
        new_turns = []
        changed = False
        for turn in conv.turns:
            if turn.labels.get(task) == label and (conv.id, turn.index) not in retained:
                labels = {k: v for k, v in turn.labels.items() if k != task}
                new_turns.append(replace(turn, labels=labels))
                changed = True
            else:
                new_turns.append(turn)
        out.append(replace(conv, turns=tuple(new_turns)) if changed else conv)
    return out, retained
