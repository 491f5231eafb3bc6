"""Automated refinement of elicited data.

Two workflows over the same retain/discard contract:

* self-verification: the provider reconsiders one judgment with a yes/no
  answer;
* multi-agent verification: a critic generates a categorical rubric, a
  verifier flags non-robust criteria, a quantifier rates each target on the
  robust criteria, and a deterministic evaluator thresholds the mean
  normalized score.

This module is the only place a description, mapping, or grounding gets
discarded. Verdicts are keyed by (target, aspect, workflow) in the store, so
re-running a batch after a crash never double-applies a decision.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from . import providers, schema
from .providers import ChatMessage, ChatProvider, ProviderError
from .schema import NormDescription
from .store import ProjectStore

DEFAULT_THRESHOLD = 0.7


class VerificationError(Exception):
    pass


@dataclass(frozen=True)
class Criterion:
    name: str
    description: str
    accepted_values: tuple[str, ...]
    robust: bool = True

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "accepted_values": list(self.accepted_values),
            "robust": self.robust,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Criterion":
        return cls(
            name=d["name"],
            description=d.get("description", ""),
            accepted_values=tuple(d["accepted_values"]),
            robust=bool(d.get("robust", True)),
        )


@dataclass
class Rubric:
    aspect: str
    version: int
    criteria: list[Criterion]
    # Declared normalized-score tables for non-ordinal criteria; a non-ordinal
    # criterion without a declared table is informational (excluded from means).
    value_scores: dict[str, dict[str, float]] = field(default_factory=dict)

    def robust_criteria(self) -> list[Criterion]:
        return [c for c in self.criteria if c.robust]

    def to_dict(self) -> dict:
        return {
            "aspect": self.aspect,
            "version": self.version,
            "criteria": [c.to_dict() for c in self.criteria],
            "value_scores": self.value_scores,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Rubric":
        return cls(
            aspect=d["aspect"],
            version=int(d.get("version", 1)),
            criteria=[Criterion.from_dict(c) for c in d["criteria"]],
            value_scores={k: dict(v) for k, v in (d.get("value_scores") or {}).items()},
        )


_ORDINAL_VALUE = re.compile(r"^\s*\d+\s*-")


def is_ordinal(criterion: Criterion) -> bool:
    return all(_ORDINAL_VALUE.match(v) for v in criterion.accepted_values)


def normalized_score(criterion: Criterion, value: str, rubric: Rubric) -> Optional[float]:
    """Normalized score in [0, 1] for a chosen value, or None when the
    criterion is informational (non-ordinal without a declared mapping)."""
    values = [v.lower() for v in criterion.accepted_values]
    idx = values.index(value.lower())
    if is_ordinal(criterion):
        if len(criterion.accepted_values) == 1:
            return 1.0
        return idx / (len(criterion.accepted_values) - 1)
    table = rubric.value_scores.get(criterion.name)
    if table is None:
        return None
    lowered = {k.lower(): v for k, v in table.items()}
    return lowered.get(value.lower(), 0.5)


@dataclass(frozen=True)
class QuantifiedScore:
    criterion: str
    value: str
    normalized: Optional[float]

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "value": self.value, "normalized": self.normalized}


@dataclass(frozen=True)
class VerificationVerdict:
    target_id: str
    aspect: str
    workflow: str  # "self" | "multiagent"
    decision: str  # "retain" | "discard"
    scores: tuple[QuantifiedScore, ...] = ()
    rationale: str = ""

    def to_dict(self) -> dict:
        return {
            "target_id": self.target_id,
            "aspect": self.aspect,
            "workflow": self.workflow,
            "decision": self.decision,
            "scores": [s.to_dict() for s in self.scores],
            "rationale": self.rationale,
        }


# ---------------------------------------------------------------------------
# Agent sessions: four roles as four provider sessions with distinct system
# prompts. Any role may be backed by the same underlying provider.

CRITIC_SYSTEM = (
    "You are a critic agent. Given a task description and examples of "
    "successful and unsuccessful runs, produce a categorical rubric of "
    "evaluation criteria. For each criterion output three lines:\n"
    "Criterion: <name>\nDescription: <one sentence>\n"
    "Accepted Values: <comma-separated ordered list>"
)
QUANTIFIER_SYSTEM = (
    "You are a quantifier agent. Rate the given sample on one criterion. "
    "Respond with exactly one of the accepted values, nothing else."
)
VERIFIER_SYSTEM = (
    "You are a verifier agent. Check the robustness of each rubric criterion "
    "against the probe examples. Respond with one line per criterion: "
    "<criterion name>: robust or <criterion name>: not robust"
)

SELF_VERIFY_QUESTIONS = {
    "relevance": "Reconsider whether the description is actually relevant to the conversation.",
    "mapping": "Reconsider whether the description truly belongs to the norm concept it was mapped to.",
    "violation": "Reconsider whether the recorded violation status is correct for the conversation.",
}


@dataclass
class AgentBundle:
    critic: ChatProvider
    quantifier: ChatProvider
    verifier: ChatProvider

    @classmethod
    def single(cls, provider: ChatProvider) -> "AgentBundle":
        return cls(critic=provider, quantifier=provider, verifier=provider)


_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_yes_no(text: str) -> Optional[str]:
    m = _YES_NO.search(text or "")
    return m.group(1).lower() if m else None


def self_verify(
    store: ProjectStore,
    target: NormDescription,
    aspect: str,
    provider: ChatProvider,
    context: str = "",
) -> Optional[VerificationVerdict]:
    """Ask the provider to reconsider one judgment; retain on yes, discard on
    no. An unparseable answer is retried once, then the verdict is withheld
    and the target left as it was."""
    if aspect == "relevance" and target.status != schema.STATUS_RAW:
        raise VerificationError(f"target {target.id} is not raw (status {target.status})")
    question = SELF_VERIFY_QUESTIONS[aspect]
    prompt = (
        f"{question} Answer yes or no.\n\n{context}\n"
        f"Description: {target.title}: {target.body}"
    )
    messages = [
        ChatMessage("system", "You review your own prior annotation judgments."),
        ChatMessage("user", prompt),
    ]
    answer = None
    for _ in range(2):
        try:
            response, _retries = providers.complete_with_retries(
                provider, messages, session_id=target.id
            )
        except ProviderError as exc:
            store.append(
                "error_recorded",
                {"stage": "self_verify", "target_id": target.id, "message": str(exc)},
            )
            return None
        answer = parse_yes_no(response)
        if answer is not None:
            break
    if answer is None:
        store.append(
            "error_recorded",
            {"stage": "self_verify", "target_id": target.id, "message": "unparseable answer"},
        )
        return None
    verdict = VerificationVerdict(
        target_id=target.id,
        aspect=aspect,
        workflow="self",
        decision="retain" if answer == "yes" else "discard",
        rationale=f"self-verification answered {answer}",
    )
    store.append("verdict_recorded", {"verdict": verdict.to_dict()})
    return verdict


# ---------------------------------------------------------------------------
# Critic / verifier / quantifier / evaluator


def generate_criteria(
    task_description: str,
    success_example: str,
    failure_example: str,
    provider: ChatProvider,
) -> tuple[list[Criterion], list[str]]:
    """Critic step: turn a task description plus success/failure examples
    into a categorical rubric. Criteria without accepted values are dropped
    with a warning; an empty rubric is a hard error."""
    if not success_example or not failure_example:
        raise VerificationError("both a success and a failure example are required")
    prompt = (
        f"Task: {task_description}\n\n"
        f"Successful run example:\n{success_example}\n\n"
        f"Unsuccessful run example:\n{failure_example}\n\n"
        "Generate the rubric."
    )
    response, _ = providers.complete_with_retries(
        provider, [ChatMessage("system", CRITIC_SYSTEM), ChatMessage("user", prompt)]
    )
    criteria, warnings = parse_criteria(response)
    if not criteria:
        raise VerificationError("no criteria")
    return criteria, warnings


def parse_criteria(text: str) -> tuple[list[Criterion], list[str]]:
    criteria: list[Criterion] = []
    warnings: list[str] = []
    name = description = None
    values: tuple[str, ...] = ()

    def flush() -> None:
        nonlocal name, description, values
        if name is None:
            return
        if values:
            criteria.append(Criterion(name=name, description=description or "", accepted_values=values))
        else:
            warnings.append(f"criterion {name!r} dropped: no accepted values")
        name, description, values = None, None, ()

    for line in (text or "").splitlines():
        stripped = line.replace("**", "").strip()
        lowered = stripped.lower()
        if lowered.startswith("criterion:"):
            flush()
            name = stripped.partition(":")[2].strip()
        elif lowered.startswith("description:"):
            description = stripped.partition(":")[2].strip()
        elif lowered.startswith("accepted values:"):
            raw = stripped.partition(":")[2]
            values = tuple(v.strip() for v in raw.split(",") if v.strip())
    flush()
    return criteria, warnings


def verify_criteria(
    criteria: Sequence[Criterion],
    probe_examples: Sequence[str],
    provider: ChatProvider,
) -> list[Criterion]:
    """Verifier step: flags criteria the verifier rejects as non-robust.
    Rejected criteria stay in the rubric but are excluded from scoring."""
    if len(probe_examples) < 2:
        raise VerificationError("need at least 2 probe examples")
    listing = "\n".join(f"- {c.name}: {c.description}" for c in criteria)
    probes = "\n\n".join(probe_examples)
    response, _ = providers.complete_with_retries(
        provider,
        [
            ChatMessage("system", VERIFIER_SYSTEM),
            ChatMessage("user", f"Criteria:\n{listing}\n\nProbe examples:\n{probes}"),
        ],
    )
    rejected = set()
    for line in (response or "").splitlines():
        if ":" not in line:
            continue
        cname, _, verdict = line.partition(":")
        verdict = verdict.strip().lower()
        if verdict.startswith("not robust") or verdict in ("drop", "reject", "no"):
            rejected.add(cname.replace("**", "").strip().lower())
    out = [
        Criterion(c.name, c.description, c.accepted_values, robust=c.name.lower() not in rejected)
        for c in criteria
    ]
    if not any(c.robust for c in out):
        raise VerificationError("verifier rejected every criterion")
    return out


def _match_value(criterion: Criterion, response: str) -> Optional[str]:
    answer = response.replace("**", "").strip().strip(".").lower()
    for v in criterion.accepted_values:
        if answer == v.lower():
            return v
    # bare leading token, e.g. "4" for "4 - clear"
    heads = [v.split("-")[0].strip().lower() for v in criterion.accepted_values]
    if answer in heads and heads.count(answer) == 1:
        return criterion.accepted_values[heads.index(answer)]
    return None


def quantify(
    target_text: str,
    rubric: Rubric,
    provider: ChatProvider,
    session_id: Optional[str] = None,
) -> tuple[list[QuantifiedScore], list[str]]:
    """Quantifier step: rate the target on every robust criterion.

    A value outside the accepted list earns one reprompt naming the valid
    values; a second miss skips the criterion with a warning.
    """
    robust = rubric.robust_criteria()
    if not robust:
        raise VerificationError("rubric has no robust criteria")
    scores: list[QuantifiedScore] = []
    warnings: list[str] = []
    for criterion in robust:
        valid = ", ".join(criterion.accepted_values)
        messages = [
            ChatMessage("system", QUANTIFIER_SYSTEM),
            ChatMessage(
                "user",
                f"Criterion: {criterion.name}\nDefinition: {criterion.description}\n"
                f"Accepted values: {valid}\n\nSample:\n{target_text}",
            ),
        ]
        chosen = None
        for attempt in range(2):
            response, _ = providers.complete_with_retries(
                provider, messages, session_id=session_id
            )
            chosen = _match_value(criterion, response)
            if chosen is not None:
                break
            if attempt == 0:
                messages.append(ChatMessage("assistant", response))
                messages.append(
                    ChatMessage(
                        "user",
                        f"{response.strip()!r} is not an accepted value. "
                        f"Answer with exactly one of: {valid}",
                    )
                )
        if chosen is None:
            warnings.append(f"criterion {criterion.name!r} skipped: value out of range twice")
            continue
        scores.append(
            QuantifiedScore(
                criterion=criterion.name,
                value=chosen,
                normalized=normalized_score(criterion, chosen, rubric),
            )
        )
    return scores, warnings


def evaluate(
    target_id: str,
    aspect: str,
    scores: Sequence[QuantifiedScore],
    threshold: float = DEFAULT_THRESHOLD,
) -> VerificationVerdict:
    """Evaluator step: retain iff the mean normalized score over scored
    (non-informational) criteria reaches the threshold. Deterministic."""
    scored = [s.normalized for s in scores if s.normalized is not None]
    if not scored:
        raise VerificationError("no robust scored criteria to evaluate")
    mean = sum(scored) / len(scored)
    decision = "retain" if mean >= threshold else "discard"
    return VerificationVerdict(
        target_id=target_id,
        aspect=aspect,
        workflow="multiagent",
        decision=decision,
        scores=tuple(scores),
        rationale=f"mean normalized score {mean:.6f} {'>=' if decision == 'retain' else '<'} threshold {threshold}",
    )


# ---------------------------------------------------------------------------
# Batch drivers

TASK_DESCRIPTIONS = {
    "relevance": "Judge the relevance of a generated social-norm description to the conversation it was generated for.",
    "mapping": "Judge whether the mapping of a norm description to a norm concept is accurate.",
    "violation": "Judge whether the norm concept is violated in that particular conversation.",
}

DEFAULT_EXAMPLES = {
    "success": (
        "Conversation: a family argues about a son's marriage plans.\n"
        "Description: Respect for parents: children are expected to weigh their "
        "parents' opinions on major life decisions.\nJudgment: relevant, clearly tied "
        "to the disagreement in the conversation."
    ),
    "failure": (
        "Conversation: two colleagues plan a product launch.\n"
        "Description: Respect for elders at the dinner table: younger diners wait "
        "for elders to start eating.\nJudgment: relevant.\n"
        "This judgment ignores that the conversation has no dining context at all."
    ),
}


def eligible_targets(store: ProjectStore, aspect: str, workflow: str) -> list[NormDescription]:
    """Deterministic target list for a verification batch, excluding targets
    that already carry a verdict for this aspect+workflow."""
    state = store.state
    out = []
    for desc in state.descriptions.values():
        if desc.status == schema.STATUS_DISCARDED:
            continue
        key = f"{desc.id}|{aspect}|{workflow}"
        if key in state.verdicts:
            continue
        if aspect == "relevance":
            if workflow == "self" and desc.status != schema.STATUS_RAW:
                continue
            if workflow == "multiagent" and desc.status == schema.STATUS_AGENT_VERIFIED:
                continue
        elif aspect == "mapping":
            current = state.active_assignment(desc.id)
            if current is None or current.provenance == schema.PROVENANCE_HUMAN_SEED:
                continue
        elif aspect == "violation":
            current = state.active_assignment(desc.id)
            if current is None:
                continue
            g = state.grounding_for(desc.id, current.concept_id)
            if g is None or g.discarded or g.violation_status is None:
                continue
        out.append(desc)
    return out


def _target_text(store: ProjectStore, desc: NormDescription, aspect: str) -> str:
    state = store.state
    conv = state.conversations.get(desc.conversation_id)
    parts = []
    if conv is not None:
        parts.append(f"Conversation:\n{conv.transcript()}")
    parts.append(f"Description: {desc.title}: {desc.body}")
    current = state.active_assignment(desc.id)
    if aspect in ("mapping", "violation") and current is not None:
        concept = state.concepts.get(current.concept_id)
        if concept is not None:
            parts.append(f"Norm concept: {concept.name}: {concept.description}")
        if aspect == "violation":
            g = state.grounding_for(desc.id, current.concept_id)
            if g is not None and g.violation_status is not None:
                parts.append(f"Recorded violation status: {g.violation_status}")
    return "\n\n".join(parts)


def run_self_verification(
    store: ProjectStore,
    aspect: str,
    provider: ChatProvider,
    limit: Optional[int] = None,
) -> list[VerificationVerdict]:
    """Self-verify every eligible target (optionally the first ``limit``)."""
    verdicts = []
    for desc in eligible_targets(store, aspect, "self")[:limit]:
        context = _target_text(store, desc, aspect)
        v = self_verify(store, desc, aspect, provider, context=context)
        if v is not None:
            verdicts.append(v)
    return verdicts


def ensure_rubric(
    store: ProjectStore,
    aspect: str,
    bundle: AgentBundle,
    task_description: Optional[str] = None,
    success_example: Optional[str] = None,
    failure_example: Optional[str] = None,
    value_scores: Optional[dict[str, dict[str, float]]] = None,
) -> Rubric:
    """Return the stored rubric for the aspect, generating and verifying one
    first when absent. Rubric generation is a one-time serialized phase."""
    stored = store.state.rubrics.get(aspect)
    if stored is not None:
        return Rubric.from_dict(stored)
    success = success_example or DEFAULT_EXAMPLES["success"]
    failure = failure_example or DEFAULT_EXAMPLES["failure"]
    criteria, _warnings = generate_criteria(
        task_description or TASK_DESCRIPTIONS[aspect], success, failure, bundle.critic
    )
    criteria = verify_criteria(criteria, [success, failure], bundle.verifier)
    rubric = Rubric(
        aspect=aspect, version=1, criteria=criteria, value_scores=value_scores or {}
    )
    store.append("rubric_saved", rubric.to_dict())
    return rubric


def run_multiagent_verification(
    store: ProjectStore,
    aspect: str,
    bundle: AgentBundle,
    threshold: float = DEFAULT_THRESHOLD,
    limit: Optional[int] = None,
    evaluator: Optional[Callable[[str, str, Sequence[QuantifiedScore], float], VerificationVerdict]] = None,
) -> list[VerificationVerdict]:
    """Critic -> verifier -> quantifier -> evaluator over eligible targets.

    The evaluator is pluggable behind the same contract; the default is the
    deterministic mean-threshold rule. Safe to kill and resume: verdicts
    already recorded are skipped.
    """
    rubric = ensure_rubric(store, aspect, bundle)
    decide = evaluator or evaluate
    verdicts = []
    for desc in eligible_targets(store, aspect, "multiagent")[:limit]:
        text = _target_text(store, desc, aspect)
        scores, warnings = quantify(text, rubric, bundle.quantifier, session_id=desc.id)
        for w in warnings:
            store.append(
                "error_recorded", {"stage": "quantify", "target_id": desc.id, "message": w}
            )
        try:
            verdict = decide(desc.id, aspect, scores, threshold)
        except VerificationError as exc:
            store.append(
                "error_recorded", {"stage": "evaluate", "target_id": desc.id, "message": str(exc)}
            )
            continue
        store.append("verdict_recorded", {"verdict": verdict.to_dict()})
        verdicts.append(verdict)
    return verdicts
