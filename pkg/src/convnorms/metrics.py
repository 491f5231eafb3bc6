"""Evaluation metrics over human judgments.

Quality is precision-like: the share of good samples in the post-refinement
data. Retention is recall-like: the share of originally good samples that
survived refinement. Agreement uses Krippendorff's alpha with nominal
disagreement over the coincidence matrix. Undefined outcomes are explicit
(tagged fields or raised errors), never sentinel numbers.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .schema import HumanJudgment
from .store import ProjectState


class MetricError(Exception):
    pass


class UndefinedMetricError(MetricError):
    """The metric has no defined value on this data (e.g. zero expected
    disagreement)."""


def majority_verdicts(judgments: Iterable[HumanJudgment]) -> dict[str, bool]:
    """Majority yes/no per target over annotators; ties resolve to bad
    (conservative)."""
    votes: dict[str, Counter] = defaultdict(Counter)
    for j in judgments:
        votes[j.target_id][j.verdict] += 1
    return {tid: c["yes"] > c["no"] for tid, c in votes.items()}


@dataclass(frozen=True)
class QualityRetention:
    quality: Optional[float]  # None when undefined (empty retained set)
    retention: Optional[float]  # None when undefined (no good originals)
    good_retained: int
    retained: int
    good_original: int
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "quality": self.quality,
            "retention": self.retention,
            "good_retained": self.good_retained,
            "retained": self.retained,
            "good_original": self.good_original,
            "notes": list(self.notes),
        }


def quality_retention(
    original_ids: Iterable[str],
    retained_ids: Iterable[str],
    judgments: Iterable[HumanJudgment],
) -> QualityRetention:
    """Quality and retention of a refinement step against human judgments.

    Every original id must carry a majority human verdict; retained ids must
    be a subset of the originals.
    """
    original = set(original_ids)
    retained = set(retained_ids)
    stray = retained - original
    if stray:
        raise ValueError(f"retained ids not in original set: {sorted(stray)[:5]}")
    good_map = majority_verdicts(judgments)
    unjudged = original - good_map.keys()
    if unjudged:
        raise ValueError(f"original ids without human verdicts: {sorted(unjudged)[:5]}")

    good = {tid for tid in original if good_map[tid]}
    good_retained = len(good & retained)
    notes = []
    quality: Optional[float] = None
    if retained:
        quality = good_retained / len(retained)
    else:
        notes.append("quality undefined: empty retained set")
    retention: Optional[float] = None
    if good:
        retention = good_retained / len(good)
    else:
        notes.append("retention undefined: no good originals")
    return QualityRetention(
        quality=quality,
        retention=retention,
        good_retained=good_retained,
        retained=len(retained),
        good_original=len(good),
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class AlphaResult:
    alpha: float
    items_used: int
    items_dropped: int  # items with fewer than two ratings

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "items_used": self.items_used,
            "items_dropped": self.items_dropped,
        }


def krippendorff_alpha(judgments: Iterable[HumanJudgment], aspect: str) -> AlphaResult:
    """Krippendorff's alpha for nominal data, from the coincidence matrix.

    alpha = 1 - D_observed / D_expected with nominal disagreement (delta = 1
    for differing values). Items with a single rating are excluded and
    reported in ``items_dropped``. Identical ratings everywhere leave the
    expected disagreement at zero, which raises UndefinedMetricError rather
    than returning NaN.
    """
    by_item: dict[str, list[str]] = defaultdict(list)
    annotators = set()
    for j in judgments:
        if j.aspect != aspect:
            continue
        by_item[j.target_id].append(j.verdict)
        annotators.add(j.annotator_id)
    if len(annotators) < 2:
        raise MetricError("need ratings from at least two annotators")
    usable = {tid: vals for tid, vals in by_item.items() if len(vals) >= 2}
    dropped = len(by_item) - len(usable)
    if not usable:
        raise MetricError("no item carries two or more ratings")

    # Coincidence matrix: each item contributes n_uc * (n_uk - delta_ck) / (m_u - 1)
    # to cell (c, k).
    values = sorted({v for vals in usable.values() for v in vals})
    index = {v: i for i, v in enumerate(values)}
    size = len(values)
    o = [[0.0] * size for _ in range(size)]
    for vals in usable.values():
        m = len(vals)
        counts = Counter(vals)
        for c, n_c in counts.items():
            for k, n_k in counts.items():
                pairs = n_c * (n_k - (1 if c == k else 0))
                o[index[c]][index[k]] += pairs / (m - 1)
    n_c = [sum(row) for row in o]
    n = sum(n_c)
    d_observed = sum(o[i][j] for i in range(size) for j in range(size) if i != j) / n
    d_expected = sum(
        n_c[i] * n_c[j] for i in range(size) for j in range(size) if i != j
    ) / (n * (n - 1))
    if d_expected == 0.0:
        raise UndefinedMetricError("expected disagreement is zero (no value variation)")
    return AlphaResult(
        alpha=1.0 - d_observed / d_expected,
        items_used=len(usable),
        items_dropped=dropped,
    )


@dataclass(frozen=True)
class LikertSummary:
    mean: float
    count: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "count": self.count}


def likert_mean(judgments: Iterable[HumanJudgment]) -> LikertSummary:
    """Arithmetic mean of 1-5 Likert ratings, with the rating count."""
    values = [j.likert for j in judgments if j.likert is not None]
    if not values:
        raise MetricError("no ratings")
    for v in values:
        if not 1 <= v <= 5:
            raise ValueError(f"likert value {v} outside 1-5")
    return LikertSummary(mean=sum(values) / len(values), count=len(values))


def concept_field_distribution(state: ProjectState) -> dict[str, dict[str, int]]:
    """Counts of active assignments per (concept, conversation settings
    field); conversations without a field count under "unknown"."""
    table: dict[str, dict[str, int]] = {}
    for did, assignment in state.active_assignments().items():
        desc = state.descriptions.get(did)
        if desc is None or desc.status == "discarded":
            continue
        concept = state.concepts.get(assignment.concept_id)
        if concept is None:
            continue
        conv = state.conversations.get(desc.conversation_id)
        fld = "unknown"
        if conv is not None and conv.settings is not None and conv.settings.field:
            fld = conv.settings.field
        row = table.setdefault(concept.name, {})
        row[fld] = row.get(fld, 0) + 1
    return table


def distribution_rows(table: Mapping[str, Mapping[str, int]]) -> list[dict]:
    """Flatten the concept-by-field table into plot-ready rows."""
    rows = []
    for concept in sorted(table):
        for fld in sorted(table[concept]):
            rows.append({"concept": concept, "field": fld, "count": table[concept][fld]})
    return rows
