from __future__ import annotations

import random

import pytest

from conftest import make_conversation
from oracles import oracle_alpha, oracle_quality_retention
from convnorms.metrics import (
    MetricError,
    UndefinedMetricError,
    concept_field_distribution,
    distribution_rows,
    krippendorff_alpha,
    likert_mean,
    majority_verdicts,
    quality_retention,
)
from convnorms.schema import (
    ConceptAssignment,
    HumanJudgment,
    NormConcept,
    NormDescription,
    SettingsRecord,
)
from convnorms.store import ProjectState


def judge(target, annotator, verdict, aspect="relevance", likert=None):
    return HumanJudgment(target, annotator, aspect, verdict, likert)


# ---------------------------------------------------------------------------
# quality / retention


def planted_judgments(good_count: int, total: int) -> list[HumanJudgment]:
    return [
        judge(f"t{i}", "ann1", "yes" if i < good_count else "no") for i in range(total)
    ]


def test_identity_refinement_is_perfect():
    judgments = planted_judgments(10, 10)
    ids = [f"t{i}" for i in range(10)]
    qr = quality_retention(ids, ids, judgments)
    assert qr.quality == 1.0 and qr.retention == 1.0


def test_empty_retained_set_quality_undefined_retention_zero():
    judgments = planted_judgments(5, 10)
    qr = quality_retention([f"t{i}" for i in range(10)], [], judgments)
    assert qr.quality is None
    assert "quality undefined: empty retained set" in qr.notes
    assert qr.retention == 0.0


def test_no_good_originals_retention_undefined():
    judgments = planted_judgments(0, 5)
    qr = quality_retention([f"t{i}" for i in range(5)], [f"t{i}" for i in range(3)], judgments)
    assert qr.retention is None and qr.quality == 0.0


def test_published_multiagent_mapping_row():
    # inverse-constructed composition: 97 good originals, 91 good retained,
    # 96 retained total -> quality 94.8, retention 93.8 at one decimal
    good, good_retained, retained_total = 97, 91, 96
    total = 140
    judgments = planted_judgments(good, total)
    retained = [f"t{i}" for i in range(good_retained)] + [
        f"t{i}" for i in range(good, good + (retained_total - good_retained))
    ]
    qr = quality_retention([f"t{i}" for i in range(total)], retained, judgments)
    assert round(100 * qr.quality, 1) == 94.8
    assert round(100 * qr.retention, 1) == 93.8


def test_majority_ties_resolve_to_bad():
    judgments = [
        judge("t0", "ann1", "yes"),
        judge("t0", "ann2", "no"),
        judge("t1", "ann1", "yes"),
        judge("t1", "ann2", "yes"),
        judge("t1", "ann3", "no"),
    ]
    verdicts = majority_verdicts(judgments)
    assert verdicts == {"t0": False, "t1": True}


def test_preconditions_enforced():
    judgments = planted_judgments(2, 2)
    with pytest.raises(ValueError, match="not in original"):
        quality_retention(["t0"], ["t1"], judgments)
    with pytest.raises(ValueError, match="without human verdicts"):
        quality_retention(["t0", "missing"], ["t0"], judgments)


def test_quality_retention_matches_set_arithmetic_oracle():
    rng = random.Random(99)
    for _ in range(25):
        total = rng.randint(1, 1000)
        ids = [f"t{i}" for i in range(total)]
        good = {tid for tid in ids if rng.random() < rng.uniform(0.2, 0.9)}
        retained = {tid for tid in ids if rng.random() < 0.6}
        judgments = [judge(tid, "ann1", "yes" if tid in good else "no") for tid in ids]
        qr = quality_retention(ids, retained, judgments)
        want_q, want_r = oracle_quality_retention(good, set(ids), retained)
        if want_q is None:
            assert qr.quality is None
        else:
            assert qr.quality == pytest.approx(want_q, abs=1e-12)
        if want_r is None:
            assert qr.retention is None
        else:
            assert qr.retention == pytest.approx(want_r, abs=1e-12)


# ---------------------------------------------------------------------------
# Krippendorff's alpha


def ratings_to_judgments(ratings: dict[str, list[str]], aspect="mapping") -> list[HumanJudgment]:
    out = []
    for item, values in ratings.items():
        for i, v in enumerate(values):
            out.append(judge(item, f"ann{i}", v, aspect=aspect))
    return out


def test_alpha_perfect_agreement_is_one():
    ratings = {"i1": ["yes", "yes", "yes"], "i2": ["no", "no", "no"], "i3": ["yes", "yes", "yes"]}
    result = krippendorff_alpha(ratings_to_judgments(ratings), "mapping")
    assert result.alpha == pytest.approx(1.0)
    assert result.items_used == 3 and result.items_dropped == 0


def test_alpha_two_annotator_binary_matches_oracle():
    ratings = {
        "i1": ["yes", "yes"],
        "i2": ["yes", "no"],
        "i3": ["no", "no"],
        "i4": ["no", "yes"],
    }
    result = krippendorff_alpha(ratings_to_judgments(ratings), "mapping")
    assert result.alpha == pytest.approx(oracle_alpha(ratings), abs=1e-9)


def test_alpha_matches_oracle_on_random_nominal_fixtures():
    rng = random.Random(4)
    for _ in range(30):
        values = ["a", "b", "c"][: rng.randint(2, 3)]
        ratings = {}
        for i in range(rng.randint(2, 40)):
            raters = rng.randint(1, 4)  # single-rating items get dropped
            ratings[f"i{i}"] = [rng.choice(values) for _ in range(raters)]
        usable = {k: v for k, v in ratings.items() if len(v) >= 2}
        if not usable:
            continue
        distinct = {v for vals in usable.values() for v in vals}
        judgments = ratings_to_judgments(ratings)
        if len(distinct) < 2:
            with pytest.raises(UndefinedMetricError):
                krippendorff_alpha(judgments, "mapping")
            continue
        result = krippendorff_alpha(judgments, "mapping")
        assert result.alpha == pytest.approx(oracle_alpha(ratings), abs=1e-9)
        assert result.items_dropped == len(ratings) - len(usable)


def test_alpha_near_zero_for_random_ratings():
    rng = random.Random(21)
    ratings = {f"i{i}": [rng.choice(["yes", "no"]) for _ in range(3)] for i in range(1000)}
    result = krippendorff_alpha(ratings_to_judgments(ratings), "mapping")
    assert abs(result.alpha) < 0.05


def test_alpha_permutation_invariant():
    rng = random.Random(8)
    ratings = {f"i{i}": [rng.choice(["yes", "no"]) for _ in range(3)] for i in range(40)}
    base = krippendorff_alpha(ratings_to_judgments(ratings), "mapping").alpha

    relabeled_items = {f"z{99 - i}": v for i, v in enumerate(ratings.values())}
    assert krippendorff_alpha(
        ratings_to_judgments(relabeled_items), "mapping"
    ).alpha == pytest.approx(base, abs=1e-12)

    shuffled_annotators = []
    for item, values in ratings.items():
        order = list(values)
        rng.shuffle(order)
        for i, v in enumerate(order):
            shuffled_annotators.append(judge(item, f"renamed{i}", v, aspect="mapping"))
    assert krippendorff_alpha(shuffled_annotators, "mapping").alpha == pytest.approx(
        base, abs=1e-12
    )


def test_alpha_duplication_shift_is_order_one_over_n():
    # exact invariance does not hold under the finite-sample expected
    # disagreement (the n-1 correction); the shift is O(1/n)
    rng = random.Random(12)
    ratings = {f"i{i}": [rng.choice(["yes", "no"]) for _ in range(3)] for i in range(100)}
    doubled = dict(ratings)
    doubled.update({f"dup-{k}": list(v) for k, v in ratings.items()})
    a1 = krippendorff_alpha(ratings_to_judgments(ratings), "mapping").alpha
    a2 = krippendorff_alpha(ratings_to_judgments(doubled), "mapping").alpha
    assert a1 != a2  # the correction is visible...
    assert abs(a1 - a2) < 1 / 299  # ...but bounded by ~1/(n_pairable - 1)


def test_alpha_undefined_when_everything_identical():
    ratings = {"i1": ["yes", "yes"], "i2": ["yes", "yes"]}
    with pytest.raises(UndefinedMetricError):
        krippendorff_alpha(ratings_to_judgments(ratings), "mapping")


def test_alpha_needs_two_annotators_and_a_pairable_item():
    with pytest.raises(MetricError, match="two annotators"):
        krippendorff_alpha([judge("i1", "ann0", "yes")], "mapping")
    judgments = [
        judge("i1", "ann0", "yes", aspect="mapping"),
        judge("i2", "ann1", "no", aspect="mapping"),
    ]
    with pytest.raises(MetricError, match="two or more ratings"):
        krippendorff_alpha(judgments, "mapping")


# ---------------------------------------------------------------------------
# Likert


def test_likert_mean_basic():
    judgments = [judge(f"t{i}", "a", "yes", likert=v) for i, v in enumerate([4, 4, 5])]
    result = likert_mean(judgments)
    assert result.mean == pytest.approx(13 / 3)
    assert result.count == 3


def test_likert_empty_is_error():
    with pytest.raises(MetricError, match="no ratings"):
        likert_mean([judge("t0", "a", "yes")])  # no likert values at all


def test_likert_planted_mean_411():
    # 89 fours + 11 fives = 411 over 100 ratings
    values = [4] * 89 + [5] * 11
    judgments = [judge(f"t{i}", "a", "yes", likert=v) for i, v in enumerate(values)]
    result = likert_mean(judgments)
    assert result.mean == pytest.approx(4.11)
    assert result.count == 100


# ---------------------------------------------------------------------------
# distribution


def build_distribution_state(counts: dict[tuple[str, str], int]) -> ProjectState:
    state = ProjectState()
    concepts = sorted({c for c, _ in counts})
    fields = sorted({f for _, f in counts})
    for f in fields:
        conv = make_conversation(
            f"conv-{f}",
            [("A", "hi")],
            settings=SettingsRecord(field=f, attributes={}, provenance={"field": "gold"}),
        )
        state.conversations[conv.id] = conv
    for name in concepts:
        state.concepts[name] = NormConcept(
            id=name, name=name, description="", settings=(), violation_sketch="",
            actor_roles="", recipient_roles="", seed_ids=("seed-filler",) * 5,
        )
    i = 0
    for (concept, fld), n in counts.items():
        for _ in range(n):
            did = f"d{i}"
            i += 1
            state.descriptions[did] = NormDescription(
                id=did, conversation_id=f"conv-{fld}", kind="norm", title="t", body="b"
            )
            state.assignments.append(ConceptAssignment(did, concept, "knn", 0.9, 1))
            state._active[did] = len(state.assignments) - 1
    return state


def test_distribution_concentrates_where_planted():
    state = build_distribution_state({("formal address", "company"): 7})
    table = concept_field_distribution(state)
    assert table == {"formal address": {"company": 7}}


def test_distribution_empty_project():
    assert concept_field_distribution(ProjectState()) == {}


def test_distribution_exact_planted_counts():
    counts = {
        ("a", "family"): 3, ("a", "company"): 1,
        ("b", "family"): 2, ("b", "company"): 5,
        ("c", "family"): 4, ("c", "company"): 6,
    }
    state = build_distribution_state(counts)
    table = concept_field_distribution(state)
    for (concept, fld), n in counts.items():
        assert table[concept][fld] == n
    rows = distribution_rows(table)
    assert sum(r["count"] for r in rows) == sum(counts.values())


def test_distribution_missing_field_counts_under_unknown():
    state = build_distribution_state({("a", "family"): 1})
    conv = make_conversation("conv-bare", [("A", "hi")])
    state.conversations[conv.id] = conv
    state.descriptions["dx"] = NormDescription(
        id="dx", conversation_id="conv-bare", kind="norm", title="t", body="b"
    )
    state.assignments.append(ConceptAssignment("dx", "a", "knn", 0.8, 1))
    state._active["dx"] = len(state.assignments) - 1
    table = concept_field_distribution(state)
    assert table["a"]["unknown"] == 1
