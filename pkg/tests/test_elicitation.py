from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, family_conversation
from convnorms.elicitation import (
    ElicitationResult,
    PromptScript,
    PromptStep,
    elicit,
    parse_sections,
    persist_elicitation,
)
from convnorms.providers import ScriptedChatProvider
from convnorms.store import ProjectStore

import pytest

REFERENCE_RESPONSE = (FIXTURES / "elicit_family_response.txt").read_text(encoding="utf-8")
REFERENCE_SUMMARY = (FIXTURES / "elicit_family_summary.txt").read_text(encoding="utf-8")


def family_provider(norms_response: str = REFERENCE_RESPONSE) -> ScriptedChatProvider:
    return ScriptedChatProvider(
        [
            "Mrs. Zuo: ... (translated)",  # translate
            "Mrs. Zuo: Zho Zpeng — mother-son\nMr. Zuo: Zho Zpeng — father-son",
            norms_response,
            REFERENCE_SUMMARY.strip(),
        ]
    )


def test_parse_sections_reference_transcript():
    parsed = parse_sections(REFERENCE_RESPONSE)
    assert [n.title for n in parsed.norms] == [
        "Respect for parents",
        "Unity within the family",
        "Social relationships and obligations",
    ]
    assert parsed.norms[0].body.startswith("Filial piety and respect for parents")
    assert [v.title for v in parsed.violations] == [
        "Disrespectful language",
        "Opposition towards Zho Zpeng's relationship",
    ]
    assert len(parsed.effects) == 2
    # effects linked by violation-title prefix (oracle: exact string match)
    titles = [v.title for v in parsed.violations]
    for effect in parsed.effects:
        expected = titles.index(effect.title.split(" - ")[0])
        assert effect.violation_index == expected
    assert parsed.effects[0].body.startswith("It can create tension and animosity")


def test_parse_sections_single_section():
    parsed = parse_sections("Norms:\nRespect: value your hosts.")
    assert len(parsed.norms) == 1
    assert parsed.norms[0] == type(parsed.norms[0])("Respect", "value your hosts.")
    assert parsed.violations == [] and parsed.effects == []


def test_parse_sections_no_header_yields_diagnostic():
    parsed = parse_sections("just some text\nwith no structure")
    assert parsed.norms == [] and parsed.violations == [] and parsed.effects == []
    assert parsed.diagnostics == ["no recognized section header"]


def test_parse_sections_body_overflow_attaches_to_open_item():
    parsed = parse_sections("Norms:\nRespect: first part\nplain continuation line\n")
    assert len(parsed.norms) == 1
    assert parsed.norms[0].body == "first part plain continuation line"


def test_parse_sections_is_total_on_arbitrary_text():
    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=400))
    def run(text):
        parse_sections(text)  # must never raise

    run()


def test_elicit_reference_session():
    conv = family_conversation()
    result = elicit(conv, family_provider())
    norms = [d for d in result.descriptions if d.kind == "norm"]
    violations = [d for d in result.descriptions if d.kind == "violation"]
    effects = [d for d in result.descriptions if d.kind == "effect"]
    assert (len(norms), len(violations), len(effects)) == (3, 2, 2)
    assert all(d.status == "raw" for d in result.descriptions)

    by_title = {d.title: d for d in result.descriptions}
    tension = next(d for d in effects if "create tension and animosity" in d.body)
    assert tension.parent_id == by_title["Disrespectful language"].id

    assert result.summary.startswith("The conversation revolves around Zho Zpeng")
    assert ("Mrs. Zuo", "Zho Zpeng", "mother-son") in result.relationships
    assert len(result.transcript["steps"]) == 4
    assert result.transcript["steps"][2]["response"] == REFERENCE_RESPONSE


def test_elicit_requires_turns():
    conv = family_conversation()
    empty = type(conv)(id="x", source="t", turns=())
    with pytest.raises(ValueError):
        elicit(empty, family_provider())


def test_elicit_empty_norms_response():
    result = elicit(family_conversation(), family_provider(norms_response=""))
    assert result.descriptions == []
    assert any("no recognized section header" in f for f in result.failures)


def test_elicit_effects_block_deleted():
    # hand-edited transcript with the effects section removed
    trimmed = REFERENCE_RESPONSE.split("Effects:")[0]
    result = elicit(family_conversation(), family_provider(norms_response=trimmed))
    kinds = {d.kind for d in result.descriptions}
    assert "violation" in kinds and "effect" not in kinds
    assert len([d for d in result.descriptions if d.kind == "violation"]) == 2


def test_elicit_is_idempotent_at_store_level():
    store = ProjectStore()
    conv = family_conversation()
    store.append("conversation_added", {"conversation": conv.to_dict()})

    first = elicit(conv, family_provider(), clock=lambda: 0.0)
    added1 = persist_elicitation(store, first)
    version = store.version
    hashes = sorted(d.id for d in store.state.descriptions.values())

    second = elicit(conv, family_provider(), clock=lambda: 0.0)
    added2 = persist_elicitation(store, second)
    assert added1 == 7 and added2 == 0
    assert store.version == version  # duplicate events were no-ops
    assert sorted(d.id for d in store.state.descriptions.values()) == hashes


def test_prompt_script_step_order_enforced():
    with pytest.raises(ValueError, match="steps out of order"):
        PromptScript(
            steps=(
                PromptStep("summary", "s"),
                PromptStep("translate", "t"),
            )
        )


def test_elicit_provider_failure_isolated_per_step():
    # norms step fails (provider exhausted) but earlier steps still land
    provider = ScriptedChatProvider(["translated", "A: B — friends"])
    result = elicit(family_conversation(), provider)
    assert result.descriptions == []
    assert result.failures
    assert result.transcript["steps"][2]["response"] is None
