from __future__ import annotations

import pytest

from factdebate.core import Phase, RoleId, RoleSetName, TokenUsage, Utterance
from factdebate.prompts import (
    PLACEHOLDERS,
    MissingPlaceholder,
    debate_sections,
    debater_bindings,
    domain_inference_prompt,
    get_role_set,
    judge_prompt,
    render_prompt,
    stop_prompt,
    stop_summary,
    template_keys,
    template_text,
    truncate_words,
)


def _utterance(role, phase, round_index, text):
    return Utterance(role=role, phase=phase, round=round_index, text=text, token_usage=TokenUsage())


class TestRenderPrompt:
    def test_byte_exact_substitution(self):
        out = render_prompt("Claim: {claim}\nEvidence:{evidence}", {"claim": "A", "evidence": " B"})
        assert out == "Claim: A\nEvidence: B"

    def test_missing_placeholder_named(self):
        with pytest.raises(MissingPlaceholder) as err:
            render_prompt("has {summary} slot", {})
        assert err.value.name == "summary"

    def test_undeclared_brace_groups_pass_through(self):
        out = render_prompt("DOMAIN: {specific domain} and {claim}", {"claim": "X"})
        assert out == "DOMAIN: {specific domain} and X"

    def test_no_other_transformation(self):
        text = "  spaced   {claim}  \n\nlines "
        assert render_prompt(text, {"claim": "C"}) == "  spaced   C  \n\nlines "


class TestRoleSets:
    def test_expertise_pair_order(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        assert [d.id for d in rs.debaters] == [RoleId.POLITICIAN, RoleId.SCIENTIST]
        assert rs.judge.id is RoleId.JUDGE
        assert rs.stop_agent.id is RoleId.STOP_AGENT

    def test_position_pair_order(self):
        rs = get_role_set(RoleSetName.POSITION_PAIR)
        assert [d.id for d in rs.debaters] == [RoleId.ADVOCATE, RoleId.CRITIC]

    def test_journalist_speaks_first_in_trio(self):
        rs = get_role_set(RoleSetName.EXPERTISE_TRIO)
        assert [d.id for d in rs.debaters] == [
            RoleId.JOURNALIST,
            RoleId.POLITICIAN,
            RoleId.SCIENTIST,
        ]

    def test_quad_adds_domain_expert_last(self):
        rs = get_role_set(RoleSetName.EXPERTISE_QUAD)
        assert rs.debaters[-1].id is RoleId.DOMAIN_EXPERT
        assert len(rs.debaters) == 4

    def test_single_uses_judge_grammar(self):
        rs = get_role_set(RoleSetName.SINGLE)
        assert rs.debaters == ()
        assert "[VERDICT]: TRUE / FALSE / HALF-TRUE" in rs.judge.phase_templates[Phase.JUDGMENT]

    def test_every_template_declares_only_known_placeholders(self):
        import re

        for role_set, role, slot in template_keys():
            text = template_text(role_set, role, slot)
            for name in re.findall(r"\{([a-z_]+)\}", text):
                assert name in PLACEHOLDERS, f"{role_set}/{role}/{slot} uses unknown {{{name}}}"


class TestPaperAnchoredPhrases:
    def test_expertise_opening_contains_position_line(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        text = render_prompt(
            rs.debaters[0].phase_templates[Phase.OPENING], {"claim": "X", "evidence": "E"}
        )
        assert "Begin your argument with your position." in text

    def test_stop_agent_contains_decision_line(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        _, user = stop_prompt(rs, "X", "E", [], "closing")
        assert "DECISION: CONTINUE or STOP" in user
        assert "about to listen to the closing round" in user

    def test_judge_answer_format(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        _, user = judge_prompt(rs, "X", "E", [])
        assert "[REASON]: your justification" in user
        assert "[VERDICT]: TRUE / FALSE / HALF-TRUE" in user

    def test_domain_inference_keeps_literal_format_example(self):
        text = domain_inference_prompt("claim text")
        assert "DOMAIN: {specific domain}" in text
        assert "the claim:claim text" in text


class TestDebateSections:
    def _pair(self):
        return get_role_set(RoleSetName.EXPERTISE_PAIR)

    def test_empty_transcript_is_empty(self):
        assert debate_sections([], self._pair()) == ""

    def test_opening_only(self):
        block = debate_sections(
            [
                _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
                _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
            ],
            self._pair(),
        )
        assert block == "--- Opening Statements ---\n\nAgent A: P1\n\nAgent B: S1\n\n"

    def test_full_three_rounds(self):
        utterances = [
            _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
            _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
            _utterance(RoleId.POLITICIAN, Phase.REBUTTAL, 2, "P2"),
            _utterance(RoleId.SCIENTIST, Phase.REBUTTAL, 2, "S2"),
            _utterance(RoleId.POLITICIAN, Phase.CLOSING, 3, "P3"),
            _utterance(RoleId.SCIENTIST, Phase.CLOSING, 3, "S3"),
        ]
        block = debate_sections(utterances, self._pair())
        assert block == (
            "--- Opening Statements ---\n\nAgent A: P1\n\nAgent B: S1\n\n"
            "--- Rebuttals ---\n\nAgent A: P2\n\nAgent B: S2\n\n"
            "--- Closing Statements ---\n\nAgent A: P3\n\nAgent B: S3\n\n"
        )

    def test_judgments_and_stop_checks_excluded(self):
        utterances = [
            _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
            _utterance(RoleId.STOP_AGENT, Phase.STOP_CHECK, 1, "DECISION: STOP"),
            _utterance(RoleId.JUDGE, Phase.JUDGMENT, 1, "[VERDICT]: TRUE"),
        ]
        block = debate_sections(utterances, self._pair())
        assert "DECISION" not in block and "VERDICT" not in block


class TestStopSummary:
    def test_rounds_grouped_with_display_names(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        summary = stop_summary(
            [
                _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
                _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
                _utterance(RoleId.POLITICIAN, Phase.REBUTTAL, 2, "P2"),
            ],
            rs,
        )
        assert summary == (
            "Round 1 (opening):\nPolitician: P1\nScientist: S1\n\nRound 2 (rebuttal):\nPolitician: P2"
        )

    def test_utterances_truncated_to_word_limit(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        long_text = " ".join(f"w{i}" for i in range(400))
        summary = stop_summary([_utterance(RoleId.POLITICIAN, Phase.OPENING, 1, long_text)], rs)
        assert "w299" in summary and "w300" not in summary

    def test_truncate_words_noop_under_limit(self):
        assert truncate_words("a b c", 5) == "a b c"


class TestDebaterBindings:
    def test_pair_rebuttal_gets_single_opponent_text(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        politician = rs.debaters[0]
        previous = [
            _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
            _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
        ]
        bindings = debater_bindings(politician, rs, Phase.REBUTTAL, "C", "E", previous)
        assert bindings["oppo_argument"] == "S1"

    def test_trio_opponents_are_labelled(self):
        rs = get_role_set(RoleSetName.EXPERTISE_TRIO)
        politician = next(d for d in rs.debaters if d.id is RoleId.POLITICIAN)
        previous = [
            _utterance(RoleId.JOURNALIST, Phase.OPENING, 1, "J1"),
            _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
            _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
        ]
        bindings = debater_bindings(politician, rs, Phase.REBUTTAL, "C", "E", previous)
        assert bindings["oppo_argument"] == "Journalist's argument: J1\n\nScientist's argument: S1"
        assert bindings["poli_argument"] == "P1"
        assert bindings["sci_argument"] == "S1"
        assert bindings["jour_argument"] == "J1"

    def test_journalist_rebuttal_renders_with_role_slots(self):
        rs = get_role_set(RoleSetName.EXPERTISE_TRIO)
        journalist = rs.debaters[0]
        previous = [
            _utterance(RoleId.JOURNALIST, Phase.OPENING, 1, "J1"),
            _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
            _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
        ]
        bindings = debater_bindings(journalist, rs, Phase.REBUTTAL, "C", "E", previous)
        text = render_prompt(journalist.phase_templates[Phase.REBUTTAL], bindings)
        assert "Politician's argument: P1" in text
        assert "Scientist's argument: S1" in text

    def test_journalist_closing_uses_previous_round_rebuttals(self):
        rs = get_role_set(RoleSetName.EXPERTISE_TRIO)
        journalist = rs.debaters[0]
        previous = [
            _utterance(RoleId.JOURNALIST, Phase.REBUTTAL, 2, "J2"),
            _utterance(RoleId.POLITICIAN, Phase.REBUTTAL, 2, "P2"),
            _utterance(RoleId.SCIENTIST, Phase.REBUTTAL, 2, "S2"),
        ]
        bindings = debater_bindings(journalist, rs, Phase.CLOSING, "C", "E", previous)
        text = render_prompt(journalist.phase_templates[Phase.CLOSING], bindings)
        assert "Politician's rebuttal: P2" in text
        assert "Scientist's rebuttal: S2" in text

    def test_domain_expert_templates_render_with_domain(self):
        rs = get_role_set(RoleSetName.EXPERTISE_QUAD)
        expert = rs.debaters[-1]
        previous = [
            _utterance(RoleId.JOURNALIST, Phase.OPENING, 1, "J1"),
            _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
            _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
            _utterance(RoleId.DOMAIN_EXPERT, Phase.OPENING, 1, "D1"),
        ]
        bindings = debater_bindings(expert, rs, Phase.REBUTTAL, "C", "E", previous, domain="economy")
        text = render_prompt(expert.phase_templates[Phase.REBUTTAL], bindings)
        assert "specialist in the economy field" in text
        assert "Journalist's argument: J1" in text
        system = render_prompt(expert.system_prompt, bindings)
        assert "specialist in economy" in system

    def test_opening_needs_no_arguments(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        bindings = debater_bindings(rs.debaters[0], rs, Phase.OPENING, "C", "E", [])
        text = render_prompt(rs.debaters[0].phase_templates[Phase.OPENING], bindings)
        assert "Claim: C" in text


class TestJudgePromptAssembly:
    def test_shared_evidence_identical_for_all_roles(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        evidence = "[1] shared block"
        rendered = [
            render_prompt(
                debater.phase_templates[Phase.OPENING],
                debater_bindings(debater, rs, Phase.OPENING, "C", evidence, []),
            )
            for debater in rs.debaters
        ]
        _, judge_user = judge_prompt(rs, "C", evidence, [])
        for text in rendered + [judge_user]:
            assert evidence in text

    def test_partial_transcript_omits_empty_sections(self):
        rs = get_role_set(RoleSetName.EXPERTISE_PAIR)
        _, user = judge_prompt(
            rs,
            "C",
            "E",
            [
                _utterance(RoleId.POLITICIAN, Phase.OPENING, 1, "P1"),
                _utterance(RoleId.SCIENTIST, Phase.OPENING, 1, "S1"),
            ],
        )
        assert "--- Opening Statements ---" in user
        assert "--- Rebuttals ---" not in user
        assert "--- Closing Statements ---" not in user

    def test_single_mode_has_no_section_gap(self):
        rs = get_role_set(RoleSetName.SINGLE)
        _, user = judge_prompt(rs, "C", "E", [])
        assert "Evidence: E\n\n==========" in user
