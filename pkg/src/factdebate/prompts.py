"""Role prompt templates, role-set assembly, and prompt rendering.

Templates ship as plain-text files under factdebate/templates, keyed by
(role set, role, phase). Rendering is byte-exact placeholder substitution
with no other text transformation, so identical inputs always produce
identical prompts (and therefore cache hits).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping

from factdebate.core import Phase, RoleId, RoleSetName, Utterance

# The only placeholder names a template may use. {debate_sections} carries
# the judge's phase-grouped transcript; everything else is a scalar binding.
PLACEHOLDERS = frozenset(
    {
        "claim",
        "evidence",
        "oppo_argument",
        "poli_argument",
        "sci_argument",
        "jour_argument",
        "domain_inferred",
        "summary",
        "upcoming_round",
        "debate_sections",
    }
)

# Words kept per utterance when building the stop agent's round summary.
SUMMARY_WORDS_PER_UTTERANCE = 300

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

_SECTION_HEADERS = {
    Phase.OPENING: "--- Opening Statements ---",
    Phase.REBUTTAL: "--- Rebuttals ---",
    Phase.CLOSING: "--- Closing Statements ---",
}

_DISPLAY_NAMES = {
    RoleId.POLITICIAN: "Politician",
    RoleId.SCIENTIST: "Scientist",
    RoleId.JOURNALIST: "Journalist",
    RoleId.DOMAIN_EXPERT: "Domain Expert",
    RoleId.ADVOCATE: "Advocate",
    RoleId.CRITIC: "Critic",
    RoleId.JUDGE: "Judge",
    RoleId.STOP_AGENT: "Stop Agent",
    RoleId.SINGLE: "Single Agent",
}


class MissingPlaceholder(KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"template requires unbound placeholder {{{self.name}}}"


class UnknownTemplate(KeyError):
    pass


@dataclass(frozen=True)
class RoleSpec:
    id: RoleId
    role_set: RoleSetName
    system_prompt: str
    phase_templates: Mapping[Phase, str]
    speaking_priority: int

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self.id]


@dataclass(frozen=True)
class RoleSet:
    name: RoleSetName
    debaters: tuple[RoleSpec, ...]
    judge: RoleSpec
    stop_agent: RoleSpec


# (role_set, role, slot) -> template file. Role sets share files where the
# role behaves identically; trio politician/scientist keep the pair rebuttal
# wording, the closest shipped text for configurations with extra debaters.
_DEBATE_SLOTS = ("system", "opening", "rebuttal", "closing")


def _expertise_files(role: str) -> dict[str, str]:
    return {slot: f"expertise/{role}.{slot}.txt" for slot in _DEBATE_SLOTS}


def _position_files(role: str) -> dict[str, str]:
    files = {slot: f"position/{role}.{slot}.txt" for slot in _DEBATE_SLOTS}
    files["system"] = "position/debater.system.txt"
    return files


_TEMPLATE_FILES: dict[tuple[RoleSetName, RoleId, str], str] = {}


def _register(role_set: RoleSetName, role: RoleId, files: Mapping[str, str]) -> None:
    for slot, path in files.items():
        _TEMPLATE_FILES[(role_set, role, slot)] = path


_register(RoleSetName.POSITION_PAIR, RoleId.ADVOCATE, _position_files("advocate"))
_register(RoleSetName.POSITION_PAIR, RoleId.CRITIC, _position_files("critic"))
_register(
    RoleSetName.POSITION_PAIR,
    RoleId.JUDGE,
    {"system": "position/judge.system.txt", "judgment": "position/judge.judgment.txt"},
)

for _name in (RoleSetName.EXPERTISE_PAIR, RoleSetName.EXPERTISE_TRIO, RoleSetName.EXPERTISE_QUAD):
    _register(_name, RoleId.POLITICIAN, _expertise_files("politician"))
    _register(_name, RoleId.SCIENTIST, _expertise_files("scientist"))
    _register(
        _name,
        RoleId.JUDGE,
        {"system": "expertise/judge.system.txt", "judgment": "expertise/judge.judgment.txt"},
    )
for _name in (RoleSetName.EXPERTISE_TRIO, RoleSetName.EXPERTISE_QUAD):
    _register(_name, RoleId.JOURNALIST, _expertise_files("journalist"))
_register(RoleSetName.EXPERTISE_QUAD, RoleId.DOMAIN_EXPERT, _expertise_files("domain_expert"))

for _name in (
    RoleSetName.POSITION_PAIR,
    RoleSetName.EXPERTISE_PAIR,
    RoleSetName.EXPERTISE_TRIO,
    RoleSetName.EXPERTISE_QUAD,
):
    _register(
        _name,
        RoleId.STOP_AGENT,
        {"system": "shared/stop_agent.system.txt", "stop_check": "shared/stop_agent.stop_check.txt"},
    )

# Single-agent mode reuses the judge persona and verdict grammar.
_register(
    RoleSetName.SINGLE,
    RoleId.SINGLE,
    {"system": "expertise/judge.system.txt", "judgment": "expertise/judge.judgment.txt"},
)

_SPEAKING_ORDER: dict[RoleSetName, tuple[RoleId, ...]] = {
    RoleSetName.POSITION_PAIR: (RoleId.ADVOCATE, RoleId.CRITIC),
    RoleSetName.EXPERTISE_PAIR: (RoleId.POLITICIAN, RoleId.SCIENTIST),
    # The journalist speaks first and anchors the round for the others.
    RoleSetName.EXPERTISE_TRIO: (RoleId.JOURNALIST, RoleId.POLITICIAN, RoleId.SCIENTIST),
    RoleSetName.EXPERTISE_QUAD: (
        RoleId.JOURNALIST,
        RoleId.POLITICIAN,
        RoleId.SCIENTIST,
        RoleId.DOMAIN_EXPERT,
    ),
}

_PHASE_SLOTS = {
    Phase.OPENING: "opening",
    Phase.REBUTTAL: "rebuttal",
    Phase.CLOSING: "closing",
    Phase.JUDGMENT: "judgment",
    Phase.STOP_CHECK: "stop_check",
}


@lru_cache(maxsize=None)
def _read_template(relative_path: str) -> str:
    root = resources.files(__package__) / "templates"
    text = (root / relative_path).read_text(encoding="utf-8")
    # Template files end with a single conventional newline; strip it.
    return text[:-1] if text.endswith("\n") else text


def template_text(role_set: RoleSetName, role: RoleId, slot: str) -> str:
    """Raw template for (role set, role, slot); slot is a phase name or 'system'."""
    path = _TEMPLATE_FILES.get((role_set, role, slot))
    if path is None:
        raise UnknownTemplate(f"no template for ({role_set.value}, {role.value}, {slot})")
    return _read_template(path)


def template_keys() -> list[tuple[RoleSetName, RoleId, str]]:
    """Every (role set, role, slot) combination with a shipped template."""
    return sorted(_TEMPLATE_FILES, key=lambda key: (key[0].value, key[1].value, key[2]))


def domain_inference_template() -> str:
    return _read_template("expertise/domain_inference.txt")


def render_prompt(template: str, bindings: Mapping[str, str]) -> str:
    """Byte-exact placeholder substitution.

    Only declared placeholder names are substituted; every one present in the
    template must be bound or MissingPlaceholder is raised. Brace groups that
    are not declared placeholders (e.g. the literal "{specific domain}" format
    example) pass through untouched.
    """

    def _substitute(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in PLACEHOLDERS:
            return match.group(0)
        if name not in bindings:
            raise MissingPlaceholder(name)
        return bindings[name]

    return _PLACEHOLDER_RE.sub(_substitute, template)


@lru_cache(maxsize=None)
def get_role_set(name: RoleSetName) -> RoleSet:
    """Assemble the debater/judge/stop-agent specs for a configuration."""
    if name is RoleSetName.SINGLE:
        single = RoleSpec(
            id=RoleId.SINGLE,
            role_set=name,
            system_prompt=template_text(name, RoleId.SINGLE, "system"),
            phase_templates={Phase.JUDGMENT: template_text(name, RoleId.SINGLE, "judgment")},
            speaking_priority=1,
        )
        return RoleSet(name=name, debaters=(), judge=single, stop_agent=single)
    debaters = tuple(
        RoleSpec(
            id=role,
            role_set=name,
            system_prompt=template_text(name, role, "system"),
            phase_templates={
                phase: template_text(name, role, _PHASE_SLOTS[phase])
                for phase in (Phase.OPENING, Phase.REBUTTAL, Phase.CLOSING)
            },
            speaking_priority=priority,
        )
        for priority, role in enumerate(_SPEAKING_ORDER[name], start=1)
    )
    judge = RoleSpec(
        id=RoleId.JUDGE,
        role_set=name,
        system_prompt=template_text(name, RoleId.JUDGE, "system"),
        phase_templates={Phase.JUDGMENT: template_text(name, RoleId.JUDGE, "judgment")},
        speaking_priority=len(debaters) + 1,
    )
    stop_agent = RoleSpec(
        id=RoleId.STOP_AGENT,
        role_set=name,
        system_prompt=template_text(name, RoleId.STOP_AGENT, "system"),
        phase_templates={Phase.STOP_CHECK: template_text(name, RoleId.STOP_AGENT, "stop_check")},
        speaking_priority=len(debaters) + 2,
    )
    return RoleSet(name=name, debaters=debaters, judge=judge, stop_agent=stop_agent)


def _agent_letter(role: RoleId, role_set: RoleSet) -> str:
    for position, debater in enumerate(role_set.debaters):
        if debater.id is role:
            return chr(ord("A") + position)
    return "?"


def debate_sections(utterances: Iterable[Utterance], role_set: RoleSet) -> str:
    """Group debater utterances by phase for the judge prompt.

    Produces the "--- Opening Statements --- / Agent A: ..." blocks; phases
    with no utterances are omitted so partial transcripts stay clean. Returns
    "" for an empty transcript. When non-empty the block carries a trailing
    blank line, matching the {debate_sections} slot in the judge templates.
    """
    blocks: list[str] = []
    for phase in (Phase.OPENING, Phase.REBUTTAL, Phase.CLOSING):
        lines = [
            f"Agent {_agent_letter(u.role, role_set)}: {u.text}"
            for u in utterances
            if u.phase is phase
        ]
        if lines:
            blocks.append("\n\n".join([_SECTION_HEADERS[phase], *lines]))
    if not blocks:
        return ""
    return "\n\n".join(blocks) + "\n\n"


def truncate_words(text: str, max_words: int) -> str:
    words = text.split()
    if len(words) <= max_words:
        return text
    return " ".join(words[:max_words])


def stop_summary(utterances: Iterable[Utterance], role_set: RoleSet) -> str:
    """Per-round digest of debater arguments for the stop agent's {summary}."""
    by_round: dict[int, list[Utterance]] = {}
    for utterance in utterances:
        if utterance.phase in (Phase.OPENING, Phase.REBUTTAL, Phase.CLOSING):
            by_round.setdefault(utterance.round, []).append(utterance)
    display = {spec.id: spec.display_name for spec in role_set.debaters}
    blocks = []
    for round_index in sorted(by_round):
        group = by_round[round_index]
        kind = group[0].phase.value.lower()
        lines = [f"Round {round_index} ({kind}):"]
        lines.extend(
            f"{display.get(u.role, u.role.value.title())}: "
            f"{truncate_words(u.text, SUMMARY_WORDS_PER_UTTERANCE)}"
            for u in group
        )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def debater_bindings(
    speaker: RoleSpec,
    role_set: RoleSet,
    phase: Phase,
    claim_text: str,
    evidence_text: str,
    previous_round: Iterable[Utterance] = (),
    domain: str | None = None,
) -> dict[str, str]:
    """Bindings for one debater's prompt in one phase.

    Argument placeholders always refer to the previous round: the single
    {oppo_argument} slot gets the lone opponent's text in a pair, or a
    role-labelled concatenation when there are several opponents; the
    role-specific {poli,sci,jour}_argument slots get that role's text.
    """
    bindings = {"claim": claim_text, "evidence": evidence_text}
    if domain is not None:
        bindings["domain_inferred"] = domain
    prior = {u.role: u.text for u in previous_round}
    opponents = [
        (spec.display_name, prior[spec.id])
        for spec in role_set.debaters
        if spec.id is not speaker.id and spec.id in prior
    ]
    if len(opponents) == 1:
        bindings["oppo_argument"] = opponents[0][1]
    elif opponents:
        bindings["oppo_argument"] = "\n\n".join(
            f"{name}'s argument: {text}" for name, text in opponents
        )
    if RoleId.POLITICIAN in prior:
        bindings["poli_argument"] = prior[RoleId.POLITICIAN]
    if RoleId.SCIENTIST in prior:
        bindings["sci_argument"] = prior[RoleId.SCIENTIST]
    if RoleId.JOURNALIST in prior:
        bindings["jour_argument"] = prior[RoleId.JOURNALIST]
    return bindings


def judge_prompt(
    role_set: RoleSet,
    claim_text: str,
    evidence_text: str,
    utterances: Iterable[Utterance] = (),
) -> tuple[str, str]:
    """(system, user) pair for a judgment over the utterances so far."""
    judge = role_set.judge
    bindings = {
        "claim": claim_text,
        "evidence": evidence_text,
        "debate_sections": debate_sections(utterances, role_set),
    }
    return judge.system_prompt, render_prompt(judge.phase_templates[Phase.JUDGMENT], bindings)


def stop_prompt(
    role_set: RoleSet,
    claim_text: str,
    evidence_text: str,
    utterances: Iterable[Utterance],
    upcoming_round: str,
) -> tuple[str, str]:
    """(system, user) pair for the continue-or-stop check before a round."""
    stop_agent = role_set.stop_agent
    bindings = {
        "claim": claim_text,
        "evidence": evidence_text,
        "summary": stop_summary(utterances, role_set),
        "upcoming_round": upcoming_round,
    }
    return (
        stop_agent.system_prompt,
        render_prompt(stop_agent.phase_templates[Phase.STOP_CHECK], bindings),
    )


def domain_inference_prompt(claim_text: str) -> str:
    return render_prompt(domain_inference_template(), {"claim": claim_text})
