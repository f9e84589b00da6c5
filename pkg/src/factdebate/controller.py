"""Dual-threshold early-termination controller.

After each debate round two signals are computed: the stop margin
s = p(STOP) - p(CONTINUE) from the stop agent's decision tokens, and the
verdict confidence c = max label probability from the round judge. The
debate terminates early only when s >= tau_s and c >= tau_v; otherwise it
proceeds to the next round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from factdebate import parsing, prompts
from factdebate.core import (
    LABEL_ORDER,
    Claim,
    DebateConfig,
    Label,
    Phase,
    RoleId,
    RoundScores,
    TokenUsage,
    UnparseableLabel,
    Utterance,
    Verdict,
)
from factdebate.gateway import (
    FALLBACK_EPSILON,
    BackendSpec,
    GenerationRequest,
    LLMGateway,
)
from factdebate.prompts import RoleSet

logger = logging.getLogger(__name__)

STOP_TOKEN = "STOP"
CONTINUE_TOKEN = "CONTINUE"

# Extra attempts after a first unparseable judge verdict.
JUDGE_REASKS = 2

_REASK_MESSAGE = (
    "Your previous response could not be parsed. Respond again strictly in the format:\n"
    "[REASON]: your justification\n"
    "[VERDICT]: TRUE / FALSE / HALF-TRUE"
)

_DISTRIBUTION_TOLERANCE = 1e-9


class NotADistribution(ValueError):
    pass


class VerdictUnparseable(RuntimeError):
    """Judge output stayed unparseable through all re-asks."""


def stop_margin(p_stop: float, p_continue: float) -> float:
    """s = p(STOP) - p(CONTINUE) for a two-token decision distribution."""
    for name, p in (("p_stop", p_stop), ("p_continue", p_continue)):
        if not 0.0 < p < 1.0:
            raise NotADistribution(f"{name} out of (0, 1): {p}")
    if abs(p_stop + p_continue - 1.0) > _DISTRIBUTION_TOLERANCE:
        raise NotADistribution(f"probabilities sum to {p_stop + p_continue}, not 1")
    return p_stop - p_continue


def verdict_confidence(label_probs: Mapping[Label, float]) -> tuple[float, Label]:
    """Max label probability and its argmax.

    Ties break deterministically in the order TRUE < HALF-TRUE < FALSE.
    """
    if set(label_probs) != set(LABEL_ORDER):
        raise NotADistribution(f"expected the three labels, got {sorted(label_probs)}")
    total = sum(label_probs.values())
    if abs(total - 1.0) > _DISTRIBUTION_TOLERANCE:
        raise NotADistribution(f"label probabilities sum to {total}, not 1")
    if any(p <= 0.0 for p in label_probs.values()):
        raise NotADistribution("label probabilities must be positive")
    best = max(LABEL_ORDER, key=lambda label: label_probs[label])
    return label_probs[best], best


def should_stop(s: float, c: float, tau_s: float, tau_v: float) -> bool:
    """Terminate early only when both thresholds are met (inclusive)."""
    return s >= tau_s and c >= tau_v


@dataclass(frozen=True)
class ScoredRound:
    """Everything the scoring pass of one round produced."""

    scores: RoundScores
    verdict: Verdict | None
    utterances: tuple[Utterance, ...]
    flag: str | None = None


def judge_with_reasks(
    utterances: Sequence[Utterance],
    claim: Claim,
    evidence_text: str,
    role_set: RoleSet,
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
) -> tuple[Verdict | None, str, TokenUsage, dict[str, float] | None]:
    """Run the judge over the transcript so far, re-asking on parse failure.

    Returns (verdict or None after all re-asks, last text, summed token
    usage over attempts, probe probabilities from the first attempt).
    """
    system, user = prompts.judge_prompt(role_set, claim.text, evidence_text, utterances)
    messages: list[tuple[str, str]] = [("user", user)]
    usage = TokenUsage()
    probe_probs: dict[str, float] | None = None
    text = ""
    for attempt in range(1 + JUDGE_REASKS):
        request = GenerationRequest(
            system_prompt=system,
            messages=tuple(messages),
            temperature=config.generation.temperature,
            max_completion_tokens=config.generation.max_completion_tokens,
            probe_tokens=config.label_probe_tokens,
            seed=config.generation.seed,
        )
        result = gateway.generate(request, backend)
        usage = usage + result.token_usage
        text = result.text
        if attempt == 0:
            probe_probs = result.probe_probs
        try:
            return parsing.parse_verdict(text), text, usage, probe_probs
        except UnparseableLabel:
            logger.warning(
                "unparseable judge verdict for claim %s (attempt %d/%d)",
                claim.id,
                attempt + 1,
                1 + JUDGE_REASKS,
            )
            messages.append(("assistant", text))
            messages.append(("user", _REASK_MESSAGE))
    return None, text, usage, probe_probs


def _label_probs_from_probes(
    probe_probs: Mapping[str, float], probe_tokens: tuple[str, str, str]
) -> dict[Label, float]:
    return {label: probe_probs[token] for label, token in zip(LABEL_ORDER, probe_tokens)}


def score_round(
    utterances: Sequence[Utterance],
    claim: Claim,
    evidence_text: str,
    role_set: RoleSet,
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
    round_index: int,
    upcoming_round: str | None,
) -> ScoredRound:
    """Compute the round's stop margin, confidence, and interim verdict.

    Two sequential model calls: the stop agent probed for STOP/CONTINUE
    (skipped on the terminal round, when upcoming_round is None), then the
    round judge probed for the three label tokens. When the backend exposes
    no usable probabilities, degenerate distributions derived from the
    generated text keep the decision rule intact; a stop check that cannot
    be parsed at all conservatively continues the debate.
    """
    produced: list[Utterance] = []
    margin: float | None = None
    if upcoming_round is not None:
        system, user = prompts.stop_prompt(
            role_set, claim.text, evidence_text, utterances, upcoming_round
        )
        request = GenerationRequest(
            system_prompt=system,
            messages=(("user", user),),
            temperature=config.generation.temperature,
            max_completion_tokens=config.generation.max_completion_tokens,
            probe_tokens=(STOP_TOKEN, CONTINUE_TOKEN),
            seed=config.generation.seed,
        )
        result = gateway.generate(request, backend)
        probs = result.probe_probs
        if probs is None:
            logger.warning("stop decision unreadable for claim %s; continuing debate", claim.id)
            probs = {STOP_TOKEN: FALLBACK_EPSILON, CONTINUE_TOKEN: 1.0 - FALLBACK_EPSILON}
        margin = stop_margin(probs[STOP_TOKEN], probs[CONTINUE_TOKEN])
        produced.append(
            Utterance(
                role=RoleId.STOP_AGENT,
                phase=Phase.STOP_CHECK,
                round=round_index,
                text=result.text,
                token_usage=result.token_usage,
            )
        )

    verdict, text, usage, probe_probs = judge_with_reasks(
        utterances, claim, evidence_text, role_set, config, gateway, backend
    )
    flag: str | None = None
    if probe_probs is not None:
        label_probs = _label_probs_from_probes(probe_probs, config.label_probe_tokens)
    elif verdict is not None:
        label_probs = _label_probs_from_probes(
            parsing.label_fallback_probs(verdict.label, config.label_probe_tokens),
            config.label_probe_tokens,
        )
    else:
        label_probs = None
    if label_probs is not None:
        confidence, interim = verdict_confidence(label_probs)
    else:
        # Neither probes nor a parseable verdict: conservative default at the
        # minimum possible three-way confidence.
        confidence, interim = 1.0 / 3.0, Label.HALF_TRUE
        flag = "verdict_unparseable"
    judge_role = role_set.judge.id
    produced.append(
        Utterance(
            role=judge_role,
            phase=Phase.JUDGMENT,
            round=round_index,
            text=text,
            token_usage=usage,
        )
    )
    scores = RoundScores(
        round=round_index,
        stop_margin=margin,
        confidence=confidence,
        interim_label=interim,
    )
    return ScoredRound(scores=scores, verdict=verdict, utterances=tuple(produced), flag=flag)
