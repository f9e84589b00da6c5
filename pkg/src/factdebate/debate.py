"""Debate state machine.

Rounds run in the fixed order opening, rebuttal(s), closing. Every debater
speaks once per round over the same evidence block; after each round the
controller scores the transcript, and when early stopping is enabled the
interim verdict of the stopping round becomes final. The terminal round
never runs a stop check.
"""

from __future__ import annotations

import logging
from typing import MutableMapping, Sequence

from factdebate import controller, parsing, prompts, retrieval
from factdebate.core import (
    Claim,
    DebateConfig,
    DebateTranscript,
    EvidencePool,
    Label,
    Phase,
    RoleId,
    RoleSetName,
    RoundScores,
    RunRecord,
    TokenUsage,
    Utterance,
    Verdict,
    fingerprint_of,
)
from factdebate.gateway import BackendSpec, GatewayError, GenerationRequest, LLMGateway
from factdebate.prompts import RoleSet, RoleSpec

logger = logging.getLogger(__name__)

DEFAULT_DOMAIN = "general"


class DebateAborted(RuntimeError):
    """A debater call failed; the partial transcript is preserved on the error."""

    def __init__(self, claim_id: str, role: RoleId, cause: Exception, utterances: Sequence[Utterance]):
        super().__init__(f"debate aborted for claim {claim_id} at {role.value}: {cause}")
        self.claim_id = claim_id
        self.role = role
        self.cause = cause
        self.utterances = tuple(utterances)


def round_kind(round_index: int, max_rounds: int) -> Phase:
    """Round 1 opens, the last round closes, everything between rebuts."""
    if round_index == 1:
        return Phase.OPENING
    if round_index == max_rounds:
        return Phase.CLOSING
    return Phase.REBUTTAL


def infer_domain(
    claim: Claim,
    gateway: LLMGateway,
    backend: BackendSpec,
    config: DebateConfig,
    cache: MutableMapping[str, str] | None = None,
) -> str:
    """One-word(ish) domain for the claim, cached per claim id.

    Falls back to "general" with a warning when the model output carries no
    DOMAIN line.
    """
    if cache is not None and claim.id in cache:
        return cache[claim.id]
    request = GenerationRequest(
        system_prompt="",
        messages=(("user", prompts.domain_inference_prompt(claim.text)),),
        temperature=config.generation.temperature,
        max_completion_tokens=config.generation.max_completion_tokens,
        seed=config.generation.seed,
    )
    result = gateway.generate(request, backend)
    try:
        domain = parsing.parse_domain(result.text)
    except parsing.UnparseableDomain:
        logger.warning("no domain parsed for claim %s; using %r", claim.id, DEFAULT_DOMAIN)
        domain = DEFAULT_DOMAIN
    if cache is not None:
        cache[claim.id] = domain
    return domain


def _speak(
    speaker: RoleSpec,
    phase: Phase,
    round_index: int,
    claim: Claim,
    evidence_text: str,
    role_set: RoleSet,
    previous_round: Sequence[Utterance],
    domain: str | None,
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
) -> Utterance:
    bindings = prompts.debater_bindings(
        speaker, role_set, phase, claim.text, evidence_text, previous_round, domain
    )
    user = prompts.render_prompt(speaker.phase_templates[phase], bindings)
    system = prompts.render_prompt(speaker.system_prompt, bindings)
    request = GenerationRequest(
        system_prompt=system,
        messages=(("user", user),),
        temperature=config.generation.temperature,
        max_completion_tokens=config.generation.max_completion_tokens,
        seed=config.generation.seed,
    )
    result = gateway.generate(request, backend)
    return Utterance(
        role=speaker.id,
        phase=phase,
        round=round_index,
        text=result.text,
        token_usage=result.token_usage,
    )


def run_round(
    utterances: Sequence[Utterance],
    kind: Phase,
    role_set: RoleSet,
    claim: Claim,
    evidence_text: str,
    round_index: int,
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
    domain: str | None = None,
) -> list[Utterance]:
    """Every debater speaks once, in speaking order.

    Rebuttal and closing prompts embed the opposing arguments from the
    previous round. A single debater failure aborts the whole debate.
    """
    if kind is Phase.OPENING and round_index != 1:
        raise ValueError("opening is only legal as the first round")
    previous_round = [u for u in utterances if u.round == round_index - 1 and _is_argument(u)]
    produced: list[Utterance] = []
    for speaker in role_set.debaters:
        try:
            produced.append(
                _speak(
                    speaker,
                    kind,
                    round_index,
                    claim,
                    evidence_text,
                    role_set,
                    previous_round,
                    domain,
                    config,
                    gateway,
                    backend,
                )
            )
        except GatewayError as exc:
            raise DebateAborted(claim.id, speaker.id, exc, [*utterances, *produced]) from exc
    return produced


def _is_argument(utterance: Utterance) -> bool:
    return utterance.phase in (Phase.OPENING, Phase.REBUTTAL, Phase.CLOSING)


def judge_verdict(
    utterances: Sequence[Utterance],
    claim: Claim,
    evidence_text: str,
    role_set: RoleSet,
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
) -> Verdict:
    """Final-style judgment over the transcript so far.

    Raises VerdictUnparseable after the configured re-asks fail; callers map
    that to a flagged HALF-TRUE prediction.
    """
    verdict, text, _, _ = controller.judge_with_reasks(
        utterances, claim, evidence_text, role_set, config, gateway, backend
    )
    if verdict is None:
        raise controller.VerdictUnparseable(f"claim {claim.id}: {text[:120]!r}")
    return verdict


def _usage_totals(utterances: Sequence[Utterance]) -> tuple[TokenUsage, dict[str, int], dict[str, int]]:
    total = TokenUsage()
    by_role: dict[str, int] = {}
    by_phase: dict[str, int] = {}
    for utterance in utterances:
        total = total + utterance.token_usage
        by_role[utterance.role.value] = (
            by_role.get(utterance.role.value, 0) + utterance.token_usage.total
        )
        by_phase[utterance.phase.value] = (
            by_phase.get(utterance.phase.value, 0) + utterance.token_usage.total
        )
    return total, by_role, by_phase


def _finish(
    claim: Claim,
    config: DebateConfig,
    backend: BackendSpec,
    utterances: Sequence[Utterance],
    round_scores: Sequence[RoundScores],
    predicted: Label,
    rounds_used: int,
    flags: Sequence[str],
    transcript_ref: str,
) -> tuple[RunRecord, DebateTranscript]:
    usage, by_role, by_phase = _usage_totals(utterances)
    transcript = DebateTranscript(
        claim_id=claim.id,
        utterances=tuple(utterances),
        config_fingerprint=fingerprint_of({**config.to_dict(), "model": backend.model_name}),
    )
    record = RunRecord(
        claim_id=claim.id,
        predicted=predicted,
        gold=claim.gold_label,
        rounds_used=rounds_used,
        round_scores=tuple(round_scores),
        total_tokens=usage.total,
        prompt_tokens=usage.prompt,
        completion_tokens=usage.completion,
        tokens_by_role=by_role,
        tokens_by_phase=by_phase,
        transcript_ref=transcript_ref,
        flags=tuple(flags),
    )
    return record, transcript


def run_debate(
    claim: Claim,
    pool: EvidencePool,
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
    transcript_ref: str = "",
    domain_cache: MutableMapping[str, str] | None = None,
) -> tuple[RunRecord, DebateTranscript]:
    """Run one claim through the full debate pipeline.

    All rounds are scored (so a fixed-round pass doubles as the calibration
    caching pass); early_stop_enabled only gates whether the stop decision is
    acted upon. With early stopping disabled, rounds_used == max_rounds.
    """
    if pool.claim_id != claim.id:
        raise ValueError(f"pool belongs to claim {pool.claim_id!r}, not {claim.id!r}")
    if config.role_set is RoleSetName.SINGLE:
        return run_single(claim, pool, config, gateway, backend, transcript_ref)
    role_set = prompts.get_role_set(config.role_set)
    evidence_text = retrieval.format_evidence(pool, config.evidence_char_budget)
    domain = None
    if config.role_set is RoleSetName.EXPERTISE_QUAD:
        domain = infer_domain(claim, gateway, backend, config, domain_cache)

    utterances: list[Utterance] = []
    round_scores = []
    flags: list[str] = []
    predicted: Label | None = None
    final_verdict: Verdict | None = None
    rounds_used = 0
    for round_index in range(1, config.max_rounds + 1):
        kind = round_kind(round_index, config.max_rounds)
        utterances.extend(
            run_round(
                utterances,
                kind,
                role_set,
                claim,
                evidence_text,
                round_index,
                config,
                gateway,
                backend,
                domain,
            )
        )
        upcoming = (
            round_kind(round_index + 1, config.max_rounds).value.lower()
            if round_index < config.max_rounds
            else None
        )
        scored = controller.score_round(
            utterances,
            claim,
            evidence_text,
            role_set,
            config,
            gateway,
            backend,
            round_index,
            upcoming,
        )
        utterances.extend(scored.utterances)
        round_scores.append(scored.scores)
        if scored.flag and scored.flag not in flags:
            flags.append(scored.flag)
        rounds_used = round_index
        final_verdict = scored.verdict
        stopping = (
            round_index < config.max_rounds
            and config.early_stop_enabled
            and scored.scores.stop_margin is not None
            and controller.should_stop(
                scored.scores.stop_margin, scored.scores.confidence, config.tau_s, config.tau_v
            )
        )
        if stopping:
            predicted = scored.scores.interim_label
            break
    if predicted is None:
        # Ran to the terminal round: the parsed final verdict wins; an
        # unparseable one falls back to the flagged conservative default.
        if final_verdict is not None:
            predicted = final_verdict.label
        else:
            predicted = Label.HALF_TRUE
            if "verdict_unparseable" not in flags:
                flags.append("verdict_unparseable")
    return _finish(
        claim, config, backend, utterances, round_scores, predicted, rounds_used, flags, transcript_ref
    )


def run_single(
    claim: Claim,
    pool: EvidencePool,
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
    transcript_ref: str = "",
) -> tuple[RunRecord, DebateTranscript]:
    """Single-agent pass: same evidence formatting and verdict grammar, one round."""
    role_set = prompts.get_role_set(RoleSetName.SINGLE)
    evidence_text = retrieval.format_evidence(pool, config.evidence_char_budget)
    flags: list[str] = []
    verdict, text, usage, probe_probs = controller.judge_with_reasks(
        (), claim, evidence_text, role_set, config, gateway, backend
    )
    if verdict is not None:
        predicted = verdict.label
    else:
        predicted = Label.HALF_TRUE
        flags.append("verdict_unparseable")
    if probe_probs is not None:
        label_probs = {
            label: probe_probs[token]
            for label, token in zip(
                (Label.TRUE, Label.HALF_TRUE, Label.FALSE), config.label_probe_tokens
            )
        }
        confidence, _ = controller.verdict_confidence(label_probs)
    elif verdict is not None:
        confidence = 1.0 - 1e-6
    else:
        confidence = 1.0 / 3.0
    utterance = Utterance(
        role=RoleId.SINGLE,
        phase=Phase.JUDGMENT,
        round=1,
        text=text,
        token_usage=usage,
    )
    scores = RoundScores(round=1, stop_margin=None, confidence=confidence, interim_label=predicted)
    return _finish(
        claim, config, backend, [utterance], [scores], predicted, 1, flags, transcript_ref
    )
