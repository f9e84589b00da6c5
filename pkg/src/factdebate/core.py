"""Domain vocabulary shared by every other module.

Pure values only: nothing here performs I/O or calls a model. All types are
immutable after construction, so instances can be shared freely between
threads.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping


class UnparseableLabel(ValueError):
    """Text does not contain one of the three verdict labels."""


class Label(str, Enum):
    """Three-way verdict for a claim."""

    TRUE = "TRUE"
    HALF_TRUE = "HALF-TRUE"
    FALSE = "FALSE"

    def __str__(self) -> str:
        return self.value


# Canonical order for tie-breaking, matrix axes, and reports.
LABEL_ORDER: tuple[Label, Label, Label] = (Label.TRUE, Label.HALF_TRUE, Label.FALSE)

_EDGE_CHARS = " \t\r\n\"'`*_.,:;!?()[]{}<>|~-"
_HALF_TRUE_RE = re.compile(r"^HALF[ _-]TRUE$")


def parse_label(text: str) -> Label:
    """Parse a verdict label, tolerating case and edge punctuation.

    Accepts TRUE, FALSE, and HALF-TRUE, including the "HALF TRUE" and
    "HALF_TRUE" spellings. Anything else raises UnparseableLabel; the
    grammar is deliberately closed.
    """
    token = re.sub(r"\s+", " ", text.strip(_EDGE_CHARS).upper())
    if token == "TRUE":
        return Label.TRUE
    if token == "FALSE":
        return Label.FALSE
    if _HALF_TRUE_RE.match(token):
        return Label.HALF_TRUE
    raise UnparseableLabel(f"not a verdict label: {text!r}")


class PoolSource(str, Enum):
    RETRIEVED = "RETRIEVED"
    GOLD = "GOLD"


class RoleId(str, Enum):
    POLITICIAN = "POLITICIAN"
    SCIENTIST = "SCIENTIST"
    JOURNALIST = "JOURNALIST"
    DOMAIN_EXPERT = "DOMAIN_EXPERT"
    ADVOCATE = "ADVOCATE"
    CRITIC = "CRITIC"
    JUDGE = "JUDGE"
    STOP_AGENT = "STOP_AGENT"
    SINGLE = "SINGLE"


class Phase(str, Enum):
    OPENING = "OPENING"
    REBUTTAL = "REBUTTAL"
    CLOSING = "CLOSING"
    JUDGMENT = "JUDGMENT"
    STOP_CHECK = "STOP_CHECK"


class RoleSetName(str, Enum):
    SINGLE = "single"
    POSITION_PAIR = "position"
    EXPERTISE_PAIR = "expertise"
    EXPERTISE_TRIO = "trio"
    EXPERTISE_QUAD = "quad"


@dataclass(frozen=True)
class Claim:
    id: str
    text: str
    gold_label: Label | None = None
    gold_evidence_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("claim id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"claim {self.id!r} has empty text")
        object.__setattr__(self, "gold_evidence_ids", tuple(self.gold_evidence_ids))


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class EvidenceSnippet:
    doc_id: str
    rank: int
    score: float
    text: str

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"snippet rank must be 1-based, got {self.rank}")
        if not -1.0 <= self.score <= 1.0:
            raise ValueError(f"cosine score out of [-1, 1]: {self.score}")


@dataclass(frozen=True)
class EvidencePool:
    """Ranked evidence shared verbatim by every agent in one debate."""

    claim_id: str
    snippets: tuple[EvidenceSnippet, ...]
    source: PoolSource

    def __post_init__(self) -> None:
        object.__setattr__(self, "snippets", tuple(self.snippets))
        ranks = [s.rank for s in self.snippets]
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError(f"snippet ranks must be contiguous 1..n, got {ranks}")
        if self.source is PoolSource.RETRIEVED:
            for prev, cur in zip(self.snippets, self.snippets[1:]):
                if cur.score > prev.score:
                    raise ValueError("retrieved pool must be sorted by descending score")
                if cur.score == prev.score and cur.doc_id <= prev.doc_id:
                    raise ValueError("score ties must be ordered by ascending doc_id")


@dataclass(frozen=True)
class TokenUsage:
    prompt: int = 0
    completion: int = 0

    @property
    def total(self) -> int:
        return self.prompt + self.completion

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.prompt + other.prompt, self.completion + other.completion)


@dataclass(frozen=True)
class Utterance:
    role: RoleId
    phase: Phase
    round: int
    text: str
    token_usage: TokenUsage = TokenUsage()

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "phase": self.phase.value,
            "round": self.round,
            "text": self.text,
            "prompt_tokens": self.token_usage.prompt,
            "completion_tokens": self.token_usage.completion,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Utterance":
        return cls(
            role=RoleId(data["role"]),
            phase=Phase(data["phase"]),
            round=int(data["round"]),
            text=data["text"],
            token_usage=TokenUsage(int(data["prompt_tokens"]), int(data["completion_tokens"])),
        )


@dataclass(frozen=True)
class DebateTranscript:
    claim_id: str
    utterances: tuple[Utterance, ...]
    config_fingerprint: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))
        rounds = [u.round for u in self.utterances]
        if rounds != sorted(rounds):
            raise ValueError("utterances must be ordered by round")
        judged = [u.round for u in self.utterances if u.phase is Phase.JUDGMENT]
        if len(judged) != len(set(judged)):
            raise ValueError("at most one judgment per round")


@dataclass(frozen=True)
class Verdict:
    reason: str
    label: Label
    raw_text: str


@dataclass(frozen=True)
class RoundScores:
    """Per-round controller signals.

    stop_margin is None on the terminal round, which never runs a stop
    check (the last scheduled round is always final).
    """

    round: int
    stop_margin: float | None
    confidence: float
    interim_label: Label

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        if self.stop_margin is not None and not -1.0 <= self.stop_margin <= 1.0:
            raise ValueError(f"stop margin out of [-1, 1]: {self.stop_margin}")
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence out of (0, 1]: {self.confidence}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "stop_margin": self.stop_margin,
            "confidence": self.confidence,
            "interim_label": self.interim_label.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RoundScores":
        margin = data["stop_margin"]
        return cls(
            round=int(data["round"]),
            stop_margin=None if margin is None else float(margin),
            confidence=float(data["confidence"]),
            interim_label=Label(data["interim_label"]),
        )


@dataclass(frozen=True)
class RunRecord:
    """One claim's verification outcome plus its accounting."""

    claim_id: str
    predicted: Label
    gold: Label | None
    rounds_used: int
    round_scores: tuple[RoundScores, ...]
    total_tokens: int
    prompt_tokens: int
    completion_tokens: int
    tokens_by_role: Mapping[str, int] = field(default_factory=dict)
    tokens_by_phase: Mapping[str, int] = field(default_factory=dict)
    transcript_ref: str = ""
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.rounds_used < 1:
            raise ValueError(f"rounds_used must be >= 1, got {self.rounds_used}")
        object.__setattr__(self, "round_scores", tuple(self.round_scores))
        object.__setattr__(self, "flags", tuple(self.flags))

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim_id": self.claim_id,
            "predicted": self.predicted.value,
            "gold": self.gold.value if self.gold is not None else None,
            "rounds_used": self.rounds_used,
            "round_scores": [s.to_dict() for s in self.round_scores],
            "total_tokens": self.total_tokens,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "tokens_by_role": dict(sorted(self.tokens_by_role.items())),
            "tokens_by_phase": dict(sorted(self.tokens_by_phase.items())),
            "transcript_ref": self.transcript_ref,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunRecord":
        gold = data.get("gold")
        return cls(
            claim_id=data["claim_id"],
            predicted=Label(data["predicted"]),
            gold=Label(gold) if gold is not None else None,
            rounds_used=int(data["rounds_used"]),
            round_scores=tuple(RoundScores.from_dict(s) for s in data.get("round_scores", [])),
            total_tokens=int(data["total_tokens"]),
            prompt_tokens=int(data.get("prompt_tokens", 0)),
            completion_tokens=int(data.get("completion_tokens", 0)),
            tokens_by_role=dict(data.get("tokens_by_role", {})),
            tokens_by_phase=dict(data.get("tokens_by_phase", {})),
            transcript_ref=data.get("transcript_ref", ""),
            flags=tuple(data.get("flags", ())),
        )


@dataclass(frozen=True)
class GenerationSettings:
    temperature: float = 0.0
    max_completion_tokens: int = 512
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_completion_tokens < 1:
            raise ValueError("max_completion_tokens must be >= 1")


@dataclass(frozen=True)
class DebateConfig:
    """Debate-wide knobs. Defaults follow the shipped calibration."""

    role_set: RoleSetName = RoleSetName.EXPERTISE_PAIR
    max_rounds: int = 3
    tau_s: float = -0.15
    tau_v: float = 0.7
    early_stop_enabled: bool = True
    evidence_top_m: int = 20
    evidence_char_budget: int = 8000
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    # Probe tokens for (TRUE, HALF-TRUE, FALSE); first wordpieces by default,
    # overridable per backend tokenizer.
    label_probe_tokens: tuple[str, str, str] = ("TRUE", "HALF", "FALSE")

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.evidence_top_m < 1:
            raise ValueError("evidence_top_m must be >= 1")
        if not -1.0 <= self.tau_s <= 1.0:
            raise ValueError(f"tau_s out of [-1, 1]: {self.tau_s}")
        if not 0.0 <= self.tau_v <= 1.0:
            raise ValueError(f"tau_v out of [0, 1]: {self.tau_v}")
        if len(set(self.label_probe_tokens)) != 3:
            raise ValueError("label_probe_tokens must be three distinct tokens")

    def to_dict(self) -> dict[str, Any]:
        return {
            "role_set": self.role_set.value,
            "max_rounds": self.max_rounds,
            "tau_s": self.tau_s,
            "tau_v": self.tau_v,
            "early_stop_enabled": self.early_stop_enabled,
            "evidence_top_m": self.evidence_top_m,
            "evidence_char_budget": self.evidence_char_budget,
            "temperature": self.generation.temperature,
            "max_completion_tokens": self.generation.max_completion_tokens,
            "seed": self.generation.seed,
            "label_probe_tokens": list(self.label_probe_tokens),
        }


def canonical_json(obj: Any) -> str:
    """Stable JSON encoding used for fingerprints and byte-exact records."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def fingerprint_of(obj: Any) -> str:
    """Short stable fingerprint of any JSON-encodable object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]
