"""Fact verification through role-anchored multi-agent debate over retrieved evidence."""

from factdebate.core import (
    Claim,
    CorpusDocument,
    DebateConfig,
    EvidencePool,
    EvidenceSnippet,
    Label,
    Phase,
    PoolSource,
    RoleId,
    RoleSetName,
    RoundScores,
    RunRecord,
    TokenUsage,
    Utterance,
    Verdict,
    parse_label,
)

__version__ = "0.1.0"

__all__ = [
    "Claim",
    "CorpusDocument",
    "DebateConfig",
    "EvidencePool",
    "EvidenceSnippet",
    "Label",
    "Phase",
    "PoolSource",
    "RoleId",
    "RoleSetName",
    "RoundScores",
    "RunRecord",
    "TokenUsage",
    "Utterance",
    "Verdict",
    "parse_label",
    "__version__",
]
