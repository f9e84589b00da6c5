"""Shared fixtures: a toy corpus with hand-set embeddings and a fully
scripted two-debater pipeline that stops at round 2 by construction."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from factdebate.core import Claim, CorpusDocument, DebateConfig, Label, RoleSetName
from factdebate.gateway import BackendKind, BackendSpec, LLMGateway

CLAIM_TEXT = "The mayor cut the city budget by ten percent."

DOC_TEXTS = {
    "d1": "The city budget was reduced by ten percent this fiscal year.",
    "d2": "Last year the city budget grew by twenty percent after new taxes.",
    "d3": "Council records show department spending shifted between years.",
    "d4": "The mayor opened a new public library downtown in spring.",
    "d5": "Transit ridership reached a record high over the summer.",
}

# Hand-set unit vectors: d1 closest to the claim, d4/d5 tied at zero.
EMBEDDINGS = {
    CLAIM_TEXT: [1.0, 0.0, 0.0],
    DOC_TEXTS["d1"]: [1.0, 0.0, 0.0],
    DOC_TEXTS["d2"]: [0.8, 0.6, 0.0],
    DOC_TEXTS["d3"]: [0.6, 0.8, 0.0],
    DOC_TEXTS["d4"]: [0.0, 1.0, 0.0],
    DOC_TEXTS["d5"]: [0.0, 0.0, 1.0],
}

# Fixed per-call token counts keep expected totals hand-computable.
PROMPT_TOKENS = 100
COMPLETION_TOKENS = 20

# Ordered most-specific first: later-round judge prompts contain the earlier
# sections, so closing must match before rebuttal before opening.
SCRIPT_ENTRIES = [
    {
        "match": ["--- Closing Statements ---", "neural judge evaluating"],
        "text": "[REASON]: Final weighing of the record.\n[VERDICT]: FALSE",
        "probs": {"TRUE": 0.1, "HALF": 0.2, "FALSE": 0.7},
    },
    {
        "match": ["--- Rebuttals ---", "neural judge evaluating"],
        "text": "[REASON]: The cut is real but omits last year's growth.\n[VERDICT]: HALF-TRUE",
        "probs": {"TRUE": 0.02, "HALF": 0.95, "FALSE": 0.03},
    },
    {
        "match": ["--- Opening Statements ---", "neural judge evaluating"],
        "text": "[REASON]: The reduction itself is documented.\n[VERDICT]: TRUE",
        "probs": {"TRUE": 0.5, "HALF": 0.3, "FALSE": 0.2},
    },
    {
        "match": "about to listen to the rebuttal round",
        "text": "DECISION: CONTINUE",
        "probs": {"STOP": 0.3, "CONTINUE": 0.7},
    },
    {
        "match": "about to listen to the closing round",
        "text": "DECISION: STOP",
        "probs": {"STOP": 0.8, "CONTINUE": 0.2},
    },
    {
        "match": "stance as a politician",
        "text": "POLITICIAN-OPENING: The cut happened and shows fiscal discipline.",
    },
    {
        "match": "stance as a scientist",
        "text": "SCIENTIST-OPENING: The figure omits the prior year's increase.",
    },
    {
        "match": "You are a politician in a debate about the claim below",
        "text": "POLITICIAN-REBUTTAL: The reduction is still a verifiable fact.",
    },
    {
        "match": "You are a scientist in a debate about the claim below",
        "text": "SCIENTIST-REBUTTAL: Net spending rose once both years are considered.",
    },
    {
        "match": "You are a politician in a political debate about the claim below",
        "text": "POLITICIAN-CLOSING: The claim is accurate as stated.",
    },
    {
        "match": "You are a scientist in a political debate about the claim below",
        "text": "SCIENTIST-CLOSING: Without context the claim misleads.",
    },
]


def write_script(path: Path, entries: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as handle:
        for entry in entries:
            row = dict(entry)
            row.setdefault("prompt_tokens", PROMPT_TOKENS)
            row.setdefault("completion_tokens", COMPLETION_TOKENS)
            handle.write(json.dumps(row) + "\n")
    return path


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("fixtures")


@pytest.fixture(scope="session")
def embedding_script(fixture_dir: Path) -> Path:
    path = fixture_dir / "embeddings.jsonl"
    with path.open("w", encoding="utf-8") as handle:
        for text, vector in EMBEDDINGS.items():
            handle.write(json.dumps({"text": text, "vector": vector}) + "\n")
    return path


@pytest.fixture(scope="session")
def embedding_backend(embedding_script: Path) -> BackendSpec:
    return BackendSpec(
        kind=BackendKind.SCRIPTED, model_name="toy-embed", script_path=str(embedding_script)
    )


@pytest.fixture(scope="session")
def generation_script(fixture_dir: Path) -> Path:
    return write_script(fixture_dir / "debate_script.jsonl", SCRIPT_ENTRIES)


@pytest.fixture(scope="session")
def generation_backend(generation_script: Path) -> BackendSpec:
    return BackendSpec(
        kind=BackendKind.SCRIPTED, model_name="toy-llm", script_path=str(generation_script)
    )


@pytest.fixture(scope="session")
def toy_claim() -> Claim:
    return Claim(id="c1", text=CLAIM_TEXT, gold_label=Label.HALF_TRUE)


@pytest.fixture(scope="session")
def toy_corpus() -> list[CorpusDocument]:
    return [CorpusDocument(doc_id=doc_id, text=text) for doc_id, text in DOC_TEXTS.items()]


@pytest.fixture(scope="session")
def pair_config() -> DebateConfig:
    return DebateConfig(
        role_set=RoleSetName.EXPERTISE_PAIR,
        max_rounds=3,
        tau_s=0.2,
        tau_v=0.9,
        early_stop_enabled=True,
        evidence_top_m=3,
    )


@pytest.fixture
def gateway():
    with LLMGateway() as gw:
        yield gw
