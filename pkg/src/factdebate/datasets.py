"""JSONL ingestion and persistence.

Claim files carry one object per line: {"id", "claim", "label"?,
"evidence_ids"?}. Corpus files carry {"doc_id", "text"}. Run records and
transcripts round-trip through the same canonical encoding everywhere so
re-runs are byte-comparable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from factdebate.core import (
    Claim,
    CorpusDocument,
    Label,
    RunRecord,
    UnparseableLabel,
    Utterance,
    canonical_json,
    parse_label,
)


class IngestError(ValueError):
    pass


# Dataset label spellings mapped onto the three-way scheme. The four-way
# scheme used by open-web verification sets folds its cherry-picking label
# into HALF-TRUE; "not enough evidence" rows are excluded and counted.
_LABEL_ALIASES = {
    "supported": Label.TRUE,
    "refuted": Label.FALSE,
    "conflicting evidence/cherry-picking": Label.HALF_TRUE,
}
_EXCLUDED_LABELS = {"not enough evidence"}


@dataclass
class IngestionReport:
    total_lines: int = 0
    loaded: int = 0
    excluded: dict[str, int] = field(default_factory=dict)

    def exclude(self, reason: str) -> None:
        self.excluded[reason] = self.excluded.get(reason, 0) + 1


def normalize_label(raw: str) -> Label | None:
    """Map a dataset label onto the three-way scheme; None means 'exclude'."""
    key = raw.strip().lower()
    if key in _EXCLUDED_LABELS:
        return None
    if key in _LABEL_ALIASES:
        return _LABEL_ALIASES[key]
    return parse_label(raw)


def read_claims(path: str | Path) -> tuple[list[Claim], IngestionReport]:
    """Load and validate a claim file; ids must be unique, text non-empty."""
    report = IngestionReport()
    claims: list[Claim] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            report.total_lines += 1
            try:
                row = json.loads(line)
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            claim_id = str(row.get("id", ""))
            if claim_id in seen:
                raise IngestError(f"{path}:{lineno}: duplicate claim id {claim_id!r}")
            gold: Label | None = None
            raw_label = row.get("label")
            if raw_label is not None:
                try:
                    gold = normalize_label(str(raw_label))
                except UnparseableLabel as exc:
                    raise IngestError(f"{path}:{lineno}: {exc}") from exc
                if gold is None:
                    report.exclude(str(raw_label).strip().lower())
                    continue
            try:
                claim = Claim(
                    id=claim_id,
                    text=str(row.get("claim", "")),
                    gold_label=gold,
                    gold_evidence_ids=tuple(str(e) for e in row.get("evidence_ids", ())),
                )
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            seen.add(claim_id)
            claims.append(claim)
            report.loaded += 1
    return claims, report


def write_claims(claims: Iterable[Claim], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for claim in claims:
            row: dict[str, object] = {"id": claim.id, "claim": claim.text}
            if claim.gold_label is not None:
                row["label"] = claim.gold_label.value
            if claim.gold_evidence_ids:
                row["evidence_ids"] = list(claim.gold_evidence_ids)
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_corpus(path: str | Path) -> list[CorpusDocument]:
    documents: list[CorpusDocument] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            doc_id = str(row.get("doc_id", ""))
            if doc_id in seen:
                raise IngestError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            try:
                documents.append(CorpusDocument(doc_id=doc_id, text=str(row.get("text", ""))))
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            seen.add(doc_id)
    return documents


def read_records(path: str | Path) -> list[RunRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(RunRecord.from_dict(json.loads(line)))
    return records


class RecordWriter:
    """Append-only, thread-serialized JSONL sink for run records."""

    def __init__(self, path: str | Path) -> None:
        self._path = Path(path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._count = 0

    @property
    def count(self) -> int:
        return self._count

    def write(self, record: RunRecord) -> None:
        with self._lock:
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(canonical_json(record.to_dict()) + "\n")
            self._count += 1


def write_transcript(utterances: Iterable[Utterance], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for utterance in utterances:
            handle.write(canonical_json(utterance.to_dict()) + "\n")


def read_transcript(path: str | Path) -> list[Utterance]:
    utterances = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                utterances.append(Utterance.from_dict(json.loads(line)))
    return utterances


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield json.loads(line)
