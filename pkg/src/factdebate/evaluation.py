"""Metrics and reporting: accuracy, per-class precision/recall/F1, macro-F1,
confusion matrices, token accounting, and stop-round histograms."""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from factdebate.core import LABEL_ORDER, Label, RunRecord

REPORT_SCHEMA_VERSION = 1


class MissingGold(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are gold, columns are predicted, order (TRUE, HALF-TRUE, FALSE)."""

    counts: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        rows = tuple(tuple(int(c) for c in row) for row in self.counts)
        if len(rows) != 3 or any(len(row) != 3 for row in rows):
            raise ValueError("confusion matrix must be 3x3")
        if any(c < 0 for row in rows for c in row):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", rows)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def count(self, gold: Label, predicted: Label) -> int:
        return self.counts[LABEL_ORDER.index(gold)][LABEL_ORDER.index(predicted)]

    def row_sum(self, gold: Label) -> int:
        return sum(self.counts[LABEL_ORDER.index(gold)])

    def col_sum(self, predicted: Label) -> int:
        j = LABEL_ORDER.index(predicted)
        return sum(row[j] for row in self.counts)


def confusion_from_pairs(pairs: Iterable[tuple[Label, Label]]) -> ConfusionMatrix:
    grid = [[0, 0, 0] for _ in range(3)]
    for gold, predicted in pairs:
        grid[LABEL_ORDER.index(gold)][LABEL_ORDER.index(predicted)] += 1
    return ConfusionMatrix(tuple(tuple(row) for row in grid))


def confusion(records: Sequence[RunRecord]) -> ConfusionMatrix:
    """Exact gold-vs-predicted counts; flagged fallback predictions count too."""
    pairs = []
    for record in records:
        if record.gold is None:
            raise MissingGold(f"record {record.claim_id} has no gold label")
        pairs.append((record.gold, record.predicted))
    return confusion_from_pairs(pairs)


def class_prf(cm: ConfusionMatrix, label: Label) -> tuple[float, float, float]:
    """(precision, recall, f1) for one class; zero denominators yield 0."""
    tp = cm.count(label, label)
    col = cm.col_sum(label)
    row = cm.row_sum(label)
    precision = tp / col if col else 0.0
    recall = tp / row if row else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the three per-class F1 values."""
    return sum(class_prf(cm, label)[2] for label in LABEL_ORDER) / 3.0


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        return 0.0
    return sum(cm.count(label, label) for label in LABEL_ORDER) / cm.total


@dataclass(frozen=True)
class TokenStats:
    avg_total: float
    prompt_total: int
    completion_total: int
    combined_total: int
    by_role: Mapping[str, int]
    by_phase: Mapping[str, int]


def token_stats(records: Sequence[RunRecord]) -> TokenStats:
    """Mean combined tokens per record plus totals, also split by role and phase."""
    if not records:
        return TokenStats(0.0, 0, 0, 0, {}, {})
    by_role: dict[str, int] = {}
    by_phase: dict[str, int] = {}
    prompt_total = completion_total = 0
    for record in records:
        prompt_total += record.prompt_tokens
        completion_total += record.completion_tokens
        for role, tokens in record.tokens_by_role.items():
            by_role[role] = by_role.get(role, 0) + tokens
        for phase, tokens in record.tokens_by_phase.items():
            by_phase[phase] = by_phase.get(phase, 0) + tokens
    combined = sum(record.total_tokens for record in records)
    return TokenStats(
        avg_total=combined / len(records),
        prompt_total=prompt_total,
        completion_total=completion_total,
        combined_total=combined,
        by_role=dict(sorted(by_role.items())),
        by_phase=dict(sorted(by_phase.items())),
    )


def stop_round_histogram(records: Sequence[RunRecord]) -> dict[int, int]:
    """Counts of rounds_used; entries sum to the number of records."""
    top = max((record.rounds_used for record in records), default=0)
    hist = {r: 0 for r in range(1, top + 1)}
    for record in records:
        hist[record.rounds_used] += 1
    return hist


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    macro_f1: float
    per_class: Mapping[Label, ClassMetrics]
    confusion: ConfusionMatrix
    tokens: TokenStats
    stop_hist: Mapping[int, int]
    n_records: int
    flagged: int


def build_report(records: Sequence[RunRecord]) -> MetricReport:
    cm = confusion(records)
    per_class = {}
    for label in LABEL_ORDER:
        p, r, f1 = class_prf(cm, label)
        per_class[label] = ClassMetrics(precision=p, recall=r, f1=f1, support=cm.row_sum(label))
    return MetricReport(
        accuracy=accuracy(cm),
        macro_f1=macro_f1(cm),
        per_class=per_class,
        confusion=cm,
        tokens=token_stats(records),
        stop_hist=stop_round_histogram(records),
        n_records=len(records),
        flagged=sum(1 for record in records if record.flags),
    )


def percent(x: float) -> str:
    """Render a fraction as a percent with one decimal, rounding half up."""
    return str(Decimal(repr(x * 100)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _zero_denominator_note(report: MetricReport) -> str | None:
    hollow = [
        label.value
        for label in LABEL_ORDER
        if report.confusion.row_sum(label) == 0 or report.confusion.col_sum(label) == 0
    ]
    if not hollow:
        return None
    return (
        "Note: precision/recall with a zero denominator are reported as 0 "
        f"(affected classes: {', '.join(hollow)})."
    )


def render_report(report: MetricReport, fmt: str = "text") -> str:
    """Render as text, markdown (paper-style tables), or versioned JSON."""
    if fmt == "json":
        return _render_json(report)
    if fmt == "markdown":
        return _render_markdown(report)
    if fmt == "text":
        return _render_text(report)
    raise ValueError(f"unknown report format {fmt!r}")


def _render_json(report: MetricReport) -> str:
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n_records": report.n_records,
        "flagged": report.flagged,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "per_class": {
            label.value: {
                "precision": metrics.precision,
                "recall": metrics.recall,
                "f1": metrics.f1,
                "support": metrics.support,
            }
            for label, metrics in report.per_class.items()
        },
        "confusion": [list(row) for row in report.confusion.counts],
        "tokens": {
            "avg_total": report.tokens.avg_total,
            "prompt_total": report.tokens.prompt_total,
            "completion_total": report.tokens.completion_total,
            "combined_total": report.tokens.combined_total,
            "by_role": dict(report.tokens.by_role),
            "by_phase": dict(report.tokens.by_phase),
        },
        "stop_hist": {str(k): v for k, v in sorted(report.stop_hist.items())},
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def _confusion_rows(report: MetricReport) -> list[list[str]]:
    rows = []
    for label in LABEL_ORDER:
        metrics = report.per_class[label]
        rows.append(
            [
                label.value,
                *(str(report.confusion.count(label, pred)) for pred in LABEL_ORDER),
                percent(metrics.precision),
                percent(metrics.recall),
                percent(metrics.f1),
            ]
        )
    return rows


def _render_markdown(report: MetricReport) -> str:
    header = ["Gold\\Pred", *(label.value for label in LABEL_ORDER), "Prec.", "Rec.", "F1"]
    lines = [
        "## Results",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for row in _confusion_rows(report):
        lines.append("| " + " | ".join(row) + " |")
    lines += [
        "",
        "| Accuracy | Macro-F1 | # Avg. tokens | Records | Flagged |",
        "|---|---|---|---|---|",
        "| {acc} | {mf1} | {tokens:.1f} | {n} | {flagged} |".format(
            acc=percent(report.accuracy),
            mf1=percent(report.macro_f1),
            tokens=report.tokens.avg_total,
            n=report.n_records,
            flagged=report.flagged,
        ),
        "",
        "Stop rounds: "
        + ", ".join(f"@{r}: {count}" for r, count in sorted(report.stop_hist.items())),
    ]
    note = _zero_denominator_note(report)
    if note:
        lines += ["", note]
    return "\n".join(lines)


def _render_text(report: MetricReport) -> str:
    lines = [
        f"records: {report.n_records} (flagged: {report.flagged})",
        f"accuracy: {percent(report.accuracy)}  macro-F1: {percent(report.macro_f1)}",
        f"avg tokens per claim: {report.tokens.avg_total:.1f} "
        f"(prompt {report.tokens.prompt_total}, completion {report.tokens.completion_total})",
        "per class (precision / recall / F1 / support):",
    ]
    for label in LABEL_ORDER:
        metrics = report.per_class[label]
        lines.append(
            f"  {label.value:<9} {percent(metrics.precision):>6} / {percent(metrics.recall):>6} "
            f"/ {percent(metrics.f1):>6} / {metrics.support}"
        )
    lines.append(
        "stop rounds: "
        + ", ".join(f"@{r}: {count}" for r, count in sorted(report.stop_hist.items()))
    )
    note = _zero_denominator_note(report)
    if note:
        lines.append(note)
    return "\n".join(lines)
