"""Offline threshold calibration.

One full-round pass over a development set caches each claim's per-round
stop margin, verdict confidence, and interim label; the (tau_s, tau_v) pair
is then grid-searched over the cache without re-running inference.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from factdebate import debate, evaluation
from factdebate.core import (
    Claim,
    DebateConfig,
    EvidencePool,
    Label,
    RunRecord,
)
from factdebate.gateway import BackendSpec, LLMGateway

logger = logging.getLogger(__name__)

# Coarse default axes: tau_s in [-1, 1] step 0.2, tau_v in {0.0 .. 0.8 step 0.2, 0.9}.
DEFAULT_TAU_S = tuple(round(-1.0 + 0.2 * i, 1) for i in range(11))
DEFAULT_TAU_V = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9)


@dataclass(frozen=True)
class RoundEntry:
    """Cached controller signals for one round of one claim."""

    stop_margin: float | None
    confidence: float
    interim_label: Label


@dataclass(frozen=True)
class CacheEntry:
    claim_id: str
    gold: Label
    rounds: tuple[RoundEntry, ...]
    final_label: Label

    def __post_init__(self) -> None:
        if not self.rounds:
            raise ValueError(f"cache entry {self.claim_id} has no rounds")


@dataclass(frozen=True)
class ScoreCache:
    """Per-claim, per-round decision scores from a single full-round pass."""

    entries: tuple[CacheEntry, ...]
    max_rounds: int

    def __post_init__(self) -> None:
        for entry in self.entries:
            if len(entry.rounds) != self.max_rounds:
                raise ValueError(
                    f"claim {entry.claim_id} cached {len(entry.rounds)} rounds, "
                    f"expected {self.max_rounds}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as handle:
            for entry in self.entries:
                row = {
                    "claim_id": entry.claim_id,
                    "gold": entry.gold.value,
                    "rounds": [
                        {
                            "stop_margin": r.stop_margin,
                            "confidence": r.confidence,
                            "interim_label": r.interim_label.value,
                        }
                        for r in entry.rounds
                    ],
                    "final_label": entry.final_label.value,
                }
                handle.write(json.dumps(row, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScoreCache":
        entries = []
        with Path(path).open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                rounds = tuple(
                    RoundEntry(
                        stop_margin=r["stop_margin"],
                        confidence=r["confidence"],
                        interim_label=Label(r["interim_label"]),
                    )
                    for r in row["rounds"]
                )
                entries.append(
                    CacheEntry(
                        claim_id=row["claim_id"],
                        gold=Label(row["gold"]),
                        rounds=rounds,
                        final_label=Label(row["final_label"]),
                    )
                )
        if not entries:
            raise ValueError(f"score cache {path} is empty")
        return cls(entries=tuple(entries), max_rounds=len(entries[0].rounds))

    @classmethod
    def from_records(cls, records: Iterable[RunRecord]) -> "ScoreCache":
        """Build from records of a fixed-round (no early stop) run."""
        entries = []
        max_rounds = None
        for record in records:
            if record.gold is None:
                raise ValueError(f"record {record.claim_id} has no gold label")
            if max_rounds is None:
                max_rounds = record.rounds_used
            if record.rounds_used != max_rounds or len(record.round_scores) != max_rounds:
                raise ValueError(
                    f"record {record.claim_id} is not a full {max_rounds}-round run; "
                    "build the cache with early stopping disabled"
                )
            entries.append(
                CacheEntry(
                    claim_id=record.claim_id,
                    gold=record.gold,
                    rounds=tuple(
                        RoundEntry(s.stop_margin, s.confidence, s.interim_label)
                        for s in record.round_scores
                    ),
                    final_label=record.predicted,
                )
            )
        if not entries:
            raise ValueError("no records to build a cache from")
        return cls(entries=tuple(entries), max_rounds=max_rounds or 0)


@dataclass(frozen=True)
class GridSpec:
    tau_s_values: tuple[float, ...] = DEFAULT_TAU_S
    tau_v_values: tuple[float, ...] = DEFAULT_TAU_V

    def __post_init__(self) -> None:
        for name, values, low, high in (
            ("tau_s", self.tau_s_values, -1.0, 1.0),
            ("tau_v", self.tau_v_values, 0.0, 1.0),
        ):
            if not values:
                raise ValueError(f"{name} axis is empty")
            if list(values) != sorted(set(values)):
                raise ValueError(f"{name} values must be strictly increasing")
            if any(not low <= v <= high for v in values):
                raise ValueError(f"{name} values out of [{low}, {high}]")


@dataclass(frozen=True)
class SimulationResult:
    accuracy: float
    avg_rounds: float
    stop_hist: Mapping[int, int]
    predictions: Mapping[str, Label]


def simulate(cache: ScoreCache, tau_s: float, tau_v: float) -> SimulationResult:
    """Replay the early-stop rule over cached scores, no inference.

    Each claim stops at the first non-terminal round whose margin and
    confidence clear the thresholds (predicting that round's interim label),
    otherwise it runs to the last round and predicts the final label.
    """
    if not cache.entries:
        raise ValueError("cannot simulate over an empty cache")
    stop_hist = {r: 0 for r in range(1, cache.max_rounds + 1)}
    predictions: dict[str, Label] = {}
    correct = 0
    total_rounds = 0
    for entry in cache.entries:
        stop_round = cache.max_rounds
        predicted = entry.final_label
        for round_index, scores in enumerate(entry.rounds[:-1], start=1):
            if scores.stop_margin is None:
                continue
            if scores.stop_margin >= tau_s and scores.confidence >= tau_v:
                stop_round = round_index
                predicted = scores.interim_label
                break
        stop_hist[stop_round] += 1
        total_rounds += stop_round
        predictions[entry.claim_id] = predicted
        if predicted == entry.gold:
            correct += 1
    n = len(cache.entries)
    return SimulationResult(
        accuracy=correct / n,
        avg_rounds=total_rounds / n,
        stop_hist=stop_hist,
        predictions=predictions,
    )


@dataclass(frozen=True)
class SweepRow:
    tau_s: float
    tau_v: float
    accuracy: float
    avg_rounds: float
    stop_hist: Mapping[int, int]


@dataclass(frozen=True)
class GridSearchResult:
    tau_s: float
    tau_v: float
    best: SimulationResult
    rows: tuple[SweepRow, ...]


def grid_search(cache: ScoreCache, grid: GridSpec | None = None) -> GridSearchResult:
    """Pick the grid point maximizing accuracy.

    Ties break toward fewer average rounds, then toward the larger tau_s,
    then the larger tau_v (the more conservative stopper). Deterministic for
    a fixed cache and grid.
    """
    grid = grid or GridSpec()
    rows: list[SweepRow] = []
    best_key: tuple[float, float, float, float] | None = None
    best: tuple[float, float, SimulationResult] | None = None
    for tau_s in grid.tau_s_values:
        for tau_v in grid.tau_v_values:
            result = simulate(cache, tau_s, tau_v)
            rows.append(
                SweepRow(
                    tau_s=tau_s,
                    tau_v=tau_v,
                    accuracy=result.accuracy,
                    avg_rounds=result.avg_rounds,
                    stop_hist=result.stop_hist,
                )
            )
            key = (-result.accuracy, result.avg_rounds, -tau_s, -tau_v)
            if best_key is None or key < best_key:
                best_key = key
                best = (tau_s, tau_v, result)
    assert best is not None
    return GridSearchResult(tau_s=best[0], tau_v=best[1], best=best[2], rows=tuple(rows))


def sensitivity_sweep(
    cache: ScoreCache,
    axis: str,
    values: Sequence[float],
    fixed_tau_s: float,
    fixed_tau_v: float,
) -> list[tuple[float, float, float]]:
    """Rows of (value, accuracy, macro_f1) varying one threshold.

    The other threshold stays at its calibrated value.
    """
    if axis not in ("tau_s", "tau_v"):
        raise ValueError(f"axis must be tau_s or tau_v, got {axis!r}")
    rows = []
    golds = {entry.claim_id: entry.gold for entry in cache.entries}
    for value in values:
        tau_s = value if axis == "tau_s" else fixed_tau_s
        tau_v = value if axis == "tau_v" else fixed_tau_v
        result = simulate(cache, tau_s, tau_v)
        pairs = [(golds[cid], pred) for cid, pred in result.predictions.items()]
        cm = evaluation.confusion_from_pairs(pairs)
        rows.append((value, result.accuracy, evaluation.macro_f1(cm)))
    return rows


@dataclass(frozen=True)
class BuildReport:
    cached: int
    aborted: tuple[str, ...]


def build_cache(
    claims: Sequence[Claim],
    pool_for: Callable[[Claim], EvidencePool],
    config: DebateConfig,
    gateway: LLMGateway,
    backend: BackendSpec,
    concurrency: int = 1,
) -> tuple[ScoreCache, BuildReport]:
    """Run every dev claim to max_rounds once and cache all round scores.

    Early stopping is forced off so every round is scored; aborted debates
    are excluded from the cache and reported.
    """
    for claim in claims:
        if claim.gold_label is None:
            raise ValueError(f"claim {claim.id} has no gold label; calibration needs it")
    caching_config = replace(config, early_stop_enabled=False)

    def _one(claim: Claim) -> tuple[str, CacheEntry | None]:
        try:
            record, _ = debate.run_debate(claim, pool_for(claim), caching_config, gateway, backend)
        except debate.DebateAborted as exc:
            logger.warning("excluding aborted debate for claim %s: %s", claim.id, exc.cause)
            return claim.id, None
        entry = CacheEntry(
            claim_id=claim.id,
            gold=claim.gold_label,  # type: ignore[arg-type]
            rounds=tuple(
                RoundEntry(s.stop_margin, s.confidence, s.interim_label)
                for s in record.round_scores
            ),
            final_label=record.predicted,
        )
        return claim.id, entry

    if concurrency <= 1:
        outcomes = [_one(claim) for claim in claims]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            outcomes = list(pool.map(_one, claims))
    entries = tuple(entry for _, entry in outcomes if entry is not None)
    aborted = tuple(claim_id for claim_id, entry in outcomes if entry is None)
    if not entries:
        raise ValueError("all debates aborted; nothing to calibrate")
    cache = ScoreCache(entries=entries, max_rounds=caching_config.max_rounds)
    return cache, BuildReport(cached=len(entries), aborted=aborted)


def render_sweep_table(rows: Sequence[SweepRow]) -> str:
    """Plain-text sweep table, one row per grid point."""
    lines = ["tau_s   tau_v   accuracy   avg_rounds   stop_hist"]
    for row in rows:
        hist = "/".join(str(row.stop_hist[r]) for r in sorted(row.stop_hist))
        lines.append(
            f"{row.tau_s:5.2f}   {row.tau_v:5.2f}   {row.accuracy:8.4f}   {row.avg_rounds:10.4f}   {hist}"
        )
    return "\n".join(lines)
