"""Operator surface: ingest, index, debate, calibrate, evaluate, report."""

from __future__ import annotations

import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

import factdebate
from factdebate import calibration, datasets, debate, evaluation, retrieval
from factdebate.config import ConfigError, RunConfig, load_run_config, parse_backend
from factdebate.core import (
    LABEL_ORDER,
    Claim,
    DebateConfig,
    EvidencePool,
    EvidenceSnippet,
    GenerationSettings,
    PoolSource,
    RoleSetName,
    fingerprint_of,
)
from factdebate.gateway import BackendKind, BackendSpec, LLMGateway

logger = logging.getLogger(__name__)

_ROLE_CHOICES = [name.value for name in RoleSetName]


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Verify claims as TRUE / HALF-TRUE / FALSE via multi-agent debate."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--claims", "claims_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest(claims_path: str, out_path: str) -> None:
    """Validate and normalize a claim file (labels mapped to the three-way scheme)."""
    claims, report = datasets.read_claims(claims_path)
    datasets.write_claims(claims, out_path)
    click.echo(f"loaded {report.loaded} of {report.total_lines} lines -> {out_path}")
    for reason, count in sorted(report.excluded.items()):
        click.echo(f"excluded {count} ({reason})")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--provider", default="hash-256", help="hash[-dim] | scripted:<path> | http:<url>")
@click.option("--model", default="", help="Embedding model name for HTTP providers.")
@click.option("--chunk-words", default=0, type=int, help="Split docs into fixed word windows (0 = off).")
@click.option("--workers", default=1, type=int)
def index(corpus_path: str, out_dir: str, provider: str, model: str, chunk_words: int, workers: int) -> None:
    """Build (or validate) the dense vector index for a corpus."""
    documents = datasets.read_corpus(corpus_path)
    if chunk_words:
        documents = retrieval.chunk_documents(documents, chunk_words)
    backend = parse_backend(provider, model)
    with LLMGateway() as gateway:
        built = retrieval.build_index(documents, backend, gateway, out_dir=out_dir, workers=workers)
    click.echo(f"indexed {len(built)} documents at dimension {built.dimension} -> {out_dir}")


def _debate_config_from_flags(
    base: DebateConfig,
    roles: str | None,
    max_rounds: int | None,
    tau_s: float | None,
    tau_v: float | None,
    no_early_stop: bool,
    top_m: int | None,
    temperature: float | None,
) -> DebateConfig:
    config = base
    if roles is not None:
        config = replace(config, role_set=RoleSetName(roles))
    if max_rounds is not None:
        config = replace(config, max_rounds=max_rounds)
    if tau_s is not None:
        config = replace(config, tau_s=tau_s)
    if tau_v is not None:
        config = replace(config, tau_v=tau_v)
    if no_early_stop:
        config = replace(config, early_stop_enabled=False)
    if top_m is not None:
        config = replace(config, evidence_top_m=top_m)
    if temperature is not None:
        config = replace(config, generation=GenerationSettings(
            temperature=temperature,
            max_completion_tokens=config.generation.max_completion_tokens,
            seed=config.generation.seed,
        ))
    return config


def _embedding_backend_for_index(vector_index: retrieval.VectorIndex, flag: str | None, model: str) -> BackendSpec:
    if flag:
        return parse_backend(flag, model)
    kind, _, name = vector_index.provider_id.partition(":")
    if kind == BackendKind.HASH.value:
        return BackendSpec(kind=BackendKind.HASH, model_name=name)
    raise ConfigError(
        "embedding",
        f"index was built with provider {vector_index.provider_id!r}; pass --embedding to match",
    )


def _gold_pool(claim: Claim, corpus_texts: dict[str, str]) -> EvidencePool | None:
    snippets = []
    rank = 1
    for doc_id in claim.gold_evidence_ids:
        text = corpus_texts.get(doc_id)
        if text is None:
            logger.warning("claim %s: gold evidence %s not in corpus", claim.id, doc_id)
            continue
        snippets.append(EvidenceSnippet(doc_id=doc_id, rank=rank, score=1.0, text=text))
        rank += 1
    if not snippets:
        return None
    return EvidencePool(claim_id=claim.id, snippets=tuple(snippets), source=PoolSource.GOLD)


@main.command(name="debate")
@click.option("--claims", "claims_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), help="YAML run config.")
@click.option("--backend", "backend_flag", help="scripted:<path> | http:<url>")
@click.option("--model", default="", help="Model name sent to the provider.")
@click.option("--evidence", type=click.Choice(["retrieved", "gold"]), default="retrieved")
@click.option("--index", "index_dir", type=click.Path(), help="Vector index directory (retrieved).")
@click.option("--embedding", "embedding_flag", help="Embedding provider (defaults to the index's).")
@click.option("--corpus", "corpus_path", type=click.Path(), help="Corpus JSONL (gold evidence).")
@click.option("--roles", type=click.Choice(_ROLE_CHOICES), default=None)
@click.option("--max-rounds", type=int, default=None)
@click.option("--tau-s", type=float, default=None)
@click.option("--tau-v", type=float, default=None)
@click.option("--no-early-stop", is_flag=True, help="Force the fixed round budget.")
@click.option("--top-m", type=int, default=None, help="Evidence pool size.")
@click.option("--temperature", type=float, default=None)
@click.option("--cache-dir", type=click.Path(), default=None, help="Response cache directory.")
@click.option("--concurrency", type=int, default=None)
@click.option("--max-abort-rate", type=float, default=None)
def debate_cmd(
    claims_path: str,
    out_dir: str,
    config_path: str | None,
    backend_flag: str | None,
    model: str,
    evidence: str,
    index_dir: str | None,
    embedding_flag: str | None,
    corpus_path: str | None,
    roles: str | None,
    max_rounds: int | None,
    tau_s: float | None,
    tau_v: float | None,
    no_early_stop: bool,
    top_m: int | None,
    temperature: float | None,
    cache_dir: str | None,
    concurrency: int | None,
    max_abort_rate: float | None,
) -> None:
    """Run debates over a claim file, streaming records and transcripts."""
    run_config = load_run_config(config_path) if config_path else RunConfig()
    if backend_flag:
        run_config.backend = parse_backend(backend_flag, model)
    elif run_config.backend is not None and model:
        run_config.backend = replace(run_config.backend, model_name=model)
    if run_config.backend is None:
        raise ConfigError("backend", "no backend configured; pass --backend or a config file")
    if cache_dir is not None:
        run_config.cache_dir = cache_dir
    if concurrency is not None:
        run_config.concurrency = concurrency
    if max_abort_rate is not None:
        run_config.max_abort_rate = max_abort_rate
    config = _debate_config_from_flags(
        run_config.debate, roles, max_rounds, tau_s, tau_v, no_early_stop, top_m, temperature
    )
    index_dir = index_dir or (run_config.index_dir or None)
    corpus_path = corpus_path or (run_config.corpus_path or None)

    claims, ingest_report = datasets.read_claims(claims_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "transcripts").mkdir(exist_ok=True)

    with LLMGateway(cache_dir=run_config.cache_dir or None) as gateway:
        if evidence == "retrieved":
            if not index_dir:
                raise ConfigError("index", "--evidence retrieved requires --index")
            vector_index = retrieval.load_index(index_dir)
            embed_backend = _embedding_backend_for_index(vector_index, embedding_flag, model="")

            def pool_for(claim: Claim) -> EvidencePool | None:
                return retrieval.retrieve(
                    claim, vector_index, config.evidence_top_m, embed_backend, gateway
                )

        else:
            if not corpus_path:
                raise ConfigError("corpus", "--evidence gold requires --corpus")
            corpus_texts = {doc.doc_id: doc.text for doc in datasets.read_corpus(corpus_path)}

            def pool_for(claim: Claim) -> EvidencePool | None:
                return _gold_pool(claim, corpus_texts)

        backend = run_config.backend
        writer = datasets.RecordWriter(out / "records.jsonl")
        (out / "records.jsonl").write_text("", encoding="utf-8")
        scores_path = out / "scores.jsonl"
        scores_path.write_text("", encoding="utf-8")
        aborted: list[str] = []
        records = []
        domain_cache: dict[str, str] = {}

        def run_one(claim: Claim):
            transcript_path = out / "transcripts" / f"{claim.id}.jsonl"
            pool = pool_for(claim)
            if pool is None:
                return claim, None, None
            try:
                record, transcript = debate.run_debate(
                    claim,
                    pool,
                    config,
                    gateway,
                    backend,
                    transcript_ref=str(transcript_path.relative_to(out)),
                    domain_cache=domain_cache,
                )
            except debate.DebateAborted as exc:
                datasets.write_transcript(exc.utterances, transcript_path)
                return claim, None, exc
            datasets.write_transcript(transcript.utterances, transcript_path)
            return claim, record, None

        def iter_outcomes():
            if run_config.concurrency <= 1:
                for claim in claims:
                    yield run_one(claim)
            else:
                with ThreadPoolExecutor(max_workers=run_config.concurrency) as pool:
                    yield from pool.map(run_one, claims)

        with scores_path.open("a", encoding="utf-8") as scores_handle:
            for claim, record, error in iter_outcomes():
                if record is None:
                    aborted.append(claim.id)
                    reason = str(error) if error else "empty evidence pool"
                    logger.error("claim %s aborted: %s", claim.id, reason)
                    continue
                writer.write(record)
                records.append(record)
                scores_handle.write(
                    json.dumps(
                        {
                            "claim_id": record.claim_id,
                            "round_scores": [s.to_dict() for s in record.round_scores],
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    meta = {
        "version": factdebate.__version__,
        "config_fingerprint": fingerprint_of({**config.to_dict(), "model": backend.model_name}),
        "config": config.to_dict(),
        "model": backend.model_name,
        "evidence": evidence,
        "claims": len(claims),
        "ingest_excluded": ingest_report.excluded,
        "completed": len(records),
        "aborted": aborted,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    if records and all(record.gold is not None for record in records):
        report = evaluation.build_report(records)
        (out / "report.md").write_text(evaluation.render_report(report, "markdown") + "\n", encoding="utf-8")

    total = len(claims)
    abort_rate = len(aborted) / total if total else 0.0
    click.echo(f"completed {len(records)}/{total} debates ({len(aborted)} aborted)")
    if abort_rate > run_config.max_abort_rate:
        click.echo(
            f"abort rate {abort_rate:.1%} exceeds threshold {run_config.max_abort_rate:.1%}",
            err=True,
        )
        sys.exit(1)


def _parse_grid(tau_s_grid: str | None, tau_v_grid: str | None) -> calibration.GridSpec:
    spec = calibration.GridSpec()
    if tau_s_grid:
        spec = calibration.GridSpec(
            tau_s_values=tuple(float(v) for v in tau_s_grid.split(",")),
            tau_v_values=spec.tau_v_values,
        )
    if tau_v_grid:
        spec = calibration.GridSpec(
            tau_s_values=spec.tau_s_values,
            tau_v_values=tuple(float(v) for v in tau_v_grid.split(",")),
        )
    return spec


@main.command()
@click.option("--cache", "cache_path", required=True, type=click.Path())
@click.option("--from-records", "records_path", type=click.Path(exists=True),
              help="Build the cache from records of a fixed-round run.")
@click.option("--tau-s-grid", help="Comma-separated tau_s values.")
@click.option("--tau-v-grid", help="Comma-separated tau_v values.")
@click.option("--write-config", "write_config_path", type=click.Path(),
              help="Write chosen thresholds as a YAML fragment.")
def calibrate(
    cache_path: str,
    records_path: str | None,
    tau_s_grid: str | None,
    tau_v_grid: str | None,
    write_config_path: str | None,
) -> None:
    """Grid-search (tau_s, tau_v) offline over cached decision scores."""
    if records_path:
        cache = calibration.ScoreCache.from_records(datasets.read_records(records_path))
        cache.save(cache_path)
        click.echo(f"cached scores for {len(cache)} claims -> {cache_path}")
    elif Path(cache_path).exists():
        cache = calibration.ScoreCache.load(cache_path)
    else:
        raise ConfigError("cache", f"{cache_path} does not exist; build it with --from-records")
    grid = _parse_grid(tau_s_grid, tau_v_grid)
    result = calibration.grid_search(cache, grid)
    click.echo(calibration.render_sweep_table(result.rows))
    click.echo(
        f"selected tau_s={result.tau_s} tau_v={result.tau_v} "
        f"(accuracy {result.best.accuracy:.4f}, avg rounds {result.best.avg_rounds:.3f})"
    )
    if write_config_path:
        fragment = f"debate:\n  tau_s: {result.tau_s}\n  tau_v: {result.tau_v}\n"
        Path(write_config_path).write_text(fragment, encoding="utf-8")
        click.echo(f"thresholds written -> {write_config_path}")


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["text", "json", "markdown"]), default="text")
def evaluate(records_path: str, fmt: str) -> None:
    """Metrics over a records file."""
    records = datasets.read_records(records_path)
    if not records:
        raise ConfigError("records", "no records to evaluate")
    report = evaluation.build_report(records)
    click.echo(evaluation.render_report(report, fmt))


@main.command()
@click.option("--records", "records_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--name", "names", multiple=True, help="Display name per records file.")
@click.option("--out", "out_path", type=click.Path(), help="Write markdown here instead of stdout.")
def report(records_paths: tuple[str, ...], names: tuple[str, ...], out_path: str | None) -> None:
    """Side-by-side markdown comparison of multiple runs."""
    if names and len(names) != len(records_paths):
        raise ConfigError("name", "one --name per --records is required")
    labels = list(names) if names else [Path(p).stem for p in records_paths]
    rows = []
    for label, path in zip(labels, records_paths):
        records = datasets.read_records(path)
        if not records:
            raise ConfigError("records", f"{path} has no records")
        rows.append((label, evaluation.build_report(records)))
    header = ["Run", "Accuracy", "Macro-F1", "F1 TRUE", "F1 HALF-TRUE", "F1 FALSE", "# Avg. tokens", "Stop hist"]
    lines = [
        "## Run comparison",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for label, rep in rows:
        hist = "/".join(str(count) for _, count in sorted(rep.stop_hist.items()))
        lines.append(
            "| {name} | {acc} | {mf1} | {f1s} | {tokens:.1f} | {hist} |".format(
                name=label,
                acc=evaluation.percent(rep.accuracy),
                mf1=evaluation.percent(rep.macro_f1),
                f1s=" | ".join(evaluation.percent(rep.per_class[l].f1) for l in LABEL_ORDER),
                tokens=rep.tokens.avg_total,
                hist=hist,
            )
        )
    text = "\n".join(lines)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
        click.echo(f"report written -> {out_path}")
    else:
        click.echo(text)


def entrypoint() -> None:  # pragma: no cover
    try:
        main()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
