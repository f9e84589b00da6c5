"""Dense retrieval over a background corpus.

Builds a shared, possibly noisy evidence pool per claim: embedding providers
(HTTP, scripted table, or a local deterministic feature-hash stand-in), an
exact cosine top-k search with a full scan (no approximation), flat binary
index persistence, and byte-stable evidence formatting for prompts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from factdebate.core import Claim, CorpusDocument, EvidencePool, EvidenceSnippet, PoolSource
from factdebate.gateway import BackendKind, BackendSpec, LLMGateway, ScriptMiss

logger = logging.getLogger(__name__)

DEFAULT_HASH_DIMENSION = 256
DEFAULT_CHAR_BUDGET = 8000

_INDEX_VERSION = 1
_VECTORS_FILE = "vectors.bin"
_IDS_FILE = "ids.jsonl"
_META_FILE = "meta.json"


class EmptyCorpus(ValueError):
    pass


class EmptyIndex(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def normalize(vector: np.ndarray) -> np.ndarray:
    """L2-normalize to a unit float32 vector; zero vectors get a fixed basis."""
    v = np.asarray(vector, dtype=np.float32)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        v = np.zeros_like(v)
        v[0] = 1.0
        return v
    return (v / norm).astype(np.float32)


def hash_embed(text: str, dimension: int = DEFAULT_HASH_DIMENSION) -> np.ndarray:
    """Deterministic signed feature-hash embedding of whitespace tokens.

    A local stand-in for a dense retriever when no embedding provider is
    reachable; not a semantic model, but stable and unit-normalized.
    """
    v = np.zeros(dimension, dtype=np.float32)
    for token in text.lower().split():
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        index = value % dimension
        sign = 1.0 if (value >> 63) & 1 else -1.0
        v[index] += sign
    return normalize(v)


def _hash_dimension(backend: BackendSpec) -> int:
    match = re.fullmatch(r"hash-(\d+)", backend.model_name or "")
    if match:
        return int(match.group(1))
    return DEFAULT_HASH_DIMENSION


class _ScriptedEmbeddings:
    """Text -> vector table loaded from JSONL lines of {text, vector}."""

    _tables: dict[tuple[str, float], dict[str, list[float]]] = {}
    _lock = threading.Lock()

    @classmethod
    def lookup(cls, path: str, text: str) -> np.ndarray:
        key = (path, os.path.getmtime(path))
        with cls._lock:
            table = cls._tables.get(key)
            if table is None:
                table = {}
                with Path(path).open("r", encoding="utf-8") as handle:
                    for line in handle:
                        line = line.strip()
                        if not line:
                            continue
                        entry = json.loads(line)
                        table[entry["text"]] = entry["vector"]
                cls._tables[key] = table
        vector = table.get(text)
        if vector is None:
            raise ScriptMiss(f"no scripted embedding for text {text[:60]!r}")
        return normalize(np.asarray(vector, dtype=np.float32))


def embed(text: str, provider: BackendSpec, gateway: LLMGateway | None = None) -> np.ndarray:
    """Embed one text into a unit vector; deterministic for a fixed provider."""
    if not text.strip():
        raise ValueError("cannot embed empty text")
    if provider.kind is BackendKind.HASH:
        return hash_embed(text, _hash_dimension(provider))
    if provider.kind is BackendKind.SCRIPTED:
        return _ScriptedEmbeddings.lookup(provider.script_path, text)
    if gateway is None:
        raise ValueError("HTTP embedding provider requires a gateway")
    headers = {"Content-Type": "application/json"}
    credential = os.environ.get(provider.credential_env, "")
    if credential:
        headers["Authorization"] = f"Bearer {credential}"
    body = gateway.post_json(provider.endpoint, {"model": provider.model_name, "input": [text]}, headers)
    vector = body["data"][0]["embedding"]
    return normalize(np.asarray(vector, dtype=np.float32))


def embed_many(
    texts: Sequence[str],
    provider: BackendSpec,
    gateway: LLMGateway | None = None,
    workers: int = 1,
) -> list[np.ndarray]:
    """Embed texts preserving order, with bounded parallelism for HTTP providers."""
    if workers <= 1 or provider.kind is not BackendKind.HTTP_PROVIDER:
        return [embed(text, provider, gateway) for text in texts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda text: embed(text, provider, gateway), texts))


@dataclass
class VectorIndex:
    """Immutable-after-build embedding matrix plus document sidecar."""

    doc_ids: list[str]
    texts: list[str]
    matrix: np.ndarray
    dimension: int
    corpus_fingerprint: str
    provider_id: str

    def __post_init__(self) -> None:
        if len(self.doc_ids) != len(self.texts) or len(self.doc_ids) != self.matrix.shape[0]:
            raise ValueError("doc_ids, texts, and matrix rows must align")
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.dimension:
            raise DimensionMismatch(
                f"matrix shape {self.matrix.shape} does not match dimension {self.dimension}"
            )
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValueError("doc_ids must be unique")

    def __len__(self) -> int:
        return len(self.doc_ids)


def corpus_fingerprint(documents: Sequence[CorpusDocument]) -> str:
    digest = hashlib.sha256()
    for doc in documents:
        digest.update(doc.doc_id.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(doc.text.encode("utf-8"))
        digest.update(b"\x1e")
    return digest.hexdigest()


def chunk_documents(
    documents: Iterable[CorpusDocument], window_words: int
) -> list[CorpusDocument]:
    """Split documents into fixed word windows; ids become '<doc_id>#<k>'."""
    if window_words < 1:
        raise ValueError("window_words must be >= 1")
    chunks: list[CorpusDocument] = []
    for doc in documents:
        words = doc.text.split()
        if len(words) <= window_words:
            chunks.append(doc)
            continue
        for k, start in enumerate(range(0, len(words), window_words)):
            piece = " ".join(words[start : start + window_words])
            chunks.append(CorpusDocument(doc_id=f"{doc.doc_id}#{k}", text=piece))
    return chunks


def build_index(
    documents: Sequence[CorpusDocument],
    provider: BackendSpec,
    gateway: LLMGateway | None = None,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> VectorIndex:
    """Embed every document into an exact-search index.

    When out_dir already holds an index with a matching corpus fingerprint
    and provider, the embedding pass is skipped and the index is loaded.
    """
    documents = list(documents)
    if not documents:
        raise EmptyCorpus("no documents to index")
    fingerprint = corpus_fingerprint(documents)
    if out_dir is not None:
        existing = _try_load_matching(Path(out_dir), fingerprint, provider.provider_id)
        if existing is not None:
            logger.info("index up to date for %d documents; skipping rebuild", len(existing))
            return existing
    vectors = embed_many([doc.text for doc in documents], provider, gateway, workers=workers)
    dimension = int(vectors[0].shape[0])
    for doc, vector in zip(documents, vectors):
        if vector.shape[0] != dimension:
            raise DimensionMismatch(
                f"document {doc.doc_id!r} embedded to {vector.shape[0]} dims, index has {dimension}"
            )
    index = VectorIndex(
        doc_ids=[doc.doc_id for doc in documents],
        texts=[doc.text for doc in documents],
        matrix=np.vstack(vectors).astype(np.float32),
        dimension=dimension,
        corpus_fingerprint=fingerprint,
        provider_id=provider.provider_id,
    )
    if out_dir is not None:
        save_index(index, out_dir)
    return index


def save_index(index: VectorIndex, out_dir: str | Path) -> None:
    """Persist as little-endian float32 rows plus JSONL and JSON sidecars."""
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    index.matrix.astype("<f4").tofile(directory / _VECTORS_FILE)
    with (directory / _IDS_FILE).open("w", encoding="utf-8") as handle:
        for doc_id, text in zip(index.doc_ids, index.texts):
            handle.write(json.dumps({"doc_id": doc_id, "text": text}, ensure_ascii=False) + "\n")
    meta = {
        "version": _INDEX_VERSION,
        "dimension": index.dimension,
        "count": len(index),
        "corpus_fingerprint": index.corpus_fingerprint,
        "provider_id": index.provider_id,
    }
    (directory / _META_FILE).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_index(directory: str | Path) -> VectorIndex:
    directory = Path(directory)
    meta = json.loads((directory / _META_FILE).read_text(encoding="utf-8"))
    doc_ids: list[str] = []
    texts: list[str] = []
    with (directory / _IDS_FILE).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            doc_ids.append(entry["doc_id"])
            texts.append(entry["text"])
    matrix = np.fromfile(directory / _VECTORS_FILE, dtype="<f4").reshape(
        meta["count"], meta["dimension"]
    )
    return VectorIndex(
        doc_ids=doc_ids,
        texts=texts,
        matrix=matrix,
        dimension=meta["dimension"],
        corpus_fingerprint=meta["corpus_fingerprint"],
        provider_id=meta["provider_id"],
    )


def _try_load_matching(directory: Path, fingerprint: str, provider_id: str) -> VectorIndex | None:
    if not (directory / _META_FILE).exists():
        return None
    try:
        index = load_index(directory)
    except (OSError, ValueError, KeyError):
        return None
    if index.corpus_fingerprint == fingerprint and index.provider_id == provider_id:
        return index
    return None


def retrieve_vector(query: np.ndarray, index: VectorIndex, m: int) -> list[tuple[str, str, float]]:
    """Exact top-m by cosine over unit vectors (dot product), full scan.

    Returns (doc_id, text, score) sorted by descending score; ties are broken
    by ascending doc_id so rankings are total and reproducible.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if len(index) == 0:
        raise EmptyIndex("vector index is empty")
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (index.dimension,):
        raise DimensionMismatch(f"query shape {query.shape} vs index dimension {index.dimension}")
    scores = index.matrix @ query
    # lexsort: last key is primary, so order by score descending then doc_id ascending
    order = np.lexsort((np.asarray(index.doc_ids), -scores))
    top = order[: min(m, len(index))]
    return [
        (index.doc_ids[i], index.texts[i], float(np.clip(scores[i], -1.0, 1.0))) for i in top
    ]


def retrieve(
    claim: Claim,
    index: VectorIndex,
    m: int,
    provider: BackendSpec,
    gateway: LLMGateway | None = None,
) -> EvidencePool:
    """Build the claim's shared evidence pool from the index."""
    query = embed(claim.text, provider, gateway)
    ranked = retrieve_vector(query, index, m)
    snippets = tuple(
        EvidenceSnippet(doc_id=doc_id, rank=rank, score=score, text=text)
        for rank, (doc_id, text, score) in enumerate(ranked, start=1)
    )
    return EvidencePool(claim_id=claim.id, snippets=snippets, source=PoolSource.RETRIEVED)


def _truncate_words(text: str, limit: int) -> str:
    """Cut text at a word boundary so it fits in limit characters."""
    if limit <= 0:
        return ""
    if len(text) <= limit:
        return text
    cut = text[: limit + 1]
    boundary = cut.rfind(" ")
    if boundary <= 0:
        return ""
    return cut[:boundary].rstrip()


def format_evidence(pool: EvidencePool, char_budget: int = DEFAULT_CHAR_BUDGET) -> str:
    """Render '[rank] text' lines within a total character budget.

    Lowest-ranked snippets are dropped first when they cannot fit; the last
    kept snippet is truncated at a word boundary. The top snippet is always
    present, cut to at least its first word, so output is never empty.
    """
    if not pool.snippets:
        raise ValueError("cannot format an empty evidence pool")
    kept = list(pool.snippets)
    while kept:
        rendered = "\n".join(f"[{s.rank}] {s.text}" for s in kept)
        if len(rendered) <= char_budget:
            return rendered
        head = "\n".join(f"[{s.rank}] {s.text}" for s in kept[:-1])
        last = kept[-1]
        prefix = f"[{last.rank}] "
        allowance = char_budget - len(prefix) - (len(head) + 1 if head else 0)
        if len(kept) == 1:
            first_word = last.text.split()[0]
            truncated = _truncate_words(last.text, max(allowance, 0)) or first_word
            return prefix + truncated
        truncated = _truncate_words(last.text, allowance)
        if truncated:
            return head + "\n" + prefix + truncated
        kept.pop()
    raise AssertionError("unreachable: pool was non-empty")
