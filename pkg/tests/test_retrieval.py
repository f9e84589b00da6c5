from __future__ import annotations

import numpy as np
import pytest

from factdebate.core import CorpusDocument, PoolSource
from factdebate.gateway import BackendKind, BackendSpec, ScriptMiss
from factdebate.retrieval import (
    DimensionMismatch,
    EmptyCorpus,
    VectorIndex,
    build_index,
    chunk_documents,
    embed,
    format_evidence,
    hash_embed,
    load_index,
    normalize,
    retrieve,
    retrieve_vector,
)

HASH_BACKEND = BackendSpec(kind=BackendKind.HASH, model_name="hash-64")


def unit_index(vectors: dict[str, list[float]]) -> VectorIndex:
    doc_ids = list(vectors)
    matrix = np.vstack([normalize(np.array(vectors[d], dtype=np.float32)) for d in doc_ids])
    return VectorIndex(
        doc_ids=doc_ids,
        texts=[f"text of {d}" for d in doc_ids],
        matrix=matrix,
        dimension=matrix.shape[1],
        corpus_fingerprint="test",
        provider_id="test:unit",
    )


class TestEmbedding:
    def test_hash_embed_unit_norm_and_deterministic(self):
        a = hash_embed("the budget was cut", 64)
        b = hash_embed("the budget was cut", 64)
        assert np.array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)

    def test_hash_dimension_from_model_name(self):
        vec = embed("some text", HASH_BACKEND)
        assert vec.shape == (64,)

    def test_embed_rejects_empty_text(self):
        with pytest.raises(ValueError):
            embed("   ", HASH_BACKEND)

    def test_scripted_embeddings_exact(self, embedding_backend):
        from tests.conftest import CLAIM_TEXT

        vec = embed(CLAIM_TEXT, embedding_backend)
        assert np.allclose(vec, [1.0, 0.0, 0.0])

    def test_scripted_embeddings_miss(self, embedding_backend):
        with pytest.raises(ScriptMiss):
            embed("never scripted", embedding_backend)

    def test_embed_deterministic_for_fixed_provider(self, embedding_backend):
        from tests.conftest import DOC_TEXTS

        first = embed(DOC_TEXTS["d2"], embedding_backend)
        second = embed(DOC_TEXTS["d2"], embedding_backend)
        assert np.array_equal(first, second)

    def test_normalize_zero_vector_gets_fixed_basis(self):
        vec = normalize(np.zeros(4))
        assert vec[0] == 1.0
        assert np.linalg.norm(vec) == pytest.approx(1.0)


class TestRetrieve:
    def test_identical_vector_scores_one(self):
        index = unit_index({"d1": [1, 0], "d2": [0, 1]})
        ranked = retrieve_vector(np.array([1.0, 0.0], dtype=np.float32), index, 1)
        assert ranked[0][0] == "d1"
        assert ranked[0][2] == pytest.approx(1.0)

    def test_orthogonal_scores_zero(self):
        index = unit_index({"d2": [0, 1]})
        ranked = retrieve_vector(np.array([1.0, 0.0], dtype=np.float32), index, 1)
        assert ranked[0][0] == "d2"
        assert ranked[0][2] == pytest.approx(0.0)

    def test_five_document_brute_force_oracle(self):
        # Hand-fixed 3-dim vectors; oracle is an exhaustive sort of all scores.
        vectors = {
            "a": [0.9, 0.1, 0.1],
            "b": [0.2, 0.9, 0.0],
            "c": [0.5, 0.5, 0.5],
            "d": [0.0, 0.0, 1.0],
            "e": [0.7, 0.0, 0.7],
        }
        index = unit_index(vectors)
        query = normalize(np.array([1.0, 0.2, 0.4], dtype=np.float32))
        scores = index.matrix @ query
        oracle = sorted(range(5), key=lambda i: (-scores[i], index.doc_ids[i]))[:3]
        ranked = retrieve_vector(query, index, 3)
        assert [doc_id for doc_id, _, _ in ranked] == [index.doc_ids[i] for i in oracle]

    def test_ties_broken_by_ascending_doc_id(self):
        index = unit_index({"z": [1, 0], "a": [1, 0], "m": [0, 1]})
        ranked = retrieve_vector(np.array([1.0, 0.0], dtype=np.float32), index, 3)
        assert [doc_id for doc_id, _, _ in ranked] == ["a", "z", "m"]

    def test_pool_size_capped_at_corpus(self):
        index = unit_index({"a": [1, 0], "b": [0, 1]})
        ranked = retrieve_vector(np.array([1.0, 0.0], dtype=np.float32), index, 50)
        assert len(ranked) == 2

    def test_prefix_property_random_trials(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            dim = int(rng.integers(2, 8))
            matrix = rng.normal(size=(n, dim)).astype(np.float32)
            matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
            index = VectorIndex(
                doc_ids=[f"d{i:03d}" for i in range(n)],
                texts=["t"] * n,
                matrix=matrix,
                dimension=dim,
                corpus_fingerprint="r",
                provider_id="test:unit",
            )
            query = normalize(rng.normal(size=dim))
            m = int(rng.integers(1, n))
            smaller = [d for d, _, _ in retrieve_vector(query, index, m)]
            larger = [d for d, _, _ in retrieve_vector(query, index, m + 1)]
            assert larger[:m] == smaller

    def test_retrieve_builds_valid_pool(self, toy_claim, toy_corpus, embedding_backend):
        index = build_index(toy_corpus, embedding_backend)
        pool = retrieve(toy_claim, index, 3, embedding_backend)
        assert pool.source is PoolSource.RETRIEVED
        assert [s.doc_id for s in pool.snippets] == ["d1", "d2", "d3"]
        assert [s.rank for s in pool.snippets] == [1, 2, 3]
        assert pool.snippets[0].score == pytest.approx(1.0)

    def test_empty_index_and_bad_query(self):
        index = unit_index({"a": [1, 0]})
        with pytest.raises(DimensionMismatch):
            retrieve_vector(np.array([1.0, 0.0, 0.0], dtype=np.float32), index, 1)
        with pytest.raises(ValueError):
            retrieve_vector(np.array([1.0, 0.0], dtype=np.float32), index, 0)


class TestIndexPersistence:
    def test_save_load_round_trip(self, tmp_path, toy_corpus, embedding_backend):
        index = build_index(toy_corpus, embedding_backend, out_dir=tmp_path / "idx")
        loaded = load_index(tmp_path / "idx")
        assert loaded.doc_ids == index.doc_ids
        assert loaded.texts == index.texts
        assert loaded.corpus_fingerprint == index.corpus_fingerprint
        assert loaded.provider_id == index.provider_id
        assert np.array_equal(loaded.matrix, index.matrix)

    def test_rebuild_skipped_on_matching_fingerprint(self, tmp_path, toy_corpus, embedding_backend, monkeypatch):
        out = tmp_path / "idx"
        build_index(toy_corpus, embedding_backend, out_dir=out)

        def boom(*args, **kwargs):
            raise AssertionError("re-embedded despite matching fingerprint")

        monkeypatch.setattr("factdebate.retrieval.embed_many", boom)
        again = build_index(toy_corpus, embedding_backend, out_dir=out)
        assert len(again) == len(toy_corpus)

    def test_rebuild_on_corpus_change(self, tmp_path, toy_corpus, embedding_backend):
        out = tmp_path / "idx"
        build_index(toy_corpus, embedding_backend, out_dir=out)
        changed = toy_corpus[:-1]
        rebuilt = build_index(changed, embedding_backend, out_dir=out)
        assert len(rebuilt) == len(changed)

    def test_empty_corpus(self, embedding_backend):
        with pytest.raises(EmptyCorpus):
            build_index([], embedding_backend)


class TestFormatEvidence:
    def _pool(self, texts):
        from factdebate.core import EvidencePool, EvidenceSnippet

        snippets = tuple(
            EvidenceSnippet(doc_id=f"d{i}", rank=i, score=1.0 - i * 0.1, text=text)
            for i, text in enumerate(texts, start=1)
        )
        return EvidencePool(claim_id="c", snippets=snippets, source=PoolSource.RETRIEVED)

    def test_fits_unchanged(self):
        pool = self._pool(["alpha beta", "gamma delta"])
        assert format_evidence(pool, 100) == "[1] alpha beta\n[2] gamma delta"

    def test_last_snippet_truncated_at_word_boundary(self):
        pool = self._pool(["alpha beta", "gamma delta epsilon zeta"])
        out = format_evidence(pool, len("[1] alpha beta\n[2] gamma delta") + 1)
        assert out == "[1] alpha beta\n[2] gamma delta"

    def test_drops_lowest_ranked_first(self):
        pool = self._pool(["alpha beta", "gamma delta", "epsilon zeta"])
        out = format_evidence(pool, len("[1] alpha beta\n[2] gamma delta"))
        assert out == "[1] alpha beta\n[2] gamma delta"

    def test_zero_budget_keeps_top_snippet_first_word(self):
        pool = self._pool(["alpha beta gamma"])
        assert format_evidence(pool, 0) == "[1] alpha"

    def test_byte_stable(self):
        pool = self._pool(["alpha beta", "gamma delta epsilon"])
        assert format_evidence(pool, 25) == format_evidence(pool, 25)

    def test_empty_pool_rejected(self):
        from factdebate.core import EvidencePool

        pool = EvidencePool(claim_id="c", snippets=(), source=PoolSource.GOLD)
        with pytest.raises(ValueError):
            format_evidence(pool, 100)


class TestChunking:
    def test_short_documents_untouched(self):
        docs = [CorpusDocument(doc_id="a", text="one two three")]
        assert chunk_documents(docs, 10) == docs

    def test_window_split_with_suffix_ids(self):
        docs = [CorpusDocument(doc_id="a", text="w1 w2 w3 w4 w5")]
        chunks = chunk_documents(docs, 2)
        assert [c.doc_id for c in chunks] == ["a#0", "a#1", "a#2"]
        assert [c.text for c in chunks] == ["w1 w2", "w3 w4", "w5"]
