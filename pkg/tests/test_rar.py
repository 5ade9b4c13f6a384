"""Retrieval pipeline: exactness, filtering, reranking, rewrite, KB loading."""

import json
import random

import numpy as np
import pytest

from vragent.backends.mock import HashingEmbedder, MockScript, build_mock_suite
from vragent.errors import DimensionMismatch, DuplicateId, EmptyIndex, MissingScores
from vragent.rar import (
    KnowledgeItem,
    RarConfig,
    RarPipeline,
    index_build,
    load_knowledge_base,
    reflect_rewrite,
    rerank,
    retrieve_topk,
    score_relevance,
)
from vragent.types import RoiRegion

ROI = RoiRegion(bbox=(0.1, 0.1, 0.4, 0.4), confidence=0.8, label="lung")


def item(i, vec, text="passage"):
    return KnowledgeItem(id=f"k{i:04d}", text=f"{text} {i}", embedding=tuple(vec))


class FixedRelevance:
    """Scripted relevance by passage id order."""

    def __init__(self, scores):
        self.scores = scores
        self.calls = 0

    def score(self, query, passage):
        self.calls += 1
        idx = int(passage.split()[-1])
        return self.scores[idx]


class TestIndexBuild:
    def test_size(self):
        idx = index_build([item(i, [1.0, 0.0, 0.0, 0.0]) for i in range(3)])
        assert len(idx) == 3 and idx.dimension == 4

    def test_mixed_dimensions(self):
        with pytest.raises(DimensionMismatch):
            index_build([item(0, [1.0, 0.0]), item(1, [1.0, 0.0, 0.0])])

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId):
            index_build([item(0, [1.0]), item(0, [2.0])])


class TestRetrieveTopk:
    def test_self_similarity_first(self):
        idx = index_build([item(0, [1.0, 0.0]), item(1, [0.0, 1.0])])
        top = retrieve_topk(idx, [1.0, 0.0], 2)
        assert top[0].id == "k0000"
        assert top[0].retrieval_score == pytest.approx(1.0)

    def test_orthogonal_ties_break_on_id(self):
        idx = index_build([item(1, [0.0, 1.0]), item(0, [0.0, -1.0])])
        top = retrieve_topk(idx, [1.0, 0.0], 2)
        assert [t.id for t in top] == ["k0000", "k0001"]
        assert all(t.retrieval_score == pytest.approx(0.0) for t in top)

    def test_empty_index(self):
        with pytest.raises(EmptyIndex):
            retrieve_topk(index_build([]), [1.0], 1)

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(101)
        d = 16
        items = [item(i, rng.normal(size=d)) for i in range(1000)]
        idx = index_build(items)
        for _ in range(10):
            q = rng.normal(size=d)
            got = [it.id for it in retrieve_topk(idx, q, 10)]
            # independent linear scan oracle
            def cos(v):
                v = np.asarray(v)
                return float(v @ q / (np.linalg.norm(v) * np.linalg.norm(q)))
            expect = sorted(items, key=lambda it: (-cos(it.embedding), it.id))[:10]
            assert got == [it.id for it in expect]


class TestScoreRelevance:
    def _candidates(self):
        idx = index_build([item(0, [1.0, 0.0]), item(1, [0.8, 0.2])])
        return retrieve_topk(idx, [1.0, 0.0], 2)

    def test_threshold_filter(self):
        scorer = FixedRelevance({0: 0.9, 1: 0.3})
        cfg = RarConfig(relevance_threshold=0.5, filter_enabled=True)
        kept = score_relevance(("g", "a", "q"), self._candidates(), scorer, cfg)
        assert [k.id for k in kept] == ["k0000"]
        assert kept[0].relevance_score == 0.9

    def test_filter_off_retains_all(self):
        scorer = FixedRelevance({0: 0.9, 1: 0.3})
        cfg = RarConfig(relevance_threshold=0.5, filter_enabled=False)
        kept = score_relevance(("g", "a", "q"), self._candidates(), scorer, cfg)
        assert [k.id for k in kept] == ["k0000", "k0001"]
        assert [k.relevance_score for k in kept] == [0.9, 0.3]

    def test_all_below_threshold_keeps_single_best(self):
        scorer = FixedRelevance({0: 0.2, 1: 0.4})
        cfg = RarConfig(relevance_threshold=0.5, filter_enabled=True)
        kept = score_relevance(("g", "a", "q"), self._candidates(), scorer, cfg)
        assert [k.id for k in kept] == ["k0001"]


class TestRerank:
    def _scored(self, relevances, retrievals=None):
        retrievals = retrievals or [0.9, 0.8]
        return [
            KnowledgeItem(id=f"k{i}", text="t", retrieval_score=retrievals[i],
                          relevance_score=relevances[i])
            for i in range(len(relevances))
        ]

    def test_sorts_by_relevance(self):
        out = rerank(self._scored([0.3, 0.9]))
        assert [o.id for o in out] == ["k1", "k0"]
        assert [o.rerank_rank for o in out] == [1, 2]

    def test_disabled_keeps_retrieval_order(self):
        out = rerank(self._scored([0.3, 0.9]), rerank_enabled=False)
        assert [o.id for o in out] == ["k0", "k1"]

    def test_tie_breaks_on_retrieval_score(self):
        out = rerank(self._scored([0.5, 0.5], retrievals=[0.1, 0.7]))
        assert [o.id for o in out] == ["k1", "k0"]

    def test_missing_scores(self):
        bad = [KnowledgeItem(id="k", text="t", retrieval_score=0.5)]
        with pytest.raises(MissingScores):
            rerank(bad)

    def test_idempotent(self):
        once = rerank(self._scored([0.2, 0.7]))
        assert rerank(once) == once


class TestPipelineShapes:
    """The four (filter, rerank) configurations are structurally distinct."""

    def _pipeline(self, filter_enabled, rerank_enabled, scorer):
        emb = HashingEmbedder(8)
        items = [
            KnowledgeItem(id=f"k{i}", text=f"passage {i}",
                          embedding=tuple(emb.embed(f"passage {i}")))
            for i in range(4)
        ]
        cfg = RarConfig(top_k=3, relevance_threshold=0.5,
                        filter_enabled=filter_enabled, rerank_enabled=rerank_enabled)
        return RarPipeline(index_build(items), emb, scorer, cfg)

    def test_fixed_topk_never_calls_the_scorer(self):
        scorer = FixedRelevance({i: 0.5 for i in range(4)})
        out = self._pipeline(False, False, scorer).retrieve("q", "g", "a")
        assert scorer.calls == 0
        assert len(out) == 3 and [o.rerank_rank for o in out] == [1, 2, 3]

    def test_rerank_only_scores_without_dropping(self):
        scorer = FixedRelevance({0: 0.1, 1: 0.2, 2: 0.3, 3: 0.4})
        out = self._pipeline(False, True, scorer).retrieve("q", "g", "a")
        assert scorer.calls == 3
        assert len(out) == 3
        rel = [o.relevance_score for o in out]
        assert rel == sorted(rel, reverse=True)

    def test_dynamic_topk_drops_but_keeps_order(self):
        scorer = FixedRelevance({0: 0.9, 1: 0.2, 2: 0.9, 3: 0.9})
        pipe = self._pipeline(True, False, scorer)
        out = pipe.retrieve("q", "g", "a")
        assert 1 <= len(out) <= 3
        ids_before = [o.id for o in retrieve_topk(pipe.index, pipe.query_vector("q", "g", "a"), 3)]
        assert [o.id for o in out] == [i for i in ids_before
                                       if i in {o.id for o in out}]

    def test_adaptive_retrieval_filters_and_sorts(self):
        scorer = FixedRelevance({0: 0.6, 1: 0.2, 2: 0.9, 3: 0.7})
        out = self._pipeline(True, True, scorer).retrieve("q", "g", "a")
        rel = [o.relevance_score for o in out]
        assert all(r >= 0.5 for r in rel)
        assert rel == sorted(rel, reverse=True)

    def test_cardinality_chain(self):
        rng = random.Random(3)
        emb = HashingEmbedder(8)
        for trial in range(20):
            scorer = FixedRelevance({i: rng.random() for i in range(6)})
            items = [
                KnowledgeItem(id=f"k{i}", text=f"passage {i}",
                              embedding=tuple(emb.embed(f"word{i} passage")))
                for i in range(6)
            ]
            cfg = RarConfig(top_k=4, relevance_threshold=0.5,
                            filter_enabled=True, rerank_enabled=True)
            pipe = RarPipeline(index_build(items), emb, scorer, cfg)
            k1 = retrieve_topk(pipe.index, pipe.query_vector("q", "g", "a"), cfg.top_k)
            k2 = score_relevance(("g", "a", "q"), k1, scorer, cfg)
            final = rerank(k2)
            assert len(final) <= len(k2) <= len(k1) <= cfg.top_k


class TestReflectRewrite:
    def _suite(self, lines):
        return build_mock_suite(MockScript.parse_lines(lines))

    def test_scripted_rewrite(self):
        suite = self._suite(['{"kind": "student", "response": "corrected: effusion present"}'])
        out = reflect_rewrite(suite.student, "q?", ROI, "g", "a", "f",
                              [KnowledgeItem(id="k", text="passage")])
        assert out == "corrected: effusion present"

    def test_empty_knowledge_marker(self):
        captured = {}

        class Capture:
            def complete(self, request):
                captured["text"] = request.text()
                return "rewritten"

        reflect_rewrite(Capture(), "q?", ROI, "g", "a", "f", [])
        assert "no external knowledge" in captured["text"]

    def test_passages_numbered_in_prompt(self):
        captured = {}

        class Capture:
            def complete(self, request):
                captured["text"] = request.text()
                return "rewritten"

        knowledge = [KnowledgeItem(id=f"k{i}", text=f"fact number {i}") for i in range(3)]
        reflect_rewrite(Capture(), "q?", ROI, "g", "a", "f", knowledge)
        for i in range(3):
            assert f"{i + 1}. fact number {i}" in captured["text"]


class TestKnowledgeBase:
    def test_load_computes_and_caches_embeddings(self, tmp_path):
        kb = tmp_path / "kb.jsonl"
        kb.write_text(
            json.dumps({"id": "a", "text": "first passage"}) + "\n" +
            json.dumps({"id": "b", "text": "second passage",
                        "embedding": [1.0] * 8}) + "\n")
        emb = HashingEmbedder(8)
        items = load_knowledge_base(kb, emb)
        assert items[0].embedding == tuple(emb.embed("first passage"))
        assert items[1].embedding == tuple([1.0] * 8)

        sidecar = tmp_path / "kb.jsonl.emb.jsonl"
        assert sidecar.is_file()
        cached = json.loads(sidecar.read_text().splitlines()[0])
        assert cached["id"] == "a"

        class NeverCalled(HashingEmbedder):
            def embed(self, content, kind="text"):
                raise AssertionError("cache should have been used")

        again = load_knowledge_base(kb, NeverCalled(8))
        assert again[0].embedding == items[0].embedding
