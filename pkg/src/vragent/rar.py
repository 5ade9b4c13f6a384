"""Retrieval-augmented reflection: exact top-K cosine retrieval, relevance
filtering, reranking, and the student rewrite of weak answers.

The index is exact (a flat matrix scanned per query), not approximate:
desk-scale corpora make exactness affordable and testable. Items flow
through up to three stages, each stamping its score onto a copy of the
item: retrieval_score (cosine), relevance_score (scorer backend), and
finally rerank_rank.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    DuplicateId,
    EmptyIndex,
    IoFailure,
    MissingScores,
    SchemaViolation,
)
from .backends.base import ChatBackend, EmbedderBackend, RelevanceBackend
from .backends.agents import rewrite_answer
from .types import RoiRegion

__all__ = [
    "KnowledgeItem",
    "VectorIndex",
    "RarConfig",
    "index_build",
    "retrieve_topk",
    "score_relevance",
    "rerank",
    "reflect_rewrite",
    "load_knowledge_base",
    "RarPipeline",
]


@dataclass(frozen=True)
class KnowledgeItem:
    """One external-knowledge passage and its pipeline-stage scores."""

    id: str
    text: str
    source: str = ""
    embedding: Optional[tuple[float, ...]] = None
    retrieval_score: Optional[float] = None
    relevance_score: Optional[float] = None
    rerank_rank: Optional[int] = None


class VectorIndex:
    """Exact nearest-neighbor index under cosine similarity."""

    def __init__(self, dimension: int, items: list[KnowledgeItem], matrix: np.ndarray):
        self.dimension = dimension
        self.items = items
        self._matrix = matrix
        norms = np.linalg.norm(matrix, axis=1)
        norms[norms == 0.0] = 1.0  # zero vectors score 0 against everything
        self._unit = matrix / norms[:, None]

    def __len__(self) -> int:
        return len(self.items)

    def cosines(self, query_vec: Sequence[float]) -> np.ndarray:
        q = np.asarray(query_vec, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DimensionMismatch(f"query has dimension {q.shape}, index is {self.dimension}")
        qn = np.linalg.norm(q)
        if qn == 0.0:
            return np.zeros(len(self.items))
        return self._unit @ (q / qn)


@dataclass
class RarConfig:
    """Pipeline shape: how many candidates, and which stages are active.

    (filter_enabled, rerank_enabled) spans the four retrieval strategies:
    both off = fixed top-K, rerank only, filter only = dynamic top-K, and
    both on = adaptive retrieval.
    """

    top_k: int = 5
    relevance_threshold: float = 0.5
    filter_enabled: bool = True
    rerank_enabled: bool = True

    def validate(self) -> None:
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if not (0.0 <= self.relevance_threshold <= 1.0):
            raise ConfigError("relevance_threshold must be in [0,1]")

    def to_dict(self) -> dict:
        return {
            "top_k": self.top_k,
            "relevance_threshold": self.relevance_threshold,
            "filter_enabled": self.filter_enabled,
            "rerank_enabled": self.rerank_enabled,
        }


def index_build(items: list[KnowledgeItem]) -> VectorIndex:
    """Build the exact-cosine index; all embeddings must share one dimension."""
    if not items:
        return VectorIndex(0, [], np.zeros((0, 0)))
    seen: set[str] = set()
    dim: Optional[int] = None
    rows = []
    for item in items:
        if item.id in seen:
            raise DuplicateId(f"knowledge id {item.id!r} appears twice")
        seen.add(item.id)
        if item.embedding is None:
            raise DimensionMismatch(f"knowledge item {item.id!r} has no embedding")
        if dim is None:
            dim = len(item.embedding)
        elif len(item.embedding) != dim:
            raise DimensionMismatch(
                f"item {item.id!r} has dimension {len(item.embedding)}, index is {dim}"
            )
        rows.append(item.embedding)
    return VectorIndex(dim or 0, list(items), np.asarray(rows, dtype=np.float64))


def retrieve_topk(index: VectorIndex, query_vec: Sequence[float], k: int) -> list[KnowledgeItem]:
    """The k most cosine-similar items, descending; ties break on id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise EmptyIndex("retrieval against an empty index")
    scores = index.cosines(query_vec)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.items[i].id))
    return [
        replace(index.items[i], retrieval_score=float(scores[i]))
        for i in order[:k]
    ]


def score_relevance(query_bundle: tuple[str, str, str], candidates: list[KnowledgeItem],
                    scorer: RelevanceBackend, cfg: RarConfig) -> list[KnowledgeItem]:
    """Stamp relevance scores; with filtering on, drop candidates below the
    threshold but always keep at least the single best so the rewrite never
    runs without context."""
    if not candidates:
        raise ValueError("score_relevance needs a non-empty candidate list")
    guidance, answer, question = query_bundle
    query = "\n".join(part for part in (question, guidance, answer) if part)
    scored = [
        replace(item, relevance_score=float(scorer.score(query, item.text)))
        for item in candidates
    ]
    if not cfg.filter_enabled:
        return scored
    kept = [item for item in scored if item.relevance_score >= cfg.relevance_threshold]
    if not kept:
        kept = [min(scored, key=lambda i: (-i.relevance_score, -(i.retrieval_score or 0.0), i.id))]
    return kept


def rerank(candidates: list[KnowledgeItem], rerank_enabled: bool = True) -> list[KnowledgeItem]:
    """Order by relevance (ties: retrieval score, then id) and stamp ranks;
    with reranking off the incoming retrieval order is kept."""
    if rerank_enabled:
        for item in candidates:
            if item.relevance_score is None:
                raise MissingScores(f"candidate {item.id!r} has no relevance score")
        ordered = sorted(
            candidates,
            key=lambda i: (-i.relevance_score, -(i.retrieval_score or 0.0), i.id),
        )
    else:
        ordered = list(candidates)
    return [replace(item, rerank_rank=pos) for pos, item in enumerate(ordered, start=1)]


def reflect_rewrite(student: ChatBackend, question: str, roi: RoiRegion, guidance: str,
                    answer: str, feedback: str, knowledge: list[KnowledgeItem],
                    image_ref: str | None = None, temperature: float = 0.7) -> str:
    """One student call rewriting a weak answer with the retrieved passages."""
    passages = [item.text for item in knowledge]
    return rewrite_answer(student, question, roi, guidance, answer, feedback, passages,
                          image_ref=image_ref, temperature=temperature)


def load_knowledge_base(path: str | Path, embedder: EmbedderBackend) -> list[KnowledgeItem]:
    """Load passages from a JSONL file: {id, text, source, optional embedding}.

    Missing embeddings are computed with the embedder and cached in a
    sidecar file next to the knowledge base, keyed by item id.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read knowledge base {path}: {exc}") from exc

    sidecar = path.with_suffix(path.suffix + ".emb.jsonl")
    cache: dict[str, tuple[float, ...]] = {}
    if sidecar.is_file():
        for line in sidecar.read_text(encoding="utf-8").splitlines():
            if line.strip():
                obj = json.loads(line)
                cache[obj["id"]] = tuple(float(v) for v in obj["embedding"])

    items: list[KnowledgeItem] = []
    computed = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            item_id = obj["id"]
            text = obj["text"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaViolation(f"bad knowledge record: {exc}", line=lineno) from exc
        embedding = obj.get("embedding")
        if embedding is not None:
            embedding = tuple(float(v) for v in embedding)
        elif item_id in cache:
            embedding = cache[item_id]
        else:
            embedding = tuple(embedder.embed(text))
            cache[item_id] = embedding
            computed = True
        items.append(KnowledgeItem(
            id=str(item_id), text=str(text), source=str(obj.get("source", "")),
            embedding=embedding,
        ))

    if computed:
        try:
            with sidecar.open("w", encoding="utf-8") as fh:
                for item_id, vec in cache.items():
                    fh.write(json.dumps({"id": item_id, "embedding": list(vec)},
                                        sort_keys=True) + "\n")
        except OSError:
            pass  # cache is an optimization; loading still succeeded
    return items


class RarPipeline:
    """Retrieve -> relevance -> rerank, wired to one index and backend pair."""

    def __init__(self, index: VectorIndex, embedder: EmbedderBackend,
                 scorer: RelevanceBackend, cfg: RarConfig,
                 use_image_embedding: bool = False):
        cfg.validate()
        self.index = index
        self.embedder = embedder
        self.scorer = scorer
        self.cfg = cfg
        self.use_image_embedding = use_image_embedding

    def query_vector(self, question: str, guidance: str, answer: str,
                     image_ref: str | None = None) -> list[float]:
        """Fuse the retrieval query: text embedding of question+guidance+answer,
        averaged with the image embedding when one is configured."""
        text = "\n".join(part for part in (question, guidance, answer) if part)
        vec = np.asarray(self.embedder.embed(text), dtype=np.float64)
        if self.use_image_embedding and image_ref:
            img = np.asarray(self.embedder.embed(image_ref, kind="image"), dtype=np.float64)
            vec = (vec + img) / 2.0
        return vec.tolist()

    def retrieve(self, question: str, guidance: str, answer: str,
                 image_ref: str | None = None) -> list[KnowledgeItem]:
        """Full pipeline; returns [] when no knowledge is indexed."""
        if len(self.index) == 0:
            return []
        qv = self.query_vector(question, guidance, answer, image_ref)
        k1 = retrieve_topk(self.index, qv, self.cfg.top_k)
        if not self.cfg.filter_enabled and not self.cfg.rerank_enabled:
            return [replace(item, rerank_rank=pos) for pos, item in enumerate(k1, start=1)]
        k2 = score_relevance((guidance, answer, question), k1, self.scorer, self.cfg)
        return rerank(k2, rerank_enabled=self.cfg.rerank_enabled)
