"""Replay journals: an append-only record of one search run.

Every backend response and tree mutation lands in a line-delimited JSON
journal. Replay rebuilds the identical tree with no backends at all: the
recorded responses are served back in order, the recorded retrieval results
stand in for the knowledge index, and the seeded rng re-draws the same
region choices. Verification re-runs the journal and compares the
serialized path and tree against what the original run recorded.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from pathlib import Path
from typing import Optional

from ..backends.base import (
    BackendSuite,
    ChatBackend,
    ChatRequest,
    DetectorBackend,
    EmbedderBackend,
    RelevanceBackend,
)
from ..errors import JournalCorrupt
from ..rar import KnowledgeItem
from ..types import EntitySet, Query, RoiRegion, SearchConfig
from .tree import PathResult, PruneBounds, SearchTree

__all__ = ["JournalWriter", "RecordingSuite", "replay_journal", "verify_journal", "JOURNAL_VERSION"]

JOURNAL_VERSION = "vragent-journal/1"


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _tree_sha(tree: SearchTree) -> str:
    return hashlib.sha256(_dumps(tree.to_dict()).encode("utf-8")).hexdigest()


def _item_to_dict(item: KnowledgeItem) -> dict:
    return {
        "id": item.id,
        "text": item.text,
        "source": item.source,
        "retrieval_score": item.retrieval_score,
        "relevance_score": item.relevance_score,
        "rerank_rank": item.rerank_rank,
    }


def _item_from_dict(d: dict) -> KnowledgeItem:
    return KnowledgeItem(
        id=d["id"], text=d["text"], source=d.get("source", ""),
        retrieval_score=d.get("retrieval_score"),
        relevance_score=d.get("relevance_score"),
        rerank_rank=d.get("rerank_rank"),
    )


class JournalWriter:
    """Accumulates journal lines; save or ship them when the run is done."""

    def __init__(self):
        self._lines: list[str] = []

    def _write(self, record: dict) -> None:
        self._lines.append(_dumps(record))

    def meta(self, query: Query, config: SearchConfig, entities: Optional[EntitySet],
             prune_bounds: Optional[PruneBounds]) -> None:
        self._write({
            "kind": "meta",
            "version": JOURNAL_VERSION,
            "query": {
                "id": query.id, "question": query.question,
                "image_ref": query.image_ref, "question_kind": query.question_kind,
            },
            "config": config.to_dict(),
            "entities": list(entities.entities) if entities is not None else None,
            "prune_bounds": [prune_bounds.alpha, prune_bounds.beta] if prune_bounds else None,
        })

    def backend_call(self, role: str, request_sha: str, response) -> None:
        self._write({"kind": "backend_call", "role": role,
                     "request_sha": request_sha, "response": response})

    def event(self, event: str, **fields) -> None:
        self._write({"kind": "event", "event": event, **fields})

    def retrieval(self, node_id: int, items: list[KnowledgeItem]) -> None:
        self._write({"kind": "retrieval", "node_id": node_id,
                     "items": [_item_to_dict(i) for i in items]})

    def result(self, path: PathResult, tree: SearchTree) -> None:
        self._write({"kind": "result", "path": path.to_dict(), "tree_sha": _tree_sha(tree)})

    def text(self) -> str:
        return "\n".join(self._lines) + "\n" if self._lines else ""

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.text(), encoding="utf-8")


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# --- recording wrappers ---------------------------------------------------

class _RecChat(ChatBackend):
    def __init__(self, inner: ChatBackend, journal: JournalWriter, role: str):
        self._inner, self._journal, self._role = inner, journal, role

    def complete(self, request: ChatRequest) -> str:
        reply = self._inner.complete(request)
        self._journal.backend_call(self._role, _sha(request.match_text()), reply)
        return reply


class _RecDetector(DetectorBackend):
    def __init__(self, inner: DetectorBackend, journal: JournalWriter):
        self._inner, self._journal = inner, journal

    def detect(self, image_ref, entities):
        regions = self._inner.detect(image_ref, entities)
        self._journal.backend_call("detector", _sha(image_ref), [
            {"bbox": list(r.bbox), "confidence": r.confidence, "label": r.label}
            for r in regions
        ])
        return regions


class _RecEmbedder(EmbedderBackend):
    def __init__(self, inner: EmbedderBackend, journal: JournalWriter):
        self._inner, self._journal = inner, journal
        self.dimension = inner.dimension

    def embed(self, content: str, kind: str = "text") -> list[float]:
        vec = self._inner.embed(content, kind)
        self._journal.backend_call("embedder", _sha(content), list(vec))
        return vec


class _RecRelevance(RelevanceBackend):
    def __init__(self, inner: RelevanceBackend, journal: JournalWriter):
        self._inner, self._journal = inner, journal

    def score(self, query: str, passage: str) -> float:
        value = self._inner.score(query, passage)
        self._journal.backend_call("relevance", _sha(query + "\n" + passage), value)
        return value


def RecordingSuite(suite: BackendSuite, journal: JournalWriter) -> BackendSuite:
    """Wrap every role so its responses land in the journal."""
    return BackendSuite(
        teacher=_RecChat(suite.teacher, journal, "teacher"),
        student=_RecChat(suite.student, journal, "student"),
        assessor=_RecChat(suite.assessor, journal, "assessor"),
        detector=_RecDetector(suite.detector, journal),
        embedder=_RecEmbedder(suite.embedder, journal),
        relevance=_RecRelevance(suite.relevance, journal),
    )


# --- replay ------------------------------------------------------------------

class _ReplayChat(ChatBackend):
    def __init__(self, queue: deque, role: str):
        self._queue, self._role = queue, role

    def complete(self, request: ChatRequest) -> str:
        if not self._queue:
            raise JournalCorrupt(f"journal exhausted for role {self._role}")
        return self._queue.popleft()


class _ReplayDetector(DetectorBackend):
    def __init__(self, queue: deque):
        self._queue = queue

    def detect(self, image_ref, entities):
        if not self._queue:
            raise JournalCorrupt("journal exhausted for role detector")
        return [
            RoiRegion(bbox=tuple(r["bbox"]), confidence=r["confidence"], label=r["label"])
            for r in self._queue.popleft()
        ]


class _ReplayEmbedder(EmbedderBackend):
    def __init__(self, queue: deque):
        self._queue = queue
        self.dimension = 0

    def embed(self, content: str, kind: str = "text") -> list[float]:
        if not self._queue:
            raise JournalCorrupt("journal exhausted for role embedder")
        vec = self._queue.popleft()
        self.dimension = len(vec)
        return vec


class _ReplayRelevance(RelevanceBackend):
    def __init__(self, queue: deque):
        self._queue = queue

    def score(self, query: str, passage: str) -> float:
        if not self._queue:
            raise JournalCorrupt("journal exhausted for role relevance")
        return self._queue.popleft()


class _ReplayRetriever:
    def __init__(self, queue: deque):
        self._queue = queue

    def retrieve(self, question, guidance, answer, image_ref=None):
        if not self._queue:
            raise JournalCorrupt("journal exhausted for retrieval results")
        return [_item_from_dict(d) for d in self._queue.popleft()]


def _parse_journal(text: str):
    meta = None
    calls: dict[str, deque] = {role: deque() for role in
                               ("teacher", "student", "assessor", "detector",
                                "embedder", "relevance")}
    retrievals: deque = deque()
    result = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise JournalCorrupt(f"line {lineno}: not valid JSON") from exc
        kind = record.get("kind")
        if kind == "meta":
            if record.get("version") != JOURNAL_VERSION:
                raise JournalCorrupt(f"unsupported journal version {record.get('version')!r}")
            meta = record
        elif kind == "backend_call":
            role = record.get("role")
            if role not in calls:
                raise JournalCorrupt(f"line {lineno}: unknown role {role!r}")
            calls[role].append(record["response"])
        elif kind == "retrieval":
            retrievals.append(record["items"])
        elif kind == "result":
            result = record
        elif kind != "event":
            raise JournalCorrupt(f"line {lineno}: unknown record kind {kind!r}")
    if meta is None:
        raise JournalCorrupt("journal carries no meta record")
    return meta, calls, retrievals, result


def replay_journal(text: str) -> tuple[SearchTree, PathResult]:
    """Re-run a journaled search with recorded responses instead of backends."""
    from .engine import run_search  # local import; engine journals via this module

    meta, calls, retrievals, _ = _parse_journal(text)
    query = Query(**meta["query"])
    config = SearchConfig.from_dict(meta["config"])
    entities = EntitySet.from_list(meta["entities"]) if meta["entities"] is not None else None
    bounds = PruneBounds(*meta["prune_bounds"]) if meta.get("prune_bounds") else None
    suite = BackendSuite(
        teacher=_ReplayChat(calls["teacher"], "teacher"),
        student=_ReplayChat(calls["student"], "student"),
        assessor=_ReplayChat(calls["assessor"], "assessor"),
        detector=_ReplayDetector(calls["detector"]),
        embedder=_ReplayEmbedder(calls["embedder"]),
        relevance=_ReplayRelevance(calls["relevance"]),
    )
    try:
        return run_search(query, suite, config, retriever=_ReplayRetriever(retrievals),
                          entities=entities, fixed_prune_bounds=bounds)
    except IndexError as exc:  # popleft on a mid-call truncation
        raise JournalCorrupt("journal truncated mid-call") from exc


def verify_journal(text: str) -> bool:
    """True iff replaying reproduces the recorded path and tree exactly."""
    meta, _, _, result = _parse_journal(text)
    if result is None:
        raise JournalCorrupt("journal carries no result record")
    tree, path = replay_journal(text)
    same_path = _dumps(path.to_dict()) == _dumps(result["path"])
    return same_path and _tree_sha(tree) == result["tree_sha"]


def run_with_journal(query: Query, suite: BackendSuite, config: SearchConfig,
                     retriever=None, entities: Optional[EntitySet] = None,
                     fixed_prune_bounds: Optional[PruneBounds] = None,
                     ) -> tuple[SearchTree, PathResult, JournalWriter]:
    """Run a search with full journaling: meta first, every backend response
    and tree event in between, the result record last."""
    from .engine import run_search

    journal = JournalWriter()
    journal.meta(query, config, entities, fixed_prune_bounds)
    recording = RecordingSuite(suite, journal)
    tree, path = run_search(query, recording, config, retriever=retriever,
                            journal=journal, entities=entities,
                            fixed_prune_bounds=fixed_prune_bounds)
    journal.result(path, tree)
    return tree, path, journal
