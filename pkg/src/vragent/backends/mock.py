"""Deterministic scripted backends for tests and offline runs.

A scenario is a list of entries, one JSON object per line in the script
file: ``{"kind": ..., "match": ..., "response": ...}``. ``kind`` names the
role (teacher, student, assessor, detector, embedder, relevance); ``match``
is an optional substring the request must contain for the entry to apply.

Consumption rules, chosen so scenarios stay short and every run is
reproducible: matching entries of a kind are consumed in file order; once
all are consumed, the last matching entry keeps answering (sticky). A chat
call with no matching entry is a scenario bug and raises. Detector calls
with no entry return no regions (the engine then falls back to the whole
image); embedder and relevance calls without entries fall back to
deterministic content hashes, so scripts only pin what a scenario cares
about.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DimensionMismatch, IoFailure, MockScriptError, SchemaViolation
from ..types import EntitySet, RoiRegion
from .base import (
    BackendSuite,
    ChatBackend,
    ChatRequest,
    DetectorBackend,
    EmbedderBackend,
    RelevanceBackend,
)

__all__ = [
    "MockEntry",
    "MockScript",
    "HashingEmbedder",
    "lexical_relevance",
    "build_mock_suite",
]

CALL_KINDS = ("teacher", "student", "assessor", "detector", "embedder", "relevance")

_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass
class MockEntry:
    kind: str
    match: str
    response: object
    consumed: bool = False


@dataclass
class MockScript:
    """Ordered scenario entries plus the consumption cursor state."""

    entries: list[MockEntry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @staticmethod
    def load(path: str | Path) -> "MockScript":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read mock script {path}: {exc}") from exc
        return MockScript.parse_lines(lines)

    @staticmethod
    def parse_lines(lines: list[str]) -> "MockScript":
        entries = []
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"bad mock entry: {exc}", line=lineno) from exc
            kind = obj.get("kind")
            if kind not in CALL_KINDS:
                raise SchemaViolation(f"unknown call kind {kind!r}", line=lineno)
            if "response" not in obj:
                raise SchemaViolation("mock entry missing response", line=lineno)
            entries.append(MockEntry(kind=kind, match=obj.get("match", ""), response=obj["response"]))
        return MockScript(entries=entries)

    def has_kind(self, kind: str) -> bool:
        return any(e.kind == kind for e in self.entries)

    def take(self, kind: str, request_text: str) -> object:
        """Next response for a call of ``kind``, honoring match keys and
        sticky-last reuse. Raises MockScriptError when nothing applies."""
        with self._lock:
            candidates = [
                e for e in self.entries
                if e.kind == kind and (not e.match or e.match in request_text)
            ]
            if not candidates:
                raise MockScriptError(
                    f"no scripted {kind} entry matches request: {request_text[:120]!r}"
                )
            chosen = next((e for e in candidates if not e.consumed), candidates[-1])
            chosen.consumed = True
            return chosen.response

    def reset(self) -> None:
        with self._lock:
            for e in self.entries:
                e.consumed = False


class HashingEmbedder(EmbedderBackend):
    """Cross-platform deterministic bag-of-tokens embedding.

    Each token lands on a sha1-derived coordinate with a sha1-derived sign,
    so identical texts map to identical vectors and token overlap shows up
    as cosine similarity.
    """

    def __init__(self, dimension: int):
        self.dimension = dimension

    def embed(self, content: str, kind: str = "text") -> list[float]:
        vec = [0.0] * self.dimension
        for token in _TOKEN.findall(content.lower()):
            digest = hashlib.sha1(token.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[idx] += sign
        return vec


def lexical_relevance(query: str, passage: str) -> float:
    """Token-set Jaccard overlap; the scripted mock's relevance fallback."""
    q = set(_TOKEN.findall(query.lower()))
    p = set(_TOKEN.findall(passage.lower()))
    if not q or not p:
        return 0.0
    return len(q & p) / len(q | p)


class _MockChat(ChatBackend):
    def __init__(self, script: MockScript, kind: str):
        self._script = script
        self._kind = kind

    def complete(self, request: ChatRequest) -> str:
        response = self._script.take(self._kind, request.match_text())
        if not isinstance(response, str):
            raise MockScriptError(f"{self._kind} entry response must be text")
        return response


class _MockDetector(DetectorBackend):
    def __init__(self, script: MockScript):
        self._script = script

    def detect(self, image_ref: str, entities: EntitySet) -> list[RoiRegion]:
        if not self._script.has_kind("detector"):
            return []
        key = image_ref + " " + " ".join(entities.entities)
        response = self._script.take("detector", key)
        if not isinstance(response, list):
            raise MockScriptError("detector entry response must be a list of regions")
        regions = []
        for item in response:
            try:
                regions.append(RoiRegion(
                    bbox=tuple(float(v) for v in item["bbox"]),
                    confidence=float(item["confidence"]),
                    label=str(item.get("label", "")),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise MockScriptError(f"bad detector region in script: {exc}") from exc
        return regions


class _MockEmbedder(EmbedderBackend):
    def __init__(self, script: MockScript, dimension: int):
        self._script = script
        self.dimension = dimension
        self._fallback = HashingEmbedder(dimension)

    def embed(self, content: str, kind: str = "text") -> list[float]:
        try:
            response = self._script.take("embedder", content)
        except MockScriptError:
            return self._fallback.embed(content, kind)
        if not isinstance(response, list):
            raise MockScriptError("embedder entry response must be a vector")
        vec = [float(v) for v in response]
        if len(vec) != self.dimension:
            raise DimensionMismatch(
                f"scripted vector has length {len(vec)}, embedder dimension is {self.dimension}"
            )
        return vec


class _MockRelevance(RelevanceBackend):
    def __init__(self, script: MockScript):
        self._script = script

    def score(self, query: str, passage: str) -> float:
        try:
            response = self._script.take("relevance", query + "\n" + passage)
        except MockScriptError:
            return lexical_relevance(query, passage)
        value = float(response)  # type: ignore[arg-type]
        if not (0.0 <= value <= 1.0):
            raise MockScriptError(f"scripted relevance {value} outside [0,1]")
        return value


def build_mock_suite(script: MockScript, dimension: int = 64) -> BackendSuite:
    """All six roles served from one shared scenario."""
    return BackendSuite(
        teacher=_MockChat(script, "teacher"),
        student=_MockChat(script, "student"),
        assessor=_MockChat(script, "assessor"),
        detector=_MockDetector(script),
        embedder=_MockEmbedder(script, dimension),
        relevance=_MockRelevance(script),
    )
