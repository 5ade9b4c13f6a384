"""Backend interfaces and the chat wire types.

Six pluggable roles: three chat-style models (teacher, student, assessor),
a region detector, an embedder and a relevance scorer. Every role is a
small ABC so mock, HTTP and replay implementations stay interchangeable.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Optional

from ..types import EntitySet, RoiRegion

__all__ = [
    "ImageAttachment",
    "ChatMessage",
    "ChatRequest",
    "AssessorVerdict",
    "ChatBackend",
    "DetectorBackend",
    "EmbedderBackend",
    "RelevanceBackend",
    "BackendSuite",
]


@dataclass(frozen=True)
class ImageAttachment:
    """Opaque image handle plus the optional region the caller wants boxed."""

    ref: str
    bbox: Optional[tuple[float, float, float, float]] = None
    label: Optional[str] = None


@dataclass
class ChatMessage:
    role: str
    text: str
    images: list[ImageAttachment] = field(default_factory=list)


@dataclass
class ChatRequest:
    """Role-tagged messages with inline image handles, plus sampling knobs."""

    messages: list[ChatMessage]
    temperature: float = 0.7
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def text(self) -> str:
        """All text segments concatenated."""
        return "\n".join(m.text for m in self.messages)

    def match_text(self) -> str:
        """Text plus image-attachment descriptors; mock scripts key on this."""
        parts = [self.text()]
        for msg in self.messages:
            for img in msg.images:
                parts.append(f"[image ref={img.ref} label={img.label or ''} bbox={img.bbox}]")
        return "\n".join(parts)


@dataclass(frozen=True)
class AssessorVerdict:
    """Parsed rating reply: 1..5 score plus the two feedback channels."""

    score: int
    feedback_teacher: str
    feedback_student: str

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise ValueError(f"score must be 1..5, got {self.score}")


class ChatBackend(abc.ABC):
    """A blocking chat completion endpoint for one model role."""

    @abc.abstractmethod
    def complete(self, request: ChatRequest) -> str:
        """Return the single text completion; raises BackendUnavailable on transport failure."""


class DetectorBackend(abc.ABC):
    @abc.abstractmethod
    def detect(self, image_ref: str, entities: EntitySet) -> list[RoiRegion]:
        """Return candidate regions (unsorted; callers sort by confidence)."""


class EmbedderBackend(abc.ABC):
    """Fixed-dimension embedder for text or image handles."""

    dimension: int

    @abc.abstractmethod
    def embed(self, content: str, kind: str = "text") -> list[float]:
        """Return a vector of exactly ``dimension`` floats. ``kind`` is "text" or "image"."""


class RelevanceBackend(abc.ABC):
    @abc.abstractmethod
    def score(self, query: str, passage: str) -> float:
        """Relevance of a passage to a query bundle, in [0, 1]."""


@dataclass
class BackendSuite:
    """The full set of role backends one search run needs."""

    teacher: ChatBackend
    student: ChatBackend
    assessor: ChatBackend
    detector: DetectorBackend
    embedder: EmbedderBackend
    relevance: RelevanceBackend
