"""Model-call backends: interfaces, prompt machinery, scripted mock, HTTP clients."""

from .base import (
    AssessorVerdict,
    BackendSuite,
    ChatBackend,
    ChatMessage,
    ChatRequest,
    DetectorBackend,
    EmbedderBackend,
    ImageAttachment,
    RelevanceBackend,
)
from .mock import HashingEmbedder, MockEntry, MockScript, build_mock_suite, lexical_relevance
from .prompts import (
    parse_assessor,
    parse_guidance,
    render_assessor_prompt,
    render_teacher_prompt,
)
from .agents import (
    assessor_evaluate,
    detect_rois,
    extract_entities,
    rewrite_answer,
    student_answer,
    synthesize_answer,
    teacher_guide,
)

__all__ = [
    "AssessorVerdict",
    "BackendSuite",
    "ChatBackend",
    "ChatMessage",
    "ChatRequest",
    "DetectorBackend",
    "EmbedderBackend",
    "ImageAttachment",
    "RelevanceBackend",
    "HashingEmbedder",
    "MockEntry",
    "MockScript",
    "build_mock_suite",
    "lexical_relevance",
    "parse_assessor",
    "parse_guidance",
    "render_assessor_prompt",
    "render_teacher_prompt",
    "assessor_evaluate",
    "detect_rois",
    "extract_entities",
    "rewrite_answer",
    "student_answer",
    "synthesize_answer",
    "teacher_guide",
]
