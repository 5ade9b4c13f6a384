"""Role operations: guidance generation, answering, scoring, detection.

These compose a prompt render, one backend call and a parse. Transport
errors always surface as BackendUnavailable; parse behavior follows the
role (teacher replies fall back to the whole reply, assessor replies get
one retry before giving up).
"""

from __future__ import annotations

from ..errors import DetectorMalformed, EvaluationFailed, ParseEmpty, ParseScore, ScoreRange
from ..types import EntitySet, Observation, RoiRegion
from .base import AssessorVerdict, ChatBackend, ChatMessage, ChatRequest, DetectorBackend, ImageAttachment
from . import prompts

__all__ = [
    "teacher_guide",
    "student_answer",
    "assessor_evaluate",
    "detect_rois",
    "extract_entities",
    "synthesize_answer",
    "rewrite_answer",
]


def _chat_request(text: str, image_ref: str | None, roi: RoiRegion | None,
                  temperature: float, max_tokens: int) -> ChatRequest:
    images = []
    if image_ref is not None:
        bbox = roi.bbox if roi is not None else None
        label = roi.label if roi is not None else None
        images.append(ImageAttachment(ref=image_ref, bbox=bbox, label=label))
    return ChatRequest(
        messages=[ChatMessage(role="user", text=text, images=images)],
        temperature=temperature,
        max_tokens=max_tokens,
    )


def teacher_guide(backend: ChatBackend, roi: RoiRegion, obs: Observation, feedback: str,
                  image_ref: str | None = None, temperature: float = 0.7,
                  max_tokens: int = 1024) -> str:
    """Next-step guidance for a region, given the accumulated observations."""
    text = prompts.render_teacher_prompt(roi, obs, feedback)
    reply = backend.complete(_chat_request(text, image_ref, roi, temperature, max_tokens))
    return prompts.parse_guidance(reply)


def student_answer(backend: ChatBackend, question: str, roi: RoiRegion, guidance: str,
                   image_ref: str | None = None, temperature: float = 0.7,
                   max_tokens: int = 1024) -> str:
    """One reasoning step: answer the question for a region under guidance."""
    text = prompts.render_student_prompt(question, guidance)
    reply = backend.complete(_chat_request(text, image_ref, roi, temperature, max_tokens))
    return prompts.parse_guidance(reply, warn_on_missing=False)


def assessor_evaluate(backend: ChatBackend, roi: RoiRegion, guidance: str, answer: str,
                      image_ref: str | None = None, temperature: float = 0.7,
                      max_tokens: int = 1024) -> AssessorVerdict:
    """Score a (guidance, answer) step on the 5-point rubric.

    One automatic retry with the identical prompt when the reply does not
    parse; a second failure raises EvaluationFailed with the raw text.
    """
    text = prompts.render_assessor_prompt(guidance, answer)
    request = _chat_request(text, image_ref, roi, temperature, max_tokens)
    raw = backend.complete(request)
    try:
        return prompts.parse_assessor(raw)
    except (ParseScore, ScoreRange):
        raw = backend.complete(request)
        try:
            return prompts.parse_assessor(raw)
        except (ParseScore, ScoreRange) as exc:
            raise EvaluationFailed(raw) from exc


def detect_rois(backend: DetectorBackend, image_ref: str, entities: EntitySet) -> list[RoiRegion]:
    """Detected regions sorted by confidence, highest first. An empty list
    is legitimate; callers decide on the whole-image fallback."""
    regions = backend.detect(image_ref, entities)
    for region in regions:
        problems = region.violations()
        if problems:
            raise DetectorMalformed(f"{region.label or 'region'}: {'; '.join(problems)}")
    return sorted(regions, key=lambda r: (-r.confidence, r.label, r.bbox))


def extract_entities(backend: ChatBackend, question: str, image_ref: str | None = None,
                     temperature: float = 0.7, max_tokens: int = 256) -> EntitySet:
    """Fallback entity extraction from the question via the student model."""
    text = prompts.render_entities_prompt(question)
    try:
        reply = backend.complete(_chat_request(text, image_ref, None, temperature, max_tokens))
    except ParseEmpty:
        return EntitySet()
    return EntitySet.from_list(prompts.parse_entities(reply))


def synthesize_answer(backend: ChatBackend, question: str, steps: list[tuple[str, str]],
                      image_ref: str | None = None, temperature: float = 0.7,
                      max_tokens: int = 1024) -> str:
    """Compose the final answer from the chosen path's (guidance, answer) steps."""
    text = prompts.render_synthesis_prompt(question, steps)
    reply = backend.complete(_chat_request(text, image_ref, None, temperature, max_tokens))
    return prompts.parse_guidance(reply, warn_on_missing=False)


def rewrite_answer(backend: ChatBackend, question: str, roi: RoiRegion, guidance: str,
                   answer: str, feedback: str, knowledge: list[str],
                   image_ref: str | None = None, temperature: float = 0.7,
                   max_tokens: int = 1024) -> str:
    """Reflection rewrite of a weak step answer with retrieved passages."""
    text = prompts.render_reflection_prompt(question, guidance, answer, feedback, knowledge)
    reply = backend.complete(_chat_request(text, image_ref, roi, temperature, max_tokens))
    return prompts.parse_guidance(reply, warn_on_missing=False)
