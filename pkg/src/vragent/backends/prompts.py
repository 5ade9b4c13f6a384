"""Prompt template rendering and tag-based reply parsing.

Templates live as plain-text files next to this module. Slots are unique
``{name}`` tokens filled by literal replacement, so braces elsewhere in a
template (for example the reply-format examples shown to the model) pass
through untouched.
"""

from __future__ import annotations

import logging
import re
from importlib import resources

from ..errors import ParseEmpty, ParseScore, ScoreRange
from ..types import Observation, RoiRegion
from .base import AssessorVerdict

__all__ = [
    "render_teacher_prompt",
    "render_assessor_prompt",
    "render_student_prompt",
    "render_reflection_prompt",
    "render_synthesis_prompt",
    "render_entities_prompt",
    "parse_guidance",
    "parse_assessor",
    "parse_entities",
]

log = logging.getLogger(__name__)

_GUIDANCE_MARKER = re.compile(r"</?Guidance>", re.IGNORECASE)
_SCORE_TAG = re.compile(r"<score>\s*(.*?)\s*</score>", re.IGNORECASE | re.DOTALL)
_FEEDBACK1_TAG = re.compile(r"<feedback1>(.*?)</feedback1>", re.IGNORECASE | re.DOTALL)
_FEEDBACK2_TAG = re.compile(r"<feedback2>(.*?)</feedback2>", re.IGNORECASE | re.DOTALL)

_template_cache: dict[str, str] = {}


def _template(name: str) -> str:
    if name not in _template_cache:
        path = resources.files(__package__).joinpath("templates", f"{name}.txt")
        _template_cache[name] = path.read_text(encoding="utf-8")
    return _template_cache[name]


def _fill(template: str, slots: dict[str, str]) -> str:
    out = template
    for token, value in slots.items():
        out = out.replace(token, value)
    return out


def render_teacher_prompt(roi: RoiRegion, obs: Observation, feedback: str) -> str:
    """Fill the teaching template: prior guidance (path first, then earlier
    attempts at this step), the matching answers, and feedback. The region
    itself travels as an image attachment, not prompt text."""
    previous = list(obs.ancestor_guidance) + list(obs.sibling_guidance)
    answers = list(obs.ancestor_answers) + list(obs.sibling_answers)
    feedback_lines = ([feedback] if feedback else []) + list(obs.sibling_feedback)
    return _fill(_template("teacher_prompt"), {
        "{previous_guidance}": "\n".join(previous),
        "{student_answer}": "\n".join(answers),
        "{feedback}": "\n".join(feedback_lines),
    })


def render_assessor_prompt(guidance: str, answer: str) -> str:
    return _fill(_template("assessor_prompt"), {
        "{Teacher's guidance}": guidance,
        "{Student's answer}": answer,
    })


def render_student_prompt(question: str, guidance: str) -> str:
    return _fill(_template("student_prompt"), {
        "{question}": question,
        "{guidance}": guidance,
    })


def render_reflection_prompt(question: str, guidance: str, answer: str,
                             feedback: str, knowledge: list[str]) -> str:
    if knowledge:
        passages = "\n".join(f"{i}. {text}" for i, text in enumerate(knowledge, start=1))
    else:
        passages = "(no external knowledge)"
    return _fill(_template("reflection_prompt"), {
        "{question}": question,
        "{guidance}": guidance,
        "{answer}": answer,
        "{feedback}": feedback,
        "{knowledge}": passages,
    })


def render_synthesis_prompt(question: str, steps: list[tuple[str, str]]) -> str:
    """``steps`` are (guidance, answer) pairs along the chosen path."""
    lines = []
    for i, (guidance, answer) in enumerate(steps, start=1):
        lines.append(f"Step {i} guidance: {guidance}")
        lines.append(f"Step {i} answer: {answer}")
    return _fill(_template("synthesis_prompt"), {
        "{question}": question,
        "{steps}": "\n".join(lines),
    })


def render_entities_prompt(question: str) -> str:
    return _fill(_template("entities_prompt"), {"{question}": question})


def parse_guidance(raw: str, warn_on_missing: bool = True) -> str:
    """Extract the guidance span between the reply-format markers.

    Replies without markers are taken whole (models drift from formats and
    the search has no abort path for that); a warning is logged so drifting
    backends are visible.
    """
    trimmed = raw.strip()
    if not trimmed:
        raise ParseEmpty("empty reply")
    parts = _GUIDANCE_MARKER.split(raw)
    if len(parts) == 1:
        if warn_on_missing:
            log.warning("guidance reply carried no format markers; using whole reply")
        return trimmed
    if len(parts) >= 3:
        inner = [p.strip() for p in parts[1:-1]]
    else:
        # single marker: prefer the text after it
        inner = [parts[1].strip(), parts[0].strip()]
    for span in inner:
        if span:
            return span
    raise ParseEmpty("guidance markers enclose nothing")


def parse_assessor(raw: str) -> AssessorVerdict:
    """Extract the integer score and both feedback channels.

    The three tagged blocks may appear in any order with arbitrary text
    between them. Missing feedback tags degrade to empty strings; a missing
    or non-integer score does not.
    """
    m = _SCORE_TAG.search(raw)
    if m is None:
        raise ParseScore("no <score> tag found")
    try:
        score = int(m.group(1))
    except ValueError as exc:
        raise ParseScore(f"score is not an integer: {m.group(1)!r}") from exc
    if score not in (1, 2, 3, 4, 5):
        raise ScoreRange(f"score {score} outside 1..5")
    f1 = _FEEDBACK1_TAG.search(raw)
    f2 = _FEEDBACK2_TAG.search(raw)
    return AssessorVerdict(
        score=score,
        feedback_teacher=f1.group(1).strip() if f1 else "",
        feedback_student=f2.group(1).strip() if f2 else "",
    )


def parse_entities(raw: str) -> list[str]:
    """Split a comma- or newline-separated entity reply, keeping order."""
    items = re.split(r"[,\n;]+", raw)
    seen: dict[str, str] = {}
    for item in items:
        item = item.strip(" \t.-*").strip()
        if item and item.lower() not in seen:
            seen[item.lower()] = item
    return list(seen.values())
