"""Shared domain types: queries, regions, observations, agent state, search knobs.

The agent state tuple kept on every tree node bundles the question, the
region under inspection, the guidance/answer/feedback texts and the search
statistics. Nodes and configs serialize to line-delimited JSON with these
exact field names; the replay and trajectory modules depend on that form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .errors import ConfigError

__all__ = [
    "Query",
    "RoiRegion",
    "EntitySet",
    "Observation",
    "AgentNode",
    "SearchConfig",
    "validate_node",
    "node_to_dict",
    "node_from_dict",
    "WHOLE_IMAGE_LABEL",
]

WHOLE_IMAGE_LABEL = "full image"


@dataclass(frozen=True)
class Query:
    """One question about one image. ``image_ref`` is an opaque handle; the
    engine never decodes pixels."""

    id: str
    question: str
    image_ref: str
    question_kind: str = "open"  # "open" | "closed"

    def __post_init__(self):
        if not self.id:
            raise ValueError("query id must be non-empty")
        if not self.question:
            raise ValueError("question must be non-empty")
        if self.question_kind not in ("open", "closed"):
            raise ValueError(f"unknown question kind: {self.question_kind!r}")


@dataclass(frozen=True)
class RoiRegion:
    """Detected region: normalized bbox, detector confidence, entity label."""

    bbox: tuple[float, float, float, float]
    confidence: float
    label: str

    def violations(self) -> list[str]:
        out = []
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1):
            out.append("bbox x0 >= x1")
        if not (y0 < y1):
            out.append("bbox y0 >= y1")
        if not (0.0 <= self.confidence <= 1.0):
            out.append("confidence outside [0,1]")
        return out

    @staticmethod
    def whole_image() -> "RoiRegion":
        """Fallback region when detection comes back empty."""
        return RoiRegion(bbox=(0.0, 0.0, 1.0, 1.0), confidence=1.0, label=WHOLE_IMAGE_LABEL)


@dataclass(frozen=True)
class EntitySet:
    """Ordered, duplicate-free entity names used to prompt the detector."""

    entities: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("duplicate entities")

    @staticmethod
    def from_list(items: list[str]) -> "EntitySet":
        seen: dict[str, None] = {}
        for item in items:
            item = item.strip()
            if item and item not in seen:
                seen[item] = None
        return EntitySet(entities=tuple(seen))


@dataclass
class Observation:
    """Context gathered when a node is expanded: guidance/answers from the
    path above it and guidance/answers/feedback from earlier attempts at
    the same step."""

    ancestor_guidance: list[str] = field(default_factory=list)
    ancestor_answers: list[str] = field(default_factory=list)
    sibling_guidance: list[str] = field(default_factory=list)
    sibling_answers: list[str] = field(default_factory=list)
    sibling_feedback: list[str] = field(default_factory=list)

    def violations(self) -> list[str]:
        out = []
        if len(self.ancestor_guidance) != len(self.ancestor_answers):
            out.append("ancestor lists length mismatch")
        if not (len(self.sibling_guidance) == len(self.sibling_answers) == len(self.sibling_feedback)):
            out.append("sibling lists length mismatch")
        return out

    def to_dict(self) -> dict:
        return {
            "ancestor_guidance": list(self.ancestor_guidance),
            "ancestor_answers": list(self.ancestor_answers),
            "sibling_guidance": list(self.sibling_guidance),
            "sibling_answers": list(self.sibling_answers),
            "sibling_feedback": list(self.sibling_feedback),
        }

    @staticmethod
    def from_dict(d: dict) -> "Observation":
        return Observation(
            ancestor_guidance=list(d.get("ancestor_guidance", [])),
            ancestor_answers=list(d.get("ancestor_answers", [])),
            sibling_guidance=list(d.get("sibling_guidance", [])),
            sibling_answers=list(d.get("sibling_answers", [])),
            sibling_feedback=list(d.get("sibling_feedback", [])),
        )


@dataclass
class AgentNode:
    """One search-tree state.

    ``reward`` is the assessor's 1..5 rating; 0 means "not scored yet" so a
    missing evaluation is distinguishable from the lowest rating.
    ``cumulative_reward`` stores the raw backpropagated sum; callers compute
    the mean on read. ``feedback`` is the assessor's note to the teacher,
    ``feedback_student`` the revision suggestions consumed by reflection.
    """

    node_id: int
    parent_id: Optional[int] = None
    depth: int = 0
    roi_index: Optional[int] = None
    guidance: str = ""
    answer: str = ""
    reward: int = 0
    feedback: str = ""
    feedback_student: str = ""
    refined_answer: Optional[str] = None
    observation: Observation = field(default_factory=Observation)
    visit_count: int = 0
    cumulative_reward: float = 0.0
    children: list[int] = field(default_factory=list)
    flagged: bool = False
    pruned: bool = False
    expansion_closed: bool = False

    @property
    def mean_reward(self) -> float:
        return self.cumulative_reward / self.visit_count if self.visit_count else 0.0

    @property
    def evaluated(self) -> bool:
        return self.reward >= 1

    @property
    def best_answer(self) -> str:
        return self.refined_answer if self.refined_answer is not None else self.answer


def validate_node(node: AgentNode, parent: Optional[AgentNode] = None) -> list[str]:
    """Return a description of every violated node invariant (empty = valid).

    Total function: it never raises. When ``parent`` is supplied the
    parent/child depth link is checked as well.
    """
    out: list[str] = []
    if node.depth < 0:
        out.append("depth negative")
    if node.reward not in (0, 1, 2, 3, 4, 5):
        out.append("reward out of range")
    if node.visit_count < 0:
        out.append("visit count negative")
    if node.cumulative_reward < 0:
        out.append("cumulative reward negative")
    if node.cumulative_reward > 5 * node.visit_count + 1e-9:
        out.append("cumulative reward exceeds 5 x visit count")
    out.extend(node.observation.violations())
    if parent is not None:
        if node.depth != parent.depth + 1:
            out.append("depth discontinuity")
        if node.parent_id != parent.node_id:
            out.append("parent link mismatch")
    elif node.parent_id is None and node.depth != 0:
        out.append("root depth nonzero")
    return out


def node_to_dict(node: AgentNode) -> dict:
    return {
        "node_id": node.node_id,
        "parent_id": node.parent_id,
        "depth": node.depth,
        "roi_index": node.roi_index,
        "guidance": node.guidance,
        "answer": node.answer,
        "reward": node.reward,
        "feedback": node.feedback,
        "feedback_student": node.feedback_student,
        "refined_answer": node.refined_answer,
        "observation": node.observation.to_dict(),
        "visit_count": node.visit_count,
        "cumulative_reward": node.cumulative_reward,
        "children": list(node.children),
        "flagged": node.flagged,
        "pruned": node.pruned,
        "expansion_closed": node.expansion_closed,
    }


def node_from_dict(d: dict) -> AgentNode:
    return AgentNode(
        node_id=d["node_id"],
        parent_id=d["parent_id"],
        depth=d["depth"],
        roi_index=d["roi_index"],
        guidance=d["guidance"],
        answer=d["answer"],
        reward=d["reward"],
        feedback=d["feedback"],
        feedback_student=d.get("feedback_student", ""),
        refined_answer=d["refined_answer"],
        observation=Observation.from_dict(d["observation"]),
        visit_count=d["visit_count"],
        cumulative_reward=d["cumulative_reward"],
        children=list(d["children"]),
        flagged=d.get("flagged", False),
        pruned=d.get("pruned", False),
        expansion_closed=d.get("expansion_closed", False),
    )


def node_to_json(node: AgentNode) -> str:
    return json.dumps(node_to_dict(node), sort_keys=True, separators=(",", ":"))


def node_from_json(line: str) -> AgentNode:
    return node_from_dict(json.loads(line))


@dataclass
class SearchConfig:
    """Search knobs.

    ``early_stop_score`` of 5 stops the whole run on a full-score step and
    gates adaptive widening; setting it above 5 disables both, which forces
    full fixed-width expansion. ``prune_slack`` is how far below the best
    complete-path mean the maintained pruning floor sits.
    """

    max_depth: int = 3
    max_branch: int = 2
    max_simulations: int = 12
    exploration_c: float = 1.0
    early_stop_score: int = 5
    reflection_score_threshold: int = 4
    kl_epsilon: float = 0.05
    cosine_tau: float = 0.95
    alpha_beta_enabled: bool = False
    prune_slack: float = 2.0
    temperature: float = 0.7
    roi_softmax_temperature: float = 1.0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.max_depth < 1 or self.max_branch < 1 or self.max_simulations < 1:
            raise ConfigError("max_depth, max_branch and max_simulations must be >= 1")
        if self.exploration_c <= 0:
            raise ConfigError("exploration_c must be > 0")
        if self.reflection_score_threshold > self.early_stop_score:
            raise ConfigError("reflection_score_threshold must be <= early_stop_score")
        if self.kl_epsilon <= 0:
            raise ConfigError("kl_epsilon must be > 0")
        if not (0.0 < self.cosine_tau <= 1.0):
            raise ConfigError("cosine_tau must be in (0, 1]")
        if self.roi_softmax_temperature <= 0:
            raise ConfigError("roi_softmax_temperature must be > 0")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "SearchConfig":
        known = {f.name for f in fields(SearchConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown search config keys: {sorted(unknown)}")
        cfg = SearchConfig(**d)
        cfg.validate()
        return cfg

    def with_seed(self, seed: int) -> "SearchConfig":
        return replace(self, rng_seed=seed)
