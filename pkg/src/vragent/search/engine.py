"""The search loop: guided expansion, scoring, backpropagation, early stops,
pruning, reflection and final-answer composition.

Each simulation selects an expandable node, samples a region not yet
processed along that path, asks the teacher for guidance and the student
for an answer, scores the step, and backpropagates the reward. A full
rubric score ends the run; a step whose answer merely repeats the previous
one closes that branch so the search shifts to other regions. After the
loop the best path gets reflected (weak steps rewritten with retrieved
knowledge) and composed into one final answer.
"""

from __future__ import annotations

import math
import re
from typing import Optional, Protocol, Sequence

from ..backends.agents import (
    assessor_evaluate,
    detect_rois,
    extract_entities,
    student_answer,
    synthesize_answer,
    teacher_guide,
)
from ..backends.base import BackendSuite
from ..errors import (
    EmptyRoiList,
    EvaluationFailed,
    ExpansionBudgetExhausted,
    ParseEmpty,
)
from ..rar import KnowledgeItem, reflect_rewrite
from ..types import EntitySet, Observation, Query, RoiRegion, SearchConfig
from .tree import PathResult, PruneBounds, SearchTree, backpropagate, best_path, select

__all__ = [
    "KnowledgeRetriever",
    "select_roi_on_prob",
    "build_observation",
    "expand",
    "evaluate",
    "should_early_stop",
    "prune",
    "compose_answer",
    "run_search",
    "run_fixed_expansion",
    "unigram_kl",
    "cosine_similarity",
]

_KL_TOKEN = re.compile(r"[a-z0-9]+")


class KnowledgeRetriever(Protocol):
    """What reflection needs from a retrieval pipeline."""

    def retrieve(self, question: str, guidance: str, answer: str,
                 image_ref: str | None = None) -> list[KnowledgeItem]: ...


class _Journal(Protocol):
    def event(self, event: str, **fields) -> None: ...
    def retrieval(self, node_id: int, items: list[KnowledgeItem]) -> None: ...


# --- text alignment helpers -------------------------------------------------

def kl_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric runs; language-neutral and deterministic."""
    return _KL_TOKEN.findall(text.lower())


def unigram_kl(prev: str, cur: str) -> float:
    """KL(prev || cur) between unigram distributions with add-one smoothing
    over the union vocabulary of the two texts."""
    pt, ct = kl_tokens(prev), kl_tokens(cur)
    vocab = sorted(set(pt) | set(ct))
    if not vocab:
        return 0.0
    pc = {t: 0 for t in vocab}
    cc = {t: 0 for t in vocab}
    for t in pt:
        pc[t] += 1
    for t in ct:
        cc[t] += 1
    np_, nc = len(pt) + len(vocab), len(ct) + len(vocab)
    total = 0.0
    for t in vocab:
        p = (pc[t] + 1.0) / np_
        q = (cc[t] + 1.0) / nc
        total += p * math.log(p / q)
    return total


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


# --- region sampling -------------------------------------------------------

def select_roi_on_prob(rois: list[RoiRegion], tau: float, rng,
                       eligible: Optional[set[int]] = None) -> int:
    """Sample a region index from softmax(confidence / tau).

    ``eligible`` masks out regions already processed along the current
    path; when every region is masked the full list becomes eligible again.
    """
    if not rois:
        raise EmptyRoiList("no regions to sample from")
    if tau <= 0:
        raise ValueError("softmax temperature must be > 0")
    indices = sorted(eligible) if eligible else list(range(len(rois)))
    if not indices:
        indices = list(range(len(rois)))
    scaled = [rois[i].confidence / tau for i in indices]
    peak = max(scaled)
    weights = [math.exp(s - peak) for s in scaled]
    total = sum(weights)
    draw = rng.random() * total
    acc = 0.0
    for idx, w in zip(indices, weights):
        acc += w
        if draw < acc:
            return idx
    return indices[-1]


# --- expansion / evaluation --------------------------------------------------

def build_observation(tree: SearchTree, node_id: int) -> Observation:
    """Observation for a child about to be created under ``node_id``:
    guidance/answer pairs from the path above it, and guidance/answer/
    feedback from its siblings-to-be (earlier attempts at this step)."""
    ancestors = [n for n in tree.path_to_root(node_id) if n.parent_id is not None]
    siblings = tree.children(node_id)
    return Observation(
        ancestor_guidance=[n.guidance for n in ancestors],
        ancestor_answers=[n.answer for n in ancestors],
        sibling_guidance=[n.guidance for n in siblings],
        sibling_answers=[n.answer for n in siblings],
        sibling_feedback=[n.feedback for n in siblings],
    )


def _eligible_rois(tree: SearchTree, node_id: int) -> set[int]:
    used = {n.roi_index for n in tree.path_to_root(node_id) if n.roi_index is not None}
    return set(range(len(tree.rois))) - used


def expand(tree: SearchTree, node_id: int, suite: BackendSuite,
           journal: Optional[_Journal] = None) -> list[int]:
    """Create one child: sample an unprocessed region, gather observations,
    ask teacher then student. Empty teacher/student replies degrade to empty
    text with the child flagged, keeping the search total."""
    node = tree.node(node_id)
    cfg = tree.config
    if node.depth >= cfg.max_depth:
        raise ExpansionBudgetExhausted(f"node {node_id} is at the depth ceiling")
    if len(node.children) >= cfg.max_branch:
        raise ExpansionBudgetExhausted(f"node {node_id} already has {cfg.max_branch} children")

    roi_index = select_roi_on_prob(tree.rois, cfg.roi_softmax_temperature, tree.rng,
                                   eligible=_eligible_rois(tree, node_id))
    roi = tree.rois[roi_index]
    obs = build_observation(tree, node_id)
    image = tree.query.image_ref

    flagged = False
    try:
        guidance = teacher_guide(suite.teacher, roi, obs, "", image_ref=image,
                                 temperature=cfg.temperature)
    except ParseEmpty:
        guidance, flagged = "", True
    try:
        answer = student_answer(suite.student, tree.query.question, roi, guidance,
                                image_ref=image, temperature=cfg.temperature)
    except ParseEmpty:
        answer, flagged = "", True

    child = tree.add_child(node_id, roi_index, guidance, answer, obs)
    child.flagged = flagged
    if journal:
        journal.event("node_created", node_id=child.node_id, parent_id=node_id,
                      roi_index=roi_index, guidance=guidance, answer=answer)
    return [child.node_id]


def evaluate(tree: SearchTree, node_id: int, suite: BackendSuite,
             journal: Optional[_Journal] = None) -> int:
    """Score a step with the assessor and store reward plus both feedback
    channels. An unparseable assessor (after its retry) degrades to score 1
    with the node flagged, so evaluation never aborts the search."""
    node = tree.node(node_id)
    roi = tree.rois[node.roi_index] if node.roi_index is not None else RoiRegion.whole_image()
    try:
        verdict = assessor_evaluate(suite.assessor, roi, node.guidance, node.answer,
                                    image_ref=tree.query.image_ref,
                                    temperature=tree.config.temperature)
        node.reward = verdict.score
        node.feedback = verdict.feedback_teacher
        node.feedback_student = verdict.feedback_student
    except EvaluationFailed:
        node.reward = 1
        node.feedback = ""
        node.feedback_student = ""
        node.flagged = True
    if journal:
        journal.event("evaluated", node_id=node_id, reward=node.reward,
                      feedback=node.feedback, flagged=node.flagged)
    return node.reward


def should_early_stop(tree: SearchTree, node_id: int, prev_node_id: Optional[int],
                      embedder) -> bool:
    """True on a full-score step, or when the step's answer aligns with the
    previous one (tiny unigram KL and high embedding cosine). An embedder
    failure just skips the similarity branch."""
    node = tree.node(node_id)
    cfg = tree.config
    if node.reward >= cfg.early_stop_score:
        return True
    if prev_node_id is None:
        return False
    prev = tree.node(prev_node_id)
    kl = unigram_kl(prev.answer, node.answer)
    if kl >= cfg.kl_epsilon:
        return False
    try:
        va = embedder.embed(prev.answer)
        vb = embedder.embed(node.answer)
    except Exception:
        return False
    return cosine_similarity(va, vb) > cfg.cosine_tau


def prune(tree: SearchTree, node_id: int, bounds: PruneBounds,
          journal: Optional[_Journal] = None) -> bool:
    """Cut the subtree from future selection when the node's score falls
    outside [alpha, beta]. The node keeps its statistics and stays visible
    to best-path extraction; only expansion stops."""
    node = tree.node(node_id)
    if node.reward < bounds.alpha or node.reward > bounds.beta:
        node.pruned = True
        if journal:
            journal.event("pruned", node_id=node_id, alpha=bounds.alpha, beta=bounds.beta)
        return True
    return False


def _alignment_prev(tree: SearchTree, child_id: int) -> Optional[int]:
    """The node whose answer the new step is compared against: the parent
    when it carries an answer, otherwise the immediately preceding sibling."""
    child = tree.node(child_id)
    parent = tree.node(child.parent_id) if child.parent_id is not None else None
    if parent is not None and parent.parent_id is not None:
        return parent.node_id
    if parent is not None and len(parent.children) >= 2:
        return parent.children[-2]
    return None


def compose_answer(tree: SearchTree, path: PathResult, suite: BackendSuite,
                   journal: Optional[_Journal] = None) -> str:
    """One synthesis call over the path's (guidance, revised-or-original
    answer) steps."""
    steps = [
        (n.guidance, n.best_answer)
        for n in (tree.node(i) for i in path.node_ids)
        if n.parent_id is not None
    ]
    if not steps:
        return path.final_answer
    try:
        answer = synthesize_answer(suite.student, tree.query.question, steps,
                                   image_ref=tree.query.image_ref,
                                   temperature=tree.config.temperature)
    except ParseEmpty:
        return path.final_answer  # empty synthesis degrades to the leaf answer
    if journal:
        journal.event("composed", answer=answer)
    return answer


# --- pruning-bound maintenance ------------------------------------------------

class _BoundTracker:
    """Maintained score window: the floor trails the best complete-path mean
    reward by ``prune_slack``; the ceiling stays at the rubric maximum."""

    def __init__(self, cfg: SearchConfig):
        self._slack = cfg.prune_slack
        self._best_mean = None

    def update_with_path(self, tree: SearchTree, leaf_id: int) -> None:
        scored = [n.reward for n in tree.path_to_root(leaf_id) if n.evaluated]
        if not scored:
            return
        mean = sum(scored) / len(scored)
        if self._best_mean is None or mean > self._best_mean:
            self._best_mean = mean

    def bounds(self) -> PruneBounds:
        alpha = 1.0 if self._best_mean is None else self._best_mean - self._slack
        return PruneBounds(alpha=alpha, beta=5.0)


# --- top-level runs -----------------------------------------------------------

def _prepare_tree(query: Query, suite: BackendSuite, config: SearchConfig,
                  entities: Optional[EntitySet], journal: Optional[_Journal]) -> SearchTree:
    if entities is None:
        entities = extract_entities(suite.student, query.question,
                                    image_ref=query.image_ref,
                                    temperature=config.temperature)
    rois = detect_rois(suite.detector, query.image_ref, entities)
    if not rois:
        rois = [RoiRegion.whole_image()]
    if journal:
        journal.event("rois", regions=[
            {"bbox": list(r.bbox), "confidence": r.confidence, "label": r.label}
            for r in rois
        ])
    return SearchTree(query, rois, config)


def _reflect_and_compose(tree: SearchTree, suite: BackendSuite,
                         retriever: Optional[KnowledgeRetriever],
                         journal: Optional[_Journal]) -> PathResult:
    path = best_path(tree)
    for node_id in path.node_ids:
        node = tree.node(node_id)
        if node.parent_id is None or node.reward >= tree.config.reflection_score_threshold:
            continue
        if retriever is not None:
            knowledge = retriever.retrieve(tree.query.question, node.guidance,
                                           node.answer, tree.query.image_ref)
        else:
            knowledge = []
        if journal:
            journal.retrieval(node_id, knowledge)
        roi = tree.rois[node.roi_index] if node.roi_index is not None else RoiRegion.whole_image()
        feedback = node.feedback_student or node.feedback
        try:
            node.refined_answer = reflect_rewrite(
                suite.student, tree.query.question, roi, node.guidance, node.answer,
                feedback, knowledge, image_ref=tree.query.image_ref,
                temperature=tree.config.temperature,
            )
        except ParseEmpty:
            continue  # empty rewrite: keep the original answer
        if journal:
            journal.event("reflected", node_id=node_id, refined_answer=node.refined_answer)
    # rewards along the path stay frozen after reflection; only answers change
    path = PathResult(
        node_ids=path.node_ids,
        total_reward=path.total_reward,
        final_answer=tree.node(path.node_ids[-1]).best_answer,
    )
    final = compose_answer(tree, path, suite, journal)
    return PathResult(node_ids=path.node_ids, total_reward=path.total_reward,
                      final_answer=final)


def run_search(query: Query, suite: BackendSuite, config: SearchConfig,
               retriever: Optional[KnowledgeRetriever] = None,
               journal: Optional[_Journal] = None,
               entities: Optional[EntitySet] = None,
               fixed_prune_bounds: Optional[PruneBounds] = None,
               ) -> tuple[SearchTree, PathResult]:
    """Run the full loop and return the finished tree and its best path.

    Only transport failures propagate; parse and evaluation failures degrade
    inside their steps. When ``fixed_prune_bounds`` is supplied (and pruning
    is enabled) the window stays constant instead of trailing the best path.
    """
    config.validate()
    tree = _prepare_tree(query, suite, config, entities, journal)
    tracker = _BoundTracker(config)

    for _ in range(config.max_simulations):
        target = select(tree)
        if target is None:
            if journal:
                journal.event("saturated")
            break
        (child_id,) = expand(tree, target, suite, journal)
        evaluate(tree, child_id, suite, journal)
        backpropagate(tree, child_id)
        if journal:
            journal.event("backpropagated", node_id=child_id)

        if config.alpha_beta_enabled:
            tracker.update_with_path(tree, child_id)
            bounds = fixed_prune_bounds or tracker.bounds()
            prune(tree, child_id, bounds, journal)

        child = tree.node(child_id)
        if child.reward >= config.early_stop_score:
            if journal:
                journal.event("early_stop_full_score", node_id=child_id)
            break
        prev_id = _alignment_prev(tree, child_id)
        if should_early_stop(tree, child_id, prev_id, suite.embedder):
            child.expansion_closed = True
            tree.node(target).expansion_closed = True
            if journal:
                journal.event("early_stop_alignment", node_id=child_id, closed=target)

    return tree, _reflect_and_compose(tree, suite, retriever, journal)


def run_fixed_expansion(query: Query, suite: BackendSuite, config: SearchConfig,
                        width: int, depth: int,
                        retriever: Optional[KnowledgeRetriever] = None,
                        entities: Optional[EntitySet] = None,
                        ) -> tuple[SearchTree, PathResult]:
    """Exhaustive fixed-shape baseline: every node gets exactly ``width``
    children down to ``depth``, with no early stops and no pruning. Used to
    measure what the adaptive loop saves."""
    from dataclasses import replace as _replace

    cfg = _replace(config, max_branch=width, max_depth=depth,
                   early_stop_score=6, alpha_beta_enabled=False)
    tree = _prepare_tree(query, suite, cfg, entities, None)
    level = [tree.root_id]
    for _ in range(depth):
        next_level: list[int] = []
        for node_id in level:
            for _ in range(width):
                (child_id,) = expand(tree, node_id, suite)
                evaluate(tree, child_id, suite)
                backpropagate(tree, child_id)
                next_level.append(child_id)
        level = next_level
    return tree, _reflect_and_compose(tree, suite, retriever, None)
