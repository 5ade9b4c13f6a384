"""Search-tree store, UCB selection, backpropagation and best-path extraction.

Selection walks from the root and stops at the first node that may take a
new child; otherwise it descends to the unsaturated child with the highest
UCB. Saturation (a subtree that can never yield another expansion because
of depth ceilings, spent budgets, pruning or early-stop closure) is tracked
so simulations are never burned re-selecting dead subtrees and a scenario
with enough simulations provably exhausts its tree.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from ..errors import NoEvaluatedNodes
from ..types import AgentNode, Observation, Query, RoiRegion, SearchConfig, node_to_dict

__all__ = ["SearchTree", "PathResult", "PruneBounds", "ucb", "select", "backpropagate", "best_path"]

UNVISITED_PRIORITY = math.inf


@dataclass
class PathResult:
    """A root-to-leaf path, its reward sum, and the composed final answer."""

    node_ids: list[int]
    total_reward: float
    final_answer: str

    def to_dict(self) -> dict:
        return {
            "node_ids": list(self.node_ids),
            "total_reward": self.total_reward,
            "final_answer": self.final_answer,
        }

    @staticmethod
    def from_dict(d: dict) -> "PathResult":
        return PathResult(list(d["node_ids"]), d["total_reward"], d["final_answer"])


@dataclass(frozen=True)
class PruneBounds:
    """Score window [alpha, beta]; nodes scoring outside it get cut."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha > self.beta:
            raise ValueError("alpha must be <= beta")


class SearchTree:
    """Id-indexed node store plus the per-run region list, config and rng."""

    def __init__(self, query: Query, rois: list[RoiRegion], config: SearchConfig):
        config.validate()
        self.query = query
        self.rois = rois
        self.config = config
        self.rng = random.Random(config.rng_seed)
        root = AgentNode(node_id=0)
        self.nodes: dict[int, AgentNode] = {0: root}
        self.root_id = 0
        self._next_id = 1

    # -- structure ---------------------------------------------------------

    @property
    def root(self) -> AgentNode:
        return self.nodes[self.root_id]

    def node(self, node_id: int) -> AgentNode:
        return self.nodes[node_id]

    def children(self, node_id: int) -> list[AgentNode]:
        return [self.nodes[c] for c in self.nodes[node_id].children]

    def path_to_root(self, node_id: int) -> list[AgentNode]:
        """Nodes from the root down to ``node_id`` inclusive."""
        chain = []
        cur: int | None = node_id
        while cur is not None:
            node = self.nodes[cur]
            chain.append(node)
            cur = node.parent_id
        chain.reverse()
        return chain

    def add_child(self, parent_id: int, roi_index: int | None, guidance: str,
                  answer: str, observation: Observation) -> AgentNode:
        if roi_index is not None and not (0 <= roi_index < len(self.rois)):
            raise ValueError(f"roi_index {roi_index} outside the region list")
        parent = self.nodes[parent_id]
        child = AgentNode(
            node_id=self._next_id,
            parent_id=parent_id,
            depth=parent.depth + 1,
            roi_index=roi_index,
            guidance=guidance,
            answer=answer,
            observation=observation,
        )
        self._next_id += 1
        self.nodes[child.node_id] = child
        parent.children.append(child.node_id)
        return child

    # -- expansion bookkeeping ----------------------------------------------

    def widening_allowed(self, node_id: int) -> bool:
        """Adaptive widening: another sibling is worth buying only while the
        best attempt so far scored below the early-stop bar."""
        node = self.nodes[node_id]
        if not node.children:
            return True
        best = max(self.nodes[c].reward for c in node.children)
        return best < self.config.early_stop_score

    def expandable(self, node_id: int) -> bool:
        node = self.nodes[node_id]
        return (
            not node.pruned
            and not node.expansion_closed
            and node.depth < self.config.max_depth
            and len(node.children) < self.config.max_branch
            and self.widening_allowed(node_id)
        )

    def saturated(self, node_id: int) -> bool:
        """True when no expansion can ever happen in this subtree."""
        node = self.nodes[node_id]
        if node.pruned:
            return True
        if self.expandable(node_id):
            return False
        return all(self.saturated(c) for c in node.children)

    def stats(self) -> dict:
        """Shape summary: evaluations, mean branching of internal nodes, mean
        leaf depth."""
        internal = [n for n in self.nodes.values() if n.children]
        leaves = [n for n in self.nodes.values() if not n.children]
        evaluated = sum(1 for n in self.nodes.values() if n.evaluated)
        return {
            "nodes": len(self.nodes),
            "evaluations": evaluated,
            "mean_width": (sum(len(n.children) for n in internal) / len(internal)) if internal else 0.0,
            "mean_leaf_depth": (sum(n.depth for n in leaves) / len(leaves)) if leaves else 0.0,
            "max_depth": max(n.depth for n in self.nodes.values()),
        }

    def to_dict(self) -> dict:
        return {
            "root_id": self.root_id,
            "nodes": [node_to_dict(self.nodes[i]) for i in sorted(self.nodes)],
            "rois": [
                {"bbox": list(r.bbox), "confidence": r.confidence, "label": r.label}
                for r in self.rois
            ],
            "config": self.config.to_dict(),
        }


def ucb(mean_reward_sum: float, visits: int, parent_visits: int, c: float) -> float:
    """Mean reward plus the exploration bonus ``c * sqrt(2 ln N(p) / N(s))``.

    Unvisited nodes get an infinite sentinel so they are tried first, in
    creation order.
    """
    if visits == 0:
        return UNVISITED_PRIORITY
    return mean_reward_sum / visits + c * math.sqrt(2.0 * math.log(parent_visits) / visits)


def select(tree: SearchTree) -> int | None:
    """Walk down by UCB and return the node to expand next.

    Stops at the first node on the walk that can take a new child; among
    children it prefers the unsaturated one with the highest UCB (ties go to
    the lowest node id). Returns None when the whole tree is saturated.
    """
    node = tree.root
    if tree.saturated(node.node_id):
        return None
    while True:
        if tree.expandable(node.node_id):
            return node.node_id
        candidates = [c for c in tree.children(node.node_id) if not tree.saturated(c.node_id)]
        if not candidates:
            return None  # defensive; unsaturated non-expandable implies a live child
        parent_visits = max(node.visit_count, 1)
        node = min(
            candidates,
            key=lambda ch: (-ucb(ch.cumulative_reward, ch.visit_count, parent_visits,
                                 tree.config.exploration_c), ch.node_id),
        )


def backpropagate(tree: SearchTree, node_id: int) -> None:
    """Add the node's reward to itself and every ancestor; bump visit counts."""
    reward = tree.nodes[node_id].reward
    cur: int | None = node_id
    while cur is not None:
        node = tree.nodes[cur]
        node.visit_count += 1
        node.cumulative_reward += reward
        cur = node.parent_id


def best_path(tree: SearchTree) -> PathResult:
    """Root-to-leaf path with the highest reward sum.

    Ties break toward the lexicographically smallest id sequence. The
    answer placed on the result is the leaf's revised answer when one
    exists; callers typically replace it with a composed synthesis.
    """
    if not any(n.evaluated for n in tree.nodes.values()):
        raise NoEvaluatedNodes("no node has been scored yet")

    best_ids: list[int] | None = None
    best_total = -1.0

    def walk(node_id: int, acc_ids: list[int], acc_total: float) -> None:
        nonlocal best_ids, best_total
        node = tree.nodes[node_id]
        acc_ids = acc_ids + [node_id]
        acc_total = acc_total + node.reward
        if not node.children:
            if acc_total > best_total or (acc_total == best_total
                                          and (best_ids is None or acc_ids < best_ids)):
                best_ids, best_total = acc_ids, acc_total
            return
        for child in node.children:
            walk(child, acc_ids, acc_total)

    walk(tree.root_id, [], 0.0)
    assert best_ids is not None
    leaf = tree.nodes[best_ids[-1]]
    return PathResult(node_ids=best_ids, total_reward=best_total, final_answer=leaf.best_answer)
