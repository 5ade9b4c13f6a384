"""Trajectory collection and the clipped policy-objective arithmetic.

A trajectory is the ordered (observation, guidance-action, reward) record
of one search path plus the final answer, exported line-delimited for
downstream fine-tuning. The numeric utilities compute per-sample terms of
the clipped surrogate objective for verification; gradient work belongs to
external training code, which also populates the optional log-prob fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError, IoFailure, NoEvaluatedNodes, NonFiniteInput, SchemaViolation
from .types import Observation

__all__ = [
    "TrajectoryStep",
    "Trajectory",
    "PpoConfig",
    "collect",
    "advantage_from_baseline",
    "ppo_ratio",
    "ppo_clipped_term",
    "export_trajectories",
    "import_trajectories",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = "vragent-traj/1"


@dataclass
class TrajectoryStep:
    """One path step: serialized observation, the guidance acted on, and the
    1..5 reward. Advantage and log-probs are filled in by trainers."""

    observation_digest: str
    action: str
    reward: int
    advantage: Optional[float] = None
    old_logprob: Optional[float] = None
    new_logprob: Optional[float] = None

    def __post_init__(self):
        if self.reward not in (1, 2, 3, 4, 5):
            raise ValueError(f"step reward must be 1..5, got {self.reward}")
        if self.advantage is not None and not math.isfinite(self.advantage):
            raise ValueError("advantage must be finite when set")

    def to_dict(self) -> dict:
        return {
            "observation_digest": self.observation_digest,
            "action": self.action,
            "reward": self.reward,
            "advantage": self.advantage,
            "old_logprob": self.old_logprob,
            "new_logprob": self.new_logprob,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrajectoryStep":
        return TrajectoryStep(
            observation_digest=d["observation_digest"],
            action=d["action"],
            reward=d["reward"],
            advantage=d.get("advantage"),
            old_logprob=d.get("old_logprob"),
            new_logprob=d.get("new_logprob"),
        )


@dataclass
class Trajectory:
    query_id: str
    steps: list[TrajectoryStep] = field(default_factory=list)
    final_answer: str = ""

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
        }

    @staticmethod
    def from_dict(d: dict) -> "Trajectory":
        return Trajectory(
            query_id=d["query_id"],
            steps=[TrajectoryStep.from_dict(s) for s in d["steps"]],
            final_answer=d["final_answer"],
        )


@dataclass
class PpoConfig:
    clip_epsilon: float = 0.2
    reward_baseline: float = 3.75

    def validate(self) -> None:
        if not (0.0 < self.clip_epsilon < 1.0):
            raise ConfigError("clip_epsilon must be in (0,1)")

    def to_dict(self) -> dict:
        return {"clip_epsilon": self.clip_epsilon, "reward_baseline": self.reward_baseline}


def _observation_digest(obs: Observation) -> str:
    return json.dumps(obs.to_dict(), sort_keys=True, separators=(",", ":"))


def collect(tree, path) -> Trajectory:
    """One step per scored node along the path, in path order.

    The root is the pre-action initial state: when unscored it contributes
    no step; any other unscored node on the path is an error.
    """
    steps = []
    for node_id in path.node_ids:
        node = tree.node(node_id)
        if not node.evaluated:
            if node.parent_id is None:
                continue
            raise NoEvaluatedNodes(f"path node {node_id} was never scored")
        steps.append(TrajectoryStep(
            observation_digest=_observation_digest(node.observation),
            action=node.guidance,
            reward=node.reward,
        ))
    if not steps:
        raise NoEvaluatedNodes("path contains no scored nodes")
    return Trajectory(query_id=tree.query.id, steps=steps, final_answer=path.final_answer)


def advantage_from_baseline(rewards: list[float], baseline: float) -> list[float]:
    """Per-step advantage: reward minus the constant baseline."""
    if not rewards:
        raise ValueError("rewards must be non-empty")
    return [r - baseline for r in rewards]


def ppo_ratio(new_logprob: float, old_logprob: float) -> float:
    """Policy ratio exp(new - old)."""
    if not (math.isfinite(new_logprob) and math.isfinite(old_logprob)):
        raise NonFiniteInput("log-probs must be finite")
    return math.exp(new_logprob - old_logprob)


def ppo_clipped_term(ratio: float, advantage: float, cfg: PpoConfig) -> float:
    """min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv) for one sample."""
    clipped = min(max(ratio, 1.0 - cfg.clip_epsilon), 1.0 + cfg.clip_epsilon)
    return min(ratio * advantage, clipped * advantage)


def export_trajectories(trajectories: list[Trajectory], path: str | Path) -> None:
    """Write the versioned header line, then one trajectory per line."""
    lines = [SCHEMA_VERSION]
    lines += [
        json.dumps(t.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        for t in trajectories
    ]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write trajectories to {path}: {exc}") from exc


def import_trajectories(path: str | Path) -> list[Trajectory]:
    """Inverse of export. An empty file yields an empty list; anything else
    must start with the schema header. Violations carry their line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read trajectories from {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        return []
    if lines[0].strip() != SCHEMA_VERSION:
        raise SchemaViolation(f"expected header {SCHEMA_VERSION!r}", line=1)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            out.append(Trajectory.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad trajectory record: {exc}", line=lineno) from exc
    return out
