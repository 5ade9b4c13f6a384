"""Tree search over teacher-guided reasoning steps."""

from .tree import PathResult, PruneBounds, SearchTree, backpropagate, best_path, select, ucb
from .engine import (
    build_observation,
    compose_answer,
    cosine_similarity,
    evaluate,
    expand,
    prune,
    run_fixed_expansion,
    run_search,
    select_roi_on_prob,
    should_early_stop,
    unigram_kl,
)
from .journal import (
    JournalWriter,
    RecordingSuite,
    replay_journal,
    run_with_journal,
    verify_journal,
)

__all__ = [
    "PathResult",
    "PruneBounds",
    "SearchTree",
    "backpropagate",
    "best_path",
    "select",
    "ucb",
    "build_observation",
    "compose_answer",
    "cosine_similarity",
    "evaluate",
    "expand",
    "prune",
    "run_fixed_expansion",
    "run_search",
    "select_roi_on_prob",
    "should_early_stop",
    "unigram_kl",
    "JournalWriter",
    "RecordingSuite",
    "replay_journal",
    "run_with_journal",
    "verify_journal",
]
