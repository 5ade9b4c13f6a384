"""Visual token edit: confidence-scaled additive boost of ROI patch embeddings.

Operates on caller-supplied patch embeddings and pre-softmax attention
logits; acquiring those from a serving stack is the integrator's problem.
The edit is applied exactly once at the input-token level. The boost gain
is zero whenever the ROI already receives at least the background's mean
attention, so the edit can only amplify an under-attended region, and the
whole mechanism switches off at ``kappa = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateLogits, IoFailure, NoRoiPatches, SchemaViolation

__all__ = [
    "VisualTokens",
    "VteConfig",
    "mean_logits",
    "compute_gain",
    "apply_token_boost",
    "vte_pipeline",
    "load_tokens",
    "dump_tokens",
]

ACTIVATIONS = ("relu", "softplus", "identity_clamped_nonneg")
DIRECTIONS = ("self", "ones")


@dataclass
class VisualTokens:
    """Patch embeddings (num_patches x d), binary ROI mask, attention logits."""

    embeddings: np.ndarray
    mask: np.ndarray
    attn_logits: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.int64)
        self.attn_logits = np.asarray(self.attn_logits, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be a 2-d matrix")
        n = self.embeddings.shape[0]
        if self.mask.shape != (n,) or self.attn_logits.shape != (n,):
            raise ValueError("mask and attn_logits must have one entry per patch")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        if not (self.mask == 0).any():
            raise ValueError("mask must leave at least one background patch")

    def copy(self) -> "VisualTokens":
        return VisualTokens(self.embeddings.copy(), self.mask.copy(), self.attn_logits.copy())


@dataclass
class VteConfig:
    kappa: float = 0.5
    activation: str = "relu"
    direction: str = "self"
    layer_budget: int = 1

    def __post_init__(self):
        if not (0.0 <= self.kappa <= 1.0):
            raise ValueError("kappa must be in [0,1]")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.layer_budget not in (1, 2, 3):
            raise ValueError("layer_budget must be 1, 2 or 3")

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "activation": self.activation,
            "direction": self.direction,
            "layer_budget": self.layer_budget,
        }


def _activate(name: str, x: float) -> float:
    if name == "softplus":
        # log(1 + e^x), overflow-safe
        return float(np.logaddexp(0.0, x))
    # relu and identity_clamped_nonneg coincide: max(0, x)
    return max(0.0, x)


def mean_logits(tokens: VisualTokens) -> tuple[float, float]:
    """Mean pre-softmax attention logit of ROI patches and of background patches."""
    roi = tokens.mask == 1
    if not roi.any():
        raise NoRoiPatches("mask selects no ROI patches")
    a_roi = float(tokens.attn_logits[roi].mean())
    a_bg = float(tokens.attn_logits[~roi].mean())
    return a_roi, a_bg


def compute_gain(a_roi: float, a_bg: float, confidence: float, cfg: VteConfig) -> float:
    """Boost gain ``confidence * kappa * phi(a_bg / a_roi - 1)``.

    Returns 0 when the ROI mean already meets the background mean; that
    branch is taken before the ratio so sign anomalies in negative logit
    means can never produce a spurious boost.
    """
    if cfg.kappa == 0.0:
        return 0.0
    if a_roi >= a_bg:
        return 0.0
    if a_roi == 0.0:
        raise DegenerateLogits("ROI logit mean is zero")
    return confidence * cfg.kappa * _activate(cfg.activation, a_bg / a_roi - 1.0)


def apply_token_boost(tokens: VisualTokens, beta: float, cfg: VteConfig) -> VisualTokens:
    """Add ``beta * direction`` to every ROI row; background rows copied bitwise."""
    out = tokens.copy()
    roi = out.mask == 1
    if beta != 0.0 and roi.any():
        if cfg.direction == "self":
            out.embeddings[roi] = out.embeddings[roi] * (1.0 + beta)
        else:
            out.embeddings[roi] = out.embeddings[roi] + beta
    return out


def vte_pipeline(tokens: VisualTokens, confidence: float, cfg: VteConfig) -> VisualTokens:
    """Single edit: measure logit imbalance, compute the gain, boost ROI rows.

    Pure function; the edit is never re-applied with recomputed logits.
    """
    a_roi, a_bg = mean_logits(tokens)
    beta = compute_gain(a_roi, a_bg, confidence, cfg)
    return apply_token_boost(tokens, beta, cfg)


def load_tokens(path: str | Path) -> VisualTokens:
    """Read a token fixture: one JSON object with embeddings/mask/attn_logits."""
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read token fixture {path}: {exc}") from exc
    try:
        data = json.loads(raw)
        return VisualTokens(
            embeddings=np.array(data["embeddings"], dtype=np.float64),
            mask=np.array(data["mask"], dtype=np.int64),
            attn_logits=np.array(data["attn_logits"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"bad token fixture: {exc}", line=1) from exc


def dump_tokens(tokens: VisualTokens, path: str | Path) -> None:
    payload = {
        "embeddings": tokens.embeddings.tolist(),
        "mask": tokens.mask.tolist(),
        "attn_logits": tokens.attn_logits.tolist(),
    }
    try:
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write token fixture {path}: {exc}") from exc
