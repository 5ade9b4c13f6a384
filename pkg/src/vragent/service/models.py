"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(BaseModel):
    question: str
    image: str
    query_id: str = "q0"
    question_kind: str = "open"
    entities: Optional[list[str]] = None
    seed: Optional[int] = None


class TrajectoryStepModel(BaseModel):
    observation_digest: str
    action: str
    reward: int
    advantage: Optional[float] = None
    old_logprob: Optional[float] = None
    new_logprob: Optional[float] = None


class TrajectoryModel(BaseModel):
    query_id: str
    steps: list[TrajectoryStepModel]
    final_answer: str


class PathModel(BaseModel):
    node_ids: list[int]
    rewards: list[int]
    total_reward: float


class RunResponse(BaseModel):
    final_answer: str
    path: PathModel
    tree_stats: dict
    journal: str
    trajectory: TrajectoryModel


class BatchRecord(BaseModel):
    id: str
    image: str
    question: str
    answer: str = ""
    type: str = "open"


class BatchRequest(BaseModel):
    records: list[BatchRecord]
    parallel: int = Field(default=1, ge=1)


class BatchResult(BaseModel):
    id: str
    answer: Optional[str] = None
    node_ids: list[int] = []
    total_reward: float = 0.0
    error: Optional[str] = None


class BatchResponse(BaseModel):
    results: list[BatchResult]
    failures: int
    metrics: dict
    trajectories: list[TrajectoryModel]


class ReplayRequest(BaseModel):
    journal: str
    verify: bool = False


class ReplayResponse(BaseModel):
    final_answer: str
    path: PathModel
    identical: Optional[bool] = None


class VteApplyRequest(BaseModel):
    embeddings: list[list[float]]
    mask: list[int]
    attn_logits: list[float]
    confidence: float = Field(ge=0.0, le=1.0)
    kappa: Optional[float] = None
    activation: Optional[str] = None
    direction: Optional[str] = None


class VteApplyResponse(BaseModel):
    embeddings: list[list[float]]
    gain: float
    roi_logit_mean: float
    background_logit_mean: float


class EvalRecordModel(BaseModel):
    id: str
    prediction: str
    reference: str
    question_kind: str = "open"


class MetricsRequest(BaseModel):
    records: list[EvalRecordModel]


class MetricsResponse(BaseModel):
    bleu_avg: Optional[float]
    rouge_l: Optional[float]
    open_recall: Optional[float]
    closed_precision: Optional[float]
    meteor: Optional[float]
    counts: dict
    table: str
