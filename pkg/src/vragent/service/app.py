"""The service: a FastAPI app wrapping the search engine and its utilities.

The app is built around one immutable AppConfig. Each request constructs
fresh backends (so mock scenario cursors never leak between requests) and
shares only the knowledge index, which is read-only after startup. Batch
records run under ``parallel`` worker threads; each record is seeded with
``rng_seed + record index`` so output order and content never depend on
scheduling.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import AppConfig, build_retriever, build_suite
from ..errors import (
    BackendUnavailable,
    ConfigError,
    DegenerateLogits,
    JournalCorrupt,
    SchemaViolation,
    VragentError,
)
from ..metrics import EvalRecord, evaluate_records, format_report
from ..rar import index_build, load_knowledge_base
from ..search.journal import replay_journal, run_with_journal, verify_journal
from ..trajectory import Trajectory, collect
from ..types import EntitySet, Query
from ..vte import VisualTokens, VteConfig, apply_token_boost, compute_gain, mean_logits
from . import models

log = logging.getLogger(__name__)


def _trajectory_model(traj: Trajectory) -> models.TrajectoryModel:
    return models.TrajectoryModel(**traj.to_dict())


def _path_model(tree, path) -> models.PathModel:
    return models.PathModel(
        node_ids=list(path.node_ids),
        rewards=[tree.node(i).reward for i in path.node_ids],
        total_reward=path.total_reward,
    )


def create_app(config: AppConfig) -> FastAPI:
    config.validate()
    app = FastAPI(title="vragent service", version=__version__)

    # knowledge index: built once, immutable, shared across requests
    shared_index = None
    if config.knowledge_base is not None:
        boot_suite = build_suite(config)
        shared_index = index_build(load_knowledge_base(config.knowledge_base, boot_suite.embedder))

    def run_one(record_id: str, question: str, image: str, kind: str,
                entities: list[str] | None, seed: int | None):
        cfg = config.search if seed is None else config.search.with_seed(seed)
        suite = build_suite(config)
        retriever = build_retriever(config, suite, index=shared_index)
        query = Query(id=record_id, question=question, image_ref=image, question_kind=kind)
        ents = EntitySet.from_list(entities) if entities is not None else None
        tree, path, journal = run_with_journal(query, suite, cfg, retriever=retriever,
                                               entities=ents)
        return tree, path, journal

    @app.exception_handler(VragentError)
    async def vragent_error_handler(_, exc: VragentError):
        if isinstance(exc, ConfigError):
            status = 400
        elif isinstance(exc, BackendUnavailable):
            status = 502
        elif isinstance(exc, (SchemaViolation, JournalCorrupt)):
            status = 422
        else:
            status = 422
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error_handler(_, exc: ValueError):
        # domain-type validation (empty query id/question, bad ranges)
        return JSONResponse(status_code=422,
                            content={"error": "ValueError", "detail": str(exc)})

    @app.get("/health", response_model=models.HealthResponse)
    def health() -> models.HealthResponse:
        return models.HealthResponse(status="ok", version=__version__)

    @app.post("/run", response_model=models.RunResponse)
    def run(req: models.RunRequest) -> models.RunResponse:
        tree, path, journal = run_one(req.query_id, req.question, req.image,
                                      req.question_kind, req.entities, req.seed)
        return models.RunResponse(
            final_answer=path.final_answer,
            path=_path_model(tree, path),
            tree_stats=tree.stats(),
            journal=journal.text(),
            trajectory=_trajectory_model(collect(tree, path)),
        )

    @app.post("/batch", response_model=models.BatchResponse)
    def batch(req: models.BatchRequest) -> models.BatchResponse:
        def work(item: tuple[int, models.BatchRecord]):
            i, rec = item
            try:
                tree, path, _ = run_one(rec.id, rec.question, rec.image, rec.type,
                                        None, config.search.rng_seed + i)
                return (
                    models.BatchResult(id=rec.id, answer=path.final_answer,
                                       node_ids=list(path.node_ids),
                                       total_reward=path.total_reward),
                    _trajectory_model(collect(tree, path)),
                )
            except (VragentError, ValueError) as exc:
                log.warning("batch record %s failed: %s", rec.id, exc)
                return models.BatchResult(id=rec.id, error=f"{type(exc).__name__}: {exc}"), None

        if req.parallel > 1:
            with ThreadPoolExecutor(max_workers=req.parallel) as pool:
                outcomes = list(pool.map(work, enumerate(req.records)))
        else:
            outcomes = [work(item) for item in enumerate(req.records)]

        results = [r for r, _ in outcomes]
        trajectories = [t for _, t in outcomes if t is not None]
        eval_records = [
            EvalRecord(id=rec.id, prediction=res.answer, reference=rec.answer,
                       question_kind=rec.type)
            for rec, res in zip(req.records, results)
            if res.error is None and rec.answer
        ]
        return models.BatchResponse(
            results=results,
            failures=sum(1 for r in results if r.error is not None),
            metrics=evaluate_records(eval_records) if eval_records else {},
            trajectories=trajectories,
        )

    @app.post("/replay", response_model=models.ReplayResponse)
    def replay(req: models.ReplayRequest) -> models.ReplayResponse:
        tree, path = replay_journal(req.journal)
        identical = verify_journal(req.journal) if req.verify else None
        return models.ReplayResponse(
            final_answer=path.final_answer,
            path=_path_model(tree, path),
            identical=identical,
        )

    @app.post("/vte/apply", response_model=models.VteApplyResponse)
    def vte_apply(req: models.VteApplyRequest) -> models.VteApplyResponse:
        cfg = VteConfig(
            kappa=req.kappa if req.kappa is not None else config.vte.kappa,
            activation=req.activation or config.vte.activation,
            direction=req.direction or config.vte.direction,
            layer_budget=config.vte.layer_budget,
        )
        tokens = VisualTokens(
            embeddings=np.array(req.embeddings, dtype=np.float64),
            mask=np.array(req.mask, dtype=np.int64),
            attn_logits=np.array(req.attn_logits, dtype=np.float64),
        )
        a_roi, a_bg = mean_logits(tokens)
        try:
            gain = compute_gain(a_roi, a_bg, req.confidence, cfg)
        except DegenerateLogits:
            gain = 0.0  # undefined ratio; leave the representation unchanged
        boosted = apply_token_boost(tokens, gain, cfg)
        return models.VteApplyResponse(
            embeddings=boosted.embeddings.tolist(),
            gain=gain,
            roi_logit_mean=a_roi,
            background_logit_mean=a_bg,
        )

    @app.post("/metrics", response_model=models.MetricsResponse)
    def metrics_endpoint(req: models.MetricsRequest) -> models.MetricsResponse:
        records = [
            EvalRecord(id=r.id, prediction=r.prediction, reference=r.reference,
                       question_kind=r.question_kind)
            for r in req.records
        ]
        summary = evaluate_records(records)
        return models.MetricsResponse(**summary, table=format_report(summary))

    return app
