"""FastAPI service wrapping the engine.

Endpoints cover world generation, training runs, trajectory scoring, and
the judge benchmark. POST /judge additionally speaks the generative-judge
wire format ({system, user, temperature} -> plain text) backed by the
oracle judge, so a remote-judge client can loop back against this service;
it requires the app to be created with a world (see `steprl serve --world`).
"""

from __future__ import annotations

import json

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from ..bench import (
    BenchDataset,
    InsufficientData,
    LabeledStep,
    build_dataset,
    evaluate,
    generate_bench_rollouts,
)
from ..config import ConfigError, TrainConfig
from ..judging import JudgeBackend, JudgeQuery, OracleJudge, RemoteJudge
from ..rewards import NormStrategy
from ..scoring import score_record
from ..trainer import train
from ..world import World, WorldMismatch, generate_questions, generate_world
from .models import (
    BenchBuildRequest,
    BenchBuildResponse,
    BenchEvalRequest,
    BenchEvalResponse,
    JudgeConfig,
    JudgeWireRequest,
    ScoreRequest,
    ScoreResponse,
    TrainRequest,
    TrainResponse,
    WorldRequest,
    WorldResponse,
)


def _make_judge(cfg: JudgeConfig, world: World | None) -> JudgeBackend:
    if cfg.backend == "oracle":
        if world is None:
            raise HTTPException(status_code=400, detail="oracle judge requires a world")
        return OracleJudge(world)
    if cfg.backend == "remote":
        if not cfg.endpoint:
            raise HTTPException(status_code=400, detail="remote judge requires an endpoint")
        return RemoteJudge(cfg.endpoint, timeout=cfg.timeout, max_retries=cfg.retries)
    raise HTTPException(status_code=400, detail=f"unknown judge backend {cfg.backend!r}")


def _split_user_prompt(user: str) -> tuple[str, str]:
    head, sep, step = user.rpartition("\nResponse: ")
    if not sep:
        raise HTTPException(status_code=400, detail="user prompt lacks a Response section")
    marker = "Query: "
    start = head.find(marker)
    if start < 0:
        raise HTTPException(status_code=400, detail="user prompt lacks a Query section")
    return head[start + len(marker):], step


def create_app(world: World | None = None, questions=None) -> FastAPI:
    app = FastAPI(title="steprl", version="0.1.0")
    app.state.world = world
    app.state.questions = questions or []

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "world_loaded": app.state.world is not None}

    @app.post("/world", response_model=WorldResponse)
    def world_endpoint(req: WorldRequest) -> WorldResponse:
        w = generate_world(req.seed, req.n_entities, req.n_relations)
        try:
            qs = generate_questions(w, req.n_questions, req.hops, seed=req.question_seed)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return WorldResponse(world=w.to_dict(), questions=[q.to_dict() for q in qs])

    @app.post("/score", response_model=ScoreResponse)
    def score_endpoint(req: ScoreRequest) -> ScoreResponse:
        try:
            w = World.from_dict(req.world)
            strategy = NormStrategy(kind=req.norm)
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        judge = _make_judge(req.judge, w)
        results = []
        errors = 0
        for i, line in enumerate(req.lines):
            try:
                results.append(score_record(json.loads(line), judge, strategy))
            except Exception as exc:
                results.append({"index": i, "error": str(exc)})
                errors += 1
        return ScoreResponse(results=results, errors=errors)

    @app.post("/train", response_model=TrainResponse)
    def train_endpoint(req: TrainRequest) -> TrainResponse:
        try:
            config = TrainConfig(**req.config).validate()
        except (ConfigError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        result = train(config)
        return TrainResponse(
            metrics=[m.to_dict() for m in result.metrics],
            out_dir=str(result.out_dir),
            checkpoint=str(result.checkpoint),
            config=config.to_dict(),
        )

    @app.post("/bench/dataset", response_model=BenchBuildResponse)
    def bench_dataset_endpoint(req: BenchBuildRequest) -> BenchBuildResponse:
        try:
            w = World.from_dict(req.world)
            qs = generate_questions(w, req.n_questions, req.hops, seed=req.question_seed)
            rollouts = generate_bench_rollouts(w, qs, per_kind=req.per_kind, seed=req.seed)
            dataset = build_dataset(
                w,
                rollouts,
                "mean" if req.threshold is None else req.threshold,
                total=req.total,
                seed=req.seed,
            )
        except (InsufficientData, ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return BenchBuildResponse(
            steps=[s.to_dict() for s in dataset.steps],
            threshold=dataset.threshold,
            cells={f"{o},{l}": n for (o, l), n in dataset.cell_counts().items()},
        )

    @app.post("/bench/evaluate", response_model=BenchEvalResponse)
    def bench_eval_endpoint(req: BenchEvalRequest) -> BenchEvalResponse:
        w = World.from_dict(req.world) if req.world is not None else None
        judge = _make_judge(req.judge, w)
        steps = [LabeledStep.from_dict(s) for s in req.steps]
        try:
            report = evaluate(
                judge,
                BenchDataset(steps=steps, threshold=req.threshold),
                concurrency=req.judge.concurrency,
            )
        except (InsufficientData, WorldMismatch) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return BenchEvalResponse(report=report.to_dict())

    @app.post("/judge", response_class=PlainTextResponse)
    def judge_endpoint(req: JudgeWireRequest) -> str:
        if app.state.world is None:
            raise HTTPException(status_code=503, detail="no world loaded; start with --world")
        context, step = _split_user_prompt(req.user)
        try:
            verdict = OracleJudge(app.state.world).judge(JudgeQuery(context, step))
        except WorldMismatch as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return verdict.raw_response

    return app
