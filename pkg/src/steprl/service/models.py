"""Pydantic request/response schemas for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class WorldRequest(BaseModel):
    seed: int = 0
    n_entities: int = Field(16, ge=4)
    n_relations: int = Field(3, ge=2)
    n_questions: int = Field(24, ge=1)
    hops: int = Field(1, ge=1, le=2)
    question_seed: int = 0


class WorldResponse(BaseModel):
    world: dict
    questions: list[dict]


class JudgeConfig(BaseModel):
    backend: str = "oracle"
    endpoint: str = ""
    timeout: float = 30.0
    retries: int = 2
    concurrency: int = 1


class ScoreRequest(BaseModel):
    world: dict
    lines: list[str]  # raw trajectory JSONL lines; parse errors are per-line results
    norm: str = "renorm"
    judge: JudgeConfig = JudgeConfig()


class ScoreResponse(BaseModel):
    results: list[dict]
    errors: int


class TrainRequest(BaseModel):
    config: dict = Field(default_factory=dict)


class TrainResponse(BaseModel):
    metrics: list[dict]
    out_dir: str
    checkpoint: str
    config: dict


class BenchBuildRequest(BaseModel):
    world: dict
    n_questions: int = Field(8, ge=1)
    hops: int = Field(1, ge=1, le=2)
    question_seed: int = 0
    per_kind: int = Field(8, ge=1)
    total: int | None = None
    threshold: float | None = None  # None -> dataset mean
    seed: int = 0


class BenchBuildResponse(BaseModel):
    steps: list[dict]
    threshold: float
    cells: dict[str, int]


class BenchEvalRequest(BaseModel):
    world: dict | None = None
    steps: list[dict]
    threshold: float
    judge: JudgeConfig = JudgeConfig()


class BenchEvalResponse(BaseModel):
    report: dict


class JudgeWireRequest(BaseModel):
    """Wire format expected by any generative judge endpoint."""

    system: str
    user: str
    temperature: float = 0.0
