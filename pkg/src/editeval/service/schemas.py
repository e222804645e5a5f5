"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str
    bundle_format_version: str


class MetricInfoModel(BaseModel):
    metric_id: str
    orientation: str
    regions: list[str]
    summary: str


class MetricUseModel(BaseModel):
    metric_id: str
    primary: bool


class RegionPlanModel(BaseModel):
    task: str
    pipeline: str
    grounding_on: str
    edit_metrics: list[MetricUseModel]
    non_edit_metrics: list[MetricUseModel]


class ComparisonRecordModel(BaseModel):
    sample_id: str
    task: str = ""
    dimension: str
    model_a: str
    model_b: str
    outcome: str


class RankRequest(BaseModel):
    records: list[ComparisonRecordModel]
    dimension: str = "overall"
    iters: int = Field(default=0, ge=0, description="bootstrap replicates; 0 skips the CI step")
    seed: int = 0
    ridge: float = 1e-4


class LeaderboardEntryModel(BaseModel):
    model: str
    elo: float
    ci_minus: float
    ci_plus: float


class RankResponse(BaseModel):
    dimension: str
    entries: list[LeaderboardEntryModel]


class SpearmanRequest(BaseModel):
    x: list[float]
    y: list[float]


class SpearmanResponse(BaseModel):
    rho: float


class MetricValueModel(BaseModel):
    group_id: str
    candidate_id: str
    metric_id: str
    region: str
    value: float
    orientation: str
    flag: Optional[str] = None


class CandidateGroupModel(BaseModel):
    group_id: str
    task: str
    instruction: str = ""
    input_bundle: str
    candidates: dict[str, str]


class SynthesizeRequest(BaseModel):
    groups: list[CandidateGroupModel]
    scores: list[MetricValueModel]
    fraction: float = 0.30
    epsilon: float = 0.05
    seed: int = 0


class PreferencePairModel(BaseModel):
    group_id: str
    winner: str
    loser: str
    source: str
    margins: dict[str, float]


class SynthesizeResponse(BaseModel):
    pairs: list[PreferencePairModel]


class GoldPairModel(BaseModel):
    pair_id: str
    task: str = ""
    instruction: str = ""
    original: Any = None
    candidate_a: Any
    candidate_b: Any
    human_preference: str


class JudgeEvaluateRequest(BaseModel):
    gold: list[GoldPairModel]
    seed: int = 0
    dimension: str = "VC"


class TaskAccuracyModel(BaseModel):
    task: str
    correct: int
    valid: int
    ties: int
    invalid: int
    accuracy: Optional[float]


class JudgeEvaluateResponse(BaseModel):
    per_task: list[TaskAccuracyModel]
    macro_average: float
    tie_rate: float
    invalid_rate: float
    flagged_tasks: list[str]


class ServedPairModel(BaseModel):
    pair_id: str
    task: str
    instruction: str
    original: Any = None
    left: Any = None
    right: Any = None


class NextPairResponse(BaseModel):
    pair: Optional[ServedPairModel] = None


class AnnotationSubmission(BaseModel):
    pair_id: str
    annotator_id: str
    choices: dict[str, str]


class SubmitResponse(BaseModel):
    status: str
    pair_id: str
    annotator_id: str


class BenchmarkResponse(BaseModel):
    pairs: list[GoldPairModel]
