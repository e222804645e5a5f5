"""FastAPI application wiring the core operations behind HTTP endpoints.

Compute endpoints (ranking, synthesis, judge evaluation, rank correlation)
are stateless; the annotation endpoints appear when the app is created with
an AnnotationService. Domain validation errors surface as 400/404 responses
with the underlying message.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Query

from .. import BUNDLE_FORMAT_VERSION, __version__
from ..annotation import AnnotationError, AnnotationService
from ..judging import GoldPair, MockJudge, evaluate_judge
from ..metrics import METRIC_REGISTRY
from ..ranking import (
    ComparisonRecord,
    RankingError,
    aggregate,
    bootstrap_ci,
    fit_bradley_terry,
    spearman,
    to_elo,
)
from ..regions import RegionError, plan_for
from ..synthesis import CandidateScore, SynthesisError, synthesize_pairs
from ..datamodel import BundleError, CandidateGroup
from ..metrics import MetricError, MetricValue
from . import schemas


def create_app(annotation: AnnotationService | None = None) -> FastAPI:
    app = FastAPI(title="editeval", version=__version__)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(
            status="ok", version=__version__, bundle_format_version=BUNDLE_FORMAT_VERSION
        )

    @app.get("/metrics", response_model=list[schemas.MetricInfoModel])
    def list_metrics():
        return [
            schemas.MetricInfoModel(
                metric_id=info.metric_id,
                orientation=info.orientation,
                regions=list(info.regions),
                summary=info.summary,
            )
            for info in METRIC_REGISTRY.values()
        ]

    @app.get("/regions/plan/{task}", response_model=schemas.RegionPlanModel)
    def region_plan(task: str):
        try:
            plan = plan_for(task)
        except RegionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return schemas.RegionPlanModel(
            task=plan.task,
            pipeline=plan.pipeline,
            grounding_on=plan.grounding_on,
            edit_metrics=[
                schemas.MetricUseModel(metric_id=u.metric_id, primary=u.primary)
                for u in plan.edit_metrics
            ],
            non_edit_metrics=[
                schemas.MetricUseModel(metric_id=u.metric_id, primary=u.primary)
                for u in plan.non_edit_metrics
            ],
        )

    @app.post("/rank", response_model=schemas.RankResponse)
    def rank(req: schemas.RankRequest):
        try:
            records = [ComparisonRecord(**r.model_dump()) for r in req.records]
            if req.iters > 0:
                entries = bootstrap_ci(
                    records, dimension=req.dimension, iters=req.iters, seed=req.seed, ridge=req.ridge
                )
            else:
                matrix = aggregate(records, req.dimension)
                entries = to_elo(fit_bradley_terry(matrix, ridge=req.ridge))
        except RankingError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return schemas.RankResponse(
            dimension=req.dimension,
            entries=[
                schemas.LeaderboardEntryModel(
                    model=e.model, elo=e.elo, ci_minus=e.ci_minus, ci_plus=e.ci_plus
                )
                for e in entries
            ],
        )

    @app.post("/spearman", response_model=schemas.SpearmanResponse)
    def rank_correlation(req: schemas.SpearmanRequest):
        try:
            rho = spearman(req.x, req.y)
        except RankingError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return schemas.SpearmanResponse(rho=rho)

    @app.post("/synthesize", response_model=schemas.SynthesizeResponse)
    def synthesize(req: schemas.SynthesizeRequest):
        try:
            groups = [CandidateGroup(**g.model_dump()) for g in req.groups]
            scores: dict[tuple[str, str], CandidateScore] = {}
            for rec in req.scores:
                key = (rec.group_id, rec.candidate_id)
                score = scores.setdefault(
                    key, CandidateScore(group_id=rec.group_id, candidate_id=rec.candidate_id)
                )
                score.metrics[(rec.metric_id, rec.region)] = MetricValue(
                    metric_id=rec.metric_id,
                    region=rec.region,
                    value=rec.value,
                    orientation=rec.orientation,
                    flag=rec.flag,
                )
            pairs = synthesize_pairs(
                groups,
                scores.values(),
                fraction=req.fraction,
                epsilon=req.epsilon,
                rng_seed=req.seed,
            )
        except (SynthesisError, RegionError, MetricError, BundleError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return schemas.SynthesizeResponse(
            pairs=[schemas.PreferencePairModel(**p.to_json()) for p in pairs]
        )

    @app.post("/judge/evaluate", response_model=schemas.JudgeEvaluateResponse)
    def judge_evaluate(req: schemas.JudgeEvaluateRequest):
        try:
            gold = [GoldPair(**g.model_dump()) for g in req.gold]
            report = evaluate_judge(MockJudge(), gold, seed=req.seed, dimension=req.dimension)
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return schemas.JudgeEvaluateResponse(
            per_task=[
                schemas.TaskAccuracyModel(
                    task=t,
                    correct=a.correct,
                    valid=a.valid,
                    ties=a.ties,
                    invalid=a.invalid,
                    accuracy=a.accuracy,
                )
                for t, a in sorted(report.per_task.items())
            ],
            macro_average=report.macro_average,
            tie_rate=report.tie_rate,
            invalid_rate=report.invalid_rate,
            flagged_tasks=report.flagged_tasks,
        )

    if annotation is not None:
        _mount_annotation(app, annotation)
    return app


def _mount_annotation(app: FastAPI, service: AnnotationService) -> None:
    @app.get("/pairs/next", response_model=schemas.NextPairResponse)
    def next_pair(annotator: str = Query(..., min_length=1)):
        try:
            served = service.next_pair(annotator)
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        if served is None:
            return schemas.NextPairResponse(pair=None)
        return schemas.NextPairResponse(pair=schemas.ServedPairModel(**served.to_json()))

    @app.post("/annotations", response_model=schemas.SubmitResponse)
    def submit(body: schemas.AnnotationSubmission):
        try:
            rec = service.record(body.pair_id, body.annotator_id, body.choices)
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return schemas.SubmitResponse(
            status="ok", pair_id=rec.pair_id, annotator_id=rec.annotator_id
        )

    @app.get("/export/benchmark", response_model=schemas.BenchmarkResponse)
    def export_benchmark(mode: str = "any"):
        try:
            gold = service.export_benchmark(mode=mode)
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return schemas.BenchmarkResponse(
            pairs=[schemas.GoldPairModel(**g.to_json()) for g in gold]
        )

    @app.get("/progress")
    def progress():
        return service.progress()
