"""Command-line entry point wiring every module into one tool.

All batch subcommands run in-process against files; ``annotate serve`` starts
the HTTP service. A flat key=value config file supplies defaults which
explicit flags always override, and each run logs its resolved settings so
experiments stay reproducible.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import BUNDLE_FORMAT_VERSION, __version__
from .annotation import AnnotationError, AnnotationPair, AnnotationService
from .config import ConfigError, RunConfig, load_config
from .curation import CurationError, SamplePool, kcenter_greedy
from .datamodel import BundleError, CandidateGroup, EmbeddingSet, load_bundle
from .judging import EndpointJudge, GoldPair, JudgeError, MockJudge, evaluate_judge
from .metrics import METRIC_REGISTRY, MetricError
from .pipeline import PipelineError, score_group, scores_to_jsonl, scores_from_jsonl
from .ranking import (
    ComparisonRecord,
    RankingError,
    aggregate,
    bootstrap_ci,
    fit_bradley_terry,
    spearman,
    to_elo,
)
from .regions import RegionError, plan_for, plan_table
from .synthesis import SynthesisError, synthesize_pairs

_DOMAIN_ERRORS = (
    AnnotationError,
    BundleError,
    ConfigError,
    CurationError,
    JudgeError,
    MetricError,
    PipelineError,
    RankingError,
    RegionError,
    SynthesisError,
)


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


def _log_config(command: str, **settings) -> None:
    resolved = " ".join(f"{k}={v}" for k, v in settings.items())
    click.echo(f"[editeval] {command}: {resolved}", err=True)


def _from_config(ctx: click.Context, param_name: str, value, config_attr: str):
    """Flag value unless it was defaulted and the config file has an override."""
    cfg: RunConfig | None = ctx.obj
    if cfg is None:
        return value
    if ctx.get_parameter_source(param_name) == click.core.ParameterSource.DEFAULT:
        return getattr(cfg, config_attr)
    return value


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def _print_version(ctx: click.Context, _param, value: bool):
    if not value or ctx.resilient_parsing:
        return
    click.echo(f"editeval {__version__} (bundle format {BUNDLE_FORMAT_VERSION})")
    ctx.exit(0)


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Key=value config file supplying defaults for seeds and thresholds.",
)
@click.option(
    "--version", is_flag=True, callback=_print_version, expose_value=False, is_eager=True,
    help="Print tool and bundle-format versions and exit.",
)
@click.pass_context
def main(ctx: click.Context, config_path: Path | None):
    """Consistency-metric workbench: bundles, regions, metrics, pairs, rankings."""
    try:
        ctx.obj = load_config(config_path) if config_path is not None else None
    except ConfigError as exc:
        raise _fail(exc) from exc


@main.group()
def bundle():
    """Feature-bundle utilities."""


@bundle.command("validate")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
def bundle_validate(paths: tuple[Path, ...]):
    """Validate bundle directories; exits non-zero if any fail."""
    failures = 0
    for path in paths:
        try:
            load_bundle(path)
        except BundleError as exc:
            failures += 1
            click.echo(f"{path}: INVALID - {exc}")
        else:
            click.echo(f"{path}: ok")
    if failures:
        raise click.ClickException(f"{failures} of {len(paths)} bundles failed validation")


@main.group()
def regions():
    """Task plans and region construction."""


@regions.command("plan")
@click.option("--task", default=None, help="Show one task's plan instead of the full table.")
def regions_plan(task: str | None):
    """Print the task-to-metric plan table."""
    if task is None:
        click.echo(plan_table())
        return
    try:
        plan = plan_for(task)
    except RegionError as exc:
        raise _fail(exc) from exc
    click.echo(json.dumps(
        {
            "task": plan.task,
            "pipeline": plan.pipeline,
            "grounding_on": plan.grounding_on,
            "edit_metrics": [{"metric_id": u.metric_id, "primary": u.primary} for u in plan.edit_metrics],
            "non_edit_metrics": [
                {"metric_id": u.metric_id, "primary": u.primary} for u in plan.non_edit_metrics
            ],
        },
        indent=2,
    ))


@main.group()
def metrics():
    """Metric registry and batch scoring."""


@metrics.command("list")
def metrics_list():
    """List registered metrics with orientation and region applicability."""
    width = max(len(m) for m in METRIC_REGISTRY)
    for info in METRIC_REGISTRY.values():
        regions_str = ",".join(info.regions)
        click.echo(f"{info.metric_id.ljust(width)}  {info.orientation:<6}  {regions_str:<22}  {info.summary}")


@metrics.command("run")
@click.option("--group", "group_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="JSONL of candidate groups.")
@click.option("--bundle-root", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None, help="Base directory for relative bundle references.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def metrics_run(group_file: Path, bundle_root: Path | None, out: Path):
    """Score every candidate of every group and write one record per metric."""
    _log_config("metrics run", group=group_file, bundle_root=bundle_root, out=out)
    try:
        groups = [CandidateGroup.from_json(obj) for obj in _read_jsonl(group_file)]
        lines = []
        for grp in groups:
            lines.append(scores_to_jsonl(score_group(grp, bundle_root=bundle_root)))
        out.write_text("".join(lines), encoding="utf-8")
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    click.echo(f"scored {len(groups)} groups -> {out}")


@main.command("synthesize")
@click.option("--groups", "groups_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--scores", "scores_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--fraction", type=float, default=0.30, show_default=True)
@click.option("--epsilon", type=float, default=0.05, show_default=True, help="Auxiliary-vote abstention band in z-units.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.pass_context
def synthesize_cmd(ctx, groups_file: Path, scores_file: Path, fraction: float, epsilon: float, seed: int, out: Path):
    """Synthesize preference pairs from scored candidate groups."""
    fraction = _from_config(ctx, "fraction", fraction, "fraction")
    seed = _from_config(ctx, "seed", seed, "seed")
    _log_config("synthesize", groups=groups_file, scores=scores_file, fraction=fraction, epsilon=epsilon, seed=seed, out=out)
    try:
        groups = [CandidateGroup.from_json(obj) for obj in _read_jsonl(groups_file)]
        scores = scores_from_jsonl(scores_file.read_text(encoding="utf-8"))
        pairs = synthesize_pairs(groups, scores, fraction=fraction, epsilon=epsilon, rng_seed=seed)
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    out.write_text("".join(json.dumps(p.to_json(), sort_keys=True) + "\n" for p in pairs), encoding="utf-8")
    click.echo(f"{len(pairs)} pairs -> {out}")


@main.command("curate")
@click.option("--pool", "pool_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help='JSON {"ids": [...], "vectors": [[...]]}.')
@click.option("--n", type=int, default=1500, show_default=True)
@click.option("--metric", type=click.Choice(["euclidean", "cosine"]), default="euclidean", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.pass_context
def curate_cmd(ctx, pool_file: Path, n: int, metric: str, out: Path):
    """Select representative sample ids by K-center greedy."""
    n = _from_config(ctx, "n", n, "pool_size")
    _log_config("curate", pool=pool_file, n=n, metric=metric, out=out)
    try:
        obj = json.loads(pool_file.read_text(encoding="utf-8"))
        pool = SamplePool(ids=list(obj["ids"]), embeddings=EmbeddingSet(obj["vectors"]))
        chosen = kcenter_greedy(pool, n=n, metric=metric)
    except (KeyError, *_DOMAIN_ERRORS) as exc:
        raise _fail(exc) from exc
    out.write_text("\n".join(chosen) + "\n", encoding="utf-8")
    click.echo(f"{len(chosen)} ids -> {out}")


@main.command("rank")
@click.option("--records", "records_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--dimension", default="overall", show_default=True)
@click.option("--iters", type=int, default=1000, show_default=True, help="Bootstrap replicates; 0 skips the CI step.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ridge", type=float, default=1e-4, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--compare-to", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Two-column 'model rating' file; prints the rank correlation.")
@click.pass_context
def rank_cmd(ctx, records_file: Path, dimension: str, iters: int, seed: int, ridge: float, out: Path, compare_to: Path | None):
    """Fit the leaderboard for one dimension (or the pooled 'overall')."""
    iters = _from_config(ctx, "iters", iters, "bootstrap_iters")
    seed = _from_config(ctx, "seed", seed, "seed")
    _log_config("rank", records=records_file, dimension=dimension, iters=iters, seed=seed, ridge=ridge, out=out)
    try:
        records = [ComparisonRecord.from_json(obj) for obj in _read_jsonl(records_file)]
        if iters > 0:
            entries = bootstrap_ci(records, dimension=dimension, iters=iters, seed=seed, ridge=ridge)
        else:
            entries = to_elo(fit_bradley_terry(aggregate(records, dimension), ridge=ridge))
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    payload = {
        "dimension": dimension,
        "entries": [
            {"model": e.model, "elo": e.elo, "ci_minus": e.ci_minus, "ci_plus": e.ci_plus}
            for e in entries
        ],
    }
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"{len(entries)} models -> {out}")
    if compare_to is not None:
        reference = {}
        for line in compare_to.read_text(encoding="utf-8").splitlines():
            parts = line.split()
            if len(parts) == 2:
                reference[parts[0]] = float(parts[1])
        shared = [e.model for e in entries if e.model in reference]
        if len(shared) < 2:
            raise click.ClickException("need at least 2 shared models for a rank correlation")
        ours = [next(e.elo for e in entries if e.model == m) for m in shared]
        theirs = [reference[m] for m in shared]
        try:
            rho = spearman(ours, theirs)
        except RankingError as exc:
            raise _fail(exc) from exc
        click.echo(f"spearman rho vs {compare_to.name} over {len(shared)} models: {rho:.6f}")


@main.group()
def judge():
    """Judge evaluation against gold preference pairs."""


@judge.command("eval")
@click.option("--gold", "gold_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--mock", "use_mock", is_flag=True, help="Use the built-in metric-ensemble mock judge.")
@click.option("--endpoint", default=None, help="HTTP judge endpoint URL.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dimension", type=click.Choice(["IF", "VQ", "VC"]), default="VC", show_default=True)
@click.pass_context
def judge_eval(ctx, gold_file: Path, use_mock: bool, endpoint: str | None, seed: int, dimension: str):
    """Report per-task and macro accuracy of a judge on gold pairs."""
    if use_mock == (endpoint is not None):
        raise click.UsageError("choose exactly one of --mock or --endpoint URL")
    seed = _from_config(ctx, "seed", seed, "seed")
    _log_config("judge eval", gold=gold_file, judge="mock" if use_mock else endpoint, seed=seed, dimension=dimension)
    try:
        gold = [GoldPair.from_json(obj) for obj in _read_jsonl(gold_file)]
        the_judge = MockJudge() if use_mock else EndpointJudge(endpoint)
        report = evaluate_judge(the_judge, gold, seed=seed, dimension=dimension)
    except (ValueError, *_DOMAIN_ERRORS) as exc:
        raise _fail(exc) from exc
    click.echo(report.render())


@main.group()
def annotate():
    """Human annotation campaign service."""


@annotate.command("serve")
@click.option("--pairs", "pairs_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="JSONL of annotation pairs.")
@click.option("--log", "log_file", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Append-only annotation log (replayed if present).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8800, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lease-timeout", type=float, default=900.0, show_default=True, help="Seconds before an unfinished pair returns to the queue.")
@click.pass_context
def annotate_serve(ctx, pairs_file: Path, log_file: Path, host: str, port: int, seed: int, lease_timeout: float):
    """Serve the annotation HTTP API (pairs/next, annotations, export, progress)."""
    import uvicorn

    from .service import create_app

    seed = _from_config(ctx, "seed", seed, "seed")
    _log_config("annotate serve", pairs=pairs_file, log=log_file, host=host, port=port, seed=seed, lease_timeout=lease_timeout)
    try:
        pairs = [AnnotationPair.from_json(obj) for obj in _read_jsonl(pairs_file)]
        service = AnnotationService(pairs, log_path=log_file, seed=seed, lease_timeout=lease_timeout)
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    uvicorn.run(create_app(annotation=service), host=host, port=port)


@main.command("report")
@click.option("--leaderboard", "leaderboard_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
def report_cmd(leaderboard_file: Path):
    """Render a leaderboard JSON file as an aligned text table."""
    try:
        payload = json.loads(leaderboard_file.read_text(encoding="utf-8"))
        entries = payload["entries"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise click.ClickException(f"unreadable leaderboard file: {exc}") from exc
    width = max([len("model")] + [len(e["model"]) for e in entries])
    click.echo(f"dimension: {payload.get('dimension', '?')}")
    click.echo(f"{'model'.ljust(width)}  {'elo':>8}  95% CI")
    for rank_pos, e in enumerate(entries, start=1):
        ci = f"{e['ci_minus']:+.0f}/{e['ci_plus']:+.0f}"
        click.echo(f"{e['model'].ljust(width)}  {e['elo']:8.1f}  {ci}  #{rank_pos}")


if __name__ == "__main__":
    main()
