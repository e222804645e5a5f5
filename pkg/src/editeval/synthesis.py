"""Preference-pair synthesis from per-candidate region scores.

Within each candidate group the primary metric values are z-score normalized,
averaged across regions into one ranking value, and pooled per task. The top
and bottom fractions become winner and loser sets; winner-loser pairs survive
only if the winner Pareto-dominates on the regional primaries and a majority
of auxiliary metrics agrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import CandidateGroup
from .metrics import MetricValue
from .regions import RegionPlan, plan_for

DEFAULT_FRACTION = 0.30
DEFAULT_VOTE_EPSILON = 0.05
PARETO_EPS = 1e-9
PAIR_SOURCES = ("synthesis", "annotation", "judge")


class SynthesisError(ValueError):
    """Raised for malformed score sets or invalid synthesis parameters."""


@dataclass
class CandidateScore:
    """All metric values for one candidate, keyed by (metric_id, region)."""

    group_id: str
    candidate_id: str
    metrics: dict[tuple[str, str], MetricValue] = field(default_factory=dict)

    def oriented(self, metric_id: str, region: str) -> float:
        key = (metric_id, region)
        if key not in self.metrics:
            raise SynthesisError(
                f"group {self.group_id!r} candidate {self.candidate_id!r}: "
                f"missing metric {metric_id!r} for region {region!r}"
            )
        return self.metrics[key].oriented()

    def has(self, metric_id: str, region: str) -> bool:
        return (metric_id, region) in self.metrics


@dataclass
class PreferencePair:
    group_id: str
    winner: str
    loser: str
    source: str = "synthesis"
    margins: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.winner == self.loser:
            raise SynthesisError(f"group {self.group_id!r}: winner and loser are both {self.winner!r}")
        if self.source not in PAIR_SOURCES:
            raise SynthesisError(f"unknown pair source {self.source!r}")
        if self.margins:
            vals = list(self.margins.values())
            if max(vals) <= 0.0 or min(vals) < -1e-6:
                raise SynthesisError(
                    f"group {self.group_id!r} pair ({self.winner!r}, {self.loser!r}): "
                    f"margins {self.margins} violate Pareto dominance"
                )

    def to_json(self) -> dict:
        return {
            "group_id": self.group_id,
            "winner": self.winner,
            "loser": self.loser,
            "source": self.source,
            "margins": {k: float(v) for k, v in self.margins.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "PreferencePair":
        return cls(
            group_id=obj["group_id"],
            winner=obj["winner"],
            loser=obj["loser"],
            source=obj.get("source", "synthesis"),
            margins=dict(obj.get("margins", {})),
        )


def zscore_group(values: Sequence[float]) -> list[float]:
    """Population z-scores; a near-constant group maps to all zeros."""
    if len(values) < 2:
        raise SynthesisError(f"z-score needs a group of at least 2 values, got {len(values)}")
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std())
    if std < 1e-12:
        return [0.0] * len(values)
    return [float(z) for z in (arr - arr.mean()) / std]


def select_extremes(
    aggregates: Mapping, fraction: float = DEFAULT_FRACTION
) -> tuple[set, set]:
    """Split a task pool of aggregated scores into winner and loser key sets.

    With k = floor(fraction * n), winners are the keys scoring strictly above
    the (k+1)-th largest value and losers strictly below the (k+1)-th
    smallest, so threshold ties fall into neither set and the sets stay
    disjoint for any fraction up to one half.
    """
    if not 0.0 < fraction <= 0.5:
        raise SynthesisError(f"fraction must lie in (0, 0.5], got {fraction}")
    if not aggregates:
        raise SynthesisError("cannot select extremes from an empty task pool")
    n = len(aggregates)
    k = int(math.floor(fraction * n))
    if k == 0:
        return set(), set()
    ordered = sorted(aggregates.values())
    hi_threshold = ordered[n - k - 1]
    lo_threshold = ordered[k]
    winners = {key for key, v in aggregates.items() if v > hi_threshold}
    losers = {key for key, v in aggregates.items() if v < lo_threshold}
    return winners, losers


def pareto_admissible(
    a: CandidateScore, b: CandidateScore, plan: RegionPlan, eps: float = PARETO_EPS
) -> bool:
    """True iff a beats b on at least one regional primary and trails on none."""
    strict = False
    for region in plan.scored_regions():
        primary = plan.primary_metric(region)
        gap = a.oriented(primary, region) - b.oriented(primary, region)
        if gap < -eps:
            return False
        if gap > eps:
            strict = True
    return strict


def validate_majority(gaps: Sequence[float], epsilon: float = DEFAULT_VOTE_EPSILON) -> bool:
    """Majority vote over auxiliary-metric gaps (winner minus loser, oriented).

    Gaps above epsilon agree with the pair, below -epsilon disagree, and the
    band between abstains. Keep only on a strict majority of agreement; a tied
    vote counts as a conflict and discards. No auxiliaries keeps trivially.
    """
    if not gaps:
        return True
    agrees = sum(1 for g in gaps if g > epsilon)
    disagrees = sum(1 for g in gaps if g < -epsilon)
    return agrees > disagrees


def _group_zscores(
    group: CandidateGroup, scores: Mapping[str, CandidateScore], plan: RegionPlan
) -> dict[tuple[str, str], dict[str, float]]:
    """Per-metric z-scores across the group's candidates for all plan metrics."""
    order = sorted(group.candidates)
    needed = [(plan.primary_metric(r), r) for r in plan.scored_regions()]
    needed += [mr for mr in plan.auxiliary_metrics() if mr not in needed]
    table: dict[tuple[str, str], dict[str, float]] = {}
    for metric_id, region in needed:
        raw = [scores[cid].oriented(metric_id, region) for cid in order]
        table[(metric_id, region)] = dict(zip(order, zscore_group(raw)))
    return table


def synthesize_pairs(
    groups: Iterable[CandidateGroup],
    scores: Iterable[CandidateScore],
    plans: Mapping[str, RegionPlan] | None = None,
    fraction: float = DEFAULT_FRACTION,
    epsilon: float = DEFAULT_VOTE_EPSILON,
    rng_seed: int = 0,
) -> list[PreferencePair]:
    """Run the full synthesis protocol and return pairs in deterministic order.

    The selection itself has no random component (rng_seed is accepted for
    interface stability); determinism comes from sorted candidate iteration.
    """
    del rng_seed
    groups = list(groups)
    by_candidate: dict[tuple[str, str], CandidateScore] = {}
    for s in scores:
        by_candidate[(s.group_id, s.candidate_id)] = s

    group_tables: dict[str, dict[tuple[str, str], dict[str, float]]] = {}
    task_pools: dict[str, dict[tuple[str, str], float]] = {}
    group_plans: dict[str, RegionPlan] = {}
    for group in groups:
        plan = plans[group.task] if plans is not None else plan_for(group.task)
        group_plans[group.group_id] = plan
        group_scores = {}
        for cid in group.candidates:
            key = (group.group_id, cid)
            if key not in by_candidate:
                raise SynthesisError(f"group {group.group_id!r}: candidate {cid!r} has no score")
            group_scores[cid] = by_candidate[key]
        table = _group_zscores(group, group_scores, plan)
        group_tables[group.group_id] = table
        primaries = [(plan.primary_metric(r), r) for r in plan.scored_regions()]
        pool = task_pools.setdefault(group.task, {})
        for cid in group.candidates:
            pool[(group.group_id, cid)] = float(
                np.mean([table[p][cid] for p in primaries])
            )

    extremes = {
        task: select_extremes(pool, fraction) for task, pool in task_pools.items()
    }

    pairs: list[PreferencePair] = []
    for group in groups:
        winners, losers = extremes[group.task]
        plan = group_plans[group.group_id]
        table = group_tables[group.group_id]
        primaries = [(plan.primary_metric(r), r) for r in plan.scored_regions()]
        auxiliaries = plan.auxiliary_metrics()
        w_ids = sorted(c for c in group.candidates if (group.group_id, c) in winners)
        l_ids = sorted(c for c in group.candidates if (group.group_id, c) in losers)
        for w in w_ids:
            for l in l_ids:
                margins = {m: table[(m, r)][w] - table[(m, r)][l] for m, r in primaries}
                vals = list(margins.values())
                if min(vals) < -PARETO_EPS or max(vals) <= PARETO_EPS:
                    continue
                aux_gaps = [table[(m, r)][w] - table[(m, r)][l] for m, r in auxiliaries]
                if not validate_majority(aux_gaps, epsilon):
                    continue
                pairs.append(
                    PreferencePair(
                        group_id=group.group_id,
                        winner=w,
                        loser=l,
                        source="synthesis",
                        margins=margins,
                    )
                )
    return pairs


def sample_in_group_pairs(
    group: CandidateGroup, p: int = 6, rng_seed: int = 0
) -> list[tuple[str, str]]:
    """Sample p distinct unordered candidate pairs uniformly without replacement."""
    ids = sorted(group.candidates)
    all_pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1 :]]
    if p > len(all_pairs):
        raise SynthesisError(
            f"group {group.group_id!r}: requested {p} pairs but only "
            f"{len(all_pairs)} distinct pairs exist"
        )
    if p < 0:
        raise SynthesisError(f"pair count must be non-negative, got {p}")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(len(all_pairs), size=p, replace=False)
    return [all_pairs[i] for i in sorted(chosen)]
