"""Leaderboard fitting: win/tie aggregation, Bradley-Terry, Elo, bootstrap CIs.

Pairwise comparison records are aggregated into a win/tie matrix per
evaluation dimension (or pooled across all of them), model strengths come
from a ridge-regularized Bradley-Terry maximum-likelihood fit with ties
counted as half-wins, and ratings are reported on a mean-anchored Elo scale
with percentile-bootstrap confidence intervals over evaluation samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import spearmanr

ELO_SCALE = 400.0
ELO_ANCHOR = 1000.0
DEFAULT_RIDGE = 1e-4
DEFAULT_ITERS = 1000
OVERALL = "overall"
OUTCOMES = ("A", "B", "tie")


class RankingError(ValueError):
    """Raised for malformed comparison data or failed fits."""


@dataclass(frozen=True)
class ComparisonRecord:
    sample_id: str
    task: str
    dimension: str
    model_a: str
    model_b: str
    outcome: str

    def __post_init__(self):
        if not self.sample_id:
            raise RankingError("comparison record needs a non-empty sample_id")
        if self.model_a == self.model_b:
            raise RankingError(f"record for sample {self.sample_id!r} compares {self.model_a!r} to itself")
        if self.outcome not in OUTCOMES:
            raise RankingError(f"outcome must be one of {OUTCOMES}, got {self.outcome!r}")
        if not self.dimension:
            raise RankingError("comparison record needs a dimension tag")

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "task": self.task,
            "dimension": self.dimension,
            "model_a": self.model_a,
            "model_b": self.model_b,
            "outcome": self.outcome,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ComparisonRecord":
        return cls(
            sample_id=obj["sample_id"],
            task=obj.get("task", ""),
            dimension=obj["dimension"],
            model_a=obj["model_a"],
            model_b=obj["model_b"],
            outcome=obj["outcome"],
        )


@dataclass
class WinMatrix:
    models: list[str]
    wins: np.ndarray
    ties: np.ndarray

    def __post_init__(self):
        k = len(self.models)
        self.wins = np.asarray(self.wins, dtype=np.float64)
        self.ties = np.asarray(self.ties, dtype=np.float64)
        if self.wins.shape != (k, k) or self.ties.shape != (k, k):
            raise RankingError(f"matrix shapes must be ({k}, {k})")
        if (self.wins < 0).any() or (self.ties < 0).any():
            raise RankingError("win/tie counts must be non-negative")
        if np.diagonal(self.wins).any() or np.diagonal(self.ties).any():
            raise RankingError("self-comparisons are not allowed (non-zero diagonal)")
        if not np.array_equal(self.ties, self.ties.T):
            raise RankingError("tie counts must be symmetric")

    def effective_wins(self) -> np.ndarray:
        """Wins with each tie credited half to both sides."""
        return self.wins + self.ties / 2.0

    def index(self, model: str) -> int:
        try:
            return self.models.index(model)
        except ValueError:
            raise RankingError(f"unknown model {model!r}") from None


@dataclass
class LeaderboardEntry:
    model: str
    elo: float
    ci_minus: float = 0.0
    ci_plus: float = 0.0

    def __post_init__(self):
        if not (self.ci_minus <= 0.0 <= self.ci_plus):
            raise RankingError(
                f"CI offsets must straddle zero, got [{self.ci_minus}, {self.ci_plus}]"
            )


def aggregate(records: Iterable[ComparisonRecord], dimension: str = OVERALL) -> WinMatrix:
    """Count filtered records into a win/tie matrix; 'overall' pools every dimension."""
    pooled = dimension.lower() == OVERALL
    filtered = [r for r in records if pooled or r.dimension == dimension]
    if not filtered:
        raise RankingError(f"no comparison records match dimension {dimension!r}")
    models = sorted({r.model_a for r in filtered} | {r.model_b for r in filtered})
    idx = {m: i for i, m in enumerate(models)}
    k = len(models)
    wins = np.zeros((k, k))
    ties = np.zeros((k, k))
    for r in filtered:
        a, b = idx[r.model_a], idx[r.model_b]
        if r.outcome == "A":
            wins[a, b] += 1
        elif r.outcome == "B":
            wins[b, a] += 1
        else:
            ties[a, b] += 1
            ties[b, a] += 1
    return WinMatrix(models, wins, ties)


def _components(effective: np.ndarray) -> list[list[int]]:
    k = effective.shape[0]
    adjacency = (effective + effective.T) > 0
    seen = np.zeros(k, dtype=bool)
    comps = []
    for start in range(k):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            node = stack.pop()
            comp.append(node)
            for nbr in np.flatnonzero(adjacency[node]):
                if not seen[nbr]:
                    seen[nbr] = True
                    stack.append(nbr)
        comps.append(sorted(comp))
    return comps


def fit_bradley_terry(
    m: WinMatrix, ridge: float = DEFAULT_RIDGE, grad_tol: float = 1e-8
) -> dict[str, float]:
    """Maximum-likelihood log-strengths with ties as half-wins.

    Maximizes sum of w_ij * log(sigmoid(xi_i - xi_j)) minus a ridge penalty;
    the result is mean-centered, which the penalty's optimum already implies
    for any positive ridge.
    """
    if ridge < 0:
        raise RankingError(f"ridge must be non-negative, got {ridge}")
    w = m.effective_wins()
    comps = _components(w)
    if len(comps) > 1:
        named = [[m.models[i] for i in c] for c in comps]
        raise RankingError(f"comparison graph is disconnected: components {named}")
    k = len(m.models)

    def objective(xi: np.ndarray) -> tuple[float, np.ndarray]:
        diff = xi[:, None] - xi[None, :]
        # log sigmoid(d) = -log(1 + exp(-d)), numerically stable via logaddexp
        log_lik = float((w * -np.logaddexp(0.0, -diff)).sum()) - ridge * float(xi @ xi)
        p_ji = expit(-diff)  # sigma(xi_j - xi_i) at [i, j]
        grad = (w * p_ji).sum(axis=1) - (w.T * (1.0 - p_ji)).sum(axis=1) - 2.0 * ridge * xi
        return -log_lik, -grad

    res = minimize(
        objective,
        np.zeros(k),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-15},
    )
    xi = res.x

    # The quasi-Newton line search stalls at float precision on lopsided
    # matrices before meeting the strict gradient criterion; a few damped
    # Newton steps with the exact (tiny, k x k) Hessian finish the job.
    for _ in range(60):
        value, grad = objective(xi)
        grad_norm = float(np.abs(grad).max())
        if grad_norm <= grad_tol * 0.5:
            break
        diff = xi[:, None] - xi[None, :]
        curvature = (w + w.T) * expit(diff) * expit(-diff)
        hessian = np.diag(curvature.sum(axis=1)) - curvature + 2.0 * ridge * np.eye(k)
        if ridge == 0.0:
            hessian = hessian + 1e-12 * np.eye(k)
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            break
        # Near the optimum a correct Newton step improves the objective by
        # ~|grad|^2, which underflows float64 resolution against the total
        # likelihood, so a step that shrinks the gradient norm must also be
        # accepted or the search rejects its way to a stall.
        scale = 1.0
        accepted = False
        while scale >= 1e-8:
            trial = xi - scale * step
            t_value, t_grad = objective(trial)
            if t_value <= value or float(np.abs(t_grad).max()) < grad_norm:
                xi = trial
                accepted = True
                break
            scale /= 2.0
        if not accepted:
            break

    grad_inf = float(np.abs(objective(xi)[1]).max())
    if grad_inf > grad_tol:
        raise RankingError(
            f"Bradley-Terry fit did not converge: max gradient {grad_inf:.3e} > {grad_tol:.0e}"
        )
    xi = xi - xi.mean()
    return {model: float(s) for model, s in zip(m.models, xi)}


def to_elo(
    strengths: Mapping[str, float], scale: float = ELO_SCALE, anchor: float = ELO_ANCHOR
) -> list[LeaderboardEntry]:
    """Map mean-centered log-strengths onto an Elo scale anchored at the mean."""
    if not strengths:
        raise RankingError("no strengths to convert")
    values = np.array(list(strengths.values()), dtype=np.float64)
    centered = values - values.mean()
    entries = [
        LeaderboardEntry(model=model, elo=float(anchor + scale / math.log(10.0) * s))
        for model, s in zip(strengths.keys(), centered)
    ]
    entries.sort(key=lambda e: (-e.elo, e.model))
    return entries


def bootstrap_ci(
    records: Sequence[ComparisonRecord],
    dimension: str = OVERALL,
    iters: int = DEFAULT_ITERS,
    level: float = 0.95,
    seed: int = 0,
    ridge: float = DEFAULT_RIDGE,
) -> list[LeaderboardEntry]:
    """Percentile-bootstrap Elo intervals resampled at sample-id granularity.

    All records belonging to a drawn sample id move together. Replicates whose
    comparison graph loses a model or falls apart are redrawn with a fresh
    per-replicate substream; more than 10% redraws aborts.
    """
    if iters < 1:
        raise RankingError(f"iters must be >= 1, got {iters}")
    if not 0.0 < level < 1.0:
        raise RankingError(f"level must lie in (0, 1), got {level}")
    records = list(records)
    point_matrix = aggregate(records, dimension)
    point_elo = {
        e.model: e.elo for e in to_elo(fit_bradley_terry(point_matrix, ridge=ridge))
    }
    models = point_matrix.models

    by_sample: dict[str, list[ComparisonRecord]] = {}
    for r in records:
        by_sample.setdefault(r.sample_id, []).append(r)
    sample_ids = sorted(by_sample)
    n_samples = len(sample_ids)

    replicate_elo = np.empty((iters, len(models)))
    redraws = 0
    max_redraws = int(math.floor(0.10 * iters))
    for rep in range(iters):
        attempt = 0
        while True:
            rng = np.random.default_rng([seed, rep, attempt])
            drawn = rng.integers(0, n_samples, size=n_samples)
            resampled = [r for i in drawn for r in by_sample[sample_ids[i]]]
            try:
                matrix = aggregate(resampled, dimension)
                if matrix.models != models:
                    raise RankingError("replicate dropped a model")
                strengths = fit_bradley_terry(matrix, ridge=ridge)
            except RankingError:
                redraws += 1
                attempt += 1
                if redraws > max_redraws:
                    raise RankingError(
                        f"bootstrap aborted: {redraws} redraws exceed 10% of {iters} replicates"
                    ) from None
                continue
            elo = {e.model: e.elo for e in to_elo(strengths)}
            replicate_elo[rep] = [elo[m] for m in models]
            break

    alpha = (1.0 - level) / 2.0
    lo = np.percentile(replicate_elo, 100.0 * alpha, axis=0)
    hi = np.percentile(replicate_elo, 100.0 * (1.0 - alpha), axis=0)
    entries = [
        LeaderboardEntry(
            model=model,
            elo=point_elo[model],
            ci_minus=min(0.0, float(lo[i] - point_elo[model])),
            ci_plus=max(0.0, float(hi[i] - point_elo[model])),
        )
        for i, model in enumerate(models)
    ]
    entries.sort(key=lambda e: (-e.elo, e.model))
    return entries


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    if len(x) != len(y):
        raise RankingError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise RankingError("need at least 2 points for a rank correlation")
    if len(set(x)) == 1 or len(set(y)) == 1:
        raise RankingError("rank correlation is undefined for a constant vector")
    rho = spearmanr(x, y).statistic
    return float(rho)
