"""Representative-sample curation via deterministic K-center greedy selection.

Picks a maximally spread subset of (image, instruction) samples from their
joint embeddings: the first center is the point farthest from the pool
centroid, and every later center maximizes its distance to the chosen set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import EmbeddingSet

DEFAULT_POOL_SIZE = 1500
DISTANCE_METRICS = ("euclidean", "cosine")


class CurationError(ValueError):
    """Raised for invalid pools or selection parameters."""


@dataclass
class SamplePool:
    """Sample ids paired row-for-row with their joint embeddings."""

    ids: list[str]
    embeddings: EmbeddingSet

    def __post_init__(self):
        if len(self.ids) != self.embeddings.count:
            raise CurationError(
                f"pool has {len(self.ids)} ids but {self.embeddings.count} embeddings"
            )
        if len(set(self.ids)) != len(self.ids):
            raise CurationError("pool ids must be unique")

    @property
    def size(self) -> int:
        return len(self.ids)


def _distances_from(x: np.ndarray, point: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.linalg.norm(x - point, axis=1)
    norms = np.linalg.norm(x, axis=1)
    pnorm = np.linalg.norm(point)
    out = np.ones(len(x))
    good = (norms > 1e-12) & (pnorm > 1e-12)
    out[good] = 1.0 - (x[good] @ point) / (norms[good] * pnorm)
    return out


def _argmax_lowest_id(values: np.ndarray, ids: list[str], available: np.ndarray) -> int:
    best = values[available].max()
    tied = np.flatnonzero(available & (values == best))
    return min(tied, key=lambda i: ids[i])


def kcenter_greedy(pool: SamplePool, n: int, metric: str = "euclidean") -> list[str]:
    """Select n ids by farthest-point traversal; ties break toward the lowest id.

    The greedy result covers the pool within twice the optimal k-center
    radius, which small-instance tests verify exhaustively.
    """
    if pool.size == 0:
        raise CurationError("cannot curate from an empty pool")
    if not 1 <= n <= pool.size:
        raise CurationError(f"n must lie in [1, {pool.size}], got {n}")
    if metric not in DISTANCE_METRICS:
        raise CurationError(f"unknown distance metric {metric!r}; use one of {DISTANCE_METRICS}")

    x = pool.embeddings.vectors.astype(np.float64)
    available = np.ones(pool.size, dtype=bool)

    centroid = x.mean(axis=0)
    from_centroid = _distances_from(x, centroid, metric)
    first = _argmax_lowest_id(from_centroid, pool.ids, available)

    chosen = [first]
    available[first] = False
    min_dist = _distances_from(x, x[first], metric)
    while len(chosen) < n:
        nxt = _argmax_lowest_id(min_dist, pool.ids, available)
        chosen.append(nxt)
        available[nxt] = False
        min_dist = np.minimum(min_dist, _distances_from(x, x[nxt], metric))
    return [pool.ids[i] for i in chosen]


def coverage_radius(pool: SamplePool, center_ids: list[str], metric: str = "euclidean") -> float:
    """Largest distance from any pool point to its nearest chosen center."""
    if not center_ids:
        raise CurationError("coverage radius needs at least one center")
    index = {sid: i for i, sid in enumerate(pool.ids)}
    x = pool.embeddings.vectors.astype(np.float64)
    centers = [index[c] for c in center_ids]
    dists = np.stack([_distances_from(x, x[c], metric) for c in centers])
    return float(dists.min(axis=0).max())
