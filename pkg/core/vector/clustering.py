"""
K-means over flattened training series and contrastive negative selection from
clusters the query does not fall into.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from core.dataset_store import ChannelStats, TimeSeriesSample
from core.vector.neighbor_index import NeighborHit
from utils.error_handler import ClusterError, RetrievalError
from utils.logger import retrieval_logger as logger


def flatten_channel_major(values: np.ndarray, stats: Optional[ChannelStats] = None) -> np.ndarray:
    """t x m series -> vector of length t*m holding channel 0's values, then channel 1's, ..."""
    if stats is not None:
        values = stats.zscore(values)
    return np.ascontiguousarray(values.T).ravel()


@dataclass(frozen=True)
class ClusterModel:
    K: int
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    seed: int
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stats: Optional[ChannelStats] = None

    def embed(self, values: np.ndarray) -> np.ndarray:
        return flatten_channel_major(values, self.stats)

    def nearest_centroid(self, vector: np.ndarray) -> int:
        """Closest centroid id; ties go to the lower id"""
        d2 = np.sum((self.centroids - vector) ** 2, axis=1)
        return int(np.argmin(d2))

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster_id)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """n x K matrix of squared Euclidean distances"""
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _objective(points: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    return float(np.sum((points - centroids[assignments]) ** 2))


def _seed_centroids(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding"""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < K:
        total = closest.sum()
        if total > 0:
            candidate = int(rng.choice(n, p=closest / total))
        else:
            # Remaining points coincide with chosen centroids
            candidate = next(i for i in range(n) if i not in chosen)
        chosen.append(candidate)
        closest = np.minimum(closest, np.sum((points - points[candidate]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans_fit(train: Sequence[TimeSeriesSample], K: int, seed: int = 0, max_iters: int = 100,
               stats: Optional[ChannelStats] = None) -> ClusterModel:
    """
    Lloyd's algorithm from k-means++ seeding, deterministic for a given seed.

    Args:
        train: Training samples, flattened channel-major
        K: Number of clusters, 1 <= K <= |train|
        seed: RNG seed for the seeding step
        max_iters: Upper bound on Lloyd iterations
        stats: When given, series are z-normalized per channel before flattening

    Returns:
        ClusterModel with the objective trace of every iteration
    """
    n = len(train)
    if K <= 0:
        raise ClusterError(f"K must be positive, got {K}")
    if K > n:
        raise ClusterError(f"K={K} exceeds the training split size {n}")
    if max_iters <= 0:
        raise ClusterError(f"max_iters must be positive, got {max_iters}")

    points = np.stack([flatten_channel_major(sample.values, stats) for sample in train])
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(points, K, rng)

    assignments = np.full(n, -1, dtype=np.int64)
    trace: List[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        new_assignments = np.argmin(_squared_distances(points, centroids), axis=1)
        if np.array_equal(new_assignments, assignments):
            converged = True
            iteration -= 1
            break
        assignments = new_assignments

        own_d2 = np.sum((points - centroids[assignments]) ** 2, axis=1)
        used = set()
        for c in range(K):
            members = assignments == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
            else:
                # Empty cluster: move it onto the point worst served by its centroid
                order = np.lexsort((np.arange(n), -own_d2))
                far = next(int(i) for i in order if int(i) not in used)
                used.add(far)
                centroids[c] = points[far]
                logger.debug(f"k-means iteration {iteration}: reseeded empty cluster {c} at point {far}")
        trace.append(_objective(points, centroids, assignments))

    objective = _objective(points, centroids, assignments)
    logger.info(f"k-means K={K} seed={seed}: objective={objective:.6g} after {iteration} iterations"
                f"{'' if converged else ' (max_iters reached)'}")
    return ClusterModel(K=K, centroids=centroids, assignments=assignments, objective=objective,
                        seed=seed, trace=trace, iterations=iteration, converged=converged, stats=stats)


def select_negatives(query: TimeSeriesSample, model: ClusterModel, train: Sequence[TimeSeriesSample],
                     n_neg: int) -> List[NeighborHit]:
    """
    Representative training samples from clusters other than the query's.

    The query joins its nearest centroid; every training point outside that cluster is a
    candidate, ranked by distance to its own centroid (ties by train_index).

    Raises:
        RetrievalError: fewer candidates than n_neg
    """
    if n_neg < 0:
        raise RetrievalError(f"n_neg must be >= 0, got {n_neg}")
    if n_neg == 0:
        return []

    query_cluster = model.nearest_centroid(model.embed(query.values))
    pool = np.flatnonzero(model.assignments != query_cluster)
    if len(pool) < n_neg:
        raise RetrievalError(f"Only {len(pool)} negative candidates outside cluster {query_cluster}, {n_neg} requested")

    points = np.stack([model.embed(train[i].values) for i in pool])
    own = np.sqrt(np.sum((points - model.centroids[model.assignments[pool]]) ** 2, axis=1))
    order = np.lexsort((pool, own))[:n_neg]
    return [NeighborHit(train_index=int(pool[i]), distance=float(own[i]), label=train[int(pool[i])].label)
            for i in order]
