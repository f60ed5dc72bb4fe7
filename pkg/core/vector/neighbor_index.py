"""
Exact k-nearest-neighbor retrieval over a training split.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from core.dataset_store import ChannelStats, TimeSeriesSample
from core.vector.metrics import DistanceMetric, distance
from utils.error_handler import RetrievalError
from utils.logger import retrieval_logger as logger


@dataclass(frozen=True)
class NeighborHit:
    train_index: int
    distance: float
    label: str

    def to_dict(self) -> dict:
        return {'train_index': self.train_index, 'distance': self.distance, 'label': self.label}


def retrieve_neighbors(query: TimeSeriesSample, train: Sequence[TimeSeriesSample],
                       metric: DistanceMetric, k: int) -> List[NeighborHit]:
    """
    The k training samples closest to `query`, ascending by (distance, train_index).

    Raises:
        RetrievalError: k = 0 or k > |train|
    """
    return NeighborIndex(train, metric).search(query.values, k)


class NeighborIndex:
    """Brute-force index: every query is scored against every training sample"""

    def __init__(self, train: Sequence[TimeSeriesSample], metric: DistanceMetric,
                 normalize_with: Optional[ChannelStats] = None):
        self.train = list(train)
        self.metric = metric
        self.stats = normalize_with
        if normalize_with is not None:
            self._vectors = [normalize_with.zscore(sample.values) for sample in self.train]
        else:
            self._vectors = [sample.values for sample in self.train]

    def distances(self, query_values: np.ndarray) -> np.ndarray:
        """Distance from the query to every training sample, in training order"""
        if self.stats is not None:
            query_values = self.stats.zscore(query_values)
        return np.array([distance(query_values, values, self.metric) for values in self._vectors])

    def search(self, query_values: np.ndarray, k: int) -> List[NeighborHit]:
        if k <= 0:
            raise RetrievalError(f"k must be positive, got {k}")
        if k > len(self.train):
            raise RetrievalError(f"k={k} exceeds the training split size {len(self.train)}")

        scores = self.distances(query_values)
        # lexsort keys: last is primary
        order = np.lexsort((np.arange(len(scores)), scores))[:k]
        hits = [NeighborHit(train_index=int(i), distance=float(scores[i]), label=self.train[i].label)
                for i in order]
        logger.debug(f"Retrieved {k} neighbors ({self.metric.kind}), nearest d={hits[0].distance:.4g}")
        return hits
