"""
Similarity measures for neighbor retrieval: Euclidean (ED), standardized Euclidean
(SED), Manhattan (MAN) and dependent multivariate dynamic time warping (DTW).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import distance as spd

from core.dataset_store import ChannelStats
from utils.error_handler import MetricError

METRIC_KINDS = ("ed", "sed", "man", "dtw")


@dataclass(frozen=True)
class DistanceMetric:
    kind: str = "man"
    dtw_window: Optional[int] = None
    stats: Optional[ChannelStats] = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in METRIC_KINDS:
            raise MetricError(f"Unknown metric '{self.kind}'. Valid options: {', '.join(METRIC_KINDS)}")
        object.__setattr__(self, 'kind', kind)
        if kind == "sed" and self.stats is None:
            raise MetricError("SED requires channel statistics")
        if self.dtw_window is not None and self.dtw_window < 0:
            raise MetricError(f"dtw_window must be >= 0, got {self.dtw_window}")

    @property
    def is_lockstep(self) -> bool:
        return self.kind != "dtw"


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise MetricError(f"Expected a non-empty t x m series, got shape {x.shape}")
    return x


def dtw_distance(a: np.ndarray, b: np.ndarray, window: Optional[int] = None) -> float:
    """
    Dependent DTW: one warping path shared by all channels, local cost is the
    Euclidean norm of the row difference, no normalization of the terminal cost.

    The accumulated-cost matrix is filled one anti-diagonal at a time; every cell on
    diagonal d depends only on diagonals d-1 and d-2.
    """
    t, u = a.shape[0], b.shape[0]
    if window is not None and window < abs(t - u):
        raise MetricError(f"dtw_window {window} admits no warping path between lengths {t} and {u}")

    cost = spd.cdist(a, b, metric='euclidean')
    if window is not None:
        rows, cols = np.indices(cost.shape)
        cost[np.abs(rows - cols) > window] = np.inf

    acc = np.full((t + 1, u + 1), np.inf)
    acc[0, 0] = 0.0
    for d in range(2, t + u + 1):
        i = np.arange(max(1, d - u), min(t, d - 1) + 1)
        j = d - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    return float(acc[t, u])


def distance(a, b, metric: DistanceMetric) -> float:
    """
    Distance between two series under `metric`.

    Raises:
        MetricError: channel mismatch, length mismatch for lockstep metrics, empty series
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"Channel mismatch: {a.shape[1]} vs {b.shape[1]}")
    if metric.is_lockstep and a.shape[0] != b.shape[0]:
        raise MetricError(f"{metric.kind.upper()} needs equal lengths, got {a.shape[0]} and {b.shape[0]}")

    if metric.kind == "ed":
        return float(spd.euclidean(a.ravel(), b.ravel()))
    if metric.kind == "man":
        return float(spd.cityblock(a.ravel(), b.ravel()))
    if metric.kind == "sed":
        if metric.stats.std.shape[0] != a.shape[1]:
            raise MetricError(f"SED statistics cover {metric.stats.std.shape[0]} channels, series have {a.shape[1]}")
        variances = np.broadcast_to(metric.stats.safe_std ** 2, a.shape).ravel()
        return float(spd.seuclidean(a.ravel(), b.ravel(), variances))
    return dtw_distance(a, b, metric.dtw_window)
