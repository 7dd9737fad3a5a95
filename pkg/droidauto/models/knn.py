"""k-nearest-neighbour classifier over a stored training matrix."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from droidauto.data.dataset_io import Dataset

KNN_METRICS = ("euclidean", "hamming")
# Query rows per distance block.
CHUNK_ROWS = 1024

DEFAULT_KNN_PARAMS = {"k": 5, "metric": "euclidean", "seed": 0}


@dataclass(frozen=True)
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int
    metric: str = "euclidean"

    def __post_init__(self):
        if self.metric not in KNN_METRICS:
            raise ValueError(f"metric must be one of {KNN_METRICS}, got {self.metric!r}")
        if not 1 <= self.k <= self.X.shape[0]:
            raise ValueError(f"k must lie in [1, {self.X.shape[0]}], got {self.k}")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def kneighbors(self, Q: np.ndarray) -> np.ndarray:
        """Indices of the k nearest training rows; equal distances keep the lower index."""
        Q = np.asarray(Q, dtype=np.float64)
        # squared euclidean keeps the ranking and stays exact on 0/1 data
        metric = "sqeuclidean" if self.metric == "euclidean" else "hamming"
        out = np.empty((Q.shape[0], self.k), dtype=np.int64)
        for start in range(0, Q.shape[0], CHUNK_ROWS):
            dist = cdist(Q[start:start + CHUNK_ROWS], self.X, metric=metric)
            order = np.argsort(dist, axis=1, kind="stable")
            out[start:start + CHUNK_ROWS] = order[:, : self.k]
        return out

    def predict_proba(self, Q: np.ndarray) -> np.ndarray:
        p1 = self.y[self.kneighbors(Q)].mean(axis=1)
        return np.column_stack([1.0 - p1, p1])


def train_knn(ds: Dataset, params: dict | None = None) -> KnnModel:
    p = {**DEFAULT_KNN_PARAMS, **(params or {})}
    unknown = set(p) - set(DEFAULT_KNN_PARAMS)
    if unknown:
        raise ValueError(f"unknown knn parameters: {sorted(unknown)}")
    X = np.array(ds.features, dtype=np.float64)
    if np.isnan(X).any():
        raise ValueError("knn training data contains missing values; run preprocessing first")
    k = int(p["k"])
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the {X.shape[0]} training rows")
    return KnnModel(X=X, y=np.array(ds.labels, dtype=np.float64), k=k, metric=p["metric"])
