"""Permutation importance: how much a metric drops when one column is shuffled."""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from droidauto.data.dataset_io import Dataset
from droidauto.metrics import evaluate
from droidauto.models import predict_proba

logger = logging.getLogger(__name__)

IMPORTANCE_METRICS = ("recall", "precision", "accuracy", "f1", "mcc", "roc_auc")


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: tuple[str, ...]
    importances: np.ndarray     # mean metric drop per feature
    std: np.ndarray
    repeats: int
    seed: int
    metric: str
    baseline: float

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "feature": list(self.feature_names),
            "importance": self.importances,
            "std": self.std,
        })
        frame["rank"] = frame["importance"].rank(ascending=False, method="first").astype(int)
        return frame


def _metric_value(metric: str, y: np.ndarray, proba: np.ndarray) -> float:
    value = evaluate(y, proba).to_dict().get(metric)
    if value is None:
        raise ValueError(f"metric {metric!r} is undefined on this data (single-class labels?)")
    return value


def permutation_importance(
    model,
    ds: Dataset,
    metric: str = "recall",
    repeats: int = 5,
    seed: int = 42,
) -> ImportanceReport:
    """
    Mean drop of ``metric`` over ``repeats`` shuffles of each column.

    Negative drops (shuffling helped) are reported as they are.
    """
    if metric not in IMPORTANCE_METRICS:
        raise ValueError(f"metric must be one of {IMPORTANCE_METRICS}, got {metric!r}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = np.asarray(ds.features, dtype=np.float64)
    y = ds.labels
    baseline = _metric_value(metric, y, predict_proba(model, X))

    rng = np.random.default_rng(seed)
    drops = np.zeros((ds.n_cols, repeats))
    for j in range(ds.n_cols):
        shuffled = X.copy()
        for r in range(repeats):
            shuffled[:, j] = X[rng.permutation(X.shape[0]), j]
            drops[j, r] = baseline - _metric_value(metric, y, predict_proba(model, shuffled))
    logger.debug("Permutation importance over %d features x %d repeats", ds.n_cols, repeats)
    return ImportanceReport(
        feature_names=ds.feature_names,
        importances=drops.mean(axis=1),
        std=drops.std(axis=1),
        repeats=repeats,
        seed=seed,
        metric=metric,
        baseline=baseline,
    )
