"""Model registry: roster presets, a uniform training entry point, and the
prediction surface shared by every family."""
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any

import numpy as np

from droidauto.data.dataset_io import Dataset
from droidauto.models import forest, gbt, knn
from droidauto.models.tree import grow_tree

logger = logging.getLogger(__name__)

FAMILIES = ("decision_tree", "random_forest", "extra_trees", "gbt", "knn")

DEFAULT_TREE_PARAMS = {"max_depth": None, "min_samples_leaf": 1, "seed": 0}

DEFAULT_PARAMS = {
    "decision_tree": DEFAULT_TREE_PARAMS,
    "random_forest": forest.DEFAULT_FOREST_PARAMS,
    "extra_trees": forest.DEFAULT_FOREST_PARAMS,
    "gbt": gbt.DEFAULT_GBT_PARAMS,
    "knn": knn.DEFAULT_KNN_PARAMS,
}

# Roster name -> (family, preset params)
ROSTER_PRESETS = {
    "decision_tree": ("decision_tree", {}),
    "random_forest": ("random_forest", {}),
    "extra_trees": ("extra_trees", {}),
    "gbt_leafwise": ("gbt", gbt.PRESET_LEAFWISE),
    "gbt_depthwise": ("gbt", gbt.PRESET_DEPTHWISE),
    "knn": ("knn", {}),
}
DEFAULT_ROSTER = tuple(ROSTER_PRESETS)

# Parameter that controls training cost, for families that can be extended.
BUDGET_PARAMS = {"random_forest": "n_trees", "extra_trees": "n_trees", "gbt": "n_rounds"}


@dataclass(frozen=True)
class MemberConfig:
    name: str
    family: str
    params: dict = field(default_factory=dict)


def member_config(name: str, overrides: dict | None = None) -> MemberConfig:
    """Roster entry with its preset merged under ``overrides``."""
    if name not in ROSTER_PRESETS:
        raise ValueError(f"unknown roster member {name!r}; expected one of {list(ROSTER_PRESETS)}")
    family, preset = ROSTER_PRESETS[name]
    return MemberConfig(name=name, family=family, params={**preset, **(overrides or {})})


@dataclass(frozen=True)
class ModelArtifact:
    """A trained model plus what is needed to use and describe it."""
    name: str
    family: str
    params: dict
    model: Any
    feature_names: tuple[str, ...]
    n_train: int = 0
    trained_at: str = ""

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return predict_proba(self, X)

    def feature_importances(self) -> np.ndarray | None:
        fn = getattr(self.model, "feature_importances", None)
        return fn() if fn is not None else None


def train_decision_tree(ds: Dataset, params: dict | None = None):
    p = {**DEFAULT_TREE_PARAMS, **(params or {})}
    unknown = set(p) - set(DEFAULT_TREE_PARAMS)
    if unknown:
        raise ValueError(f"unknown decision_tree parameters: {sorted(unknown)}")
    if np.isnan(ds.features).any():
        raise ValueError("tree training data contains missing values; run preprocessing first")
    return grow_tree(
        ds.features,
        ds.labels,
        max_depth=p["max_depth"],
        min_samples_leaf=int(p["min_samples_leaf"]),
        rng=np.random.default_rng(p["seed"]),
    )


def _fit(family: str, ds: Dataset, params: dict, n_jobs: int, warm_start):
    if family == "decision_tree":
        return train_decision_tree(ds, params)
    if family in forest.FOREST_MODES:
        return forest.train_forest(ds, params, mode=family, n_jobs=n_jobs, warm_start=warm_start)
    if family == "gbt":
        return gbt.train_gbt(ds, params, init_model=warm_start)
    if family == "knn":
        return knn.train_knn(ds, params)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def train_model(
    family: str,
    ds: Dataset,
    params: dict | None = None,
    name: str | None = None,
    n_jobs: int = 1,
    warm_start: ModelArtifact | None = None,
) -> ModelArtifact:
    params = dict(params or {})
    logger.debug("Training %s (%s) on %d rows", name or family, family, ds.n_rows)
    model = _fit(family, ds, params, n_jobs, warm_start.model if warm_start else None)
    return ModelArtifact(
        name=name or family,
        family=family,
        params=params,
        model=model,
        feature_names=ds.feature_names,
        n_train=ds.n_rows,
        trained_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def extend_model(artifact: ModelArtifact, ds: Dataset, budget: int, n_jobs: int = 1) -> ModelArtifact:
    """Grow an extensible model to ``budget`` trees / rounds, reusing what it has."""
    key = BUDGET_PARAMS.get(artifact.family)
    if key is None:
        raise ValueError(f"{artifact.family} models have no training budget to extend")
    params = {**artifact.params, key: int(budget)}
    return train_model(artifact.family, ds, params, name=artifact.name, n_jobs=n_jobs, warm_start=artifact)


def predict_proba(model, X: np.ndarray) -> np.ndarray:
    """(n, 2) class probabilities from any trained model or ModelArtifact."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    inner = model.model if isinstance(model, ModelArtifact) else model
    expected = model.n_features if isinstance(model, ModelArtifact) else getattr(inner, "n_features", None)
    if expected is not None and X.shape[1] != expected:
        raise ValueError(f"model expects {expected} features, got {X.shape[1]}")
    return np.asarray(inner.predict_proba(X), dtype=np.float64)


def predict(model, X: np.ndarray) -> np.ndarray:
    """Hard labels; exact ties go to class 1 (malware)."""
    proba = predict_proba(model, X)
    return (proba[:, 1] >= proba[:, 0]).astype(np.int64)
