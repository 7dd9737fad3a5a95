"""Random forests and extra-trees built from the CART grower.

Tree ``i`` draws its randomness from ``SeedSequence(seed, spawn_key=(i,))``,
so a forest of 200 trees is the forest of 100 trees plus 100 more. The
halving pruner relies on that to extend forests rung by rung.
"""
import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from droidauto.data.dataset_io import Dataset
from droidauto.models.tree import TreeModel, grow_tree, resolve_max_features

logger = logging.getLogger(__name__)

FOREST_MODES = ("random_forest", "extra_trees")

DEFAULT_FOREST_PARAMS = {
    "n_trees": 100,
    "max_depth": None,
    "min_samples_leaf": 1,
    "max_features": "sqrt",
    "bootstrap": None,      # None -> True for random_forest, False for extra_trees
    "seed": 0,
}


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[TreeModel, ...]
    tree_seeds: tuple[int, ...]
    mode: str
    max_features: int               # candidate features per split
    bootstrap: bool
    seed: int
    n_features: int
    max_depth: int | None = None
    min_samples_leaf: int = 1

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        if any(t.n_features != self.n_features for t in self.trees):
            raise ValueError("all trees must share the feature dimensionality")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros((np.asarray(X).shape[0], 2))
        for tree in self.trees:
            total += tree.predict_proba(X)
        return total / self.n_trees

    def feature_importances(self) -> np.ndarray:
        imp = np.mean([t.feature_importances() for t in self.trees], axis=0)
        total = imp.sum()
        return imp / total if total > 0 else imp


def tree_seed(seed: int, index: int) -> int:
    """Per-tree seed derived from the forest seed and the tree's position."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def _grow_member(X, y, seed, bootstrap, max_depth, min_samples_leaf, max_features, random_thresholds):
    rng = np.random.default_rng(seed)
    if bootstrap:
        rows = rng.integers(0, X.shape[0], size=X.shape[0])
        X, y = X[rows], y[rows]
    return grow_tree(
        X,
        y,
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        max_features=max_features,
        random_thresholds=random_thresholds,
        rng=rng,
    )


def resolve_forest_params(params: dict | None, mode: str) -> dict:
    if mode not in FOREST_MODES:
        raise ValueError(f"unknown forest mode {mode!r}; expected one of {FOREST_MODES}")
    resolved = {**DEFAULT_FOREST_PARAMS, **(params or {})}
    unknown = set(resolved) - set(DEFAULT_FOREST_PARAMS)
    if unknown:
        raise ValueError(f"unknown forest parameters: {sorted(unknown)}")
    if resolved["bootstrap"] is None:
        resolved["bootstrap"] = mode == "random_forest"
    if int(resolved["n_trees"]) < 1:
        raise ValueError("n_trees must be >= 1")
    resolved["n_trees"] = int(resolved["n_trees"])
    return resolved


def train_forest(
    ds: Dataset,
    params: dict | None = None,
    mode: str = "random_forest",
    n_jobs: int = 1,
    warm_start: ForestModel | None = None,
) -> ForestModel:
    """
    Train (or extend) a random forest / extra-trees ensemble.

    Args:
        ds: Training data; must have no missing cells.
        params: Overrides for DEFAULT_FOREST_PARAMS.
        mode: "random_forest" or "extra_trees".
        n_jobs: joblib worker count for growing trees.
        warm_start: A forest trained with the same params and fewer trees;
            its trees are kept and only the missing ones are grown.

    Returns:
        ForestModel with ``params["n_trees"]`` trees.
    """
    p = resolve_forest_params(params, mode)
    X = np.asarray(ds.features, dtype=np.float64)
    y = np.asarray(ds.labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("cannot train a forest on empty data")
    if np.isnan(X).any():
        raise ValueError("forest training data contains missing values; run preprocessing first")
    m = resolve_max_features(p["max_features"], X.shape[1])

    kept: tuple[TreeModel, ...] = ()
    if warm_start is not None:
        if (
            warm_start.mode != mode
            or warm_start.seed != p["seed"]
            or warm_start.bootstrap != p["bootstrap"]
            or warm_start.max_features != m
            or warm_start.n_features != X.shape[1]
        ):
            raise ValueError("warm_start forest was trained with different parameters")
        kept = warm_start.trees[: p["n_trees"]]

    seeds = [tree_seed(p["seed"], i) for i in range(p["n_trees"])]
    todo = seeds[len(kept):]
    if todo:
        logger.debug("Growing %d %s trees (%d kept)", len(todo), mode, len(kept))
    grown = Parallel(n_jobs=n_jobs)(
        delayed(_grow_member)(
            X, y, s, p["bootstrap"], p["max_depth"], p["min_samples_leaf"], m,
            mode == "extra_trees",
        )
        for s in todo
    )

    return ForestModel(
        trees=kept + tuple(grown),
        tree_seeds=tuple(seeds),
        mode=mode,
        max_features=m,
        bootstrap=bool(p["bootstrap"]),
        seed=int(p["seed"]),
        n_features=X.shape[1],
        max_depth=p["max_depth"],
        min_samples_leaf=int(p["min_samples_leaf"]),
    )
