"""CART classification trees (Gini) stored as flat node arrays.

Split search is exhaustive over (feature, midpoint threshold) pairs. Ties go
to the lower feature index, then the lower threshold, so the grown tree does
not depend on training-row order.
"""
import math
from dataclasses import dataclass

import numpy as np

# Weighted impurities closer than this are treated as equal.
TIE_TOL = 1e-12
LEAF = -1


def descend(feature, threshold, left, right, X: np.ndarray) -> np.ndarray:
    """Route every row of X to a leaf of a flat-array binary tree."""
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    if feature.size == 0 or feature[0] == LEAF:
        return node
    active = np.arange(X.shape[0])
    while active.size:
        current = node[active]
        go_left = X[active, feature[current]] <= threshold[current]
        node[active] = np.where(go_left, left[current], right[current])
        active = active[feature[node[active]] != LEAF]
    return node


@dataclass(frozen=True)
class TreeModel:
    feature: np.ndarray             # split feature per node, LEAF at leaves
    threshold: np.ndarray           # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray               # (n_nodes, 2) class probabilities
    n_node_samples: np.ndarray
    impurity: np.ndarray
    n_features: int
    max_depth: int | None = None
    min_samples_leaf: int = 1
    n_train: int = 0
    criterion: str = "gini"

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def read_set(self) -> set[int]:
        """Features the tree actually consults."""
        return {int(f) for f in self.feature if f != LEAF}

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        return descend(self.feature, self.threshold, self.left, self.right, X)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_importances(self) -> np.ndarray:
        """Total weighted Gini decrease per feature, normalized to sum 1."""
        imp = np.zeros(self.n_features)
        for node in np.flatnonzero(self.feature != LEAF):
            l, r = self.left[node], self.right[node]
            imp[self.feature[node]] += (
                self.n_node_samples[node] * self.impurity[node]
                - self.n_node_samples[l] * self.impurity[l]
                - self.n_node_samples[r] * self.impurity[r]
            )
        total = imp.sum()
        return imp / total if total > 0 else imp


def resolve_max_features(spec, n_features: int) -> int:
    """Number of candidate features per split for None/'all'/'sqrt'/'log2'/int/float."""
    if spec is None or spec == "all":
        return n_features
    if spec == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if spec == "log2":
        return max(1, int(math.log2(n_features))) if n_features > 1 else 1
    if isinstance(spec, float) and 0 < spec <= 1:
        return max(1, int(spec * n_features))
    if isinstance(spec, (int, np.integer)) and spec >= 1:
        return min(int(spec), n_features)
    raise ValueError(f"invalid max_features {spec!r}")


def gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = pos / n
    return 2.0 * p * (1.0 - p)


def weighted_child_gini(pos_left, n_left, pos_right, n_right):
    n = n_left + n_right
    return (n_left * gini(pos_left, n_left) + n_right * gini(pos_right, n_right)) / n


def _best_split(Xn, yn, features, min_samples_leaf, rng, random_thresholds):
    """Return (feature, threshold) or None when no admissible split exists."""
    n = yn.size
    block = Xn[:, features]
    order = np.argsort(block, axis=0, kind="stable")
    xs = np.take_along_axis(block, order, axis=0)
    ys = yn[order]
    pos_left = np.cumsum(ys, axis=0)[:-1].astype(np.float64)
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    valid = (
        (xs[:-1] < xs[1:])
        & (n_left >= min_samples_leaf)
        & (n - n_left >= min_samples_leaf)
    )
    if not valid.any():
        return None

    if random_thresholds:
        picked = np.zeros_like(valid)
        for col in range(valid.shape[1]):
            rows = np.flatnonzero(valid[:, col])
            if rows.size:
                picked[rows[rng.integers(rows.size)], col] = True
        valid = picked

    total_pos = float(yn.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        score = weighted_child_gini(pos_left, n_left, total_pos - pos_left, n - n_left)
    score = np.where(valid, score, np.inf)

    col_best = score.min(axis=0)
    best = col_best.min()
    col = int(np.argmax(col_best <= best + TIE_TOL))
    row = int(np.argmax(score[:, col] <= best + TIE_TOL))
    lo, hi = xs[row, col], xs[row + 1, col]
    threshold = lo + (hi - lo) / 2.0
    if threshold >= hi:
        threshold = lo
    return int(features[col]), float(threshold)


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int | None = None,
    min_samples_leaf: int = 1,
    max_features=None,
    random_thresholds: bool = False,
    rng: np.random.Generator | None = None,
) -> TreeModel:
    """Greedy CART on a numeric matrix and 0/1 labels."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).ravel()
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot grow a tree on empty data")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    if max_depth is not None and max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    n_candidates = resolve_max_features(max_features, d) if d else 0
    if rng is None:
        rng = np.random.default_rng(0)

    feature, threshold, left, right = [], [], [], []
    value, counts, impurity = [], [], []

    def new_node(rows):
        pos = float(y[rows].sum())
        size = rows.size
        feature.append(LEAF)
        threshold.append(np.nan)
        left.append(LEAF)
        right.append(LEAF)
        value.append((1.0 - pos / size, pos / size))
        counts.append(size)
        impurity.append(float(gini(np.float64(pos), np.float64(size))))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        pos = y[rows].sum()
        if (
            pos == 0 or pos == rows.size
            or (max_depth is not None and depth >= max_depth)
            or rows.size < 2 * min_samples_leaf
            or d == 0
        ):
            continue
        if n_candidates < d:
            features = np.sort(rng.choice(d, size=n_candidates, replace=False))
        else:
            features = np.arange(d)
        split = _best_split(X[rows], y[rows], features, min_samples_leaf, rng, random_thresholds)
        if split is None:
            continue
        f, t = split
        goes_left = X[rows, f] <= t
        left_rows, right_rows = rows[goes_left], rows[~goes_left]
        feature[node], threshold[node] = f, t
        left[node] = new_node(left_rows)
        right[node] = new_node(right_rows)
        stack.append((right[node], right_rows, depth + 1))
        stack.append((left[node], left_rows, depth + 1))

    return TreeModel(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_node_samples=np.asarray(counts, dtype=np.int64),
        impurity=np.asarray(impurity, dtype=np.float64),
        n_features=d,
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        n_train=n,
    )
