"""Histogram gradient boosting for binary log-loss.

Features are quantized into at most 255 bins per column. Each round fits a
regression tree to the gradient/hessian of the log-loss using per-node
histograms (the larger child's histogram is the parent minus the smaller
child's). Leaf outputs are Newton steps ``-G / (H + l2)``.

Two growth policies are provided:
  * leaf_wise: always split the leaf with the largest gain (up to max_leaves)
  * depth_wise: split level by level (up to max_depth, capped by max_leaves)
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from droidauto.data.dataset_io import Dataset, FeatureKind
from droidauto.models.tree import LEAF, descend

logger = logging.getLogger(__name__)

MAX_BINS = 255
# Initial log-odds used when the training labels are all one class.
INIT_CAP = 10.0
# Step-halving gives up after this many halvings and emits a zero tree.
MAX_HALVINGS = 10
GROWTH_POLICIES = ("leaf_wise", "depth_wise")

DEFAULT_GBT_PARAMS = {
    "n_rounds": 100,
    "learning_rate": 0.1,
    "growth": "leaf_wise",
    "max_leaves": 31,
    "max_depth": None,
    "min_samples_leaf": 20,
    "l2": 1.0,
    "max_bins": MAX_BINS,
    "target_smoothing": False,
    "smoothing": 10.0,
    "seed": 0,
}

# Leaf-wise booster with 31 leaves.
PRESET_LEAFWISE = {"growth": "leaf_wise", "max_leaves": 31, "max_depth": None}
# Depth-wise booster, depth 6, with smoothed target encoding of categorical columns.
PRESET_DEPTHWISE = {
    "growth": "depth_wise",
    "max_depth": 6,
    "max_leaves": 64,
    "target_smoothing": True,
}


@dataclass(frozen=True)
class BoostedTree:
    feature: np.ndarray
    bin_threshold: np.ndarray       # go left when bin <= bin_threshold
    threshold: np.ndarray           # the same cut on raw values: x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray               # leaf outputs (already step-scaled)
    gain: np.ndarray
    n_node_samples: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        return descend(self.feature, self.threshold, self.left, self.right, X)

    def apply_binned(self, bins: np.ndarray) -> np.ndarray:
        return descend(self.feature, self.bin_threshold, self.left, self.right, bins)


@dataclass(frozen=True)
class GbtModel:
    trees: tuple[BoostedTree, ...]
    learning_rate: float
    bin_edges: tuple[np.ndarray, ...]
    init_score: float
    n_features: int
    growth: str = "leaf_wise"
    max_leaves: int = 31
    max_depth: int | None = None
    min_samples_leaf: int = 20
    l2: float = 1.0
    loss_trace: tuple[float, ...] = ()
    # column index -> encoded value per category code; unseen codes map to prior
    target_encodings: dict = field(default_factory=dict)
    target_prior: float = 0.5

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def encode(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if not self.target_encodings:
            return X
        X = X.copy()
        for j, table in self.target_encodings.items():
            codes = X[:, j]
            known = np.isfinite(codes) & (codes >= 0) & (codes < table.size) & (codes == np.floor(codes))
            out = np.full(codes.shape, self.target_prior)
            out[known] = table[codes[known].astype(np.int64)]
            X[:, j] = out
        return X

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        Xe = self.encode(X)
        raw = np.full(Xe.shape[0], self.init_score)
        for tree in self.trees:
            raw = raw + self.learning_rate * tree.value[tree.apply(Xe)]
        return raw

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        p1 = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def feature_importances(self) -> np.ndarray:
        """Total split gain per feature, normalized to sum 1."""
        imp = np.zeros(self.n_features)
        for tree in self.trees:
            internal = tree.feature != LEAF
            np.add.at(imp, tree.feature[internal], tree.gain[internal])
        total = imp.sum()
        return imp / total if total > 0 else imp


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_loss_from_raw(y: np.ndarray, raw: np.ndarray) -> float:
    """Mean binary log-loss of raw scores, computed without overflow."""
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def bin_edges(column: np.ndarray, max_bins: int = MAX_BINS) -> np.ndarray:
    """Strictly increasing cut points; at most ``max_bins - 1`` of them."""
    values = np.unique(column)
    if values.size <= max_bins:
        edges = values[:-1] + (values[1:] - values[:-1]) / 2.0
    else:
        qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
        edges = np.quantile(column, qs)
    return np.unique(edges)


def bin_matrix(X: np.ndarray, edges: tuple[np.ndarray, ...]) -> np.ndarray:
    bins = np.empty(X.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        bins[:, j] = np.searchsorted(e, X[:, j], side="left")
    return bins


def _target_encodings(X, y, kinds, smoothing) -> tuple[dict, float]:
    prior = float(y.mean())
    tables = {}
    for j, kind in enumerate(kinds):
        if kind != FeatureKind.CATEGORICAL:
            continue
        codes = X[:, j].astype(np.int64)
        size = int(codes.max()) + 1 if codes.size else 0
        counts = np.bincount(codes, minlength=size).astype(np.float64)
        sums = np.bincount(codes, weights=y, minlength=size)
        tables[j] = (sums + smoothing * prior) / (counts + smoothing)
    return tables, prior


def resolve_gbt_params(params: dict | None) -> dict:
    p = {**DEFAULT_GBT_PARAMS, **(params or {})}
    unknown = set(p) - set(DEFAULT_GBT_PARAMS)
    if unknown:
        raise ValueError(f"unknown gbt parameters: {sorted(unknown)}")
    if not 0.0 < float(p["learning_rate"]) <= 1.0:
        raise ValueError(f"learning_rate must lie in (0, 1], got {p['learning_rate']}")
    if int(p["n_rounds"]) < 1:
        raise ValueError("n_rounds must be >= 1")
    if p["growth"] not in GROWTH_POLICIES:
        raise ValueError(f"growth must be one of {GROWTH_POLICIES}, got {p['growth']!r}")
    if int(p["max_leaves"]) < 2:
        raise ValueError("max_leaves must be >= 2")
    if not 2 <= int(p["max_bins"]) <= MAX_BINS:
        raise ValueError(f"max_bins must lie in [2, {MAX_BINS}]")
    if p["growth"] == "depth_wise" and p["max_depth"] is None:
        raise ValueError("depth_wise growth needs max_depth")
    p["n_rounds"] = int(p["n_rounds"])
    p["max_leaves"] = int(p["max_leaves"])
    p["learning_rate"] = float(p["learning_rate"])
    return p


# ---------------------------------------------------------------------------
# Tree growth on histograms
# ---------------------------------------------------------------------------

class _HistogramBuilder:
    def __init__(self, bins: np.ndarray, g: np.ndarray, h: np.ndarray, n_bins: int):
        self.bins = bins
        self.g = g
        self.h = h
        self.n_bins = n_bins
        self.offsets = np.arange(bins.shape[1], dtype=np.int64) * n_bins

    def build(self, rows: np.ndarray) -> np.ndarray:
        """(3, d, n_bins) array of gradient, hessian and count sums."""
        d = self.bins.shape[1]
        flat = (self.bins[rows].astype(np.int64) + self.offsets).ravel()
        size = d * self.n_bins
        G = np.bincount(flat, weights=np.repeat(self.g[rows], d), minlength=size)
        H = np.bincount(flat, weights=np.repeat(self.h[rows], d), minlength=size)
        C = np.bincount(flat, minlength=size).astype(np.float64)
        return np.stack([G, H, C]).reshape(3, d, self.n_bins)


def _best_bin_split(hist: np.ndarray, l2: float, min_leaf: int):
    """Return (gain, feature, bin) of the best split or None."""
    G, H, C = hist
    g_tot, h_tot, c_tot = G[0].sum(), H[0].sum(), C[0].sum()
    GL = np.cumsum(G, axis=1)[:, :-1]
    HL = np.cumsum(H, axis=1)[:, :-1]
    CL = np.cumsum(C, axis=1)[:, :-1]
    GR, HR, CR = g_tot - GL, h_tot - HL, c_tot - CL
    valid = (CL >= min_leaf) & (CR >= min_leaf)
    if not valid.any():
        return None
    parent = g_tot ** 2 / (h_tot + l2)
    gain = 0.5 * (GL ** 2 / (HL + l2) + GR ** 2 / (HR + l2) - parent)
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    best = float(gain.flat[flat])
    if not best > 0.0:
        return None
    feature, b = divmod(flat, gain.shape[1])
    return best, feature, b


def _grow_boosted_tree(builder, edges, rows_all, p) -> tuple[BoostedTree, np.ndarray]:
    """Grow one regression tree; returns the tree and every row's leaf."""
    l2, min_leaf = p["l2"], int(p["min_samples_leaf"])
    max_leaves, max_depth = p["max_leaves"], p["max_depth"]
    leaf_wise = p["growth"] == "leaf_wise"

    feature, bin_thr, thr, left, right, gain, counts = [], [], [], [], [], [], []
    node_rows, node_hist, node_depth = [], [], []

    def new_node(rows, hist, depth):
        feature.append(LEAF)
        bin_thr.append(0)
        thr.append(np.nan)
        left.append(LEAF)
        right.append(LEAF)
        gain.append(0.0)
        counts.append(rows.size)
        node_rows.append(rows)
        node_hist.append(hist)
        node_depth.append(depth)
        return len(feature) - 1

    def candidate(node):
        if max_depth is not None and node_depth[node] >= max_depth:
            return None
        split = _best_bin_split(node_hist[node], l2, min_leaf)
        return None if split is None else (node, split)

    root = new_node(rows_all, builder.build(rows_all), 0)
    frontier = [c for c in [candidate(root)] if c]
    n_leaves = 1
    while frontier and n_leaves < max_leaves:
        if leaf_wise:
            # largest gain first, lower node id on ties
            pick = max(range(len(frontier)), key=lambda i: (frontier[i][1][0], -frontier[i][0]))
        else:
            pick = 0
        node, (g, f, b) = frontier.pop(pick)
        rows = node_rows[node]
        goes_left = builder.bins[rows, f] <= b
        l_rows, r_rows = rows[goes_left], rows[~goes_left]
        small, large = (l_rows, r_rows) if l_rows.size <= r_rows.size else (r_rows, l_rows)
        small_hist = builder.build(small)
        large_hist = node_hist[node] - small_hist
        l_hist, r_hist = (small_hist, large_hist) if small is l_rows else (large_hist, small_hist)

        feature[node], bin_thr[node], gain[node] = f, b, g
        thr[node] = float(edges[f][b])
        left[node] = new_node(l_rows, l_hist, node_depth[node] + 1)
        right[node] = new_node(r_rows, r_hist, node_depth[node] + 1)
        node_hist[node] = None
        n_leaves += 1
        for child in (left[node], right[node]):
            c = candidate(child)
            if c:
                frontier.append(c)

    n_nodes = len(feature)
    value = np.zeros(n_nodes)
    leaf_of_row = np.empty(builder.bins.shape[0], dtype=np.int64)
    for node in range(n_nodes):
        if feature[node] == LEAF:
            rows = node_rows[node]
            G, H = builder.g[rows].sum(), builder.h[rows].sum()
            value[node] = -G / (H + l2)
            leaf_of_row[rows] = node

    tree = BoostedTree(
        feature=np.asarray(feature, dtype=np.int64),
        bin_threshold=np.asarray(bin_thr, dtype=np.float64),
        threshold=np.asarray(thr, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=value,
        gain=np.asarray(gain, dtype=np.float64),
        n_node_samples=np.asarray(counts, dtype=np.int64),
    )
    return tree, leaf_of_row


def _scaled(tree: BoostedTree, factor: float) -> BoostedTree:
    return BoostedTree(
        feature=tree.feature,
        bin_threshold=tree.bin_threshold,
        threshold=tree.threshold,
        left=tree.left,
        right=tree.right,
        value=tree.value * factor,
        gain=tree.gain,
        n_node_samples=tree.n_node_samples,
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_gbt(ds: Dataset, params: dict | None = None, init_model: GbtModel | None = None) -> GbtModel:
    """
    Boost ``params["n_rounds"]`` trees on the log-loss.

    A round whose Newton step would raise the training loss is halved until
    it does not, so ``loss_trace`` never increases. Passing ``init_model``
    (trained on the same data with the same params) continues boosting from
    its last round.
    """
    p = resolve_gbt_params(params)
    X = np.asarray(ds.features, dtype=np.float64)
    y = np.asarray(ds.labels, dtype=np.float64)
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot train a booster on empty data")
    if np.isnan(X).any():
        raise ValueError("boosting data contains missing values; run preprocessing first")
    lr = p["learning_rate"]

    if init_model is not None:
        if init_model.n_features != d or init_model.learning_rate != lr:
            raise ValueError("init_model was trained with different parameters")
        encodings, prior = init_model.target_encodings, init_model.target_prior
        edges = init_model.bin_edges
        init = init_model.init_score
        trees = list(init_model.trees[: p["n_rounds"]])
        trace = list(init_model.loss_trace[: len(trees) + 1])
    else:
        if p["target_smoothing"]:
            encodings, prior = _target_encodings(X, y, ds.feature_kinds, float(p["smoothing"]))
        else:
            encodings, prior = {}, float(y.mean())
        mean = float(y.mean())
        if mean <= 0.0 or mean >= 1.0:
            init = INIT_CAP if mean >= 1.0 else -INIT_CAP
        else:
            init = float(np.log(mean / (1.0 - mean)))
        edges = None
        trees = []
        trace = []

    model = GbtModel(
        trees=tuple(trees), learning_rate=lr, bin_edges=(), init_score=init, n_features=d,
        target_encodings=encodings, target_prior=prior,
    )
    Xe = model.encode(X)
    if edges is None:
        edges = tuple(bin_edges(Xe[:, j], int(p["max_bins"])) for j in range(d))
    raw = model.decision_function(X)
    if not trace:
        trace = [log_loss_from_raw(y, raw)]

    single_class = y.min() == y.max()
    if single_class:
        logger.info("Single-class training data; boosting a constant model")
    else:
        bins = bin_matrix(Xe, edges)
        rows_all = np.arange(n)
        for _ in range(len(trees), p["n_rounds"]):
            prob = _sigmoid(raw)
            builder = _HistogramBuilder(bins, prob - y, prob * (1.0 - prob), int(p["max_bins"]))
            tree, leaf_of_row = _grow_boosted_tree(builder, edges, rows_all, p)
            factor = 1.0
            for _ in range(MAX_HALVINGS + 1):
                candidate_raw = raw + lr * (tree.value * factor)[leaf_of_row]
                if log_loss_from_raw(y, candidate_raw) <= trace[-1]:
                    break
                factor /= 2.0
            else:
                factor = 0.0
            tree = _scaled(tree, factor)
            raw = raw + lr * tree.value[leaf_of_row]
            trees.append(tree)
            trace.append(log_loss_from_raw(y, raw))

    return GbtModel(
        trees=tuple(trees),
        learning_rate=lr,
        bin_edges=tuple(edges),
        init_score=init,
        n_features=d,
        growth=p["growth"],
        max_leaves=p["max_leaves"],
        max_depth=p["max_depth"],
        min_samples_leaf=int(p["min_samples_leaf"]),
        l2=float(p["l2"]),
        loss_trace=tuple(trace),
        target_encodings=encodings,
        target_prior=prior,
    )
