"""Shapley attributions of the malware probability.

The coalition value is interventional: v(S) is the mean prediction over
background rows with the features in S taken from the explained instance.
``shapley_exact`` enumerates every coalition and is limited to 12 features;
``shapley_sampled`` averages marginal contributions along random feature
orderings and reports a standard error per feature.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from droidauto.data.dataset_io import Dataset
from droidauto.models import predict_proba

logger = logging.getLogger(__name__)

MAX_EXACT_FEATURES = 12
# Rows per prediction call when evaluating coalitions.
EVAL_CHUNK_ROWS = 65_536
# Orderings whose chains are materialised at once in the sampled estimator.
PERMUTATION_CHUNK = 64


@dataclass(frozen=True)
class Attribution:
    feature_names: tuple[str, ...]
    values: np.ndarray
    baseline: float
    prediction: float
    method: str                        # exact | sampled
    n_samples: int | None = None
    seed: int | None = None
    std_error: np.ndarray | None = None

    @property
    def efficiency_residual(self) -> float:
        return float(abs(self.values.sum() - (self.prediction - self.baseline)))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"feature": list(self.feature_names), "shapley": self.values})
        if self.std_error is not None:
            frame["std_error"] = self.std_error
        return frame


def _inputs(x, background, feature_names):
    if isinstance(background, Dataset):
        feature_names = feature_names or background.feature_names
        background = background.features
    background = np.asarray(background, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).ravel()
    if background.ndim != 2 or background.shape[1] != x.size or background.shape[0] == 0:
        raise ValueError(f"background must be a non-empty matrix with {x.size} columns")
    names = tuple(feature_names) if feature_names else tuple(f"x{j}" for j in range(x.size))
    return x, background, names


def _p1(model, rows: np.ndarray) -> np.ndarray:
    out = np.empty(rows.shape[0])
    for start in range(0, rows.shape[0], EVAL_CHUNK_ROWS):
        out[start:start + EVAL_CHUNK_ROWS] = predict_proba(model, rows[start:start + EVAL_CHUNK_ROWS])[:, 1]
    return out


def shapley_exact(model, x, background, feature_names=None) -> Attribution:
    """Exact Shapley values by enumerating all 2^d coalitions."""
    x, background, names = _inputs(x, background, feature_names)
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact Shapley enumeration is limited to {MAX_EXACT_FEATURES} features, got {d}")
    n_bg = background.shape[0]
    masks = np.arange(2 ** d)
    member = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)      # (2^d, d)

    rows = np.where(member[:, None, :], x, background[None, :, :]).reshape(-1, d)
    value = _p1(model, rows).reshape(2 ** d, n_bg).mean(axis=1)

    sizes = member.sum(axis=1)
    weight = np.array([
        math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) if s < d else 0.0
        for s in range(d + 1)
    ])
    phi = np.zeros(d)
    for j in range(d):
        without = ~member[:, j]
        S = masks[without]
        phi[j] = np.sum(weight[sizes[without]] * (value[S | (1 << j)] - value[S]))

    return Attribution(
        feature_names=names,
        values=phi,
        baseline=float(value[0]),
        prediction=float(value[-1]),
        method="exact",
    )


def _chain_contributions(model, x: np.ndarray, donors: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Marginal contribution of every feature along each (donor, ordering) chain."""
    n, d = orders.shape
    chains = np.empty((n, d + 1, d))
    chains[:, 0] = donors
    current = donors.copy()
    idx = np.arange(n)
    for step in range(d):
        feat = orders[:, step]
        current[idx, feat] = x[feat]
        chains[:, step + 1] = current
    preds = _p1(model, chains.reshape(-1, d)).reshape(n, d + 1)
    out = np.zeros((n, d))
    out[idx[:, None], orders] = np.diff(preds, axis=1)
    return out


def shapley_sampled(model, x, background, n_samples: int = 2000, seed: int = 42, feature_names=None) -> Attribution:
    """
    Permutation-sampling estimate.

    Each sample draws a feature ordering and one background row, then walks
    from the background row to ``x`` one feature at a time; the prediction
    change at each step is that feature's contribution.
    """
    x, background, names = _inputs(x, background, feature_names)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d = x.size
    rng = np.random.default_rng(seed)

    orders = np.stack([rng.permutation(d) for _ in range(n_samples)])
    donors = background[rng.integers(background.shape[0], size=n_samples)]
    contributions = np.zeros((n_samples, d))
    for start in range(0, n_samples, PERMUTATION_CHUNK):
        stop = min(start + PERMUTATION_CHUNK, n_samples)
        contributions[start:stop] = _chain_contributions(model, x, donors[start:stop], orders[start:stop])
    phi = contributions.mean(axis=0)
    if n_samples > 1:
        se = contributions.std(axis=0, ddof=1) / np.sqrt(n_samples)
    else:
        se = np.zeros(d)

    return Attribution(
        feature_names=names,
        values=phi,
        baseline=float(_p1(model, background).mean()),
        prediction=float(_p1(model, x[None, :])[0]),
        method="sampled",
        n_samples=n_samples,
        seed=seed,
        std_error=se,
    )
