"""Principal component analysis by covariance eigendecomposition."""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

# Above this width, tall inputs still use the covariance form; wide inputs
# (d > n) switch to the Gram-matrix dual.
GRAM_THRESHOLD = 2000


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray          # (n_components, n_features), orthonormal rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every component positive."""
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), pivots])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def fit_pca(X: np.ndarray, n_components: int) -> PcaModel:
    """Leading eigenvectors of the sample covariance (ddof=1)."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if not 1 <= n_components <= min(n - 1, d):
        raise ValueError(
            f"n_components must lie in [1, {min(n - 1, d)}] for a {n}x{d} matrix, got {n_components}"
        )
    if not np.isfinite(X).all():
        raise ValueError("PCA input contains non-finite values")

    if not np.ptp(X, axis=0).any():
        raise ValueError("PCA input has zero variance")
    mean = X.mean(axis=0)
    centered = X - mean

    if d > GRAM_THRESHOLD and d > n:
        gram = centered @ centered.T / (n - 1)
        eigvals, eigvecs = linalg.eigh(gram)
        eigvals, eigvecs = eigvals[::-1], eigvecs[:, ::-1]
        eigvals = np.clip(eigvals, 0.0, None)
        top = eigvals[:n_components]
        if np.any(top <= 0):
            raise ValueError("requested more components than the data rank")
        components = (centered.T @ eigvecs[:, :n_components]).T / np.sqrt((n - 1) * top)[:, None]
    else:
        cov = centered.T @ centered / (n - 1)
        eigvals, eigvecs = linalg.eigh(cov)
        eigvals, eigvecs = eigvals[::-1], eigvecs[:, ::-1]
        eigvals = np.clip(eigvals, 0.0, None)
        components = eigvecs[:, :n_components].T

    total = eigvals.sum()
    if total <= 0:
        raise ValueError("PCA input has zero variance")
    return PcaModel(
        mean=mean,
        components=_fix_signs(np.ascontiguousarray(components)),
        explained_variance=eigvals[:n_components].copy(),
        explained_variance_ratio=eigvals[:n_components] / total,
    )


def transform_pca(model: PcaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} columns, got shape {X.shape}")
    return (X - model.mean) @ model.components.T


def inverse_transform_pca(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    return np.asarray(scores) @ model.components + model.mean
