"""Local linear surrogates: explain one prediction with a weighted linear fit
of the model's malware probability around the instance."""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg

from droidauto.data.dataset_io import Dataset, FeatureKind
from droidauto.models import predict_proba

logger = logging.getLogger(__name__)

RIDGE_DAMPING = 1e-6
KERNEL_SCALE = 0.75


@dataclass(frozen=True)
class LocalExplanation:
    feature_names: tuple[str, ...]
    instance: np.ndarray
    coefficients: np.ndarray
    intercept: float
    kernel_width: float
    n_perturbations: int
    fidelity: float | None          # weighted R^2; None when the target has no variance
    seed: int
    damped: bool = False

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "feature": list(self.feature_names),
            "value": self.instance,
            "coefficient": self.coefficients,
        })


def _as_matrix(background) -> tuple[np.ndarray, np.ndarray | None, tuple[str, ...] | None]:
    if isinstance(background, Dataset):
        binary = np.array([k == FeatureKind.BINARY for k in background.feature_kinds])
        return np.asarray(background.features, dtype=np.float64), binary, background.feature_names
    return np.asarray(background, dtype=np.float64), None, None


def perturb(x: np.ndarray, background: np.ndarray, binary: np.ndarray, n: int, rng) -> np.ndarray:
    """
    Neighbourhood sample around ``x``. Every feature is replaced with
    probability 1/2: binary features flip, others take the value of a random
    background row. Row 0 is ``x`` itself.
    """
    d = x.size
    replace = rng.random((n, d)) < 0.5
    replace[0] = False
    donors = background[rng.integers(background.shape[0], size=n)]
    flipped = np.broadcast_to(1.0 - x, (n, d))
    replacement = np.where(binary, flipped, donors)
    return np.where(replace, replacement, x)


def _weighted_fit(A: np.ndarray, target: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, bool]:
    sw = np.sqrt(w)[:, None]
    Aw, tw = A * sw, target * sw[:, 0]
    if np.linalg.matrix_rank(Aw) < A.shape[1]:
        logger.warning("Surrogate design is rank deficient; applying ridge damping %g", RIDGE_DAMPING)
        gram = Aw.T @ Aw + RIDGE_DAMPING * np.eye(A.shape[1])
        return linalg.solve(gram, Aw.T @ tw, assume_a="pos"), True
    beta, *_ = linalg.lstsq(Aw, tw)
    return beta, False


def local_surrogate(
    model,
    x,
    ds_background,
    n_perturbations: int = 5000,
    kernel_width: float | None = None,
    seed: int = 42,
) -> LocalExplanation:
    """
    Fit a weighted least-squares surrogate of P(malware) around ``x``.

    Distances are Euclidean after scaling each feature by its background
    standard deviation; sample weights are exp(-d^2 / w^2) with w defaulting
    to 0.75 * sqrt(n_features).
    """
    background, binary, names = _as_matrix(ds_background)
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.size
    if background.ndim != 2 or background.shape[1] != d:
        raise ValueError(f"background must have {d} columns")
    if n_perturbations < 2:
        raise ValueError("n_perturbations must be >= 2")
    if binary is None:
        binary = np.all(np.isin(background, (0.0, 1.0)), axis=0) & np.isin(x, (0.0, 1.0))
    else:
        binary = binary & np.isin(x, (0.0, 1.0))
    names = names or tuple(f"x{j}" for j in range(d))
    width = kernel_width if kernel_width is not None else KERNEL_SCALE * np.sqrt(d)
    if width <= 0:
        raise ValueError("kernel_width must be positive")

    rng = np.random.default_rng(seed)
    Z = perturb(x, background, binary, n_perturbations, rng)
    scale = background.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    dist2 = (((Z - x) / scale) ** 2).sum(axis=1)
    w = np.exp(-dist2 / width ** 2)
    target = predict_proba(model, Z)[:, 1]

    A = np.column_stack([np.ones(n_perturbations), Z])
    beta, damped = _weighted_fit(A, target, w)
    fitted = A @ beta
    mean = np.average(target, weights=w)
    ss_tot = float(np.sum(w * (target - mean) ** 2))
    ss_res = float(np.sum(w * (target - fitted) ** 2))
    fidelity = 1.0 - ss_res / ss_tot if ss_tot > 1e-24 else None

    return LocalExplanation(
        feature_names=tuple(names),
        instance=x,
        coefficients=beta[1:],
        intercept=float(beta[0]),
        kernel_width=float(width),
        n_perturbations=n_perturbations,
        fidelity=fidelity,
        seed=seed,
        damped=damped,
    )
