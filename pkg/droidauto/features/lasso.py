"""LASSO by cyclic coordinate descent on standardized features.

Objective (standardized coordinates, centered target):

    1/(2n) * ||y - Z b||^2 + lam * ||b||_1

Each coordinate update is the closed-form soft-threshold, so the objective is
non-increasing from sweep to sweep.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from droidauto.features.mask import FeatureMask

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LassoModel:
    coef: np.ndarray                # standardized coordinates
    intercept: float
    lambda_: float
    x_mean: np.ndarray
    x_scale: np.ndarray             # 0 for constant columns
    n_iter: int
    converged: bool
    objective_trace: tuple[float, ...] = field(default=())

    @property
    def coef_original(self) -> np.ndarray:
        """Coefficients on the unstandardized features."""
        out = np.zeros_like(self.coef)
        nz = self.x_scale > 0
        out[nz] = self.coef[nz] / self.x_scale[nz]
        return out

    @property
    def intercept_original(self) -> float:
        return float(self.intercept - self.x_mean @ self.coef_original)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef_original + self.intercept_original


def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = scale == 0
    safe = np.where(constant, 1.0, scale)
    Z = (X - mean) / safe
    Z[:, constant] = 0.0
    scale = np.where(constant, 0.0, scale)
    return np.asfortranarray(Z), mean, scale


def _check_inputs(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("LASSO inputs must be finite")
    return X, y


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest lambda for which the solution is exactly zero."""
    X, y = _check_inputs(X, y)
    Z, _, scale = _standardize(X)
    n = X.shape[0]
    centered = y - y.mean()
    # Same arithmetic as the first coordinate-descent sweep.
    values = [abs(Z[:, j] @ centered / n) for j in np.flatnonzero(scale > 0)]
    return float(max(values, default=0.0))


def _objective(residual: np.ndarray, coef: np.ndarray, lam: float) -> float:
    n = residual.size
    return float(residual @ residual / (2 * n) + lam * np.abs(coef).sum())


def fit_lasso(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> LassoModel:
    """
    Fit LASSO with cyclic coordinate descent.

    Stops when the largest coefficient change in a sweep falls below ``tol``;
    hitting ``max_iter`` returns the current iterate with converged=False.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    X, y = _check_inputs(X, y)
    n, d = X.shape
    Z, mean, scale = _standardize(X)
    y_mean = float(y.mean())
    residual = y - y_mean
    coef = np.zeros(d)
    active = np.flatnonzero(scale > 0)
    # z.z / n is 1 up to rounding for standardized columns.
    col_sq = (Z ** 2).sum(axis=0) / n

    trace = [_objective(residual, coef, lam)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        max_change = 0.0
        for j in active:
            z = Z[:, j]
            old = coef[j]
            rho = z @ residual / n + old * col_sq[j]
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                residual -= z * (new - old)
                coef[j] = new
                max_change = max(max_change, abs(new - old))
        trace.append(_objective(residual, coef, lam))
        if max_change < tol:
            converged = True
            break

    if not converged:
        logger.warning("LASSO did not converge in %d sweeps (lambda=%g)", max_iter, lam)
    return LassoModel(
        coef=coef,
        intercept=y_mean,
        lambda_=float(lam),
        x_mean=mean,
        x_scale=scale,
        n_iter=n_iter,
        converged=converged,
        objective_trace=tuple(trace),
    )


def kkt_residual(model: LassoModel, X: np.ndarray, y: np.ndarray) -> float:
    """Largest violation of the LASSO optimality conditions (0 at an exact optimum)."""
    X, y = _check_inputs(X, y)
    Z, _, _ = _standardize(X)
    residual = y - model.intercept - Z @ model.coef
    grad = -(Z.T @ residual) / X.shape[0]
    lam = model.lambda_
    nonzero = model.coef != 0
    violation = np.where(
        nonzero,
        np.abs(grad + lam * np.sign(model.coef)),
        np.maximum(np.abs(grad) - lam, 0.0),
    )
    return float(violation.max()) if violation.size else 0.0


def lasso_select(model: LassoModel, abs_threshold: float = 0.0) -> FeatureMask:
    """Keep |coef| > abs_threshold; fall back to the single largest coefficient."""
    magnitude = np.abs(model.coef)
    keep = magnitude > abs_threshold
    if not keep.any():
        keep = np.zeros_like(keep)
        keep[int(np.argmax(magnitude))] = True
    return FeatureMask(keep=keep, provenance="lasso", scores=model.coef.copy())
