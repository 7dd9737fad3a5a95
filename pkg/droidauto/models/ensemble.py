"""Soft / hard voting over trained members."""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from droidauto.data.dataset_io import Dataset
from droidauto.models.zoo import MemberConfig, ModelArtifact, predict_proba, train_model

logger = logging.getLogger(__name__)

VOTING_MODES = ("soft", "hard")


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[ModelArtifact, ...]
    weights: np.ndarray
    voting: str = "soft"

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")
        if self.voting not in VOTING_MODES:
            raise ValueError(f"voting must be one of {VOTING_MODES}, got {self.voting!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.members),) or np.any(w <= 0):
            raise ValueError("ensemble weights must be positive, one per member")
        object.__setattr__(self, "weights", w)

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @property
    def n_features(self) -> int:
        return self.members[0].n_features

    def member_probas(self, X: np.ndarray) -> list[np.ndarray]:
        return [predict_proba(m, X) for m in self.members]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        probas = self.member_probas(X)
        if self.voting == "soft":
            out = sum(w * p for w, p in zip(self.normalized_weights, probas))
            p1 = out[:, 1]
        else:
            votes = [(p[:, 1] >= p[:, 0]).astype(np.float64) for p in probas]
            p1 = sum(w * v for w, v in zip(self.normalized_weights, votes))
        p1 = np.clip(p1, 0.0, 1.0)
        return np.column_stack([1.0 - p1, p1])

    def feature_importances(self) -> np.ndarray | None:
        """Weighted mean of the members' intrinsic importances, where available."""
        parts = [(w, m.feature_importances()) for w, m in zip(self.normalized_weights, self.members)]
        parts = [(w, imp) for w, imp in parts if imp is not None]
        if not parts:
            return None
        total = sum(w for w, _ in parts)
        return sum(w * imp for w, imp in parts) / total


def _train_member(ds: Dataset, cfg: MemberConfig, n_jobs: int) -> ModelArtifact | None:
    try:
        return train_model(cfg.family, ds, cfg.params, name=cfg.name, n_jobs=n_jobs)
    except Exception as exc:
        logger.warning("Dropping ensemble member %s: %s", cfg.name, exc)
        return None


def train_voting_ensemble(
    ds: Dataset,
    member_configs: Sequence[MemberConfig],
    voting: str = "soft",
    weights: Sequence[float] | None = None,
    n_jobs: int = 1,
) -> EnsembleModel:
    """
    Train every member on ``ds`` and combine them.

    Members that fail to train are dropped with a warning (their weight goes
    with them); fewer than two survivors is an error.
    """
    if len(member_configs) < 2:
        raise ValueError("an ensemble needs at least two member configs")
    if voting not in VOTING_MODES:
        raise ValueError(f"voting must be one of {VOTING_MODES}, got {voting!r}")
    weights = list(weights) if weights is not None else [1.0] * len(member_configs)
    if len(weights) != len(member_configs):
        raise ValueError("one weight per member config is required")

    trained = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_train_member)(ds, cfg, 1) for cfg in member_configs
    )
    survivors = [(m, w) for m, w in zip(trained, weights) if m is not None]
    if len(survivors) < 2:
        raise ValueError(f"only {len(survivors)} ensemble member(s) trained successfully")
    return EnsembleModel(
        members=tuple(m for m, _ in survivors),
        weights=np.asarray([w for _, w in survivors]),
        voting=voting,
    )
