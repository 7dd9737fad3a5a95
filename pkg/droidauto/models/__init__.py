from droidauto.models.ensemble import EnsembleModel, train_voting_ensemble
from droidauto.models.forest import ForestModel, train_forest
from droidauto.models.gbt import GbtModel, train_gbt
from droidauto.models.knn import KnnModel, train_knn
from droidauto.models.serialize import load_model, save_model
from droidauto.models.tree import TreeModel
from droidauto.models.zoo import (
    BUDGET_PARAMS,
    DEFAULT_PARAMS,
    DEFAULT_ROSTER,
    FAMILIES,
    ROSTER_PRESETS,
    MemberConfig,
    ModelArtifact,
    extend_model,
    member_config,
    predict,
    predict_proba,
    train_decision_tree,
    train_model,
)

__all__ = [
    "BUDGET_PARAMS",
    "DEFAULT_PARAMS",
    "DEFAULT_ROSTER",
    "FAMILIES",
    "ROSTER_PRESETS",
    "EnsembleModel",
    "ForestModel",
    "GbtModel",
    "KnnModel",
    "MemberConfig",
    "ModelArtifact",
    "TreeModel",
    "extend_model",
    "load_model",
    "member_config",
    "predict",
    "predict_proba",
    "save_model",
    "train_decision_tree",
    "train_forest",
    "train_gbt",
    "train_knn",
    "train_model",
    "train_voting_ensemble",
]
