from droidauto.features.anova import anova_f_scores, anova_p_values, select_k_best
from droidauto.features.lasso import LassoModel, fit_lasso, kkt_residual, lambda_max, lasso_select
from droidauto.features.mask import FeatureMask
from droidauto.features.pca import PcaModel, fit_pca, inverse_transform_pca, transform_pca
from droidauto.features.stage import FEATURE_METHODS, FeatureOptions, FeatureStage, fit_feature_stage

__all__ = [
    "FEATURE_METHODS",
    "FeatureMask",
    "FeatureOptions",
    "FeatureStage",
    "LassoModel",
    "PcaModel",
    "anova_f_scores",
    "anova_p_values",
    "fit_feature_stage",
    "fit_lasso",
    "fit_pca",
    "inverse_transform_pca",
    "kkt_residual",
    "lambda_max",
    "lasso_select",
    "select_k_best",
    "transform_pca",
]
