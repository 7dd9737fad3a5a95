"""The fitted feature step of a run: one of LASSO selection, ANOVA k-best,
PCA extraction, or a pass-through. Fitted on training rows only and replayed
unchanged on validation and test rows."""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from droidauto.data.dataset_io import Dataset, FeatureKind, split_holdout
from droidauto.features.anova import anova_f_scores, anova_p_values, select_k_best
from droidauto.features.lasso import LassoModel, fit_lasso, lambda_max, lasso_select
from droidauto.features.mask import FeatureMask
from droidauto.features.pca import PcaModel, fit_pca, transform_pca
from droidauto.metrics import classification_metrics, confusion
from droidauto.models import predict, train_decision_tree

logger = logging.getLogger(__name__)

FEATURE_METHODS = ("lasso", "anova", "pca", "none")
# Grid for lambda="auto", as fractions of lambda_max (log-spaced).
AUTO_LAMBDA_FRACTIONS = np.logspace(-3, np.log10(0.5), 5)
# Depth of the probe tree used to score a lambda candidate.
PROBE_TREE_DEPTH = 8


@dataclass(frozen=True)
class FeatureOptions:
    method: str = "lasso"
    k: int = 20
    n_components: int = 10
    lambda_: float | str = "auto"
    tol: float = 1e-6
    max_iter: int = 10_000
    abs_threshold: float = 0.0
    seed: int = 42


@dataclass(frozen=True)
class FeatureStage:
    method: str
    input_names: tuple[str, ...]
    mask: FeatureMask | None = None
    pca: PcaModel | None = None
    lasso: LassoModel | None = None
    p_values: np.ndarray | None = None
    # (lambda, validation recall, validation mcc) per auto-lambda candidate
    lambda_grid: tuple[tuple[float, float, float], ...] = field(default=())

    @property
    def output_names(self) -> tuple[str, ...]:
        if self.pca is not None:
            return tuple(f"pc{i + 1}" for i in range(self.pca.n_components))
        if self.mask is not None:
            return tuple(self.mask.kept_names(self.input_names))
        return self.input_names

    def apply(self, ds: Dataset) -> Dataset:
        if ds.feature_names != self.input_names:
            raise ValueError("dataset columns do not match the fitted feature stage")
        if self.pca is not None:
            scores = transform_pca(self.pca, ds.features)
            return ds.with_features(
                scores, self.output_names, [FeatureKind.NUMERIC] * self.pca.n_components
            )
        if self.mask is not None:
            return ds.select_columns(self.mask.indices)
        return ds

    def summary(self) -> pd.DataFrame:
        """Per-input-column table: kept flag and the score behind the choice."""
        frame = pd.DataFrame({"feature": list(self.input_names)})
        if self.mask is not None:
            frame["kept"] = self.mask.keep
            if self.mask.scores is not None:
                frame["coefficient" if self.method == "lasso" else "f_score"] = self.mask.scores
            if self.p_values is not None:
                frame["p_value"] = self.p_values
        elif self.pca is not None:
            for i in range(self.pca.n_components):
                frame[f"pc{i + 1}_loading"] = self.pca.components[i]
        else:
            frame["kept"] = True
        return frame


def _score_lambda(train: Dataset, valid: Dataset, lam: float, options: FeatureOptions):
    model = fit_lasso(train.features, train.labels, lam, tol=options.tol, max_iter=options.max_iter)
    mask = lasso_select(model, options.abs_threshold)
    tree = train_decision_tree(
        train.select_columns(mask.indices), {"max_depth": PROBE_TREE_DEPTH, "seed": options.seed}
    )
    y_hat = predict(tree, valid.features[:, mask.indices])
    m = classification_metrics(confusion(valid.labels, y_hat))
    return m.recall, m.mcc


def choose_lambda(ds: Dataset, options: FeatureOptions) -> tuple[float, tuple]:
    """
    Pick lambda from a 5-point log grid below lambda_max.

    Each candidate is scored by the validation recall of a depth-limited
    decision tree on the selected columns (inner stratified 80/20 split of
    ``ds``); ties prefer higher MCC, then the larger (sparser) lambda.
    """
    lam_max = lambda_max(ds.features, ds.labels)
    if lam_max <= 0:
        return 0.0, ()
    plan = split_holdout(ds, ratio=0.8, seed=options.seed, stratified=True)
    train, valid = ds.subset(plan.train_indices), ds.subset(plan.test_indices)
    grid = []
    for lam in lam_max * AUTO_LAMBDA_FRACTIONS:
        recall, mcc = _score_lambda(train, valid, float(lam), options)
        grid.append((float(lam), recall, mcc))
        logger.debug("lambda=%.3g recall=%.4f mcc=%.4f", lam, recall, mcc)
    best = max(grid, key=lambda row: (row[1], row[2], row[0]))
    logger.info("Auto lambda: %.4g (validation recall %.4f)", best[0], best[1])
    return best[0], tuple(grid)


def fit_feature_stage(ds: Dataset, options: FeatureOptions | None = None) -> FeatureStage:
    """Fit the configured feature method on ``ds`` (training rows only)."""
    options = options or FeatureOptions()
    if options.method not in FEATURE_METHODS:
        raise ValueError(f"features.method must be one of {FEATURE_METHODS}, got {options.method!r}")
    names = ds.feature_names

    if options.method == "none":
        return FeatureStage(method="none", input_names=names)

    if options.method == "anova":
        k = options.k
        if k > ds.n_cols:
            logger.warning("features.k=%d exceeds %d columns; keeping all", k, ds.n_cols)
            k = ds.n_cols
        scores = anova_f_scores(ds.features, ds.labels)
        return FeatureStage(
            method="anova",
            input_names=names,
            mask=select_k_best(scores, k),
            p_values=anova_p_values(scores, ds.n_rows),
        )

    if options.method == "pca":
        limit = min(ds.n_rows - 1, ds.n_cols)
        n_components = options.n_components
        if n_components > limit:
            logger.warning("features.n_components=%d exceeds %d; clamping", n_components, limit)
            n_components = limit
        return FeatureStage(method="pca", input_names=names, pca=fit_pca(ds.features, n_components))

    grid: tuple = ()
    if options.lambda_ == "auto":
        lam, grid = choose_lambda(ds, options)
    else:
        lam = float(options.lambda_)
    model = fit_lasso(ds.features, ds.labels, lam, tol=options.tol, max_iter=options.max_iter)
    mask = lasso_select(model, options.abs_threshold)
    logger.info("LASSO kept %d of %d features (lambda=%.4g)", int(mask.keep.sum()), ds.n_cols, lam)
    return FeatureStage(method="lasso", input_names=names, mask=mask, lasso=model, lambda_grid=grid)
