import math

import numpy as np
import pytest

from conftest import make_dataset
from droidauto.data.dataset_io import FeatureKind, split_holdout
from droidauto.features.anova import anova_f_scores, anova_p_values, select_k_best
from droidauto.features.lasso import (
    LassoModel,
    fit_lasso,
    kkt_residual,
    lambda_max,
    lasso_select,
    soft_threshold,
)
from droidauto.features.mask import FeatureMask
from droidauto.features.pca import fit_pca, inverse_transform_pca, transform_pca
from droidauto.features.stage import FeatureOptions, fit_feature_stage


def _lasso_model(coef):
    coef = np.asarray(coef, dtype=float)
    return LassoModel(
        coef=coef,
        intercept=0.0,
        lambda_=0.1,
        x_mean=np.zeros(coef.size),
        x_scale=np.ones(coef.size),
        n_iter=1,
        converged=True,
    )


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def test_pca_diagonal_points():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    model = fit_pca(X, 2)
    np.testing.assert_allclose(model.components[0], [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)
    np.testing.assert_allclose(model.explained_variance_ratio, [1.0, 0.0], atol=1e-12)

    scores = transform_pca(fit_pca(X, 1), np.array([[1.0, 1.0], [3.0, 3.0]]))
    np.testing.assert_allclose(scores[:, 0], [-math.sqrt(2), math.sqrt(2)], atol=1e-12)


def test_pca_mean_row_maps_to_zero():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4))
    model = fit_pca(X, 3)
    np.testing.assert_allclose(transform_pca(model, X.mean(axis=0)[None, :]), 0.0, atol=1e-12)


def test_pca_full_rank_reconstruction():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 5))
    model = fit_pca(X, 5)
    back = inverse_transform_pca(model, transform_pca(model, X))
    assert np.linalg.norm(back - X) / np.linalg.norm(X) < 1e-8


def test_pca_axis_aligned_components():
    X = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 1.0], [4.0, 1.0]])
    model = fit_pca(X, 2)
    np.testing.assert_allclose(np.abs(model.components), np.eye(2), atol=1e-12)


def test_pca_rejects_constant_and_bad_component_count():
    with pytest.raises(ValueError):
        fit_pca(np.ones((5, 3)), 1)
    with pytest.raises(ValueError):
        fit_pca(np.arange(6.0).reshape(3, 2), 3)

def test_pca_random_matrices_orthonormal_and_lossless():
    rng = np.random.default_rng(21)
    for _ in range(20):
        d = int(rng.integers(2, 51))
        n = int(rng.integers(d + 1, 201))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10.0, size=d) + rng.normal(size=d)
        model = fit_pca(X, d)
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(d), atol=1e-10)
        assert np.all(np.diff(model.explained_variance) <= 1e-12)
        back = inverse_transform_pca(model, transform_pca(model, X))
        assert np.linalg.norm(back - X) / np.linalg.norm(X) < 1e-8


# ---------------------------------------------------------------------------
# ANOVA
# ---------------------------------------------------------------------------

def test_anova_reference_values():
    X = np.array([
        [1, 1, 0],
        [2, 2, 0],
        [3, 3, 0],
        [4, 1, 1],
        [5, 2, 1],
        [6, 3, 1],
    ], dtype=float)
    y = np.array([0, 0, 0, 1, 1, 1])
    scores = anova_f_scores(X, y)
    assert scores[0] == pytest.approx(13.5)
    assert scores[1] == 0.0
    assert math.isinf(scores[2])

    p = anova_p_values(scores, 6)
    assert 0 < p[0] < 0.05
    assert p[1] == pytest.approx(1.0)
    assert p[2] == 0.0


def test_select_k_best():
    assert select_k_best([0.1, 13.5, 2.0], 1).indices.tolist() == [1]
    assert select_k_best([0.1, 13.5, 2.0], 3).keep.all()
    assert select_k_best([5.0, 5.0], 1).indices.tolist() == [0]
    assert select_k_best([1.0, math.inf, 2.0], 1).indices.tolist() == [1]
    with pytest.raises(ValueError):
        select_k_best([1.0, 2.0], 0)


@pytest.mark.parametrize("scale,shift", [(3.0, 0.0), (-2.5, 7.0), (1000.0, -1e4), (0.001, 0.5)])
def test_anova_ignores_affine_rescaling(scale, shift):
    rng = np.random.default_rng(8)
    y = np.r_[np.zeros(40, dtype=int), np.ones(35, dtype=int)]
    X = rng.normal(size=(75, 5)) + 0.4 * y[:, None] * np.arange(5)
    np.testing.assert_allclose(anova_f_scores(scale * X + shift, y), anova_f_scores(X, y), rtol=1e-7)


# ---------------------------------------------------------------------------
# LASSO
# ---------------------------------------------------------------------------

def test_soft_threshold():
    assert soft_threshold(0.8, 0.3) == pytest.approx(0.5)
    assert soft_threshold(-0.8, 0.3) == pytest.approx(-0.5)
    assert soft_threshold(0.2, 0.3) == 0.0


def test_single_feature_closed_form():
    x = np.array([-1.0, 1.0, -1.0, 1.0])
    model = fit_lasso(x[:, None], 0.8 * x, lam=0.3)
    assert model.coef[0] == pytest.approx(0.5)
    assert model.converged


def test_zero_lambda_matches_least_squares():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 3))
    y = X @ np.array([1.5, -2.0, 0.5]) + 0.3 + rng.normal(scale=0.1, size=60)
    model = fit_lasso(X, y, lam=0.0, tol=1e-12, max_iter=50_000)
    A = np.column_stack([np.ones(60), X])
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    np.testing.assert_allclose(model.coef_original, beta[1:], atol=1e-6)
    assert model.intercept_original == pytest.approx(beta[0], abs=1e-6)
    np.testing.assert_allclose(model.predict(X), A @ beta, atol=1e-6)


def test_lambda_max_zeroes_everything():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 5))
    y = (X[:, 0] > 0).astype(float)
    lam = lambda_max(X, y)
    assert lam > 0
    assert not fit_lasso(X, y, lam).coef.any()
    assert fit_lasso(X, y, 0.5 * lam).coef.any()


def test_objective_never_increases_and_kkt_holds():
    rng = np.random.default_rng(4)
    X = rng.integers(0, 2, size=(80, 6)).astype(float)
    y = ((X[:, 0] + X[:, 1]) >= 1).astype(float)
    model = fit_lasso(X, y, lam=0.02, tol=1e-10)
    trace = np.array(model.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12)
    assert kkt_residual(model, X, y) < 1e-6


def test_lasso_ignores_constant_columns():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    y = (np.arange(10) >= 5).astype(float)
    model = fit_lasso(X, y, lam=0.01)
    assert model.coef[0] == 0.0
    assert model.coef[1] > 0


def test_not_converged_is_reported():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 4))
    y = X @ np.array([1.0, 1.0, -1.0, 0.5])
    X[:, 1] = X[:, 0] + 1e-3 * rng.normal(size=30)
    model = fit_lasso(X, y, lam=1e-6, tol=1e-14, max_iter=2)
    assert not model.converged
    assert model.n_iter == 2


def test_lasso_select():
    mask = lasso_select(_lasso_model([0.0, 0.5, -0.2]))
    assert mask.keep.tolist() == [False, True, True]
    assert mask.provenance == "lasso"
    assert lasso_select(_lasso_model([0.0, 0.5, -0.2]), abs_threshold=0.3).indices.tolist() == [1]
    assert lasso_select(_lasso_model([0.0, 0.0, 0.0])).indices.tolist() == [0]


def test_ols_support_matches_selection():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(50, 3))
    y = 2.0 * X[:, 0] - 1.0 * X[:, 2]
    model = fit_lasso(X, y, lam=0.0, tol=1e-12, max_iter=50_000)
    expected = np.abs(np.linalg.lstsq(X - X.mean(axis=0), y - y.mean(), rcond=None)[0]) > 1e-6
    assert expected.tolist() == [True, False, True]
    assert lasso_select(model, abs_threshold=1e-6).keep.tolist() == expected.tolist()


def test_mask_needs_a_kept_column():
    with pytest.raises(ValueError):
        FeatureMask(keep=[False, False])
    assert FeatureMask(keep=[True, False, True]).kept_names(["a", "b", "c"]) == ["a", "c"]

def test_zero_lambda_matches_least_squares_on_random_problems():
    rng = np.random.default_rng(12)
    for _ in range(20):
        X = rng.normal(size=(50, 10))
        y = X @ rng.normal(size=10) + rng.normal() + rng.normal(scale=0.5, size=50)
        model = fit_lasso(X, y, lam=0.0, tol=1e-12, max_iter=50_000)
        assert model.converged
        A = np.column_stack([np.ones(50), X])
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
        np.testing.assert_allclose(model.coef_original, beta[1:], atol=1e-6)
        assert model.intercept_original == pytest.approx(beta[0], abs=1e-6)
        assert kkt_residual(model, X, y) <= 1e-5


def test_kkt_holds_along_the_lambda_path():
    rng = np.random.default_rng(13)
    for _ in range(20):
        X = rng.normal(size=(50, 10))
        y = X[:, :3] @ np.array([2.0, -1.0, 0.5]) + rng.normal(size=50)
        lam = float(rng.uniform(0.01, 0.9)) * lambda_max(X, y)
        model = fit_lasso(X, y, lam=lam, tol=1e-10, max_iter=50_000)
        assert model.converged
        assert kkt_residual(model, X, y) <= 1e-5


# ---------------------------------------------------------------------------
# Stage
# ---------------------------------------------------------------------------

def test_anova_stage_keeps_k_columns(synthetic_ds):
    stage = fit_feature_stage(synthetic_ds, FeatureOptions(method="anova", k=2))
    assert stage.output_names[0] == "SEND_SMS"
    out = stage.apply(synthetic_ds)
    assert out.feature_names == stage.output_names
    summary = stage.summary()
    assert list(summary.columns) == ["feature", "kept", "f_score", "p_value"]
    assert int(summary["kept"].sum()) == 2


def test_lasso_stage_reports_coefficients(synthetic_ds):
    stage = fit_feature_stage(synthetic_ds, FeatureOptions(method="lasso", lambda_=0.01))
    summary = stage.summary()
    assert "coefficient" in summary.columns
    kept = summary[summary["kept"]]
    assert "SEND_SMS" in kept["feature"].tolist()
    assert (kept["coefficient"] != 0).all()


def test_auto_lambda_records_its_grid(synthetic_ds):
    stage = fit_feature_stage(synthetic_ds, FeatureOptions(method="lasso", lambda_="auto"))
    assert len(stage.lambda_grid) == 5
    assert stage.lasso.lambda_ in [row[0] for row in stage.lambda_grid]


def test_pca_stage_clamps_components(synthetic_ds):
    stage = fit_feature_stage(synthetic_ds, FeatureOptions(method="pca", n_components=50))
    assert stage.output_names == tuple(f"pc{i + 1}" for i in range(synthetic_ds.n_cols))
    assert stage.apply(synthetic_ds).n_cols == synthetic_ds.n_cols


def test_none_stage_is_identity(synthetic_ds):
    stage = fit_feature_stage(synthetic_ds, FeatureOptions(method="none"))
    assert stage.apply(synthetic_ds) is synthetic_ds


def test_unknown_method_rejected(synthetic_ds):
    with pytest.raises(ValueError):
        fit_feature_stage(synthetic_ds, FeatureOptions(method="boruta"))


@pytest.mark.parametrize("options", [
    FeatureOptions(method="lasso", lambda_="auto"),
    FeatureOptions(method="anova", k=3),
    FeatureOptions(method="pca", n_components=3),
])
def test_stage_never_sees_test_rows(options):
    rng = np.random.default_rng(30)
    X = rng.normal(size=(150, 6))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(scale=0.5, size=150) > 0).astype(int)
    kinds = [FeatureKind.NUMERIC] * 6
    plan = split_holdout(y, ratio=0.7, seed=5)

    def fitted(features):
        ds = make_dataset(features, y, kinds=kinds)
        return fit_feature_stage(ds.subset(split_holdout(ds, ratio=0.7, seed=5).train_indices), options)

    reference = fitted(X)
    for _ in range(20):
        mutated = X.copy()
        mutated[plan.test_indices] = rng.normal(scale=100.0, size=(plan.test_indices.size, 6))
        stage = fitted(mutated)
        if reference.mask is not None:
            assert stage.mask.keep.tolist() == reference.mask.keep.tolist()
            np.testing.assert_array_equal(stage.mask.scores, reference.mask.scores)
        if reference.lasso is not None:
            assert stage.lasso.lambda_ == reference.lasso.lambda_
            assert stage.lambda_grid == reference.lambda_grid
        if reference.pca is not None:
            np.testing.assert_array_equal(stage.pca.components, reference.pca.components)
            np.testing.assert_array_equal(stage.pca.mean, reference.pca.mean)
