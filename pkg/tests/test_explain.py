import numpy as np
import pytest

from conftest import make_dataset
from droidauto.explain import (
    evaluate_tree_export,
    export_tree,
    local_surrogate,
    parse_tree_export,
    permutation_importance,
    shapley_exact,
    shapley_sampled,
)
from droidauto.models import predict_proba, train_decision_tree, train_model


class FunctionModel:
    """Wraps f(X) -> malware score (not clipped) as a two-column model."""

    def __init__(self, fn, n_features):
        self.fn = fn
        self.n_features = n_features

    def predict_proba(self, X):
        p1 = self.fn(np.asarray(X, dtype=float))
        return np.column_stack([1.0 - p1, p1])


def test_exact_shapley_of_additive_model():
    model = FunctionModel(lambda X: 2 * X[:, 0] + 3 * X[:, 1], 2)
    att = shapley_exact(model, [1.0, 1.0], np.zeros((1, 2)))
    np.testing.assert_allclose(att.values, [2.0, 3.0], atol=1e-12)
    assert att.baseline == 0.0
    assert att.prediction == 5.0


def test_exact_shapley_axioms():
    rng = np.random.default_rng(0)
    background = rng.integers(0, 2, size=(15, 4)).astype(float)
    background[:, 1] = background[:, 0]
    model = FunctionModel(lambda X: 0.3 * X[:, 0] * X[:, 1] + 0.2 * X[:, 0] + 0.2 * X[:, 1], 4)
    att = shapley_exact(model, [1.0, 1.0, 1.0, 0.0], background)
    assert att.values[0] == pytest.approx(att.values[1])
    assert att.values[2] == 0.0
    assert att.values[3] == 0.0
    assert att.efficiency_residual < 1e-9


def test_exact_shapley_feature_limit():
    model = FunctionModel(lambda X: X.sum(axis=1), 13)
    with pytest.raises(ValueError, match="limited"):
        shapley_exact(model, np.zeros(13), np.zeros((1, 13)))


def _interacting_model():
    w = np.linspace(-1.0, 1.0, 8)
    return FunctionModel(lambda X: 1 / (1 + np.exp(-(X @ w + X[:, 0] * X[:, 1]))), 8)


def test_sampled_shapley_agrees_with_exact():
    rng = np.random.default_rng(1)
    background = rng.normal(size=(20, 8))
    x = rng.normal(size=8)
    model = _interacting_model()
    exact = shapley_exact(model, x, background)
    sampled = shapley_sampled(model, x, background, n_samples=2000, seed=7)
    assert np.all(np.abs(sampled.values - exact.values) <= 4 * sampled.std_error + 1e-9)
    assert sampled.baseline == pytest.approx(exact.baseline)
    assert sampled.prediction == pytest.approx(exact.prediction)


def test_sampled_shapley_is_seeded():
    rng = np.random.default_rng(2)
    background = rng.normal(size=(10, 8))
    x = rng.normal(size=8)
    a = shapley_sampled(_interacting_model(), x, background, n_samples=300, seed=7)
    b = shapley_sampled(_interacting_model(), x, background, n_samples=300, seed=7)
    np.testing.assert_array_equal(a.values, b.values)
    assert list(a.to_frame().columns) == ["feature", "shapley", "std_error"]


def test_sampled_shapley_with_single_background_row_is_efficient():
    model = FunctionModel(lambda X: 2 * X[:, 0] + 3 * X[:, 1], 2)
    att = shapley_sampled(model, [1.0, 1.0], np.zeros((1, 2)), n_samples=50, seed=0)
    np.testing.assert_allclose(att.values, [2.0, 3.0])
    assert att.efficiency_residual < 1e-9


def _baseline_fixture(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 9))
    w = rng.normal(size=d)
    w[rng.random(d) < 0.3] = 0.0
    i, j = rng.choice(d, size=2, replace=False)
    c = rng.uniform(0.5, 2.0)
    model = FunctionModel(lambda X: X @ w + c * X[:, i] * X[:, j], d)
    return model, rng.normal(size=d), rng.normal(size=(1, d))


@pytest.mark.parametrize("seed", range(10))
def test_sampled_shapley_within_three_standard_errors(seed):
    model, x, background = _baseline_fixture(seed)
    exact = shapley_exact(model, x, background)
    sampled = shapley_sampled(model, x, background, n_samples=2000, seed=seed)
    assert np.all(np.abs(sampled.values - exact.values) <= 3 * sampled.std_error + 1e-9)
    assert sampled.efficiency_residual < 1e-9


def test_efficiency_residual_shrinks_with_more_samples():
    rng = np.random.default_rng(4)
    background = rng.normal(size=(50, 8))
    x = rng.normal(size=8)
    model = _interacting_model()

    def mean_residual(n_samples):
        return np.mean([
            shapley_sampled(model, x, background, n_samples=n_samples, seed=s).efficiency_residual
            for s in range(5)
        ])

    assert mean_residual(20_000) < mean_residual(20)


class CountingModel(FunctionModel):
    def __init__(self, fn, n_features):
        super().__init__(fn, n_features)
        self.batch_sizes = []

    def predict_proba(self, X):
        self.batch_sizes.append(len(X))
        return super().predict_proba(X)


def test_sampled_shapley_evaluates_in_bounded_batches(monkeypatch):
    from droidauto.explain import shapley

    rng = np.random.default_rng(6)
    background = rng.normal(size=(20, 8))
    x = rng.normal(size=8)
    model = _interacting_model()
    counting = CountingModel(model.fn, 8)
    chunked = shapley_sampled(counting, x, background, n_samples=1000, seed=3)
    assert max(counting.batch_sizes) <= shapley.PERMUTATION_CHUNK * (8 + 1)

    monkeypatch.setattr(shapley, "PERMUTATION_CHUNK", 1)
    one_at_a_time = shapley_sampled(model, x, background, n_samples=1000, seed=3)
    np.testing.assert_allclose(chunked.values, one_at_a_time.values, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(chunked.std_error, one_at_a_time.std_error, rtol=1e-9, atol=1e-15)


def test_surrogate_recovers_linear_model():
    rng = np.random.default_rng(3)
    background = rng.integers(0, 2, size=(200, 3)).astype(float)
    model = FunctionModel(lambda X: 0.2 + 0.5 * X[:, 0], 3)
    exp = local_surrogate(model, [1.0, 0.0, 1.0], background, n_perturbations=2000, seed=4)
    assert exp.coefficients[0] == pytest.approx(0.5, abs=0.05)
    assert np.all(np.abs(exp.coefficients[1:]) < 0.05)
    assert exp.fidelity == pytest.approx(1.0)


def test_surrogate_of_constant_model_has_no_fidelity():
    background = np.eye(3)
    model = FunctionModel(lambda X: np.full(X.shape[0], 0.4), 3)
    exp = local_surrogate(model, [1.0, 0.0, 0.0], background, n_perturbations=500, seed=0)
    assert exp.fidelity is None
    np.testing.assert_allclose(exp.coefficients, 0.0, atol=1e-6)


def test_surrogate_is_seeded(synthetic_ds):
    tree = train_model("decision_tree", synthetic_ds, {"max_depth": 3})
    x = synthetic_ds.features[0]
    a = local_surrogate(tree, x, synthetic_ds, n_perturbations=400, seed=9)
    b = local_surrogate(tree, x, synthetic_ds, n_perturbations=400, seed=9)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    assert a.feature_names == synthetic_ds.feature_names


def test_permutation_importance_of_a_stump():
    rng = np.random.default_rng(5)
    y = np.repeat([0, 1], 20)
    X = np.column_stack([y, rng.integers(0, 2, 40), rng.integers(0, 2, 40)])
    ds = make_dataset(X, y)
    stump = train_model("decision_tree", ds, {"max_depth": 1})
    report = permutation_importance(stump, ds, metric="recall", repeats=5, seed=0)
    assert report.importances[0] > 0
    assert report.importances[1] == 0.0
    assert report.importances[2] == 0.0
    again = permutation_importance(stump, ds, metric="recall", repeats=5, seed=0)
    np.testing.assert_array_equal(report.importances, again.importances)
    assert report.to_frame()["rank"].tolist()[0] == 1


def test_permutation_importance_rejects_unknown_metric(synthetic_ds):
    tree = train_model("decision_tree", synthetic_ds)
    with pytest.raises(ValueError):
        permutation_importance(tree, synthetic_ds, metric="kappa")


def test_single_leaf_export():
    tree = train_decision_tree(make_dataset([[0.0], [1.0]], [1, 1]))
    doc = export_tree(tree, ["SEND_SMS"])
    assert len(parse_tree_export(doc)) == 1
    assert "->" not in doc


def test_stump_export():
    tree = train_decision_tree(make_dataset([[0.0], [0.0], [1.0], [1.0]], [0, 0, 1, 1]))
    doc = export_tree(tree, ["SEND_SMS"])
    assert doc.startswith("digraph Tree {")
    assert "SEND_SMS <= 0.5" in doc
    assert sum("->" in line for line in doc.splitlines()) == 2
    nodes = parse_tree_export(doc)
    assert len(nodes) == 3
    assert nodes[0].feature == "SEND_SMS"
    assert nodes[0].threshold == 0.5


def test_export_round_trip(synthetic_ds):
    tree = train_decision_tree(synthetic_ds, {"max_depth": 4})
    doc = export_tree(tree, synthetic_ds.feature_names)
    rng = np.random.default_rng(6)
    X = rng.integers(0, 2, size=(100, synthetic_ds.n_cols)).astype(float)
    np.testing.assert_array_equal(
        evaluate_tree_export(doc, X, synthetic_ds.feature_names), predict_proba(tree, X)[:, 1]
    )


def test_export_needs_matching_names(synthetic_ds):
    tree = train_decision_tree(synthetic_ds)
    with pytest.raises(ValueError):
        export_tree(tree, ["a"])
