import json

import numpy as np
import pytest

from conftest import make_dataset
from droidauto.data.dataset_io import (
    Dataset,
    FeatureKind,
    kfold_plan,
    load_csv,
    split_holdout,
    write_csv,
)
from droidauto.data.preprocess import (
    PreprocessOptions,
    apply_preprocessor,
    balance_unique,
    fit_preprocessor,
    iqr_fences,
    missingness_matrix,
)
from droidauto.data.profiler import profile_dataset, profile_to_json, snapshot_environment


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def test_single_row_csv(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("a,b,label\n1,0,1\n")
    ds = load_csv(path, label_column="label")
    assert ds.features.shape == (1, 2)
    assert ds.labels.tolist() == [1]
    assert ds.feature_kinds == (FeatureKind.BINARY, FeatureKind.BINARY)


def test_string_labels_follow_row_order(tmp_path):
    path = tmp_path / "named.csv"
    rows = ["benign", "malware", "malware", "benign", "malware"]
    path.write_text("x,class\n" + "".join(f"{i},{lab}\n" for i, lab in enumerate(rows)))
    ds = load_csv(path, malware_label="malware")
    assert ds.labels.tolist() == [0, 1, 1, 0, 1]
    assert ds.features[:, 0].tolist() == [0, 1, 2, 3, 4]


def test_missing_tokens_and_categorical_columns(tmp_path):
    path = tmp_path / "mixed.csv"
    path.write_text("n,cat,class\n1.5,A,0\n?,B,1\n3,,1\n")
    ds = load_csv(path)
    assert np.isnan(ds.features[1, 0])
    assert ds.feature_kinds == (FeatureKind.NUMERIC, FeatureKind.CATEGORICAL)
    assert ds.levels["cat"] == ("A", "B")
    assert np.isnan(ds.features[2, 1])


def test_strict_rejects_non_numeric(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("n,class\n1,0\nabc,1\n")
    with pytest.raises(ValueError, match="non-numeric"):
        load_csv(path, strict=True)


def test_missing_file_and_missing_label(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")
    path = tmp_path / "nolabel.csv"
    path.write_text("a,b\n1,0\n")
    with pytest.raises(ValueError, match="label column"):
        load_csv(path)


def test_write_csv_reloads_the_same_dataset(tmp_path, synthetic_csv):
    ds = load_csv(synthetic_csv)
    again = load_csv(write_csv(ds, tmp_path / "copy.csv"))
    np.testing.assert_array_equal(again.features, ds.features)
    np.testing.assert_array_equal(again.labels, ds.labels)
    assert again.feature_names == ds.feature_names


def test_dataset_arrays_are_read_only(synthetic_ds):
    with pytest.raises(ValueError):
        synthetic_ds.features[0, 0] = 5


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def test_stratified_holdout_counts():
    labels = np.array([0] * 70 + [1] * 30)
    plan = split_holdout(labels, ratio=0.8, seed=3)
    train = labels[plan.train_indices]
    assert (train == 0).sum() == 56
    assert (train == 1).sum() == 24
    assert plan.n_rows == 100
    assert not set(plan.train_indices) & set(plan.test_indices)


def test_holdout_two_rows_one_per_partition():
    plan = split_holdout(np.array([0, 1]), ratio=0.5, seed=0)
    assert plan.train_indices.size == 1
    assert plan.test_indices.size == 1


def test_holdout_is_deterministic():
    labels = np.array([0, 1] * 25)
    a = split_holdout(labels, seed=11)
    b = split_holdout(labels, seed=11)
    np.testing.assert_array_equal(a.train_indices, b.train_indices)


def test_holdout_rejects_bad_ratio():
    with pytest.raises(ValueError):
        split_holdout(np.array([0, 1, 0, 1]), ratio=1.0)


def test_kfold_balanced_folds():
    plan = kfold_plan(np.array([0, 1] * 5), k=5, seed=1)
    labels = np.array([0, 1] * 5)
    for _, held_out in plan.folds():
        assert sorted(labels[held_out].tolist()) == [0, 1]


def test_kfold_sizes_for_eleven_rows():
    plan = kfold_plan(np.array([0] * 6 + [1] * 5), k=5, seed=0)
    assert sorted(plan.fold_sizes().tolist()) == [2, 2, 2, 2, 3]
    again = kfold_plan(np.array([0] * 6 + [1] * 5), k=5, seed=0)
    np.testing.assert_array_equal(plan.fold_assignments, again.fold_assignments)


def test_kfold_rejects_k_above_minority():
    with pytest.raises(ValueError, match="smallest class"):
        kfold_plan(np.array([0] * 10 + [1] * 2), k=3)


# ---------------------------------------------------------------------------
# Profiling
# ---------------------------------------------------------------------------

def test_profile_missing_fraction_and_duplicates():
    X = [[1, 0, 5], [2, 1, np.nan], [1, 0, 5], [3, 1, 7]]
    profile = profile_dataset(make_dataset(X, [0, 1, 0, 1]))
    assert profile.missing_fraction == (0.0, 0.0, 0.25)
    assert profile.duplicate_rows == 1
    assert profile.class_counts == (2, 2)
    assert profile.is_balanced
    assert profile.missing_cells == 1


def test_profile_counts_label_conflicts():
    profile = profile_dataset(make_dataset([[1, 0], [1, 0], [0, 1]], [0, 1, 1]))
    assert profile.label_conflicts == 1
    assert profile.imbalance_ratio == 2.0


def test_profile_json_names_every_column(synthetic_ds):
    text = profile_to_json(profile_dataset(synthetic_ds))
    assert '"SEND_SMS"' in text
    assert '"malware"' in text


def test_environment_snapshot_is_stable():
    a, b = snapshot_environment(), snapshot_environment()
    assert a.cpu_count is None or a.cpu_count >= 1
    assert (a.os_name, a.cpu_count, a.total_memory) == (b.os_name, b.cpu_count, b.total_memory)
    assert a.network == "not collected"


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def test_median_imputation():
    ds = make_dataset([[1], [2], [np.nan], [3]], [0, 1, 0, 1])
    plan = fit_preprocessor(ds)
    assert plan.impute_values["f0"] == 2.0
    out = apply_preprocessor(plan, make_dataset([[np.nan]], [1], kinds=[FeatureKind.NUMERIC]))
    assert out.features[0, 0] == 2.0


def test_iqr_flags_the_outlier():
    values = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9, 100], dtype=float)
    low, high = iqr_fences(values, 1.5)
    assert low <= 1 and high < 100
    ds = make_dataset(values, [0, 1] * 5)
    plan = fit_preprocessor(ds, PreprocessOptions(remove_outliers=True))
    out = apply_preprocessor(plan, ds, training=True)
    assert out.n_rows == 9
    assert 100 not in out.features[:, 0]


def test_duplicates_dropped_only_for_training():
    X = [[0, 1], [0, 1], [1, 0], [1, 1], [2, 2]]
    ds = make_dataset(X, [1, 1, 0, 0, 1])
    plan = fit_preprocessor(ds)
    assert apply_preprocessor(plan, ds, training=True).n_rows == 4
    assert apply_preprocessor(plan, ds, training=False).n_rows == 5


def test_onehot_rows_sum_to_one_and_unseen_goes_to_other():
    ds = Dataset(
        features=[[0], [1], [0]],
        labels=[0, 1, 1],
        feature_names=["store"],
        feature_kinds=[FeatureKind.CATEGORICAL],
        levels={"store": ("A", "B")},
    )
    plan = fit_preprocessor(ds, PreprocessOptions(encode_onehot=True, drop_duplicates=False))
    out = apply_preprocessor(plan, ds)
    assert out.feature_names == ("store=A", "store=B", "store=other")
    np.testing.assert_array_equal(out.features.sum(axis=1), [1, 1, 1])

    unseen = Dataset(
        features=[[2]],
        labels=[1],
        feature_names=["store"],
        feature_kinds=[FeatureKind.CATEGORICAL],
        levels={"store": ("A", "B", "C")},
    )
    row = apply_preprocessor(plan, unseen).features[0]
    assert row.tolist() == [0.0, 0.0, 1.0]


def test_plan_uses_training_statistics_only():
    train = make_dataset([[1], [2], [3]], [0, 1, 0])
    test = make_dataset([[np.nan], [100], [100]], [1, 0, 0], kinds=[FeatureKind.NUMERIC])
    plan = fit_preprocessor(train)
    out = apply_preprocessor(plan, test)
    assert out.features[:, 0].tolist() == [2.0, 100.0, 100.0]


def test_plan_ignores_any_change_to_test_rows():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(120, 4))
    X[rng.random(X.shape) < 0.1] = np.nan
    y = (rng.random(120) < 0.4).astype(int)
    kinds = [FeatureKind.NUMERIC] * 4
    options = PreprocessOptions(remove_outliers=True)
    test_rows = split_holdout(y, ratio=0.7, seed=3).test_indices

    def plan_json(features):
        ds = make_dataset(features, y, kinds=kinds)
        train = ds.subset(split_holdout(ds, ratio=0.7, seed=3).train_indices)
        return json.dumps(fit_preprocessor(train, options).to_dict(), sort_keys=True, default=str)

    reference = plan_json(X)
    for _ in range(20):
        mutated = X.copy()
        noise = rng.normal(scale=1e3, size=(test_rows.size, 4))
        noise[rng.random(noise.shape) < 0.3] = np.nan
        mutated[test_rows] = noise
        assert plan_json(mutated) == reference


def test_all_missing_column_is_dropped():
    ds = make_dataset([[1, np.nan], [0, np.nan]], [0, 1], kinds=[FeatureKind.BINARY, FeatureKind.NUMERIC])
    plan = fit_preprocessor(ds)
    assert plan.dropped == ("f1",)
    assert apply_preprocessor(plan, ds).feature_names == ("f0",)


def test_missingness_matrix_marks_missing_cells():
    ds = make_dataset([[1, np.nan], [np.nan, 2]], [0, 1])
    matrix = missingness_matrix(ds)
    assert matrix.to_numpy().tolist() == [[0, 1], [1, 0]]


def test_balance_unique_counts():
    majority = [[i, 0] for i in range(85)] + [[i, 0] for i in range(5)]
    minority = [[1000 + i, 1] for i in range(10)]
    ds = make_dataset(majority + minority, [0] * 90 + [1] * 10)
    out = balance_unique(ds, seed=4)
    assert out.class_counts() == (10, 10)
    again = balance_unique(ds, seed=4)
    np.testing.assert_array_equal(out.features, again.features)


def test_balance_unique_on_balanced_unique_data_is_identity():
    ds = make_dataset([[0, 0], [0, 1], [1, 0], [1, 1]], [0, 1, 0, 1])
    out = balance_unique(ds)
    np.testing.assert_array_equal(out.features, ds.features)
