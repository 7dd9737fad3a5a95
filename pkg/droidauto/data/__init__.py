from droidauto.data.dataset_io import (
    Dataset,
    FeatureKind,
    FoldPlan,
    SplitPlan,
    kfold_plan,
    load_csv,
    split_holdout,
    write_csv,
)
from droidauto.data.preprocess import (
    PreprocessOptions,
    PreprocessPlan,
    apply_preprocessor,
    balance_unique,
    fit_preprocessor,
    missingness_matrix,
)
from droidauto.data.profiler import DatasetProfile, EnvSnapshot, profile_dataset, snapshot_environment

__all__ = [
    "Dataset",
    "DatasetProfile",
    "EnvSnapshot",
    "FeatureKind",
    "FoldPlan",
    "PreprocessOptions",
    "PreprocessPlan",
    "SplitPlan",
    "apply_preprocessor",
    "balance_unique",
    "fit_preprocessor",
    "kfold_plan",
    "load_csv",
    "missingness_matrix",
    "profile_dataset",
    "snapshot_environment",
    "split_holdout",
    "write_csv",
]
