"""Dataset loading, CSV round-trips, and deterministic holdout / k-fold plans.

Missing cells are kept as NaN (the missing sentinel); imputation belongs to
the preprocessing stage. Labels are always 0 = benign, 1 = malware.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MISSING = np.nan
DEFAULT_LABEL_COLUMN = "class"

# Strings parsed as missing cells (in addition to the empty string).
MISSING_TOKENS = ("", "?", "NA", "N/A", "NaN", "nan", "null", "NULL", "None")


class FeatureKind(str, Enum):
    BINARY = "binary"
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Dataset:
    """Dense feature matrix + 0/1 labels + per-column metadata.

    Arrays are made read-only on construction so a Dataset can be shared
    between threads. Categorical columns hold integer codes into
    ``levels[name]``.
    """
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    feature_kinds: tuple[FeatureKind, ...]
    source_id: str = ""
    levels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).ravel()
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != features.shape[1]:
            raise ValueError(
                f"{len(names)} feature names for {features.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate feature names: {dupes}")
        kinds = tuple(FeatureKind(k) for k in self.feature_kinds)
        if len(kinds) != len(names):
            raise ValueError("feature_kinds must have one entry per column")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must contain only 0 and 1")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "feature_kinds", kinds)
        object.__setattr__(self, "levels", dict(self.levels))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_cols(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple[int, int]:
        """(benign, malware) counts."""
        n_mal = int(self.labels.sum())
        return self.n_rows - n_mal, n_mal

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            feature_names=self.feature_names,
            feature_kinds=self.feature_kinds,
            source_id=self.source_id,
            levels=self.levels,
        )

    def select_columns(self, columns: Sequence[int] | np.ndarray) -> "Dataset":
        columns = np.asarray(columns)
        if columns.dtype == bool:
            columns = np.flatnonzero(columns)
        names = tuple(self.feature_names[c] for c in columns)
        return Dataset(
            features=self.features[:, columns],
            labels=self.labels,
            feature_names=names,
            feature_kinds=tuple(self.feature_kinds[c] for c in columns),
            source_id=self.source_id,
            levels={n: lv for n, lv in self.levels.items() if n in names},
        )

    def with_features(
        self,
        features: np.ndarray,
        feature_names: Sequence[str],
        feature_kinds: Sequence[FeatureKind],
        levels: Mapping[str, tuple[str, ...]] | None = None,
    ) -> "Dataset":
        return Dataset(
            features=features,
            labels=self.labels,
            feature_names=tuple(feature_names),
            feature_kinds=tuple(feature_kinds),
            source_id=self.source_id,
            levels=levels or {},
        )


def infer_kind(column: np.ndarray) -> FeatureKind:
    """A column is binary iff every non-missing value is 0 or 1."""
    present = column[~np.isnan(column)]
    if present.size and np.isin(present, (0.0, 1.0)).all():
        return FeatureKind.BINARY
    return FeatureKind.NUMERIC


def _map_labels(raw: pd.Series, malware_label: str | None) -> np.ndarray:
    values = raw.astype(str).str.strip()
    if (values.isin(MISSING_TOKENS)).any():
        raise ValueError("label column contains missing values")
    distinct = sorted(values.unique())
    if len(distinct) > 2:
        raise ValueError(f"label column has {len(distinct)} distinct values: {distinct[:5]}")

    if malware_label is not None:
        malware_label = str(malware_label).strip()
        if malware_label not in distinct and len(distinct) == 2:
            raise ValueError(f"malware label {malware_label!r} not among {distinct}")
        return (values == malware_label).to_numpy(dtype=np.int64)

    numeric = pd.to_numeric(values, errors="coerce")
    if numeric.notna().all() and numeric.isin((0, 1)).all():
        return numeric.to_numpy(dtype=np.int64)

    if len(distinct) < 2:
        raise ValueError(
            f"cannot tell which label is malware from the single value {distinct[0]!r}; "
            "set data.malware_label"
        )
    # Lexicographically last value is malware ("benign" < "malware").
    return (values == distinct[-1]).to_numpy(dtype=np.int64)


def load_csv(
    path: Path | str,
    label_column: str = DEFAULT_LABEL_COLUMN,
    malware_label: str | None = None,
    strict: bool = False,
    categorical: Sequence[str] = (),
) -> Dataset:
    """
    Load a labelled CSV into a Dataset.

    Args:
        path: UTF-8 CSV with a header row.
        label_column: Name of the label column.
        malware_label: Raw label value meaning malware. Defaults to 1 for 0/1
            labels, otherwise the lexicographically last of the two values.
        strict: Reject non-numeric cells instead of treating the column as
            categorical.
        categorical: Columns to load as categorical regardless of content.

    Returns:
        Dataset with inferred column kinds and the file's row order.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as exc:
        raise ValueError(f"empty file: {path}") from exc

    if label_column not in frame.columns:
        raise ValueError(f"label column {label_column!r} not found in {path.name}")
    if frame.empty:
        raise ValueError(f"no data rows in {path}")

    labels = _map_labels(frame[label_column], malware_label)
    feature_frame = frame.drop(columns=[label_column])
    forced = set(categorical)
    unknown = forced - set(feature_frame.columns)
    if unknown:
        raise ValueError(f"categorical columns not in file: {sorted(unknown)}")

    columns, kinds, levels = [], [], {}
    for name in feature_frame.columns:
        raw = feature_frame[name].str.strip()
        missing = raw.isin(MISSING_TOKENS)
        numeric = pd.to_numeric(raw.where(~missing), errors="coerce")
        bad = numeric.isna() & ~missing

        if name in forced or bad.any():
            if bad.any() and strict and name not in forced:
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise ValueError(
                    f"non-numeric value {raw.iloc[row]!r} in column {name!r} (row {row + 1})"
                )
            level_names = tuple(sorted(raw[~missing].unique()))
            lookup = {lv: i for i, lv in enumerate(level_names)}
            codes = raw.map(lookup).to_numpy(dtype=np.float64, na_value=MISSING)
            codes[missing.to_numpy()] = MISSING
            columns.append(codes)
            kinds.append(FeatureKind.CATEGORICAL)
            levels[name] = level_names
        else:
            values = numeric.to_numpy(dtype=np.float64, na_value=MISSING)
            columns.append(values)
            kinds.append(infer_kind(values))

    features = (
        np.column_stack(columns) if columns else np.empty((len(frame), 0), dtype=np.float64)
    )
    ds = Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(feature_frame.columns),
        feature_kinds=tuple(kinds),
        source_id=str(path),
        levels=levels,
    )
    benign, malware = ds.class_counts()
    logger.info(
        "Loaded %s: %d rows x %d features (%d benign, %d malware)",
        path.name, ds.n_rows, ds.n_cols, benign, malware,
    )
    return ds


def to_frame(ds: Dataset, label_column: str = DEFAULT_LABEL_COLUMN) -> pd.DataFrame:
    """Dataset as a DataFrame; categorical codes are written back as level strings."""
    data = {}
    for j, name in enumerate(ds.feature_names):
        col = ds.features[:, j]
        if ds.feature_kinds[j] is FeatureKind.CATEGORICAL and name in ds.levels:
            lv = np.asarray(ds.levels[name], dtype=object)
            out = np.full(col.shape, None, dtype=object)
            present = ~np.isnan(col)
            out[present] = lv[col[present].astype(np.int64)]
            data[name] = out
        else:
            data[name] = col
    frame = pd.DataFrame(data, columns=list(ds.feature_names))
    frame[label_column] = ds.labels
    return frame


def write_csv(ds: Dataset, path: Path | str, label_column: str = DEFAULT_LABEL_COLUMN) -> Path:
    """Write a Dataset so that load_csv reproduces it (floats use round-trip repr)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_frame(ds, label_column).to_csv(path, index=False, na_rep="")
    return path


# ---------------------------------------------------------------------------
# Split plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    ratio: float
    stratified: bool

    def __post_init__(self):
        train = np.asarray(self.train_indices, dtype=np.int64)
        test = np.asarray(self.test_indices, dtype=np.int64)
        if np.intersect1d(train, test).size:
            raise ValueError("train and test indices overlap")
        object.__setattr__(self, "train_indices", train)
        object.__setattr__(self, "test_indices", test)

    @property
    def n_rows(self) -> int:
        return self.train_indices.size + self.test_indices.size

    def folds(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Single (train, validation) pair, mirroring FoldPlan.folds()."""
        yield self.train_indices, self.test_indices


@dataclass(frozen=True)
class FoldPlan:
    k: int
    fold_assignments: np.ndarray
    seed: int
    stratified: bool

    def __post_init__(self):
        assignments = np.asarray(self.fold_assignments, dtype=np.int64)
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if assignments.size and (assignments.min() < 0 or assignments.max() >= self.k):
            raise ValueError("fold assignments must lie in [0, k)")
        object.__setattr__(self, "fold_assignments", assignments)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_assignments, minlength=self.k)

    def folds(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for fold in range(self.k):
            held_out = self.fold_assignments == fold
            yield np.flatnonzero(~held_out), np.flatnonzero(held_out)


def _labels_of(ds_or_labels: Dataset | np.ndarray) -> np.ndarray:
    if isinstance(ds_or_labels, Dataset):
        return ds_or_labels.labels
    return np.asarray(ds_or_labels, dtype=np.int64).ravel()


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _stratified_allocation(class_sizes: np.ndarray, ratio: float, n_train: int) -> np.ndarray:
    """Largest-remainder allocation: each class gets floor or ceil of ratio * size."""
    exact = class_sizes * ratio
    alloc = np.floor(exact).astype(np.int64)
    remainder = n_train - int(alloc.sum())
    # Larger fractional part first, lower class index on ties.
    order = np.lexsort((np.arange(len(exact)), -(exact - alloc)))
    for c in order[:max(remainder, 0)]:
        alloc[c] += 1
    return alloc


def split_holdout(
    ds: Dataset | np.ndarray,
    ratio: float = 0.8,
    seed: int = 42,
    stratified: bool = True,
) -> SplitPlan:
    """
    Deterministic train/test partition.

    |train| = round(ratio * n). When stratified, every class contributes
    floor or ceil of ratio * class size to the training side.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    labels = _labels_of(ds)
    n = labels.size
    n_train = _round_half_up(ratio * n)
    if n_train == 0 or n_train == n:
        raise ValueError(f"ratio {ratio} on {n} rows leaves an empty partition")

    rng = np.random.default_rng(seed)
    if stratified:
        class_sizes = np.bincount(labels, minlength=2)
        if (class_sizes == 0).any():
            raise ValueError("stratified split needs samples from both classes")
        alloc = _stratified_allocation(class_sizes, ratio, n_train)
        train_parts, test_parts = [], []
        for c in (0, 1):
            members = rng.permutation(np.flatnonzero(labels == c))
            train_parts.append(members[:alloc[c]])
            test_parts.append(members[alloc[c]:])
        train = np.concatenate(train_parts)
        test = np.concatenate(test_parts)
    else:
        order = rng.permutation(n)
        train, test = order[:n_train], order[n_train:]

    return SplitPlan(
        train_indices=np.sort(train),
        test_indices=np.sort(test),
        seed=seed,
        ratio=ratio,
        stratified=stratified,
    )


def kfold_plan(
    ds: Dataset | np.ndarray,
    k: int = 5,
    seed: int = 42,
    stratified: bool = True,
) -> FoldPlan:
    """
    Assign every row to one of k folds.

    Rows are shuffled within each class, classes are laid end to end and
    dealt round-robin, so fold sizes differ by at most one overall and per
    class.
    """
    labels = _labels_of(ds)
    n = labels.size
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")

    rng = np.random.default_rng(seed)
    if stratified:
        class_sizes = np.bincount(labels, minlength=2)
        if k > class_sizes.min():
            raise ValueError(
                f"k={k} exceeds the smallest class count ({int(class_sizes.min())})"
            )
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in (0, 1)])
    else:
        order = rng.permutation(n)

    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    return FoldPlan(k=k, fold_assignments=assignments, seed=seed, stratified=stratified)
