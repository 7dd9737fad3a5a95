"""Fit-then-apply preprocessing: imputation, duplicates, IQR outliers, one-hot,
and the balanced-unique resampling protocol.

Plans are fitted on training data only and applied unchanged to any other
partition, so test statistics never leak into training decisions.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from droidauto.data.dataset_io import Dataset, FeatureKind
from droidauto.data.profiler import duplicate_mask

logger = logging.getLogger(__name__)

OTHER_LEVEL = "other"


@dataclass(frozen=True)
class PreprocessOptions:
    impute: str = "median_mode"
    remove_outliers: bool = False
    iqr_k: float = 1.5
    encode_onehot: bool = False
    drop_duplicates: bool = True


@dataclass(frozen=True)
class PreprocessPlan:
    input_names: tuple[str, ...]
    input_kinds: tuple[FeatureKind, ...]
    dropped: tuple[str, ...]
    impute_values: dict[str, float | str]
    outlier_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    category_levels: dict[str, tuple[str, ...]] = field(default_factory=dict)
    onehot: dict[str, tuple[str, ...]] = field(default_factory=dict)
    drop_duplicates: bool = True
    encode_onehot: bool = False
    remove_outliers: bool = False
    iqr_k: float = 1.5

    @property
    def output_names(self) -> tuple[str, ...]:
        names = []
        for name in self.input_names:
            if name in self.dropped:
                continue
            names.extend(self.onehot.get(name, (name,)))
        return tuple(names)

    def to_dict(self) -> dict:
        return {
            "dropped_columns": list(self.dropped),
            "impute_values": dict(self.impute_values),
            "outlier_bounds": {k: list(v) for k, v in self.outlier_bounds.items()},
            "onehot": {k: list(v) for k, v in self.onehot.items()},
            "drop_duplicates": self.drop_duplicates,
            "encode_onehot": self.encode_onehot,
            "remove_outliers": self.remove_outliers,
            "iqr_k": self.iqr_k,
            "n_output_columns": len(self.output_names),
        }


def _mode(values: np.ndarray) -> float:
    uniq, counts = np.unique(values, return_counts=True)
    return float(uniq[np.argmax(counts)])  # lowest value wins ties


def iqr_fences(values: np.ndarray, k: float = 1.5) -> tuple[float, float]:
    """Tukey fences (Q1 - k*IQR, Q3 + k*IQR) with linear-interpolated quartiles."""
    q1, q3 = np.percentile(values, [25, 75])
    iqr = q3 - q1
    return float(q1 - k * iqr), float(q3 + k * iqr)


def fit_preprocessor(ds: Dataset, options: PreprocessOptions | None = None) -> PreprocessPlan:
    """Compute imputation values, outlier fences and one-hot maps from training data."""
    options = options or PreprocessOptions()
    if options.impute != "median_mode":
        raise ValueError(f"unknown imputation strategy {options.impute!r}")
    if ds.n_rows == 0:
        raise ValueError("cannot fit a preprocessor on an empty dataset")

    dropped, impute, bounds, levels, onehot = [], {}, {}, {}, {}
    for j, (name, kind) in enumerate(zip(ds.feature_names, ds.feature_kinds)):
        col = ds.features[:, j]
        present = col[~np.isnan(col)]
        if present.size == 0:
            logger.warning("Column %r is entirely missing; dropping it", name)
            dropped.append(name)
            continue

        if kind is FeatureKind.CATEGORICAL:
            level_names = ds.levels.get(name, ())
            codes = present.astype(np.int64)
            seen = tuple(level_names[c] for c in np.unique(codes))
            levels[name] = seen
            impute[name] = level_names[int(_mode(present))]
            if options.encode_onehot:
                onehot[name] = tuple(f"{name}={lv}" for lv in seen) + (f"{name}={OTHER_LEVEL}",)
        elif kind is FeatureKind.BINARY:
            impute[name] = _mode(present)
        else:
            impute[name] = float(np.median(present))
            if options.remove_outliers:
                bounds[name] = iqr_fences(present, options.iqr_k)

    plan = PreprocessPlan(
        input_names=ds.feature_names,
        input_kinds=ds.feature_kinds,
        dropped=tuple(dropped),
        impute_values=impute,
        outlier_bounds=bounds,
        category_levels=levels,
        onehot=onehot,
        drop_duplicates=options.drop_duplicates,
        encode_onehot=options.encode_onehot,
        remove_outliers=options.remove_outliers,
        iqr_k=options.iqr_k,
    )
    clashes = {n for derived in onehot.values() for n in derived} & set(ds.feature_names)
    if clashes:
        raise ValueError(f"one-hot column names collide with existing columns: {sorted(clashes)}")
    logger.info(
        "Preprocess plan: %d columns in, %d out, %d dropped",
        len(plan.input_names), len(plan.output_names), len(dropped),
    )
    return plan


def _category_strings(ds: Dataset, j: int, fill: str) -> np.ndarray:
    col = ds.features[:, j]
    level_names = np.asarray(ds.levels.get(ds.feature_names[j], ()), dtype=object)
    out = np.full(col.shape, fill, dtype=object)
    present = ~np.isnan(col)
    out[present] = level_names[col[present].astype(np.int64)]
    return out


def apply_preprocessor(plan: PreprocessPlan, ds: Dataset, training: bool = False) -> Dataset:
    """
    Apply a fitted plan.

    Row removal (duplicates, outliers) only happens when ``training`` is set;
    held-out partitions keep every row.
    """
    if ds.feature_names != plan.input_names:
        missing = set(plan.input_names) - set(ds.feature_names)
        extra = set(ds.feature_names) - set(plan.input_names)
        raise ValueError(
            f"dataset columns do not match the plan (missing {sorted(missing)}, extra {sorted(extra)})"
        )

    columns, names, kinds, levels = [], [], [], {}
    outlier_rows = np.zeros(ds.n_rows, dtype=bool)
    for j, (name, kind) in enumerate(zip(plan.input_names, plan.input_kinds)):
        if name in plan.dropped:
            continue
        fill = plan.impute_values[name]

        if kind is FeatureKind.CATEGORICAL:
            strings = _category_strings(ds, j, fill)
            known = plan.category_levels[name]
            if name in plan.onehot:
                unseen = ~np.isin(strings, known)
                for lv, derived in zip(known, plan.onehot[name]):
                    columns.append((strings == lv).astype(np.float64))
                    names.append(derived)
                    kinds.append(FeatureKind.BINARY)
                columns.append(unseen.astype(np.float64))
                names.append(plan.onehot[name][-1])
                kinds.append(FeatureKind.BINARY)
            else:
                lookup = {lv: i for i, lv in enumerate(known)}
                # Unseen levels share one extra code past the known ones.
                codes = np.array([lookup.get(s, len(known)) for s in strings], dtype=np.float64)
                columns.append(codes)
                names.append(name)
                kinds.append(FeatureKind.CATEGORICAL)
                levels[name] = tuple(known) + (OTHER_LEVEL,)
            continue

        col = ds.features[:, j].copy()
        col[np.isnan(col)] = fill
        if training and name in plan.outlier_bounds:
            low, high = plan.outlier_bounds[name]
            outlier_rows |= (col < low) | (col > high)
        columns.append(col)
        names.append(name)
        kinds.append(kind)

    features = np.column_stack(columns) if columns else np.empty((ds.n_rows, 0))
    out = ds.with_features(features, names, kinds, levels)

    if training:
        keep = np.ones(out.n_rows, dtype=bool)
        if plan.drop_duplicates:
            dupes = duplicate_mask(out)
            keep &= ~dupes
        if plan.remove_outliers:
            keep &= ~outlier_rows
        removed = int((~keep).sum())
        if removed:
            logger.info("Removed %d training rows (duplicates/outliers)", removed)
            out = out.subset(np.flatnonzero(keep))
    return out


def missingness_matrix(ds: Dataset) -> pd.DataFrame:
    """0/1 matrix marking missing cells; the data behind the quality heatmap."""
    return pd.DataFrame(
        np.isnan(ds.features).astype(np.int8),
        columns=list(ds.feature_names),
    )


def balance_unique(ds: Dataset, seed: int = 42) -> Dataset:
    """
    Remove duplicate feature rows, then undersample the majority class to the
    minority count. The surviving rows keep their original relative order.
    """
    if 0 in ds.class_counts():
        raise ValueError("balance_unique needs both classes present")
    unique_rows = np.flatnonzero(~duplicate_mask(ds))
    labels = ds.labels[unique_rows]
    benign = unique_rows[labels == 0]
    malware = unique_rows[labels == 1]
    if benign.size == 0 or malware.size == 0:
        raise ValueError("deduplication emptied a class")

    minority, majority = (benign, malware) if benign.size <= malware.size else (malware, benign)
    rng = np.random.default_rng(seed)
    sampled = rng.choice(majority, size=minority.size, replace=False)
    rows = np.sort(np.concatenate([minority, sampled]))
    logger.info(
        "Balanced unique sample: %d -> %d rows (%d per class)",
        ds.n_rows, rows.size, minority.size,
    )
    return ds.subset(rows)
