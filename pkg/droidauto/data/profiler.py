"""Data Info stage: dataset profile and host environment snapshot."""
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import psutil

from droidauto.data.dataset_io import Dataset, FeatureKind

logger = logging.getLogger(__name__)

NOT_COLLECTED = "not collected"
UNAVAILABLE = None

# Imbalance ratios at or below this count as balanced.
BALANCE_TOLERANCE = 1.1


@dataclass(frozen=True)
class DatasetProfile:
    n_rows: int
    n_cols: int
    feature_names: tuple[str, ...]
    missing_fraction: tuple[float, ...]
    duplicate_rows: int
    label_conflicts: int
    class_counts: tuple[int, int]
    imbalance_ratio: float
    kind_counts: dict[str, int] = field(default_factory=dict)
    source_id: str = ""

    @property
    def is_balanced(self) -> bool:
        return self.imbalance_ratio <= BALANCE_TOLERANCE

    @property
    def missing_cells(self) -> int:
        return int(round(sum(self.missing_fraction) * self.n_rows))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["missing_fraction"] = dict(zip(self.feature_names, self.missing_fraction))
        del out["feature_names"]
        out["class_counts"] = {"benign": self.class_counts[0], "malware": self.class_counts[1]}
        out["is_balanced"] = self.is_balanced
        if np.isinf(self.imbalance_ratio):
            out["imbalance_ratio"] = "inf"
        return out


@dataclass(frozen=True)
class EnvSnapshot:
    os_name: str | None
    os_version: str | None
    python_version: str
    cpu_count: int | None
    total_memory: int | None
    timestamp: str
    network: str = NOT_COLLECTED

    def to_dict(self) -> dict:
        return asdict(self)


def _feature_frame(ds: Dataset) -> pd.DataFrame:
    return pd.DataFrame(ds.features, columns=range(ds.n_cols))


def duplicate_mask(ds: Dataset) -> np.ndarray:
    """True for every row whose feature values repeat an earlier row (labels ignored)."""
    if ds.n_cols == 0:
        return np.arange(ds.n_rows) > 0
    return _feature_frame(ds).duplicated(keep="first").to_numpy()


def count_label_conflicts(ds: Dataset) -> int:
    """Number of distinct feature rows observed with both labels."""
    if ds.n_rows == 0:
        return 0
    if ds.n_cols == 0:
        keys = np.zeros(ds.n_rows, dtype=np.int64)
    else:
        frame = _feature_frame(ds)
        keys = frame.groupby(list(frame.columns), dropna=False, sort=False).ngroup().to_numpy()
    per_key = pd.DataFrame({"key": keys, "label": ds.labels}).groupby("key")["label"].nunique()
    return int((per_key > 1).sum())


def profile_dataset(ds: Dataset) -> DatasetProfile:
    """Exact counts describing dimensionality, kinds, balance and integrity."""
    if ds.n_rows == 0:
        raise ValueError("cannot profile an empty dataset")

    missing = np.isnan(ds.features).mean(axis=0) if ds.n_cols else np.empty(0)
    benign, malware = ds.class_counts()
    minority, majority = sorted((benign, malware))
    ratio = float("inf") if minority == 0 else majority / minority

    kind_counts = {kind.value: 0 for kind in FeatureKind}
    for kind in ds.feature_kinds:
        kind_counts[kind.value] += 1

    profile = DatasetProfile(
        n_rows=ds.n_rows,
        n_cols=ds.n_cols,
        feature_names=ds.feature_names,
        missing_fraction=tuple(float(m) for m in missing),
        duplicate_rows=int(duplicate_mask(ds).sum()),
        label_conflicts=count_label_conflicts(ds),
        class_counts=(benign, malware),
        imbalance_ratio=ratio,
        kind_counts=kind_counts,
        source_id=ds.source_id,
    )
    logger.info(
        "Profile: %d rows, %d cols, %d duplicates, imbalance %.3f",
        profile.n_rows, profile.n_cols, profile.duplicate_rows, ratio,
    )
    return profile


def profile_to_json(profile: DatasetProfile, path: Path | None = None) -> str:
    text = json.dumps(profile.to_dict(), indent=2)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _probe(fn):
    try:
        return fn()
    except Exception as e:  # probe failures never abort a run
        logger.warning("Environment probe %s failed: %s", getattr(fn, "__name__", fn), e)
        return UNAVAILABLE


def snapshot_environment() -> EnvSnapshot:
    """Host facts; any probe that fails is recorded as unavailable."""
    cpu = _probe(lambda: psutil.cpu_count(logical=True) or os.cpu_count())
    memory = _probe(lambda: int(psutil.virtual_memory().total))
    return EnvSnapshot(
        os_name=_probe(platform.system) or UNAVAILABLE,
        os_version=_probe(platform.release) or UNAVAILABLE,
        python_version=sys.version.split()[0],
        cpu_count=cpu,
        total_memory=memory,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
