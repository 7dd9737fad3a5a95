"""Shared fixtures: small synthetic permission/API-call datasets."""
import numpy as np
import pandas as pd
import pytest

from droidauto.data.dataset_io import Dataset, FeatureKind


def make_dataset(X, y, names=None, kinds=None) -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    names = names or [f"f{j}" for j in range(X.shape[1])]
    if kinds is None:
        kinds = [
            FeatureKind.BINARY if np.isin(X[:, j][~np.isnan(X[:, j])], (0, 1)).all() else FeatureKind.NUMERIC
            for j in range(X.shape[1])
        ]
    return Dataset(features=X, labels=y, feature_names=names, feature_kinds=kinds)


def synthetic_frame(n_rows: int = 160, seed: int = 0) -> pd.DataFrame:
    """
    Binary features where SEND_SMS or (READ_CONTACTS and INTERNET) marks
    malware; the remaining columns are noise.
    """
    rng = np.random.default_rng(seed)
    names = ["SEND_SMS", "READ_CONTACTS", "INTERNET", "CAMERA", "VIBRATE", "WAKE_LOCK"]
    X = rng.integers(0, 2, size=(n_rows, len(names)))
    y = X[:, 0] | (X[:, 1] & X[:, 2])
    frame = pd.DataFrame(X, columns=names)
    frame["class"] = np.where(y == 1, "malware", "benign")
    return frame


@pytest.fixture
def synthetic_ds() -> Dataset:
    frame = synthetic_frame()
    X = frame.drop(columns="class").to_numpy()
    y = (frame["class"] == "malware").to_numpy().astype(int)
    return make_dataset(X, y, names=list(frame.columns[:-1]))


@pytest.fixture
def synthetic_csv(tmp_path):
    path = tmp_path / "perms.csv"
    synthetic_frame().to_csv(path, index=False)
    return path
