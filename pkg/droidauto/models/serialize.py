"""Model container: a single ``.npz`` file holding every numeric array plus a
JSON header (under the key ``__header__``) that describes how to rebuild the
model. No pickle is involved; loading uses ``allow_pickle=False``.

The layout is documented in docs/artifacts.md.
"""
import json
from pathlib import Path

import numpy as np

from droidauto.models.ensemble import EnsembleModel
from droidauto.models.forest import ForestModel
from droidauto.models.gbt import BoostedTree, GbtModel
from droidauto.models.knn import KnnModel
from droidauto.models.tree import TreeModel
from droidauto.models.zoo import ModelArtifact

FORMAT_NAME = "droidauto-model"
FORMAT_VERSION = 1
HEADER_KEY = "__header__"

_TREE_ARRAYS = ("feature", "threshold", "left", "right", "value", "n_node_samples", "impurity")
_BOOSTED_ARRAYS = (
    "feature", "bin_threshold", "threshold", "left", "right", "value", "gain", "n_node_samples",
)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot store {type(obj).__name__} in a model header")


class _Packer:
    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}

    def put(self, key: str, array) -> str:
        if key in self.arrays or key == HEADER_KEY:
            raise ValueError(f"duplicate container key {key}")
        self.arrays[key] = np.asarray(array)
        return key

    def tree(self, prefix: str, t: TreeModel) -> dict:
        return {
            "arrays": {a: self.put(f"{prefix}/{a}", getattr(t, a)) for a in _TREE_ARRAYS},
            "n_features": t.n_features,
            "max_depth": t.max_depth,
            "min_samples_leaf": t.min_samples_leaf,
            "n_train": t.n_train,
            "criterion": t.criterion,
        }

    def boosted(self, prefix: str, t: BoostedTree) -> dict:
        return {"arrays": {a: self.put(f"{prefix}/{a}", getattr(t, a)) for a in _BOOSTED_ARRAYS}}

    def model(self, prefix: str, m) -> dict:
        if isinstance(m, TreeModel):
            return {"kind": "tree", **self.tree(prefix, m)}
        if isinstance(m, ForestModel):
            return {
                "kind": "forest",
                "trees": [self.tree(f"{prefix}/trees/{i}", t) for i, t in enumerate(m.trees)],
                "tree_seeds": list(m.tree_seeds),
                "mode": m.mode,
                "max_features": m.max_features,
                "bootstrap": m.bootstrap,
                "seed": m.seed,
                "n_features": m.n_features,
                "max_depth": m.max_depth,
                "min_samples_leaf": m.min_samples_leaf,
            }
        if isinstance(m, GbtModel):
            return {
                "kind": "gbt",
                "trees": [self.boosted(f"{prefix}/trees/{i}", t) for i, t in enumerate(m.trees)],
                "bin_edges": [self.put(f"{prefix}/edges/{j}", e) for j, e in enumerate(m.bin_edges)],
                "target_encodings": {
                    str(j): self.put(f"{prefix}/encodings/{j}", table)
                    for j, table in m.target_encodings.items()
                },
                "learning_rate": m.learning_rate,
                "init_score": m.init_score,
                "n_features": m.n_features,
                "growth": m.growth,
                "max_leaves": m.max_leaves,
                "max_depth": m.max_depth,
                "min_samples_leaf": m.min_samples_leaf,
                "l2": m.l2,
                "loss_trace": list(m.loss_trace),
                "target_prior": m.target_prior,
            }
        if isinstance(m, KnnModel):
            return {
                "kind": "knn",
                "X": self.put(f"{prefix}/X", m.X),
                "y": self.put(f"{prefix}/y", m.y),
                "k": m.k,
                "metric": m.metric,
            }
        if isinstance(m, EnsembleModel):
            return {
                "kind": "ensemble",
                "members": [self.artifact(f"{prefix}/members/{i}", a) for i, a in enumerate(m.members)],
                "weights": self.put(f"{prefix}/weights", m.weights),
                "voting": m.voting,
            }
        raise TypeError(f"cannot serialize model of type {type(m).__name__}")

    def artifact(self, prefix: str, a: ModelArtifact) -> dict:
        return {
            "name": a.name,
            "family": a.family,
            "params": a.params,
            "feature_names": list(a.feature_names),
            "n_train": a.n_train,
            "trained_at": a.trained_at,
            "model": self.model(f"{prefix}/model", a.model),
        }


class _Unpacker:
    def __init__(self, arrays):
        self.arrays = arrays

    def get(self, key: str) -> np.ndarray:
        try:
            return np.array(self.arrays[key])
        except KeyError:
            raise ValueError(f"model container is missing array {key}") from None

    def tree(self, h: dict) -> TreeModel:
        return TreeModel(
            **{a: self.get(k) for a, k in h["arrays"].items()},
            n_features=h["n_features"],
            max_depth=h["max_depth"],
            min_samples_leaf=h["min_samples_leaf"],
            n_train=h["n_train"],
            criterion=h["criterion"],
        )

    def model(self, h: dict):
        kind = h.get("kind")
        if kind == "tree":
            return self.tree(h)
        if kind == "forest":
            return ForestModel(
                trees=tuple(self.tree(t) for t in h["trees"]),
                tree_seeds=tuple(h["tree_seeds"]),
                mode=h["mode"],
                max_features=h["max_features"],
                bootstrap=h["bootstrap"],
                seed=h["seed"],
                n_features=h["n_features"],
                max_depth=h["max_depth"],
                min_samples_leaf=h["min_samples_leaf"],
            )
        if kind == "gbt":
            return GbtModel(
                trees=tuple(
                    BoostedTree(**{a: self.get(k) for a, k in t["arrays"].items()}) for t in h["trees"]
                ),
                learning_rate=h["learning_rate"],
                bin_edges=tuple(self.get(k) for k in h["bin_edges"]),
                init_score=h["init_score"],
                n_features=h["n_features"],
                growth=h["growth"],
                max_leaves=h["max_leaves"],
                max_depth=h["max_depth"],
                min_samples_leaf=h["min_samples_leaf"],
                l2=h["l2"],
                loss_trace=tuple(h["loss_trace"]),
                target_encodings={int(j): self.get(k) for j, k in h["target_encodings"].items()},
                target_prior=h["target_prior"],
            )
        if kind == "knn":
            return KnnModel(X=self.get(h["X"]), y=self.get(h["y"]), k=h["k"], metric=h["metric"])
        if kind == "ensemble":
            return EnsembleModel(
                members=tuple(self.artifact(a) for a in h["members"]),
                weights=self.get(h["weights"]),
                voting=h["voting"],
            )
        raise ValueError(f"unknown model kind {kind!r} in container")

    def artifact(self, h: dict) -> ModelArtifact:
        return ModelArtifact(
            name=h["name"],
            family=h["family"],
            params=h["params"],
            model=self.model(h["model"]),
            feature_names=tuple(h["feature_names"]),
            n_train=h["n_train"],
            trained_at=h["trained_at"],
        )


def save_model(artifact: ModelArtifact, path: Path | str) -> Path:
    """Write ``artifact`` to ``path`` (an ``.npz`` file)."""
    path = Path(path)
    packer = _Packer()
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "artifact": packer.artifact("root", artifact),
    }
    encoded = np.frombuffer(json.dumps(header, sort_keys=True, default=_json_default).encode("utf-8"), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez_compressed(fh, **{HEADER_KEY: encoded}, **packer.arrays)
    return path


def load_model(path: Path | str) -> ModelArtifact:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if HEADER_KEY not in data.files:
            raise ValueError(f"{path} is not a model container (no header)")
        header = json.loads(bytes(data[HEADER_KEY]).decode("utf-8"))
        if header.get("format") != FORMAT_NAME:
            raise ValueError(f"{path} has unknown format {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(
                f"{path} uses container version {header.get('version')}; "
                f"this build reads version {FORMAT_VERSION}"
            )
        arrays = {k: data[k] for k in data.files}
    return _Unpacker(arrays).artifact(header["artifact"])
