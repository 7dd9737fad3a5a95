"""Core pipeline: stage orchestration, run logging, replay and re-explanation.

A run executes load -> profile -> balance -> split -> preprocess -> features
-> tune -> fit -> evaluate -> explain -> report, logging each stage's outputs
to the run store. Any stage failure finishes the run as ``failed`` with the
stage name recorded in the ``failed_stage`` param.
"""
import io
import json
import logging
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from droidauto.config import Config, config_from_dict, config_to_dict, get_config
from droidauto.data import (
    Dataset,
    apply_preprocessor,
    balance_unique,
    fit_preprocessor,
    kfold_plan,
    load_csv,
    missingness_matrix,
    profile_dataset,
    snapshot_environment,
    split_holdout,
)
from droidauto.data.profiler import profile_to_json
from droidauto.explain import export_tree, local_surrogate, permutation_importance, shapley_exact, shapley_sampled
from droidauto.explain.shapley import MAX_EXACT_FEATURES
from droidauto.features import fit_feature_stage
from droidauto.hpo import SearchSpace, Trial, default_space, optimize
from droidauto.metrics import curves_frame, evaluate, probe
from droidauto.models import (
    ROSTER_PRESETS,
    MemberConfig,
    ModelArtifact,
    load_model,
    member_config,
    predict,
    predict_proba,
    save_model,
    train_model,
    train_voting_ensemble,
)
from droidauto.models.ensemble import EnsembleModel
from droidauto.tracking import RunStore, render_missingness, render_report
from droidauto.tracking.report import (
    ATTRIBUTION_ARTIFACT,
    BEST_PARAMS_ARTIFACT,
    FEATURES_ARTIFACT,
    IMPORTANCE_ARTIFACT,
    MODEL_METRICS_ARTIFACT,
    PREPROCESS_ARTIFACT,
    PROFILE_ARTIFACT,
    REPORT_ARTIFACT,
    RESOURCES_ARTIFACT,
)

logger = logging.getLogger(__name__)

STAGES = (
    "load", "profile", "balance", "split", "preprocess", "features",
    "tune", "fit", "evaluate", "explain", "report",
)
MODEL_ARTIFACT = "model.npz"
EXPLAIN_DATA_ARTIFACT = "explain_data.npz"
TREE_ARTIFACT = "tree.dot"
LOG_ARTIFACT = "run.log"
EXPLAIN_METHODS = ("shapley", "shapley_exact", "surrogate", "importance")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    run_id: str
    status: str
    metrics: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    best_params: dict[str, dict] = field(default_factory=dict)


@contextmanager
def _stage(name: str):
    logger.info("Stage: %s", name)
    with probe(name):
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc


@contextmanager
def _capture_log():
    """Collect droidauto log records (INFO and up) emitted while the block runs."""
    buffer = io.StringIO()
    handler = logging.StreamHandler(buffer)
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    pkg_logger = logging.getLogger("droidauto")
    previous = pkg_logger.level
    if pkg_logger.getEffectiveLevel() > logging.INFO:
        pkg_logger.setLevel(logging.INFO)
    pkg_logger.addHandler(handler)
    try:
        yield buffer
    finally:
        pkg_logger.removeHandler(handler)
        pkg_logger.setLevel(previous)


def _csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def _flatten(snapshot: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in snapshot.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict) and value and key != "params":
            out.update(_flatten(value, f"{name}."))
        else:
            out[name] = value
    return out


def setup(cfg=None) -> RunStore:
    """Open the run store named by the config."""
    if cfg is None:
        cfg = get_config()
    return RunStore(cfg.store_root)


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------

def _trial_logger(store: RunStore, study_id: str, name: str):
    def log_trial(trial: Trial) -> None:
        run = store.start_run({"member": name, "trial_id": trial.trial_id}, parent=study_id, name=f"trial/{trial.trial_id}")
        store.log_params(run.run_id, {**trial.params, "trial.status": trial.status})
        scores = {"recall": trial.value, "mcc": trial.secondary}
        store.log_metrics(run.run_id, {k: v for k, v in scores.items() if v is not None})
        for budget, recall in trial.intermediate:
            store.log_metrics(run.run_id, {"rung_recall": recall}, step=budget)
        store.finish_run(run.run_id, "failed" if trial.status == "failed" else "finished")
    return log_trial


def tune_member(store: RunStore, parent_id: str, name: str, train: Dataset, cfg: Config) -> MemberConfig:
    """
    Tune one roster member in its own child run (one grandchild run per
    trial) and return the member configured with the best trial's params.
    """
    family, preset = ROSTER_PRESETS[name]
    fixed = dict(cfg.models.params.get(name, {}))
    if not cfg.hpo.enabled:
        return member_config(name, {**fixed, "seed": cfg.hpo.seed})

    space = default_space(family)
    space = SearchSpace(family, {k: v for k, v in space.params.items() if k not in fixed})
    study_run = store.start_run(
        {"member": name, "family": family, "space": {k: repr(v) for k, v in space.params.items()}},
        parent=parent_id,
        name=f"hpo/{name}",
    )
    validation = None
    if cfg.hpo.validation == "kfold":
        validation = kfold_plan(train, k=cfg.hpo.folds, seed=cfg.hpo.seed)
    try:
        study = optimize(
            train,
            space,
            n_trials=cfg.hpo.n_trials,
            seed=cfg.hpo.seed,
            validation=validation,
            pruner=cfg.hpo.pruner,
            eta=cfg.hpo.eta,
            rungs=cfg.hpo.rungs,
            min_mcc_guard=cfg.hpo.min_mcc_guard,
            callbacks=[_trial_logger(store, study_run.run_id, name)],
            base_params={**preset, **fixed},
            n_jobs=cfg.n_jobs,
        )
    except Exception:
        store.finish_run(study_run.run_id, "failed")
        raise

    best = study.best
    statuses = [t.status for t in study.trials]
    store.log_params(study_run.run_id, {
        "best_trial": best.trial_id,
        "guard_relaxed": study.guard_relaxed,
        **{f"best.{k}": v for k, v in best.params.items()},
    })
    store.log_metrics(study_run.run_id, {
        "best_recall": best.value,
        "best_mcc": best.secondary,
        "n_complete": statuses.count("complete"),
        "n_pruned": statuses.count("pruned"),
        "n_failed": statuses.count("failed"),
        "total_budget": study.total_budget,
    })
    trials = pd.DataFrame([
        {"trial_id": t.trial_id, "status": t.status, "recall": t.value, "mcc": t.secondary,
         "budget": t.budget, "duration": t.duration, "params": json.dumps(t.params, sort_keys=True, default=str)}
        for t in study.trials
    ])
    store.log_artifact(study_run.run_id, "trials.csv", _csv(trials))
    store.finish_run(study_run.run_id, "finished")
    return MemberConfig(name=name, family=family, params=dict(best.params))


# ---------------------------------------------------------------------------
# Fit / evaluate / explain helpers
# ---------------------------------------------------------------------------

def fit_final_model(train: Dataset, members: list[MemberConfig], cfg: Config) -> ModelArtifact:
    if len(members) == 1:
        m = members[0]
        return train_model(m.family, train, m.params, name=m.name, n_jobs=cfg.n_jobs)
    ensemble = train_voting_ensemble(
        train, members, voting=cfg.models.voting, weights=cfg.models.weights, n_jobs=cfg.n_jobs
    )
    return ModelArtifact(
        name="ensemble",
        family="ensemble",
        params={"voting": cfg.models.voting, "members": [m.name for m in ensemble.members]},
        model=ensemble,
        feature_names=train.feature_names,
        n_train=train.n_rows,
        trained_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def _members_of(model: ModelArtifact) -> list[ModelArtifact]:
    if isinstance(model.model, EnsembleModel):
        return list(model.model.members)
    return []


def model_metrics_frame(model: ModelArtifact, test: Dataset) -> pd.DataFrame:
    """Test metrics for every ensemble member and the combined model."""
    rows = []
    for m in [*_members_of(model), model]:
        metrics = evaluate(test.labels, predict_proba(m, test.features)).to_dict()
        rows.append({"model": m.name, "family": m.family, **metrics})
    return pd.DataFrame(rows)


def _background(train: Dataset, size: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    n = min(size, train.n_rows)
    return train.subset(np.sort(rng.choice(train.n_rows, size=n, replace=False)))


def _explained_row(model: ModelArtifact, test: Dataset) -> int:
    """First test row predicted as malware, else row 0."""
    flagged = np.flatnonzero(predict(model, test.features) == 1)
    return int(flagged[0]) if flagged.size else 0


def attribution_frame(model, x: np.ndarray, background: Dataset, cfg: Config) -> pd.DataFrame:
    frame = pd.DataFrame({"feature": list(background.feature_names), "value": x})
    mode = cfg.explain.shapley
    if mode == "auto":
        mode = "exact" if background.n_cols <= MAX_EXACT_FEATURES else "sampled"
    if mode == "exact":
        frame["shapley"] = shapley_exact(model, x, background).values
    elif mode == "sampled":
        attribution = shapley_sampled(model, x, background, n_samples=cfg.explain.shapley_samples, seed=cfg.explain.seed)
        frame["shapley"] = attribution.values
        frame["shapley_std_error"] = attribution.std_error
    if cfg.explain.surrogate:
        local = local_surrogate(model, x, background, n_perturbations=cfg.explain.n_perturbations, seed=cfg.explain.seed)
        frame["surrogate_coefficient"] = local.coefficients
        if local.fidelity is None:
            logger.info("Surrogate fidelity undefined (constant predictions in the neighbourhood)")
        else:
            logger.info("Surrogate fidelity (weighted R^2): %.4f", local.fidelity)
    return frame


def _pack_explain_data(test: Dataset, background: Dataset) -> bytes:
    buffer = io.BytesIO()
    np.savez_compressed(
        buffer,
        test_features=test.features,
        test_labels=test.labels,
        background_features=background.features,
        background_labels=background.labels,
        feature_names=np.array(test.feature_names, dtype=str),
        feature_kinds=np.array([k.value for k in test.feature_kinds], dtype=str),
    )
    return buffer.getvalue()


def _unpack_explain_data(data: bytes) -> tuple[Dataset, Dataset]:
    with np.load(io.BytesIO(data), allow_pickle=False) as arrays:
        names = tuple(str(n) for n in arrays["feature_names"])
        kinds = tuple(str(k) for k in arrays["feature_kinds"])
        test = Dataset(arrays["test_features"], arrays["test_labels"], names, kinds)
        background = Dataset(arrays["background_features"], arrays["background_labels"], names, kinds)
    return test, background


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def run_pipeline(cfg: Config | None = None, store: RunStore | None = None) -> PipelineResult:
    """Run every stage on ``cfg.data.path`` and return the finished run."""
    if cfg is None:
        cfg = get_config()
    store = store or setup(cfg)
    if not cfg.data.path:
        raise ValueError("data.path is not set")
    snapshot = config_to_dict(cfg)
    run = store.start_run(snapshot, name=Path(cfg.data.path).stem, env=snapshot_environment().to_dict())
    run_id = run.run_id
    logger.info("Run %s started on %s", run_id, cfg.data.path)
    store.log_params(run_id, {**_flatten(snapshot), "dataset": Path(cfg.data.path).stem})
    started = time.perf_counter()

    with _capture_log() as run_log:
        try:
            with probe("pipeline") as total:
                metrics, best_params = _execute(store, run_id, cfg)
            store.log_artifact(run_id, RESOURCES_ARTIFACT, json.dumps(total.to_dict(), indent=2))
            if cfg.report.enabled:
                with _stage("report"):
                    report = render_report(store, run_id, final_status="finished")
                    store.log_artifact(run_id, REPORT_ARTIFACT, report)
        except BaseException as exc:
            stage = exc.stage if isinstance(exc, StageError) else "pipeline"
            logger.error("Run %s failed in stage %s: %s", run_id, stage, getattr(exc, "cause", exc))
            _fail_run(store, run_id, stage, run_log.getvalue())
            raise
    store.log_artifact(run_id, LOG_ARTIFACT, run_log.getvalue())
    store.finish_run(run_id, "finished")
    wall = time.perf_counter() - started
    logger.info("Run %s finished in %.1fs: recall=%.4f mcc=%.4f", run_id, wall, metrics["recall"], metrics["mcc"])
    return PipelineResult(run_id=run_id, status="finished", metrics=metrics, wall_time=wall, best_params=best_params)


def _fail_run(store: RunStore, run_id: str, stage: str, log_text: str) -> None:
    """Best-effort bookkeeping for a failed run; the run always ends as failed."""
    for record in (
        lambda: store.log_params(run_id, {"failed_stage": stage}),
        lambda: store.log_artifact(run_id, LOG_ARTIFACT, log_text),
    ):
        try:
            record()
        except Exception as exc:
            logger.warning("Could not record failure details for run %s: %s", run_id, exc)
    store.finish_run(run_id, "failed")


def _execute(store: RunStore, run_id: str, cfg: Config) -> tuple[dict, dict]:
    with _stage("load"):
        ds = load_csv(
            cfg.data.path,
            label_column=cfg.data.label,
            malware_label=cfg.data.malware_label,
            strict=cfg.data.strict,
            categorical=cfg.data.categorical,
        )

    with _stage("profile"):
        profile = profile_dataset(ds)
        store.log_artifact(run_id, PROFILE_ARTIFACT, profile_to_json(profile))
        missing = missingness_matrix(ds)
        store.log_artifact(run_id, "missingness.csv", _csv(missing))
        if cfg.report.heatmaps:
            with tempfile.TemporaryDirectory() as tmp:
                png = render_missingness(missing, Path(tmp) / "missingness.png")
                store.log_artifact(run_id, "missingness.png", png)
        if not profile.is_balanced:
            logger.info("Class imbalance ratio %.2f", profile.imbalance_ratio)

    with _stage("balance"):
        if cfg.preprocess.balance == "unique_undersample":
            ds = balance_unique(ds, seed=cfg.split.seed)
        store.log_params(run_id, {"rows_after_balance": ds.n_rows})

    with _stage("split"):
        plan = split_holdout(ds, ratio=cfg.split.ratio, seed=cfg.split.seed, stratified=cfg.split.stratified)
        train, test = ds.subset(plan.train_indices), ds.subset(plan.test_indices)
        partition = pd.DataFrame({
            "row": np.concatenate([plan.train_indices, plan.test_indices]),
            "partition": ["train"] * plan.train_indices.size + ["test"] * plan.test_indices.size,
        }).sort_values("row", kind="stable")
        store.log_artifact(run_id, "split.csv", _csv(partition))

    with _stage("preprocess"):
        prep = fit_preprocessor(train, cfg.preprocess.options())
        train = apply_preprocessor(prep, train, training=True)
        test = apply_preprocessor(prep, test)
        store.log_artifact(run_id, PREPROCESS_ARTIFACT, json.dumps(prep.to_dict(), indent=2, default=str))

    with _stage("features"):
        feature_stage = fit_feature_stage(train, cfg.features.options())
        train, test = feature_stage.apply(train), feature_stage.apply(test)
        store.log_artifact(run_id, FEATURES_ARTIFACT, _csv(feature_stage.summary()))
        store.log_params(run_id, {"n_selected_features": train.n_cols})
        if train.n_cols == 0:
            raise StageError("features", ValueError("feature selection kept no columns"))

    with _stage("tune"):
        members = [tune_member(store, run_id, name, train, cfg) for name in cfg.models.roster]
        best_params = {m.name: m.params for m in members}
        store.log_artifact(run_id, BEST_PARAMS_ARTIFACT, json.dumps(best_params, indent=2, sort_keys=True, default=str))

    with _stage("fit"):
        model = fit_final_model(train, members, cfg)
        with tempfile.TemporaryDirectory() as tmp:
            store.log_artifact(run_id, MODEL_ARTIFACT, save_model(model, Path(tmp) / MODEL_ARTIFACT))
        trees = [m for m in [model, *_members_of(model)] if m.family == "decision_tree"]
        if cfg.explain.tree_export and trees:
            store.log_artifact(run_id, TREE_ARTIFACT, export_tree(trees[0].model, train.feature_names))

    with _stage("evaluate"):
        proba = predict_proba(model, test.features)
        metric_set = evaluate(test.labels, proba)
        metrics = metric_set.to_dict()
        store.log_metrics(run_id, metrics)
        store.log_artifact(run_id, MODEL_METRICS_ARTIFACT, _csv(model_metrics_frame(model, test)))
        predictions = pd.DataFrame({
            "row": plan.test_indices,
            "y_true": test.labels,
            "y_pred": (proba[:, 1] >= proba[:, 0]).astype(int),
            "p_malware": proba[:, 1],
        })
        store.log_artifact(run_id, "predictions.csv", _csv(predictions))
        if metric_set.roc_auc is not None:
            pr, roc = curves_frame(test.labels, proba[:, 1])
            store.log_artifact(run_id, "pr_curve.csv", _csv(pr))
            store.log_artifact(run_id, "roc_curve.csv", _csv(roc))

    with _stage("explain"):
        background = _background(train, cfg.explain.background_size, cfg.explain.seed)
        store.log_artifact(run_id, EXPLAIN_DATA_ARTIFACT, _pack_explain_data(test, background))
        if cfg.explain.importance:
            report = permutation_importance(
                model, test, metric=cfg.explain.importance_metric,
                repeats=cfg.explain.repeats, seed=cfg.explain.seed,
            )
            frame = report.to_frame()
            intrinsic = model.feature_importances()
            if intrinsic is not None:
                frame["intrinsic"] = intrinsic
            store.log_artifact(run_id, IMPORTANCE_ARTIFACT, _csv(frame))
        if cfg.explain.shapley != "off" or cfg.explain.surrogate:
            row = _explained_row(model, test)
            store.log_params(run_id, {"explained_row": int(plan.test_indices[row])})
            frame = attribution_frame(model, test.features[row], background, cfg)
            store.log_artifact(run_id, ATTRIBUTION_ARTIFACT, _csv(frame))

    return metrics, best_params


def replay_run(store: RunStore, run_id: str) -> PipelineResult:
    """Re-execute a run from its stored config snapshot as a new run."""
    original = store.get_run(run_id)
    cfg = config_from_dict(original.config)
    cfg.tracking.root = str(store.root)
    logger.info("Replaying run %s", run_id)
    return run_pipeline(cfg, store)


def load_run_model(store: RunStore, run_id: str) -> ModelArtifact:
    data = store.read_artifact(run_id, MODEL_ARTIFACT)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / MODEL_ARTIFACT
        path.write_bytes(data)
        return load_model(path)


def select_member(model: ModelArtifact, name: str) -> ModelArtifact:
    """One member of an ensemble (a single model matches its own name)."""
    candidates = _members_of(model) or [model]
    for m in candidates:
        if m.name == name:
            return m
    raise ValueError(f"run has no member {name!r}; members: {', '.join(m.name for m in candidates)}")


def explain_run(
    store: RunStore,
    run_id: str,
    method: str = "shapley",
    n_samples: int = 2000,
    seed: int = 42,
    row: int | None = None,
    repeats: int = 5,
    member: str | None = None,
) -> pd.DataFrame:
    """
    Recompute an explanation for a stored run.

    ``row`` indexes the run's test partition (default: the first row the
    model flags as malware). ``member`` names one ensemble member to explain
    instead of the ensemble itself.
    """
    if method not in EXPLAIN_METHODS:
        raise ValueError(f"method must be one of {EXPLAIN_METHODS}, got {method!r}")
    model = load_run_model(store, run_id)
    if member is not None:
        model = select_member(model, member)
    test, background = _unpack_explain_data(store.read_artifact(run_id, EXPLAIN_DATA_ARTIFACT))
    if method == "importance":
        return permutation_importance(model, test, repeats=repeats, seed=seed).to_frame()
    if row is None:
        row = _explained_row(model, test)
    if not 0 <= row < test.n_rows:
        raise ValueError(f"row {row} outside the test partition (0..{test.n_rows - 1})")
    x = test.features[row]
    if method == "shapley":
        return shapley_sampled(model, x, background, n_samples=n_samples, seed=seed).to_frame()
    if method == "shapley_exact":
        return shapley_exact(model, x, background).to_frame()
    return local_surrogate(model, x, background, n_perturbations=max(2, n_samples), seed=seed).to_frame()
