"""Recall-first hyperparameter search.

Trials are sampled up front by a seeded sampler, so a study with the same
seed always visits the same configurations. With the halving pruner, a trial
for an extensible family (forests, boosting) is trained rung by rung with a
growing budget and stopped when its validation recall falls below the median
of earlier trials at the same rung.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol

import numpy as np
from joblib import Parallel, delayed

from droidauto.data.dataset_io import Dataset, FoldPlan, SplitPlan, split_holdout
from droidauto.metrics import classification_metrics, confusion
from droidauto.models import BUDGET_PARAMS, FAMILIES, ROSTER_PRESETS, extend_model, predict, train_model

logger = logging.getLogger(__name__)

TRIAL_STATES = ("complete", "pruned", "failed")
PRUNERS = ("off", "halving")
# Trials needed at a rung before the median rule may prune.
N_STARTUP_TRIALS = 2


# ---------------------------------------------------------------------------
# Search spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntRange:
    low: int
    high: int
    step: int = 1

    def __post_init__(self):
        if self.step < 1 or self.low > self.high:
            raise ValueError(f"empty integer range {self}")

    @property
    def n_values(self) -> int:
        return (self.high - self.low) // self.step + 1

    def sample(self, rng: np.random.Generator) -> int:
        return int(self.low + self.step * rng.integers(self.n_values))

    def contains(self, value) -> bool:
        return (
            isinstance(value, (int, np.integer))
            and self.low <= value <= self.high
            and (value - self.low) % self.step == 0
        )


@dataclass(frozen=True)
class RealRange:
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low <= self.high:
            raise ValueError(f"empty real range {self}")
        if self.log and self.low <= 0:
            raise ValueError("log-scale ranges must be strictly positive")

    def sample(self, rng: np.random.Generator) -> float:
        if self.log:
            value = math.exp(rng.uniform(math.log(self.low), math.log(self.high)))
        else:
            value = rng.uniform(self.low, self.high)
        return float(min(max(value, self.low), self.high))

    def contains(self, value) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise ValueError("a categorical domain needs at least one choice")

    def sample(self, rng: np.random.Generator):
        return self.choices[int(rng.integers(len(self.choices)))]

    def contains(self, value) -> bool:
        return value in self.choices


Domain = IntRange | RealRange | Categorical


@dataclass(frozen=True)
class SearchSpace:
    family: str
    params: dict[str, Domain]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")


_TREE_SPACE = {"max_depth": IntRange(2, 20), "min_samples_leaf": IntRange(1, 50)}
_FOREST_SPACE = {
    "n_trees": IntRange(50, 400),
    "max_features": Categorical(("sqrt", "log2", "all")),
    "max_depth": IntRange(4, 24),
}
_GBT_SPACE = {
    "n_rounds": IntRange(50, 500),
    "learning_rate": RealRange(0.01, 0.3, log=True),
    "max_leaves": IntRange(15, 127),
}
_KNN_SPACE = {"k": IntRange(1, 25, step=2), "metric": Categorical(("euclidean", "hamming"))}

_SPACES = {
    "decision_tree": _TREE_SPACE,
    "random_forest": _FOREST_SPACE,
    "extra_trees": _FOREST_SPACE,
    "gbt": _GBT_SPACE,
    "knn": _KNN_SPACE,
}


def default_space(family: str) -> SearchSpace:
    """The documented space for a model family (roster names are accepted too)."""
    if family not in _SPACES and family in ROSTER_PRESETS:
        family = ROSTER_PRESETS[family][0]
    if family not in _SPACES:
        raise ValueError(f"no search space for unknown family {family!r}")
    return SearchSpace(family=family, params=dict(_SPACES[family]))


class Sampler(Protocol):
    def sample(self, space: SearchSpace, n: int) -> list[dict]: ...


class RandomSampler:
    """Uniform (log-uniform where tagged) independent sampling."""

    def __init__(self, seed: int = 42):
        self.seed = seed

    def sample(self, space: SearchSpace, n: int) -> list[dict]:
        rng = np.random.default_rng(self.seed)
        names = sorted(space.params)
        return [{name: space.params[name].sample(rng) for name in names} for _ in range(n)]


# ---------------------------------------------------------------------------
# Trials and studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trial:
    trial_id: int
    params: dict
    status: str = "complete"
    value: float | None = None          # mean validation recall
    secondary: float | None = None      # mean validation MCC
    budget: int | None = None
    intermediate: tuple[tuple[int, float], ...] = ()
    duration: float = 0.0
    error: str | None = None

    def __post_init__(self):
        if self.status not in TRIAL_STATES:
            raise ValueError(f"unknown trial status {self.status!r}")
        if self.status == "complete" and (self.value is None or not math.isfinite(self.value)):
            raise ValueError("complete trials need a finite objective")


@dataclass(frozen=True)
class StudyResult:
    family: str
    trials: tuple[Trial, ...]
    best_trial_id: int
    wall_time: float
    seed: int
    guard_relaxed: bool = False

    @property
    def best(self) -> Trial:
        return self.trials[self.best_trial_id]

    @property
    def total_budget(self) -> int:
        return sum(t.budget or 0 for t in self.trials)


def halving_schedule(max_budget: int, eta: int = 3, rungs: int = 3) -> list[tuple[int, float]]:
    """Budgets growing by ``eta`` per rung and ending at ``max_budget``."""
    if eta < 2:
        raise ValueError("eta must be >= 2")
    if rungs < 1:
        raise ValueError("rungs must be >= 1")
    if max_budget < 1:
        raise ValueError("max_budget must be >= 1")
    schedule = []
    for r in range(rungs):
        budget = max(1, int(round(max_budget / eta ** (rungs - 1 - r))))
        fraction = 1.0 if r == rungs - 1 else 1.0 / eta
        schedule.append((budget, fraction))
    return schedule


def _score(artifact, fold: Dataset) -> tuple[float, float]:
    m = classification_metrics(confusion(fold.labels, predict(artifact, fold.features)))
    return m.recall, m.mcc


def select_best(trials: Iterable[Trial], min_mcc_guard: float | None) -> tuple[int, bool]:
    """Best complete trial by (recall, MCC, lower id); returns (id, guard_relaxed)."""
    complete = [t for t in trials if t.status == "complete"]
    if not complete:
        raise RuntimeError("all trials failed or were pruned")
    eligible = complete
    relaxed = False
    if min_mcc_guard is not None:
        eligible = [t for t in complete if t.secondary >= min_mcc_guard]
        if not eligible:
            logger.warning(
                "No trial reached validation MCC >= %.3f; ignoring the MCC guard", min_mcc_guard
            )
            eligible, relaxed = complete, True
    best = max(eligible, key=lambda t: (t.value, t.secondary, -t.trial_id))
    return best.trial_id, relaxed


def optimize(
    ds: Dataset,
    space: SearchSpace,
    n_trials: int = 50,
    seed: int = 42,
    validation: SplitPlan | FoldPlan | None = None,
    pruner: str = "off",
    eta: int = 3,
    rungs: int = 3,
    min_mcc_guard: float | None = 0.05,
    callbacks: Iterable[Callable[[Trial], None]] = (),
    base_params: dict | None = None,
    sampler: Sampler | None = None,
    n_jobs: int = 1,
) -> StudyResult:
    """
    Run a study over ``space`` on ``ds`` and return every trial plus the best.

    Args:
        ds: Training data (already preprocessed and feature-selected).
        space: Parameter domains for one model family.
        n_trials: Number of sampled configurations.
        seed: Seeds the sampler, the default validation split and every model.
        validation: Holdout or k-fold plan over ``ds`` rows; defaults to a
            stratified 80/20 holdout.
        pruner: "off" or "halving" (median rule at each budget rung).
        min_mcc_guard: Trials below this validation MCC cannot be best
            (None disables the guard).
        callbacks: Called with each finished Trial, in trial order.
        base_params: Fixed params merged under each sample (roster presets).
        n_jobs: Threads shared between the folds of a trial and the models
            trained inside them.

    Raises:
        ValueError: bad arguments.
        RuntimeError: no trial completed.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if pruner not in PRUNERS:
        raise ValueError(f"pruner must be one of {PRUNERS}, got {pruner!r}")
    validation = validation or split_holdout(ds, ratio=0.8, seed=seed, stratified=True)
    folds = [(ds.subset(tr), ds.subset(va)) for tr, va in validation.folds()]
    sampler = sampler or RandomSampler(seed)
    samples = sampler.sample(space, n_trials)
    budget_key = BUDGET_PARAMS.get(space.family)
    use_pruning = pruner == "halving" and budget_key is not None and rungs > 1
    callbacks = list(callbacks)

    started = time.perf_counter()
    trials: list[Trial] = []
    rung_values: dict[int, list[float]] = {}

    for trial_id, sampled in enumerate(samples):
        params = {**(base_params or {}), **sampled, "seed": seed}
        t0 = time.perf_counter()
        try:
            trial = _run_trial(
                trial_id, params, space.family, folds, budget_key, use_pruning,
                eta, rungs, rung_values, n_jobs,
            )
        except Exception as exc:
            logger.warning("Trial %d (%s) failed: %s", trial_id, space.family, exc)
            trial = Trial(trial_id=trial_id, params=params, status="failed", error=str(exc))
        trial = replace(trial, duration=time.perf_counter() - t0)
        trials.append(trial)
        logger.debug(
            "Trial %d %s recall=%s mcc=%s", trial_id, trial.status, trial.value, trial.secondary
        )
        for cb in callbacks:
            cb(trial)

    best_id, relaxed = select_best(trials, min_mcc_guard)
    wall = time.perf_counter() - started
    logger.info(
        "%s study: %d trials, best #%d recall=%.4f mcc=%.4f",
        space.family, len(trials), best_id, trials[best_id].value, trials[best_id].secondary,
    )
    return StudyResult(
        family=space.family,
        trials=tuple(trials),
        best_trial_id=best_id,
        wall_time=wall,
        seed=seed,
        guard_relaxed=relaxed,
    )


def _fold_workers(n_jobs: int, n_folds: int) -> tuple[int, int]:
    """(threads across folds, jobs per model) splitting ``n_jobs`` between the two levels."""
    outer = max(1, min(n_jobs, n_folds))
    return outer, max(1, n_jobs // outer)


def _fit_and_score(family, tr, va, params, n_jobs):
    return _score(train_model(family, tr, params, n_jobs=n_jobs), va)


def _grow_fold(family, tr, va, params, budget_key, budget, model, n_jobs):
    if model is None:
        model = train_model(family, tr, {**params, budget_key: budget}, n_jobs=n_jobs)
    else:
        model = extend_model(model, tr, budget, n_jobs=n_jobs)
    return model, _score(model, va)


def _run_trial(trial_id, params, family, folds, budget_key, use_pruning, eta, rungs, rung_values, n_jobs):
    # Folds run in parallel. Trials run in order: the median rule reads the
    # rung values of earlier trials.
    outer, inner = _fold_workers(n_jobs, len(folds))
    pool = Parallel(n_jobs=outer, prefer="threads")
    if not use_pruning:
        scores = pool(
            delayed(_fit_and_score)(family, tr, va, params, inner)
            for tr, va in folds
        )
        recall, mcc = np.mean(scores, axis=0)
        return Trial(
            trial_id=trial_id,
            params=params,
            value=float(recall),
            secondary=float(mcc),
            budget=params.get(budget_key) if budget_key else None,
        )

    schedule = halving_schedule(int(params[budget_key]), eta, rungs)
    models = [None] * len(folds)
    intermediate = []
    for r, (budget, _) in enumerate(schedule):
        grown = pool(
            delayed(_grow_fold)(family, tr, va, params, budget_key, budget, models[i], inner)
            for i, (tr, va) in enumerate(folds)
        )
        models = [m for m, _ in grown]
        scores = [s for _, s in grown]
        recall, mcc = (float(v) for v in np.mean(scores, axis=0))
        intermediate.append((budget, recall))
        earlier = rung_values.setdefault(r, [])
        prune = (
            r < len(schedule) - 1
            and len(earlier) >= N_STARTUP_TRIALS
            and recall < float(np.median(earlier))
        )
        earlier.append(recall)
        if prune:
            return Trial(
                trial_id=trial_id,
                params=params,
                status="pruned",
                value=recall,
                secondary=mcc,
                budget=budget,
                intermediate=tuple(intermediate),
            )
    return Trial(
        trial_id=trial_id,
        params=params,
        value=recall,
        secondary=mcc,
        budget=schedule[-1][0],
        intermediate=tuple(intermediate),
    )
