"""Configuration loader for droidauto.

Reads settings from .droidauto.yaml (CWD first, then ~/.droidauto.yaml) or an
explicit path. DROIDAUTO_STORE (environment or .env) overrides tracking.root.
Config is loaded lazily via get_config() so that cli init works without a config file.
"""
import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml
from dotenv import load_dotenv

from droidauto.data.preprocess import PreprocessOptions
from droidauto.features.stage import FEATURE_METHODS, FeatureOptions
from droidauto.hpo import PRUNERS
from droidauto.models import DEFAULT_ROSTER, ROSTER_PRESETS
from droidauto.models.ensemble import VOTING_MODES

load_dotenv()

CONFIG_FILENAME = ".droidauto.yaml"
STORE_ENV_VAR = "DROIDAUTO_STORE"

IMPUTE_MODES = ("median_mode",)
OUTLIER_MODES = ("off", "iqr")
BALANCE_MODES = ("none", "unique_undersample")
VALIDATION_MODES = ("holdout", "kfold")
OBJECTIVES = ("recall",)
SHAPLEY_MODES = ("auto", "exact", "sampled", "off")

# YAML key -> dataclass field, where the key is not a valid identifier.
_FIELD_ALIASES = {"features": {"lambda": "lambda_"}}


def _switch(value):
    """on/off strings as booleans (YAML 1.1 already maps bare on/off)."""
    if isinstance(value, str) and value.lower() in ("on", "off"):
        return value.lower() == "on"
    return value


@dataclass
class DataConfig:
    path: str = ""
    label: str = "class"
    malware_label: str | None = None
    strict: bool = False
    categorical: list[str] = field(default_factory=list)


@dataclass
class SplitConfig:
    ratio: float = 0.8
    seed: int = 42
    stratified: bool = True


@dataclass
class PreprocessConfig:
    impute: str = "median_mode"
    outliers: str = "off"  # "off" or "iqr"
    iqr_k: float = 1.5
    onehot: bool = False
    dedupe: bool = True
    balance: str = "none"  # "none" (or "off") or "unique_undersample"

    def __post_init__(self):
        if self.outliers is False or self.outliers is None:
            self.outliers = "off"
        if self.balance is False or self.balance == "off":
            self.balance = "none"
        self.onehot = _switch(self.onehot)
        self.dedupe = _switch(self.dedupe)

    def options(self) -> PreprocessOptions:
        return PreprocessOptions(
            impute=self.impute,
            remove_outliers=self.outliers == "iqr",
            iqr_k=self.iqr_k,
            encode_onehot=self.onehot,
            drop_duplicates=self.dedupe,
        )


@dataclass
class FeaturesConfig:
    method: str = "lasso"  # "lasso", "anova", "pca" or "none"
    k: int = 20
    n_components: int = 10
    lambda_: float | str = "auto"  # YAML key "lambda"
    abs_threshold: float = 0.0
    tol: float = 1e-6
    max_iter: int = 10_000
    seed: int = 42

    def options(self) -> FeatureOptions:
        return FeatureOptions(
            method=self.method,
            k=self.k,
            n_components=self.n_components,
            lambda_=self.lambda_,
            tol=self.tol,
            max_iter=self.max_iter,
            abs_threshold=self.abs_threshold,
            seed=self.seed,
        )


@dataclass
class ModelsConfig:
    roster: list[str] = field(default_factory=lambda: list(DEFAULT_ROSTER))
    voting: str = "soft"
    weights: list[float] | None = None
    params: dict[str, dict] = field(default_factory=dict)  # roster name -> fixed params


@dataclass
class HpoConfig:
    enabled: bool = True
    n_trials: int = 50
    seed: int = 42
    objective: str = "recall"  # fixed; MCC breaks ties
    pruner: str = "halving"
    eta: int = 3
    rungs: int = 3
    min_mcc_guard: float | None = 0.05
    validation: str = "holdout"  # "holdout" (inner 80/20) or "kfold"
    folds: int = 5


@dataclass
class ExplainConfig:
    importance: bool = True
    importance_metric: str = "recall"
    repeats: int = 5
    shapley: str = "auto"
    shapley_samples: int = 2000
    surrogate: bool = True
    n_perturbations: int = 5000
    background_size: int = 100
    tree_export: bool = True
    seed: int = 42


@dataclass
class TrackingConfig:
    root: str = ".droidauto/store"


@dataclass
class ReportConfig:
    enabled: bool = True
    heatmaps: bool = True


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    hpo: HpoConfig = field(default_factory=HpoConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    threads: int | None = None  # None -> logical CPU count

    @property
    def store_root(self) -> Path:
        return Path(self.tracking.root).expanduser()

    @property
    def n_jobs(self) -> int:
        return self.threads or os.cpu_count() or 1


_SECTION_TYPES = {
    "data": DataConfig,
    "split": SplitConfig,
    "preprocess": PreprocessConfig,
    "features": FeaturesConfig,
    "models": ModelsConfig,
    "hpo": HpoConfig,
    "explain": ExplainConfig,
    "tracking": TrackingConfig,
    "report": ReportConfig,
}


def _section(name: str, raw) -> object:
    cls = _SECTION_TYPES[name]
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ValueError(f"config section '{name}' must be a mapping")
    aliases = _FIELD_ALIASES.get(name, {})
    raw = {aliases.get(key, key): value for key, value in raw.items()}
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown keys in '{name}': {', '.join(unknown)}")
    return cls(**raw)


def config_from_dict(raw: dict | None) -> Config:
    """Build and validate a Config from a (possibly partial) nested mapping."""
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ValueError("config document must be a mapping")
    unknown = sorted(set(raw) - set(_SECTION_TYPES) - {"threads"})
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(unknown)}")
    cfg = Config(
        **{name: _section(name, raw.get(name)) for name in _SECTION_TYPES},
        threads=raw.get("threads"),
    )
    validate_config(cfg)
    return cfg


def config_to_dict(cfg: Config) -> dict:
    """Fully resolved snapshot (every default expanded), as stored with a run."""
    raw = asdict(cfg)
    for section, aliases in _FIELD_ALIASES.items():
        for key, attr in aliases.items():
            raw[section][key] = raw[section].pop(attr)
    return raw


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def validate_config(cfg: Config) -> Config:
    """Reject out-of-domain values before any work starts."""
    _check(isinstance(cfg.data.label, str) and cfg.data.label != "", "data.label must be a column name")
    _check(0.0 < cfg.split.ratio < 1.0, f"split.ratio must lie in (0, 1), got {cfg.split.ratio}")
    _check(cfg.preprocess.impute in IMPUTE_MODES, f"preprocess.impute must be one of {IMPUTE_MODES}")
    _check(cfg.preprocess.outliers in OUTLIER_MODES, f"preprocess.outliers must be one of {OUTLIER_MODES}")
    _check(cfg.preprocess.iqr_k > 0, "preprocess.iqr_k must be positive")
    _check(isinstance(cfg.preprocess.onehot, bool), "preprocess.onehot must be on or off")
    _check(isinstance(cfg.preprocess.dedupe, bool), "preprocess.dedupe must be on or off")
    _check(cfg.preprocess.balance in BALANCE_MODES, f"preprocess.balance must be one of {BALANCE_MODES}")
    _check(cfg.features.method in FEATURE_METHODS, f"features.method must be one of {FEATURE_METHODS}")
    _check(cfg.features.k >= 1, "features.k must be >= 1")
    _check(cfg.features.n_components >= 1, "features.n_components must be >= 1")
    lam = cfg.features.lambda_
    _check(
        lam == "auto" or (isinstance(lam, (int, float)) and not isinstance(lam, bool) and lam >= 0),
        "features.lambda must be 'auto' or a non-negative number",
    )
    _check(len(cfg.models.roster) >= 1, "models.roster must name at least one model")
    for name in cfg.models.roster:
        _check(name in ROSTER_PRESETS, f"unknown roster member {name!r}; expected one of {list(ROSTER_PRESETS)}")
    _check(len(set(cfg.models.roster)) == len(cfg.models.roster), "models.roster has duplicate members")
    for name in cfg.models.params:
        _check(name in cfg.models.roster, f"models.params.{name} does not name a roster member")
    _check(cfg.models.voting in VOTING_MODES, f"models.voting must be one of {VOTING_MODES}")
    if cfg.models.weights is not None:
        _check(len(cfg.models.weights) == len(cfg.models.roster), "models.weights needs one weight per roster member")
        _check(all(w > 0 for w in cfg.models.weights), "models.weights must be positive")
    _check(cfg.hpo.n_trials >= 1, "hpo.n_trials must be >= 1")
    _check(cfg.hpo.objective in OBJECTIVES, f"hpo.objective must be one of {OBJECTIVES}")
    _check(cfg.hpo.pruner in PRUNERS, f"hpo.pruner must be one of {PRUNERS}")
    _check(cfg.hpo.eta >= 2, "hpo.eta must be >= 2")
    _check(cfg.hpo.rungs >= 1, "hpo.rungs must be >= 1")
    _check(cfg.hpo.validation in VALIDATION_MODES, f"hpo.validation must be one of {VALIDATION_MODES}")
    _check(cfg.hpo.folds >= 2, "hpo.folds must be >= 2")
    _check(cfg.explain.repeats >= 1, "explain.repeats must be >= 1")
    _check(cfg.explain.shapley in SHAPLEY_MODES, f"explain.shapley must be one of {SHAPLEY_MODES}")
    _check(cfg.explain.shapley_samples >= 1, "explain.shapley_samples must be >= 1")
    _check(cfg.explain.n_perturbations >= 2, "explain.n_perturbations must be >= 2")
    _check(cfg.explain.background_size >= 1, "explain.background_size must be >= 1")
    _check(cfg.threads is None or cfg.threads >= 1, "threads must be >= 1")
    return cfg


def _parse_value(text):
    if not isinstance(text, str):
        return text
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_overrides(cfg: Config, overrides: dict) -> Config:
    """
    New Config with dotted-key overrides applied, e.g. {"hpo.n_trials": "1"}.

    String values are parsed as YAML scalars, so "1" is an int and
    "[a, b]" a list.
    """
    raw = config_to_dict(cfg)
    for key, value in overrides.items():
        parts = key.split(".")
        node = raw
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ValueError(f"unknown config key {key!r}")
            node = node[part]
        leaf = parts[-1]
        # models.params holds free-form per-member maps.
        if leaf not in node and parts[:2] != ["models", "params"]:
            raise ValueError(f"unknown config key {key!r}")
        node[leaf] = _parse_value(value)
    return config_from_dict(raw)


def _find_config_file() -> Path | None:
    """Look for .droidauto.yaml in CWD, then home directory."""
    candidates = [
        Path.cwd() / CONFIG_FILENAME,
        Path.home() / CONFIG_FILENAME,
    ]
    for path in candidates:
        if path.exists():
            return path
    return None


def load_config(path: Path | str | None = None) -> Config:
    """Load config from YAML, applying defaults for missing values."""
    path = Path(path) if path is not None else _find_config_file()
    if path is None:
        raise FileNotFoundError(
            f"No {CONFIG_FILENAME} found. Run 'python cli.py init' to create one."
        )
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")

    with open(path) as f:
        try:
            raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ValueError(f"malformed config {path}: {exc}") from exc

    return apply_env_overrides(config_from_dict(raw))


def apply_env_overrides(cfg: Config) -> Config:
    """DROIDAUTO_STORE (environment or .env) takes precedence over tracking.root."""
    store = os.environ.get(STORE_ENV_VAR)
    if store:
        cfg.tracking.root = store
    return cfg


# Lazy singleton
_cfg: Config | None = None


def get_config() -> Config:
    """Get the loaded config, parsing .droidauto.yaml on first call."""
    global _cfg
    if _cfg is None:
        _cfg = load_config()
    return _cfg
