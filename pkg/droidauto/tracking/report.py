"""Markdown reports rendered from the run store.

A run report is assembled from the artifacts the pipeline logged; every table
is embedded as a fenced ``csv`` block so the document stands on its own.
"""
import io
import json
import logging
from datetime import datetime

import pandas as pd

from droidauto.tracking.store import RunRecord, RunStateError, RunStore, compare_runs

logger = logging.getLogger(__name__)

# Artifact names shared with the pipeline.
PROFILE_ARTIFACT = "profile.json"
PREPROCESS_ARTIFACT = "preprocess.json"
FEATURES_ARTIFACT = "features.csv"
MODEL_METRICS_ARTIFACT = "model_metrics.csv"
BEST_PARAMS_ARTIFACT = "best_params.json"
IMPORTANCE_ARTIFACT = "importance.csv"
ATTRIBUTION_ARTIFACT = "attributions.csv"
RESOURCES_ARTIFACT = "resources.json"
REPORT_ARTIFACT = "report.md"

REPORT_SECTIONS = (
    "Dataset profile",
    "Preprocessing",
    "Selected features",
    "Model metrics",
    "Best hyperparameters",
    "Feature importance",
    "Attributions",
    "Resources",
)

DEFAULT_REPORT_TEMPLATE = """# Run {run_id}

Generated: {date} {time}
Status: {status}
Parent: {parent}

## Headline

{headline}

## Dataset profile

{profile}

## Preprocessing

{preprocessing}

## Selected features

{features}

## Model metrics

{model_metrics}

## Best hyperparameters

{best_params}

## Feature importance

{importance}

## Attributions

{attributions}

## Resources

{resources}
"""

NOT_RECORDED = "_Not recorded for this run._"


def csv_block(frame: pd.DataFrame, index: bool = False) -> str:
    buf = io.StringIO()
    frame.to_csv(buf, index=index, float_format="%.6g", lineterminator="\n")
    return f"```csv\n{buf.getvalue()}```"


def json_block(payload) -> str:
    return f"```json\n{json.dumps(payload, indent=2, sort_keys=True)}\n```"


def _artifact(store: RunStore, run: RunRecord, name: str) -> bytes | None:
    if name not in run.artifacts:
        return None
    return store.read_artifact(run.run_id, name)


def _json_section(store, run, name) -> str:
    data = _artifact(store, run, name)
    return json_block(json.loads(data)) if data is not None else NOT_RECORDED


def _csv_section(store, run, name, heading: str = "") -> str:
    data = _artifact(store, run, name)
    if data is None:
        return NOT_RECORDED
    frame = pd.read_csv(io.BytesIO(data))
    return (heading + "\n\n" if heading else "") + csv_block(frame)


def _features_section(store, run) -> str:
    data = _artifact(store, run, FEATURES_ARTIFACT)
    if data is None:
        return NOT_RECORDED
    frame = pd.read_csv(io.BytesIO(data))
    method = run.params.get("features.method", "unknown")
    if "kept" in frame.columns:
        kept = frame[frame["kept"].astype(bool)].drop(columns="kept")
        heading = f"Method: {method}. {len(kept)} of {len(frame)} features kept."
        if method == "lasso":
            heading += " LASSO kept features with coefficients:"
        return heading + "\n\n" + csv_block(kept)
    return f"Method: {method}. Component loadings:\n\n" + csv_block(frame)


def _headline(run: RunRecord) -> str:
    metrics = run.latest_metrics
    if not metrics:
        return NOT_RECORDED
    rows = pd.DataFrame({"metric": list(metrics), "value": list(metrics.values())})
    return csv_block(rows)


def render_report(
    store: RunStore,
    run_id: str,
    template: str | None = None,
    final_status: str | None = None,
) -> str:
    """
    Markdown report for one run.

    Args:
        store: Run store holding the run.
        run_id: The run to describe.
        template: Report template with {run_id}, {date}, {time}, {status},
                  {parent}, {headline} and one placeholder per section.
        final_status: Status the run is about to be finished with. Only
                  accepted while the run is still running, so the pipeline
                  can store the report as the run's last artifact.

    Returns:
        The report text. Sections whose artifact was never logged say so.

    Raises:
        RunStateError: the run is still running and no final status was given.
    """
    run = store.get_run(run_id)
    if run.status == "running":
        if final_status not in ("finished", "failed"):
            raise RunStateError(f"run {run_id} is still running; reports describe finished runs")
        status = final_status
    else:
        status = run.status
    now = datetime.now()
    template = template or DEFAULT_REPORT_TEMPLATE
    return template.format(
        run_id=run.run_id,
        date=now.strftime("%Y-%m-%d"),
        time=now.strftime("%H:%M"),
        status=status,
        parent=run.parent_id or "none",
        headline=_headline(run),
        profile=_json_section(store, run, PROFILE_ARTIFACT),
        preprocessing=_json_section(store, run, PREPROCESS_ARTIFACT),
        features=_features_section(store, run),
        model_metrics=_csv_section(store, run, MODEL_METRICS_ARTIFACT, "Test partition, one row per model:"),
        best_params=_json_section(store, run, BEST_PARAMS_ARTIFACT),
        importance=_csv_section(store, run, IMPORTANCE_ARTIFACT),
        attributions=_csv_section(store, run, ATTRIBUTION_ARTIFACT),
        resources=_json_section(store, run, RESOURCES_ARTIFACT),
    )


def metric_grid(store: RunStore, run_ids, metric: str = "recall", rows: str = "dataset", columns: str = "name") -> pd.DataFrame:
    """
    Pivot of one metric over two run attributes, e.g. datasets x configurations.

    ``rows`` and ``columns`` name a run param, or "name" / "run_id". When
    several runs land in the same cell the latest one wins.
    """
    def attribute(run: RunRecord, key: str):
        if key in ("name", "run_id"):
            return getattr(run, key)
        if key not in run.params:
            raise ValueError(f"run {run.run_id} has no param {key!r}")
        return run.params[key]

    records = []
    for run_id in run_ids:
        run = store.get_run(run_id)
        value = run.metric(metric)
        records.append({
            "row": attribute(run, rows),
            "column": attribute(run, columns),
            "value": float("nan") if value is None else value,
        })
    frame = pd.DataFrame(records, columns=["row", "column", "value"])
    grid = frame.groupby(["row", "column"], sort=False)["value"].last().unstack("column")
    grid.index.name, grid.columns.name = rows, columns
    return grid.astype(float)


def render_comparison(store: RunStore, run_ids, metric_keys=("recall", "mcc"), param_keys=(), sort_by=None) -> str:
    """Markdown comparison of several runs: one table row per run."""
    frame = compare_runs(store, run_ids, metric_keys, param_keys, sort_by=sort_by)
    now = datetime.now()
    lines = [
        "# Run comparison",
        "",
        f"Generated: {now:%Y-%m-%d} {now:%H:%M}",
        f"Runs: {len(frame)}",
        "",
        "## Metrics",
        "",
        csv_block(frame),
        "",
    ]
    return "\n".join(lines)
