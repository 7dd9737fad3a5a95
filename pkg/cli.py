"""CLI for droidauto.

Usage:
    python cli.py init                      Interactive setup: generates .droidauto.yaml
    python cli.py profile <csv>             Profile a dataset
    python cli.py run [config]              Run the full pipeline
    python cli.py explain <run_id>          Recompute an explanation for a run
    python cli.py score [questionnaire...]  Score transparency questionnaires
    python cli.py compare <ids or files>    Compare runs or scorecards
    python cli.py report <run_id...>        Render a run or comparison report
"""
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import yaml


def _handle_errors(fn):
    """Report any failure as 'Error: ...' on stderr and exit 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException, SystemExit):
            raise
        except Exception as e:
            from droidauto.tracking import UnknownRunError

            message = f"unknown run {e.args[0]}" if isinstance(e, UnknownRunError) else str(e)
            click.echo(f"Error: {message}", err=True)
            raise SystemExit(1)
    return wrapper


def _store(ctx):
    from droidauto.config import STORE_ENV_VAR, TrackingConfig, get_config
    from droidauto.tracking import RunStore

    root = ctx.obj.get("store")
    if root is None:
        try:
            root = get_config().tracking.root
        except FileNotFoundError:
            root = os.environ.get(STORE_ENV_VAR) or TrackingConfig().root
    return RunStore(root)


def _write_or_echo(text: str, out: Path | None) -> None:
    if out is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        click.echo(f"Written to {out}", err=True)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
@click.option("--store", type=click.Path(path_type=Path), default=None, help="Run store root (overrides config).")
@click.pass_context
def cli(ctx, verbose: bool, store: Path | None):
    """droidauto: AutoML for malware/benign classification of tabular app features."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    ctx.ensure_object(dict)
    ctx.obj["store"] = store


@cli.command()
def init():
    """Interactive setup: generates .droidauto.yaml config file."""
    from droidauto.config import CONFIG_FILENAME, Config, config_to_dict
    from droidauto.features.stage import FEATURE_METHODS

    click.echo("droidauto setup\n")

    data_path = click.prompt("Path to the dataset CSV", type=click.Path())
    label = click.prompt("Label column", default="class")

    method = click.prompt(
        "Feature selection",
        type=click.Choice(list(FEATURE_METHODS)),
        default="lasso",
    )
    voting = click.prompt("Ensemble voting", type=click.Choice(["soft", "hard"]), default="soft")
    n_trials = click.prompt("HPO trials per model", type=int, default=50)
    balance = click.prompt(
        "Class balancing",
        type=click.Choice(["none", "unique_undersample"]),
        default="none",
    )
    store = click.prompt("Run store directory", default=".droidauto/store")

    config = config_to_dict(Config())
    config["data"]["path"] = str(Path(data_path).expanduser())
    config["data"]["label"] = label
    config["features"]["method"] = method
    config["models"]["voting"] = voting
    config["hpo"]["n_trials"] = n_trials
    config["preprocess"]["balance"] = balance
    config["tracking"]["root"] = store

    out_path = Path(CONFIG_FILENAME)
    with open(out_path, "w") as f:
        yaml.dump(config, f, default_flow_style=False, sort_keys=False)

    click.echo(f"\nConfig written to {out_path}")
    click.echo(f"Edit {CONFIG_FILENAME} to customize further, then run: python cli.py run")


@cli.command()
@click.argument("dataset", type=click.Path(path_type=Path))
@click.option("--label", default="class", show_default=True, help="Label column.")
@click.option("--malware-label", default=None, help="Raw label value meaning malware.")
@click.option("--json", "as_json", is_flag=True, help="Print the profile JSON only.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write the profile JSON here.")
@_handle_errors
def profile(dataset: Path, label: str, malware_label: str | None, as_json: bool, out: Path | None):
    """Profile a labelled CSV: size, missing values, duplicates, class balance."""
    from droidauto.data import load_csv, profile_dataset
    from droidauto.data.profiler import profile_to_json

    ds = load_csv(dataset, label_column=label, malware_label=malware_label)
    prof = profile_dataset(ds)
    text = profile_to_json(prof, out)
    if as_json:
        click.echo(text)
        return
    benign, malware = prof.class_counts
    click.echo(f"Dataset:          {dataset}")
    click.echo(f"Rows:             {prof.n_rows}")
    click.echo(f"Features:         {prof.n_cols}")
    click.echo(f"Benign / malware: {benign} / {malware} (imbalance {prof.imbalance_ratio:.2f})")
    click.echo(f"Missing cells:    {prof.missing_cells}")
    click.echo(f"Duplicate rows:   {prof.duplicate_rows}")
    click.echo(f"Label conflicts:  {prof.label_conflicts}")
    for kind, count in sorted(prof.kind_counts.items()):
        click.echo(f"  {kind:<15} {count}")
    if out is not None:
        click.echo(f"Profile written to {out}")


def _parse_sets(values) -> dict:
    overrides = {}
    for item in values:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--set")
        overrides[key.strip()] = value
    return overrides


@cli.command()
@click.argument("config", type=click.Path(path_type=Path), required=False)
@click.option("--set", "sets", multiple=True, help="Override a config value, e.g. --set hpo.n_trials=10.")
@click.option("--data", type=click.Path(path_type=Path), default=None, help="Dataset CSV (overrides data.path).")
@click.option("--replay", "replay_id", default=None, help="Re-execute a stored run's config.")
@click.option("--balance", type=click.Choice(["none", "unique_undersample"]), default=None)
@click.option("--threads", type=int, default=None, help="Worker threads (default: logical CPU count).")
@click.option("--json", "as_json", is_flag=True, help="Print the result as JSON.")
@click.pass_context
@_handle_errors
def run(ctx, config: Path | None, sets, data: Path | None, replay_id: str | None,
        balance: str | None, threads: int | None, as_json: bool):
    """Run the full pipeline and log everything to the run store."""
    from droidauto.config import Config, apply_env_overrides, apply_overrides, load_config
    from droidauto.pipeline import replay_run, run_pipeline
    from droidauto.tracking import RunStore

    overrides = _parse_sets(sets)
    if data is not None:
        overrides["data.path"] = str(data)
    if balance is not None:
        overrides["preprocess.balance"] = balance
    if threads is not None:
        overrides["threads"] = str(threads)

    if replay_id is not None:
        if overrides:
            raise click.UsageError("--replay cannot be combined with config overrides")
        store = _store(ctx)
        result = replay_run(store, store.resolve_id(replay_id))
    else:
        try:
            cfg = load_config(config)
        except FileNotFoundError:
            if config is not None or data is None:
                raise
            cfg = apply_env_overrides(Config())
        if ctx.obj.get("store") is not None:
            overrides["tracking.root"] = str(ctx.obj["store"])
        cfg = apply_overrides(cfg, overrides) if overrides else cfg
        result = run_pipeline(cfg, RunStore(cfg.store_root))

    if as_json:
        click.echo(json.dumps({
            "run_id": result.run_id,
            "status": result.status,
            "metrics": result.metrics,
            "wall_time": result.wall_time,
        }, indent=2))
        return
    click.echo(f"Run:       {result.run_id}")
    click.echo(f"Recall:    {result.metrics['recall']:.4f}")
    click.echo(f"MCC:       {result.metrics['mcc']:.4f}")
    click.echo(f"Wall time: {result.wall_time:.1f}s")


@cli.command()
@click.argument("run_id")
@click.option("--method", type=click.Choice(["shapley", "shapley_exact", "surrogate", "importance"]), default="shapley", show_default=True)
@click.option("--samples", type=int, default=2000, show_default=True, help="Shapley permutations / surrogate perturbations.")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--row", type=int, default=None, help="Test-partition row to explain (default: first flagged as malware).")
@click.option("--member", default=None, help="Explain one ensemble member (roster name) instead of the ensemble.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write the CSV here instead of stdout.")
@click.pass_context
@_handle_errors
def explain(ctx, run_id: str, method: str, samples: int, seed: int, row: int | None,
            member: str | None, out: Path | None):
    """Recompute an explanation for a finished run."""
    from droidauto.pipeline import explain_run

    store = _store(ctx)
    frame = explain_run(
        store, store.resolve_id(run_id), method=method, n_samples=samples, seed=seed, row=row, member=member
    )
    _write_or_echo(frame.to_csv(index=False, lineterminator="\n"), out)


@cli.command()
@click.argument("questionnaires", nargs=-1, type=click.Path(path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Directory for per-tool scorecards.")
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), default=None, help="Write the comparison matrix here.")
@click.option("--json", "as_json", is_flag=True, help="Print scorecards as JSON.")
@_handle_errors
def score(questionnaires, out: Path | None, csv_path: Path | None, as_json: bool):
    """Score transparency questionnaires (default: the bundled one)."""
    from droidauto.scorecard import (
        CATEGORIES,
        compare_scorecards,
        load_questionnaire,
        score_tool,
        scorecard_to_dict,
        write_scorecard,
    )

    sources = list(questionnaires) or [None]
    cards = [score_tool(load_questionnaire(path)) for path in sources]
    if out is not None:
        for card in cards:
            write_scorecard(card, out / f"{card.tool}.scorecard.yaml")
    if csv_path is not None:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        compare_scorecards(cards).to_csv(csv_path, float_format="%.2f")
    if as_json:
        click.echo(json.dumps([scorecard_to_dict(c) for c in cards], indent=2))
        return
    for card in cards:
        click.echo(card.tool)
        for name in CATEGORIES:
            click.echo(f"  {name:<26} {card.scores[name]:6.2f}")
        click.echo(f"  {'Overall':<26} {card.overall:6.2f}")


@cli.command()
@click.argument("items", nargs=-1, required=True)
@click.option("--metric", "metrics", multiple=True, help="Metric column (repeatable; default recall and mcc).")
@click.option("--param", "params", multiple=True, help="Param column (repeatable).")
@click.option("--sort-by", default=None, help="Column to sort by, descending.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write the CSV here instead of stdout.")
@click.option("--grid-rows", default=None, help="Param for heatmap rows, e.g. dataset.")
@click.option("--grid-cols", default="name", show_default=True, help="Param for heatmap columns.")
@click.option("--heatmap", type=click.Path(path_type=Path), default=None, help="PNG for the grid of the first metric.")
@click.pass_context
@_handle_errors
def compare(ctx, items, metrics, params, sort_by, out, grid_rows, grid_cols, heatmap):
    """Compare runs (by id) or scorecards (questionnaire files)."""
    if all(Path(item).is_file() for item in items):
        from droidauto.scorecard import compare_scorecards, load_questionnaire, score_tool

        frame = compare_scorecards(score_tool(load_questionnaire(item)) for item in items)
        _write_or_echo(frame.to_csv(float_format="%.2f", lineterminator="\n"), out)
        return

    from droidauto.tracking import compare_runs, metric_grid, render_grid

    store = _store(ctx)
    ids = [store.resolve_id(item) for item in items]
    metrics = list(metrics) or ["recall", "mcc"]
    frame = compare_runs(store, ids, metrics, params, sort_by=sort_by)
    _write_or_echo(frame.to_csv(index=False, lineterminator="\n"), out)
    if grid_rows is not None:
        grid = metric_grid(store, ids, metrics[0], rows=grid_rows, columns=grid_cols)
        if out is not None:
            grid.to_csv(out.with_name(out.stem + ".grid.csv"))
        if heatmap is not None:
            render_grid(grid, heatmap)
            click.echo(f"Heatmap written to {heatmap}", err=True)


@cli.command()
@click.argument("run_ids", nargs=-1, required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write the markdown here instead of stdout.")
@click.pass_context
@_handle_errors
def report(ctx, run_ids, out: Path | None):
    """Render a run report, or a comparison report for several runs."""
    from droidauto.tracking import render_comparison, render_report

    store = _store(ctx)
    ids = [store.resolve_id(r) for r in run_ids]
    text = render_report(store, ids[0]) if len(ids) == 1 else render_comparison(store, ids)
    _write_or_echo(text, out)


if __name__ == "__main__":
    cli()
