import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from droidauto.tracking import (
    REPORT_SECTIONS,
    ArtifactIntegrityError,
    RunStateError,
    RunStore,
    UnknownRunError,
    compare_runs,
    metric_grid,
    render_comparison,
    render_grid,
    render_heatmap,
    render_missingness,
    render_report,
)
from droidauto.tracking.report import NOT_RECORDED
from droidauto.tracking.store import canonical_param


@pytest.fixture
def store(tmp_path):
    return RunStore(tmp_path / "store")


def test_run_lifecycle(store):
    run = store.start_run({"models": {"roster": ["knn"]}}, name="first")
    assert [r.run_id for r in store.list_runs()] == [run.run_id]
    assert run.status == "running"
    store.log_metrics(run.run_id, {"recall": 0.985})
    store.finish_run(run.run_id)

    reread = RunStore(store.root).get_run(run.run_id)
    assert reread.status == "finished"
    assert reread.finished_at is not None
    assert reread.metric("recall") == 0.985
    assert reread.config == {"models": {"roster": ["knn"]}}
    assert store.list_runs(status="running") == []


def test_params_are_write_once(store):
    run_id = store.start_run({}).run_id
    store.log_params(run_id, {"lr": 0.1, "balance": True, "extra": None})
    store.log_params(run_id, {"lr": 0.1})
    with pytest.raises(RunStateError):
        store.log_params(run_id, {"lr": 0.2})
    assert store.get_run(run_id).params == {"lr": "0.1", "balance": "true", "extra": "null"}


def test_canonical_param():
    assert canonical_param(np.float64(0.25)) == "0.25"
    assert canonical_param(np.int64(3)) == "3"
    assert canonical_param([1, 2]) == "[1, 2]"
    assert canonical_param("lasso") == "lasso"


def test_metric_history_keeps_latest_step(store):
    run_id = store.start_run({}).run_id
    store.log_metrics(run_id, {"loss": 0.5}, step=0)
    store.log_metrics(run_id, {"loss": 0.3}, step=2)
    store.log_metrics(run_id, {"loss": 0.4}, step=1)
    run = store.get_run(run_id)
    assert run.metric("loss") == 0.3
    assert run.metrics["loss"] == [(0, 0.5), (2, 0.3), (1, 0.4)]
    assert run.metric("mcc") is None
    with pytest.raises(ValueError):
        store.log_metrics(run_id, {"loss": float("nan")})


def test_finished_runs_are_immutable(store):
    run_id = store.start_run({}).run_id
    store.finish_run(run_id, status="failed")
    with pytest.raises(RunStateError):
        store.log_metrics(run_id, {"recall": 1.0})
    with pytest.raises(RunStateError):
        store.log_artifact(run_id, "late.txt", "x")
    with pytest.raises(RunStateError):
        store.finish_run(run_id)
    with pytest.raises(ValueError):
        store.finish_run(store.start_run({}).run_id, status="done")


def test_bad_metric_batch_leaves_no_trace(store):
    run_id = store.start_run({}).run_id
    before = store.ledger_path.read_bytes()
    with pytest.raises(ValueError, match="mcc"):
        store.log_metrics(run_id, {"recall": 0.9, "mcc": float("nan")})
    assert store.ledger_path.read_bytes() == before
    assert store.get_run(run_id).metric("recall") is None
    assert RunStore(store.root).get_run(run_id).metrics == {}


def test_concurrent_writers_share_one_ledger(store):
    def work(i):
        writer = store if i % 2 else RunStore(store.root)
        run_id = writer.start_run({"worker": i}, name=f"w{i}").run_id
        writer.log_params(run_id, {"worker": i})
        writer.log_metrics(run_id, {"recall": i / 40, "mcc": 0.5})
        writer.finish_run(run_id)
        return run_id

    with ThreadPoolExecutor(max_workers=8) as pool:
        run_ids = list(pool.map(work, range(40)))

    assert len(set(run_ids)) == 40
    lines = store.ledger_path.read_bytes().splitlines()
    assert len(lines) == 40 * 5
    events = [json.loads(line) for line in lines]
    assert {e["run_id"] for e in events} == set(run_ids)
    fresh = RunStore(store.root)
    for i, run_id in enumerate(run_ids):
        run = fresh.get_run(run_id)
        assert run.status == "finished"
        assert run.params == {"worker": str(i)}
        assert run.metric("recall") == i / 40


def test_ledger_only_grows(store):
    first = store.start_run({}).run_id
    store.log_metrics(first, {"recall": 0.5})
    snapshot = store.ledger_path.read_bytes()
    store.finish_run(first)
    second = store.start_run({}, parent=first).run_id
    store.log_artifact(second, "notes.txt", "hello")
    store.finish_run(second, status="failed")
    later = store.ledger_path.read_bytes()
    assert len(later) > len(snapshot)
    assert later.startswith(snapshot)


def test_unknown_runs(store):
    with pytest.raises(UnknownRunError):
        store.get_run("nope")
    with pytest.raises(UnknownRunError):
        store.start_run({}, parent="nope")
    with pytest.raises(UnknownRunError):
        store.log_params("nope", {"a": 1})


def test_artifacts_are_hash_checked(store, tmp_path):
    run_id = store.start_run({}).run_id
    path = store.log_artifact(run_id, "tables/metrics.csv", "recall\n0.9\n")
    source = tmp_path / "model.bin"
    source.write_bytes(b"\x00\x01")
    store.log_artifact(run_id, "model.bin", source)
    assert path == store.artifact_dir(run_id) / "tables" / "metrics.csv"
    assert store.read_artifact(run_id, "model.bin") == b"\x00\x01"
    assert store.verify_run(run_id) == []

    path.write_text("recall\n1.0\n")
    with pytest.raises(ArtifactIntegrityError):
        store.read_artifact(run_id, "tables/metrics.csv")
    (store.artifact_dir(run_id) / "model.bin").unlink()
    assert store.verify_run(run_id) == ["model.bin", "tables/metrics.csv"]
    with pytest.raises(FileNotFoundError):
        store.read_artifact(run_id, "never.txt")


@pytest.mark.parametrize("name", ["", "../escape.txt", "/etc/passwd", "a/../../b"])
def test_invalid_artifact_names(store, name):
    run_id = store.start_run({}).run_id
    with pytest.raises(ValueError):
        store.log_artifact(run_id, name, "x")


def test_children_and_prefix_lookup(store):
    parent = store.start_run({}, name="pipeline").run_id
    kids = [store.start_run({}, parent=parent, name=f"trial-{i}").run_id for i in range(3)]
    assert [r.run_id for r in store.children(parent)] == kids
    assert store.children(kids[0]) == []
    assert store.resolve_id(parent[:12]) == parent
    with pytest.raises(UnknownRunError):
        store.resolve_id("zzz")
    with pytest.raises(UnknownRunError):
        store.resolve_id("")


def test_compare_runs_sorts_and_includes_running(store):
    a = store.start_run({}, name="a").run_id
    b = store.start_run({}, name="b").run_id
    c = store.start_run({}, name="c").run_id
    store.log_metrics(a, {"recall": 0.90})
    store.log_metrics(b, {"recall": 0.95})
    store.log_params(a, {"hpo.n_trials": 10})
    store.finish_run(a)
    store.finish_run(b)

    frame = compare_runs(store, [a, b, c], metric_keys=["recall"], param_keys=["hpo.n_trials"], sort_by="recall")
    assert list(frame.columns) == ["run_id", "name", "status", "recall", "param.hpo.n_trials"]
    assert frame["name"].tolist() == ["b", "a", "c"]
    assert frame.loc[2, "status"] == "running"
    assert np.isnan(frame.loc[2, "recall"])
    assert frame.loc[1, "param.hpo.n_trials"] == "10"
    with pytest.raises(ValueError):
        compare_runs(store, [a], metric_keys=["recall"], sort_by="mcc")


def test_report_has_every_section(store):
    run_id = store.start_run({}).run_id
    store.log_artifact(run_id, "profile.json", json.dumps({"n_rows": 10}))
    store.finish_run(run_id)
    report = render_report(store, run_id)
    assert "Status: finished" in report
    assert report.startswith(f"# Run {run_id}")
    for section in ("Headline", *REPORT_SECTIONS):
        assert f"## {section}" in report
    assert '"n_rows": 10' in report
    assert NOT_RECORDED in report


def test_report_lists_lasso_coefficients(store):
    run_id = store.start_run({}).run_id
    store.log_params(run_id, {"features.method": "lasso"})
    features = pd.DataFrame({
        "feature": ["SEND_SMS", "CAMERA", "INTERNET"],
        "kept": [True, False, True],
        "coefficient": [0.8, 0.0, 0.3],
    })
    store.log_artifact(run_id, "features.csv", features.to_csv(index=False))
    store.log_metrics(run_id, {"recall": 0.97})
    store.finish_run(run_id)
    report = render_report(store, run_id)
    assert "LASSO kept features with coefficients:" in report
    assert "2 of 3 features kept" in report
    assert "SEND_SMS,0.8" in report
    assert "CAMERA" not in report
    assert "recall,0.97" in report


def test_comparison_and_metric_grid(store):
    ids = []
    for dataset, name, recall in [("drebin", "full", 0.97), ("drebin", "lite", 0.93), ("malgenome", "full", 0.99)]:
        run_id = store.start_run({}, name=name).run_id
        store.log_params(run_id, {"dataset": dataset})
        store.log_metrics(run_id, {"recall": recall, "mcc": recall - 0.1})
        ids.append(run_id)

    text = render_comparison(store, ids)
    assert text.startswith("# Run comparison")
    assert "Runs: 3" in text

    grid = metric_grid(store, ids, metric="recall")
    assert grid.shape == (2, 2)
    assert grid.loc["drebin", "lite"] == 0.93
    assert np.isnan(grid.loc["malgenome", "lite"])
    with pytest.raises(ValueError):
        metric_grid(store, ids, rows="seed")


def test_heatmaps_are_pngs(tmp_path):
    path = render_heatmap(np.array([[0.0, 1.0], [np.nan, 0.5]]), tmp_path / "grid.png", cell=3)
    with Image.open(path) as image:
        assert image.format == "PNG"
        assert image.size == (6, 6)

    missing = pd.DataFrame([[0, 1, 0], [1, 0, 0]])
    with Image.open(render_missingness(missing, tmp_path / "missing.png")) as image:
        assert image.size == (12, 8)

    frame = pd.DataFrame([[0.97, 0.93], [0.99, np.nan]], index=["drebin", "malgenome"], columns=["full", "lite"])
    with Image.open(render_grid(frame, tmp_path / "cmp.png")) as image:
        assert image.format == "PNG"
        assert image.size[0] > 96 and image.size[1] > 96

    with pytest.raises(ValueError):
        render_heatmap(np.zeros((0, 3)), tmp_path / "empty.png")
    with pytest.raises(ValueError):
        render_heatmap(np.zeros(4), tmp_path / "flat.png")
