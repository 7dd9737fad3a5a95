"""Append-only experiment store.

Layout under the store root:

    ledger.jsonl                     one JSON event per line, never rewritten
    runs/<run_id>/artifacts/...      files logged to a run

A run's state (params, metrics, artifacts, status) is the fold of its events
in ledger order. Appends are serialized with an advisory lock on the ledger
file, so several processes can share one store.
"""
import hashlib
import json
import logging
import math
import threading
import uuid
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path, PurePosixPath

import pandas as pd

try:
    import fcntl
except ImportError:  # Windows: thread lock only
    fcntl = None

logger = logging.getLogger(__name__)

RUN_STATES = ("running", "finished", "failed")
LEDGER_NAME = "ledger.jsonl"


class UnknownRunError(KeyError):
    pass


class RunStateError(RuntimeError):
    pass


class ArtifactIntegrityError(RuntimeError):
    pass


@dataclass
class RunRecord:
    run_id: str
    created_at: str
    config: dict
    name: str = ""
    parent_id: str | None = None
    env: dict = field(default_factory=dict)
    status: str = "running"
    finished_at: str | None = None
    params: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)     # relative path -> sha256

    def metric(self, key: str) -> float | None:
        """Latest logged value (highest step, then last written)."""
        history = self.metrics.get(key)
        if not history:
            return None
        return max(enumerate(history), key=lambda item: (item[1][0], item[0]))[1][1]

    @property
    def latest_metrics(self) -> dict[str, float]:
        return {k: self.metric(k) for k in sorted(self.metrics)}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def canonical_param(value) -> str:
    """String form under which a param value is stored."""
    if isinstance(value, str):
        return value
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):  # numpy scalars
        return canonical_param(value.item())
    return json.dumps(value, sort_keys=True, default=str)


def _check_artifact_name(name: str) -> str:
    path = PurePosixPath(name)
    if not name or path.is_absolute() or ".." in path.parts:
        raise ValueError(f"invalid artifact name {name!r}")
    return path.as_posix()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class RunStore:
    def __init__(self, root: Path | str):
        self.root = Path(root).expanduser()
        self.root.mkdir(parents=True, exist_ok=True)
        self.ledger_path = self.root / LEDGER_NAME
        self.ledger_path.touch(exist_ok=True)
        self._thread_lock = threading.RLock()
        self._runs: dict[str, RunRecord] = {}
        self._offset = 0

    # ---------------------------------------------------------------------------
    # Ledger
    # ---------------------------------------------------------------------------

    @contextmanager
    def _locked(self):
        with self._thread_lock:
            with open(self.ledger_path, "ab") as fh:
                if fcntl is not None:
                    fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
                try:
                    self._refresh()
                    yield fh
                finally:
                    if fcntl is not None:
                        fcntl.flock(fh.fileno(), fcntl.LOCK_UN)

    def _refresh(self) -> None:
        """Fold ledger events appended since the last read."""
        with open(self.ledger_path, "rb") as fh:
            fh.seek(self._offset)
            data = fh.read()
        end = data.rfind(b"\n") + 1
        for line in data[:end].splitlines():
            if line.strip():
                self._apply(json.loads(line))
        self._offset += end

    def _apply(self, event: dict) -> None:
        kind, run_id = event["event"], event["run_id"]
        if kind == "start":
            self._runs[run_id] = RunRecord(
                run_id=run_id,
                created_at=event["time"],
                config=event.get("config", {}),
                name=event.get("name", ""),
                parent_id=event.get("parent_id"),
                env=event.get("env", {}),
            )
            return
        run = self._runs[run_id]
        if kind == "params":
            run.params.update(event["params"])
        elif kind == "metric":
            run.metrics.setdefault(event["key"], []).append((event["step"], event["value"]))
        elif kind == "artifact":
            run.artifacts[event["name"]] = event["sha256"]
        elif kind == "finish":
            run.status = event["status"]
            run.finished_at = event["time"]

    def _append(self, fh, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, allow_nan=False) + "\n"
        fh.write(line.encode("utf-8"))
        fh.flush()
        self._refresh()

    def _running(self, run_id: str) -> RunRecord:
        run = self._runs.get(run_id)
        if run is None:
            raise UnknownRunError(run_id)
        if run.status != "running":
            raise RunStateError(f"run {run_id} is {run.status}; finished runs are immutable")
        return run

    # ---------------------------------------------------------------------------
    # Writing
    # ---------------------------------------------------------------------------

    def start_run(
        self,
        config: dict,
        parent: str | None = None,
        name: str = "",
        env: dict | None = None,
    ) -> RunRecord:
        run_id = uuid.uuid4().hex
        with self._locked() as fh:
            if parent is not None and parent not in self._runs:
                raise UnknownRunError(parent)
            self.artifact_dir(run_id).mkdir(parents=True, exist_ok=True)
            self._append(fh, {
                "event": "start",
                "run_id": run_id,
                "time": _now(),
                "config": config,
                "name": name,
                "parent_id": parent,
                "env": env or {},
            })
            logger.debug("Started run %s%s", run_id, f" (parent {parent})" if parent else "")
            return self._runs[run_id]

    def log_params(self, run_id: str, params: dict) -> RunRecord:
        """Params are write-once: re-logging the same value is a no-op."""
        with self._locked() as fh:
            run = self._running(run_id)
            new = {}
            for key, value in params.items():
                text = canonical_param(value)
                old = run.params.get(key)
                if old is not None and old != text:
                    raise RunStateError(f"param {key!r} already set to {old!r}, refusing {text!r}")
                if old is None:
                    new[str(key)] = text
            if new:
                self._append(fh, {"event": "params", "run_id": run_id, "params": new})
            return run

    def log_metrics(self, run_id: str, metrics: dict, step: int = 0) -> RunRecord:
        """All-or-nothing: one non-finite value rejects the whole batch."""
        values = {str(key): float(value) for key, value in metrics.items()}
        for key, value in values.items():
            if not math.isfinite(value):
                raise ValueError(f"metric {key!r} is not finite: {value}")
        with self._locked() as fh:
            run = self._running(run_id)
            for key, value in values.items():
                self._append(fh, {
                    "event": "metric",
                    "run_id": run_id,
                    "key": key,
                    "value": value,
                    "step": int(step),
                    "time": _now(),
                })
            return run

    def log_artifact(self, run_id: str, name: str, payload: bytes | str | Path) -> Path:
        """
        Store ``payload`` (bytes, text, or the path of an existing file) as
        ``name`` under the run's artifacts directory and record its hash.
        """
        name = _check_artifact_name(name)
        if isinstance(payload, Path):
            data = payload.read_bytes()
        elif isinstance(payload, str):
            data = payload.encode("utf-8")
        else:
            data = bytes(payload)
        with self._locked() as fh:
            self._running(run_id)
            target = self.artifact_dir(run_id) / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            self._append(fh, {
                "event": "artifact",
                "run_id": run_id,
                "name": name,
                "sha256": sha256_bytes(data),
                "size": len(data),
            })
        return target

    def finish_run(self, run_id: str, status: str = "finished") -> RunRecord:
        if status not in ("finished", "failed"):
            raise ValueError(f"cannot finish a run with status {status!r}")
        with self._locked() as fh:
            run = self._running(run_id)
            self._append(fh, {"event": "finish", "run_id": run_id, "status": status, "time": _now()})
            logger.debug("Run %s %s", run_id, status)
            return run

    # ---------------------------------------------------------------------------
    # Reading
    # ---------------------------------------------------------------------------

    def artifact_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id / "artifacts"

    def get_run(self, run_id: str) -> RunRecord:
        with self._thread_lock:
            self._refresh()
            run = self._runs.get(run_id)
        if run is None:
            raise UnknownRunError(run_id)
        return run

    def list_runs(self, parent: str | None = None, status: str | None = None) -> list[RunRecord]:
        with self._thread_lock:
            self._refresh()
            runs = list(self._runs.values())
        if parent is not None:
            runs = [r for r in runs if r.parent_id == parent]
        if status is not None:
            runs = [r for r in runs if r.status == status]
        return runs

    def children(self, run_id: str) -> list[RunRecord]:
        self.get_run(run_id)
        return self.list_runs(parent=run_id)

    def resolve_id(self, prefix: str) -> str:
        """Full run id from a unique prefix."""
        with self._thread_lock:
            self._refresh()
            matches = [rid for rid in self._runs if rid.startswith(prefix)]
        if len(matches) != 1:
            raise UnknownRunError(prefix if not matches else f"{prefix} (ambiguous)")
        return matches[0]

    def read_artifact(self, run_id: str, name: str) -> bytes:
        """Artifact bytes after checking them against the logged hash."""
        run = self.get_run(run_id)
        name = _check_artifact_name(name)
        if name not in run.artifacts:
            raise FileNotFoundError(f"run {run_id} has no artifact {name!r}")
        path = self.artifact_dir(run_id) / name
        if not path.exists():
            raise ArtifactIntegrityError(f"artifact {name!r} of run {run_id} is missing on disk")
        data = path.read_bytes()
        if sha256_bytes(data) != run.artifacts[name]:
            raise ArtifactIntegrityError(f"artifact {name!r} of run {run_id} fails hash verification")
        return data

    def verify_run(self, run_id: str) -> list[str]:
        """Names of artifacts that are missing or corrupted (empty when intact)."""
        bad = []
        for name in sorted(self.get_run(run_id).artifacts):
            try:
                self.read_artifact(run_id, name)
            except ArtifactIntegrityError:
                bad.append(name)
        return bad


def compare_runs(
    store: RunStore,
    run_ids,
    metric_keys=(),
    param_keys=(),
    sort_by: str | None = None,
    ascending: bool = False,
) -> pd.DataFrame:
    """One row per run with the requested metrics and params; gaps are NaN."""
    rows = []
    for run_id in run_ids:
        run = store.get_run(run_id)
        row = {"run_id": run.run_id, "name": run.name, "status": run.status}
        row.update({k: run.metric(k) for k in metric_keys})
        row.update({f"param.{k}": run.params.get(k) for k in param_keys})
        rows.append(row)
    columns = ["run_id", "name", "status", *metric_keys, *(f"param.{k}" for k in param_keys)]
    frame = pd.DataFrame(rows, columns=columns)
    for k in metric_keys:
        frame[k] = pd.to_numeric(frame[k], errors="coerce")
    if sort_by is not None:
        if sort_by not in frame.columns:
            raise ValueError(f"cannot sort by {sort_by!r}; not a compared column")
        frame = frame.sort_values(sort_by, ascending=ascending, kind="stable").reset_index(drop=True)
    return frame
