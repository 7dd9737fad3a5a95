"""Classification metrics (malware = positive class), ranking curves, and
resource probes for pipeline stages."""
import logging
import math
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np
import pandas as pd
import psutil
from scipy.stats import rankdata

from droidauto.data.profiler import NOT_COLLECTED

try:
    import resource
except ImportError:  # Windows
    resource = None

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricSet:
    recall: float
    precision: float
    accuracy: float
    f1: float
    mcc: float
    roc_auc: float | None = None
    counts: ConfusionMatrix | None = None

    def to_dict(self) -> dict[str, float]:
        """Flat key -> float mapping, as logged to the run store."""
        out = {
            "recall": self.recall,
            "precision": self.precision,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "mcc": self.mcc,
        }
        if self.roc_auc is not None:
            out["roc_auc"] = self.roc_auc
        if self.counts is not None:
            out.update({k: float(v) for k, v in asdict(self.counts).items()})
        return {k: float(v) for k, v in out.items()}


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} labels vs {y_pred.size} predictions")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0 and 1")
    t, p = y_true == 1, y_pred == 1
    return ConfusionMatrix(
        tp=int(np.sum(t & p)),
        fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)),
        tn=int(np.sum(~t & ~p)),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def classification_metrics(cm: ConfusionMatrix) -> MetricSet:
    """Recall, precision, accuracy, F1 and MCC; zero denominators give 0."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics on zero samples")
    tp, fp, fn, tn = cm.tp, cm.fp, cm.fn, cm.tn
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    f1 = _ratio(2 * precision * recall, precision + recall)
    den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = (tp * tn - fp * fn) / den if den else 0.0
    return MetricSet(
        recall=recall,
        precision=precision,
        accuracy=(tp + tn) / cm.total,
        f1=f1,
        mcc=max(-1.0, min(1.0, mcc)),
        counts=cm,
    )


def _check_binary_scores(y_true, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y_true).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ValueError("y_true and scores differ in length")
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("ranking metrics need both classes in y_true")
    return y, s


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney estimate: P(s+ > s-) + 0.5 * P(s+ == s-)."""
    y, s = _check_binary_scores(y_true, scores)
    ranks = rankdata(s)  # average ranks resolve ties
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _threshold_sweep(y: np.ndarray, s: np.ndarray):
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tps = np.cumsum(y_sorted == 1)[last_of_group]
    fps = np.cumsum(y_sorted != 1)[last_of_group]
    return s_sorted[last_of_group], tps, fps


def pr_curve(y_true, scores) -> list[tuple[float, float]]:
    """(recall, precision) at each distinct threshold, thresholds descending."""
    y, s = _check_binary_scores(y_true, scores)
    _, tps, fps = _threshold_sweep(y, s)
    recall = tps / tps[-1]
    precision = tps / (tps + fps)
    return [(float(r), float(p)) for r, p in zip(recall, precision)]


def roc_curve(y_true, scores) -> list[tuple[float, float]]:
    """(false positive rate, true positive rate), starting at (0, 0)."""
    y, s = _check_binary_scores(y_true, scores)
    _, tps, fps = _threshold_sweep(y, s)
    tpr = np.r_[0.0, tps / tps[-1]]
    fpr = np.r_[0.0, fps / fps[-1]]
    return [(float(f), float(t)) for f, t in zip(fpr, tpr)]


def curves_frame(y_true, scores) -> tuple[pd.DataFrame, pd.DataFrame]:
    """PR and ROC curves as DataFrames with their thresholds, ready for CSV."""
    y, s = _check_binary_scores(y_true, scores)
    thresholds, tps, fps = _threshold_sweep(y, s)
    pr = pd.DataFrame({
        "threshold": thresholds,
        "recall": tps / tps[-1],
        "precision": tps / (tps + fps),
    })
    roc = pd.DataFrame({
        "threshold": np.r_[np.inf, thresholds],
        "fpr": np.r_[0.0, fps / fps[-1]],
        "tpr": np.r_[0.0, tps / tps[-1]],
    })
    return pr, roc


def evaluate(y_true, proba: np.ndarray) -> MetricSet:
    """Metrics for (n, 2) probabilities; exact ties count as malware."""
    proba = np.asarray(proba, dtype=np.float64)
    y_pred = (proba[:, 1] >= proba[:, 0]).astype(np.int64)
    base = classification_metrics(confusion(y_true, y_pred))
    y = np.asarray(y_true).ravel()
    auc = roc_auc(y, proba[:, 1]) if 0 < y.sum() < y.size else None
    return MetricSet(
        recall=base.recall,
        precision=base.precision,
        accuracy=base.accuracy,
        f1=base.f1,
        mcc=base.mcc,
        roc_auc=auc,
        counts=base.counts,
    )


# ---------------------------------------------------------------------------
# Resource probes
# ---------------------------------------------------------------------------

@dataclass
class ResourceReport:
    label: str
    wall_time: float = 0.0
    cpu_time: float | None = None
    peak_memory: int | None = None      # bytes, process high-water mark where available
    disk: str = NOT_COLLECTED
    network: str = NOT_COLLECTED
    children: list["ResourceReport"] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "wall_time": self.wall_time,
            "cpu_time": self.cpu_time,
            "peak_memory": self.peak_memory,
            "disk": self.disk,
            "network": self.network,
            "children": [c.to_dict() for c in self.children],
        }


def _cpu_seconds(proc: psutil.Process) -> float | None:
    try:
        t = proc.cpu_times()
        return float(t.user + t.system)
    except (psutil.Error, OSError) as exc:
        logger.debug("cpu time unavailable: %s", exc)
        return None


def _peak_rss(proc: psutil.Process) -> int | None:
    """Process resident-memory high-water mark in bytes."""
    if resource is not None:
        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        # kilobytes on Linux, bytes on macOS
        return int(peak if sys.platform == "darwin" else peak * 1024)
    try:
        info = proc.memory_info()
    except (psutil.Error, OSError) as exc:
        logger.debug("memory info unavailable: %s", exc)
        return None
    return int(getattr(info, "peak_wset", info.rss))


_active: list[ResourceReport] = []


@contextmanager
def probe(label: str) -> Iterator[ResourceReport]:
    """
    Measure a stage: wall clock, process CPU time and resident memory.

    Probes nest: a probe opened inside another is recorded as its child.
    """
    report = ResourceReport(label=label)
    if _active:
        _active[-1].children.append(report)
    _active.append(report)
    proc = psutil.Process()
    cpu_start = _cpu_seconds(proc)
    mem_start = _peak_rss(proc)
    start = time.perf_counter()
    try:
        yield report
    finally:
        report.wall_time = time.perf_counter() - start
        cpu_end = _cpu_seconds(proc)
        if cpu_start is not None and cpu_end is not None:
            report.cpu_time = max(0.0, cpu_end - cpu_start)
        mem_end = _peak_rss(proc)
        readings = [m for m in (mem_start, mem_end) if m is not None]
        report.peak_memory = max(readings) if readings else None
        _active.remove(report)
        logger.debug("%s took %.3fs", label, report.wall_time)
