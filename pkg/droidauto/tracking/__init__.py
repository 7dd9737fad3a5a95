from droidauto.tracking.heatmap import render_grid, render_heatmap, render_missingness
from droidauto.tracking.report import REPORT_SECTIONS, metric_grid, render_comparison, render_report
from droidauto.tracking.store import (
    ArtifactIntegrityError,
    RunRecord,
    RunStateError,
    RunStore,
    UnknownRunError,
    compare_runs,
)

__all__ = [
    "REPORT_SECTIONS",
    "ArtifactIntegrityError",
    "RunRecord",
    "RunStateError",
    "RunStore",
    "UnknownRunError",
    "compare_runs",
    "metric_grid",
    "render_comparison",
    "render_grid",
    "render_heatmap",
    "render_missingness",
    "render_report",
]
