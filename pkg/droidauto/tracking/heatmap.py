"""PNG heatmaps for run artifacts: the missing-value matrix of a dataset and
metric grids from run comparisons."""
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image, ImageDraw, ImageFont

# White -> dark blue.
LOW_RGB = np.array([247, 251, 255], dtype=np.float64)
HIGH_RGB = np.array([8, 48, 107], dtype=np.float64)
MISSING_RGB = (200, 200, 200)
MAX_IMAGE_SIDE = 4096


def _ramp(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    span = vmax - vmin
    t = np.zeros_like(values) if span <= 0 else (values - vmin) / span
    t = np.clip(np.nan_to_num(t, nan=0.0), 0.0, 1.0)
    rgb = LOW_RGB + t[..., None] * (HIGH_RGB - LOW_RGB)
    rgb = np.rint(rgb).astype(np.uint8)
    rgb[np.isnan(values)] = MISSING_RGB
    return rgb


def render_heatmap(
    grid: np.ndarray,
    path: Path,
    cell: int = 1,
    vmin: float | None = None,
    vmax: float | None = None,
) -> Path:
    """Write a 2-D array as a PNG, one ``cell``-sized square per entry; NaN is grey."""
    values = np.asarray(grid, dtype=np.float64)
    if values.ndim != 2 or 0 in values.shape:
        raise ValueError(f"heatmap needs a non-empty 2-D grid, got shape {values.shape}")
    finite = values[np.isfinite(values)]
    lo = vmin if vmin is not None else (finite.min() if finite.size else 0.0)
    hi = vmax if vmax is not None else (finite.max() if finite.size else 1.0)
    cell = max(1, min(cell, MAX_IMAGE_SIDE // max(values.shape)))
    rgb = _ramp(values, lo, hi).repeat(cell, axis=0).repeat(cell, axis=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(path, format="PNG")
    return path


def render_missingness(matrix: pd.DataFrame, path: Path) -> Path:
    """Rows x columns image of a 0/1 missing-value matrix (dark = missing)."""
    return render_heatmap(matrix.to_numpy(dtype=np.float64), path, cell=4, vmin=0.0, vmax=1.0)


def render_grid(frame: pd.DataFrame, path: Path, cell: int = 48, vmin: float = 0.0, vmax: float = 1.0) -> Path:
    """
    Labelled heatmap of a metric grid (for example datasets x runs for recall).

    Row labels are drawn on the left, column labels above, and each cell
    carries its value to two decimals.
    """
    values = frame.to_numpy(dtype=np.float64)
    if values.ndim != 2 or 0 in values.shape:
        raise ValueError("cannot render an empty comparison grid")
    font = ImageFont.load_default()
    row_labels = [str(r) for r in frame.index]
    col_labels = [str(c) for c in frame.columns]
    probe = ImageDraw.Draw(Image.new("RGB", (1, 1)))
    label_w = max(int(probe.textlength(t, font=font)) for t in row_labels) + 8
    header_h = 16

    body = _ramp(values, vmin, vmax).repeat(cell, axis=0).repeat(cell, axis=1)
    width = label_w + body.shape[1]
    height = header_h + body.shape[0]
    image = Image.new("RGB", (width, height), (255, 255, 255))
    image.paste(Image.fromarray(body), (label_w, header_h))

    draw = ImageDraw.Draw(image)
    for j, text in enumerate(col_labels):
        draw.text((label_w + j * cell + 2, 2), text[: max(1, cell // 6)], fill=(0, 0, 0), font=font)
    for i, text in enumerate(row_labels):
        draw.text((2, header_h + i * cell + cell // 2 - 5), text, fill=(0, 0, 0), font=font)
    midpoint = (vmin + vmax) / 2
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            v = values[i, j]
            if np.isnan(v):
                continue
            ink = (255, 255, 255) if v > midpoint else (0, 0, 0)
            draw.text((label_w + j * cell + 4, header_h + i * cell + cell // 2 - 5), f"{v:.2f}", fill=ink, font=font)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")
    return path
