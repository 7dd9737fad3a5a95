"""Two-group ANOVA F statistics and k-best selection."""
import numpy as np
from scipy import stats

from droidauto.features.mask import FeatureMask

# Within-group sums of squares this small relative to the total are treated as zero.
ZERO_WITHIN_RTOL = 1e-12


def anova_f_scores(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Per-feature F = (SSB / 1) / (SSW / (n - 2)) for the benign/malware groups.

    Features constant within each class but different between classes score
    +inf; features with no variance at all score 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    if X.shape[0] != y.size:
        raise ValueError("X and y disagree on the number of rows")
    groups = [X[y == c] for c in (0, 1)]
    if any(g.shape[0] == 0 for g in groups):
        raise ValueError("ANOVA needs both classes present")

    n = X.shape[0]
    grand = X.mean(axis=0)
    ssb = sum(g.shape[0] * (g.mean(axis=0) - grand) ** 2 for g in groups)
    ssw = sum(((g - g.mean(axis=0)) ** 2).sum(axis=0) for g in groups)
    sst = ((X - grand) ** 2).sum(axis=0)

    df_within = n - 2
    scores = np.zeros(X.shape[1])
    varying = sst > 0
    degenerate = varying & (ssw <= ZERO_WITHIN_RTOL * sst)
    regular = varying & ~degenerate
    if df_within > 0:
        scores[regular] = ssb[regular] / (ssw[regular] / df_within)
    else:
        degenerate |= regular
    scores[degenerate] = np.inf
    return scores


def anova_p_values(scores: np.ndarray, n_rows: int) -> np.ndarray:
    """Upper-tail probabilities of the F(1, n - 2) distribution."""
    return stats.f.sf(np.asarray(scores, dtype=np.float64), 1, max(n_rows - 2, 1))


def select_k_best(scores: np.ndarray, k: int) -> FeatureMask:
    """Keep the k highest scores; ties go to the lower column index."""
    scores = np.asarray(scores, dtype=np.float64)
    d = scores.size
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    ranked = np.where(np.isnan(scores), -np.inf, scores)
    order = np.lexsort((np.arange(d), -ranked))
    keep = np.zeros(d, dtype=bool)
    keep[order[:k]] = True
    return FeatureMask(keep=keep, provenance="anova", scores=scores)
