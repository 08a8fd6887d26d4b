"""CRC-S: the sparse-signal classifier.

After cross-residualization the feature columns are approximately
decorrelated, so the sparse component is a diagonal LDA over the
features with the smallest two-sample t-test p-values.  The retained
feature count is picked by a grid search that, for every candidate,
rebuilds the leave-one-out sparse scores, pairs them with the dense
scores, and minimizes the score-space LDA error estimate.

Each leave-one-out sparse score re-screens features inside the fold
and, before scoring, projects the fold's class means away from that
row's component of (Gram inverse times training matrix) -- the row's
implicit contribution to the other residualized rows, which would
otherwise leak label information at large feature counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .errors import FoldClassEmpty, InvalidData, ShapeError
from .gram import DataMatrix, GramState, LabelVector
from .meta import fit_meta
from .residualization import CrossResidualized

logger = logging.getLogger(__name__)

# Per-feature pooled variances are clamped below this multiple of the
# feature's mean square, so constant columns cannot produce infinite
# weights.
VAR_FLOOR_REL = 1e-12
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ScreeningResult:
    """Per-column p-values and the induced feature order.

    ``order`` sorts p-values ascending with ties broken by column
    index, so identical inputs always screen identically.
    """

    pvalues: np.ndarray
    order: np.ndarray


@dataclass(frozen=True)
class DldaModel:
    """Diagonal LDA over a fixed feature subset.

    ``weights[j] = mean_diff[j] / pooled_var[j]``; the score of a row x
    is sum_j weights[j] * x[features[j]] with no additive constant (the
    ensemble recalibrates).  ``intercept`` is the natural midpoint
    threshold for standalone use.
    """

    feature_indices: np.ndarray
    mean_diff: np.ndarray
    pooled_var: np.ndarray
    weights: np.ndarray
    intercept: float


@dataclass(frozen=True)
class FeatureCountTrace:
    """Grid-search record: candidate counts, error estimates, winner."""

    grid: np.ndarray
    estimated_errors: np.ndarray
    chosen: int


def _matrix_of(s_hat) -> np.ndarray:
    if isinstance(s_hat, CrossResidualized):
        return s_hat.s_hat
    return np.asarray(s_hat, dtype=np.float64)


def marginal_pvalues(s_hat, t: LabelVector) -> ScreeningResult:
    """Equal-variance two-sample t-test p-value for every column.

    Zero-variance columns get p = 1 when class means agree; otherwise
    the variance floor keeps the statistic finite (and essentially
    infinite relative to real columns, so such features screen first).
    """
    x = _matrix_of(s_hat)
    if x.shape[0] != t.n:
        raise ShapeError("matrix and labels disagree on n")
    neg = t.values < 0
    pos = ~neg
    n1, n2 = t.n1, t.n2
    m1 = x[neg].mean(axis=0)
    m2 = x[pos].mean(axis=0)
    ss = ((x[neg] - m1) ** 2).sum(axis=0) + ((x[pos] - m2) ** 2).sum(axis=0)
    pooled = ss / (n1 + n2 - 2)
    floor = VAR_FLOOR_REL * (x**2).mean(axis=0)
    v = np.maximum(np.maximum(pooled, floor), _TINY)
    diff = m2 - m1
    tstat = diff / np.sqrt(v * (1.0 / n1 + 1.0 / n2))
    pvalues = 2.0 * stdtr(n1 + n2 - 2, -np.abs(tstat))
    pvalues[(pooled <= 0.0) & (diff == 0.0)] = 1.0
    order = np.argsort(pvalues, kind="stable")
    return ScreeningResult(pvalues=pvalues, order=order)


def fit_dlda(s_hat, t: LabelVector, features) -> DldaModel:
    """Fit diagonal LDA on the given feature subset."""
    x = _matrix_of(s_hat)
    features = np.asarray(features, dtype=np.intp).ravel()
    if features.size == 0:
        raise InvalidData("feature subset is empty")
    if features.min() < 0 or features.max() >= x.shape[1]:
        raise ShapeError("feature index out of range")
    sel = x[:, features]
    neg = t.values < 0
    pos = ~neg
    m1 = sel[neg].mean(axis=0)
    m2 = sel[pos].mean(axis=0)
    ss = ((sel[neg] - m1) ** 2).sum(axis=0) + ((sel[pos] - m2) ** 2).sum(axis=0)
    pooled = ss / (t.n - 2)
    floor = VAR_FLOOR_REL * (sel**2).mean(axis=0)
    clamped = pooled < floor
    if clamped.any():
        logger.warning(
            "clamped %d near-zero feature variances to the floor", clamped.sum()
        )
    v = np.maximum(np.maximum(pooled, floor), _TINY)
    diff = m2 - m1
    weights = diff / v
    intercept = float(weights @ ((m1 + m2) / 2.0)) - float(np.log(t.n2 / t.n1))
    return DldaModel(
        feature_indices=features,
        mean_diff=diff,
        pooled_var=v,
        weights=weights,
        intercept=intercept,
    )


def score_dlda(model: DldaModel, x) -> np.ndarray | float:
    """Raw (interceptless) DLDA score of a row or batch of rows."""
    arr = np.asarray(x, dtype=np.float64)
    return arr[..., model.feature_indices] @ model.weights


def feature_count_grid(p: int) -> np.ndarray:
    """Candidate feature counts: round(2^e) for e = 0, 0.5, 1, ...

    The exponent ladder runs to floor(sqrt(p)); candidates are rounded,
    capped at p, and deduplicated.
    """
    if p < 1:
        raise InvalidData("need at least one feature")
    exponents = np.arange(0.0, np.floor(np.sqrt(p)) + 0.25, 0.5)
    candidates = np.minimum(np.rint(np.exp2(exponents)), float(p)).astype(np.int64)
    return np.unique(np.maximum(candidates, 1))


def _fold_stats(s: np.ndarray, t: LabelVector):
    """Class sums and sums of squares, for O(p)-per-fold downdating."""
    neg = t.values < 0
    pos = ~neg
    return {
        "neg": neg,
        "sum1": s[neg].sum(axis=0),
        "sum2": s[pos].sum(axis=0),
        "sq1": (s[neg] ** 2).sum(axis=0),
        "sq2": (s[pos] ** 2).sum(axis=0),
    }


def _loo_sparse_scores_grid(
    s: np.ndarray,
    t: LabelVector,
    q_rows: np.ndarray,
    candidates: np.ndarray,
) -> np.ndarray:
    """Leave-one-out sparse scores for every candidate feature count.

    Returns an (n, len(candidates)) array.  Per fold, features are
    ordered by the fold's t-statistics and a cumulative sum along that
    order evaluates every candidate count in O(1) after an O(p) setup.

    Before screening, the fold's class-mean difference is projected
    away from the held-out row's component of (Gram inverse times
    training matrix).  Each row's implicit contribution to the other
    rows' residuals shifts the fold means by an almost exactly rank-one
    term along that direction (empirically R^2 ~ 0.99), so the
    full-length projection removes the label leak that otherwise
    inflates leave-one-out accuracy at large feature counts.  The
    corrected means feed both the screening statistics and the weights;
    screening on uncorrected statistics would re-introduce the leak
    through feature selection.  The projection is deliberately done on
    the full-length mean vector: restricted to the selected features it
    would also annihilate the genuine signal, because the residualized
    target row is itself nearly parallel to the same direction.
    """
    n, p = s.shape
    stats = _fold_stats(s, t)
    total_sq = stats["sq1"] + stats["sq2"]
    idx = np.asarray(candidates, dtype=np.intp) - 1
    out = np.zeros((n, idx.size))
    for i in range(n):
        in_neg = bool(stats["neg"][i])
        row = s[i]
        sum1 = stats["sum1"] - (row if in_neg else 0.0)
        sum2 = stats["sum2"] - (0.0 if in_neg else row)
        sq1 = stats["sq1"] - (row**2 if in_neg else 0.0)
        sq2 = stats["sq2"] - (0.0 if in_neg else row**2)
        n1 = t.n1 - in_neg
        n2 = t.n2 - (not in_neg)
        if n1 < 1 or n2 < 1:
            raise FoldClassEmpty(f"fold {i} leaves a class empty")
        m1 = sum1 / n1
        m2 = sum2 / n2
        pooled = ((sq1 - n1 * m1**2) + (sq2 - n2 * m2**2)) / (n1 + n2 - 2)
        floor = VAR_FLOOR_REL * (total_sq - row**2) / (n1 + n2)
        v = np.maximum(np.maximum(pooled, floor), _TINY)
        q = q_rows[i]
        qq = float(q @ q)
        diff = m2 - m1
        if qq > 0.0:
            diff = diff - ((diff @ q) / qq) * q
        tstat = diff / np.sqrt(v * (1.0 / n1 + 1.0 / n2))
        order = np.argsort(-np.abs(tstat), kind="stable")
        base = np.cumsum(diff[order] * row[order] / v[order])
        out[i] = base[idx]
    return out


def _leakage_rows(g: GramState, dm: DataMatrix) -> np.ndarray:
    """Rows of (filled Gram inverse) times the training matrix."""
    return g.effective_inverse @ dm.values


def loo_scores_crcs(
    s_hat,
    t: LabelVector,
    n_features: int,
    g: GramState,
    dm: DataMatrix,
    q_rows: np.ndarray | None = None,
) -> np.ndarray:
    """Leave-one-out sparse score of each row at a fixed feature count."""
    s = _matrix_of(s_hat)
    if not 1 <= n_features <= s.shape[1]:
        raise ShapeError(f"feature count {n_features} out of range")
    if q_rows is None:
        q_rows = _leakage_rows(g, dm)
    cand = np.array([n_features], dtype=np.intp)
    return _loo_sparse_scores_grid(s, t, q_rows, cand)[:, 0]


def select_feature_count(
    s_hat,
    t: LabelVector,
    g: GramState,
    dm: DataMatrix,
    dense_loo: np.ndarray,
    grid=None,
) -> tuple[FeatureCountTrace, np.ndarray]:
    """Grid-search the sparse feature count against the ensemble error.

    For every candidate count the leave-one-out (dense, sparse) score
    pairs are fit with the score-space LDA and its closed-form error
    estimate recorded; the winner is the smallest count attaining the
    minimum.  Returns the trace and the sparse leave-one-out scores at
    the chosen count (so callers need not recompute them).
    """
    s = _matrix_of(s_hat)
    grid = feature_count_grid(s.shape[1]) if grid is None else (
        np.unique(np.asarray(grid, dtype=np.int64))
    )
    if grid.size == 0 or grid.min() < 1 or grid.max() > s.shape[1]:
        raise InvalidData("candidate grid is empty or out of range")
    q_rows = _leakage_rows(g, dm)
    scores = _loo_sparse_scores_grid(s, t, q_rows, grid.astype(np.intp))
    errors = np.array(
        [fit_meta(dense_loo, scores[:, j], t).est_error for j in range(grid.size)]
    )
    best = int(np.argmin(errors))  # first minimum = smallest count
    trace = FeatureCountTrace(
        grid=grid, estimated_errors=errors, chosen=int(grid[best])
    )
    return trace, scores[:, best]
