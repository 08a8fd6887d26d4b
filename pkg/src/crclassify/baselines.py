"""DLDA baseline: the sparse classifier without cross-residualization.

Identical screening and diagonal-LDA machinery to the sparse component,
fit directly to the centered feature matrix, so benchmark gaps between
the two isolate the value of cross-residualization.  Because there is
no ensemble here to supply an error estimate, the retained feature
count is chosen by leave-one-out misclassification, with the natural
DLDA threshold applied inside each fold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FoldClassEmpty, TooFewSamples
from .gram import DataMatrix, LabelVector, center_columns
from .sparse import (
    _TINY,
    VAR_FLOOR_REL,
    DldaModel,
    FeatureCountTrace,
    _fold_stats,
    feature_count_grid,
    fit_dlda,
    marginal_pvalues,
    score_dlda,
)


@dataclass(frozen=True)
class DldaBaseline:
    """Fitted baseline: a DldaModel plus its own grid-search trace."""

    model: DldaModel
    trace: FeatureCountTrace
    centering: np.ndarray


def _loo_error_rates(
    x: np.ndarray, t: LabelVector, candidates: np.ndarray
) -> np.ndarray:
    """Leave-one-out misclassification rate for each candidate count.

    Mirrors the sparse component's fold loop (per-fold re-screening,
    cumulative-sum evaluation over the fold's feature order) but scores
    against the fold's midpoint threshold instead of feeding an
    ensemble.
    """
    n = x.shape[0]
    stats = _fold_stats(x, t)
    total_sq = stats["sq1"] + stats["sq2"]
    idx = np.asarray(candidates, dtype=np.intp) - 1
    errors = np.zeros(idx.size)
    for i in range(n):
        in_neg = bool(stats["neg"][i])
        row = x[i]
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
        diff = m2 - m1
        tstat = diff / np.sqrt(v * (1.0 / n1 + 1.0 / n2))
        order = np.argsort(-np.abs(tstat), kind="stable")
        centered = (row - 0.5 * (m1 + m2))[order]
        margin = np.cumsum((diff / v)[order] * centered)[idx] + np.log(n2 / n1)
        predicted = np.where(margin >= 0, 1.0, -1.0)
        errors += predicted != t.values[i]
    return errors / n


def fit_dlda_baseline(raw, labels, *, grid=None) -> DldaBaseline:
    """Center, screen, pick the feature count by LOO error, fit DLDA."""
    t = labels if isinstance(labels, LabelVector) else LabelVector.from_values(labels)
    if t.n < 8 or min(t.n1, t.n2) < 4:
        raise TooFewSamples(
            f"need n >= 8 with 4 per class, got {t.n1} and {t.n2}"
        )
    dm: DataMatrix = center_columns(raw)
    candidates = feature_count_grid(dm.p) if grid is None else (
        np.unique(np.asarray(grid, dtype=np.int64))
    )
    rates = _loo_error_rates(dm.values, t, candidates)
    best = int(np.argmin(rates))  # first minimum = smallest count
    trace = FeatureCountTrace(
        grid=candidates, estimated_errors=rates, chosen=int(candidates[best])
    )
    screen = marginal_pvalues(dm.values, t)
    model = fit_dlda(dm.values, t, screen.order[: trace.chosen])
    return DldaBaseline(model=model, trace=trace, centering=dm.mu_hat)


def predict_dlda_baseline(baseline: DldaBaseline, z_raw) -> np.ndarray:
    """Labels for raw rows using the natural DLDA threshold."""
    z = np.atleast_2d(np.asarray(z_raw, dtype=np.float64)) - baseline.centering
    scores = score_dlda(baseline.model, z)
    return np.where(scores - baseline.model.intercept >= 0, 1, -1)
