"""Two-dimensional LDA over (dense, sparse) score pairs.

Serves two roles: it is the ensemble's meta-classifier, and its
closed-form error estimate 1 - Phi(sqrt(delta' Sigma^-1 delta)) drives
the grid search over the sparse feature count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gram import LabelVector


@dataclass(frozen=True)
class MetaLda:
    """Fitted score-space LDA.

    Combined score of a pair (dense, sparse) is
    ``intercept + coef_dense * dense + coef_sparse * sparse``; the
    predicted label is its sign (ties go to +1).
    """

    intercept: float
    coef_dense: float
    coef_sparse: float
    class_means: np.ndarray  # 2 x 2, rows: class 1 then class 2
    pooled_cov: np.ndarray  # 2 x 2
    priors: np.ndarray  # (n1/n, n2/n)
    est_error: float


def fit_meta(dense: np.ndarray, sparse: np.ndarray, t: LabelVector) -> MetaLda:
    """Pooled-covariance LDA on n score pairs with empirical priors."""
    x = np.column_stack([dense, sparse])
    neg = t.values < 0
    pos = ~neg
    mu1 = x[neg].mean(axis=0)
    mu2 = x[pos].mean(axis=0)
    centered = x - np.where(neg[:, None], mu1, mu2)
    cov = (centered.T @ centered) / t.n
    delta = mu2 - mu1
    beta = _solve_psd(cov, delta)
    maha2 = max(float(delta @ beta), 0.0)
    intercept = -0.5 * float((mu1 + mu2) @ beta) + np.log(t.n2 / t.n1)
    return MetaLda(
        intercept=intercept,
        coef_dense=float(beta[0]),
        coef_sparse=float(beta[1]),
        class_means=np.vstack([mu1, mu2]),
        pooled_cov=cov,
        priors=np.array([t.n1 / t.n, t.n2 / t.n]),
        est_error=estimated_error(maha2),
    )


def estimated_error(maha2: float) -> float:
    """Error estimate from a squared Mahalanobis separation.

    Equals 0.5 exactly when the class means coincide and decreases
    monotonically as the separation grows.
    """
    return float(1.0 - ndtr(np.sqrt(max(maha2, 0.0))))


def combined_scores(meta: MetaLda, dense, sparse) -> np.ndarray:
    return meta.intercept + meta.coef_dense * np.asarray(dense) + (
        meta.coef_sparse * np.asarray(sparse)
    )


def _solve_psd(cov: np.ndarray, delta: np.ndarray) -> np.ndarray:
    try:
        beta = np.linalg.solve(cov, delta)
        if np.all(np.isfinite(beta)):
            return beta
    except np.linalg.LinAlgError:
        pass
    # Degenerate score cloud (e.g. one score constant): least-squares
    # direction keeps the coefficients finite.
    return np.linalg.lstsq(cov, delta, rcond=None)[0]
