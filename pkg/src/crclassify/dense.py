"""CRC-L: the dense-signal classifier.

LDA on the projection of the data onto *all* n principal components.
Overfitting on the training rows is accepted (it behaves like ridgeless
regression and still generalizes when p >> n), and the whole fit
collapses to n x n algebra on the filled Gram matrix: the score of a
target z is

    (z X') { (1/n) R_Y G + fill * G^-1 Y [Y' G^-1 Y]^-1 Y' }^-1 Y (Y'Y)^-1 d

with X the centered training matrix, G the filled Gram, Y the class
indicator, R_Y its residual projector, and d = (-1, 1)'.  The LDA
covariance in component space is rank-deficient by two (both class
means are estimated), and the fill * ... term raises exactly those two
null directions; the additive constant of LDA is dropped because the
ensemble recalibrates scores anyway.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import FoldClassEmpty, ShapeError, SingularDenseFit
from .gram import DataMatrix, DowndatedGram, GramState, LabelVector, loo_gram

logger = logging.getLogger(__name__)

_RIDGE_REL = 1e-10


@dataclass(frozen=True)
class DenseModel:
    """Fitted dense-signal classifier.

    ``score_vec`` is the n-vector m such that score(z) = (z X') m; the
    inverse of the inner matrix (``core_matrix``) and the class
    contrast are kept for diagnostics.  ``intercept`` is the natural
    LDA threshold (midpoint of class mean scores minus the log prior
    ratio), used only when the model is evaluated standalone.
    """

    core_matrix: np.ndarray | None
    contrast: np.ndarray | None
    score_vec: np.ndarray
    intercept: float
    fill_value: float
    training: DataMatrix


def _inner_matrix(
    gram_aug: np.ndarray,
    inverse: np.ndarray,
    y: np.ndarray,
    counts: np.ndarray,
    fill: float,
) -> np.ndarray:
    m = y.shape[0]
    ryg = gram_aug - y @ ((y.T @ gram_aug) / counts[:, None])
    hy = inverse @ y
    k2 = y.T @ hy
    return ryg / m + fill * hy @ np.linalg.solve(k2, y.T)


def _solve_inner(inner: np.ndarray, rhs: np.ndarray, context: str) -> np.ndarray:
    try:
        out = np.linalg.solve(inner, rhs)
        if np.all(np.isfinite(out)):
            return out
    except np.linalg.LinAlgError:
        pass
    # One retry with a trace-scaled ridge before giving up.
    ridge = _RIDGE_REL * abs(np.trace(inner))
    logger.warning("dense inner matrix singular (%s); retrying with ridge", context)
    try:
        out = np.linalg.solve(inner + ridge * np.eye(inner.shape[0]), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularDenseFit(f"inner matrix singular ({context})") from exc
    if not np.all(np.isfinite(out)):
        raise SingularDenseFit(f"inner matrix produced non-finite scores ({context})")
    return out


def _fold_pieces(t: LabelVector, keep: np.ndarray):
    y = t.indicator()[keep]
    counts = y.sum(axis=0)
    if counts.min() < 1:
        raise FoldClassEmpty("a class has no members in this fold")
    rhs = y @ (np.array([-1.0, 1.0]) / counts)
    return y, counts, rhs


def fit_crcl(g: GramState, dm: DataMatrix, t: LabelVector) -> DenseModel:
    """Fit the dense classifier on the full training data."""
    if g.n != dm.n or t.n != dm.n:
        raise ShapeError("gram state, data matrix, and labels disagree on n")
    y = t.indicator()
    counts = np.array([t.n1, t.n2], dtype=np.float64)
    inner = _inner_matrix(
        g.augmented_gram, g.effective_inverse, y, counts, g.fill_value
    )
    rhs = y @ (np.array([-1.0, 1.0]) / counts)
    try:
        core = np.linalg.inv(inner)
        if not np.all(np.isfinite(core)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        ridge = _RIDGE_REL * abs(np.trace(inner))
        logger.warning("dense inner matrix singular; retrying with ridge")
        try:
            core = np.linalg.inv(inner + ridge * np.eye(inner.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise SingularDenseFit("inner matrix singular on full fit") from exc
        if not np.all(np.isfinite(core)):
            raise SingularDenseFit("inner matrix inverse is non-finite")
    score_vec = core @ rhs
    # Training-row scores come from raw Gram rows; their class-mean
    # midpoint (with a log-prior shift) is the standalone threshold.
    train_scores = g.gram @ score_vec
    mean1 = train_scores[t.values < 0].mean()
    mean2 = train_scores[t.values > 0].mean()
    intercept = 0.5 * (mean1 + mean2) - np.log(t.n2 / t.n1)
    return DenseModel(
        core_matrix=core,
        contrast=rhs,
        score_vec=score_vec,
        intercept=float(intercept),
        fill_value=g.fill_value,
        training=dm,
    )


def score_crcl(model: DenseModel, z: np.ndarray) -> np.ndarray | float:
    """Dense score of a centered target (vector or batch of rows)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    if zb.shape[1] != model.training.p:
        raise ShapeError(
            f"target has {zb.shape[1]} features, expected {model.training.p}"
        )
    s = (zb @ model.training.values.T) @ model.score_vec
    return float(s[0]) if single else s


def loo_scores_crcl(g: GramState, dm: DataMatrix, t: LabelVector) -> np.ndarray:
    """Dense score of each training row under its leave-one-out fit.

    Every fold keeps the full-data fill value; the class indicator and
    its derived pieces are rebuilt per fold since class counts change.
    """
    n = dm.n
    scores = np.zeros(n)
    for i in range(n):
        dg: DowndatedGram = loo_gram(g, dm, i)
        keep = dg.indices
        y, counts, rhs = _fold_pieces(t, keep)
        inner = _inner_matrix(dg.gram, dg.inverse, y, counts, g.fill_value)
        mvec = _solve_inner(inner, rhs, context=f"fold {i}")
        scores[i] = g.gram[i, keep] @ mvec
    return scores
