"""Estimating the per-feature class effect and removing latent variation.

The class-effect estimate uses the Gram inverse as an (approximate)
projection away from the latent factors, so it stays consistent even
when the factors are correlated with the labels.  Residualization
subtracts the all-components principal-components-regression prediction
of the latent contribution from a target row; cross-residualization
applies the same recipe to each training row in a leave-one-out manner
so the training rows and scoring targets are treated identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateContrast, FoldClassEmpty, ShapeError, TooFewSamples
from .gram import DataMatrix, GramState, LabelVector, loo_gram

# |t' G^-1 t| below this multiple of n counts as a degenerate contrast.
CONTRAST_REL_TOL = 1e-12


@dataclass(frozen=True)
class ClassEffect:
    """Estimated per-feature class effect (length p)."""

    coef: np.ndarray


@dataclass(frozen=True)
class CrossResidualized:
    """Leave-one-out residualized training matrix.

    ``s_hat`` row i depends only on rows != i of the training data plus
    row i itself.  ``effect_coefs`` holds, per row, the combination of
    training rows that forms that fold's class-effect estimate; the
    estimates themselves are materialized on demand to avoid a second
    n x p array.
    """

    s_hat: np.ndarray
    effect_coefs: np.ndarray
    training: DataMatrix

    def row_effect(self, i: int) -> ClassEffect:
        """Class-effect estimate for the fold that left out row ``i``."""
        return ClassEffect(coef=self.effect_coefs[i] @ self.training.values)

    @property
    def per_row_effects(self) -> list[ClassEffect]:
        full = self.effect_coefs @ self.training.values
        return [ClassEffect(coef=row) for row in full]


def _contrast_solve(inverse: np.ndarray, t: np.ndarray):
    """Return (G^-1 t, t' G^-1 t) with a degeneracy check."""
    ht = inverse @ t
    denom = float(t @ ht)
    if abs(denom) < CONTRAST_REL_TOL * t.size:
        raise DegenerateContrast(f"label contrast is {denom:.3e}")
    return ht, denom


def estimate_class_effect(
    g: GramState, dm: DataMatrix, t: LabelVector
) -> ClassEffect:
    """Closed-form class-effect estimate from the Gram inverse.

    Computes [t' G^-1 t]^-1 t' G^-1 X for the centered training matrix
    X, where G^-1 is the filled Gram inverse.  When the Gram is
    proportional to the identity this reduces to the scaled
    difference-of-class-means estimator.
    """
    if t.n != dm.n or g.n != dm.n:
        raise ShapeError("gram state, data matrix, and labels disagree on n")
    ht, denom = _contrast_solve(g.effective_inverse, t.values)
    return ClassEffect(coef=(ht / denom) @ dm.values)


def residualize(
    g: GramState,
    dm: DataMatrix,
    t: LabelVector,
    effect: ClassEffect,
    z: np.ndarray,
) -> np.ndarray:
    """Remove the estimated latent contribution from a centered target.

    Returns ``z - z X' G^-1 (X - t * coef)`` where X is the centered
    training matrix: the target minus the all-components PCR prediction
    of its latent part.  Accepts a single length-p vector or a (k, p)
    batch, which is residualized row by row.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    if zb.shape[1] != dm.p:
        raise ShapeError(f"target has {zb.shape[1]} features, expected {dm.p}")
    if effect.coef.shape != (dm.p,):
        raise ShapeError("class-effect vector does not match feature count")
    u = (zb @ dm.values.T) @ g.effective_inverse
    s = zb - u @ dm.values + np.outer(u @ t.values, effect.coef)
    return s[0] if single else s


def cross_residualize(
    g: GramState, dm: DataMatrix, t: LabelVector
) -> CrossResidualized:
    """Residualize every training row against the other n-1 rows.

    Each fold reuses the full-data centering and Gram fill value, and
    re-estimates the class effect from the remaining rows via the
    downdated Gram inverse, so the whole pass costs one n x n x p
    product plus O(n^3) downdate work.
    """
    n = dm.n
    if n < 5:
        raise TooFewSamples(f"cross-residualization needs n >= 5, got {n}")
    if min(t.n1, t.n2) < 2:
        raise FoldClassEmpty(
            f"class counts ({t.n1}, {t.n2}) leave an empty class in some fold"
        )
    remover = np.zeros((n, n))
    effect_coefs = np.zeros((n, n))
    for i in range(n):
        dg = loo_gram(g, dm, i)
        keep = dg.indices
        a = g.gram[i, keep]
        b = dg.inverse @ a
        tk = t.values[keep]
        ht, denom = _contrast_solve(dg.inverse, tk)
        coef = ht / denom
        remover[i, keep] = b - (b @ tk) * coef
        effect_coefs[i, keep] = coef
    s_hat = dm.values - remover @ dm.values
    return CrossResidualized(s_hat=s_hat, effect_coefs=effect_coefs, training=dm)
