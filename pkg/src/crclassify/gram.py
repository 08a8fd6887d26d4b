"""Column centering, Gram eigenstructure, and leave-one-out downdates.

Everything in this package operates on the n x n Gram matrix of the
column-centered data instead of the p x p covariance, which keeps all
costs polynomial in n when p >> n.  Centering annihilates the all-ones
direction, so the centered Gram is singular; null eigenvalues are
replaced by the median of the spectrum before inversion, and that same
replacement value is held fixed for every leave-one-out downdate so the
downdates stay rank-one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateGram,
    DowndateSingular,
    InvalidData,
    ShapeError,
    TooFewSamples,
)

# Eigenvalues below this fraction of the top eigenvalue count as null.
RANK_DEFICIENCY_REL = 1e-10


def _as_float_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class DataMatrix:
    """An n x p feature matrix together with its centering state.

    ``mu_hat`` holds the column means subtracted from the raw data; it
    is the zero vector when the matrix was supplied pre-centered.
    """

    values: np.ndarray
    centered: bool
    mu_hat: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_centered(cls, values) -> "DataMatrix":
        """Wrap a matrix that the caller asserts is already centered."""
        arr = _as_float_matrix(values)
        if not np.all(np.isfinite(arr)):
            raise InvalidData("matrix contains non-finite entries")
        return cls(values=arr, centered=True, mu_hat=np.zeros(arr.shape[1]))


@dataclass(frozen=True)
class LabelVector:
    """Class labels in {-1, +1} with cached class counts.

    Class 1 is the label -1 group (count ``n1``), class 2 the label +1
    group (count ``n2``), matching the column order of ``indicator``.
    """

    values: np.ndarray
    n1: int
    n2: int

    @classmethod
    def from_values(cls, labels, min_per_class: int = 2) -> "LabelVector":
        arr = np.asarray(labels, dtype=np.float64).ravel()
        if not np.all(np.isin(arr, (-1.0, 1.0))):
            bad = sorted(set(np.asarray(labels).ravel()) - {-1, 1, -1.0, 1.0})
            raise InvalidData(f"labels must be -1 or +1, found {bad}")
        n2 = int(np.sum(arr > 0))
        n1 = arr.size - n2
        if min(n1, n2) < min_per_class:
            raise InvalidData(
                f"each class needs >= {min_per_class} members, got {n1} and {n2}"
            )
        return cls(values=arr, n1=n1, n2=n2)

    @property
    def n(self) -> int:
        return self.values.size

    def indicator(self) -> np.ndarray:
        """n x 2 one-hot class indicator (column 0: label -1, column 1: +1)."""
        y = np.zeros((self.n, 2))
        y[self.values < 0, 0] = 1.0
        y[self.values > 0, 1] = 1.0
        return y

    def subset(self, keep: np.ndarray) -> "LabelVector":
        return LabelVector.from_values(self.values[keep], min_per_class=1)


@dataclass(frozen=True)
class GramState:
    """Eigendecomposition of a centered Gram matrix with null-value fill.

    ``eigenvalues`` is the raw spectrum (descending, clamped at zero);
    entries below ``threshold`` are treated as null and replaced by
    ``fill_value`` (the median of the full spectrum) when forming
    ``effective_inverse``.  ``gram`` is the raw matrix, kept so that
    leave-one-out code can read rows without an n^2 p recompute.
    """

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    fill_value: float
    threshold: float
    gram: np.ndarray
    augmented_gram: np.ndarray
    effective_inverse: np.ndarray
    deficient: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def augmented_eigenvalues(self) -> np.ndarray:
        return np.where(self.deficient, self.fill_value, self.eigenvalues)


@dataclass(frozen=True)
class DowndatedGram:
    """Inverse of one leave-one-out Gram, augmented with the parent fill.

    ``indices`` are the retained row numbers; ``gram`` is the fold Gram
    after augmentation (equal to the raw submatrix whenever the fold is
    full rank, which is the generic p >> n case).
    """

    removed: int
    indices: np.ndarray
    gram: np.ndarray
    inverse: np.ndarray
    from_fallback: bool = False


def center_columns(raw) -> DataMatrix:
    """Center each column of ``raw`` at its mean.

    Parameters
    ----------
    raw : array (n, p)
        Feature matrix, one row per observation.

    Returns
    -------
    DataMatrix with ``values = raw - mu_hat`` and ``mu_hat`` equal to
    the column means of ``raw``.
    """
    arr = _as_float_matrix(raw)
    if not np.all(np.isfinite(arr)):
        raise InvalidData("matrix contains non-finite entries")
    if arr.shape[0] < 4:
        raise TooFewSamples(f"need at least 4 rows, got {arr.shape[0]}")
    if arr.shape[1] < 2:
        raise ShapeError(f"need at least 2 columns, got {arr.shape[1]}")
    mu_hat = arr.mean(axis=0)
    return DataMatrix(values=arr - mu_hat, centered=True, mu_hat=mu_hat)


def apply_centering(dm: DataMatrix, z) -> np.ndarray:
    """Subtract the training column means from a target observation.

    Accepts a single length-p vector or a (k, p) batch.
    """
    if not dm.centered:
        raise InvalidData("data matrix is not centered")
    arr = np.asarray(z, dtype=np.float64)
    if arr.shape[-1] != dm.p:
        raise ShapeError(f"target has {arr.shape[-1]} features, expected {dm.p}")
    return arr - dm.mu_hat


def build_gram(dm: DataMatrix) -> GramState:
    """Eigendecompose the Gram of a centered matrix and fill null values.

    Eigenvalues below ``RANK_DEFICIENCY_REL`` times the top eigenvalue
    are replaced by the median of the full (pre-replacement) spectrum;
    ``effective_inverse`` is the spectral inverse of the filled matrix.
    """
    if not dm.centered:
        raise InvalidData("build_gram requires a centered matrix")
    gram = dm.values @ dm.values.T
    gram = 0.5 * (gram + gram.T)
    w, u = scipy.linalg.eigh(gram)
    order = np.argsort(w)[::-1]
    w = np.maximum(w[order], 0.0)
    u = u[:, order]
    top = w[0]
    if top <= 0.0:
        raise DegenerateGram("all Gram eigenvalues are zero")
    threshold = RANK_DEFICIENCY_REL * top
    fill = float(np.median(w))
    if fill <= threshold:
        raise DegenerateGram(
            "median eigenvalue falls below the rank-deficiency threshold; "
            "more than half of the spectrum is null"
        )
    deficient = w < threshold
    augmented = np.where(deficient, fill, w)
    inv = (u / augmented) @ u.T
    aug_gram = gram
    if deficient.any():
        ud = u[:, deficient]
        aug_gram = gram + (ud * (fill - w[deficient])) @ ud.T
    return GramState(
        eigenvectors=u,
        eigenvalues=w,
        fill_value=fill,
        threshold=threshold,
        gram=gram,
        augmented_gram=0.5 * (aug_gram + aug_gram.T),
        effective_inverse=0.5 * (inv + inv.T),
        deficient=deficient,
    )


def downdate_gram(g: GramState, dm: DataMatrix, i: int) -> DowndatedGram:
    """Invert one leave-one-out Gram by downdating the full inverse.

    The fold matrix is the principal submatrix of the *augmented* Gram:
    the parent's null-direction fill is inherited, never recomputed, so
    the whole leave-one-out pass reuses a single eigendecomposition and
    each fold costs one rank-one (Schur complement) correction.
    Inheriting the fill matters beyond speed: a centered row lies
    exactly in the span of the remaining rows, so the raw fold Gram
    would interpolate it perfectly and residualization would collapse
    to the in-sample degenerate case; the inherited fill keeps the fold
    inverse regularized along the lost direction.

    Raises
    ------
    DowndateSingular
        If the downdate produces a non-positive pivot or non-finite
        entries; callers fall back to a direct inversion of the fold
        matrix (see ``loo_gram``).
    """
    n = g.n
    if dm.n != n:
        raise ShapeError("data matrix and gram state disagree on n")
    if not 0 <= i < n:
        raise ShapeError(f"row index {i} out of range for n={n}")
    keep = np.arange(n) != i
    h = g.effective_inverse[keep, i]
    pivot = g.effective_inverse[i, i]
    if pivot <= 0.0:
        raise DowndateSingular(f"non-positive pivot at row {i}")
    block = g.effective_inverse[np.ix_(keep, keep)] - np.outer(h, h) / pivot
    if not np.all(np.isfinite(block)):
        raise DowndateSingular(f"downdate produced non-finite entries at row {i}")
    return DowndatedGram(
        removed=i,
        indices=np.flatnonzero(keep),
        gram=g.augmented_gram[np.ix_(keep, keep)],
        inverse=block,
    )


def _rebuild_loo(g: GramState, i: int) -> DowndatedGram:
    """Direct inversion of the augmented-Gram principal submatrix.

    Interlacing keeps the submatrix at least as well conditioned as the
    augmented Gram itself, so this fallback cannot fail where the
    parent succeeded.
    """
    keep = np.arange(g.n) != i
    sub = g.augmented_gram[np.ix_(keep, keep)]
    w, u = scipy.linalg.eigh(sub)
    if w.min() <= 0.0:
        raise DegenerateGram(f"leave-one-out Gram at row {i} is singular")
    inv = (u / w) @ u.T
    return DowndatedGram(
        removed=i,
        indices=np.flatnonzero(keep),
        gram=sub,
        inverse=0.5 * (inv + inv.T),
        from_fallback=True,
    )


def loo_gram(g: GramState, dm: DataMatrix, i: int) -> DowndatedGram:
    """Downdate with automatic fallback to a direct rebuild."""
    try:
        return downdate_gram(g, dm, i)
    except DowndateSingular:
        return _rebuild_loo(g, i)
