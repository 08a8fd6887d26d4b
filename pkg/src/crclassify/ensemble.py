"""End-to-end cross-residualization classifier.

Fitting runs: center -> Gram eigenstructure -> class-effect estimate ->
leave-one-out cross-residualization -> leave-one-out dense and sparse
scores -> feature-count grid search -> score-space LDA -> final dense
and sparse fits on the full data.  The fitted object carries everything
needed to score new observations, including the centered training
matrix (residualization of a target needs it), and can be written to a
compact binary file (magic ``CRC1``, little-endian float64 payloads,
crc32 trailer; layout documented in the README).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dense import DenseModel, fit_crcl, loo_scores_crcl
from .errors import CorruptModel, NonFiniteInput, ShapeError, TooFewSamples, VersionMismatch
from .gram import DataMatrix, GramState, LabelVector, build_gram, center_columns
from .meta import MetaLda, combined_scores, fit_meta
from .residualization import ClassEffect, cross_residualize, estimate_class_effect
from .sparse import DldaModel, FeatureCountTrace, fit_dlda, marginal_pvalues, select_feature_count

_MAGIC = b"CRC1"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FittedCRC:
    """A trained cross-residualization classifier."""

    training: DataMatrix
    labels: LabelVector
    fill_value: float
    effective_inverse: np.ndarray
    effect: ClassEffect
    dense: DenseModel
    sparse: DldaModel
    meta: MetaLda
    loo_score_pairs: np.ndarray  # column 0: dense, column 1: sparse
    trace: FeatureCountTrace
    seed: int = 0

    @property
    def mu_hat(self) -> np.ndarray:
        return self.training.mu_hat

    @property
    def n_features_selected(self) -> int:
        return int(self.sparse.feature_indices.size)

    @property
    def loo_accuracy(self) -> float:
        """Ensemble accuracy on the leave-one-out score pairs."""
        combined = combined_scores(
            self.meta, self.loo_score_pairs[:, 0], self.loo_score_pairs[:, 1]
        )
        return float(np.mean(np.where(combined >= 0, 1.0, -1.0) == self.labels.values))


@dataclass(frozen=True)
class Prediction:
    """Predicted label with its score pair (dense, sparse)."""

    label: int
    score_pair: tuple[float, float]
    combined_score: float


def fit_crc(raw, labels, *, grid=None, seed: int = 0) -> FittedCRC:
    """Fit the full ensemble on a raw n x p matrix and +/-1 labels.

    Requires n >= 8 with at least 4 members per class so every
    leave-one-out fold keeps both classes and the score-space LDA is
    well posed.  The fit is deterministic; ``seed`` is only echoed into
    saved-model metadata.
    """
    t = labels if isinstance(labels, LabelVector) else LabelVector.from_values(labels)
    if t.n < 8:
        raise TooFewSamples(f"need at least 8 samples, got {t.n}")
    if min(t.n1, t.n2) < 4:
        raise TooFewSamples(
            f"need at least 4 samples per class, got {t.n1} and {t.n2}"
        )
    dm = center_columns(raw)
    if dm.n != t.n:
        raise ShapeError("matrix and labels disagree on n")
    g = build_gram(dm)
    effect = estimate_class_effect(g, dm, t)
    xres = cross_residualize(g, dm, t)
    dense_loo = loo_scores_crcl(g, dm, t)
    trace, sparse_loo = select_feature_count(xres, t, g, dm, dense_loo, grid=grid)
    meta = fit_meta(dense_loo, sparse_loo, t)
    screen = marginal_pvalues(xres, t)
    sparse_model = fit_dlda(xres, t, screen.order[: trace.chosen])
    dense_model = fit_crcl(g, dm, t)
    return FittedCRC(
        training=dm,
        labels=t,
        fill_value=g.fill_value,
        effective_inverse=g.effective_inverse,
        effect=effect,
        dense=dense_model,
        sparse=sparse_model,
        meta=meta,
        loo_score_pairs=np.column_stack([dense_loo, sparse_loo]),
        trace=trace,
        seed=seed,
    )


def _component_scores(model: FittedCRC, zc: np.ndarray):
    """Dense, sparse, and combined scores for a centered (k, p) batch."""
    train = model.training.values
    feats = model.sparse.feature_indices
    v = zc @ train.T
    dense = v @ model.dense.score_vec
    u = v @ model.effective_inverse
    # Residualize only on the selected features; the sparse weights are
    # zero elsewhere, so the full p-vector is never needed.
    s_sel = (
        zc[:, feats]
        - u @ train[:, feats]
        + np.outer(u @ model.labels.values, model.effect.coef[feats])
    )
    sparse = s_sel @ model.sparse.weights
    return dense, sparse, combined_scores(model.meta, dense, sparse)


def _check_targets(model: FittedCRC, z) -> tuple[np.ndarray, bool]:
    arr = np.asarray(z, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != model.training.p:
        raise ShapeError(
            f"target has shape {np.shape(z)}, expected p={model.training.p}"
        )
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("target contains NaN or infinite entries")
    return arr, single


def predict(model: FittedCRC, z_raw) -> Prediction:
    """Predict the label of one raw observation (ties go to +1)."""
    arr, single = _check_targets(model, z_raw)
    if not single:
        raise ShapeError("predict takes a single row; use predict_batch")
    zc = arr - model.mu_hat
    dense, sparse, combined = _component_scores(model, zc)
    return Prediction(
        label=1 if combined[0] >= 0 else -1,
        score_pair=(float(dense[0]), float(sparse[0])),
        combined_score=float(combined[0]),
    )


def predict_batch(model: FittedCRC, z_raw) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Labels, (k, 2) score pairs, and combined scores for k raw rows."""
    arr, _ = _check_targets(model, z_raw)
    zc = arr - model.mu_hat
    dense, sparse, combined = _component_scores(model, zc)
    labels = np.where(combined >= 0, 1, -1)
    return labels, np.column_stack([dense, sparse]), combined


def component_predictions(model: FittedCRC, z_raw) -> dict[str, np.ndarray]:
    """Standalone label predictions of the ensemble and its components.

    The components use their natural LDA thresholds (``intercept``
    fields), which the ensemble path ignores.
    """
    arr, _ = _check_targets(model, z_raw)
    zc = arr - model.mu_hat
    dense, sparse, combined = _component_scores(model, zc)
    return {
        "CRC": np.where(combined >= 0, 1, -1),
        "CRC-L": np.where(dense - model.dense.intercept >= 0, 1, -1),
        "CRC-S": np.where(sparse - model.sparse.intercept >= 0, 1, -1),
    }


def extract_linear_weights(model: FittedCRC) -> tuple[np.ndarray, float]:
    """The equivalent length-p weight vector and intercept.

    For every z, sign(b0 + (z - mu_hat) . w) equals the ensemble
    prediction: the sparse path is linear in z once the residualization
    operator is folded into the weights.
    """
    train = model.training.values
    w_sparse = np.zeros(model.training.p)
    w_sparse[model.sparse.feature_indices] = model.sparse.weights
    r = (train - np.outer(model.labels.values, model.effect.coef)) @ w_sparse
    folded = w_sparse - train.T @ (model.effective_inverse @ r)
    w_dense = train.T @ model.dense.score_vec
    w = model.meta.coef_sparse * folded + model.meta.coef_dense * w_dense
    return w, model.meta.intercept


# --- binary model format -----------------------------------------------------

def _model_arrays(model: FittedCRC) -> dict[str, np.ndarray]:
    return {
        "mu_hat": model.mu_hat,
        "training": model.training.values,
        "labels": model.labels.values,
        "effective_inverse": model.effective_inverse,
        "effect_coef": model.effect.coef,
        "dense_score_vec": model.dense.score_vec,
        "sparse_features": model.sparse.feature_indices.astype(np.int64),
        "sparse_mean_diff": model.sparse.mean_diff,
        "sparse_pooled_var": model.sparse.pooled_var,
        "sparse_weights": model.sparse.weights,
        "meta_class_means": model.meta.class_means,
        "meta_pooled_cov": model.meta.pooled_cov,
        "meta_priors": model.meta.priors,
        "loo_score_pairs": model.loo_score_pairs,
        "trace_grid": model.trace.grid.astype(np.int64),
        "trace_errors": model.trace.estimated_errors,
    }


def serialize(model: FittedCRC) -> bytes:
    """Encode a fitted model as CRC1 bytes (see README for the layout)."""
    arrays = _model_arrays(model)
    header = {
        "package_version": __version__,
        "seed": model.seed,
        "scalars": {
            "fill_value": model.fill_value,
            "dense_intercept": model.dense.intercept,
            "sparse_intercept": model.sparse.intercept,
            "meta_intercept": model.meta.intercept,
            "meta_coef_dense": model.meta.coef_dense,
            "meta_coef_sparse": model.meta.coef_sparse,
            "meta_est_error": model.meta.est_error,
            "chosen": model.trace.chosen,
        },
        "arrays": [
            {
                "name": name,
                "dtype": "<i8" if arr.dtype.kind == "i" else "<f8",
                "shape": list(arr.shape),
            }
            for name, arr in arrays.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<I", _FORMAT_VERSION)]
    parts.append(struct.pack("<Q", len(header_bytes)))
    parts.append(header_bytes)
    for name, arr in arrays.items():
        dtype = "<i8" if arr.dtype.kind == "i" else "<f8"
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize(blob: bytes) -> FittedCRC:
    """Decode CRC1 bytes back into a fitted model.

    Raises VersionMismatch for unknown format versions and CorruptModel
    for truncated or checksum-failing input.
    """
    if len(blob) < 20:
        raise CorruptModel("file too short to be a model")
    if blob[:4] != _MAGIC:
        raise CorruptModel("bad magic bytes; not a CRC model file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _FORMAT_VERSION:
        raise VersionMismatch(f"unsupported model format version {version}")
    body, trailer = blob[:-4], blob[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body):
        raise CorruptModel("checksum mismatch; model file is corrupt")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if header_end > len(body):
        raise CorruptModel("truncated header")
    try:
        header = json.loads(body[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModel("unreadable header") from exc
    arrays = {}
    offset = header_end
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(body):
            raise CorruptModel(f"truncated payload at array '{spec['name']}'")
        arrays[spec["name"]] = np.frombuffer(
            body[offset : offset + nbytes], dtype=dtype
        ).reshape(spec["shape"])
        offset += nbytes
    if offset != len(body):
        raise CorruptModel("trailing bytes after payload")
    sc = header["scalars"]
    training = DataMatrix(
        values=arrays["training"].copy(),
        centered=True,
        mu_hat=arrays["mu_hat"].copy(),
    )
    t = LabelVector.from_values(arrays["labels"])
    dense = DenseModel(
        core_matrix=None,
        contrast=None,
        score_vec=arrays["dense_score_vec"].copy(),
        intercept=sc["dense_intercept"],
        fill_value=sc["fill_value"],
        training=training,
    )
    sparse_model = DldaModel(
        feature_indices=arrays["sparse_features"].astype(np.intp),
        mean_diff=arrays["sparse_mean_diff"].copy(),
        pooled_var=arrays["sparse_pooled_var"].copy(),
        weights=arrays["sparse_weights"].copy(),
        intercept=sc["sparse_intercept"],
    )
    meta = MetaLda(
        intercept=sc["meta_intercept"],
        coef_dense=sc["meta_coef_dense"],
        coef_sparse=sc["meta_coef_sparse"],
        class_means=arrays["meta_class_means"].copy(),
        pooled_cov=arrays["meta_pooled_cov"].copy(),
        priors=arrays["meta_priors"].copy(),
        est_error=sc["meta_est_error"],
    )
    trace = FeatureCountTrace(
        grid=arrays["trace_grid"].copy(),
        estimated_errors=arrays["trace_errors"].copy(),
        chosen=int(sc["chosen"]),
    )
    return FittedCRC(
        training=training,
        labels=t,
        fill_value=sc["fill_value"],
        effective_inverse=arrays["effective_inverse"].copy(),
        effect=ClassEffect(coef=arrays["effect_coef"].copy()),
        dense=dense,
        sparse=sparse_model,
        meta=meta,
        loo_score_pairs=arrays["loo_score_pairs"].copy(),
        trace=trace,
        seed=int(header.get("seed", 0)),
    )


def save_model(model: FittedCRC, path) -> None:
    blob = serialize(model)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_model(path) -> FittedCRC:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
