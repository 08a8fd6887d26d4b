"""Dataset ingestion, grouped balanced splitting, and spectrum diagnostics.

Matrix files are CSV/TSV with a header row of feature ids and a first
column of sample ids; an optional binary cache (magic ``CRM1``,
little-endian float64, row-major) round-trips values exactly and loads
much faster for large p.  Labels come either from a separate delimited
file (sample id, label, optional group column) or from a named column
of the matrix file.  Missing or non-numeric cells are rejected with
their location; imputation belongs upstream.
"""

from __future__ import annotations

import csv
import struct
import warnings
import zlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DuplicateId,
    InvalidData,
    NonNumericCell,
    RaggedRows,
    ShapeError,
    SplitInfeasible,
    UnknownLabel,
)
from .gram import LabelVector, center_columns

_CACHE_MAGIC = b"CRM1"


@dataclass(frozen=True)
class Dataset:
    """An n x p matrix with ids, labels, and optional subject groups."""

    matrix: np.ndarray
    labels: LabelVector
    sample_ids: list[str]
    feature_ids: list[str]
    group_ids: list[str] | None
    label_mapping: dict[str, int]

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint balanced train/test row indices for one replicate."""

    train: np.ndarray
    test: np.ndarray
    seed: int


def _check_unique(ids: list[str], kind: str) -> None:
    if len(set(ids)) != len(ids):
        seen, dups = set(), []
        for x in ids:
            if x in seen:
                dups.append(x)
            seen.add(x)
        raise DuplicateId(f"duplicate {kind} ids: {sorted(set(dups))[:5]}")


def _sniff_delimiter(path) -> str:
    return "\t" if str(path).endswith((".tsv", ".tab")) else ","


def _read_matrix_csv(path, delimiter=None):
    delim = delimiter or _sniff_delimiter(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delim)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidData(f"{path}: empty file") from None
        feature_ids = [h.strip() for h in header[1:]]
        sample_ids: list[str] = []
        rows: list[np.ndarray] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRows(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            sample_ids.append(row[0].strip())
            values = np.empty(len(row) - 1)
            for j, cell in enumerate(row[1:]):
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise NonNumericCell(
                        f"{path}: row {lineno}, column {feature_ids[j]!r}: "
                        f"cannot parse {cell!r}"
                    ) from None
            if not np.all(np.isfinite(values)):
                j = int(np.flatnonzero(~np.isfinite(values))[0])
                raise NonNumericCell(
                    f"{path}: row {lineno}, column {feature_ids[j]!r}: "
                    "missing or non-finite value"
                )
            rows.append(values)
    if not rows:
        raise InvalidData(f"{path}: no data rows")
    return np.vstack(rows), sample_ids, feature_ids


def save_matrix_cache(path, matrix, sample_ids, feature_ids) -> None:
    """Write the binary matrix cache (exact float64 round trip)."""
    arr = np.ascontiguousarray(matrix, dtype="<f8")
    n, p = arr.shape
    if len(sample_ids) != n or len(feature_ids) != p:
        raise ShapeError("id lists do not match the matrix shape")
    ids_blob = "\n".join([*sample_ids, *feature_ids]).encode("utf-8")
    body = b"".join(
        [
            _CACHE_MAGIC,
            struct.pack("<QQQ", n, p, len(ids_blob)),
            ids_blob,
            arr.tobytes(),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def _read_matrix_cache(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 32 or blob[:4] != _CACHE_MAGIC:
        raise InvalidData(f"{path}: not a matrix cache file")
    body, trailer = blob[:-4], blob[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body):
        raise InvalidData(f"{path}: cache checksum mismatch")
    n, p, ids_len = struct.unpack("<QQQ", body[4:28])
    ids_end = 28 + ids_len
    ids = body[28:ids_end].decode("utf-8").split("\n")
    if len(ids) != n + p or len(body) != ids_end + n * p * 8:
        raise InvalidData(f"{path}: cache payload is truncated")
    matrix = np.frombuffer(body[ids_end:], dtype="<f8").reshape(n, p).copy()
    return matrix, ids[:n], ids[n:]


def _is_cache(path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == _CACHE_MAGIC
    except OSError:
        return False


def _read_labels_file(path, label_column, group_column, delimiter=None):
    delim = delimiter or _sniff_delimiter(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delim)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidData(f"{path}: empty labels file") from None
        label_idx = 1
        if label_column is not None:
            if label_column not in header:
                raise UnknownLabel(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        group_idx = None
        if group_column is not None:
            if group_column not in header:
                raise UnknownLabel(f"{path}: no column named {group_column!r}")
            group_idx = header.index(group_column)
        labels, groups = {}, {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRows(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            sid = row[0].strip()
            if sid in labels:
                raise DuplicateId(f"{path}: duplicate sample id {sid!r}")
            labels[sid] = row[label_idx].strip()
            if group_idx is not None:
                groups[sid] = row[group_idx].strip()
    return labels, (groups if group_idx is not None else None)


def _map_labels(raw: list[str], positive, negative) -> tuple[np.ndarray, dict]:
    distinct = sorted(set(raw))
    if positive is not None or negative is not None:
        declared = {str(negative), str(positive)}
        extras = [v for v in distinct if v not in declared]
        if extras:
            raise UnknownLabel(f"labels outside declared mapping: {extras}")
        mapping = {str(negative): -1, str(positive): 1}
    else:
        if len(distinct) != 2:
            raise UnknownLabel(
                f"need exactly two label values, found {len(distinct)}: "
                f"{distinct[:6]}"
            )
        mapping = {distinct[0]: -1, distinct[1]: 1}
    return np.array([mapping[v] for v in raw], dtype=np.float64), mapping


def load_dataset(
    matrix_path,
    labels_path=None,
    *,
    label_column=None,
    group_column=None,
    positive_label=None,
    negative_label=None,
    delimiter=None,
) -> Dataset:
    """Load and validate a matrix plus its two-class labels.

    With ``labels_path`` the labels (and optional groups) come from a
    separate delimited file whose first column is the sample id;
    without it, ``label_column`` must name a column of the matrix file,
    which is removed from the features.
    """
    if _is_cache(matrix_path):
        matrix, sample_ids, feature_ids = _read_matrix_cache(matrix_path)
    else:
        matrix, sample_ids, feature_ids = _read_matrix_csv(matrix_path, delimiter)
    _check_unique(sample_ids, "sample")

    group_ids = None
    if labels_path is not None:
        by_id, groups_by_id = _read_labels_file(
            labels_path, label_column, group_column, delimiter
        )
        missing = [s for s in sample_ids if s not in by_id]
        if missing:
            raise InvalidData(f"missing labels for samples: {missing[:5]}")
        raw = [by_id[s] for s in sample_ids]
        if groups_by_id is not None:
            group_ids = [groups_by_id[s] for s in sample_ids]
    elif label_column is not None:
        if label_column not in feature_ids:
            raise UnknownLabel(f"matrix has no column named {label_column!r}")
        j = feature_ids.index(label_column)
        raw = [
            str(int(v)) if float(v).is_integer() else str(v) for v in matrix[:, j]
        ]
        matrix = np.delete(matrix, j, axis=1)
        feature_ids = feature_ids[:j] + feature_ids[j + 1 :]
    else:
        raise InvalidData("provide labels_path or label_column")
    _check_unique(feature_ids, "feature")

    values, mapping = _map_labels(raw, positive_label, negative_label)
    return Dataset(
        matrix=matrix,
        labels=LabelVector.from_values(values),
        sample_ids=sample_ids,
        feature_ids=feature_ids,
        group_ids=group_ids,
        label_mapping=mapping,
    )


def grouped_balanced_split(ds: Dataset, frac: float = 0.8, seed: int = 0) -> SplitPlan:
    """One balanced train/test split, assigning whole groups together.

    With unit counts u1, u2 per class and u0 = min(u1, u2), the training
    side receives floor(frac * u0) units from each class and the test
    side u0 - floor(frac * u0) units sampled from the remainder; units
    are individual samples unless ``group_ids`` is present, in which
    case subjects are partitioned and all their samples follow.
    """
    if not 0.0 < frac < 1.0:
        raise SplitInfeasible(f"frac must be in (0, 1), got {frac}")
    if ds.group_ids is None:
        units = [[i] for i in range(ds.n)]
        unit_class = list(ds.labels.values)
    else:
        members: dict[str, list[int]] = {}
        for i, gid in enumerate(ds.group_ids):
            members.setdefault(gid, []).append(i)
        units, unit_class = [], []
        for gid, idx in members.items():
            classes = {ds.labels.values[i] for i in idx}
            if len(classes) != 1:
                raise SplitInfeasible(
                    f"group {gid!r} spans both classes; cannot split by subject"
                )
            units.append(idx)
            unit_class.append(classes.pop())
    neg_units = [u for u, c in zip(units, unit_class) if c < 0]
    pos_units = [u for u, c in zip(units, unit_class) if c > 0]
    u0 = min(len(neg_units), len(pos_units))
    n_train = int(np.floor(frac * u0))
    n_test = u0 - n_train
    if n_train < 1 or n_test < 1:
        raise SplitInfeasible(
            f"cannot form a balanced split from {len(neg_units)} and "
            f"{len(pos_units)} units at frac={frac}"
        )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5B])))
    train_idx, test_idx = [], []
    for side in (neg_units, pos_units):
        perm = rng.permutation(len(side))
        for k in perm[:n_train]:
            train_idx.extend(side[k])
        for k in perm[n_train : n_train + n_test]:
            test_idx.extend(side[k])
    return SplitPlan(
        train=np.array(sorted(train_idx), dtype=np.intp),
        test=np.array(sorted(test_idx), dtype=np.intp),
        seed=seed,
    )


@dataclass(frozen=True)
class VarianceReport:
    """Top-k variance share plus scree data for plotting."""

    k: int
    percentage: float
    eigenvalues: np.ndarray
    per_component_pct: np.ndarray

    @property
    def cumulative_pct(self) -> np.ndarray:
        return np.cumsum(self.per_component_pct)


def pct_var_explained(matrix, k: int = 10) -> VarianceReport:
    """Share of total variance captured by the top k principal components.

    The matrix is centered internally; eigenvalues come from the n x n
    Gram.  ``k`` above n - 1 is clamped with a warning.
    """
    dm = center_columns(matrix)
    gram = dm.values @ dm.values.T
    w = scipy.linalg.eigvalsh(0.5 * (gram + gram.T))[::-1]
    w = np.maximum(w, 0.0)
    max_k = dm.n - 1
    if k > max_k:
        warnings.warn(f"k={k} exceeds n-1={max_k}; clamping", stacklevel=2)
        k = max_k
    total = w.sum()
    if total <= 0:
        raise InvalidData("matrix has no variance")
    per_pct = 100.0 * w[:max_k] / total
    return VarianceReport(
        k=k,
        percentage=float(per_pct[:k].sum()),
        eigenvalues=w[:max_k],
        per_component_pct=per_pct,
    )
