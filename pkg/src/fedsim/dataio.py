"""LibSVM-format parsing and dataset statistics.

The on-disk convention is the standard LibSVM text format for binary
classification: one sample per line, ``<label> <idx>:<val> ...`` with 1-based,
strictly increasing feature indices and labels in {+1, -1}.  In memory the
indices are 0-based and rows live in a CSR matrix.  Files ending in ``.gz``
are transparently decompressed.  Parsing is strict: malformed input raises
:class:`DataFormatError` with the offending line number rather than being
silently skipped.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp


class DataFormatError(ValueError):
    """Raised for malformed LibSVM input; carries the 1-based line number."""

    def __init__(self, line_no: Optional[int], detail: str):
        self.line_no = line_no
        self.detail = detail
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{detail}")


@dataclass(frozen=True)
class Dataset:
    """Sparse labeled samples: labels in {-1, +1}, features in CSR layout."""

    X: sp.csr_matrix
    labels: np.ndarray
    n: int = field(default=0)
    dim: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "n", int(self.X.shape[0]))
        object.__setattr__(self, "dim", int(self.X.shape[1]))
        if self.n == 0:
            raise DataFormatError(None, "empty dataset")
        if self.labels.shape != (self.n,):
            raise DataFormatError(None, "label count does not match sample count")
        if not np.isin(self.labels, (-1.0, 1.0)).all():
            raise DataFormatError(None, "labels must be +1 or -1")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n == other.n
            and self.dim == other.dim
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.X.indptr, other.X.indptr)
            and np.array_equal(self.X.indices, other.X.indices)
            and np.array_equal(self.X.data, other.X.data)
        )

    def __hash__(self):  # frozen dataclass would try to hash arrays
        return hash((self.n, self.dim))

    def row_pairs(self, i: int):
        """Sorted (index, value) pairs of sample i, 0-based indices."""
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        return list(zip(self.X.indices[lo:hi].tolist(), self.X.data[lo:hi].tolist()))

    def content_hash(self) -> str:
        """Hex digest of the structural content (labels, indices, values, shape)."""
        h = hashlib.sha256()
        h.update(f"{self.n},{self.dim};".encode())
        h.update(self.labels.astype(np.float64).tobytes())
        h.update(self.X.indptr.astype(np.int64).tobytes())
        h.update(self.X.indices.astype(np.int64).tobytes())
        h.update(self.X.data.astype(np.float64).tobytes())
        return h.hexdigest()


class DatasetStats(NamedTuple):
    n: int
    dim: int
    max_row_norm_sq: float
    mean_row_norm_sq: float


def parse_libsvm(source, declared_dim: Optional[int] = None) -> Dataset:
    """Parse LibSVM text into a Dataset.

    ``source`` may be a str/bytes blob or a text/binary file object.  When
    ``declared_dim`` is given it fixes the feature dimension and any larger
    index is an error; otherwise the dimension is the largest index seen.
    Blank lines are skipped and ``#`` starts a comment.
    """
    if declared_dim is not None and declared_dim < 1:
        raise DataFormatError(None, f"declared dimension must be positive, got {declared_dim}")
    lines = _as_lines(source)

    labels = []
    indptr = [0]
    indices = []
    data = []
    max_idx = 0
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        label_tok = toks[0]
        if label_tok in ("+1", "1"):
            labels.append(1.0)
        elif label_tok == "-1":
            labels.append(-1.0)
        else:
            raise DataFormatError(line_no, f"label must be +1 or -1, got {label_tok!r}")
        prev = 0
        for tok in toks[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DataFormatError(line_no, f"malformed feature token {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise DataFormatError(line_no, f"malformed feature index {idx_s!r}") from None
            try:
                val = float(val_s)
            except ValueError:
                raise DataFormatError(line_no, f"malformed feature value {val_s!r}") from None
            if idx < 1:
                raise DataFormatError(line_no, f"feature index must be >= 1, got {idx}")
            if idx <= prev:
                raise DataFormatError(
                    line_no, f"feature indices must be strictly increasing ({idx} after {prev})"
                )
            if declared_dim is not None and idx > declared_dim:
                raise DataFormatError(
                    line_no, f"feature index {idx} exceeds declared dimension {declared_dim}"
                )
            prev = idx
            indices.append(idx - 1)
            data.append(val)
            max_idx = max(max_idx, idx)
        indptr.append(len(indices))

    if not labels:
        raise DataFormatError(None, "empty dataset")
    dim = declared_dim if declared_dim is not None else max_idx
    x = sp.csr_matrix(
        (
            np.asarray(data, dtype=np.float64),
            np.asarray(indices, dtype=np.int32),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(len(labels), dim),
    )
    return Dataset(X=x, labels=np.asarray(labels, dtype=np.float64))


def _as_lines(source):
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if hasattr(source, "read"):
        first = source.read(0)
        if isinstance(first, bytes):
            return io.TextIOWrapper(source, encoding="utf-8")
        return source
    raise TypeError(f"unsupported source type {type(source)!r}")


def load_dataset(path: str, declared_dim: Optional[int] = None) -> Dataset:
    """Read a LibSVM file from disk; ``.gz`` suffix triggers decompression."""
    if not os.path.exists(path):
        raise DataFormatError(None, f"no such file: {path}")
    if path.endswith(".gz"):
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            return parse_libsvm(fh.read(), declared_dim)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_libsvm(fh.read(), declared_dim)


def serialize_libsvm(ds: Dataset) -> str:
    """Canonical text form: label then space-joined ``i+1:value`` pairs.

    Values use shortest round-trip float formatting, so
    ``parse_libsvm(serialize_libsvm(ds))`` reproduces the dataset exactly.
    """
    out = []
    for i in range(ds.n):
        parts = ["+1" if ds.labels[i] > 0 else "-1"]
        lo, hi = ds.X.indptr[i], ds.X.indptr[i + 1]
        for j in range(lo, hi):
            parts.append(f"{ds.X.indices[j] + 1}:{float(ds.X.data[j])!r}")
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def dataset_stats(ds: Dataset) -> DatasetStats:
    """Sample count, dimension, and max/mean squared row norms.

    Empty datasets cannot be constructed (parse and the Dataset initializer
    both reject them), so the n == 0 case is unreachable here.
    """
    row_sq = np.asarray(ds.X.multiply(ds.X).sum(axis=1)).ravel()
    return DatasetStats(ds.n, ds.dim, float(row_sq.max()), float(row_sq.mean()))
