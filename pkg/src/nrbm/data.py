"""Dataset loading, validation, batching and bootstrap resampling.

Every random draw in the package goes through :func:`rng_stream`, which
derives an independent Philox generator from ``(seed, *stream_ids)``.  Two
modules asking for different stream ids never share generator state, so a
run is reproducible from its master seed alone.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import FormatError, RangeError, DimError

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
_IDX_MAX_BYTES = 1 << 34

# stream ids for rng_stream; one per consumer
STREAM_BATCH = 1
STREAM_BOOTSTRAP = 2
STREAM_INIT = 3
STREAM_CD = 4
STREAM_PROTOCOL = 5
STREAM_SYNTHETIC = 6


def rng_stream(seed: int, *stream_ids: int) -> np.random.Generator:
    """Counter-based generator for the stream ``(seed, *stream_ids)``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream_ids]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class DataMatrix:
    """Immutable M x N matrix with entries in [0, 1] and optional labels.

    Labels are non-negative integer class ids.  Binary {0,1} labels are
    required only by the classification stage, which checks them itself.
    """

    values: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise DimError(f"expected a 2-D matrix, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DimError(f"empty data matrix {values.shape}")
        if not np.all(np.isfinite(values)):
            raise RangeError("data contains non-finite entries")
        if values.min() < 0.0 or values.max() > 1.0:
            raise RangeError(
                f"entries must lie in [0,1]; found range [{values.min()}, {values.max()}]"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.array(self.labels, copy=True)
            if labels.ndim != 1 or labels.shape[0] != values.shape[0]:
                raise DimError(
                    f"labels length {labels.shape} does not match {values.shape[0]} rows"
                )
            if labels.size and (
                not np.all(np.equal(np.mod(labels, 1), 0)) or labels.min() < 0
            ):
                raise FormatError("labels must be non-negative integers")
            labels = labels.astype(np.int64)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def take(self, index: np.ndarray) -> "DataMatrix":
        """Row subset (indices may repeat)."""
        index = np.asarray(index, dtype=np.intp)
        labels = None if self.labels is None else self.labels[index]
        return DataMatrix(self.values[index], labels, self.feature_names)

    def binary_labels(self) -> np.ndarray:
        if self.labels is None:
            raise FormatError("data has no labels")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise FormatError("labels must be binary (0/1) for this operation")
        return self.labels


# ----------------------------------------------------------------------
# loaders


def _read_idx_header(buf: bytes, path) -> tuple[int, tuple[int, ...]]:
    if len(buf) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in (IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC):
        raise FormatError(f"{path}: unsupported IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise FormatError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:end])
    return end, dims


def load_idx(path, labels_path=None) -> DataMatrix:
    """Read an unsigned-byte IDX file, scaling bytes to [0, 1] by 1/255.

    The first dimension becomes rows and the remaining dimensions are
    flattened row-major into columns.  ``labels_path`` optionally names an
    IDX label file (magic 0x801) whose entries are attached as labels.
    """
    buf = Path(path).read_bytes()
    offset, dims = _read_idx_header(buf, path)
    count = dims[0]
    width = 1
    for d in dims[1:]:
        width *= d
    total = count * width
    if total > _IDX_MAX_BYTES or (count and width == 0):
        raise FormatError(f"{path}: implausible IDX dimensions {dims}")
    payload = buf[offset:]
    if len(payload) < total:
        raise FormatError(
            f"{path}: truncated payload ({len(payload)} of {total} bytes)"
        )
    if len(payload) > total:
        raise FormatError(f"{path}: {len(payload) - total} trailing bytes")
    if count == 0:
        raise FormatError(f"{path}: IDX file holds no items")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=total)
    values = pixels.reshape(count, width).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if labels.shape[0] != count:
            raise DimError(f"{labels_path}: {labels.shape[0]} labels for {count} images")
    return DataMatrix(values, labels)


def load_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    offset, dims = _read_idx_header(buf, path)
    if len(dims) != 1:
        raise FormatError(f"{path}: label file must be one-dimensional, got {dims}")
    payload = buf[offset:]
    if len(payload) != dims[0]:
        raise FormatError(f"{path}: expected {dims[0]} label bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx(path, images: np.ndarray) -> None:
    """Write a uint8 array of shape (count, rows, cols) as an IDX image file."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DimError("IDX images must be 3-D (count, rows, cols)")
    header = struct.pack(">I3I", IDX_IMAGE_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def load_dense_csv(
    path,
    has_label_col: bool = False,
    normalize: bool = False,
    header: bool = False,
) -> DataMatrix:
    """Parse a rectangular numeric CSV into a DataMatrix.

    With ``normalize`` each column is min-max scaled to [0, 1]; a constant
    column maps to 0.0.  Without it, values outside [0, 1] raise RangeError.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    names = None
    if header:
        if not rows:
            raise FormatError(f"{path}: missing header row")
        names, rows = tuple(c.strip() for c in rows[0]), rows[1:]
    if not rows:
        raise FormatError(f"{path}: no data rows")
    width = len(rows[0])
    parsed = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"{path}:{i + 1}: expected {width} fields, got {len(row)}")
        try:
            parsed[i] = [float(c) for c in row]
        except ValueError as exc:
            raise FormatError(f"{path}:{i + 1}: {exc}") from None
    if not np.all(np.isfinite(parsed)):
        raise FormatError(f"{path}: non-finite numeric cell")

    labels = None
    if has_label_col:
        if width < 2:
            raise FormatError(f"{path}: label column requested but only {width} column")
        labels, parsed = parsed[:, -1], parsed[:, :-1]
        if names is not None:
            names = names[:-1]
        if np.any(labels != np.round(labels)) or np.any(labels < 0):
            raise FormatError(f"{path}: label column must hold non-negative integers")

    if normalize:
        parsed = minmax_normalize(parsed)
    elif parsed.min() < 0.0 or parsed.max() > 1.0:
        raise RangeError(
            f"{path}: values outside [0,1] ({parsed.min()}..{parsed.max()}); "
            "use normalization"
        )
    return DataMatrix(parsed, labels, names)


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    out = np.zeros_like(x)
    ok = span > 0
    out[:, ok] = (x[:, ok] - lo[ok]) / span[ok]
    return np.clip(out, 0.0, 1.0)


def write_dense_csv(path, data, labels=None, header: Optional[Sequence[str]] = None) -> None:
    """Write a matrix (or DataMatrix) as CSV with 17 significant digits."""
    if isinstance(data, DataMatrix):
        if labels is None:
            labels = data.labels
        data = data.values
    data = np.asarray(data, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header is not None:
            writer.writerow(list(header))
        for i, row in enumerate(data):
            cells = [format(float(v), ".17g") for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            writer.writerow(cells)


def load_sparse_bow(path, n_features: Optional[int] = None) -> DataMatrix:
    """Read SVMlight-style ``label idx:val ...`` lines as binary presence rows.

    Indices are 1-based.  Any positive count becomes 1.0.  The column count
    is ``n_features`` when given, else a ``# features=N`` header line, else
    the largest index seen.  Blank lines are skipped and counted.
    """
    labels, entries = [], []
    declared = n_features
    skipped = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                skipped += 1
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("features=") and declared is None:
                    try:
                        declared = int(body.split("=", 1)[1])
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: bad features header") from None
                continue
            parts = line.split()
            try:
                label = int(parts[0])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad label {parts[0]!r}") from None
            if label < 0:
                raise FormatError(f"{path}:{lineno}: negative label")
            seen = {}
            for tok in parts[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad token {tok!r}") from None
                if idx < 1:
                    raise FormatError(f"{path}:{lineno}: index {idx} < 1")
                if idx in seen:
                    raise FormatError(f"{path}:{lineno}: duplicate index {idx}")
                if not np.isfinite(val) or val < 0:
                    raise FormatError(f"{path}:{lineno}: bad count {val_s!r}")
                seen[idx] = val
            labels.append(label)
            entries.append(seen)
    if skipped:
        log.warning("%s: skipped %d blank line(s)", path, skipped)
    if not entries:
        raise FormatError(f"{path}: no documents")
    max_idx = max((max(e) for e in entries if e), default=0)
    cols = declared if declared is not None else max_idx
    if cols < 1:
        raise FormatError(f"{path}: cannot infer vocabulary size")
    if max_idx > cols:
        raise FormatError(f"{path}: index {max_idx} exceeds vocabulary size {cols}")
    values = np.zeros((len(entries), cols))
    for i, e in enumerate(entries):
        for idx, val in e.items():
            if val > 0:
                values[i, idx - 1] = 1.0
    return DataMatrix(values, np.array(labels))


# ----------------------------------------------------------------------
# batching and resampling


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    order: np.ndarray
    epoch_seed: int

    def __iter__(self) -> Iterator[np.ndarray]:
        for start in range(0, len(self.order), self.batch_size):
            yield self.order[start:start + self.batch_size]

    def sizes(self) -> list[int]:
        return [len(b) for b in self]


def make_batches(M: int, B: int, seed: int, epoch: int) -> BatchPlan:
    """Shuffled mini-batch partition of ``range(M)`` for one epoch."""
    if B < 1:
        raise ValueError("batch size must be >= 1")
    if M < 1:
        raise DimError("cannot batch an empty dataset")
    order = rng_stream(seed, STREAM_BATCH, epoch).permutation(M)
    order.setflags(write=False)
    return BatchPlan(min(B, M), order, epoch)


@dataclass(frozen=True)
class BootstrapSample:
    replicate_index: int
    row_indices: np.ndarray
    seed: int


def bootstrap(M: int, replicate_index: int, seed: int) -> BootstrapSample:
    """Draw M row indices uniformly with replacement."""
    if M < 1:
        raise DimError("bootstrap needs at least one row")
    rows = rng_stream(seed, STREAM_BOOTSTRAP, replicate_index).integers(0, M, size=M)
    rows.setflags(write=False)
    return BootstrapSample(replicate_index, rows, seed)
