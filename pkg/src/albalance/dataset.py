"""Sample identities, embeddings, oracle labels and the labeled/unlabeled pool.

The embedding file format ("ALEMB1") is a fixed 16-byte header followed by
row-major float32 data, all little-endian:

    bytes 0-5   magic ASCII "ALEMB1"
    byte  6     version, currently 1
    byte  7     reserved, 0
    bytes 8-11  uint32 n_samples
    bytes 12-15 uint32 dim
    then        n_samples * dim float32 values

Labels are a UTF-8 text file with one ``<sample_name>,<class_name>`` line per
sample, in the same order as the embedding rows. Class indices are assigned
by first appearance of each class name.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence, TextIO

import numpy as np

from .rng import substream

MAGIC = b"ALEMB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sBBII")


class DatasetError(Exception):
    """Base class for dataset loading and pool bookkeeping errors."""


class MalformedHeaderError(DatasetError):
    pass


class TruncatedPayloadError(DatasetError):
    pass


class MalformedLabelsError(DatasetError):
    pass


class RowCountMismatchError(DatasetError):
    pass


class NonFiniteValueError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class UnknownSampleError(DatasetError):
    pass


class AlreadyLabeledError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable matrix of per-sample feature vectors.

    Sample ids are dense integers 0..n_samples-1 in file order; row ``i``
    holds the embedding of sample ``i``.
    """

    vectors: np.ndarray
    sample_names: tuple[str, ...]
    normalized: bool = False

    def __post_init__(self) -> None:
        v = self.vectors
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise DatasetError(f"embedding matrix must be non-empty 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise NonFiniteValueError("embedding matrix contains NaN or Inf")
        if len(self.sample_names) != v.shape[0]:
            raise RowCountMismatchError(
                f"{len(self.sample_names)} sample names for {v.shape[0]} embedding rows"
            )
        _freeze(v)

    @property
    def n_samples(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_array(
        cls,
        vectors: np.ndarray,
        sample_names: Sequence[str] | None = None,
        *,
        normalize: bool = False,
    ) -> "EmbeddingStore":
        v = np.ascontiguousarray(vectors, dtype=np.float32)
        if normalize:
            v = _l2_normalize(v)
        if sample_names is None:
            sample_names = tuple(f"sample_{i:06d}" for i in range(v.shape[0]))
        return cls(vectors=v, sample_names=tuple(sample_names), normalized=normalize)


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # leave all-zero rows untouched
    return np.ascontiguousarray(v / norms, dtype=np.float32)


@dataclass(frozen=True)
class LabelOracle:
    """Ground-truth labels, visible only to the annotation step."""

    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.shape[0] == 0:
            raise DatasetError("labels must be a non-empty 1-D array")
        if lab.min() < 0 or lab.max() >= len(self.class_names):
            raise LabelRangeError(
                f"label values must lie in [0, {len(self.class_names)}), "
                f"got range [{lab.min()}, {lab.max()}]"
            )
        object.__setattr__(self, "labels", _freeze(lab))

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def label_of(self, sample_id: int) -> int:
        return int(self.labels[sample_id])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class PoolState:
    """Snapshot of the labeled/unlabeled partition at one AL iteration.

    Transitions return new snapshots; the unlabeled set and per-class counts
    are derived from the labeled history, so the partition invariant holds by
    construction.
    """

    n_samples: int
    n_classes: int
    labeled_ids: tuple[int, ...] = ()
    labeled_classes: tuple[int, ...] = ()
    iteration: int = 0

    def __post_init__(self) -> None:
        if len(self.labeled_ids) != len(self.labeled_classes):
            raise DatasetError("labeled_ids and labeled_classes length mismatch")

    @classmethod
    def empty(cls, n_samples: int, n_classes: int) -> "PoolState":
        return cls(n_samples=n_samples, n_classes=n_classes)

    @cached_property
    def labeled_set(self) -> frozenset[int]:
        return frozenset(self.labeled_ids)

    @cached_property
    def unlabeled(self) -> frozenset[int]:
        return frozenset(range(self.n_samples)) - self.labeled_set

    @cached_property
    def unlabeled_sorted(self) -> np.ndarray:
        out = np.setdiff1d(
            np.arange(self.n_samples, dtype=np.int64),
            np.fromiter(self.labeled_set, dtype=np.int64, count=len(self.labeled_set)),
        )
        return _freeze(out)

    @cached_property
    def per_class_counts(self) -> np.ndarray:
        counts = np.bincount(
            np.asarray(self.labeled_classes, dtype=np.int64), minlength=self.n_classes
        )
        return _freeze(counts)

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_ids)

    def labeled_ids_of_class(self, c: int) -> np.ndarray:
        ids = np.asarray(self.labeled_ids, dtype=np.int64)
        classes = np.asarray(self.labeled_classes, dtype=np.int64)
        return ids[classes == c]

    def with_iteration(self, iteration: int) -> "PoolState":
        return replace(self, iteration=iteration)


def label_batch(pool: PoolState, ids: Sequence[int], oracle: LabelOracle) -> PoolState:
    """Move ``ids`` from the unlabeled to the labeled set, querying the oracle.

    Snapshot semantics: the input pool is unchanged and a new state is
    returned. Ids must be pairwise distinct and currently unlabeled.
    """
    ids = [int(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise DuplicateIdError("batch contains duplicate sample ids")
    labeled = pool.labeled_set
    for i in ids:
        if i < 0 or i >= pool.n_samples:
            raise UnknownSampleError(f"sample id {i} outside [0, {pool.n_samples})")
        if i in labeled:
            raise AlreadyLabeledError(f"sample id {i} is already labeled")
    if not ids:
        return pool
    new_classes = tuple(oracle.label_of(i) for i in ids)
    return replace(
        pool,
        labeled_ids=pool.labeled_ids + tuple(ids),
        labeled_classes=pool.labeled_classes + new_classes,
    )


def seed_initial(pool: PoolState, count: int, rng_seed: int, oracle: LabelOracle) -> PoolState:
    """Label an initial uniform random subset of the unlabeled pool.

    Sampling is without replacement from the "seeding" sub-stream of
    ``rng_seed``, so the initial subset is shared by every acquisition
    function compared under the same seed.
    """
    if count > len(pool.unlabeled):
        raise DatasetError(
            f"cannot seed {count} samples from a pool of {len(pool.unlabeled)} unlabeled"
        )
    rng = substream(rng_seed, "seeding")
    picked = rng.choice(pool.unlabeled_sorted, size=count, replace=False)
    return label_batch(pool, [int(i) for i in picked], oracle)


def _open_binary(source: str | Path | BinaryIO) -> tuple[BinaryIO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, "rb"), True
    return source, False


def read_embeddings(source: str | Path | BinaryIO) -> np.ndarray:
    """Read an ALEMB1 stream into an (n_samples, dim) float32 matrix."""
    fh, owned = _open_binary(source)
    try:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise MalformedHeaderError(f"header truncated at {len(header)} bytes")
        magic, version, reserved, n_samples, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MalformedHeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise MalformedHeaderError(f"unsupported version {version}")
        if reserved != 0:
            raise MalformedHeaderError(f"reserved byte must be 0, got {reserved}")
        if n_samples == 0 or dim == 0:
            raise MalformedHeaderError(f"empty matrix ({n_samples} x {dim})")
        payload = fh.read(4 * n_samples * dim + 1)
        if len(payload) < 4 * n_samples * dim:
            raise TruncatedPayloadError(
                f"expected {4 * n_samples * dim} payload bytes, got {len(payload)}"
            )
        if len(payload) > 4 * n_samples * dim:
            raise TruncatedPayloadError("trailing bytes after embedding payload")
        flat = np.frombuffer(payload, dtype="<f4", count=n_samples * dim)
        return flat.reshape(n_samples, dim).astype(np.float32)
    finally:
        if owned:
            fh.close()


def write_embeddings(dest: str | Path | BinaryIO, vectors: np.ndarray) -> None:
    """Write an (n_samples, dim) matrix as an ALEMB1 stream."""
    v = np.ascontiguousarray(vectors, dtype="<f4")
    if v.ndim != 2:
        raise DatasetError(f"expected a 2-D matrix, got shape {v.shape}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, v.shape[0], v.shape[1])
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            fh.write(header)
            fh.write(v.tobytes(order="C"))
    else:
        dest.write(header)
        dest.write(v.tobytes(order="C"))


def read_label_lines(source: str | Path | TextIO) -> list[tuple[str, str]]:
    """Parse ``<sample_name>,<class_name>`` lines, preserving order."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    pairs: list[tuple[str, str]] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        name, sep, cls = line.partition(",")
        if not sep or not cls.strip():
            raise MalformedLabelsError(f"line {lineno}: expected '<sample_name>,<class_name>'")
        pairs.append((name.strip(), cls.strip()))
    return pairs


def write_labels(
    dest: str | Path | TextIO, names: Iterable[str], class_names_per_sample: Iterable[str]
) -> None:
    lines = [f"{n},{c}\n" for n, c in zip(names, class_names_per_sample)]
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
    else:
        dest.writelines(lines)


def load_dataset(
    embedding_source: str | Path | BinaryIO,
    label_source: str | Path | TextIO,
    *,
    normalize: bool = True,
) -> tuple[EmbeddingStore, LabelOracle]:
    """Load an embedding matrix and its aligned labels file.

    Sample ids are assigned by file order. Class indices are assigned by
    first appearance of each class name; the resulting name -> index map is
    ``oracle.class_names``. Embedding rows are L2-normalized by default so
    Euclidean distances are scale-free (flag recorded on the store).
    """
    vectors = read_embeddings(embedding_source)
    if not np.isfinite(vectors).all():
        raise NonFiniteValueError("embedding file contains NaN or Inf values")
    pairs = read_label_lines(label_source)
    if len(pairs) != vectors.shape[0]:
        raise RowCountMismatchError(
            f"embeddings have {vectors.shape[0]} rows but labels file has {len(pairs)} lines"
        )
    class_index: dict[str, int] = {}
    labels = np.empty(len(pairs), dtype=np.int64)
    for i, (_, cls) in enumerate(pairs):
        labels[i] = class_index.setdefault(cls, len(class_index))
    store = EmbeddingStore.from_array(
        vectors, sample_names=[name for name, _ in pairs], normalize=normalize
    )
    oracle = LabelOracle(labels=labels, class_names=tuple(class_index))
    return store, oracle
