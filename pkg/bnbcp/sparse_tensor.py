"""
Sparse count tensors in coordinate (COO) format.

File format (UTF-8 text, zero-based indices)::

    # comment lines start with '#'
    dims: n_1 n_2 ... n_K
    i_1 i_2 ... i_K count
    ...

Only nonzero counts are stored; every other cell is an implicit zero.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from bnbcp.errors import (
    DuplicateIndexError,
    TensorFormatError,
    TensorParseError,
    TensorValidationError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_INT64 = np.iinfo(np.int64)


@dataclass(frozen=True)
class TensorShape:
    """Mode sizes (n_1, ..., n_K) of a K-way tensor"""
    dims: Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 2:
            raise TensorValidationError(f"a tensor needs at least 2 modes, got {len(dims)}")
        if any(n < 1 for n in dims):
            raise TensorValidationError(f"mode sizes must be positive, got {dims}")
        object.__setattr__(self, 'dims', dims)

    @property
    def num_modes(self) -> int:
        return len(self.dims)

    @property
    def volume(self) -> int:
        volume = 1
        for n in self.dims:
            volume *= n
        return volume

    def __str__(self) -> str:
        return "x".join(str(n) for n in self.dims)


@dataclass(frozen=True)
class Entry:
    """One stored cell: zero-based index tuple and its count y_i"""
    index: Tuple[int, ...]
    count: int


class SparseCountTensor:
    """
    Immutable COO store of the nonzero counts of a K-way tensor.

    ``indices`` is an (N, K) int64 array and ``counts`` an (N,) int64 array;
    both are marked read-only after validation.
    """

    def __init__(self,
                 shape: TensorShape,
                 indices: np.ndarray,
                 counts: np.ndarray,
                 sum_duplicates: bool = False,
                 validate: bool = True):
        indices = np.asarray(indices, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if indices.size == 0:
            indices = indices.reshape(0, shape.num_modes)

        if validate:
            _check_arrays(shape, indices, counts)
            indices, counts = _resolve_duplicates(indices, counts, sum_duplicates)

        indices.setflags(write=False)
        counts.setflags(write=False)
        self.shape = shape
        self.indices = indices
        self.counts = counts

    @classmethod
    def from_entries(cls,
                     shape: TensorShape,
                     entries: Sequence[Entry],
                     sum_duplicates: bool = False) -> 'SparseCountTensor':
        indices = np.array([e.index for e in entries], dtype=np.int64).reshape(-1, shape.num_modes)
        counts = np.array([e.count for e in entries], dtype=np.int64)
        return cls(shape, indices, counts, sum_duplicates=sum_duplicates)

    @classmethod
    def empty(cls, shape: TensorShape) -> 'SparseCountTensor':
        return cls(shape, np.zeros((0, shape.num_modes), dtype=np.int64),
                   np.zeros(0, dtype=np.int64), validate=False)

    @property
    def nnz(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    @property
    def entries(self) -> Iterator[Entry]:
        for index, count in zip(self.indices, self.counts):
            yield Entry(tuple(int(i) for i in index), int(count))

    def take(self, rows: np.ndarray) -> 'SparseCountTensor':
        """Sub-tensor made of the given entry positions (no re-validation)"""
        rows = np.asarray(rows, dtype=np.int64)
        return SparseCountTensor(self.shape, self.indices[rows].copy(),
                                 self.counts[rows].copy(), validate=False)

    def to_frame(self) -> pd.DataFrame:
        """Entries as a DataFrame with columns i_0..i_{K-1}, count"""
        columns = {f"i_{k}": self.indices[:, k] for k in range(self.shape.num_modes)}
        columns['count'] = self.counts
        return pd.DataFrame(columns)

    def entry_set(self) -> set:
        return {(tuple(int(i) for i in index), int(c)) for index, c in zip(self.indices, self.counts)}

    def __len__(self) -> int:
        return self.nnz

    def __repr__(self) -> str:
        return f"SparseCountTensor(shape={self.shape}, nnz={self.nnz})"


def _check_arrays(shape: TensorShape, indices: np.ndarray, counts: np.ndarray,
                  line_numbers: Optional[List[int]] = None):
    """Bounds and count checks; reports the first offending row"""
    if indices.ndim != 2 or indices.shape[1] != shape.num_modes:
        raise TensorValidationError(
            f"indices must have shape (N, {shape.num_modes}), got {indices.shape}")
    if counts.shape != (indices.shape[0],):
        raise TensorValidationError(
            f"counts must have shape ({indices.shape[0]},), got {counts.shape}")

    def where(row: int) -> str:
        if line_numbers is not None:
            return f"line {line_numbers[row]}"
        return f"entry {row}"

    dims = np.asarray(shape.dims, dtype=np.int64)
    bad = np.nonzero(((indices < 0) | (indices >= dims)).any(axis=1))[0]
    if bad.size:
        row = int(bad[0])
        raise TensorValidationError(
            f"{where(row)}: index {tuple(int(i) for i in indices[row])} outside dims {shape.dims}")

    bad = np.nonzero(counts < 1)[0]
    if bad.size:
        row = int(bad[0])
        raise TensorValidationError(f"{where(row)}: count {int(counts[row])} is not a positive integer")


def _resolve_duplicates(indices: np.ndarray, counts: np.ndarray,
                        sum_duplicates: bool) -> Tuple[np.ndarray, np.ndarray]:
    if indices.shape[0] < 2:
        return indices, counts

    unique, inverse, multiplicity = np.unique(indices, axis=0, return_inverse=True, return_counts=True)
    if unique.shape[0] == indices.shape[0]:
        return indices, counts

    if not sum_duplicates:
        first = unique[int(np.argmax(multiplicity > 1))]
        raise DuplicateIndexError(
            f"duplicate index {tuple(int(i) for i in first)} "
            f"({int((multiplicity > 1).sum())} coordinates repeated)")

    summed = np.zeros(unique.shape[0], dtype=np.int64)
    np.add.at(summed, inverse.reshape(-1), counts)
    logger.info(f"Summed {indices.shape[0] - unique.shape[0]} duplicate entries")
    return unique, summed


def _parse_header(line: str, line_number: int) -> TensorShape:
    key, sep, rest = line.partition(':')
    if key.strip() != 'dims' or not sep:
        raise TensorFormatError(f"line {line_number}: expected 'dims: n_1 ... n_K' header, got {line!r}")
    try:
        dims = tuple(int(tok) for tok in rest.split())
    except ValueError:
        raise TensorFormatError(f"line {line_number}: non-integer mode size in {line!r}")
    try:
        return TensorShape(dims)
    except TensorValidationError as e:
        raise TensorFormatError(f"line {line_number}: {e}")


def load_tensor(path: PathLike, sum_duplicates: bool = False) -> SparseCountTensor:
    """Read a tensor file; see the module docstring for the format"""
    shape = None
    rows: List[List[int]] = []
    line_numbers: List[int] = []

    with open(path, encoding='utf-8') as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue

            if shape is None:
                shape = _parse_header(line, line_number)
                continue

            tokens = line.split()
            if len(tokens) != shape.num_modes + 1:
                raise TensorParseError(
                    f"expected {shape.num_modes + 1} fields, found {len(tokens)}", line_number)
            try:
                rows.append([int(tok) for tok in tokens])
            except ValueError:
                raise TensorParseError(f"non-integer token in {line!r}", line_number)
            if any(v < _INT64.min or v > _INT64.max for v in rows[-1]):
                raise TensorParseError(f"value outside the 64-bit integer range in {line!r}", line_number)
            line_numbers.append(line_number)

    if shape is None:
        raise TensorFormatError(f"{path}: missing 'dims:' header")

    data = np.array(rows, dtype=np.int64).reshape(-1, shape.num_modes + 1)
    indices, counts = data[:, :-1], data[:, -1]
    _check_arrays(shape, indices, counts, line_numbers)

    tensor = SparseCountTensor(shape, indices, counts, sum_duplicates=sum_duplicates)
    logger.info(f"Loaded {path}: shape {tensor.shape}, {tensor.nnz} nonzeros")
    return tensor


def save_tensor(tensor: SparseCountTensor, path: PathLike, comment: Optional[str] = None):
    """Write a tensor in the text format read by load_tensor"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"dims: {' '.join(str(n) for n in tensor.shape.dims)}\n")
        tensor.to_frame().to_csv(fh, sep=' ', header=False, index=False, lineterminator='\n')
    logger.debug(f"Wrote {tensor.nnz} entries to {path}")


def split_heldout(t: SparseCountTensor,
                  fraction: float,
                  seed: int) -> Tuple[SparseCountTensor, SparseCountTensor]:
    """
    Partition the stored entries into (train, heldout).

    The heldout part holds round(fraction * N) entries chosen uniformly at
    random; both parts keep the input's entry order and shape.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"heldout fraction must lie in (0, 1), got {fraction}")
    if t.nnz < 2:
        raise ValueError(f"need at least 2 entries to split, got {t.nnz}")

    n_heldout = int(np.floor(fraction * t.nnz + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(t.nnz)

    heldout = t.take(np.sort(perm[:n_heldout]))
    train = t.take(np.sort(perm[n_heldout:]))
    if heldout.nnz == 0:
        logger.warning(f"Heldout fraction {fraction} of {t.nnz} entries rounds to an empty heldout set")
    return train, heldout
