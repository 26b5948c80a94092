"""Compressed sparse row storage, exact matvec kernels and the SPR1/VEC1 file formats."""

from __future__ import annotations

import logging
import struct
from collections.abc import Iterator, Sequence
from pathlib import Path
from typing import Any, Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, PrivateAttr, ValidationError, field_validator, model_validator
from scipy import sparse

from aind_compressed_regularization.errors import DimensionMismatchError, FormatError
from aind_compressed_regularization.linear_operator import FloatArray, as_vector

logger = logging.getLogger(__name__)

# --------- SPR1 layout ---------
SPR_MAGIC = b"SPR1"
_SPR_HEADER = struct.Struct("<4sQQQ")  # magic, nrows, ncols, nnz
SPR_HEADER_BYTES = _SPR_HEADER.size
_NNZ_FIELD_OFFSET = 20
MAX_COLUMNS = 2**32  # u32 column indices

VEC_MAGIC = b"VEC1"
_VEC_HEADER = struct.Struct("<4sQ")


class SparseMatrix(BaseModel):
    """
    Immutable CSR matrix.

    Attributes
    ----------
    kind : Literal["raw"]
        Block discriminator when used inside a blocked operator
    nrows, ncols : int
        Dimensions (both > 0)
    row_nnz : numpy.ndarray
        Nonzero count per row (uint64)
    col_indices : numpy.ndarray
        Zero-based column of each nonzero, row-major, strictly increasing within a row (uint32)
    values : numpy.ndarray
        Value of each nonzero (float64)
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["raw"] = "raw"
    nrows: int
    ncols: int
    row_nnz: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    _csr: sparse.csr_matrix = PrivateAttr()

    @field_validator("row_nnz", mode="before")
    @classmethod
    def _as_row_counts(cls, v: Any) -> np.ndarray:
        arr = np.asarray(v)
        if arr.ndim != 1:
            raise ValueError("row_nnz must be one-dimensional")
        if arr.size and (not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0):
            raise ValueError("row_nnz must hold non-negative integers")
        return np.ascontiguousarray(arr, dtype=np.uint64)

    @field_validator("col_indices", mode="before")
    @classmethod
    def _as_col_indices(cls, v: Any) -> np.ndarray:
        arr = np.asarray(v)
        if arr.ndim != 1:
            raise ValueError("col_indices must be one-dimensional")
        if arr.size:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValueError("col_indices must be integers")
            if arr.min() < 0 or int(arr.max()) >= MAX_COLUMNS:
                raise ValueError("col_indices must fit in u32")
        return np.ascontiguousarray(arr, dtype=np.uint32)

    @field_validator("values", mode="before")
    @classmethod
    def _as_values(cls, v: Any) -> np.ndarray:
        arr = np.ascontiguousarray(v, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("values must be finite")
        return arr

    @model_validator(mode="after")
    def _check_layout(self) -> SparseMatrix:
        if self.nrows <= 0 or self.ncols <= 0:
            raise ValueError(f"matrix dimensions must be positive, got {self.nrows}x{self.ncols}")
        if self.ncols > MAX_COLUMNS:
            raise ValueError(f"ncols {self.ncols} exceeds the u32 index range")
        if self.row_nnz.shape[0] != self.nrows:
            raise ValueError(f"row_nnz has {self.row_nnz.shape[0]} entries for {self.nrows} rows")
        nnz = int(self.row_nnz.sum())
        if self.col_indices.shape[0] != nnz or self.values.shape[0] != nnz:
            raise ValueError(
                f"sum(row_nnz)={nnz} but {self.col_indices.shape[0]} column indices and "
                f"{self.values.shape[0]} values were given"
            )
        if nnz and int(self.col_indices.max()) >= self.ncols:
            raise ValueError(f"column index {int(self.col_indices.max())} out of range for ncols={self.ncols}")
        bad = _first_unordered(self.col_indices, _indptr(self.row_nnz))
        if bad is not None:
            raise ValueError(f"column indices must be strictly increasing within a row (nonzero {bad})")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._csr = sparse.csr_matrix(
            (self.values, self.col_indices.astype(np.int64), _indptr(self.row_nnz)),
            shape=(self.nrows, self.ncols),
        )

    # ---- construction helpers ---------------------------------------------
    @classmethod
    def from_dense(cls, matrix: ArrayLike) -> SparseMatrix:
        """Build from a dense 2-D array, dropping exact zeros."""
        return cls.from_scipy(sparse.csr_matrix(np.asarray(matrix, dtype=np.float64)))

    @classmethod
    def from_scipy(cls, matrix: sparse.spmatrix | sparse.sparray) -> SparseMatrix:
        """Build from any scipy sparse matrix (duplicates summed, explicit zeros dropped)."""
        csr = sparse.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(
            nrows=csr.shape[0],
            ncols=csr.shape[1],
            row_nnz=np.diff(csr.indptr),
            col_indices=csr.indices,
            values=csr.data,
        )

    # ---- views --------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def indptr(self) -> np.ndarray:
        return _indptr(self.row_nnz)

    @property
    def serialized_nbytes(self) -> int:
        """Size of the SPR1 encoding in bytes."""
        return SPR_HEADER_BYTES + 8 * self.nrows + 12 * self.nnz

    def to_scipy(self) -> sparse.csr_matrix:
        return self._csr.copy()

    def to_dense(self) -> FloatArray:
        return np.asarray(self._csr.toarray(), dtype=np.float64)

    def dense_rows(self, start: int, stop: int) -> FloatArray:
        """Rows ``start:stop`` as a dense block."""
        return np.asarray(self._csr[start:stop].toarray(), dtype=np.float64)

    def row(self, i: int) -> FloatArray:
        return self.dense_rows(i, i + 1)[0]

    def same_as(self, other: SparseMatrix) -> bool:
        """Bit-exact equality of dimensions, structure and values."""
        return (
            self.shape == other.shape
            and self.row_nnz.tobytes() == other.row_nnz.tobytes()
            and self.col_indices.tobytes() == other.col_indices.tobytes()
            and self.values.tobytes() == other.values.tobytes()
        )

    # ---- operator protocol ----------------------------------------------------
    def apply(self, x: FloatArray) -> FloatArray:
        return spmv(self, x)

    def apply_transpose(self, y: FloatArray) -> FloatArray:
        return spmv_transpose(self, y)

    def apply_normal(self, x: FloatArray) -> FloatArray:
        return spmv_transpose(self, spmv(self, x))


def _indptr(row_nnz: np.ndarray) -> np.ndarray:
    indptr = np.zeros(row_nnz.shape[0] + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(row_nnz.astype(np.int64))
    return indptr


def _first_unordered(cols: np.ndarray, indptr: np.ndarray) -> int | None:
    """Index of the first nonzero whose column does not exceed its predecessor in the same row."""
    if cols.shape[0] < 2:
        return None
    step = np.diff(cols.astype(np.int64))
    within_row = np.ones(step.shape[0], dtype=bool)
    starts = indptr[1:-1]
    starts = starts[(starts > 0) & (starts < cols.shape[0])]
    within_row[starts - 1] = False
    bad = np.flatnonzero(within_row & (step <= 0))
    return int(bad[0]) + 1 if bad.size else None


# --------- kernels ---------
def spmv(m: SparseMatrix, x: ArrayLike) -> FloatArray:
    """
    Exact product ``m @ x``.

    Raises
    ------
    DimensionMismatchError
        If ``len(x) != m.ncols``.
    """
    v = as_vector(x, m.ncols, "x")
    return np.asarray(m._csr @ v, dtype=np.float64)


def spmv_transpose(m: SparseMatrix, y: ArrayLike) -> FloatArray:
    """Exact product ``m^T @ y``; the CSC view of the transpose shares ``m``'s buffers."""
    v = as_vector(y, m.nrows, "y")
    return np.asarray(m._csr.T @ v, dtype=np.float64)


def vstack(blocks: Sequence[SparseMatrix]) -> SparseMatrix:
    """Concatenate row blocks that share a column dimension."""
    if not blocks:
        raise ValueError("vstack needs at least one block")
    ncols = blocks[0].ncols
    for j, b in enumerate(blocks):
        if b.ncols != ncols:
            raise DimensionMismatchError(f"block {j} ncols", ncols, b.ncols)
    if len(blocks) == 1:
        return blocks[0]
    return SparseMatrix(
        nrows=sum(b.nrows for b in blocks),
        ncols=ncols,
        row_nnz=np.concatenate([b.row_nnz for b in blocks]),
        col_indices=np.concatenate([b.col_indices for b in blocks]),
        values=np.concatenate([b.values for b in blocks]),
    )


# --------- SPR1 codec ---------
def encode_sparse(m: SparseMatrix) -> bytes:
    """SPR1 bytes for ``m``."""
    return b"".join(
        [
            _SPR_HEADER.pack(SPR_MAGIC, m.nrows, m.ncols, m.nnz),
            m.row_nnz.astype("<u8").tobytes(),
            m.col_indices.astype("<u4").tobytes(),
            m.values.astype("<f8").tobytes(),
        ]
    )


def _need(buf: bytes, start: int, size: int, what: str, base: int) -> None:
    if len(buf) < start + size:
        raise FormatError(f"truncated {what}: need {size} bytes, {max(len(buf) - start, 0)} available", base + len(buf))


def decode_sparse(buf: bytes, base_offset: int = 0) -> tuple[SparseMatrix, int]:
    """
    Parse one SPR1 matrix from the start of ``buf``.

    Returns
    -------
    matrix : SparseMatrix
        Decoded matrix
    consumed : int
        Number of bytes read

    Raises
    ------
    FormatError
        On truncation, bad magic or any invariant violation; ``offset`` is absolute
        (``base_offset`` + position in ``buf``).
    """
    _need(buf, 0, _SPR_HEADER.size, "header", base_offset)
    magic, nrows, ncols, nnz = _SPR_HEADER.unpack_from(buf, 0)
    if magic != SPR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SPR_MAGIC!r}", base_offset)
    if nrows == 0:
        raise FormatError("nrows must be positive", base_offset + 4)
    if ncols == 0 or ncols > MAX_COLUMNS:
        raise FormatError(f"ncols {ncols} outside 1..2^32", base_offset + 12)

    pos = _SPR_HEADER.size
    _need(buf, pos, 8 * nrows, "row counts", base_offset)
    row_nnz = np.frombuffer(buf, dtype="<u8", count=nrows, offset=pos).astype(np.uint64)
    # object sum avoids u64 wraparound on corrupt counts
    total = int(row_nnz.sum(dtype=object)) if nrows else 0
    if total != nnz:
        raise FormatError(f"header nnz {nnz} differs from sum of row counts {total}", base_offset + _NNZ_FIELD_OFFSET)
    pos += 8 * nrows

    _need(buf, pos, 4 * nnz, "column indices", base_offset)
    cols = np.frombuffer(buf, dtype="<u4", count=nnz, offset=pos).astype(np.uint32)
    cols_pos = pos
    pos += 4 * nnz
    _need(buf, pos, 8 * nnz, "values", base_offset)
    vals = np.frombuffer(buf, dtype="<f8", count=nnz, offset=pos).astype(np.float64)
    vals_pos = pos
    pos += 8 * nnz

    out_of_range = np.flatnonzero(cols >= ncols)
    if out_of_range.size:
        i = int(out_of_range[0])
        raise FormatError(f"column index {int(cols[i])} >= ncols {ncols}", base_offset + cols_pos + 4 * i)
    bad = _first_unordered(cols, _indptr(row_nnz))
    if bad is not None:
        raise FormatError("column indices not strictly increasing within row", base_offset + cols_pos + 4 * bad)
    non_finite = np.flatnonzero(~np.isfinite(vals))
    if non_finite.size:
        raise FormatError("non-finite value", base_offset + vals_pos + 8 * int(non_finite[0]))

    m = SparseMatrix(nrows=nrows, ncols=ncols, row_nnz=row_nnz, col_indices=cols, values=vals)
    return m, pos


def write_sparse(m: SparseMatrix, path: str | Path) -> None:
    """Write ``m`` as an SPR1 file."""
    Path(path).write_bytes(encode_sparse(m))
    logger.debug("wrote %dx%d matrix with %d nonzeros to %s", m.nrows, m.ncols, m.nnz, path)


def read_sparse(path: str | Path) -> SparseMatrix:
    """Read an SPR1 file; trailing bytes are a format error."""
    buf = Path(path).read_bytes()
    m, consumed = decode_sparse(buf)
    if consumed != len(buf):
        raise FormatError(f"{len(buf) - consumed} trailing bytes after matrix", consumed)
    return m


def read_sparse_blocks(path: str | Path, block_rows: int) -> Iterator[SparseMatrix]:
    """
    Stream an SPR1 file as consecutive row blocks of at most ``block_rows`` rows.

    Only the header and the row counts are held for the whole matrix; index and
    value ranges are read per block.
    """
    if block_rows <= 0:
        raise ValueError(f"block_rows must be positive, got {block_rows}")
    with open(path, "rb") as fh:
        head = fh.read(_SPR_HEADER.size)
        _need(head, 0, _SPR_HEADER.size, "header", 0)
        magic, nrows, ncols, nnz = _SPR_HEADER.unpack(head)
        if magic != SPR_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {SPR_MAGIC!r}", 0)
        if nrows == 0 or ncols == 0:
            raise FormatError("empty matrix", 4)
        counts_raw = fh.read(8 * nrows)
        _need(counts_raw, 0, 8 * nrows, "row counts", _SPR_HEADER.size)
        row_nnz = np.frombuffer(counts_raw, dtype="<u8").astype(np.uint64)
        if int(row_nnz.sum(dtype=object)) != nnz:
            raise FormatError("header nnz differs from sum of row counts", _NNZ_FIELD_OFFSET)
        indptr = _indptr(row_nnz)
        cols_off = _SPR_HEADER.size + 8 * nrows
        vals_off = cols_off + 4 * nnz

        for start in range(0, nrows, block_rows):
            stop = min(start + block_rows, nrows)
            lo, hi = int(indptr[start]), int(indptr[stop])
            fh.seek(cols_off + 4 * lo)
            cols_raw = fh.read(4 * (hi - lo))
            _need(cols_raw, 0, 4 * (hi - lo), "column indices", cols_off + 4 * lo)
            fh.seek(vals_off + 8 * lo)
            vals_raw = fh.read(8 * (hi - lo))
            _need(vals_raw, 0, 8 * (hi - lo), "values", vals_off + 8 * lo)
            try:
                yield SparseMatrix(
                    nrows=stop - start,
                    ncols=ncols,
                    row_nnz=row_nnz[start:stop],
                    col_indices=np.frombuffer(cols_raw, dtype="<u4").astype(np.uint32),
                    values=np.frombuffer(vals_raw, dtype="<f8").astype(np.float64),
                )
            except ValidationError as exc:
                detail = exc.errors()[0]["msg"]
                raise FormatError(f"invalid rows {start}..{stop - 1}: {detail}", cols_off + 4 * lo) from exc


# --------- VEC1 codec ---------
def write_vector(x: ArrayLike, path: str | Path) -> None:
    """Write a float64 vector as VEC1 (magic, u64 length, little-endian f64 entries)."""
    v = as_vector(x)
    Path(path).write_bytes(_VEC_HEADER.pack(VEC_MAGIC, v.shape[0]) + v.astype("<f8").tobytes())


def read_vector(path: str | Path) -> FloatArray:
    """Read a VEC1 file."""
    buf = Path(path).read_bytes()
    _need(buf, 0, _VEC_HEADER.size, "vector header", 0)
    magic, n = _VEC_HEADER.unpack_from(buf, 0)
    if magic != VEC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VEC_MAGIC!r}", 0)
    _need(buf, _VEC_HEADER.size, 8 * n, "vector entries", 0)
    if len(buf) != _VEC_HEADER.size + 8 * n:
        raise FormatError("trailing bytes after vector", _VEC_HEADER.size + 8 * n)
    return np.frombuffer(buf, dtype="<f8", count=n, offset=_VEC_HEADER.size).astype(np.float64)
