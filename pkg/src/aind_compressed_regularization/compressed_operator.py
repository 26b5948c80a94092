"""
Wavelet-compressed operators and heterogeneous blocked operators.

Rows of ``A`` are transformed and thresholded one block of rows at a time,
``M = Thr(A W^T)``, after which

- ``A x   ~ M W^-T x``
- ``A^T y ~ W^-1 M^T y``
- ``A^T A x ~ W^-1 M^T M W^-T x``

A :class:`BlockedOperator` stacks raw, compressed and low-rank blocks that share
a column dimension; its transpose sums the per-block contributions.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated, Literal, TypeAlias

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse

from aind_compressed_regularization.errors import DimensionMismatchError, FormatError
from aind_compressed_regularization.linear_operator import FloatArray, as_vector
from aind_compressed_regularization.lowrank_svd import LowRankSVD
from aind_compressed_regularization.sidecar import CompressionSidecarV1, decode_framed, encode_framed
from aind_compressed_regularization.sparse_core import (
    SPR_HEADER_BYTES,
    SparseMatrix,
    decode_sparse,
    encode_sparse,
    spmv,
    spmv_transpose,
    vstack,
)
from aind_compressed_regularization.wavelet import (
    Absolute,
    KeepFraction,
    ThresholdPolicy,
    WaveletSpec,
    forward,
    hard_threshold,
    inverse,
    inverse_transpose,
)

logger = logging.getLogger(__name__)

SPC_MAGIC = b"SPC1"
DEFAULT_BLOCK_ROWS = 256
INCOMPRESSIBLE_ERROR = 0.25


class CompressedMatrix(BaseModel):
    """
    Thresholded transformed rows ``M`` together with the transform that produced them.

    Attributes
    ----------
    kind : Literal["wavelet"]
        Block discriminator
    m : SparseMatrix
        ``nrows x padded_ncols`` thresholded coefficients
    spec : WaveletSpec
        Row transform, bound to the original width through ``signal_length``
    policy : ThresholdPolicy
        Thresholding applied to each transformed row
    source_nnz : int | None
        Nonzeros of the source matrix, when known
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["wavelet"] = "wavelet"
    m: SparseMatrix
    spec: WaveletSpec
    policy: ThresholdPolicy
    source_nnz: int | None = None

    @model_validator(mode="after")
    def _check_width(self) -> CompressedMatrix:
        if self.spec.signal_length is None:
            raise ValueError("spec.signal_length must record the original column count")
        if self.m.ncols != self.spec.padded_length():
            raise ValueError(
                f"coefficient width {self.m.ncols} does not match padded width {self.spec.padded_length()}"
            )
        return self

    @property
    def ncols(self) -> int:
        assert self.spec.signal_length is not None
        return self.spec.signal_length

    @property
    def padded_ncols(self) -> int:
        return self.m.ncols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return self.m.nnz

    def header(self) -> CompressionSidecarV1:
        return CompressionSidecarV1(
            spec=self.spec,
            policy=self.policy,
            nrows=self.m.nrows,
            ncols=self.ncols,
            padded_ncols=self.padded_ncols,
            source_nnz=self.source_nnz,
        )

    def reconstruct_rows(self, start: int, stop: int) -> FloatArray:
        """Rows ``start:stop`` of ``M W^-T`` (the approximation of ``A``) as a dense block."""
        return inverse(self.spec, self.m.dense_rows(start, stop), length=self.ncols)

    def apply(self, x: FloatArray) -> FloatArray:
        return apply(self, x)

    def apply_transpose(self, y: FloatArray) -> FloatArray:
        return apply_transpose(self, y)

    def apply_normal(self, x: FloatArray) -> FloatArray:
        return apply_normal(self, x)


# --------- compression ---------
def _threshold_rows(policy: KeepFraction | Absolute, coeffs: FloatArray) -> sparse.csr_matrix:
    out = np.empty_like(coeffs)
    for i in range(coeffs.shape[0]):
        out[i] = hard_threshold(policy, coeffs[i])
    return sparse.csr_matrix(out)


def _compress_block(
    a: SparseMatrix, start: int, stop: int, spec: WaveletSpec, policy: KeepFraction | Absolute
) -> SparseMatrix:
    coeffs = forward(spec, a.dense_rows(start, stop))
    return SparseMatrix.from_scipy(_threshold_rows(policy, coeffs))


def compress_rows(
    a: SparseMatrix,
    spec: WaveletSpec,
    policy: KeepFraction | Absolute,
    threads: int | None = None,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> CompressedMatrix:
    """
    ``M = Thr(A W^T)``, computed one block of rows at a time.

    Row ``i`` of ``M`` is ``hard_threshold(policy, forward(spec, a[i]))``. Row
    blocks are independent and may be processed by ``threads`` workers; results
    are reassembled in row order, so output does not depend on ``threads``.
    """
    if block_rows <= 0:
        raise ValueError(f"block_rows must be positive, got {block_rows}")
    bound = spec.for_length(a.ncols)
    starts = list(range(0, a.nrows, block_rows))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(
            pool.map(lambda s: _compress_block(a, s, min(s + block_rows, a.nrows), bound, policy), starts)
        )
    m = vstack(parts)
    if m.nnz > a.nnz:
        logger.warning(
            "compressed operator has more nonzeros (%d) than its source (%d); "
            "sparse rows spread out under the transform",
            m.nnz,
            a.nnz,
        )
    logger.info(
        "compressed %dx%d operator: %d -> %d nonzeros (%s, %d levels)",
        a.nrows,
        a.ncols,
        a.nnz,
        m.nnz,
        spec.family,
        spec.levels,
    )
    return CompressedMatrix(m=m, spec=bound, policy=policy, source_nnz=a.nnz)


def compress_blocks(
    blocks: Iterable[SparseMatrix],
    spec: WaveletSpec | list[WaveletSpec],
    policy: KeepFraction | Absolute,
    threads: int | None = None,
) -> BlockedOperator:
    """
    Compress a stream of row blocks (for example from ``read_sparse_blocks``).

    ``spec`` may be a single transform or one per block (``W_j``).
    """
    compressed: list[SparseMatrix | CompressedMatrix | LowRankSVD] = []
    for j, block in enumerate(blocks):
        if isinstance(spec, list) and j >= len(spec):
            raise DimensionMismatchError("per-block wavelet specs", j + 1, len(spec))
        w = spec[j] if isinstance(spec, list) else spec
        compressed.append(compress_rows(block, w, policy, threads=threads, block_rows=block.nrows))
    if isinstance(spec, list) and len(spec) != len(compressed):
        raise DimensionMismatchError("per-block wavelet specs", len(compressed), len(spec))
    return BlockedOperator(blocks=compressed)


# --------- approximate products ---------
def apply(c: CompressedMatrix, x: ArrayLike) -> FloatArray:
    """``M W^-T x``."""
    v = as_vector(x, c.ncols, "x")
    return spmv(c.m, inverse_transpose(c.spec, v))


def apply_transpose(c: CompressedMatrix, y: ArrayLike) -> FloatArray:
    """``W^-1 M^T y``, truncated to the original width."""
    return inverse(c.spec, spmv_transpose(c.m, y), length=c.ncols)


def apply_normal(c: CompressedMatrix, x: ArrayLike) -> FloatArray:
    """``W^-1 M^T M W^-T x``."""
    return apply_transpose(c, apply(c, x))


# --------- blocked operators ---------
Block: TypeAlias = Annotated[SparseMatrix | CompressedMatrix | LowRankSVD, Field(discriminator="kind")]


class BlockedOperator(BaseModel):
    """
    Row-stacked blocks ``[A_1; A_2; ...]`` of mixed kinds.

    Attributes
    ----------
    blocks : list[Block]
        Raw, wavelet-compressed or low-rank blocks sharing a column dimension
    row_offsets : list[int] | None
        Cumulative block heights starting at 0; populated if missing, verified if provided
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    blocks: list[Block]
    row_offsets: list[int] | None = None

    @model_validator(mode="after")
    def _check_blocks(self) -> BlockedOperator:
        if not self.blocks:
            raise ValueError("a blocked operator needs at least one block")
        ncols = self.blocks[0].shape[1]
        for j, b in enumerate(self.blocks):
            if b.shape[1] != ncols:
                raise ValueError(f"block {j} has {b.shape[1]} columns, expected {ncols}")
        computed = [0]
        for b in self.blocks:
            computed.append(computed[-1] + b.shape[0])
        if self.row_offsets is None:
            self.row_offsets = computed
        elif self.row_offsets != computed:
            raise ValueError(f"row_offsets {self.row_offsets} do not match block heights {computed}")
        return self

    @property
    def offsets(self) -> list[int]:
        assert self.row_offsets is not None
        return self.row_offsets

    @property
    def shape(self) -> tuple[int, int]:
        return (self.offsets[-1], self.blocks[0].shape[1])

    def block_slice(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j + 1])

    def apply(self, x: FloatArray) -> FloatArray:
        return blocked_apply(self, x)

    def apply_transpose(self, y: FloatArray) -> FloatArray:
        return blocked_apply_transpose(self, y)

    def apply_normal(self, x: FloatArray) -> FloatArray:
        """``sum_j A_j^T A_j x``, block by block."""
        v = as_vector(x, self.shape[1], "x")
        out = np.zeros(self.shape[1], dtype=np.float64)
        for b in self.blocks:
            out += b.apply_normal(v)
        return out


def blocked_apply(op: BlockedOperator, x: ArrayLike) -> FloatArray:
    """Stack ``A_j x`` over blocks."""
    v = as_vector(x, op.shape[1], "x")
    return np.concatenate([b.apply(v) for b in op.blocks])


def blocked_apply_transpose(op: BlockedOperator, y: ArrayLike) -> FloatArray:
    """``sum_j A_j^T y_j`` with ``y_j`` the rows of ``y`` belonging to block ``j``."""
    w = as_vector(y, op.shape[0], "y")
    out = np.zeros(op.shape[1], dtype=np.float64)
    for j, b in enumerate(op.blocks):
        out += b.apply_transpose(w[op.block_slice(j)])
    return out


# --------- reporting ---------
class CompressionReport(BaseModel):
    """
    Size and accuracy of a compressed operator relative to its source.

    Attributes
    ----------
    source_nnz, compressed_nnz : int
        Nonzero counts of ``A`` and ``M``
    nnz_ratio : float
        ``compressed_nnz / source_nnz``
    source_bytes, compressed_bytes : int
        SPR1 sizes of ``A`` and ``M``
    byte_ratio : float
        ``source_bytes / compressed_bytes`` (how many times smaller)
    row_errors : list[float]
        Per-row relative reconstruction error ``|a_i - (M W^-T)_i| / |a_i|`` (0 for zero rows)
    max_row_error, mean_row_error : float
        Summary of ``row_errors``
    incompressible : bool
        Mean row error above the flagging threshold
    """

    source_nnz: int
    compressed_nnz: int
    nnz_ratio: float
    source_bytes: int
    compressed_bytes: int
    byte_ratio: float
    row_errors: list[float]
    max_row_error: float
    mean_row_error: float
    incompressible: bool

    def summary_lines(self) -> list[str]:
        return [
            f"nnz: {self.source_nnz} -> {self.compressed_nnz} (ratio {self.nnz_ratio:.4f})",
            f"bytes: {self.source_bytes} -> {self.compressed_bytes} ({self.byte_ratio:.3f}x smaller)",
            f"row reconstruction error: mean {self.mean_row_error:.4e}, max {self.max_row_error:.4e}",
            f"incompressible: {'yes' if self.incompressible else 'no'}",
        ]


def _summarize(
    source_nnz: int,
    compressed_nnz: int,
    source_bytes: int,
    compressed_bytes: int,
    errors: list[float],
    incompressible_error: float,
) -> CompressionReport:
    mean_err = float(np.mean(errors))
    if mean_err > incompressible_error:
        logger.warning("mean row reconstruction error %.3f: input does not compress well", mean_err)
    return CompressionReport(
        source_nnz=source_nnz,
        compressed_nnz=compressed_nnz,
        nnz_ratio=compressed_nnz / source_nnz if source_nnz else float("inf"),
        source_bytes=source_bytes,
        compressed_bytes=compressed_bytes,
        byte_ratio=source_bytes / compressed_bytes,
        row_errors=errors,
        max_row_error=float(np.max(errors)),
        mean_row_error=mean_err,
        incompressible=mean_err > incompressible_error,
    )


def compression_report(
    a: SparseMatrix,
    c: CompressedMatrix,
    block_rows: int = DEFAULT_BLOCK_ROWS,
    incompressible_error: float = INCOMPRESSIBLE_ERROR,
) -> CompressionReport:
    """Compare ``c`` against the matrix it was built from."""
    if c.shape != a.shape:
        raise DimensionMismatchError("compressed operator rows", a.nrows, c.shape[0])
    errors: list[float] = []
    for start in range(0, a.nrows, block_rows):
        stop = min(start + block_rows, a.nrows)
        exact = a.dense_rows(start, stop)
        approx = c.reconstruct_rows(start, stop)
        norms = np.linalg.norm(exact, axis=1)
        diffs = np.linalg.norm(approx - exact, axis=1)
        errors += [float(d / s) if s > 0 else float(d) for d, s in zip(diffs, norms, strict=True)]
    return _summarize(a.nnz, c.nnz, a.serialized_nbytes, c.m.serialized_nbytes, errors, incompressible_error)


def merge_reports(
    parts: Sequence[CompressionReport], incompressible_error: float = INCOMPRESSIBLE_ERROR
) -> CompressionReport:
    """Report for the row-wise concatenation of the operators behind ``parts``."""
    if not parts:
        raise ValueError("no reports to merge")
    shared = SPR_HEADER_BYTES * (len(parts) - 1)
    return _summarize(
        sum(p.source_nnz for p in parts),
        sum(p.compressed_nnz for p in parts),
        sum(p.source_bytes for p in parts) - shared,
        sum(p.compressed_bytes for p in parts) - shared,
        [e for p in parts for e in p.row_errors],
        incompressible_error,
    )


def stack_compressed(parts: Sequence[CompressedMatrix]) -> CompressedMatrix:
    """Concatenate compressed row blocks that share one transform and policy."""
    if not parts:
        raise ValueError("stack_compressed needs at least one block")
    first = parts[0]
    for j, p in enumerate(parts):
        if p.spec != first.spec or p.policy != first.policy:
            raise ValueError(f"block {j} uses a different transform or threshold policy")
    return CompressedMatrix(
        m=vstack([p.m for p in parts]),
        spec=first.spec,
        policy=first.policy,
        source_nnz=None if any(p.source_nnz is None for p in parts) else sum(p.source_nnz or 0 for p in parts),
    )


# --------- SPC1 files ---------
def encode_compressed(c: CompressedMatrix) -> bytes:
    """SPC1 bytes: framed JSON header followed by the SPR1 encoding of ``M``."""
    return encode_framed(SPC_MAGIC, c.header(), encode_sparse(c.m))


def decode_compressed(buf: bytes) -> CompressedMatrix:
    """Parse SPC1 bytes."""
    header, pos = decode_framed(buf, SPC_MAGIC)
    if not isinstance(header, CompressionSidecarV1):
        raise FormatError(f"expected a wavelet header, found kind={header.kind!r}", pos)
    m, consumed = decode_sparse(buf[pos:], base_offset=pos)
    if pos + consumed != len(buf):
        raise FormatError("trailing bytes after compressed matrix", pos + consumed)
    if m.nrows != header.nrows or m.ncols != header.padded_ncols:
        raise FormatError(
            f"payload is {m.nrows}x{m.ncols}, header says {header.nrows}x{header.padded_ncols}", pos
        )
    return CompressedMatrix(
        m=m, spec=header.spec.for_length(header.ncols), policy=header.policy, source_nnz=header.source_nnz
    )


def write_compressed(c: CompressedMatrix, path: str | Path) -> None:
    Path(path).write_bytes(encode_compressed(c))
    logger.debug("wrote compressed operator %s to %s", c.shape, path)


def read_compressed(path: str | Path) -> CompressedMatrix:
    return decode_compressed(Path(path).read_bytes())
