"""Tests for CSR storage, exact kernels and the SPR1/VEC1 formats."""

import struct
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import sparse

from aind_compressed_regularization.errors import DimensionMismatchError, FormatError, NonFiniteError
from aind_compressed_regularization.sparse_core import (
    SparseMatrix,
    decode_sparse,
    encode_sparse,
    read_sparse,
    read_sparse_blocks,
    read_vector,
    spmv,
    spmv_transpose,
    vstack,
    write_sparse,
    write_vector,
)

# byte offsets inside the SPR1 encoding of the 2x3 example
COLS_AT = 28 + 2 * 8
VALUES_AT = COLS_AT + 3 * 4


@pytest.fixture
def small() -> SparseMatrix:
    """2x3 matrix with rows {(0: 1.0), (2: 2.0)} and {(1: 3.0)}."""
    return SparseMatrix(nrows=2, ncols=3, row_nnz=[2, 1], col_indices=[0, 2, 1], values=[1.0, 2.0, 3.0])


def random_sparse(m: int, n: int, seed: int, density: float = 0.2) -> SparseMatrix:
    rng = np.random.default_rng(seed)
    return SparseMatrix.from_scipy(sparse.random(m, n, density=density, random_state=rng, format="csr"))


class TestConstruction:
    """Test SparseMatrix invariants."""

    def test_valid_matrix(self, small: SparseMatrix) -> None:
        """Test fields are stored with the fixed dtypes."""
        assert small.shape == (2, 3)
        assert small.nnz == 3
        assert small.row_nnz.dtype == np.uint64
        assert small.col_indices.dtype == np.uint32
        assert small.values.dtype == np.float64
        np.testing.assert_array_equal(small.indptr, [0, 2, 3])

    def test_rejects_unordered_columns(self) -> None:
        """Test columns must increase within a row."""
        with pytest.raises(ValidationError, match="strictly increasing"):
            SparseMatrix(nrows=1, ncols=3, row_nnz=[2], col_indices=[2, 0], values=[1.0, 2.0])

    def test_rejects_duplicate_columns(self) -> None:
        """Test duplicate columns within a row."""
        with pytest.raises(ValidationError, match="strictly increasing"):
            SparseMatrix(nrows=1, ncols=3, row_nnz=[2], col_indices=[1, 1], values=[1.0, 2.0])

    def test_allows_decrease_across_rows(self) -> None:
        """Test that a new row may restart at a lower column."""
        m = SparseMatrix(nrows=2, ncols=3, row_nnz=[1, 1], col_indices=[2, 0], values=[1.0, 2.0])
        np.testing.assert_array_equal(m.to_dense(), [[0.0, 0.0, 1.0], [2.0, 0.0, 0.0]])

    def test_rejects_column_out_of_range(self) -> None:
        """Test column indices must be below ncols."""
        with pytest.raises(ValidationError, match="out of range"):
            SparseMatrix(nrows=1, ncols=2, row_nnz=[1], col_indices=[2], values=[1.0])

    def test_rejects_count_mismatch(self) -> None:
        """Test sum(row_nnz) must match the index and value arrays."""
        with pytest.raises(ValidationError, match="sum\\(row_nnz\\)=2"):
            SparseMatrix(nrows=1, ncols=3, row_nnz=[2], col_indices=[0], values=[1.0])

    def test_rejects_empty_dimensions(self) -> None:
        """Test zero rows are rejected."""
        with pytest.raises(ValidationError, match="dimensions must be positive"):
            SparseMatrix(nrows=0, ncols=3, row_nnz=[], col_indices=[], values=[])

    def test_rejects_non_finite_values(self) -> None:
        """Test NaN values are rejected."""
        with pytest.raises(ValidationError, match="values must be finite"):
            SparseMatrix(nrows=1, ncols=1, row_nnz=[1], col_indices=[0], values=[np.nan])

    def test_from_dense_drops_zeros(self) -> None:
        """Test from_dense keeps only nonzeros."""
        m = SparseMatrix.from_dense([[0.0, 1.5], [0.0, 0.0], [2.0, 0.0]])
        np.testing.assert_array_equal(m.row_nnz, [1, 0, 1])
        np.testing.assert_array_equal(m.col_indices, [1, 0])


class TestKernels:
    """Test spmv and spmv_transpose."""

    def test_identity(self) -> None:
        """Test identity products."""
        eye = SparseMatrix.from_dense(np.eye(3))
        np.testing.assert_array_equal(spmv(eye, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(spmv_transpose(eye, [4.0, 5.0, 6.0]), [4.0, 5.0, 6.0])

    def test_hand_expansion(self, small: SparseMatrix) -> None:
        """Test the 2x3 example by hand."""
        np.testing.assert_array_equal(spmv(small, [1.0, 1.0, 1.0]), [3.0, 3.0])
        np.testing.assert_array_equal(spmv_transpose(small, [1.0, 1.0]), [1.0, 3.0, 2.0])

    def test_matches_dense_oracle(self) -> None:
        """Test random 50x80 products against dense multiplication."""
        m = random_sparse(50, 80, seed=1)
        dense = m.to_dense()
        rng = np.random.default_rng(2)
        x, y = rng.standard_normal(80), rng.standard_normal(50)
        np.testing.assert_allclose(spmv(m, x), dense @ x, rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(spmv_transpose(m, y), dense.T @ y, rtol=1e-14, atol=1e-14)

    def test_adjoint_identity(self) -> None:
        """Test <Ax, y> == <x, A^T y>."""
        m = random_sparse(40, 30, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(10):
            x, y = rng.standard_normal(30), rng.standard_normal(40)
            lhs = float(spmv(m, x) @ y)
            rhs = float(x @ spmv_transpose(m, y))
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_dimension_mismatch(self, small: SparseMatrix) -> None:
        """Test wrong vector lengths name expected and actual sizes."""
        with pytest.raises(DimensionMismatchError, match="expected length 3, got 2"):
            spmv(small, [1.0, 1.0])
        with pytest.raises(DimensionMismatchError, match="expected length 2, got 3"):
            spmv_transpose(small, [1.0, 1.0, 1.0])

    def test_rejects_non_finite_vector(self, small: SparseMatrix) -> None:
        """Test NaN inputs never reach the kernel."""
        with pytest.raises(NonFiniteError):
            spmv(small, [1.0, np.inf, 0.0])


class TestVstack:
    """Test row-block concatenation."""

    def test_single_block(self, small: SparseMatrix) -> None:
        """Test vstack of one block is the block."""
        assert vstack([small]).same_as(small)

    def test_two_rows(self) -> None:
        """Test two 1x2 blocks stack in order."""
        top = SparseMatrix.from_dense([[1.0, 0.0]])
        bottom = SparseMatrix.from_dense([[0.0, 2.0]])
        np.testing.assert_array_equal(vstack([top, bottom]).to_dense(), [[1.0, 0.0], [0.0, 2.0]])

    def test_blockwise_matvec(self) -> None:
        """Test stacked products equal concatenated block products."""
        blocks = [random_sparse(5 + j, 12, seed=10 + j) for j in range(4)]
        stacked = vstack(blocks)
        x = np.random.default_rng(5).standard_normal(12)
        np.testing.assert_allclose(
            spmv(stacked, x), np.concatenate([spmv(b, x) for b in blocks]), rtol=1e-15, atol=1e-15
        )

    def test_mismatched_columns(self, small: SparseMatrix) -> None:
        """Test blocks must share ncols."""
        with pytest.raises(DimensionMismatchError, match="block 1 ncols"):
            vstack([small, SparseMatrix.from_dense([[1.0, 2.0]])])


class TestSprFormat:
    """Test the SPR1 codec."""

    def test_layout(self, small: SparseMatrix) -> None:
        """Test header and section layout byte by byte."""
        buf = encode_sparse(small)
        assert buf[:4] == b"SPR1"
        assert struct.unpack_from("<QQQ", buf, 4) == (2, 3, 3)
        assert struct.unpack_from("<QQ", buf, 28) == (2, 1)
        assert struct.unpack_from("<III", buf, COLS_AT) == (0, 2, 1)
        assert struct.unpack_from("<ddd", buf, VALUES_AT) == (1.0, 2.0, 3.0)
        assert len(buf) == small.serialized_nbytes

    def test_round_trip(self, small: SparseMatrix, tmp_path: Path) -> None:
        """Test write then read is bit-exact."""
        path = tmp_path / "a.spr"
        write_sparse(small, path)
        assert read_sparse(path).same_as(small)

    def test_round_trip_with_empty_rows(self, tmp_path: Path) -> None:
        """Test zero rows survive a round trip."""
        m = SparseMatrix.from_dense([[0.0, 0.0, 0.0], [1.0, 0.0, -2.5], [0.0, 0.0, 0.0]])
        path = tmp_path / "empty_rows.spr"
        write_sparse(m, path)
        back = read_sparse(path)
        assert back.same_as(m)
        np.testing.assert_array_equal(back.row_nnz, [0, 2, 0])

    def test_bad_magic(self, small: SparseMatrix) -> None:
        """Test the magic bytes are checked."""
        buf = b"XXXX" + encode_sparse(small)[4:]
        with pytest.raises(FormatError, match="bad magic") as info:
            decode_sparse(buf)
        assert info.value.offset == 0

    def test_nnz_mismatch(self, small: SparseMatrix) -> None:
        """Test a header nnz that disagrees with the row counts."""
        buf = bytearray(encode_sparse(small))
        struct.pack_into("<Q", buf, 20, 4)
        with pytest.raises(FormatError, match="differs from sum of row counts") as info:
            decode_sparse(bytes(buf))
        assert info.value.offset == 20

    def test_column_out_of_range(self, small: SparseMatrix) -> None:
        """Test column >= ncols reports the offending index offset."""
        buf = bytearray(encode_sparse(small))
        struct.pack_into("<I", buf, COLS_AT, 7)
        with pytest.raises(FormatError, match="column index 7 >= ncols 3") as info:
            decode_sparse(bytes(buf))
        assert info.value.offset == COLS_AT

    def test_unordered_columns(self, small: SparseMatrix) -> None:
        """Test the offset points at the first out-of-order index."""
        buf = bytearray(encode_sparse(small))
        struct.pack_into("<II", buf, COLS_AT, 2, 0)
        with pytest.raises(FormatError, match="not strictly increasing") as info:
            decode_sparse(bytes(buf))
        assert info.value.offset == COLS_AT + 4

    def test_non_finite_value(self, small: SparseMatrix) -> None:
        """Test NaN values are reported at their offset."""
        buf = bytearray(encode_sparse(small))
        struct.pack_into("<d", buf, VALUES_AT + 8, float("nan"))
        with pytest.raises(FormatError, match="non-finite value") as info:
            decode_sparse(bytes(buf))
        assert info.value.offset == VALUES_AT + 8

    def test_truncated(self, small: SparseMatrix) -> None:
        """Test every truncation point is a format error."""
        buf = encode_sparse(small)
        for cut in (0, 10, 28, COLS_AT + 2, VALUES_AT + 5, len(buf) - 1):
            with pytest.raises(FormatError, match="truncated"):
                decode_sparse(buf[:cut])

    def test_trailing_bytes(self, small: SparseMatrix, tmp_path: Path) -> None:
        """Test extra bytes after the matrix are rejected by read_sparse."""
        path = tmp_path / "trailing.spr"
        path.write_bytes(encode_sparse(small) + b"\x00")
        with pytest.raises(FormatError, match="trailing bytes"):
            read_sparse(path)

    def test_consumed_and_base_offset(self, small: SparseMatrix) -> None:
        """Test decode reports bytes consumed and shifts offsets by base_offset."""
        buf = encode_sparse(small)
        m, consumed = decode_sparse(buf + b"rest")
        assert consumed == len(buf)
        assert m.same_as(small)
        with pytest.raises(FormatError) as info:
            decode_sparse(b"XXXX" + buf[4:], base_offset=100)
        assert info.value.offset == 100


class TestBlockReads:
    """Test streaming row blocks from disk."""

    def test_blocks_reassemble(self, tmp_path: Path) -> None:
        """Test consecutive blocks stack back to the stored matrix."""
        m = random_sparse(10, 7, seed=6, density=0.4)
        path = tmp_path / "blocks.spr"
        write_sparse(m, path)
        blocks = list(read_sparse_blocks(path, 3))
        assert [b.nrows for b in blocks] == [3, 3, 3, 1]
        assert vstack(blocks).same_as(m)

    def test_block_rows_must_be_positive(self, small: SparseMatrix, tmp_path: Path) -> None:
        """Test block_rows <= 0 is rejected."""
        path = tmp_path / "a.spr"
        write_sparse(small, path)
        with pytest.raises(ValueError, match="block_rows must be positive"):
            next(read_sparse_blocks(path, 0))

    def test_invalid_block_is_format_error(self, small: SparseMatrix, tmp_path: Path) -> None:
        """Test invariant violations inside a block surface as FormatError."""
        buf = bytearray(encode_sparse(small))
        struct.pack_into("<I", buf, COLS_AT, 9)
        path = tmp_path / "bad.spr"
        path.write_bytes(bytes(buf))
        with pytest.raises(FormatError, match="invalid rows 0..0"):
            list(read_sparse_blocks(path, 1))


class TestVectors:
    """Test the VEC1 codec."""

    def test_round_trip(self, tmp_path: Path) -> None:
        """Test vectors round-trip bit-exactly."""
        x = np.array([1.0, -0.0, 3.5e-300, 2.0**60])
        path = tmp_path / "x.vec"
        write_vector(x, path)
        assert path.read_bytes()[:12] == b"VEC1" + struct.pack("<Q", 4)
        assert read_vector(path).tobytes() == x.tobytes()

    def test_bad_magic(self, tmp_path: Path) -> None:
        """Test the vector magic is checked."""
        path = tmp_path / "bad.vec"
        path.write_bytes(b"SPR1" + struct.pack("<Q", 0))
        with pytest.raises(FormatError, match="bad magic"):
            read_vector(path)
