"""The matrix-free operator protocol every backend implements.

Anything exposing ``shape``, ``apply`` (``x -> A x``) and ``apply_transpose``
(``y -> A^T y``) can be solved against, sampled by the randomized SVD and compared
by the analysis helpers: raw sparse matrices, wavelet-compressed matrices, low-rank
factors, blocked mixtures and plain dense arrays.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from aind_compressed_regularization.errors import DimensionMismatchError, NonFiniteError

FloatArray = NDArray[np.float64]


@runtime_checkable
class MatVecOperator(Protocol):
    """Matrix-free linear map ``R^n -> R^m``."""

    @property
    def shape(self) -> tuple[int, int]: ...

    def apply(self, x: FloatArray) -> FloatArray: ...

    def apply_transpose(self, y: FloatArray) -> FloatArray: ...


def as_vector(x: ArrayLike, length: int | None = None, what: str = "vector") -> FloatArray:
    """
    Coerce ``x`` to a finite float64 vector, optionally of a required length.

    Raises
    ------
    DimensionMismatchError
        If ``length`` is given and ``len(x) != length``.
    NonFiniteError
        If ``x`` contains NaN or Inf.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionMismatchError(what, length, arr.shape[0])
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return arr


class DenseOperator:
    """
    Adapter exposing a dense array through :class:`MatVecOperator`.

    Used for small problems and as the exact reference in comparisons.
    """

    def __init__(self, matrix: ArrayLike) -> None:
        a = np.asarray(matrix, dtype=np.float64)
        if a.ndim != 2 or 0 in a.shape:
            raise ValueError(f"dense operator needs a non-empty 2-D array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("dense operator contains NaN or Inf")
        self.matrix = a

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.matrix.shape[0]), int(self.matrix.shape[1]))

    def apply(self, x: FloatArray) -> FloatArray:
        return self.matrix @ as_vector(x, self.shape[1], "x")

    def apply_transpose(self, y: FloatArray) -> FloatArray:
        return self.matrix.T @ as_vector(y, self.shape[0], "y")

    def apply_normal(self, x: FloatArray) -> FloatArray:
        return self.apply_transpose(self.apply(x))


def apply_normal(op: MatVecOperator, x: FloatArray) -> FloatArray:
    """``A^T A x``, using the operator's fused version when it has one."""
    fused = getattr(op, "apply_normal", None)
    if fused is not None:
        return np.asarray(fused(x), dtype=np.float64)
    return op.apply_transpose(op.apply(x))


def densify(op: MatVecOperator) -> FloatArray:
    """Dense ``m x n`` matrix of ``op`` built column by column from basis vectors."""
    m, n = op.shape
    out = np.empty((m, n), dtype=np.float64)
    e = np.zeros(n, dtype=np.float64)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = op.apply(e)
        e[j] = 0.0
    return out


def densify_transpose(op: MatVecOperator) -> FloatArray:
    """Dense ``n x m`` matrix of ``op.apply_transpose``."""
    m, n = op.shape
    out = np.empty((n, m), dtype=np.float64)
    e = np.zeros(m, dtype=np.float64)
    for i in range(m):
        e[i] = 1.0
        out[:, i] = op.apply_transpose(e)
        e[i] = 0.0
    return out
