"""
Randomized rank-k SVD through the small ``B B^T`` eigenproblem.

Pipeline: sample ``Y = A G`` with a seeded Gaussian ``G``; orthonormalize ``Y``
twice to get ``Q``; assemble ``S = Q^T A A^T Q`` column by column; diagonalize
``S = U~ D U~^T``; then ``U_k = Q U~``, ``Sigma_k = sqrt(D)``,
``v_i = A^T u_i / sigma_i``. Only ``apply``/``apply_transpose`` of the operator
are used, so raw, compressed, low-rank and blocked operators all work.

Going through ``B B^T`` squares the condition number. Singular values below
``sigma_cutoff * sigma_1`` are dropped and an :class:`IllConditionedWarning`
is issued whenever accuracy is in doubt.
"""

from __future__ import annotations

import logging
import math
import warnings
from pathlib import Path
from typing import Any, Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from aind_compressed_regularization.errors import (
    DimensionMismatchError,
    FormatError,
    IllConditionedWarning,
    NotSymmetricError,
    NumericalError,
    RankDeficiencyError,
)
from aind_compressed_regularization.linear_operator import FloatArray, MatVecOperator, as_vector
from aind_compressed_regularization.rng import STREAM_RANGE_SAMPLES, gaussian_matrix
from aind_compressed_regularization.sidecar import LowRankSidecarV1, decode_framed, encode_framed

logger = logging.getLogger(__name__)

LRK_MAGIC = b"LRK1"
RANK_TOL = 1e-12
EIG_TOL = 1e-12
SYMMETRY_TOL = 1e-10
ORTHONORMALITY_TOL = 1e-8
SQUARED_CONDITION_LIMIT = 1e-12


def _as_matrix(v: Any) -> np.ndarray:
    arr = np.array(v, dtype=np.float64, order="F", copy=True)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN or Inf")
    return arr


class LowRankSVD(BaseModel):
    """
    Factors of ``A_k = U diag(sigma) V^T``.

    Attributes
    ----------
    kind : Literal["lowrank"]
        Block discriminator when used inside a blocked operator
    u : numpy.ndarray
        ``m x k`` left singular vectors
    sigma : numpy.ndarray
        ``k`` singular values, descending, all positive
    v : numpy.ndarray
        ``n x k`` right singular vectors
    seed : int | None
        Seed of the range sampling, None for oracle factors
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["lowrank"] = "lowrank"
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    seed: int | None = None

    @field_validator("u", "v", mode="before")
    @classmethod
    def _factor(cls, v: Any) -> np.ndarray:
        return _as_matrix(v)

    @field_validator("sigma", mode="before")
    @classmethod
    def _singular_values(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ValueError("sigma must be one-dimensional")
        return arr

    @model_validator(mode="after")
    def _check_factors(self) -> LowRankSVD:
        k = self.sigma.shape[0]
        if k == 0:
            raise ValueError("at least one singular triplet is required")
        if self.u.shape[1] != k or self.v.shape[1] != k:
            raise ValueError(f"u is {self.u.shape}, v is {self.v.shape}, but sigma has {k} entries")
        if not np.all(np.isfinite(self.sigma)) or np.any(self.sigma <= 0):
            raise ValueError("sigma entries must be finite and positive")
        if np.any(np.diff(self.sigma) > 0):
            raise ValueError("sigma must be sorted in descending order")
        return self

    @classmethod
    def from_dense_svd(cls, matrix: ArrayLike, k: int) -> LowRankSVD:
        """Exact truncated factors of a dense matrix (reference path)."""
        a = np.asarray(matrix, dtype=np.float64)
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        if not 1 <= k <= s.shape[0]:
            raise ValueError(f"k must be in 1..{s.shape[0]}, got {k}")
        return cls(u=u[:, :k], sigma=s[:k], v=vt[:k].T)

    @property
    def k(self) -> int:
        return int(self.sigma.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.u.shape[0]), int(self.v.shape[0]))

    def truncate(self, k: int) -> LowRankSVD:
        """Leading ``k`` triplets."""
        if not 1 <= k <= self.k:
            raise ValueError(f"k must be in 1..{self.k}, got {k}")
        return LowRankSVD(u=self.u[:, :k], sigma=self.sigma[:k], v=self.v[:, :k], seed=self.seed)

    def orthonormality_defect(self) -> float:
        """``max(|U^T U - I|_max, |V^T V - I|_max)``."""
        eye = np.eye(self.k)
        return float(max(np.abs(self.u.T @ self.u - eye).max(), np.abs(self.v.T @ self.v - eye).max()))

    def to_dense(self) -> FloatArray:
        return (self.u * self.sigma) @ self.v.T

    def same_as(self, other: LowRankSVD) -> bool:
        """Bit-exact equality of the factors."""
        return (
            self.seed == other.seed
            and self.u.shape == other.u.shape
            and self.v.shape == other.v.shape
            and self.u.tobytes() == other.u.tobytes()
            and self.sigma.tobytes() == other.sigma.tobytes()
            and self.v.tobytes() == other.v.tobytes()
        )

    def apply(self, x: FloatArray) -> FloatArray:
        return lr_apply(self, x)

    def apply_transpose(self, y: FloatArray) -> FloatArray:
        return lr_apply_transpose(self, y)

    def apply_normal(self, x: FloatArray) -> FloatArray:
        return lr_apply_normal(self, x)


class RangeBasis(BaseModel):
    """
    Orthonormal basis of the sampled range.

    Attributes
    ----------
    q : numpy.ndarray
        ``m x l`` matrix with orthonormal columns
    seed : int | None
        Seed used to draw the samples
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    q: np.ndarray
    seed: int | None = None

    @field_validator("q", mode="before")
    @classmethod
    def _basis(cls, v: Any) -> np.ndarray:
        return _as_matrix(v)

    @property
    def k(self) -> int:
        return int(self.q.shape[1])

    def orthonormality_defect(self) -> float:
        return float(np.abs(self.q.T @ self.q - np.eye(self.k)).max())


# --------- factored products ---------
def lr_apply(f: LowRankSVD, x: ArrayLike) -> FloatArray:
    """``U (Sigma (V^T x))``."""
    v = as_vector(x, f.shape[1], "x")
    return f.u @ (f.sigma * (f.v.T @ v))


def lr_apply_transpose(f: LowRankSVD, y: ArrayLike) -> FloatArray:
    """``V (Sigma (U^T y))``."""
    w = as_vector(y, f.shape[0], "y")
    return f.v @ (f.sigma * (f.u.T @ w))


def lr_apply_normal(f: LowRankSVD, x: ArrayLike) -> FloatArray:
    """``V (Sigma^2 (V^T x))``; the left factor is never touched."""
    v = as_vector(x, f.shape[1], "x")
    return f.v @ (f.sigma**2 * (f.v.T @ v))


# --------- pipeline stages ---------
def sample_range(op: MatVecOperator, k: int, seed: int, oversample: int = 0) -> FloatArray:
    """
    ``Y = A G`` for a seeded ``n x (k + oversample)`` Gaussian ``G``.

    Raises
    ------
    ValueError
        If ``k`` is outside ``1..min(m, n)`` or ``oversample`` is negative.
    """
    m, n = op.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k must be in 1..{min(m, n)}, got {k}")
    if oversample < 0:
        raise ValueError(f"oversample must be >= 0, got {oversample}")
    width = min(k + oversample, min(m, n))
    g = gaussian_matrix(n, width, seed, STREAM_RANGE_SAMPLES)
    y = np.empty((m, width), dtype=np.float64, order="F")
    for j in range(width):
        y[:, j] = op.apply(g[:, j])
    return y


def _mgs_sweep(q: FloatArray) -> None:
    """One modified Gram-Schmidt sweep, in place."""
    for j in range(q.shape[1]):
        col = q[:, j]
        before = float(np.linalg.norm(col))
        for i in range(j):
            col -= (q[:, i] @ col) * q[:, i]
        after = float(np.linalg.norm(col))
        if before == 0.0 or after <= RANK_TOL * before:
            raise RankDeficiencyError(
                f"sample column {j} is numerically dependent on the previous ones "
                f"(norm {after:.3e} after projection); try a smaller k"
            )
        col /= after


def orthogonalize_twice(y: ArrayLike, seed: int | None = None, passes: int = 2) -> RangeBasis:
    """
    Orthonormalize the columns of ``y`` with repeated full MGS sweeps.

    Parameters
    ----------
    y : array_like
        ``m x l`` sample matrix
    seed : int | None
        Recorded on the returned basis
    passes : int
        Number of full sweeps; 2 restores orthogonality lost in the first

    Raises
    ------
    RankDeficiencyError
        If a column's norm after projection is at most ``1e-12`` of its norm before.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    q = np.array(y, dtype=np.float64, order="F", copy=True)
    if q.ndim != 2 or q.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D sample matrix, got shape {q.shape}")
    if q.shape[1] > q.shape[0]:
        raise RankDeficiencyError(f"{q.shape[1]} samples cannot be independent in dimension {q.shape[0]}")
    for _ in range(passes):
        _mgs_sweep(q)
    return RangeBasis(q=q, seed=seed)


def build_bbt(op: MatVecOperator, q: RangeBasis, symmetrize: bool = True) -> FloatArray:
    """
    ``S = Q^T A A^T Q``, one column per pair of operator products.

    With ``symmetrize`` the result is replaced by ``(S + S^T) / 2``.
    """
    m = op.shape[0]
    if q.q.shape[0] != m:
        raise DimensionMismatchError("range basis rows", m, q.q.shape[0])
    k = q.k
    s = np.empty((k, k), dtype=np.float64)
    for j in range(k):
        s[:, j] = q.q.T @ op.apply(op.apply_transpose(q.q[:, j]))
    if symmetrize:
        s = 0.5 * (s + s.T)
    return s


def symmetric_eig(s: ArrayLike, tol: float = EIG_TOL, max_sweeps: int = 60) -> tuple[FloatArray, FloatArray]:
    """
    Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Returns
    -------
    eigenvalues : numpy.ndarray
        Descending
    eigenvectors : numpy.ndarray
        Orthonormal columns, matching order

    Raises
    ------
    NotSymmetricError
        If ``|s - s^T|_max`` exceeds ``1e-10 * |s|_max``.
    """
    a = np.array(s, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = float(np.abs(a).max()) if a.size else 0.0
    if float(np.abs(a - a.T).max()) > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
        raise NotSymmetricError("matrix is not symmetric")
    n = a.shape[0]
    vecs = np.eye(n)
    target = tol * float(np.linalg.norm(a))

    for sweep in range(max_sweeps):
        # direct norm; |a|^2 - |diag|^2 cancels down to a floor above the target
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= target:
            logger.debug("jacobi converged after %d sweeps (off-diagonal %.3e)", sweep, off)
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = vecs[:, p].copy(), vecs[:, q].copy()
                vecs[:, p] = c * vp - sn * vq
                vecs[:, q] = sn * vp + c * vq
    else:
        raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")

    order = np.argsort(-np.diag(a), kind="stable")
    return np.diag(a)[order].copy(), vecs[:, order]


def randomized_lowrank_svd(
    op: MatVecOperator,
    k: int,
    seed: int,
    sigma_cutoff: float = 1e-8,
    oversample: int = 0,
    passes: int = 2,
) -> LowRankSVD:
    """
    Rank-``k`` factors of ``op`` from ``k`` (+ ``oversample``) range samples.

    Parameters
    ----------
    op : MatVecOperator
        Operator to approximate
    k : int
        Target rank, ``1 <= k <= min(m, n)``
    seed : int
        Seed of the Gaussian sample stream
    sigma_cutoff : float
        Relative floor; triplets with ``sigma_i < sigma_cutoff * sigma_1`` are dropped
    oversample : int
        Extra samples, discarded after the eigen-decomposition
    passes : int
        Gram-Schmidt sweeps

    Returns
    -------
    LowRankSVD
        Factors with at most ``k`` triplets

    Raises
    ------
    RankDeficiencyError
        If the samples are dependent or every eigenvalue falls below the cutoff.
    """
    if not 0 < sigma_cutoff < 1:
        raise ValueError(f"sigma_cutoff must be in (0, 1), got {sigma_cutoff}")
    y = sample_range(op, k, seed, oversample)
    basis = orthogonalize_twice(y, seed=seed, passes=passes)
    evals, evecs = symmetric_eig(build_bbt(op, basis))

    if evals[0] <= 0:
        raise RankDeficiencyError("B B^T has no positive eigenvalue; the operator looks like zero")
    sigma_all = np.sqrt(np.clip(evals, 0.0, None))
    keep = np.flatnonzero((evals > 0) & (sigma_all >= sigma_cutoff * sigma_all[0]))[:k]
    if keep.size < k:
        warnings.warn(
            f"effective rank reduced from {k} to {keep.size}: singular values below "
            f"{sigma_cutoff:g} * sigma_1 were discarded",
            IllConditionedWarning,
            stacklevel=2,
        )
    elif evals[keep[-1]] / evals[0] < SQUARED_CONDITION_LIMIT:
        warnings.warn(
            f"sigma_k^2 / sigma_1^2 = {evals[keep[-1]] / evals[0]:.1e}: trailing singular values are "
            "inaccurate because B B^T squares the condition number",
            IllConditionedWarning,
            stacklevel=2,
        )

    sigma = sigma_all[keep]
    u = basis.q @ evecs[:, keep]
    v = np.empty((op.shape[1], keep.size), dtype=np.float64, order="F")
    for i in range(keep.size):
        v[:, i] = op.apply_transpose(u[:, i]) / sigma[i]

    factors = LowRankSVD(u=u, sigma=sigma, v=v, seed=seed)
    defect = factors.orthonormality_defect()
    if defect > ORTHONORMALITY_TOL:
        warnings.warn(
            f"factor orthonormality defect {defect:.1e} exceeds {ORTHONORMALITY_TOL:g}",
            IllConditionedWarning,
            stacklevel=2,
        )
    logger.info(
        "randomized SVD: k=%d sigma_1=%.4e sigma_k=%.4e seed=%d", factors.k, sigma[0], sigma[-1], seed
    )
    return factors


# --------- LRK1 files ---------
def encode_lowrank(f: LowRankSVD) -> bytes:
    """LRK1 bytes: framed JSON header, then ``U`` and ``V`` column-major."""
    m, n = f.shape
    header = LowRankSidecarV1(m=m, n=n, k=f.k, seed=f.seed, sigma=[float(s) for s in f.sigma])
    payload = np.asfortranarray(f.u).astype("<f8").tobytes(order="F") + np.asfortranarray(f.v).astype(
        "<f8"
    ).tobytes(order="F")
    return encode_framed(LRK_MAGIC, header, payload)


def decode_lowrank(buf: bytes) -> LowRankSVD:
    """Parse LRK1 bytes."""
    header, pos = decode_framed(buf, LRK_MAGIC)
    if not isinstance(header, LowRankSidecarV1):
        raise FormatError(f"expected a low-rank header, found kind={header.kind!r}", pos)
    m, n, k = header.m, header.n, header.k
    need = 8 * k * (m + n)
    if len(buf) - pos < need:
        raise FormatError(f"truncated factors: need {need} bytes, {len(buf) - pos} available", len(buf))
    if len(buf) - pos > need:
        raise FormatError("trailing bytes after factors", pos + need)
    u = np.frombuffer(buf, dtype="<f8", count=m * k, offset=pos).reshape((m, k), order="F")
    v = np.frombuffer(buf, dtype="<f8", count=n * k, offset=pos + 8 * m * k).reshape((n, k), order="F")
    try:
        return LowRankSVD(u=u, sigma=np.asarray(header.sigma), v=v, seed=header.seed)
    except ValueError as exc:
        raise FormatError(f"invalid factors: {exc}", pos) from exc


def write_lowrank(f: LowRankSVD, path: str | Path) -> None:
    Path(path).write_bytes(encode_lowrank(f))


def read_lowrank(path: str | Path) -> LowRankSVD:
    return decode_lowrank(Path(path).read_bytes())
