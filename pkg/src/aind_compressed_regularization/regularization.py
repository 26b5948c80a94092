"""
Tikhonov and Laplacian-smoothed least-squares solvers.

Every scheme ends in the same normal system

    (N + lambda1 I + lambda2 L^T L) x = rhs

and differs only in ``N`` and ``rhs``:

========  ===========================  ====================================
scheme    N                            rhs
========  ===========================  ====================================
true      A^T A                        A^T b
x1        V Sigma^2 V^T                V Sigma U^T b
x1hat     V Sigma^2 V^T                A^T b (lambda1 scaled by a multiplier)
x2        sum_j P_j^T P_j              sum_j P_j^T U_j^T b_j, P_j = U_j^T A_j
x3        solved in the k-dim basis    Sigma U^T b, x = V y
========  ===========================  ====================================

CG runs on the first four; ``x3`` factors a dense ``k x k`` matrix. ISTA is
provided for the l1-penalized variant.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, Literal

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from scipy import sparse

from aind_compressed_regularization.errors import (
    DimensionMismatchError,
    DivergenceError,
    IndefiniteOperatorError,
    NonFiniteError,
    NumericalError,
    SingularSystemError,
)
from aind_compressed_regularization.linear_operator import FloatArray, MatVecOperator, apply_normal, as_vector
from aind_compressed_regularization.lowrank_svd import LowRankSVD, lr_apply_normal, lr_apply_transpose
from aind_compressed_regularization.wavelet import soft_threshold

logger = logging.getLogger(__name__)

OUTLIER_THRESHOLD = 3.0
DIVERGENCE_WINDOW = 10

Scheme = Literal["true", "x1", "x1hat", "x2", "x3", "ista"]


class RegConfig(BaseModel):
    """
    Regularization weights and CG controls.

    Attributes
    ----------
    lambda1 : float
        Weight of ``|x|^2``
    lambda2 : float
        Weight of ``|L x|^2``; needs a :class:`LaplacianOperator` at solve time
    max_iters : int
        CG iteration cap
    cg_tol : float
        Stop when ``|r| <= cg_tol * |rhs|``
    outlier_checkpoints : tuple[int, ...]
        Iterations after which the outlier mask is recomputed
    hat_lambda_multiplier : float
        Factor applied to ``lambda1`` by the ``x1hat`` scheme
    allow_unregularized : bool
        Permit ``lambda1 == lambda2 == 0``
    """

    model_config = ConfigDict(frozen=True)

    lambda1: float = 1.0
    lambda2: float = 0.0
    max_iters: int = 500
    cg_tol: float = 1e-8
    outlier_checkpoints: tuple[int, ...] = (5, 25)
    hat_lambda_multiplier: float = 1.0
    allow_unregularized: bool = False

    @model_validator(mode="after")
    def _check_weights(self) -> RegConfig:
        for name in ("lambda1", "lambda2"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.lambda1 == 0 and self.lambda2 == 0 and not self.allow_unregularized:
            raise ValueError("lambda1 and lambda2 are both 0; set allow_unregularized=True for an unregularized solve")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (0 < self.cg_tol < 1):
            raise ValueError(f"cg_tol must be in (0, 1), got {self.cg_tol}")
        if any(c < 1 for c in self.outlier_checkpoints):
            raise ValueError("outlier checkpoints are 1-based iteration numbers")
        if not (math.isfinite(self.hat_lambda_multiplier) and self.hat_lambda_multiplier > 0):
            raise ValueError("hat_lambda_multiplier must be finite and > 0")
        return self


class LaplacianOperator(BaseModel):
    """
    Five-point graph Laplacian on a ``rows x cols`` grid with zero-flux boundaries.

    Unknowns are numbered row-major. Interior rows carry ``-4`` on the diagonal
    and ``+1`` for each neighbour; every row sums to zero.
    """

    model_config = ConfigDict(frozen=True)

    grid_shape: tuple[int, int]
    stencil: Literal["five_point"] = "five_point"
    boundary: Literal["neumann"] = "neumann"

    _matrix: sparse.csr_matrix = PrivateAttr()

    @field_validator("grid_shape")
    @classmethod
    def _positive(cls, v: tuple[int, int]) -> tuple[int, int]:
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError(f"grid_shape must be positive, got {v}")
        return v

    def model_post_init(self, __context: Any) -> None:
        rows, cols = self.grid_shape
        self._matrix = sparse.csr_matrix(
            sparse.kron(sparse.identity(rows), _second_difference(cols))
            + sparse.kron(_second_difference(rows), sparse.identity(cols))
        )

    @property
    def size(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size, self.size)

    @property
    def matrix(self) -> sparse.csr_matrix:
        return self._matrix

    def apply(self, x: FloatArray) -> FloatArray:
        return np.asarray(self._matrix @ as_vector(x, self.size, "x"), dtype=np.float64)

    def apply_transpose(self, y: FloatArray) -> FloatArray:
        return self.apply(y)

    def apply_gram(self, x: FloatArray) -> FloatArray:
        """``L^T L x``."""
        return self.apply(self.apply(x))


def _second_difference(n: int) -> sparse.csr_matrix:
    """1-D ``[1, -2, 1]`` with reflecting ends."""
    if n == 1:
        return sparse.csr_matrix((1, 1))
    diag = np.full(n, -2.0)
    diag[0] = diag[-1] = -1.0
    off = np.ones(n - 1)
    return sparse.csr_matrix(sparse.diags([off, diag, off], [-1, 0, 1]))


class IterationRecord(BaseModel):
    """One row of a solve history."""

    iteration: int
    norm: float
    chi2: float | None = None
    cg_residual: float | None = None
    objective: float | None = None
    support: int | None = None


class SolveReport(BaseModel):
    """
    Result and history of one solve.

    Attributes
    ----------
    scheme : Scheme
        Which system was solved
    solution : numpy.ndarray
        Final iterate
    history : list[IterationRecord]
        Per-iteration solution norm, chi^2 and relative CG residual
    outlier_mask : numpy.ndarray | None
        Data rows flagged at the last checkpoint
    converged : bool
        Tolerance reached before the iteration cap
    iterations : int
        Iterations performed
    config : RegConfig | None
        Configuration echo
    reduced_solution : numpy.ndarray | None
        ``y`` of the ``k x k`` system (``x3`` only)
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    scheme: Scheme
    solution: np.ndarray
    history: list[IterationRecord] = Field(default_factory=list)
    outlier_mask: np.ndarray | None = None
    converged: bool = True
    iterations: int = 0
    config: RegConfig | None = None
    reduced_solution: np.ndarray | None = None

    @model_validator(mode="after")
    def _check_finite(self) -> SolveReport:
        if not np.all(np.isfinite(self.solution)):
            raise ValueError("solution contains NaN or Inf")
        for rec in self.history:
            if not math.isfinite(rec.norm):
                raise ValueError(f"non-finite norm at iteration {rec.iteration}")
        return self

    @property
    def effective_rows(self) -> int | None:
        """``P``: data rows not flagged as outliers."""
        if self.outlier_mask is None:
            return None
        return int(self.outlier_mask.size - np.count_nonzero(self.outlier_mask))

    @property
    def final_chi2(self) -> float | None:
        return self.history[-1].chi2 if self.history else None


# --------- chi^2 ---------
def update_outliers(residual: ArrayLike, threshold: float = OUTLIER_THRESHOLD) -> np.ndarray:
    """Fresh mask of residual entries beyond ``threshold`` standard errors (unit errors assumed)."""
    r = as_vector(residual, what="residual")
    return np.abs(r) > threshold


def chi_squared(residual: ArrayLike, outlier_mask: ArrayLike | None = None) -> float:
    """
    ``(1/P) sum r_k^2`` over rows not marked as outliers.

    Raises
    ------
    NumericalError
        If every row is an outlier (``P == 0``).
    """
    r = as_vector(residual, what="residual")
    mask = np.zeros(r.shape[0], dtype=bool) if outlier_mask is None else np.asarray(outlier_mask, dtype=bool)
    if mask.shape != r.shape:
        raise DimensionMismatchError("outlier mask", r.shape[0], mask.shape[0])
    kept = r[~mask]
    if kept.size == 0:
        raise NumericalError("every row is flagged as an outlier; chi^2 is undefined (P == 0)")
    return float(kept @ kept / kept.size)


# --------- CG on the regularized normal system ---------
def _regularized(
    normal_op: Callable[[FloatArray], FloatArray], cfg: RegConfig, laplacian: LaplacianOperator | None, n: int
) -> Callable[[FloatArray], FloatArray]:
    if cfg.lambda2 > 0:
        if laplacian is None:
            raise ValueError("lambda2 > 0 needs a LaplacianOperator")
        if laplacian.size != n:
            raise DimensionMismatchError("laplacian grid size", n, laplacian.size)

    def k_op(x: FloatArray) -> FloatArray:
        out = normal_op(x) + cfg.lambda1 * x
        if cfg.lambda2 > 0:
            assert laplacian is not None
            out = out + cfg.lambda2 * laplacian.apply_gram(x)
        return out

    return k_op


def cg_normal_solve(
    normal_op: Callable[[FloatArray], FloatArray],
    rhs: ArrayLike,
    cfg: RegConfig,
    laplacian: LaplacianOperator | None = None,
    residual_op: MatVecOperator | None = None,
    data: ArrayLike | None = None,
    scheme: Scheme = "true",
) -> SolveReport:
    """
    Conjugate gradients on ``(N + lambda1 I + lambda2 L^T L) x = rhs``.

    Parameters
    ----------
    normal_op : callable
        ``x -> N x`` for a symmetric positive semi-definite ``N``
    rhs : array_like
        Right-hand side
    cfg : RegConfig
        Weights, tolerance and checkpoints
    laplacian : LaplacianOperator | None
        Required when ``cfg.lambda2 > 0``
    residual_op, data : optional
        When both are given, chi^2 of ``residual_op x - data`` is recorded each
        iteration and outliers are re-flagged at ``cfg.outlier_checkpoints``
    scheme : Scheme
        Tag stored on the report

    Raises
    ------
    IndefiniteOperatorError
        If ``p^T K p <= 0``.
    NonFiniteError
        If an iterate becomes NaN or Inf.
    """
    b = as_vector(rhs, what="rhs")
    n = b.shape[0]
    k_op = _regularized(normal_op, cfg, laplacian, n)
    track = residual_op is not None and data is not None
    d = as_vector(data, residual_op.shape[0], "data") if track and residual_op is not None else None

    x = np.zeros(n, dtype=np.float64)
    rhs_norm = float(np.linalg.norm(b))
    if rhs_norm == 0.0:
        logger.info("%s: zero right-hand side, returning x = 0", scheme)
        return SolveReport(scheme=scheme, solution=x, converged=True, iterations=0, config=cfg)

    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    mask: np.ndarray | None = np.zeros(d.shape[0], dtype=bool) if d is not None else None
    history: list[IterationRecord] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        kp = k_op(p)
        curvature = float(p @ kp)
        if not math.isfinite(curvature):
            raise NonFiniteError(f"non-finite curvature at CG iteration {it}")
        if curvature <= 0:
            raise IndefiniteOperatorError(it, curvature)
        alpha = rr / curvature
        x += alpha * p
        r -= alpha * kp
        rr_new = float(r @ r)
        if not math.isfinite(rr_new) or not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite iterate at CG iteration {it}")

        chi2 = None
        if d is not None and residual_op is not None:
            res = residual_op.apply(x) - d
            if it in cfg.outlier_checkpoints:
                fresh = update_outliers(res)
                if fresh.all():
                    logger.warning("%s: iteration %d would flag every row; keeping the previous mask", scheme, it)
                else:
                    mask = fresh
                    logger.info("%s: iteration %d flagged %d outliers", scheme, it, int(np.count_nonzero(mask)))
            chi2 = chi_squared(res, mask)
        rel = math.sqrt(rr_new) / rhs_norm
        history.append(
            IterationRecord(
                iteration=it,
                norm=float(np.linalg.norm(x)),
                chi2=chi2,
                cg_residual=rel,
                objective=float(-0.5 * (x @ (b + r))),
            )
        )
        logger.debug("%s: iteration %d |x|=%.6e rel_res=%.3e", scheme, it, history[-1].norm, rel)
        if rel <= cfg.cg_tol:
            converged = True
            break
        p = r + (rr_new / rr) * p
        rr = rr_new

    if converged:
        logger.info("%s: CG converged in %d iterations", scheme, it)
    else:
        logger.warning(
            "%s: CG stopped at max_iters=%d with relative residual %.3e", scheme, it, history[-1].cg_residual
        )
    return SolveReport(
        scheme=scheme,
        solution=x,
        history=history,
        outlier_mask=mask,
        converged=converged,
        iterations=it,
        config=cfg,
    )


# --------- schemes ---------
def solve_true(
    a_op: MatVecOperator, b: ArrayLike, cfg: RegConfig, laplacian: LaplacianOperator | None = None
) -> SolveReport:
    """``(A^T A + lambda1 I + lambda2 L^T L) x = A^T b`` with chi^2 tracked against ``A``."""
    data = as_vector(b, a_op.shape[0], "b")
    return cg_normal_solve(
        lambda x: apply_normal(a_op, x),
        a_op.apply_transpose(data),
        cfg,
        laplacian,
        residual_op=a_op,
        data=data,
        scheme="true",
    )


def solve_scheme_x1(
    f: LowRankSVD,
    b: ArrayLike,
    cfg: RegConfig,
    laplacian: LaplacianOperator | None = None,
    residual_op: MatVecOperator | None = None,
) -> SolveReport:
    """
    ``(V Sigma^2 V^T + lambda1 I + lambda2 L^T L) x = V Sigma U^T b``.

    The right-hand side is formed once; iterations touch only ``V`` and ``Sigma``.
    chi^2 uses ``residual_op`` (default: the factors themselves).
    """
    data = as_vector(b, f.shape[0], "b")
    return cg_normal_solve(
        lambda x: lr_apply_normal(f, x),
        lr_apply_transpose(f, data),
        cfg,
        laplacian,
        residual_op=residual_op if residual_op is not None else f,
        data=data,
        scheme="x1",
    )


def solve_scheme_x1hat(
    f: LowRankSVD,
    a_op: MatVecOperator,
    b: ArrayLike,
    cfg: RegConfig,
    laplacian: LaplacianOperator | None = None,
) -> SolveReport:
    """
    Low-rank normal operator with the exact right-hand side ``A^T b``.

    ``lambda1`` is multiplied by ``cfg.hat_lambda_multiplier``.
    """
    if a_op.shape != f.shape:
        raise DimensionMismatchError("operator rows", f.shape[0], a_op.shape[0])
    data = as_vector(b, f.shape[0], "b")
    scaled = cfg.model_copy(update={"lambda1": cfg.lambda1 * cfg.hat_lambda_multiplier})
    return cg_normal_solve(
        lambda x: lr_apply_normal(f, x),
        a_op.apply_transpose(data),
        scaled,
        laplacian,
        residual_op=a_op,
        data=data,
        scheme="x1hat",
    )


class ProjectedBlock(BaseModel):
    """
    One block of the projected system ``U_j^T A_j x = U_j^T b_j``.

    Attributes
    ----------
    kind : Literal["projected"]
        Discriminator
    rows : numpy.ndarray
        ``k_j x n`` matrix ``U_j^T A_j``
    basis : numpy.ndarray
        ``m_j x k_j`` orthonormal ``U_j``
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["projected"] = "projected"
    rows: np.ndarray
    basis: np.ndarray

    @model_validator(mode="after")
    def _check_shapes(self) -> ProjectedBlock:
        if self.rows.ndim != 2 or self.basis.ndim != 2:
            raise ValueError("rows and basis must be 2-D")
        if self.rows.shape[0] != self.basis.shape[1]:
            raise ValueError(f"rows has {self.rows.shape[0]} rows but basis has {self.basis.shape[1]} columns")
        return self

    @classmethod
    def from_lowrank(cls, f: LowRankSVD) -> ProjectedBlock:
        """``U^T A_k = Sigma V^T``."""
        return cls(rows=(f.v * f.sigma).T.copy(), basis=f.u)

    @classmethod
    def from_operator(cls, op: MatVecOperator, basis: ArrayLike) -> ProjectedBlock:
        """``U^T A`` from ``k`` transpose products ``A^T u_i``."""
        u = np.asarray(basis, dtype=np.float64)
        if u.ndim != 2 or u.shape[0] != op.shape[0]:
            raise DimensionMismatchError("basis rows", op.shape[0], u.shape[0] if u.ndim else 0)
        rows = np.vstack([op.apply_transpose(u[:, i]) for i in range(u.shape[1])])
        return cls(rows=rows, basis=u)

    @property
    def k(self) -> int:
        return int(self.rows.shape[0])

    @property
    def nrows(self) -> int:
        return int(self.basis.shape[0])

    @property
    def ncols(self) -> int:
        return int(self.rows.shape[1])


def solve_scheme_x2(
    blocks: Sequence[LowRankSVD | ProjectedBlock],
    b: ArrayLike,
    cfg: RegConfig,
    laplacian: LaplacianOperator | None = None,
    residual_op: MatVecOperator | None = None,
) -> SolveReport:
    """
    Tikhonov solve of the stacked projected system ``[U_j^T A_j] x = [U_j^T b_j]``.

    ``b`` is the full data vector; block ``j`` owns the next ``m_j`` entries.
    """
    if not blocks:
        raise ValueError("at least one block is required")
    projected = [ProjectedBlock.from_lowrank(blk) if isinstance(blk, LowRankSVD) else blk for blk in blocks]
    n = projected[0].ncols
    for j, blk in enumerate(projected):
        if blk.ncols != n:
            raise DimensionMismatchError(f"block {j} columns", n, blk.ncols)
    total = sum(blk.nrows for blk in projected)
    data = as_vector(b, total, "b")

    rhs = np.zeros(n, dtype=np.float64)
    offset = 0
    for blk in projected:
        rhs += blk.rows.T @ (blk.basis.T @ data[offset : offset + blk.nrows])
        offset += blk.nrows

    def normal(x: FloatArray) -> FloatArray:
        out = np.zeros(n, dtype=np.float64)
        for blk in projected:
            out += blk.rows.T @ (blk.rows @ x)
        return out

    logger.info("x2: %d blocks with ranks %s", len(projected), [blk.k for blk in projected])
    return cg_normal_solve(
        normal,
        rhs,
        cfg,
        laplacian,
        residual_op=residual_op,
        data=data if residual_op is not None else None,
        scheme="x2",
    )


class ReducedSystem:
    """
    The ``k x k`` system ``(Sigma^2 + lambda1 I + lambda2 V^T L^T L V) y = Sigma U^T b``.

    ``V^T L^T L V`` is assembled once from ``k`` Laplacian products; solving for
    another ``(lambda1, lambda2)`` pair only refactors a ``k x k`` matrix.
    """

    def __init__(self, f: LowRankSVD, laplacian: LaplacianOperator | None = None) -> None:
        self.factors = f
        self.laplacian = laplacian
        self.smoothing_gram: FloatArray | None = None
        if laplacian is not None:
            if laplacian.size != f.shape[1]:
                raise DimensionMismatchError("laplacian grid size", f.shape[1], laplacian.size)
            lv = np.column_stack([laplacian.apply(f.v[:, j]) for j in range(f.k)])
            gram = lv.T @ lv
            self.smoothing_gram = 0.5 * (gram + gram.T)

    def matrix(self, lambda1: float, lambda2: float) -> FloatArray:
        g = np.diag(self.factors.sigma**2 + lambda1)
        if lambda2 > 0:
            if self.smoothing_gram is None:
                raise ValueError("lambda2 > 0 needs a LaplacianOperator")
            g = g + lambda2 * self.smoothing_gram
        return g

    def solve(self, b: ArrayLike, lambda1: float, lambda2: float = 0.0) -> tuple[FloatArray, FloatArray]:
        """
        Returns
        -------
        y : numpy.ndarray
            Reduced solution (length ``k``)
        x : numpy.ndarray
            ``V y``
        """
        f = self.factors
        data = as_vector(b, f.shape[0], "b")
        g = self.matrix(lambda1, lambda2)
        rhs = f.sigma * (f.u.T @ data)
        try:
            y = scipy.linalg.cho_solve(scipy.linalg.cho_factor(g), rhs)
        except np.linalg.LinAlgError:
            try:
                y = scipy.linalg.solve(g, rhs, assume_a="sym")
            except np.linalg.LinAlgError as exc:
                raise SingularSystemError(f"reduced {f.k}x{f.k} system is singular") from exc
        if not np.all(np.isfinite(y)):
            raise SingularSystemError(f"reduced {f.k}x{f.k} system produced a non-finite solution")
        return y, f.v @ y


def solve_scheme_x3(
    f: LowRankSVD,
    b: ArrayLike,
    cfg: RegConfig,
    laplacian: LaplacianOperator | None = None,
    residual_op: MatVecOperator | None = None,
) -> SolveReport:
    """Direct solve in the ``k``-dimensional basis, expanded once through ``V``."""
    if cfg.lambda2 > 0 and laplacian is None:
        raise ValueError("lambda2 > 0 needs a LaplacianOperator")
    system = ReducedSystem(f, laplacian if cfg.lambda2 > 0 else None)
    data = as_vector(b, f.shape[0], "b")
    y, x = system.solve(data, cfg.lambda1, cfg.lambda2)
    chi2 = None
    mask = None
    if residual_op is not None:
        res = residual_op.apply(x) - data
        mask = update_outliers(res)
        if mask.all():
            logger.warning("x3: every row exceeds the outlier threshold; reporting chi^2 over all rows")
            mask = np.zeros_like(mask)
        chi2 = chi_squared(res, mask)
    logger.info("x3: solved %dx%d reduced system", f.k, f.k)
    return SolveReport(
        scheme="x3",
        solution=x,
        history=[IterationRecord(iteration=1, norm=float(np.linalg.norm(x)), chi2=chi2)],
        outlier_mask=mask,
        converged=True,
        iterations=1,
        config=cfg,
        reduced_solution=y,
    )


# --------- ISTA ---------
def ista_solve(
    a_op: MatVecOperator,
    b: ArrayLike,
    tau: float,
    step: float = 1.0,
    iters: int = 500,
    tol: float = 1e-10,
) -> SolveReport:
    """
    Iterative soft thresholding for ``1/2 |A x - b|^2 + tau |x|_1``.

    ``x <- S_{step tau}(x + step (A^T b - A^T A x))``. With the default unit
    step ``A`` must be scaled so that ``|A|_2 <= 1``.

    Raises
    ------
    DivergenceError
        If ``|x|`` doubles over ten iterations while the objective grows.
    """
    if tau < 0 or step <= 0:
        raise ValueError("tau must be >= 0 and step > 0")
    data = as_vector(b, a_op.shape[0], "b")
    atb = a_op.apply_transpose(data)
    x = np.zeros(a_op.shape[1], dtype=np.float64)
    history: list[IterationRecord] = []
    converged = False
    it = 0
    for it in range(1, iters + 1):
        x_new = soft_threshold(step * tau, x + step * (atb - apply_normal(a_op, x)))
        if not np.all(np.isfinite(x_new)):
            raise NonFiniteError(f"non-finite ISTA iterate at iteration {it}")
        res = a_op.apply(x_new) - data
        norm = float(np.linalg.norm(x_new))
        history.append(
            IterationRecord(
                iteration=it,
                norm=norm,
                objective=float(0.5 * res @ res + tau * np.abs(x_new).sum()),
                support=int(np.count_nonzero(x_new)),
            )
        )
        if it > DIVERGENCE_WINDOW:
            past = history[-1 - DIVERGENCE_WINDOW]
            assert past.objective is not None and history[-1].objective is not None
            if past.norm > 0 and norm >= 2 * past.norm and history[-1].objective > past.objective:
                raise DivergenceError(
                    f"ISTA diverging at iteration {it}: |x| grew from {past.norm:.3e} to {norm:.3e}; "
                    "rescale A so that |A|_2 <= 1 or reduce the step"
                )
        delta = float(np.linalg.norm(x_new - x))
        x = x_new
        if delta <= tol * max(norm, np.finfo(float).tiny):
            converged = True
            break
    logger.info("ista: %d iterations, support %d, converged=%s", it, history[-1].support, converged)
    return SolveReport(scheme="ista", solution=x, history=history, converged=converged, iterations=it)


# --------- reports ---------
REPORT_COLUMNS = ("iteration", "norm", "chi2", "cg_residual")


def write_report_csv(report: SolveReport, path: str | Path) -> None:
    """History as CSV with columns ``iteration,norm,chi2,cg_residual`` (blank when not tracked)."""

    def fmt(v: float | None) -> str:
        return "" if v is None else repr(v)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rec in report.history:
            writer.writerow([rec.iteration, fmt(rec.norm), fmt(rec.chi2), fmt(rec.cg_residual)])
