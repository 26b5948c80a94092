"""
Seeded synthetic problems: smooth kernel matrices, checkerboard models and noise.

Models live on a 2-D grid flattened row-major, so column ``j`` of a kernel matrix
corresponds to grid cell ``(j // ncols, j % ncols)``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import sparse

from aind_compressed_regularization.linear_operator import FloatArray, MatVecOperator, as_vector
from aind_compressed_regularization.regularization import LaplacianOperator, RegConfig, solve_true
from aind_compressed_regularization.rng import STREAM_KERNEL_ROWS, STREAM_NOISE, STREAM_SPECTRUM, generator
from aind_compressed_regularization.sparse_core import SparseMatrix, vstack

logger = logging.getLogger(__name__)

_ROW_BLOCK = 128


def _check_grid(grid_shape: tuple[int, int]) -> None:
    if len(grid_shape) != 2 or min(grid_shape) < 1:
        raise ValueError(f"grid_shape must be two positive sizes, got {grid_shape}")


def _check_range(name: str, lo_hi: tuple[float, float], positive: bool) -> None:
    lo, hi = lo_hi
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"{name} must be a finite (low, high) pair with low <= high, got {lo_hi}")
    if positive and lo <= 0:
        raise ValueError(f"{name} must be positive, got {lo_hi}")
    if not positive and lo < 0:
        raise ValueError(f"{name} must be non-negative, got {lo_hi}")


# --------- smooth kernels ---------
class SyntheticKernelConfig(BaseModel):
    """
    Rows made of Gaussian bumps on a grid.

    Attributes
    ----------
    n_rows : int
        Number of rows (data points)
    grid_shape : tuple[int, int]
        Model grid; the matrix has ``grid_shape[0] * grid_shape[1]`` columns
    n_cols : int | None
        Populated from ``grid_shape`` if missing, verified if provided
    bump_count : int
        Bumps summed into each row
    bump_width : tuple[float, float]
        Range of the Gaussian standard deviation, in grid cells
    amplitude : tuple[float, float]
        Range of the bump peak values
    sparsity_floor : float
        Entries below this value are dropped
    seed : int
        Seed for bump centers, widths and amplitudes
    """

    n_rows: int
    grid_shape: tuple[int, int]
    n_cols: int | None = None
    bump_count: int = 3
    bump_width: tuple[float, float] = (2.0, 5.0)
    amplitude: tuple[float, float] = (0.5, 1.0)
    sparsity_floor: float = 0.0
    seed: int = 0

    @model_validator(mode="after")
    def _check_config(self) -> SyntheticKernelConfig:
        _check_grid(self.grid_shape)
        area = self.grid_shape[0] * self.grid_shape[1]
        if self.n_cols is None:
            self.n_cols = area
        elif self.n_cols != area:
            raise ValueError(f"n_cols {self.n_cols} does not match grid area {area}")
        if self.n_rows < 1:
            raise ValueError(f"n_rows must be >= 1, got {self.n_rows}")
        if self.bump_count < 1:
            raise ValueError(f"bump_count must be >= 1, got {self.bump_count}")
        _check_range("bump_width", self.bump_width, positive=True)
        _check_range("amplitude", self.amplitude, positive=False)
        if not math.isfinite(self.sparsity_floor) or self.sparsity_floor < 0:
            raise ValueError(f"sparsity_floor must be finite and >= 0, got {self.sparsity_floor}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        return self


def _kernel_rows(
    cfg: SyntheticKernelConfig, centers: FloatArray, widths: FloatArray, amps: FloatArray
) -> sparse.csr_matrix:
    gr, gc = cfg.grid_shape
    rr, cc = np.meshgrid(np.arange(gr, dtype=np.float64), np.arange(gc, dtype=np.float64), indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    rows = np.zeros((centers.shape[0], gr * gc), dtype=np.float64)
    for j in range(centers.shape[1]):
        d2 = (rr[None, :] - centers[:, j, 0:1]) ** 2 + (cc[None, :] - centers[:, j, 1:2]) ** 2
        rows += amps[:, j : j + 1] * np.exp(-d2 / (2.0 * widths[:, j : j + 1] ** 2))
    rows[rows < cfg.sparsity_floor] = 0.0
    return sparse.csr_matrix(rows)


def gen_kernel_matrix(cfg: SyntheticKernelConfig, threads: int | None = None) -> SparseMatrix:
    """
    Smooth nonnegative kernel matrix.

    Row ``i`` is ``sum_j a_ij exp(-|g - c_ij|^2 / (2 w_ij^2))`` over grid cells ``g``,
    with integer bump centers ``c_ij`` so that a vanishing width leaves one entry per bump.
    All random parameters are drawn up front, so the result does not depend on ``threads``.
    """
    rng = generator(cfg.seed, STREAM_KERNEL_ROWS)
    shape = (cfg.n_rows, cfg.bump_count)
    centers = np.stack(
        [rng.integers(0, cfg.grid_shape[0], size=shape), rng.integers(0, cfg.grid_shape[1], size=shape)], axis=-1
    ).astype(np.float64)
    widths = rng.uniform(*cfg.bump_width, size=shape)
    amps = rng.uniform(*cfg.amplitude, size=shape)

    starts = list(range(0, cfg.n_rows, _ROW_BLOCK))

    def block(start: int) -> SparseMatrix:
        stop = min(start + _ROW_BLOCK, cfg.n_rows)
        return SparseMatrix.from_scipy(
            _kernel_rows(cfg, centers[start:stop], widths[start:stop], amps[start:stop])
        )

    with ThreadPoolExecutor(max_workers=threads) as pool:
        blocks = list(pool.map(block, starts))
    out = vstack(blocks)
    logger.info("generated %dx%d kernel matrix with %d nonzeros", out.nrows, out.ncols, out.nnz)
    return out


# --------- checkerboard ---------
class CheckerboardConfig(BaseModel):
    """
    Alternating-sign checker model.

    Attributes
    ----------
    grid_shape : tuple[int, int]
        Model grid
    cell_size : int
        Checker edge length in grid cells; edge cells may be partial
    amplitude : float
        Value of the positive cells
    active_band : tuple[int, int] | None
        Half-open range of grid rows that carry signal; ``None`` means all rows
    """

    model_config = ConfigDict(frozen=True)

    grid_shape: tuple[int, int]
    cell_size: int = 4
    amplitude: float = 1.0
    active_band: tuple[int, int] | None = None

    @model_validator(mode="after")
    def _check_config(self) -> CheckerboardConfig:
        _check_grid(self.grid_shape)
        if self.cell_size < 1:
            raise ValueError(f"cell_size must be >= 1, got {self.cell_size}")
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if self.active_band is not None:
            lo, hi = self.active_band
            if not (0 <= lo < hi <= self.grid_shape[0]):
                raise ValueError(f"active_band {self.active_band} outside grid rows 0..{self.grid_shape[0]}")
        return self

    @property
    def size(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]

    def band_mask(self) -> np.ndarray:
        """Boolean mask over the flattened grid, True inside the active band."""
        rows = np.arange(self.grid_shape[0])
        if self.active_band is None:
            inside = np.ones_like(rows, dtype=bool)
        else:
            inside = (rows >= self.active_band[0]) & (rows < self.active_band[1])
        return np.repeat(inside, self.grid_shape[1])


def gen_checkerboard(cfg: CheckerboardConfig) -> FloatArray:
    """Flattened checker pattern ``+-amplitude``, zero outside the active band."""
    r, c = np.meshgrid(np.arange(cfg.grid_shape[0]), np.arange(cfg.grid_shape[1]), indexing="ij")
    sign = np.where((r // cfg.cell_size + c // cfg.cell_size) % 2 == 0, 1.0, -1.0)
    x = (cfg.amplitude * sign).ravel()
    x[~cfg.band_mask()] = 0.0
    return x


class CheckerboardResult(BaseModel):
    """
    Outcome of a checkerboard resolution test.

    Attributes
    ----------
    x_chk, x_rec : numpy.ndarray
        True and recovered models
    correlation : float
        Normalized inner product of the two, restricted to the active band
    leakage : float
        ``max |x_rec|`` outside the band relative to ``max |x_rec|`` overall. A peak
        ratio rather than a norm ratio, so a single leaking cell is not diluted by the
        size of the grid
    iterations : int
        CG iterations of the solve
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_chk: np.ndarray
    x_rec: np.ndarray
    correlation: float
    leakage: float
    iterations: int


def checkerboard_experiment(a_op: MatVecOperator, cfg: CheckerboardConfig, reg: RegConfig) -> CheckerboardResult:
    """
    Solve ``(A^T A + lambda1 I + lambda2 L^T L) x = A^T A x_chk`` and compare with ``x_chk``.

    The smoothing term uses the Laplacian of ``cfg.grid_shape`` when ``reg.lambda2 > 0``.
    Leakage is measured in the max norm, see :class:`CheckerboardResult`.
    """
    x_chk = gen_checkerboard(cfg)
    as_vector(x_chk, a_op.shape[1], "checkerboard model")
    b = a_op.apply(x_chk)
    laplacian = LaplacianOperator(grid_shape=cfg.grid_shape) if reg.lambda2 > 0 else None
    report = solve_true(a_op, b, reg, laplacian)
    x_rec = report.solution
    band = cfg.band_mask()
    u, v = x_chk[band], x_rec[band]
    denom = float(np.linalg.norm(u) * np.linalg.norm(v))
    correlation = float(u @ v) / denom if denom > 0 else 0.0
    peak = float(np.max(np.abs(x_rec))) if x_rec.size else 0.0
    outside = x_rec[~band]
    leakage = float(np.max(np.abs(outside))) / peak if outside.size and peak > 0 else 0.0
    logger.info("checkerboard cell %d: correlation %.4f, leakage %.2e", cfg.cell_size, correlation, leakage)
    return CheckerboardResult(
        x_chk=x_chk, x_rec=x_rec, correlation=correlation, leakage=leakage, iterations=report.iterations
    )


# --------- noise ---------
def add_noise(b: ArrayLike, level: float, seed: int) -> FloatArray:
    """``b + level * |b| / sqrt(m) * g`` with ``g`` standard normal, so ``E|noise| ~ level * |b|``."""
    v = as_vector(b, what="b")
    if not math.isfinite(level) or level < 0:
        raise ValueError(f"noise level must be finite and >= 0, got {level}")
    if level == 0 or v.size == 0:
        return v.copy()
    g = generator(seed, STREAM_NOISE).standard_normal(v.size)
    return v + level * float(np.linalg.norm(v)) / math.sqrt(v.size) * g


# --------- prescribed spectra ---------
class SpectrumConfig(BaseModel):
    """
    Dense ``m x n`` matrix with given singular values and random singular vectors.

    Attributes
    ----------
    m, n : int
        Shape
    singular_values : list[float]
        Non-increasing, non-negative; at most ``min(m, n)`` values, the rest are zero
    seed : int
        Seed for the singular vectors
    """

    model_config = ConfigDict(frozen=True)

    m: int
    n: int
    singular_values: list[float]
    seed: int = 0

    @model_validator(mode="after")
    def _check_spectrum(self) -> SpectrumConfig:
        if self.m < 1 or self.n < 1:
            raise ValueError(f"shape must be positive, got {self.m}x{self.n}")
        s = self.singular_values
        if not s or len(s) > min(self.m, self.n):
            raise ValueError(f"need 1..{min(self.m, self.n)} singular values, got {len(s)}")
        if any(not math.isfinite(v) or v < 0 for v in s):
            raise ValueError("singular values must be finite and >= 0")
        if any(b > a for a, b in zip(s, s[1:], strict=False)):
            raise ValueError("singular values must be non-increasing")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        return self

    @classmethod
    def geometric(cls, m: int, n: int, rank: int, ratio: float, sigma1: float = 1.0, seed: int = 0) -> SpectrumConfig:
        """``sigma_j = sigma1 * ratio**j`` for ``j < rank``."""
        if not (0 < ratio <= 1):
            raise ValueError(f"ratio must be in (0, 1], got {ratio}")
        return cls(m=m, n=n, singular_values=[sigma1 * ratio**j for j in range(rank)], seed=seed)


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> FloatArray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # fix the sign ambiguity so the draw is a function of the seed only
    return np.asarray(q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r))), dtype=np.float64)


def gen_spectrum_matrix(cfg: SpectrumConfig) -> FloatArray:
    """``U diag(s) V^T`` with Haar-random orthonormal ``U`` (m x r) and ``V`` (n x r)."""
    rng = generator(cfg.seed, STREAM_SPECTRUM)
    r = len(cfg.singular_values)
    u = _orthonormal_columns(rng, cfg.m, r)
    v = _orthonormal_columns(rng, cfg.n, r)
    return (u * np.asarray(cfg.singular_values, dtype=np.float64)) @ v.T
