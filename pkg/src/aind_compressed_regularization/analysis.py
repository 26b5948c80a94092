"""
Executable checks of the low-rank regularization algebra.

Every check returns a number (a deviation, an error, a ratio) rather than a
boolean, so callers choose tolerances. Dense reference quantities (full SVD,
dense inverses) come from ``numpy.linalg`` rather than in-package Jacobi or
Gaussian elimination code, which keeps them independent of the solvers under
test. They are meant for instances up to a few hundred unknowns.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator

from aind_compressed_regularization.errors import DimensionMismatchError, SingularSystemError
from aind_compressed_regularization.linear_operator import DenseOperator, FloatArray, MatVecOperator, apply_normal
from aind_compressed_regularization.lowrank_svd import LowRankSVD
from aind_compressed_regularization.regularization import (
    RegConfig,
    solve_scheme_x1,
    solve_scheme_x1hat,
    solve_scheme_x2,
    solve_scheme_x3,
    solve_true,
)
from aind_compressed_regularization.rng import STREAM_TRIALS, generator

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-6


class FilterDiagonal(BaseModel):
    """
    Entries ``sigma_s^2 / (lambda^2 + lambda sigma_s^2)``.

    These are the diagonal of ``S`` in ``(A_k^T A_k + lambda I)^-1 = I/lambda - V S V^T``.
    """

    model_config = ConfigDict(frozen=True)

    sigma: list[float]
    lam: float

    @model_validator(mode="after")
    def _check(self) -> FilterDiagonal:
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lambda must be finite and > 0, got {self.lam}")
        if any(not math.isfinite(s) or s < 0 for s in self.sigma):
            raise ValueError("sigma entries must be finite and >= 0")
        return self

    @property
    def entries(self) -> FloatArray:
        s2 = np.asarray(self.sigma, dtype=np.float64) ** 2
        return s2 / (self.lam**2 + self.lam * s2)

    def cross_check(self) -> float:
        """Max relative gap between ``1/lambda - entries`` and ``1/(sigma^2 + lambda)``."""
        s2 = np.asarray(self.sigma, dtype=np.float64) ** 2
        direct = 1.0 / (s2 + self.lam)
        return float(np.max(np.abs((1.0 / self.lam - self.entries) - direct) / direct)) if s2.size else 0.0


# --------- identities ---------
def woodbury_check(d_scale: float, p: ArrayLike, t: ArrayLike, r: ArrayLike) -> float:
    """
    ``max |(D + P T R)^-1 - (D^-1 - D^-1 P (T^-1 + R D^-1 P)^-1 R D^-1)|`` with ``D = d_scale I``.

    Raises
    ------
    SingularSystemError
        If ``T`` (or ``D``) cannot be inverted.
    """
    pm, tm, rm = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (p, t, r))
    n, k = pm.shape
    if tm.shape != (k, k) or rm.shape != (k, n):
        raise DimensionMismatchError("woodbury factor size", k, tm.shape[0])
    if d_scale == 0:
        raise SingularSystemError("D = 0 is not invertible")
    try:
        t_inv = np.linalg.inv(tm)
        lhs = np.linalg.inv(d_scale * np.eye(n) + pm @ tm @ rm)
        d_inv = np.eye(n) / d_scale
        core = np.linalg.inv(t_inv + rm @ d_inv @ pm)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"woodbury check failed to invert: {exc}") from exc
    rhs = d_inv - d_inv @ pm @ core @ rm @ d_inv
    return float(np.abs(lhs - rhs).max())


def inverse_identity_check(f: LowRankSVD, lam: float) -> float:
    """Max-abs gap in ``(A_k^T A_k + lambda I)^-1 = I/lambda - V S V^T``."""
    n = f.shape[1]
    s = FilterDiagonal(sigma=f.sigma.tolist(), lam=lam).entries
    lhs = np.linalg.inv((f.v * f.sigma**2) @ f.v.T + lam * np.eye(n))
    rhs = np.eye(n) / lam - (f.v * s) @ f.v.T
    return float(np.abs(lhs - rhs).max())


def tail_inverse_identity_check(a: ArrayLike, k: int, lam: float) -> float:
    """
    Max-abs gap in ``(A^T A + lambda I)^-1 = (A_k^T A_k + lambda I)^-1 - V_t S_t V_t^T``.

    ``V_t``, ``S_t`` hold the trailing singular vectors and filter entries of a full
    dense SVD of ``a``.
    """
    dense = np.asarray(a, dtype=np.float64)
    n = dense.shape[1]
    u, sig, vt = np.linalg.svd(dense, full_matrices=False)
    if not 1 <= k <= sig.shape[0]:
        raise ValueError(f"k must be in 1..{sig.shape[0]}, got {k}")
    if sig[k - 1] <= 0:
        raise ValueError("leading k singular values must be positive")
    head = LowRankSVD(u=u[:, :k], sigma=sig[:k], v=vt[:k].T)
    v_tail = vt[k:].T
    s_tail = FilterDiagonal(sigma=sig[k:].tolist(), lam=lam).entries
    lhs = np.linalg.inv(dense.T @ dense + lam * np.eye(n))
    truncated = np.linalg.inv((head.v * head.sigma**2) @ head.v.T + lam * np.eye(n))
    rhs = truncated - (v_tail * s_tail) @ v_tail.T
    return float(np.abs(lhs - rhs).max())


def partial_isometry_check(f: LowRankSVD, trials: int = 20, seed: int = 0) -> tuple[float, float]:
    """
    Returns
    -------
    norm_gap : float
        ``max | |U u| - |u| | / |u|`` over random ``u``
    contraction_excess : float
        ``max (|U^T w| - |w|)_+ / |w|`` over random ``w``
    """
    rng = generator(seed, STREAM_TRIALS)
    gap = 0.0
    excess = 0.0
    for _ in range(trials):
        u = rng.standard_normal(f.k)
        w = rng.standard_normal(f.shape[0])
        gap = max(gap, abs(float(np.linalg.norm(f.u @ u)) - float(np.linalg.norm(u))) / float(np.linalg.norm(u)))
        excess = max(excess, (float(np.linalg.norm(f.u.T @ w)) - float(np.linalg.norm(w))) / float(np.linalg.norm(w)))
    return gap, max(excess, 0.0)


def residual_decomposition_check(basis: ArrayLike, residual: ArrayLike) -> float:
    """Relative gap in ``|r|^2 = |U U^T r|^2 + |(I - U U^T) r|^2``."""
    u = np.asarray(basis, dtype=np.float64)
    r = np.asarray(residual, dtype=np.float64)
    inside = u @ (u.T @ r)
    outside = r - inside
    total = float(r @ r)
    if total == 0.0:
        return 0.0
    return abs(total - float(inside @ inside) - float(outside @ outside)) / total


# --------- bounds ---------
class BoundCheck(BaseModel):
    """
    One bound evaluation.

    ``applicable`` is False when the bound's premise does not hold for this instance;
    such checks are reported but never counted as violations.
    """

    name: str
    actual: float
    bound: float
    applicable: bool = True
    atol: float = 0.0

    @property
    def slack(self) -> float:
        """``actual / bound`` (0 when both vanish)."""
        if self.bound == 0:
            return 0.0 if self.actual == 0 else math.inf
        return self.actual / self.bound

    @property
    def tolerance(self) -> float:
        return self.bound * (1 + BOUND_SLACK) + self.atol

    @property
    def violated(self) -> bool:
        return self.applicable and self.actual > self.tolerance


class BoundReport(BaseModel):
    """Bound checks for one instance."""

    checks: list[BoundCheck]

    @property
    def violations(self) -> list[BoundCheck]:
        return [c for c in self.checks if c.violated]

    @property
    def passed(self) -> bool:
        return not self.violations

    def by_name(self, name: str) -> BoundCheck:
        return next(c for c in self.checks if c.name == name)


def evaluate_bounds(
    sigma_oracle: ArrayLike,
    k: int,
    lam: float,
    b_norm: float,
    x_bar: ArrayLike,
    x1_tilde: ArrayLike,
    x1_hat: ArrayLike,
    atol: float = 0.0,
) -> BoundReport:
    """
    Compare the errors of ``x1_tilde`` and ``x1_hat`` against their a priori bounds.

    ``atol`` is an absolute allowance on the solution errors for iterative-solver
    truncation; it is divided by ``|x|`` for the relative check.

    Checks
    ------
    x1_tilde_abs
        ``|x - x1~| <= s/(lambda + s^2) |b|`` with ``s = sigma_{k+1}``; only valid when ``s^2 <= lambda``
    x1_tilde_abs_sharp
        ``|x - x1~| <= max_{j>k} sigma_j/(lambda + sigma_j^2) |b|``; always valid
    x1_hat_abs
        ``|x - x1^| <= s^3/(lambda^2 + lambda s^2) |b|``
    x1_hat_rel
        ``|x - x1^| / |x| <= s^2 / lambda``
    norm_ordering
        ``|x1~| <= |x1^|``

    Raises
    ------
    ValueError
        If fewer than ``k + 1`` oracle singular values are given.
    """
    sig = np.asarray(sigma_oracle, dtype=np.float64)
    if sig.shape[0] < k + 1:
        raise ValueError(f"need at least k+1={k + 1} oracle singular values, got {sig.shape[0]}")
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    xb, xt, xh = (np.asarray(v, dtype=np.float64) for v in (x_bar, x1_tilde, x1_hat))
    s = float(sig[k])
    tail = sig[k:]
    err_tilde = float(np.linalg.norm(xb - xt))
    err_hat = float(np.linalg.norm(xb - xh))
    xb_norm = float(np.linalg.norm(xb))
    checks = [
        BoundCheck(
            name="x1_tilde_abs",
            actual=err_tilde,
            bound=s / (lam + s * s) * b_norm,
            applicable=s * s <= lam,
            atol=atol,
        ),
        BoundCheck(
            name="x1_tilde_abs_sharp",
            actual=err_tilde,
            bound=float(np.max(tail / (lam + tail**2))) * b_norm,
            atol=atol,
        ),
        BoundCheck(name="x1_hat_abs", actual=err_hat, bound=s**3 / (lam**2 + lam * s * s) * b_norm, atol=atol),
        BoundCheck(
            name="x1_hat_rel",
            actual=err_hat / xb_norm if xb_norm > 0 else 0.0,
            bound=s * s / lam,
            applicable=xb_norm > 0,
            atol=atol / xb_norm if xb_norm > 0 else 0.0,
        ),
        BoundCheck(
            name="norm_ordering", actual=float(np.linalg.norm(xt)), bound=float(np.linalg.norm(xh)), atol=atol
        ),
    ]
    report = BoundReport(checks=checks)
    for c in report.violations:
        logger.warning("bound %s violated: actual %.6e > bound %.6e", c.name, c.actual, c.bound)
    return report


# --------- matvec error reports ---------
class ErrorReport(BaseModel):
    """
    Percent errors ``100 |approx - exact| / |exact|`` per trial.

    Trials whose exact product is zero are recorded as ``None`` and listed in ``skipped``.
    """

    label: str
    ax_percent: list[float | None]
    aty_percent: list[float | None]
    atax_percent: list[float | None]
    skipped: list[int]

    @staticmethod
    def _valid(values: list[float | None]) -> list[float]:
        return [v for v in values if v is not None]

    def mean(self, column: str) -> float:
        vals = self._valid(getattr(self, column))
        return float(np.mean(vals)) if vals else math.nan

    def max(self, column: str) -> float:
        vals = self._valid(getattr(self, column))
        return float(np.max(vals)) if vals else math.nan


def _percent(approx: FloatArray, exact: FloatArray) -> float | None:
    denom = float(np.linalg.norm(exact))
    if denom == 0.0:
        return None
    return 100.0 * float(np.linalg.norm(approx - exact)) / denom


def matvec_error_report(
    exact_op: MatVecOperator, approx_op: MatVecOperator, trials: int = 50, seed: int = 0, label: str = "approx"
) -> ErrorReport:
    """Percent errors of ``A x``, ``A^T y`` and ``A^T A x`` over seeded Gaussian trials."""
    if exact_op.shape != approx_op.shape:
        raise DimensionMismatchError("operator rows", exact_op.shape[0], approx_op.shape[0])
    m, n = exact_op.shape
    rng = generator(seed, STREAM_TRIALS)
    ax: list[float | None] = []
    aty: list[float | None] = []
    atax: list[float | None] = []
    skipped: list[int] = []
    for t in range(trials):
        x = rng.standard_normal(n)
        y = rng.standard_normal(m)
        row = (
            _percent(approx_op.apply(x), exact_op.apply(x)),
            _percent(approx_op.apply_transpose(y), exact_op.apply_transpose(y)),
            _percent(apply_normal(approx_op, x), apply_normal(exact_op, x)),
        )
        if any(v is None for v in row):
            skipped.append(t)
        ax.append(row[0])
        aty.append(row[1])
        atax.append(row[2])
    if skipped:
        logger.warning("%d trials had a zero exact product and were skipped", len(skipped))
    return ErrorReport(label=label, ax_percent=ax, aty_percent=aty, atax_percent=atax, skipped=skipped)


ERROR_COLUMNS = ("trial", "ax_percent", "aty_percent", "atax_percent")


def write_error_csv(report: ErrorReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ERROR_COLUMNS)
        for t, row in enumerate(zip(report.ax_percent, report.aty_percent, report.atax_percent, strict=True)):
            writer.writerow([t, *("" if v is None else repr(v) for v in row)])


# --------- validation suite ---------
class ValidationCheck(BaseModel):
    """One line of the validation table."""

    check: str
    value: float
    tolerance: float
    passed: bool


VALIDATION_COLUMNS = ("check", "value", "tolerance", "passed")


class ValidationSuite:
    """
    Run every identity, equivalence and bound check on one dense instance.

    Parameters
    ----------
    a : array_like
        Dense ``m x n`` operator
    b : array_like
        Data vector
    k : int
        Truncation rank
    lam : float
        Tikhonov weight
    factors : LowRankSVD | None
        Factors under test (e.g. from the randomized SVD); identities that need the
        exact truncated SVD always use the dense oracle
    tol : float
        Tolerance for solution identities
    seed : int
        Seed for random probes
    """

    def __init__(
        self,
        a: ArrayLike,
        b: ArrayLike,
        k: int,
        lam: float,
        factors: LowRankSVD | None = None,
        tol: float = 1e-7,
        seed: int = 0,
    ) -> None:
        self.a = np.asarray(a, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.k = k
        self.lam = lam
        self.tol = tol
        self.seed = seed
        self.oracle = LowRankSVD.from_dense_svd(self.a, k)
        self.factors = factors if factors is not None else self.oracle
        self.cfg = RegConfig(lambda1=lam, cg_tol=1e-13, max_iters=20 * max(self.a.shape))

    def _solve_all(self) -> dict[str, FloatArray]:
        op = DenseOperator(self.a)
        return {
            "true": solve_true(op, self.b, self.cfg).solution,
            "x1_oracle": solve_scheme_x1(self.oracle, self.b, self.cfg).solution,
            "x1hat_oracle": solve_scheme_x1hat(self.oracle, op, self.b, self.cfg).solution,
            "x1": solve_scheme_x1(self.factors, self.b, self.cfg).solution,
            "x2": solve_scheme_x2([self.factors], self.b, self.cfg).solution,
            "x3": solve_scheme_x3(self.factors, self.b, self.cfg).solution,
        }

    def run(self) -> list[ValidationCheck]:
        out: list[ValidationCheck] = []

        def add(name: str, value: float, tolerance: float) -> None:
            out.append(ValidationCheck(check=name, value=value, tolerance=tolerance, passed=bool(value <= tolerance)))

        f, o, lam = self.factors, self.oracle, self.lam
        add("filter_diagonal", FilterDiagonal(sigma=o.sigma.tolist(), lam=lam).cross_check(), 1e-12)
        add("woodbury", woodbury_check(lam, o.v, np.diag(o.sigma**2), o.v.T), 1e-10)
        add("inverse_identity", inverse_identity_check(o, lam), 1e-10)
        if self.k < min(self.a.shape):
            add("tail_inverse_identity", tail_inverse_identity_check(self.a, self.k, lam), 1e-10)
        gap, excess = partial_isometry_check(f, seed=self.seed)
        add("partial_isometry_norm", gap, 1e-8)
        add("partial_isometry_contraction", excess, 1e-10)

        sol = self._solve_all()
        xb = sol["true"]
        x1 = sol["x1"]
        x1_norm = max(float(np.linalg.norm(x1)), np.finfo(float).tiny)
        add("x1_vs_x2", float(np.linalg.norm(x1 - sol["x2"])) / x1_norm, self.tol)
        add("x1_vs_x3", float(np.linalg.norm(x1 - sol["x3"])) / x1_norm, self.tol)

        xb_norm = max(float(np.linalg.norm(xb)), np.finfo(float).tiny)
        projected = o.v @ (o.v.T @ xb)
        add("projection_identity", float(np.linalg.norm(sol["x1_oracle"] - projected)) / xb_norm, self.tol)
        diff = sol["x1hat_oracle"] - sol["x1_oracle"]
        predicted = (self.a.T @ self.b - o.apply_transpose(self.b)) / lam
        hat_norm = max(float(np.linalg.norm(sol["x1hat_oracle"])), np.finfo(float).tiny)
        add("difference_identity", float(np.linalg.norm(diff - predicted)) / hat_norm, self.tol)

        sigma_full = np.linalg.svd(self.a, compute_uv=False)
        if sigma_full.shape[0] > self.k:
            bounds = evaluate_bounds(
                sigma_full,
                self.k,
                lam,
                float(np.linalg.norm(self.b)),
                xb,
                sol["x1_oracle"],
                sol["x1hat_oracle"],
                atol=self.tol * xb_norm,
            )
            for c in bounds.checks:
                if c.applicable:
                    out.append(
                        ValidationCheck(
                            check=f"bound_{c.name}", value=c.actual, tolerance=c.tolerance, passed=not c.violated
                        )
                    )

        residual = self.a @ xb - self.b
        add("residual_decomposition", residual_decomposition_check(f.u, residual), 1e-10)
        failed = [c.check for c in out if not c.passed]
        if failed:
            logger.warning("validation failed: %s", ", ".join(failed))
        else:
            logger.info("validation passed (%d checks)", len(out))
        return out


def write_validation_csv(checks: list[ValidationCheck], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VALIDATION_COLUMNS)
        for c in checks:
            writer.writerow([c.check, repr(c.value), repr(c.tolerance), "true" if c.passed else "false"])
