"""
One-dimensional wavelet transforms and thresholding.

Signals are transformed along the last axis, so a 2-D array is treated as a
stack of independent rows. Lengths that are not a multiple of ``2**levels`` are
symmetrically extended to the next multiple before the forward transform and
truncated after the inverse. With ``P`` the extension and ``T`` the truncation,

- ``forward   = W P``
- ``inverse   = T W^-1``
- ``inverse_transpose = W^-T T^T`` (``T^T`` pads with zeros)

so that ``inverse(forward(x)) == x`` and ``inverse_transpose`` is the exact
adjoint of ``inverse``.

Coefficient layout after each level is ``[approximation, detail]``; the next
level recurses on the approximation half.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from typing import Annotated, Literal, TypeAlias

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from aind_compressed_regularization.errors import DimensionMismatchError, NonFiniteError
from aind_compressed_regularization.linear_operator import FloatArray

# --------- CDF 9/7 lifting constants ---------
CDF97_ALPHA = -1.586134342059924
CDF97_BETA = -0.052980118572961
CDF97_GAMMA = 0.882911075530934
CDF97_DELTA = 0.443506852043971
CDF97_ZETA = 1.149604398860241

_SQRT2 = math.sqrt(2.0)


class WaveletSpec(BaseModel):
    """
    Transform family, depth and boundary handling.

    Attributes
    ----------
    family : Literal["haar", "cdf97"]
        Orthonormal Haar or biorthogonal CDF 9/7 (lifting form)
    levels : int
        Number of decomposition levels (>= 1)
    boundary : Literal["symmetric"]
        Extension used for lifting neighbours and for length padding
    signal_length : int | None
        Original (unpadded) length, when the transform is tied to one operator width
    """

    model_config = ConfigDict(frozen=True)

    family: Literal["haar", "cdf97"] = "cdf97"
    levels: int = 3
    boundary: Literal["symmetric"] = "symmetric"
    signal_length: int | None = None

    @model_validator(mode="after")
    def _check_levels(self) -> WaveletSpec:
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.signal_length is not None and self.signal_length <= 0:
            raise ValueError(f"signal_length must be positive, got {self.signal_length}")
        return self

    @property
    def is_orthogonal(self) -> bool:
        return self.family == "haar"

    def padded_length(self, n: int | None = None) -> int:
        """Smallest multiple of ``2**levels`` that is ``>= n``."""
        if n is None:
            if self.signal_length is None:
                raise ValueError("signal length unknown: pass n or set signal_length")
            n = self.signal_length
        if n <= 0:
            raise ValueError("signal length must be positive")
        block = 1 << self.levels
        return -(-n // block) * block

    def for_length(self, n: int) -> WaveletSpec:
        """Copy of this spec bound to signals of length ``n``."""
        return self.model_copy(update={"signal_length": n})


class KeepFraction(BaseModel):
    """
    Keep the ``ceil(fraction * nnz)`` largest-magnitude nonzeros.

    Ties at the cutoff magnitude keep the lower index.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["keep_fraction"] = "keep_fraction"
    fraction: float
    tie_rule: Literal["lower_index_first"] = "lower_index_first"

    @model_validator(mode="after")
    def _check_fraction(self) -> KeepFraction:
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        return self


class Absolute(BaseModel):
    """Zero every entry with ``|c| <= alpha``."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["absolute"] = "absolute"
    alpha: float
    tie_rule: Literal["lower_index_first"] = "lower_index_first"

    @model_validator(mode="after")
    def _check_alpha(self) -> Absolute:
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        return self


ThresholdPolicy: TypeAlias = Annotated[KeepFraction | Absolute, Field(discriminator="kind")]


# --------- helpers ---------
def _as_signal(x: ArrayLike, what: str) -> FloatArray:
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim not in (1, 2):
        raise ValueError(f"{what} must be 1-D or a 2-D stack of rows, got shape {arr.shape}")
    if arr.shape[-1] == 0:
        raise ValueError(f"{what} has length 0")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return arr


def _pad(x: FloatArray, target: int, mode: Literal["symmetric", "zero"]) -> FloatArray:
    extra = target - x.shape[-1]
    if extra == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 1) + [(0, extra)]
    if mode == "zero":
        return np.pad(x, widths)
    return np.pad(x, widths, mode="symmetric")


def _predict(s: FloatArray) -> FloatArray:
    """``s[i] + s[i+1]`` with the right neighbour mirrored at the end."""
    return s + np.concatenate([s[..., 1:], s[..., -1:]], axis=-1)


def _update(d: FloatArray) -> FloatArray:
    """``d[i-1] + d[i]`` with the left neighbour mirrored at the start."""
    return d + np.concatenate([d[..., :1], d[..., :-1]], axis=-1)


def _predict_t(d: FloatArray) -> FloatArray:
    out = d.copy()
    out[..., 1:] += d[..., :-1]
    out[..., -1] += d[..., -1]
    return out


def _update_t(s: FloatArray) -> FloatArray:
    out = s.copy()
    out[..., :-1] += s[..., 1:]
    out[..., 0] += s[..., 0]
    return out


def _interleave(s: FloatArray, d: FloatArray) -> FloatArray:
    out = np.empty(s.shape[:-1] + (2 * s.shape[-1],), dtype=np.float64)
    out[..., 0::2] = s
    out[..., 1::2] = d
    return out


# --------- single-level steps (even length, last axis) ---------
def _cdf97_analysis(x: FloatArray) -> FloatArray:
    s = x[..., 0::2].copy()
    d = x[..., 1::2].copy()
    d += CDF97_ALPHA * _predict(s)
    s += CDF97_BETA * _update(d)
    d += CDF97_GAMMA * _predict(s)
    s += CDF97_DELTA * _update(d)
    return np.concatenate([s * CDF97_ZETA, d / CDF97_ZETA], axis=-1)


def _cdf97_synthesis(c: FloatArray) -> FloatArray:
    h = c.shape[-1] // 2
    s = c[..., :h] / CDF97_ZETA
    d = c[..., h:] * CDF97_ZETA
    s -= CDF97_DELTA * _update(d)
    d -= CDF97_GAMMA * _predict(s)
    s -= CDF97_BETA * _update(d)
    d -= CDF97_ALPHA * _predict(s)
    return _interleave(s, d)


def _cdf97_synthesis_t(x: FloatArray) -> FloatArray:
    """Transpose of :func:`_cdf97_synthesis`: the lifting steps reversed with transposed filters."""
    s = x[..., 0::2].copy()
    d = x[..., 1::2].copy()
    s -= CDF97_ALPHA * _predict_t(d)
    d -= CDF97_BETA * _update_t(s)
    s -= CDF97_GAMMA * _predict_t(d)
    d -= CDF97_DELTA * _update_t(s)
    return np.concatenate([s / CDF97_ZETA, d * CDF97_ZETA], axis=-1)


def _haar_analysis(x: FloatArray) -> FloatArray:
    e = x[..., 0::2]
    o = x[..., 1::2]
    return np.concatenate([(e + o) / _SQRT2, (e - o) / _SQRT2], axis=-1)


def _haar_synthesis(c: FloatArray) -> FloatArray:
    h = c.shape[-1] // 2
    a = c[..., :h]
    d = c[..., h:]
    return _interleave((a + d) / _SQRT2, (a - d) / _SQRT2)


_LevelStep: TypeAlias = Callable[[FloatArray], FloatArray]

_ANALYSIS: dict[str, _LevelStep] = {"haar": _haar_analysis, "cdf97": _cdf97_analysis}
_SYNTHESIS: dict[str, _LevelStep] = {"haar": _haar_synthesis, "cdf97": _cdf97_synthesis}
# Haar is orthogonal, so its synthesis transpose is its analysis step.
_SYNTHESIS_T: dict[str, _LevelStep] = {"haar": _haar_analysis, "cdf97": _cdf97_synthesis_t}


def _fine_to_coarse(w: WaveletSpec, c: FloatArray, step: dict[str, _LevelStep]) -> FloatArray:
    width = c.shape[-1]
    for _ in range(w.levels):
        c[..., :width] = step[w.family](c[..., :width])
        width //= 2
    return c


# --------- public transforms ---------
def forward(w: WaveletSpec, x: ArrayLike) -> FloatArray:
    """
    Wavelet coefficients ``W x`` of a signal or of each row of a 2-D array.

    Parameters
    ----------
    w : WaveletSpec
        Transform description
    x : array_like
        Signal(s) of length ``n``; padded to ``w.padded_length(n)``

    Returns
    -------
    numpy.ndarray
        Coefficients of length ``w.padded_length(n)``

    Raises
    ------
    ValueError
        If the signal has length 0.
    """
    arr = _as_signal(x, "signal")
    arr = _pad(arr, w.padded_length(arr.shape[-1]), "symmetric")
    return _fine_to_coarse(w, arr, _ANALYSIS)


def inverse(w: WaveletSpec, c: ArrayLike, length: int | None = None) -> FloatArray:
    """
    Reconstruct signal(s) from coefficients, truncated to ``length``.

    ``length`` defaults to ``w.signal_length`` and then to the coefficient length.

    Raises
    ------
    DimensionMismatchError
        If the coefficient length is not the padded length of ``length``.
    """
    coeffs = _as_signal(c, "coefficients")
    padded = coeffs.shape[-1]
    n = length if length is not None else (w.signal_length or padded)
    if w.padded_length(n) != padded:
        raise DimensionMismatchError("coefficient vector", w.padded_length(n), padded)
    width = padded >> (w.levels - 1)
    for _ in range(w.levels):
        coeffs[..., :width] = _SYNTHESIS[w.family](coeffs[..., :width])
        width *= 2
    return np.ascontiguousarray(coeffs[..., :n])


def inverse_transpose(w: WaveletSpec, x: ArrayLike) -> FloatArray:
    """
    Apply ``W^-T`` (the adjoint of :func:`inverse`) to signal(s) of length ``n``.

    For Haar without padding this equals :func:`forward`.
    """
    arr = _as_signal(x, "signal")
    arr = _pad(arr, w.padded_length(arr.shape[-1]), "zero")
    return _fine_to_coarse(w, arr, _SYNTHESIS_T)


# --------- thresholding ---------
def hard_threshold(p: KeepFraction | Absolute, c: ArrayLike) -> FloatArray:
    """
    Hard-threshold a coefficient vector.

    ``Absolute`` zeros every ``|c_i| <= alpha``. ``KeepFraction`` sorts the
    nonzeros by magnitude and keeps the first ``ceil(fraction * nnz)``.
    """
    v = np.array(c, dtype=np.float64, copy=True)
    if v.ndim != 1:
        raise ValueError(f"coefficients must be one-dimensional, got shape {v.shape}")
    if isinstance(p, Absolute):
        v[np.abs(v) <= p.alpha] = 0.0
        return v
    nz = np.flatnonzero(v)
    keep = math.ceil(round(p.fraction * nz.size, 9))
    if keep >= nz.size:
        return v
    # stable sort on -|c| keeps the lower index first among equal magnitudes
    order = np.argsort(-np.abs(v[nz]), kind="stable")
    out = np.zeros_like(v)
    kept = nz[order[:keep]]
    out[kept] = v[kept]
    return out


def soft_threshold(tau: float, c: ArrayLike) -> FloatArray:
    """Componentwise ``sign(c) * max(0, |c| - tau)``."""
    if not math.isfinite(tau) or tau < 0:
        raise ValueError(f"tau must be finite and >= 0, got {tau}")
    v = np.asarray(c, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
