"""Tests for wavelet transforms and thresholding."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from aind_compressed_regularization.errors import DimensionMismatchError
from aind_compressed_regularization.wavelet import (
    Absolute,
    KeepFraction,
    WaveletSpec,
    forward,
    hard_threshold,
    inverse,
    inverse_transpose,
    soft_threshold,
)

FAMILIES = ("haar", "cdf97")


def dense_forward(w: WaveletSpec, n: int) -> np.ndarray:
    return np.column_stack([forward(w, np.eye(n)[j]) for j in range(n)])


def dense_inverse(w: WaveletSpec, n: int) -> np.ndarray:
    p = w.padded_length(n)
    return np.column_stack([inverse(w, np.eye(p)[k], length=n) for k in range(p)])


def dense_inverse_transpose(w: WaveletSpec, n: int) -> np.ndarray:
    return np.column_stack([inverse_transpose(w, np.eye(n)[j]) for j in range(n)])


class TestWaveletSpec:
    """Test WaveletSpec validation and padding."""

    def test_defaults(self) -> None:
        """Test default family and depth."""
        w = WaveletSpec()
        assert w.family == "cdf97"
        assert w.levels == 3
        assert w.boundary == "symmetric"
        assert not w.is_orthogonal
        assert WaveletSpec(family="haar").is_orthogonal

    def test_rejects_zero_levels(self) -> None:
        """Test levels must be positive."""
        with pytest.raises(ValidationError, match="levels must be >= 1"):
            WaveletSpec(levels=0)

    def test_padded_length(self) -> None:
        """Test padding to the next multiple of 2**levels."""
        w = WaveletSpec(levels=3)
        assert w.padded_length(64) == 64
        assert w.padded_length(100) == 104
        assert w.padded_length(1) == 8
        assert w.for_length(100).padded_length() == 104

    def test_padded_length_needs_a_length(self) -> None:
        """Test an unbound spec needs an explicit length."""
        with pytest.raises(ValueError, match="signal length unknown"):
            WaveletSpec().padded_length()


class TestTransforms:
    """Test forward, inverse and inverse_transpose."""

    def test_haar_constant(self) -> None:
        """Test the one-level Haar average."""
        np.testing.assert_allclose(forward(WaveletSpec(family="haar", levels=1), [1.0, 1.0]), [math.sqrt(2), 0.0])

    def test_haar_detail(self) -> None:
        """Test the one-level Haar difference."""
        np.testing.assert_allclose(
            forward(WaveletSpec(family="haar", levels=1), [1.0, -1.0]), [0.0, math.sqrt(2)], atol=1e-15
        )

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("n", [8, 64, 100, 1000])
    def test_perfect_reconstruction(self, family: str, n: int) -> None:
        """Test inverse(forward(x)) == x, padded or not."""
        w = WaveletSpec(family=family, levels=3)
        rng = np.random.default_rng(n)
        for _ in range(100):
            x = rng.standard_normal(n)
            c = forward(w, x)
            assert c.shape == (w.padded_length(n),)
            back = inverse(w, c, length=n)
            assert np.linalg.norm(back - x) <= 1e-10 * np.linalg.norm(x)

    def test_zero_coefficients(self) -> None:
        """Test the inverse of zero is zero."""
        np.testing.assert_array_equal(inverse(WaveletSpec(), np.zeros(16)), np.zeros(16))

    def test_impulse_round_trip(self) -> None:
        """Test re-forwarding a synthesis basis function recovers the impulse."""
        w = WaveletSpec(family="cdf97", levels=3)
        e = np.zeros(64)
        e[11] = 1.0
        basis = inverse(w, e)
        assert np.count_nonzero(np.abs(basis) > 1e-12) > 1
        np.testing.assert_allclose(forward(w, basis), e, atol=1e-10)

    def test_haar_inverse_transpose_is_forward(self) -> None:
        """Test W^-T == W for the orthogonal family."""
        w = WaveletSpec(family="haar", levels=4)
        x = np.random.default_rng(0).standard_normal(64)
        np.testing.assert_allclose(inverse_transpose(w, x), forward(w, x), atol=1e-14)

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("n", [8, 64, 100, 1000])
    def test_adjoint_identity(self, family: str, n: int) -> None:
        """Test <W^-T x, y> == <x, W^-1 y>."""
        w = WaveletSpec(family=family, levels=3)
        rng = np.random.default_rng(1000 + n)
        for _ in range(10):
            x = rng.standard_normal(n)
            y = rng.standard_normal(w.padded_length(n))
            lhs = float(inverse_transpose(w, x) @ y)
            rhs = float(x @ inverse(w, y, length=n))
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.linalg.norm(x) * np.linalg.norm(y))

    @pytest.mark.parametrize("family", FAMILIES)
    def test_dense_consistency(self, family: str) -> None:
        """Test dense(W^-1) dense(W) == I and dense(W^-T) == dense(W^-1)^T."""
        w = WaveletSpec(family=family, levels=3)
        n = 37
        fwd = dense_forward(w, n)
        inv = dense_inverse(w, n)
        np.testing.assert_allclose(inv @ fwd, np.eye(n), atol=1e-12)
        np.testing.assert_allclose(dense_inverse_transpose(w, n), inv.T, atol=1e-12)

    def test_rows_transform_independently(self) -> None:
        """Test a 2-D input is a stack of independent rows."""
        w = WaveletSpec(levels=2)
        rows = np.random.default_rng(3).standard_normal((4, 30))
        stacked = forward(w, rows)
        for i in range(4):
            np.testing.assert_array_equal(stacked[i], forward(w, rows[i]))

    def test_input_not_modified(self) -> None:
        """Test transforms do not write into their argument."""
        x = np.arange(16.0)
        forward(WaveletSpec(), x)
        inverse_transpose(WaveletSpec(), x)
        np.testing.assert_array_equal(x, np.arange(16.0))

    def test_empty_signal(self) -> None:
        """Test length-0 signals are rejected."""
        with pytest.raises(ValueError, match="length 0"):
            forward(WaveletSpec(), [])

    def test_length_mismatch(self) -> None:
        """Test coefficient length must be the padded length."""
        with pytest.raises(DimensionMismatchError, match="expected length 16, got 10"):
            inverse(WaveletSpec(levels=3), np.zeros(10))


class TestThresholdPolicies:
    """Test policy validation."""

    def test_fraction_range(self) -> None:
        """Test KeepFraction needs a fraction in (0, 1]."""
        with pytest.raises(ValidationError, match="fraction must be in"):
            KeepFraction(fraction=0.0)
        with pytest.raises(ValidationError, match="fraction must be in"):
            KeepFraction(fraction=1.5)

    def test_alpha_range(self) -> None:
        """Test Absolute needs a finite non-negative alpha."""
        with pytest.raises(ValidationError, match="alpha must be finite and >= 0"):
            Absolute(alpha=-1.0)
        with pytest.raises(ValidationError, match="alpha must be finite and >= 0"):
            Absolute(alpha=math.inf)


class TestHardThreshold:
    """Test hard thresholding."""

    def test_absolute(self) -> None:
        """Test the absolute rule zeros |c| <= alpha."""
        np.testing.assert_array_equal(hard_threshold(Absolute(alpha=1.5), [3.0, -1.0, 0.5, 2.0]), [3.0, 0.0, 0.0, 2.0])

    def test_absolute_cutoff_is_inclusive(self) -> None:
        """Test entries equal to alpha are dropped."""
        np.testing.assert_array_equal(hard_threshold(Absolute(alpha=2.0), [2.0, -2.5]), [0.0, -2.5])

    def test_keep_fraction(self) -> None:
        """Test top-2 of 4 nonzeros."""
        np.testing.assert_array_equal(
            hard_threshold(KeepFraction(fraction=0.5), [3.0, -1.0, 0.5, 2.0]), [3.0, 0.0, 0.0, 2.0]
        )

    def test_keep_all(self) -> None:
        """Test fraction 1.0 is the identity."""
        c = np.array([0.1, 0.0, -7.0, 2.0])
        np.testing.assert_array_equal(hard_threshold(KeepFraction(fraction=1.0), c), c)

    def test_counts_only_nonzeros(self) -> None:
        """Test zeros do not count towards the kept fraction."""
        c = np.array([0.0, 4.0, 0.0, -3.0, 0.0, 1.0, 0.0, 2.0])
        out = hard_threshold(KeepFraction(fraction=0.5), c)
        np.testing.assert_array_equal(out, [0.0, 4.0, 0.0, -3.0, 0.0, 0.0, 0.0, 0.0])

    def test_ceil_without_float_noise(self) -> None:
        """Test 0.3 of 10 nonzeros keeps exactly 3."""
        c = np.arange(1.0, 11.0)
        assert np.count_nonzero(hard_threshold(KeepFraction(fraction=0.3), c)) == 3
        assert np.count_nonzero(hard_threshold(KeepFraction(fraction=0.31), c)) == 4

    def test_ties_keep_lower_index(self) -> None:
        """Test equal magnitudes at the cutoff keep the lower index."""
        out = hard_threshold(KeepFraction(fraction=0.5), [1.0, -1.0, 1.0, -1.0])
        np.testing.assert_array_equal(out, [1.0, -1.0, 0.0, 0.0])

    def test_absolute_idempotent(self) -> None:
        """Test applying the absolute rule twice changes nothing."""
        c = np.random.default_rng(5).standard_normal(50)
        once = hard_threshold(Absolute(alpha=0.7), c)
        np.testing.assert_array_equal(hard_threshold(Absolute(alpha=0.7), once), once)

    def test_energy_never_grows(self) -> None:
        """Test |Thr(c)| <= |c| for both rules."""
        rng = np.random.default_rng(6)
        for _ in range(20):
            c = rng.standard_normal(40)
            for p in (Absolute(alpha=0.5), KeepFraction(fraction=0.25)):
                assert np.linalg.norm(hard_threshold(p, c)) <= np.linalg.norm(c)

    def test_rejects_matrices(self) -> None:
        """Test hard thresholding is per vector."""
        with pytest.raises(ValueError, match="one-dimensional"):
            hard_threshold(Absolute(alpha=0.0), np.zeros((2, 2)))


class TestSoftThreshold:
    """Test soft thresholding."""

    def test_shrinks(self) -> None:
        """Test the direct rule."""
        np.testing.assert_array_equal(soft_threshold(1.0, [2.0, -3.0, 0.5]), [1.0, -2.0, 0.0])

    def test_zero_tau(self) -> None:
        """Test tau=0 is the identity."""
        c = np.array([0.25, -4.0, 0.0])
        np.testing.assert_array_equal(soft_threshold(0.0, c), c)

    def test_large_tau(self) -> None:
        """Test tau >= max|c| gives zero."""
        np.testing.assert_array_equal(soft_threshold(3.0, [2.0, -3.0, 0.5]), np.zeros(3))

    def test_negative_tau(self) -> None:
        """Test negative tau is rejected."""
        with pytest.raises(ValueError, match="tau must be finite and >= 0"):
            soft_threshold(-0.1, [1.0])
