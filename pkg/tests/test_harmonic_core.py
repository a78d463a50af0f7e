# ABOUTME: Tests for harmonic_core.py - sliding Fourier phasors and Toeplitz lifting
# ABOUTME: Covers decomposition, reconstruction, N operator, phase shifts and truncated products

import pytest
import numpy as np
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))

from harmonic_core import (
    PhasorVector,
    PhasorTrajectory,
    ToeplitzOperator,
    sliding_fourier,
    reconstruct,
    toeplitz,
    toeplitz_blocks,
    n_operator,
    phase_shift,
    truncated_product,
)

OMEGA = 2 * np.pi * 50
PERIOD = 2 * np.pi / OMEGA


def sample_times(periods: int = 3, per_period: int = 200) -> np.ndarray:
    return np.arange(periods * per_period + 1) * (PERIOD / per_period)


def cos_phasors(h: int) -> PhasorVector:
    coeffs = np.zeros((1, 2 * h + 1), dtype=complex)
    coeffs[0, h - 1] = coeffs[0, h + 1] = 0.5
    return PhasorVector(coeffs, OMEGA)


class TestSlidingFourier:
    """Tests for sliding_fourier() function."""

    def test_constant_signal(self):
        """Constant signal has only a DC phasor."""
        t = sample_times()
        traj = sliding_fourier(np.full(t.size, 2.5), t, PERIOD, h=3)
        assert np.allclose(traj.phasor(0), 2.5, atol=1e-12)
        for k in (-3, -2, -1, 1, 2, 3):
            assert np.allclose(traj.phasor(k), 0.0, atol=1e-12)

    def test_cosine(self):
        """cos(wt) has phasors 1/2 at +-1."""
        t = sample_times()
        traj = sliding_fourier(np.cos(OMEGA * t), t, PERIOD, h=2)
        assert np.allclose(traj.phasor(1), 0.5, atol=1e-12)
        assert np.allclose(traj.phasor(-1), 0.5, atol=1e-12)
        assert np.allclose(traj.phasor(0), 0.0, atol=1e-12)
        assert np.allclose(traj.phasor(2), 0.0, atol=1e-12)

    def test_cosine_squared(self):
        """cos^2 gives 1/2 at DC and 1/4 at +-2."""
        t = sample_times()
        traj = sliding_fourier(np.cos(OMEGA * t) ** 2, t, PERIOD, h=3)
        assert np.allclose(traj.phasor(0), 0.5, atol=1e-12)
        assert np.allclose(traj.phasor(2), 0.25, atol=1e-12)
        assert np.allclose(traj.phasor(-2), 0.25, atol=1e-12)
        assert np.allclose(traj.phasor(1), 0.0, atol=1e-12)

    def test_output_starts_after_first_window(self):
        """First phasor sample closes the first full window."""
        t = sample_times(periods=2, per_period=100)
        traj = sliding_fourier(np.sin(OMEGA * t), t, PERIOD, h=1)
        assert traj.timestamps[0] == pytest.approx(PERIOD)
        assert len(traj) == t.size - 100

    def test_multichannel_conjugate_symmetry(self):
        """Real multi-channel signals yield conjugate-symmetric phasors."""
        t = sample_times()
        signal = np.vstack([np.cos(OMEGA * t + 0.3), 1.0 + np.sin(2 * OMEGA * t)])
        traj = sliding_fourier(signal, t, PERIOD, h=4)
        assert traj.real is True
        assert traj[5].channels == 2
        assert traj[5].conjugate_symmetry_error() < 1e-12

    def test_complex_signal_not_flagged_real(self):
        """Complex input produces a non-real trajectory."""
        t = sample_times()
        traj = sliding_fourier(np.exp(1j * OMEGA * t), t, PERIOD, h=1)
        assert traj.real is False
        assert np.allclose(traj.phasor(1), 1.0, atol=1e-12)
        assert np.allclose(traj.phasor(-1), 0.0, atol=1e-12)

    def test_window_longer_than_signal_raises(self):
        """Signals shorter than one period are refused."""
        t = np.arange(50) * (PERIOD / 100)
        with pytest.raises(ValueError, match="longer than the signal"):
            sliding_fourier(np.ones(t.size), t, PERIOD, h=1)

    def test_non_uniform_timestamps_raise(self):
        """Jittered timestamps are refused."""
        t = sample_times()
        t[10] += 1e-6
        with pytest.raises(ValueError, match="uniformly spaced"):
            sliding_fourier(np.ones(t.size), t, PERIOD, h=1)

    def test_spacing_must_divide_period(self):
        """A step that does not tile the period is refused."""
        t = np.arange(400) * (PERIOD / 100.6)
        with pytest.raises(ValueError, match="does not divide"):
            sliding_fourier(np.ones(t.size), t, PERIOD, h=1)


class TestReconstruct:
    """Tests for reconstruct() function."""

    def test_constant(self):
        """DC-only phasors reconstruct the constant everywhere."""
        x = PhasorVector(np.array([[0.0, 3.0, 0.0]]), OMEGA)
        for t in (0.0, 0.0031, 0.017):
            assert reconstruct(x, 0.0, t)[0] == pytest.approx(3.0)

    def test_cosine_at_zero(self):
        """cos phasors reconstruct to 1 at t = 0."""
        assert reconstruct(cos_phasors(1), 0.0, 0.0)[0] == pytest.approx(1.0)

    def test_dc_derivative_term(self):
        """The (T/2) dX0 term is added as-is."""
        x = PhasorVector(np.array([[0.0, 1.0, 0.0]]), OMEGA)
        value = reconstruct(x, 2.0, 0.0)[0]
        assert value == pytest.approx(1.0 + PERIOD)

    def test_roundtrip_band_limited(self):
        """reconstruct after sliding_fourier reproduces a band-limited signal."""
        t = sample_times(periods=3, per_period=200)
        signal = 0.3 + np.cos(OMEGA * t + 0.2) + 0.2 * np.sin(3 * OMEGA * t) - 0.05 * np.cos(4 * OMEGA * t)
        traj = sliding_fourier(signal, t, PERIOD, h=5)
        dx0 = traj.dc_derivative()
        offset = t.size - len(traj)
        for i in (0, 37, 150, len(traj) - 1):
            value = reconstruct(traj[i], dx0[i], traj.timestamps[i])[0]
            expected = signal[offset + i]
            assert abs(value.imag) < 1e-9
            assert abs(value.real - expected) < 1e-6 * max(1.0, abs(expected))


class TestToeplitz:
    """Tests for toeplitz() and the ToeplitzOperator layout."""

    def test_constant_is_scaled_identity(self):
        """A constant lifts to c times the identity."""
        op = toeplitz(PhasorVector(np.array([[0.0, 1.7, 0.0]]), OMEGA), h_out=4)
        assert np.allclose(op.data, 1.7 * np.eye(9))

    def test_cosine_tridiagonal(self):
        """cos lifts to 1/2 on the first off-diagonals."""
        op = toeplitz(cos_phasors(1), h_out=1)
        expected = np.array([[0, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0]])
        assert np.allclose(op.data, expected)

    def test_vector_signal_stacks_blocks(self):
        """A 3-channel signal gives three stacked scalar blocks."""
        coeffs = np.array([[0, 1.0, 0], [0, 2.0, 0], [0.5, 0, 0.5]])
        op = toeplitz(PhasorVector(coeffs, OMEGA), h_out=2)
        assert (op.m, op.n) == (3, 1)
        assert op.data.shape == (15, 5)
        assert np.allclose(op.block(1, 0), 2.0 * np.eye(5))
        assert op.is_toeplitz()

    def test_central_column_reproduces_phasors(self):
        """Column q = 0 holds the phasors themselves."""
        coeffs = np.array([[0.1 - 0.2j, 0.3j, 1.0, -0.3j, 0.1 + 0.2j]])
        op = toeplitz(PhasorVector(coeffs, OMEGA), h_out=2)
        assert np.allclose(op.central_column(), coeffs)

    def test_coefficients_beyond_band_are_zero(self):
        """Orders outside the stored band are treated as zero."""
        op = toeplitz(cos_phasors(1), h_out=5)
        assert np.allclose(np.diagonal(op.data, 2), 0.0)
        assert np.allclose(np.diagonal(op.data, 1), 0.5)

    def test_matrix_function_blocks(self):
        """toeplitz_blocks puts each entry's phasors in its own block."""
        coeffs = np.zeros((2, 2, 3), dtype=complex)
        coeffs[0, 1, 1] = 4.0
        coeffs[1, 0, 0] = coeffs[1, 0, 2] = 0.5
        op = toeplitz_blocks(coeffs, h_out=3)
        assert np.allclose(op.block(0, 1), 4.0 * np.eye(7))
        assert np.allclose(op.block(0, 0), 0.0)
        assert op.is_toeplitz()

    def test_structural_scan_detects_violation(self):
        """is_toeplitz rejects a perturbed diagonal."""
        op = toeplitz(cos_phasors(1), h_out=3)
        data = op.data.copy()
        data[2, 3] += 1e-3
        assert not ToeplitzOperator(data, 1, 1, 3).is_toeplitz()

    def test_central_truncation(self):
        """central(h) equals lifting directly at order h."""
        x = PhasorVector(np.array([[0.2j, 0.5, 1.0, 0.5, -0.2j]]), OMEGA)
        assert np.allclose(toeplitz(x, 6).central(3).data, toeplitz(x, 3).data)


class TestNOperator:
    """Tests for n_operator() function."""

    def test_single_channel(self):
        """channels=1, h=1 gives diag(-jw, 0, jw)."""
        op = n_operator(1, 1, OMEGA)
        assert np.allclose(op.data, np.diag([-1j * OMEGA, 0, 1j * OMEGA]))

    def test_skew_adjoint(self):
        """N + N* = 0."""
        op = n_operator(3, 7, OMEGA)
        assert np.allclose(op.data + op.adjoint().data, 0.0)

    def test_two_channels(self):
        """channels=2 repeats the diagonal per block."""
        op = n_operator(2, 1, OMEGA)
        assert op.data.shape == (6, 6)
        assert np.allclose(op.block(1, 1), np.diag([-1j * OMEGA, 0, 1j * OMEGA]))
        assert np.allclose(op.block(0, 1), 0.0)


class TestPhaseShift:
    """Tests for phase_shift() function."""

    def test_zero_is_identity(self):
        assert np.allclose(phase_shift(0.0, 4).data, np.eye(9))

    def test_two_thirds_pi(self):
        """S_{2pi/3} at h=1."""
        op = phase_shift(2 * np.pi / 3, 1)
        expected = np.diag([np.exp(-2j * np.pi / 3), 1.0, np.exp(2j * np.pi / 3)])
        assert np.allclose(op.data, expected)

    def test_group_law(self):
        """S_a S_-a = I and the matrices are unitary."""
        a = phase_shift(0.7, 5)
        b = phase_shift(-0.7, 5)
        assert np.allclose((a @ b).data, np.eye(11))
        assert np.allclose(a.data @ a.adjoint().data, np.eye(11))

    def test_shift_oracle(self):
        """S_{-2pi/3} maps phasors of cos(wt) to those of cos(w(t - T/3))."""
        t = sample_times()
        x = sliding_fourier(np.cos(OMEGA * t), t, PERIOD, h=3)
        y = sliding_fourier(np.cos(OMEGA * (t - PERIOD / 3)), t, PERIOD, h=3)
        shifted = phase_shift(-2 * np.pi / 3, 3) @ x[10].coeffs[0]
        assert np.allclose(shifted, y[10].coeffs[0], atol=1e-12)


class TestTruncatedProduct:
    """Tests for truncated_product() function."""

    def test_identity_left(self):
        b = toeplitz(cos_phasors(1), 4)
        eye = ToeplitzOperator(np.eye(9), 1, 1, 4)
        assert np.allclose(truncated_product(eye, b).data, b.data)

    def test_cos_squared_central_band(self):
        """T(cos) T(cos) matches T(1/2 + cos(2wt)/2) on the central band."""
        c = toeplitz(cos_phasors(1), 8)
        square = PhasorVector(np.array([[0.25, 0, 0.5, 0, 0.25]]), OMEGA)
        product = truncated_product(c, c)
        error = np.max(np.abs(product.central(6).data - toeplitz(square, 6).data))
        assert error < 1e-12

    def test_constant_commutes_with_n(self):
        """A constant operator commutes with N."""
        coeffs = np.zeros((2, 2, 1), dtype=complex)
        coeffs[:, :, 0] = [[1.0, 2.0], [-0.5, 3.0]]
        a = toeplitz_blocks(coeffs, 3)
        n = n_operator(2, 3, OMEGA)
        assert np.allclose((a @ n).data, (n @ a).data)

    def test_dimension_mismatch_raises(self):
        a = toeplitz_blocks(np.ones((2, 3, 1)), 2)
        with pytest.raises(ValueError):
            truncated_product(a, a)

    def test_central_error_decreases_with_order(self):
        """For a decaying, non-band-limited factor the central error shrinks as h grows."""
        def lift(h):
            k = np.arange(-2 * h, 2 * h + 1)
            return toeplitz(PhasorVector((0.5 ** np.abs(k))[None, :].astype(complex), OMEGA), h)

        reference = truncated_product(lift(40), lift(40)).central(2).data
        errors = [
            np.max(np.abs(truncated_product(lift(h), lift(h)).central(2).data - reference))
            for h in (3, 5, 7, 9)
        ]
        for previous, current in zip(errors, errors[1:]):
            assert current <= previous + 1e-12
        assert errors[-1] < errors[0]
