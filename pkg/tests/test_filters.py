# ABOUTME: Tests for filters.py
# ABOUTME: Frequency responses of the notch, low-pass, lead-lag and integrator discretizations

import numpy as np
import pytest
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))

from filters import (
    DiscreteFilter,
    bilinear_filter,
    derivative_filter,
    frequency_response,
    integrator,
    lead_lag_filter,
    lowpass2_filter,
    notch_filter,
)

TS = 50e-6
W150 = 2 * np.pi * 150


class TestNotchFilter:
    """Tests for notch_filter()."""

    def test_unity_dc_gain(self):
        """DC passes unchanged."""
        assert abs(frequency_response(notch_filter(W150, 0.5, TS), 0.0, TS)) == pytest.approx(1.0)

    def test_rejects_150_hz(self):
        """A 150 Hz sinusoid is removed in steady state."""
        flt = notch_filter(W150, 0.5, TS)
        t = np.arange(20000) * TS
        out = np.array([flt.step(u) for u in np.sin(W150 * t)])
        assert np.max(np.abs(out[-2000:])) < 0.01
        assert abs(frequency_response(flt, W150, TS)) < 1e-9

    def test_passes_fundamental(self):
        """The 50 Hz gain stays above 0.9 with the default damping."""
        assert abs(frequency_response(notch_filter(W150, 0.5, TS), 2 * np.pi * 50, TS)) > 0.9

    def test_heavier_damping_widens_notch(self):
        """zeta = 0.707 cuts deeper into 50 Hz than zeta = 0.5."""
        light = abs(frequency_response(notch_filter(W150, 0.5, TS), 2 * np.pi * 50, TS))
        heavy = abs(frequency_response(notch_filter(W150, 0.707, TS), 2 * np.pi * 50, TS))
        assert heavy < light


class TestOtherFilters:
    """Tests for the remaining filter constructors."""

    def test_lowpass_dc_gain(self):
        """The reference filter tracks constants."""
        flt = lowpass2_filter(62.0, 0.707, TS)
        assert flt.dc_gain() == pytest.approx(1.0)
        out = [flt.step(1.0) for _ in range(40000)]
        assert out[-1] == pytest.approx(1.0, abs=1e-4)

    def test_lead_lag_dc_gain(self):
        """Lead-lag DC gain equals its gain parameter."""
        flt = lead_lag_filter(1e5, 2 * np.pi * 5, 2 * np.pi * 500, TS)
        assert flt.dc_gain() == pytest.approx(1e5)

    def test_integrator_of_constant(self):
        """Trapezoidal integration of 1 over N steps gives about N Ts."""
        flt = integrator(TS)
        out = [flt.step(1.0) for _ in range(100)]
        assert out[-1] == pytest.approx(99.5 * TS)

    def test_integrator_reset_holds_value(self):
        """Resetting an integrator to y0 holds y0 under zero input."""
        flt = integrator(TS)
        flt.reset(314.0)
        assert flt.step(0.0) == pytest.approx(314.0)
        assert flt.output == pytest.approx(314.0)

    def test_derivative_of_ramp(self):
        """The filtered derivative of a ramp settles to its slope."""
        flt = derivative_filter(620.0, TS)
        out = [flt.step(3.0 * k * TS) for k in range(4000)]
        assert out[-1] == pytest.approx(3.0, rel=1e-6)

    def test_reset_to_steady_state(self):
        """reset(y, u) puts a low-pass at rest on a constant."""
        flt = lowpass2_filter(62.0, 0.707, TS)
        flt.reset(150.0, 150.0)
        assert flt.step(150.0) == pytest.approx(150.0)

    def test_prewarp_above_nyquist_rejected(self):
        """Prewarping beyond Nyquist is refused."""
        with pytest.raises(ValueError):
            bilinear_filter([1.0], [1.0, 1.0], TS, prewarp=np.pi / TS)

    def test_invalid_denominator(self):
        """A zero leading denominator coefficient is refused."""
        with pytest.raises(ValueError):
            DiscreteFilter([1.0], [0.0, 1.0])
