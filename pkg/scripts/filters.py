#!/usr/bin/env python3
# ABOUTME: Discrete linear filters (bilinear/Tustin) for the PLL and the PI baseline
# ABOUTME: Notch, second-order reference low-pass, lead-lag, filtered derivative and trapezoidal integrator

from dataclasses import dataclass, field

import numpy as np
from scipy import signal


@dataclass
class DiscreteFilter:
    """Discrete transfer function b(z)/a(z) stepped one sample at a time.

    The state is the transposed direct-form-II delay line, so a filter can
    be evaluated inside a fixed-step control loop without buffering input.
    """

    b: np.ndarray
    a: np.ndarray
    state: np.ndarray = field(default=None)

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        order = max(b.size, a.size)
        b = np.pad(b, (0, order - b.size))
        a = np.pad(a, (0, order - a.size))
        if a[0] == 0:
            raise ValueError("leading denominator coefficient must be non-zero")
        self.b = b / a[0]
        self.a = a / a[0]
        if self.state is None:
            self.state = np.zeros(order - 1)

    def step(self, u: float) -> float:
        y = self.b[0] * u + (self.state[0] if self.state.size else 0.0)
        for i in range(self.state.size):
            carry = self.state[i + 1] if i + 1 < self.state.size else 0.0
            self.state[i] = self.b[i + 1] * u - self.a[i + 1] * y + carry
        return float(y)

    def reset(self, y: float = 0.0, u: float = 0.0) -> None:
        """Load the state of a filter sitting at constant input u and output y."""
        for i in reversed(range(self.state.size)):
            carry = self.state[i + 1] if i + 1 < self.state.size else 0.0
            self.state[i] = self.b[i + 1] * u - self.a[i + 1] * y + carry

    @property
    def output(self) -> float:
        """Output for zero input at the next step (the held value of an integrator)."""
        return float(self.state[0]) if self.state.size else 0.0

    def dc_gain(self) -> float:
        return float(np.sum(self.b) / np.sum(self.a))


def bilinear_filter(num_s, den_s, Ts: float, prewarp: float | None = None) -> DiscreteFilter:
    """Tustin discretization of num_s(s)/den_s(s).

    With prewarp set, the effective sampling rate is adjusted so the discrete
    response equals the analog one exactly at that pulsation.
    """
    fs = 1.0 / Ts
    if prewarp is not None:
        if prewarp * Ts >= np.pi:
            raise ValueError(f"prewarp frequency {prewarp:g} rad/s is above Nyquist for Ts={Ts:g}")
        fs = prewarp / (2.0 * np.tan(prewarp * Ts / 2.0))
    b, a = signal.bilinear(num_s, den_s, fs=fs)
    return DiscreteFilter(b, a)


def notch_filter(omega_n: float, zeta: float, Ts: float) -> DiscreteFilter:
    """(s^2 + wn^2) / (s^2 + 2 zeta wn s + wn^2), zero placed exactly at wn."""
    return bilinear_filter([1.0, 0.0, omega_n ** 2], [1.0, 2.0 * zeta * omega_n, omega_n ** 2], Ts, prewarp=omega_n)


def lowpass2_filter(omega_c: float, zeta: float, Ts: float) -> DiscreteFilter:
    return bilinear_filter([omega_c ** 2], [1.0, 2.0 * zeta * omega_c, omega_c ** 2], Ts)


def lead_lag_filter(gain: float, omega_z: float, omega_p: float, Ts: float) -> DiscreteFilter:
    """gain (1 + s/wz) / (1 + s/wp)."""
    return bilinear_filter([gain / omega_z, gain], [1.0 / omega_p, 1.0], Ts)


def derivative_filter(omega_f: float, Ts: float) -> DiscreteFilter:
    """s / (1 + s/wf), a derivative rolled off above wf."""
    return bilinear_filter([1.0, 0.0], [1.0 / omega_f, 1.0], Ts)


def integrator(Ts: float) -> DiscreteFilter:
    """Trapezoidal integrator Ts/2 (z + 1)/(z - 1)."""
    return bilinear_filter([1.0], [1.0, 0.0], Ts)


def frequency_response(flt: DiscreteFilter, omega, Ts: float):
    """Complex gain at z = exp(j w Ts)."""
    _, response = signal.freqz(flt.b, flt.a, worN=np.atleast_1d(np.asarray(omega, dtype=float)) * Ts)
    return response if np.ndim(omega) else complex(response[0])
