#!/usr/bin/env python3
# ABOUTME: Average model of the grid-tied three-phase AC/DC converter (abc and dq frames)
# ABOUTME: Park transforms, periodic setpoint, harmonic lifting of the bilinear model

from dataclasses import dataclass, replace
import logging

import numpy as np

from harmonic_core import (
    DEFAULT_ORDER,
    NumericalError,
    PhasorVector,
    ToeplitzOperator,
    n_operator,
    phase_shift,
    toeplitz_blocks,
)
from harmonic_solvers import PeriodicMatrix

logger = logging.getLogger(__name__)

# Park scaling a in x_a = a (x_d cos(theta) - x_q sin(theta)); gives <I_a>_1 = (i_d + j i_q)/sqrt(6)
PARK_SCALE = np.sqrt(2.0 / 3.0)

# Laplacian of the complete graph on the three arms; rows sum to zero
C33 = np.eye(3) - np.ones((3, 3)) / 3.0

# Phase b lags a by 2pi/3, phase c leads
PHASE_OFFSETS = np.array([0.0, -2.0 * np.pi / 3.0, 2.0 * np.pi / 3.0])

STATE_LABELS = ("i_a", "i_b", "i_c", "v_dc")

ZERO_SEQUENCE_DUTY = 0.5


class InfeasibleSetpointError(NumericalError):
    """The requested DC operating point cannot be reached from the grid."""

    pass


@dataclass(frozen=True)
class ConverterParams:
    """Physical constants, SI units. Defaults are the laboratory bench values."""

    r: float = 1.15
    L: float = 122e-6
    C: float = 100e-6
    R_L: float = 120.0
    E_rms: float = 45.0
    f: float = 50.0
    v_dc_ref: float = 150.0
    i_sink: float = 0.0

    def __post_init__(self):
        for name in ("L", "C", "R_L", "f", "v_dc_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        # r = 0 (lossless line) and E_rms = 0 (dead grid) are legitimate analysis cases
        for name in ("r", "E_rms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.f

    @property
    def period(self) -> float:
        return 1.0 / self.f

    def to_dict(self) -> dict:
        return {
            "r": self.r, "L": self.L, "C": self.C, "R_L": self.R_L,
            "E_rms": self.E_rms, "f": self.f, "v_dc_ref": self.v_dc_ref, "i_sink": self.i_sink,
        }


def perturb_params(p: ConverterParams, factors: dict[str, float]) -> ConverterParams:
    """Scale selected fields, e.g. {"r": 1.4, "C": 0.6} for a model/plant mismatch study."""
    return replace(p, **{name: getattr(p, name) * factor for name, factor in factors.items()})


@dataclass(frozen=True)
class StateAbc:
    i_abc: np.ndarray
    v_dc: float

    def as_vector(self) -> np.ndarray:
        return np.append(np.asarray(self.i_abc, dtype=float), self.v_dc)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "StateAbc":
        return cls(np.array(x[:3], dtype=float), float(x[3]))


@dataclass(frozen=True)
class DutyCycle:
    d_abc: np.ndarray

    def within_bounds(self, tol: float = 1e-12) -> bool:
        d = np.asarray(self.d_abc)
        return bool(np.all(d >= -tol) and np.all(d <= 1 + tol))

    def zero_sequence_error(self) -> float:
        return abs(float(np.sum(self.d_abc)) - 3 * ZERO_SEQUENCE_DUTY)


def power_coefficient(scale: float = PARK_SCALE) -> float:
    """Factor k in d'i = k d_dq'i_dq for balanced signals (1 for the default scaling)."""
    return 1.5 * scale ** 2


def grid_voltage(theta, E_rms: float) -> np.ndarray:
    """e_abc(theta) = -sqrt(2) E cos(theta + offset), shape (3,) or (3, n)."""
    return -np.sqrt(2.0) * E_rms * np.cos(np.add.outer(PHASE_OFFSETS, theta))


def park(signal_abc, theta, scale: float = PARK_SCALE) -> np.ndarray:
    """abc -> dq, inverse of inverse_park on balanced signals (zero sequence dropped)."""
    angles = np.add.outer(PHASE_OFFSETS, theta)
    x = np.asarray(signal_abc, dtype=float)
    gain = 2.0 / (3.0 * scale)
    x_d = gain * np.sum(x * np.cos(angles), axis=0)
    x_q = -gain * np.sum(x * np.sin(angles), axis=0)
    return np.array([x_d, x_q])


def inverse_park(signal_dq, theta, scale: float = PARK_SCALE) -> np.ndarray:
    """dq -> abc with x_p = a (x_d cos(theta_p) - x_q sin(theta_p)).

    For constant x_dq the fundamental phasor of phase a is (a/2)(x_d + j x_q),
    (x_d + j x_q)/sqrt(6) at the default scale. The conjugate form
    (x_d - j x_q)/sqrt(6) only coincides with it when x_q = 0, as on the
    setpoint; the + sign matches the -L w R dq coupling and the -a sin
    i_q output row.
    """
    angles = np.add.outer(PHASE_OFFSETS, theta)
    x_d, x_q = np.asarray(signal_dq, dtype=float)[0], np.asarray(signal_dq, dtype=float)[1]
    return scale * (x_d * np.cos(angles) - x_q * np.sin(angles))


def A_matrix(p: ConverterParams) -> np.ndarray:
    """Drift of the bilinear model x' = A x + G(x) d + B v."""
    a = np.zeros((4, 4))
    a[:3, :3] = -p.r / p.L * np.eye(3)
    return a


def B_matrix(p: ConverterParams) -> np.ndarray:
    """Input matrix for v = [e_a, e_b, e_c, i_dc]."""
    b = np.zeros((4, 4))
    b[:3, :3] = -np.eye(3) / p.L
    b[3, 3] = -1.0 / p.C
    return b


def G_matrix(x: np.ndarray, p: ConverterParams) -> np.ndarray:
    """Bilinear coupling G(x) = [-C33 v_dc / L ; i_abc' / C], shape 4x3."""
    g = np.empty((4, 3))
    g[:3, :] = -C33 * x[3] / p.L
    g[3, :] = np.asarray(x[:3]) / p.C
    return g


def A_duty_matrix(d: np.ndarray, p: ConverterParams) -> np.ndarray:
    """A(d) with G(x) d = A(d) x, the linear part of the error dynamics."""
    a = np.zeros((4, 4))
    a[:3, 3] = -C33 @ np.asarray(d) / p.L
    a[3, :3] = np.asarray(d) / p.C
    return a


def abc_derivative(x: np.ndarray, d: np.ndarray, e_abc: np.ndarray, i_dc: float, p: ConverterParams) -> np.ndarray:
    """L di/dt = -r i - C33 d v_dc - e ; C dv_dc/dt = d'i - i_dc."""
    i = x[:3]
    v_dc = x[3]
    out = np.empty(4)
    out[:3] = (-p.r * i - (C33 @ d) * v_dc - e_abc) / p.L
    out[3] = (d @ i - i_dc) / p.C
    return out


def stored_energy(x: np.ndarray, p: ConverterParams) -> float:
    return 0.5 * p.L * float(x[:3] @ x[:3]) + 0.5 * p.C * float(x[3]) ** 2


def energy_rate(x: np.ndarray, e_abc: np.ndarray, i_dc: float, p: ConverterParams) -> float:
    """d/dt of stored_energy along the model: -r|i|^2 - e'i - v_dc i_dc (zero-sum currents)."""
    i = x[:3]
    return -p.r * float(i @ i) - float(e_abc @ i) - float(x[3]) * i_dc


def dq_derivative(
    i_dq: np.ndarray,
    v_dc: float,
    d_dq: np.ndarray,
    e_dq: np.ndarray,
    i_dc: float,
    p: ConverterParams,
    scale: float = PARK_SCALE,
) -> np.ndarray:
    """[di_d, di_q, dv_dc]/dt with L di = -r i - L w R i - d v_dc - e, R = [[0, -1], [1, 0]]."""
    i_d, i_q = i_dq
    di_d = (-p.r * i_d + p.L * p.omega * i_q - d_dq[0] * v_dc - e_dq[0]) / p.L
    di_q = (-p.r * i_q - p.L * p.omega * i_d - d_dq[1] * v_dc - e_dq[1]) / p.L
    dv_dc = (power_coefficient(scale) * (d_dq[0] * i_d + d_dq[1] * i_q) - i_dc) / p.C
    return np.array([di_d, di_q, dv_dc])


def three_phase_phasors(fundamental: complex, dc: float, h: int, omega: float) -> PhasorVector:
    """Balanced abc phasors: phase a from (dc, fundamental), b = S_{-2pi/3} a, c = S_{2pi/3} a."""
    h = max(h, 1)
    phase_a = np.zeros(2 * h + 1, dtype=complex)
    phase_a[h] = dc
    phase_a[h + 1] = fundamental
    phase_a[h - 1] = np.conj(fundamental)
    rows = [phase_shift(offset, h) @ phase_a for offset in PHASE_OFFSETS]
    return PhasorVector(np.array(rows), omega)


@dataclass(frozen=True)
class Setpoint:
    """Periodic equilibrium (x^e, d^e, v^e) in dq, abc-time and harmonic form."""

    params: ConverterParams
    i_dq: np.ndarray
    d_dq: np.ndarray
    v_dc: float
    i_dc: float
    e_dq: np.ndarray
    scale: float
    X: PhasorVector
    D: PhasorVector
    V: PhasorVector

    @property
    def omega(self) -> float:
        return self.params.omega

    def x_e(self, theta) -> np.ndarray:
        i_abc = inverse_park(self.i_dq, theta, self.scale)
        v = np.full(np.shape(theta), self.v_dc, dtype=float)
        return np.vstack([i_abc, v[None, ...]]) if np.ndim(theta) else np.append(i_abc, self.v_dc)

    def d_e(self, theta) -> np.ndarray:
        return ZERO_SEQUENCE_DUTY + inverse_park(self.d_dq, theta, self.scale)

    def e_abc(self, theta) -> np.ndarray:
        return grid_voltage(theta, self.params.E_rms)

    def to_dict(self) -> dict:
        return {
            "i_dq": self.i_dq.tolist(),
            "d_dq": self.d_dq.tolist(),
            "v_dc": self.v_dc,
            "i_dc": self.i_dc,
            "e_dq": self.e_dq.tolist(),
            "scale": self.scale,
        }


def compute_setpoint(p: ConverterParams, scale: float = PARK_SCALE, h: int = 1) -> Setpoint:
    """Steady state with i_q = 0, zero-sequence duty 0.5 and v_dc = v_dc_ref.

    Solves 0 = -r i_d - d_d v - e_d, 0 = -L w i_d - d_q v - e_q and
    k d_d i_d = i_dc, which reduces to k r i_d^2 + k e_d i_d + v i_dc = 0.
    The smaller-magnitude root is the low-loss operating point.

    Raises:
        InfeasibleSetpointError: If the quadratic has no real root or the
            required duty amplitude leaves [0, 1]
    """
    kappa = power_coefficient(scale)
    e_d = -np.sqrt(2.0) * p.E_rms / scale
    e_q = 0.0
    v = p.v_dc_ref
    i_dc = v / p.R_L + p.i_sink

    discriminant = (kappa * e_d) ** 2 - 4.0 * kappa * p.r * v * i_dc
    if discriminant < 0:
        max_power = kappa * e_d ** 2 / (4.0 * p.r)
        raise InfeasibleSetpointError(
            f"DC demand {v * i_dc:.1f} W exceeds the {max_power:.1f} W the grid can deliver through r={p.r} ohm"
        )
    if i_dc == 0:
        i_d = 0.0
    else:
        denominator = -kappa * e_d + np.sqrt(discriminant)
        if denominator <= 0:
            raise InfeasibleSetpointError("no grid voltage available to carry the DC load")
        # Product-of-roots form of the smaller root, stable as r -> 0
        i_d = 2.0 * v * i_dc / denominator

    i_dq = np.array([i_d, 0.0])
    d_dq = np.array([-(p.r * i_d + e_d) / v, -(p.L * p.omega * i_d + e_q) / v])
    if scale * np.hypot(*d_dq) > ZERO_SEQUENCE_DUTY:
        raise InfeasibleSetpointError(
            f"duty amplitude {scale * np.hypot(*d_dq):.3f} exceeds the linear modulation range 0.5"
        )

    omega = p.omega
    currents = three_phase_phasors(0.5 * scale * (i_dq[0] + 1j * i_dq[1]), 0.0, h, omega)
    duties = three_phase_phasors(0.5 * scale * (d_dq[0] + 1j * d_dq[1]), ZERO_SEQUENCE_DUTY, h, omega)
    voltages = three_phase_phasors(-np.sqrt(2.0) * p.E_rms / 2.0, 0.0, h, omega)

    x_coeffs = np.zeros((4, currents.coeffs.shape[1]), dtype=complex)
    x_coeffs[:3] = currents.coeffs
    x_coeffs[3, currents.h] = v
    v_coeffs = np.zeros_like(x_coeffs)
    v_coeffs[:3] = voltages.coeffs
    v_coeffs[3, voltages.h] = i_dc

    logger.debug("setpoint i_d=%.4f A d_dq=(%.5f, %.6f) i_dc=%.4f A", i_d, d_dq[0], d_dq[1], i_dc)
    return Setpoint(
        params=p,
        i_dq=i_dq,
        d_dq=d_dq,
        v_dc=v,
        i_dc=i_dc,
        e_dq=np.array([e_d, e_q]),
        scale=scale,
        X=PhasorVector(x_coeffs, omega),
        D=duties,
        V=PhasorVector(v_coeffs, omega),
    )


def dq_error_matrix(setpoint: Setpoint) -> np.ndarray:
    """Time-invariant dq linearization (states i_d, i_q, v_dc) at fixed setpoint duty."""
    p = setpoint.params
    kappa = power_coefficient(setpoint.scale)
    d_d, d_q = setpoint.d_dq
    return np.array([
        [-p.r / p.L, p.omega, -d_d / p.L],
        [-p.omega, -p.r / p.L, -d_q / p.L],
        [kappa * d_d / p.C, kappa * d_q / p.C, 0.0],
    ])


@dataclass(frozen=True)
class HarmonicMatrices:
    A: ToeplitzOperator
    B: ToeplitzOperator
    N: ToeplitzOperator
    G: ToeplitzOperator
    A_D: ToeplitzOperator


def _constant_lift(matrix: np.ndarray, h: int) -> ToeplitzOperator:
    return toeplitz_blocks(np.asarray(matrix, dtype=complex)[:, :, None], h)


def build_harmonic_matrices(p: ConverterParams, X: PhasorVector, D: PhasorVector, h: int = DEFAULT_ORDER) -> HarmonicMatrices:
    """Lift the bilinear model: X' = (A - N) X + G(X) D + B V.

    G(X) is assembled from the Toeplitz lifts of v_dc and i_abc, A(D) from
    the duty phasors, following the signs of the time-domain model.
    """
    if X.channels != 4 or D.channels != 3:
        raise ValueError("X must hold [i_a, i_b, i_c, v_dc] and D the three duty cycles")
    if not np.isclose(X.omega, D.omega):
        raise ValueError("X and D must share the same fundamental")

    width = 2 * max(X.h, D.h) + 1
    x_coeffs = _pad(X.coeffs, width)
    d_coeffs = _pad(D.coeffs, width)

    g = np.zeros((4, 3, width), dtype=complex)
    g[:3, :, :] = -C33[:, :, None] * x_coeffs[3][None, None, :] / p.L
    g[3, :, :] = x_coeffs[:3] / p.C

    a_d = np.zeros((4, 4, width), dtype=complex)
    a_d[:3, 3, :] = -np.tensordot(C33, d_coeffs, axes=1) / p.L
    a_d[3, :3, :] = d_coeffs / p.C

    return HarmonicMatrices(
        A=_constant_lift(A_matrix(p), h),
        B=_constant_lift(B_matrix(p), h),
        N=n_operator(4, h, X.omega),
        G=toeplitz_blocks(g, h),
        A_D=toeplitz_blocks(a_d, h),
    )


def _pad(coeffs: np.ndarray, width: int) -> np.ndarray:
    extra = (width - coeffs.shape[1]) // 2
    return np.pad(coeffs, ((0, 0), (extra, extra)))


def equilibrium_residual(
    X: PhasorVector,
    D: PhasorVector,
    V: PhasorVector,
    p: ConverterParams,
    h: int = DEFAULT_ORDER,
) -> float:
    """Scaled norm of (A - N) X + G(X) D + B V.

    The norm is divided by the sum of the three term norms so the value is
    dimensionless; an all-zero triple returns 0.
    """
    mats = build_harmonic_matrices(p, X, D, h)
    drift = (mats.A - mats.N) @ X.truncate(h).stacked()
    coupling = mats.G @ D.truncate(h).stacked()
    source = mats.B @ V.truncate(h).stacked()
    scale = np.linalg.norm(drift) + np.linalg.norm(coupling) + np.linalg.norm(source)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(drift + coupling + source) / scale)


def error_dynamics_matrix(p: ConverterParams, setpoint: Setpoint) -> PeriodicMatrix:
    """A + A(d^e(t)), the linear part of the error dynamics at fixed setpoint duty."""
    return PeriodicMatrix.from_samples(lambda theta: A_matrix(p) + A_duty_matrix(setpoint.d_e(theta), p), p.omega, h=1)


def coupling_matrix(p: ConverterParams, setpoint: Setpoint) -> PeriodicMatrix:
    """G(x^e(t)) as a periodic matrix."""
    return PeriodicMatrix.from_samples(lambda theta: G_matrix(setpoint.x_e(theta), p), p.omega, h=1)
