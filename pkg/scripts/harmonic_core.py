#!/usr/bin/env python3
# ABOUTME: Sliding Fourier phasors, reconstruction and block-Toeplitz lifting
# ABOUTME: Harmonic-domain primitives (phasor vectors, N operator, phase shifts) shared by all modules

from dataclasses import dataclass

import numpy as np

# Truncation order used when callers do not ask for one ("ten harmonics")
DEFAULT_ORDER = 10


class NumericalError(Exception):
    """A numerical computation could not produce a trustworthy result."""

    pass


def harmonic_orders(h: int) -> np.ndarray:
    """Centered harmonic indices -h..h, the memory layout of every phasor array."""
    return np.arange(-h, h + 1)


@dataclass(frozen=True)
class PhasorVector:
    """Phasors of a multi-channel signal over one period.

    coeffs[c, k + h] is the k-th phasor of channel c. Real-valued signals
    satisfy coeffs[c, -k] == conj(coeffs[c, k]).
    """

    coeffs: np.ndarray
    omega: float
    real: bool = True

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if coeffs.ndim != 2 or coeffs.shape[1] % 2 != 1:
            raise ValueError(f"phasor array must be channels x (2h+1), got {coeffs.shape}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def h(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega

    def phasor(self, k: int) -> np.ndarray:
        """k-th phasor of every channel (zero outside the stored band)."""
        if abs(k) > self.h:
            return np.zeros(self.channels, dtype=complex)
        return self.coeffs[:, k + self.h]

    def conjugate_symmetry_error(self) -> float:
        return float(np.max(np.abs(self.coeffs - np.conj(self.coeffs[:, ::-1]))))

    def truncate(self, h: int) -> "PhasorVector":
        """Cut or zero-pad to order h."""
        out = np.zeros((self.channels, 2 * h + 1), dtype=complex)
        keep = min(h, self.h)
        out[:, h - keep:h + keep + 1] = self.coeffs[:, self.h - keep:self.h + keep + 1]
        return PhasorVector(out, self.omega, self.real)

    def stacked(self) -> np.ndarray:
        """Channel-major column vector matching the ToeplitzOperator layout."""
        return self.coeffs.reshape(-1)

    @classmethod
    def from_stacked(cls, vector: np.ndarray, channels: int, omega: float, real: bool = True) -> "PhasorVector":
        return cls(np.asarray(vector).reshape(channels, -1), omega, real)

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "h": self.h,
            "channels": self.channels,
            "real": self.real,
            "re": self.coeffs.real.tolist(),
            "im": self.coeffs.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhasorVector":
        coeffs = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        return cls(coeffs.reshape(data["channels"], 2 * data["h"] + 1), float(data["omega"]), data.get("real", True))


@dataclass(frozen=True)
class PhasorTrajectory:
    """Time-varying phasors X(t): coeffs[i] holds the PhasorVector at timestamps[i]."""

    timestamps: np.ndarray
    coeffs: np.ndarray
    omega: float
    real: bool = True

    def __post_init__(self):
        timestamps = np.asarray(self.timestamps, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.ndim != 3 or coeffs.shape[0] != timestamps.size:
            raise ValueError("coeffs must be (samples, channels, 2h+1) with one sample per timestamp")
        if timestamps.size > 1 and np.any(np.diff(timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self) -> int:
        return self.timestamps.size

    def __getitem__(self, index: int) -> PhasorVector:
        return PhasorVector(self.coeffs[index], self.omega, self.real)

    @property
    def h(self) -> int:
        return (self.coeffs.shape[2] - 1) // 2

    @property
    def samples(self) -> list[PhasorVector]:
        return [self[i] for i in range(len(self))]

    def phasor(self, k: int) -> np.ndarray:
        """k-th phasor over time, shape (samples, channels)."""
        if abs(k) > self.h:
            return np.zeros(self.coeffs.shape[:2], dtype=complex)
        return self.coeffs[:, :, k + self.h]

    def dc_derivative(self) -> np.ndarray:
        """Finite-difference estimate of dX_0/dt, shape (samples, channels)."""
        if len(self) < 2:
            return np.zeros(self.coeffs.shape[:2], dtype=complex)
        return np.gradient(self.phasor(0), self.timestamps, axis=0)


def sliding_fourier(signal: np.ndarray, t: np.ndarray, period: float, h: int = DEFAULT_ORDER) -> PhasorTrajectory:
    """Sliding Fourier decomposition over the trailing window [t - T, t].

    X_k(t) = (1/T) * integral of x(tau) exp(-j w k tau) over the window,
    evaluated with the trapezoidal rule for every sample that closes a
    full window.

    Args:
        signal: Samples, shape (n,) or (channels, n)
        t: Uniform sample times, shape (n,)
        period: Window length T in seconds
        h: Highest harmonic order kept

    Returns:
        PhasorTrajectory starting at the first sample that ends a full window

    Raises:
        ValueError: On non-uniform timestamps, a spacing that does not divide
            T, or a window longer than the signal
    """
    x = np.asarray(signal)
    if x.ndim == 1:
        x = x[None, :]
    t = np.asarray(t, dtype=float)
    if x.shape[1] != t.size:
        raise ValueError(f"signal has {x.shape[1]} samples but {t.size} timestamps")
    if t.size < 2:
        raise ValueError("at least two samples are needed")

    steps = np.diff(t)
    dt = float(np.mean(steps))
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise ValueError("timestamps are not uniformly spaced")
    n_window = int(round(period / dt))
    if n_window < 1 or abs(n_window * dt - period) > 1e-3 * period:
        raise ValueError(f"sample spacing {dt:g} s does not divide the period {period:g} s")
    if n_window >= t.size:
        raise ValueError(f"window of {n_window} steps is longer than the signal ({t.size} samples)")

    omega = 2 * np.pi / period
    kernel = np.exp(-1j * omega * np.outer(harmonic_orders(h), t))
    weighted = x[:, None, :] * kernel[None, :, :]
    running = np.concatenate(
        [np.zeros(weighted.shape[:2] + (1,), dtype=complex), np.cumsum(weighted, axis=-1)],
        axis=-1,
    )

    ends = np.arange(n_window, t.size)
    starts = ends - n_window
    window_sum = running[..., ends + 1] - running[..., starts]
    trapezoid = window_sum - 0.5 * (weighted[..., starts] + weighted[..., ends])
    # dt / (n_window * dt): normalize by the discrete window length
    coeffs = np.moveaxis(trapezoid / n_window, -1, 0)
    return PhasorTrajectory(t[ends], coeffs, omega, real=bool(np.isrealobj(x)))


def reconstruct(phasors: PhasorVector, dx0: np.ndarray | complex, t: float) -> np.ndarray:
    """x(t) = sum_k X_k exp(j w k t) + (T/2) dX_0/dt, one complex value per channel."""
    k = harmonic_orders(phasors.h)
    value = phasors.coeffs @ np.exp(1j * phasors.omega * k * t)
    return value + 0.5 * phasors.period * np.asarray(dx0)


@dataclass(frozen=True)
class ToeplitzOperator:
    """Truncated block-Toeplitz matrix of order h.

    Block (i, j) occupies rows i*(2h+1)..(i+1)*(2h+1) and the matching
    columns; entry (p, q) of that block is the (p - q)-th phasor of the
    (i, j) entry of the lifted matrix function.
    """

    data: np.ndarray
    m: int
    n: int
    h: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        size = 2 * self.h + 1
        if data.shape != (self.m * size, self.n * size):
            raise ValueError(f"data shape {data.shape} does not match {self.m}x{self.n} blocks of order {self.h}")
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return 2 * self.h + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def block(self, i: int, j: int) -> np.ndarray:
        s = self.size
        return self.data[i * s:(i + 1) * s, j * s:(j + 1) * s]

    def is_toeplitz(self, tol: float = 1e-12) -> bool:
        """Scan every diagonal of every block for constant entries."""
        scale = max(1.0, float(np.max(np.abs(self.data), initial=0.0)))
        for i in range(self.m):
            for j in range(self.n):
                block = self.block(i, j)
                for offset in range(-self.size + 1, self.size):
                    diagonal = np.diagonal(block, offset)
                    if np.max(np.abs(diagonal - diagonal[0])) > tol * scale:
                        return False
        return True

    def central(self, h: int) -> "ToeplitzOperator":
        """Keep the orders |k| <= h of every block, i.e. the order-h truncation."""
        if h > self.h or h < 0:
            raise ValueError(f"cannot take order {h} out of order {self.h}")
        keep = np.arange(self.h - h, self.h + h + 1)
        rows = np.concatenate([i * self.size + keep for i in range(self.m)])
        cols = np.concatenate([j * self.size + keep for j in range(self.n)])
        return ToeplitzOperator(self.data[np.ix_(rows, cols)], self.m, self.n, h)

    def central_column(self) -> np.ndarray:
        """Column q = 0 of block column 0, reshaped to (m, 2h+1) phasors."""
        return self.data[:, self.h].reshape(self.m, self.size)

    def adjoint(self) -> "ToeplitzOperator":
        return ToeplitzOperator(self.data.conj().T, self.n, self.m, self.h)

    def _check_same_layout(self, other: "ToeplitzOperator") -> None:
        if (self.m, self.n, self.h) != (other.m, other.n, other.h):
            raise ValueError(
                f"layout mismatch: {self.m}x{self.n}@{self.h} vs {other.m}x{other.n}@{other.h}"
            )

    def __add__(self, other: "ToeplitzOperator") -> "ToeplitzOperator":
        self._check_same_layout(other)
        return ToeplitzOperator(self.data + other.data, self.m, self.n, self.h)

    def __sub__(self, other: "ToeplitzOperator") -> "ToeplitzOperator":
        self._check_same_layout(other)
        return ToeplitzOperator(self.data - other.data, self.m, self.n, self.h)

    def __neg__(self) -> "ToeplitzOperator":
        return ToeplitzOperator(-self.data, self.m, self.n, self.h)

    def __mul__(self, scalar: complex) -> "ToeplitzOperator":
        return ToeplitzOperator(self.data * scalar, self.m, self.n, self.h)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, ToeplitzOperator):
            return truncated_product(self, other)
        return self.data @ other


def toeplitz_blocks(coeffs: np.ndarray, h_out: int) -> ToeplitzOperator:
    """Lift the phasors of an m x n matrix function, coeffs shape (m, n, 2hb+1)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    m, n, width = coeffs.shape
    band = (width - 1) // 2
    k = harmonic_orders(h_out)
    offsets = k[:, None] - k[None, :]
    inside = np.abs(offsets) <= band
    picked = coeffs[:, :, np.clip(offsets + band, 0, width - 1)]
    blocks = np.where(inside, picked, 0.0)
    size = 2 * h_out + 1
    data = blocks.transpose(0, 2, 1, 3).reshape(m * size, n * size)
    return ToeplitzOperator(data, m, n, h_out)


def toeplitz(phasors: PhasorVector, h_out: int) -> ToeplitzOperator:
    """Toeplitz lift of a vector signal: one stacked scalar block per channel."""
    return toeplitz_blocks(phasors.coeffs[:, None, :], h_out)


def n_operator(channels: int, h: int, omega: float) -> ToeplitzOperator:
    """N = Id_channels (x) diag(j w k), the derivative of the Fourier kernel."""
    diagonal = np.tile(1j * omega * harmonic_orders(h), channels)
    return ToeplitzOperator(np.diag(diagonal), channels, channels, h)


def phase_shift(alpha: float, h: int) -> ToeplitzOperator:
    """S_alpha = diag(exp(j k alpha)); phasors of u(t - a T) are S_{-2 pi a} U."""
    return ToeplitzOperator(np.diag(np.exp(1j * alpha * harmonic_orders(h))), 1, 1, h)


def truncated_product(a: ToeplitzOperator, b: ToeplitzOperator) -> ToeplitzOperator:
    """Plain product of truncated operators.

    Only the central orders |k| <= h - band(A) - band(B) equal the lift of
    the product of the underlying matrix functions.
    """
    if a.n != b.m or a.h != b.h:
        raise ValueError(f"cannot multiply {a.m}x{a.n}@{a.h} by {b.m}x{b.n}@{b.h}")
    return ToeplitzOperator(a.data @ b.data, a.m, b.n, a.h)
