#!/usr/bin/env python3
# ABOUTME: Periodic matrices and consistent truncated solvers for harmonic Lyapunov/Sylvester equations
# ABOUTME: Closed-loop spectra in the fundamental strip, Hurwitz tests and Floquet cross-checks

from dataclasses import dataclass, field
import logging
import time

import numpy as np
from scipy.linalg import expm

from harmonic_core import (
    DEFAULT_ORDER,
    NumericalError,
    ToeplitzOperator,
    harmonic_orders,
    n_operator,
    toeplitz_blocks,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_EXTRA = 4
DEFAULT_MAX_ORDER = 64
SPD_GRID = 100
FLOQUET_STEPS = 1024
FLOQUET_FACTORS = 64
GAUSS_NODES = np.array([0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6])


class NotHurwitzError(NumericalError):
    """The harmonic state operator has eigenvalues with non-negative real part."""

    pass


class SolverConvergenceError(NumericalError):
    """Consistent truncation did not certify a solution before the maximum order."""

    pass


@dataclass(frozen=True)
class PeriodicMatrix:
    """T-periodic matrix function P(t) = sum_k P_k exp(j k w t).

    coeffs[:, :, k + h] holds P_k, the same layout toeplitz_blocks consumes.
    """

    coeffs: np.ndarray
    omega: float

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.ndim == 2:
            coeffs = coeffs[:, :, None]
        if coeffs.ndim != 3 or coeffs.shape[2] % 2 != 1:
            raise ValueError(f"coefficients must be rows x cols x (2h+1), got {coeffs.shape}")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def constant(cls, matrix: np.ndarray, omega: float) -> "PeriodicMatrix":
        return cls(np.asarray(matrix, dtype=complex)[:, :, None], omega)

    @classmethod
    def from_samples(cls, fn, omega: float, h: int, n_samples: int | None = None) -> "PeriodicMatrix":
        """Fourier coefficients of theta -> fn(theta) by an N-point FFT over one period.

        Exact when fn is band-limited to N - h - 1 harmonics.
        """
        n_samples = n_samples or max(4 * h + 4, 32)
        thetas = 2 * np.pi * np.arange(n_samples) / n_samples
        values = np.array([np.asarray(fn(theta), dtype=float) for theta in thetas])
        if values.ndim == 2:
            values = values[:, :, None]
        spectrum = np.fft.fft(values, axis=0) / n_samples
        picked = spectrum[harmonic_orders(h) % n_samples]
        return cls(np.moveaxis(picked, 0, -1), omega)

    @property
    def h(self) -> int:
        return (self.coeffs.shape[2] - 1) // 2

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[:2]

    def coefficient(self, k: int) -> np.ndarray:
        if abs(k) > self.h:
            return np.zeros(self.shape, dtype=complex)
        return self.coeffs[:, :, k + self.h]

    def __call__(self, theta):
        """Evaluate at angle theta = w t; arrays of angles give shape (n, rows, cols)."""
        phases = np.exp(1j * np.multiply.outer(np.asarray(theta, dtype=float), harmonic_orders(self.h)))
        value = np.tensordot(phases, self.coeffs, axes=([-1], [2]))
        return value.real if self.is_real() else value

    def cos_sin_form(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(P_0, P_c, P_s) with P(theta) = P_0 + sum P_c[k-1] cos(k theta) + P_s[k-1] sin(k theta)."""
        positive = np.moveaxis(self.coeffs[:, :, self.h + 1:], -1, 0)
        return self.coeffs[:, :, self.h].real, 2 * positive.real, -2 * positive.imag

    def is_real(self, tol: float = 1e-9) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.coeffs))))
        return bool(np.max(np.abs(self.coeffs - np.conj(self.coeffs[:, :, ::-1]))) <= tol * scale)

    def truncate(self, h: int) -> "PeriodicMatrix":
        out = np.zeros(self.shape + (2 * h + 1,), dtype=complex)
        keep = min(h, self.h)
        out[:, :, h - keep:h + keep + 1] = self.coeffs[:, :, self.h - keep:self.h + keep + 1]
        return PeriodicMatrix(out, self.omega)

    def transpose(self) -> "PeriodicMatrix":
        return PeriodicMatrix(self.coeffs.transpose(1, 0, 2), self.omega)

    @property
    def T(self) -> "PeriodicMatrix":
        return self.transpose()

    def derivative(self) -> "PeriodicMatrix":
        """dP/dt, coefficients multiplied by j w k."""
        return PeriodicMatrix(self.coeffs * (1j * self.omega * harmonic_orders(self.h)), self.omega)

    def toeplitz(self, h: int) -> ToeplitzOperator:
        return toeplitz_blocks(self.coeffs, h)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def _aligned(self, other: "PeriodicMatrix") -> tuple[np.ndarray, np.ndarray]:
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        h = max(self.h, other.h)
        return self.truncate(h).coeffs, other.truncate(h).coeffs

    def __add__(self, other: "PeriodicMatrix") -> "PeriodicMatrix":
        a, b = self._aligned(other)
        return PeriodicMatrix(a + b, self.omega)

    def __sub__(self, other: "PeriodicMatrix") -> "PeriodicMatrix":
        a, b = self._aligned(other)
        return PeriodicMatrix(a - b, self.omega)

    def __neg__(self) -> "PeriodicMatrix":
        return PeriodicMatrix(-self.coeffs, self.omega)

    def __mul__(self, scalar: complex) -> "PeriodicMatrix":
        return PeriodicMatrix(self.coeffs * scalar, self.omega)

    __rmul__ = __mul__

    def __matmul__(self, other: "PeriodicMatrix") -> "PeriodicMatrix":
        """Pointwise product in time, a convolution of the coefficient sequences."""
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"cannot multiply {self.shape} by {other.shape}")
        width = 2 * other.h + 1
        out = np.zeros((self.shape[0], other.shape[1], 2 * (self.h + other.h) + 1), dtype=complex)
        for i in range(2 * self.h + 1):
            out[:, :, i:i + width] += np.einsum("ij,jlk->ilk", self.coeffs[:, :, i], other.coeffs)
        return PeriodicMatrix(out, self.omega)

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "h": self.h,
            "rows": self.shape[0],
            "cols": self.shape[1],
            "re": self.coeffs.real.tolist(),
            "im": self.coeffs.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicMatrix":
        coeffs = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        return cls(coeffs.reshape(data["rows"], data["cols"], 2 * data["h"] + 1), float(data["omega"]))


@dataclass
class SolveReport:
    """Certificate of a consistent-truncation solve."""

    equation: str
    orders: list[int] = field(default_factory=list)
    differences: list[float] = field(default_factory=list)
    residual: float = float("nan")
    min_eigenvalue: float | None = None
    wall_time: float = 0.0

    @property
    def certified_order(self) -> int:
        return self.orders[-1]

    def to_dict(self) -> dict:
        return {
            "equation": self.equation,
            "orders": self.orders,
            "differences": self.differences,
            "residual": self.residual,
            "min_eigenvalue": self.min_eigenvalue,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a truncated harmonic operator inside the fundamental strip.

    expected is the state dimension: a faithful truncation has that many
    eigenvalues in the strip, and `missing` counts the ones it lost.
    """

    eigenvalues: np.ndarray
    boundary_flag: np.ndarray
    omega: float
    expected: int = 0

    @property
    def missing(self) -> int:
        return max(0, self.expected - len(self.eigenvalues))

    @property
    def damping(self) -> np.ndarray:
        magnitude = np.abs(self.eigenvalues)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(magnitude > 0, -self.eigenvalues.real / magnitude, 0.0)

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real))

    @property
    def min_damping(self) -> float:
        return float(np.min(self.damping))


def _vec_layout(coeffs: np.ndarray, h: int) -> np.ndarray:
    """(rows, cols, 2h'+1) -> channel-major (rows*cols, 2h+1) with column-major vec channels."""
    rows, cols, width = coeffs.shape
    padded = np.zeros((rows, cols, 2 * h + 1), dtype=complex)
    keep = min(h, (width - 1) // 2)
    band = (width - 1) // 2
    padded[:, :, h - keep:h + keep + 1] = coeffs[:, :, band - keep:band + keep + 1]
    return padded.transpose(1, 0, 2).reshape(rows * cols, 2 * h + 1)


def _unvec_layout(stacked: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return stacked.reshape(cols, rows, -1).transpose(1, 0, 2)


def _solve_truncated(kron: np.ndarray, rhs: np.ndarray, omega: float, n_sign: float, order: int, shape) -> np.ndarray:
    """Solve (K + n_sign * N) vec = -rhs at one truncation order."""
    channels = kron.shape[0]
    system = toeplitz_blocks(kron, order).data + n_sign * n_operator(channels, order, omega).data
    try:
        solution = np.linalg.solve(system, -_vec_layout(rhs, order).reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise SolverConvergenceError(f"truncated system of order {order} is singular") from exc
    return _unvec_layout(solution.reshape(channels, 2 * order + 1), *shape)


def _escalate(assemble, h_keep: int, h_extra: int, max_order: int, tol: float, report: SolveReport) -> np.ndarray:
    """Raise the solve order by two until the central band stops moving."""
    previous = None
    order = h_keep + h_extra
    while order <= max_order:
        full = assemble(order)
        central = full[:, :, order - h_keep:order + h_keep + 1]
        report.orders.append(order)
        if previous is not None:
            scale = max(float(np.max(np.abs(central))), np.finfo(float).tiny)
            difference = float(np.max(np.abs(central - previous))) / scale
            report.differences.append(difference)
            logger.debug("%s order %d: inter-order difference %.3e", report.equation, order, difference)
            if difference < tol:
                return central
        previous = central
        order += 2
    raise SolverConvergenceError(
        f"{report.equation} did not converge to {tol:g} by order {max_order} "
        f"(last difference {report.differences[-1] if report.differences else float('nan'):.3e})"
    )


def _symmetrize(coeffs: np.ndarray) -> np.ndarray:
    """Force P_k = P_k' and P_-k = conj(P_k): P(t) real symmetric."""
    sym = 0.5 * (coeffs + coeffs.transpose(1, 0, 2))
    return 0.5 * (sym + np.conj(sym[:, :, ::-1]))


def _realify(coeffs: np.ndarray) -> np.ndarray:
    return 0.5 * (coeffs + np.conj(coeffs[:, :, ::-1]))


def harmonic_operator(a: PeriodicMatrix, h: int) -> ToeplitzOperator:
    """The harmonic state operator T(A) - N at order h."""
    return a.toeplitz(h) - n_operator(a.shape[0], h, a.omega)


def solve_lyapunov(
    a: PeriodicMatrix,
    q: PeriodicMatrix,
    h_keep: int = DEFAULT_ORDER,
    tol: float = DEFAULT_TOL,
    h_extra: int = DEFAULT_EXTRA,
    max_order: int = DEFAULT_MAX_ORDER,
) -> tuple[PeriodicMatrix, SolveReport]:
    """Periodic solution of -P' = A'P + PA + Q by consistent truncation.

    In harmonic form this is (T(A) - N)* P + P (T(A) - N) + Q = 0. The
    system is assembled at increasing orders and only the central h_keep
    band is returned once two consecutive orders agree to tol.

    Raises:
        NotHurwitzError: If T(A) - N has eigenvalues in the closed right half-plane
        SolverConvergenceError: If no order up to max_order certifies, or P is not
            positive definite
    """
    started = time.perf_counter()
    hurwitz, margin = is_hurwitz(harmonic_operator(a, max(h_keep, a.h + 2)), a.omega)
    if not hurwitz:
        raise NotHurwitzError(f"state operator is not Hurwitz (stability margin {margin:.4g})")

    n = a.shape[0]
    eye = np.eye(n)
    kron = np.stack(
        [np.kron(eye, a.coefficient(k).T) + np.kron(a.coefficient(k).T, eye) for k in harmonic_orders(a.h)],
        axis=-1,
    )
    report = SolveReport("lyapunov")
    central = _escalate(
        lambda order: _solve_truncated(kron, q.coeffs, a.omega, 1.0, order, (n, n)),
        h_keep, h_extra, max_order, tol, report,
    )
    p = PeriodicMatrix(_symmetrize(central), a.omega)

    grid = 2 * np.pi * np.arange(SPD_GRID) / SPD_GRID
    report.min_eigenvalue = float(min(np.linalg.eigvalsh(value)[0] for value in p(grid)))
    if report.min_eigenvalue <= 0:
        raise SolverConvergenceError(f"Lyapunov solution is not positive definite (min eigenvalue {report.min_eigenvalue:.3e})")
    report.residual = harmonic_lyapunov_residual(a, p, q)
    report.wall_time = time.perf_counter() - started
    logger.debug("lyapunov certified at order %d in %.3f s", report.certified_order, report.wall_time)
    return p, report


def solve_sylvester(
    o: PeriodicMatrix,
    lc: PeriodicMatrix,
    a: PeriodicMatrix,
    h_keep: int = DEFAULT_ORDER,
    tol: float = DEFAULT_TOL,
    h_extra: int = DEFAULT_EXTRA,
    max_order: int = DEFAULT_MAX_ORDER,
) -> tuple[PeriodicMatrix, SolveReport]:
    """Periodic solution of M' = O M - M A + L C by consistent truncation.

    lc is the product L(t) C(t); in harmonic form the equation reads
    (O - N) M - M (T(A) - N) + T(LC) = 0.

    Raises:
        SolverConvergenceError: On a singular truncated system or non-convergence
    """
    started = time.perf_counter()
    rows, cols = o.shape[0], a.shape[0]
    if lc.shape != (rows, cols):
        raise ValueError(f"L C must be {rows}x{cols}, got {lc.shape}")
    band = max(o.h, a.h)
    o_full, a_full = o.truncate(band), a.truncate(band)
    kron = np.stack(
        [
            np.kron(np.eye(cols), o_full.coefficient(k)) - np.kron(a_full.coefficient(k).T, np.eye(rows))
            for k in harmonic_orders(band)
        ],
        axis=-1,
    )
    report = SolveReport("sylvester")
    central = _escalate(
        lambda order: _solve_truncated(kron, lc.coeffs, a.omega, -1.0, order, (rows, cols)),
        h_keep, h_extra, max_order, tol, report,
    )
    m = PeriodicMatrix(_realify(central), a.omega)
    report.residual = harmonic_sylvester_residual(o, lc, a, m)
    report.wall_time = time.perf_counter() - started
    logger.debug("sylvester certified at order %d in %.3f s", report.certified_order, report.wall_time)
    return m, report


def _central_residual(residual: PeriodicMatrix, reference: PeriodicMatrix, h: int) -> float:
    scale = max(reference.max_abs(), np.finfo(float).tiny)
    return residual.truncate(max(h, 0)).max_abs() / scale


def harmonic_lyapunov_residual(a: PeriodicMatrix, p: PeriodicMatrix, q: PeriodicMatrix) -> float:
    """Coefficient residual on the orders where the truncated products are exact."""
    residual = p.derivative() + a.T @ p + p @ a + q
    return _central_residual(residual, q, p.h - a.h)


def harmonic_sylvester_residual(o: PeriodicMatrix, lc: PeriodicMatrix, a: PeriodicMatrix, m: PeriodicMatrix) -> float:
    residual = m.derivative() - o @ m + m @ a - lc
    return _central_residual(residual, lc, m.h - max(a.h, o.h))


def lyapunov_residual(a: PeriodicMatrix, p: PeriodicMatrix, q: PeriodicMatrix, n_grid: int = SPD_GRID) -> float:
    """max over a time grid of |P' + A'P + PA + Q|, relative to max |Q|."""
    grid = 2 * np.pi * np.arange(n_grid) / n_grid
    p_t, a_t, q_t = p(grid), a(grid), q(grid)
    residual = p.derivative()(grid) + np.transpose(a_t, (0, 2, 1)) @ p_t + p_t @ a_t + q_t
    return float(np.max(np.abs(residual)) / max(np.max(np.abs(q_t)), np.finfo(float).tiny))


def sylvester_residual(
    o: PeriodicMatrix, lc: PeriodicMatrix, a: PeriodicMatrix, m: PeriodicMatrix, n_grid: int = SPD_GRID
) -> float:
    """max over a time grid of |M' - OM + MA - LC|, relative to max |LC|."""
    grid = 2 * np.pi * np.arange(n_grid) / n_grid
    m_t = m(grid)
    residual = m.derivative()(grid) - o(grid) @ m_t + m_t @ a(grid) - lc(grid)
    return float(np.max(np.abs(residual)) / max(np.max(np.abs(lc(grid))), np.finfo(float).tiny))


def _strip(eigenvalues: np.ndarray, omega: float) -> np.ndarray:
    # Ties on the strip boundary go to +w/2
    slack = 1e-9 * omega
    inside = (eigenvalues.imag > -omega / 2 + slack) & (eigenvalues.imag <= omega / 2 + slack)
    return eigenvalues[inside]


def closed_loop_spectrum(op: ToeplitzOperator, omega: float, match_tol: float = 1e-6) -> Spectrum:
    """Eigenvalues of a truncated harmonic operator with imaginary part in (-w/2, w/2].

    An eigenvalue is flagged when the order h-2 truncation has no eigenvalue
    within match_tol (relative) of it: such values depend on where the
    operator was cut rather than on the system.
    Fewer than n strip eigenvalues are reported through Spectrum.missing.
    """
    if op.m != op.n:
        raise ValueError("spectrum requires a square operator")
    eigenvalues = _strip(np.linalg.eigvals(op.data), omega)
    eigenvalues = eigenvalues[np.lexsort((eigenvalues.imag, eigenvalues.real))]
    if op.h >= 2:
        reference = _strip(np.linalg.eigvals(op.central(op.h - 2).data), omega)
    else:
        reference = np.array([], dtype=complex)
    flags = np.array([
        reference.size == 0 or np.min(np.abs(reference - value)) > match_tol * max(1.0, abs(value))
        for value in eigenvalues
    ], dtype=bool)
    if flags.any():
        logger.debug("%d strip eigenvalues are sensitive to the truncation order", int(flags.sum()))
    spectrum = Spectrum(eigenvalues, flags, omega, expected=op.n)
    if spectrum.missing:
        logger.warning(
            "%d of %d strip eigenvalues missing at order %d: their modes lie beyond the truncated harmonics",
            spectrum.missing, op.n, op.h,
        )
    return spectrum


def is_hurwitz(op: ToeplitzOperator, omega: float) -> tuple[bool, float]:
    """(stable, margin) where margin = -max real part over the fundamental strip."""
    spectrum = closed_loop_spectrum(op, omega)
    margin = -spectrum.max_real
    return bool(margin > 0), float(margin)


def fold_to_strip(values: np.ndarray, omega: float) -> np.ndarray:
    """Shift imaginary parts by multiples of w into (-w/2, w/2]."""
    values = np.asarray(values, dtype=complex)
    imag = values.imag - omega * np.ceil((values.imag - omega / 2) / omega)
    return values.real + 1j * imag


def _periodic_samples(a, thetas: np.ndarray) -> np.ndarray:
    if isinstance(a, PeriodicMatrix):
        return np.asarray(a(thetas))
    return np.array([np.asarray(a(theta)) for theta in thetas])


def _merge_branches(values: np.ndarray, n: int, copies: int, omega: float) -> tuple[np.ndarray, float]:
    """Average n groups of `copies` values that agree up to multiples of j w."""
    remaining = np.asarray(values, dtype=complex)
    merged = []
    spread = 0.0
    for _ in range(n):
        gap = remaining - remaining[0]
        gap = gap - 1j * omega * np.round(gap.imag / omega)
        nearest = np.argsort(np.abs(gap))[:copies]
        merged.append(remaining[0] + np.mean(gap[nearest]))
        spread = max(spread, float(np.max(np.abs(gap[nearest]))))
        remaining = np.delete(remaining, nearest)
    return fold_to_strip(np.array(merged), omega), spread


def floquet_exponents(a, omega: float, steps: int = FLOQUET_STEPS, factors: int = FLOQUET_FACTORS) -> np.ndarray:
    """Floquet exponents of x' = A(w t) x, imaginary parts in (-w/2, w/2].

    a is a PeriodicMatrix or a callable theta -> matrix. The period is cut
    into `steps` fourth-order Magnus steps (two Gauss nodes each) grouped into
    `factors` sub-interval propagators Phi_k. The block-cyclic matrix with
    Phi_k on its subdiagonal has eigenvalues mu with mu^K equal to the
    monodromy eigenvalues, each mu of comparable size, so modes decaying
    far faster than the slowest one are resolved without underflow.
    """
    if steps % factors:
        raise ValueError(f"steps ({steps}) must be a multiple of factors ({factors})")
    period = 2 * np.pi / omega
    h = period / steps
    nodes = (np.arange(steps)[:, None] + GAUSS_NODES[None, :]) * h
    samples = _periodic_samples(a, omega * nodes.ravel())
    n = samples.shape[-1]
    first, second = samples[0::2], samples[1::2]
    magnus = h / 2 * (first + second) + np.sqrt(3) * h ** 2 / 12 * (second @ first - first @ second)
    propagators = expm(magnus)

    per_factor = steps // factors
    cyclic = np.zeros((n * factors, n * factors), dtype=propagators.dtype)
    for k in range(factors):
        phi = np.eye(n, dtype=propagators.dtype)
        for step in propagators[k * per_factor:(k + 1) * per_factor]:
            phi = step @ phi
        row = (k + 1) % factors
        cyclic[row * n:(row + 1) * n, k * n:(k + 1) * n] = phi

    mu = np.linalg.eigvals(cyclic).astype(complex)
    if np.any(mu == 0):
        raise NumericalError("singular sub-interval propagator in the monodromy factorization")
    exponents, spread = _merge_branches(fold_to_strip(factors * np.log(mu) / period, omega), n, factors, omega)
    logger.debug("Floquet branches agree to %.2e", spread)
    exponents = exponents[np.lexsort((exponents.imag, exponents.real))]
    return exponents


def harmonic_content(p: PeriodicMatrix) -> np.ndarray:
    """max |P_k| over entries for k = 0..h, the decay profile of a periodic gain."""
    return np.array([float(np.max(np.abs(p.coefficient(k)))) for k in range(p.h + 1)])
