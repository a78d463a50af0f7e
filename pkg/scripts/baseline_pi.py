#!/usr/bin/env python3
# ABOUTME: Cascaded PI comparison controller: energy-based voltage loop over a dq current loop
# ABOUTME: Reference low-pass, filtered power feedforward, optional 150 Hz notch and anti-windup

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from converter_model import (
    PARK_SCALE,
    ZERO_SEQUENCE_DUTY,
    ConverterParams,
    DutyCycle,
    inverse_park,
    park,
    power_coefficient,
)
from controller import PllConfig, PllState, pll_step
from filters import DiscreteFilter, derivative_filter, lowpass2_filter, notch_filter

logger = logging.getLogger(__name__)

CURRENT_BANDWIDTH = 6280.0
VOLTAGE_BANDWIDTH = 627.0
VOLTAGE_DAMPING = 0.707
REFERENCE_CUTOFF = 62.0


@dataclass(frozen=True)
class PiCascadeConfig:
    """Gains and filter settings of the PI cascade."""

    K_P_i: float
    K_I_i: float
    K_P_v: float
    K_I_v: float
    omega_cons: float = REFERENCE_CUTOFF
    notch_enabled: bool = False
    notch_omega: float = 2 * np.pi * 150
    notch_zeta: float = 0.5
    derivative_pole_factor: float = 10.0

    def __post_init__(self):
        for name in ("K_P_i", "K_I_i", "K_P_v", "K_I_v", "omega_cons", "notch_omega", "notch_zeta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")

    @classmethod
    def default(cls, p: ConverterParams, notch: bool = False, **overrides) -> "PiCascadeConfig":
        """Bench tuning: current loop at 6280 rad/s, energy loop zeta=0.707 at 627 rad/s."""
        k_p_i = p.L * CURRENT_BANDWIDTH
        k_p_v = 2 * VOLTAGE_DAMPING * VOLTAGE_BANDWIDTH
        cfg = cls(
            K_P_i=k_p_i,
            K_I_i=k_p_i * CURRENT_BANDWIDTH,
            K_P_v=k_p_v,
            K_I_v=k_p_v * VOLTAGE_BANDWIDTH,
            notch_enabled=notch,
        )
        return replace(cfg, **overrides)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class PiCascadeState:
    """Integrators and filter delay lines of one PI controller instance."""

    energy_integral: float
    current_integral: np.ndarray
    reference: DiscreteFilter
    feedforward: DiscreteFilter
    notch: DiscreteFilter | None
    saturated_steps: int = 0
    steps: int = 0
    last_i_ref: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @classmethod
    def start(cls, cfg: PiCascadeConfig, p: ConverterParams, Ts: float, v_ref: float, power0: float = 0.0) -> "PiCascadeState":
        """Filters at rest on v_ref; power0 preloads the energy integrator for a bumpless start."""
        reference = lowpass2_filter(cfg.omega_cons, VOLTAGE_DAMPING, Ts)
        reference.reset(v_ref, v_ref)
        feedforward = derivative_filter(cfg.derivative_pole_factor * cfg.omega_cons, Ts)
        feedforward.reset(0.0, 0.5 * p.C * v_ref ** 2)
        notch = None
        if cfg.notch_enabled:
            notch = notch_filter(cfg.notch_omega, cfg.notch_zeta, Ts)
            notch.reset(power0, power0)
        return cls(
            energy_integral=float(power0),
            current_integral=np.zeros(2),
            reference=reference,
            feedforward=feedforward,
            notch=notch,
        )


def notch_step(u: float, notch: DiscreteFilter | None) -> float:
    """Pass u through the notch, or unchanged when the notch is disabled."""
    return u if notch is None else notch.step(u)


def power_to_current_ref(P_f: float, e_dq: np.ndarray, scale: float = PARK_SCALE) -> np.ndarray:
    """i_dq reference drawing P_f from the grid at unit power factor.

    The grid delivers -k e_d i_d, so i_d_ref = -P_f / (k e_d) with e_d < 0.
    """
    e_d = float(e_dq[0])
    if abs(e_d) < 1e-9:
        return np.zeros(2)
    return np.array([-P_f / (power_coefficient(scale) * e_d), 0.0])


def decoupling_feedforward(i_dq: np.ndarray, e_dq: np.ndarray, omega: float, L: float) -> np.ndarray:
    """e_dq + L w R i_dq: the voltage the arms must oppose to hold i_dq constant, losses aside."""
    return e_dq + omega * L * np.array([-i_dq[1], i_dq[0]])


def pi_baseline_step(
    x: np.ndarray,
    e_dq: np.ndarray,
    theta_hat: float,
    v_ref: float,
    cfg: PiCascadeConfig,
    state: PiCascadeState,
    Ts: float,
    p: ConverterParams,
    omega_hat: float | None = None,
    scale: float = PARK_SCALE,
) -> DutyCycle:
    """One control period of the cascade.

    v_ref -> low-pass -> C v^2/2 -> energy PI (+ filtered dW_ref/dt) -> notch
    -> P/i_dq -> current PI -> + e_dq + L w R i_dq decoupling -> d_dq -> abc.
    Integrators hold while the modulator is saturated.
    """
    omega = p.omega if omega_hat is None else omega_hat
    v_dc = float(x[3])
    i_dq = park(x[:3], theta_hat, scale)

    v_filtered = state.reference.step(v_ref)
    w_ref = 0.5 * p.C * v_filtered ** 2
    energy_error = w_ref - 0.5 * p.C * v_dc ** 2
    power = cfg.K_P_v * energy_error + state.energy_integral + state.feedforward.step(w_ref)
    power = notch_step(power, state.notch)

    i_ref = power_to_current_ref(power, e_dq, scale)
    current_error = i_ref - i_dq
    v_star = cfg.K_P_i * current_error + state.current_integral
    u = v_star + decoupling_feedforward(i_dq, e_dq, omega, p.L)
    d_dq = -u / v_dc if v_dc > 1e-6 else np.zeros(2)
    d_abc = ZERO_SEQUENCE_DUTY + inverse_park(d_dq, theta_hat, scale)

    saturated = bool(np.any(d_abc < 0.0) or np.any(d_abc > 1.0))
    if saturated:
        state.saturated_steps += 1
    else:
        state.energy_integral += Ts * cfg.K_I_v * energy_error
        state.current_integral = state.current_integral + Ts * cfg.K_I_i * current_error
    state.steps += 1
    state.last_i_ref = i_ref
    return DutyCycle(np.clip(d_abc, 0.0, 1.0))


class PiController:
    """Runtime wrapper with the same reset()/step() contract as HarmonicController."""

    def __init__(self, p: ConverterParams, cfg: PiCascadeConfig, Ts: float, use_pll: bool = True,
                 pll_config: PllConfig = PllConfig(), power0: float = 0.0):
        self.params = p
        self.cfg = cfg
        self.Ts = Ts
        self.use_pll = use_pll
        self.pll_config = pll_config
        self.power0 = power0
        self.pll = None
        self.state = PiCascadeState.start(cfg, p, Ts, p.v_dc_ref, power0)

    def reset(self, theta0: float = 0.0, omega0: float | None = None) -> None:
        omega0 = omega0 or self.params.omega
        self.pll = PllState.start(theta0, omega0, self.Ts, self.pll_config) if self.use_pll else None
        self.state = PiCascadeState.start(self.cfg, self.params, self.Ts, self.params.v_dc_ref, self.power0)

    def step(self, x: np.ndarray, e_abc: np.ndarray, theta: float, v_ref: float | None = None) -> np.ndarray:
        if self.pll is not None:
            theta_hat, omega_hat = self.pll.theta_hat, self.pll.omega_hat
        else:
            theta_hat, omega_hat = theta, self.params.omega
        e_dq = park(e_abc, theta_hat)
        v_ref = self.params.v_dc_ref if v_ref is None else v_ref
        duty = pi_baseline_step(x, e_dq, theta_hat, v_ref, self.cfg, self.state, self.Ts, self.params, omega_hat)
        if self.pll is not None:
            pll_step(e_abc, self.pll, self.Ts, self.params.E_rms, self.pll_config)
        return duty.d_abc

    def observe(self) -> dict:
        return {
            "z": np.zeros(0),
            "theta_hat": self.pll.theta_hat if self.pll else np.nan,
            "omega_hat": self.pll.omega_hat if self.pll else np.nan,
        }
