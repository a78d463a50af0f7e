#!/usr/bin/env python3
# ABOUTME: Fixed-step closed-loop simulator of the converter with scenario events and load models
# ABOUTME: RK4 plant under zero-order-held duty, THD/HC/phasor metrics and CSV trace IO

from dataclasses import dataclass, field
from functools import cached_property
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from harmonic_core import NumericalError, sliding_fourier
from converter_model import (
    C33,
    ConverterParams,
    compute_setpoint,
    grid_voltage,
    park,
    power_coefficient,
    stored_energy,
)
from controller import (
    ControllerArtifact,
    HarmonicController,
    PllConfig,
    Tuning,
    control_forwarding,
    lyapunov_value,
    synthesize,
)
from baseline_pi import PiCascadeConfig, PiController

logger = logging.getLogger(__name__)

EVENT_ACTIONS = ("step_i_sink", "sinusoid", "step_v_ref", "grid_frequency")
INITIAL_MODES = ("diode", "setpoint", "custom")

# name -> (integral action, rejected harmonics)
HARMONIC_CONTROLLERS = {
    "d1": (False, ()),
    "d2": (True, ()),
    "d3": (True, (3,)),
    "d3+6th": (True, (3, 6)),
}
PI_CONTROLLERS = {"pi": False, "pi_notch": True}
CONTROLLER_NAMES = tuple(HARMONIC_CONTROLLERS) + tuple(PI_CONTROLLERS)

THD_ORDER = 25
UNDEFINED_FUNDAMENTAL = 1e-9

TRACE_COLUMNS = (
    "t", "i_a", "i_b", "i_c", "v_dc", "i_d", "i_q", "d_a", "d_b", "d_c",
    "theta_hat", "omega_hat", "i_sink", "i_dc", "thd_ia", "hc_vdc",
)


class SimulationError(NumericalError):
    """The integration produced a non-finite state."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (record {index})")
        self.index = index


@dataclass(frozen=True)
class Event:
    """A scenario event.

    value is the i_sink step (A), the sinusoid peak (A), the v_ref step (V) or
    the new grid frequency (Hz); harmonics adds (multiple, relative amplitude)
    components to an injected sinusoid to mimic a non-ideal DC load.
    """

    time: float
    action: str
    value: float
    frequency: float = 0.0
    harmonics: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.action not in EVENT_ACTIONS:
            raise ValueError(f"unknown event action {self.action!r}; valid: {', '.join(EVENT_ACTIONS)}")
        if self.action == "sinusoid" and not self.frequency > 0:
            raise ValueError("sinusoid events need a positive frequency")
        if self.action == "grid_frequency" and not self.value > 0:
            raise ValueError("grid frequency must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "Event":
        harmonics = tuple((int(m), float(a)) for m, a in (data.get("harmonics") or {}).items())
        return cls(
            time=float(data["time"]),
            action=data["action"],
            value=float(data["value"]),
            frequency=float(data.get("frequency", 0.0)),
            harmonics=harmonics,
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    dt: float = 1e-6
    Ts: float = 50e-6
    initial: str = "diode"
    initial_state: tuple[float, ...] | None = None
    events: tuple[Event, ...] = ()
    controller: str = "d3"
    pll: bool = True
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if not (self.dt > 0 and self.Ts > 0):
            raise ValueError("dt and Ts must be positive")
        ratio = self.Ts / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ValueError(f"Ts={self.Ts:g} is not an integer multiple of dt={self.dt:g}")
        if self.initial not in INITIAL_MODES:
            raise ValueError(f"initial must be one of {', '.join(INITIAL_MODES)}")
        if self.initial == "custom" and (self.initial_state is None or len(self.initial_state) != 4):
            raise ValueError("custom initial mode needs a 4-element initial_state")
        if self.controller not in CONTROLLER_NAMES and self.controller != "fixed":
            raise ValueError(f"unknown controller {self.controller!r}; valid: {', '.join(CONTROLLER_NAMES)}")
        times = [event.time for event in self.events]
        if times != sorted(times):
            raise ValueError("events must be sorted by time")
        if any(t < 0 or t > self.duration for t in times):
            raise ValueError("event times must lie within [0, duration]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def substeps(self) -> int:
        return int(round(self.Ts / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.Ts))

    @classmethod
    def from_dict(cls, name: str, data: dict) -> "Scenario":
        initial_state = data.get("initial_state")
        return cls(
            name=name,
            duration=float(data["duration"]),
            dt=float(data.get("dt", 1e-6)),
            Ts=float(data.get("Ts", 50e-6)),
            initial=data.get("initial", "diode"),
            initial_state=tuple(float(v) for v in initial_state) if initial_state is not None else None,
            events=tuple(Event.from_dict(event) for event in data.get("events") or []),
            controller=data.get("controller", "d3"),
            pll=bool(data.get("pll", True)),
            noise_std=float(data.get("noise_std", 0.0)),
            seed=int(data.get("seed", 0)),
        )


class LoadProfile:
    """i_sink(t) assembled from step and sinusoid events (already quantized to the control grid)."""

    def __init__(self, base: float, events):
        self.base = base
        self.steps = [(e.time, e.value) for e in events if e.action == "step_i_sink"]
        self.waves = []
        for event in events:
            if event.action == "sinusoid":
                components = [(1, event.value)] + [(m, rel * event.value) for m, rel in event.harmonics]
                self.waves.append((event.time, 2 * np.pi * event.frequency, components))

    def __call__(self, t):
        """i_sink at time t; arrays of times give an array."""
        t = np.asarray(t, dtype=float)
        value = np.full(t.shape, self.base)
        for start, amount in self.steps:
            value = value + np.where(t >= start, amount, 0.0)
        for start, omega, components in self.waves:
            active = t >= start
            for multiple, amplitude in components:
                value = value + np.where(active, amplitude * np.sin(multiple * omega * (t - start)), 0.0)
        return value if value.ndim else float(value)


class FixedDutyController:
    """Open-loop modulator holding a constant duty vector."""

    def __init__(self, d_abc):
        self.d_abc = np.asarray(d_abc, dtype=float)

    def reset(self, theta0: float = 0.0, omega0: float | None = None) -> None:
        pass

    def step(self, x, e_abc, theta, v_ref=None) -> np.ndarray:
        return self.d_abc

    def observe(self) -> dict:
        return {"z": np.zeros(0), "theta_hat": np.nan, "omega_hat": np.nan}


def build_controller(
    name: str,
    model_params: ConverterParams,
    Ts: float,
    use_pll: bool = True,
    artifact: ControllerArtifact | None = None,
    tuning: Tuning | None = None,
    pi_config: PiCascadeConfig | None = None,
    initial: str = "diode",
):
    """Instantiate a runtime controller by name; harmonic designs synthesize unless an artifact is given."""
    if name in HARMONIC_CONTROLLERS:
        integral, objectives = HARMONIC_CONTROLLERS[name]
        if artifact is None:
            artifact = synthesize(model_params, objectives, tuning, integral=integral)
        return HarmonicController(artifact, Ts, use_pll=use_pll)
    if name in PI_CONTROLLERS:
        cfg = pi_config or PiCascadeConfig.default(model_params)
        if PI_CONTROLLERS[name] and not cfg.notch_enabled:
            cfg = PiCascadeConfig(**{**cfg.to_dict(), "notch_enabled": True})
        power0 = 0.0
        if initial == "setpoint":
            sp = compute_setpoint(model_params)
            power0 = -power_coefficient(sp.scale) * sp.e_dq[0] * sp.i_dq[0]
        return PiController(model_params, cfg, Ts, use_pll=use_pll, power0=power0)
    raise ValueError(f"unknown controller {name!r}; valid: {', '.join(CONTROLLER_NAMES)}")


def diode_init(p: ConverterParams) -> np.ndarray:
    """Bus charged to the line-to-line peak sqrt(6) E_rms by the diode bridge, no line current."""
    return np.array([0.0, 0.0, 0.0, math.sqrt(6.0) * p.E_rms])


def initial_state(scenario: Scenario, p: ConverterParams) -> np.ndarray:
    if scenario.initial == "diode":
        return diode_init(p)
    if scenario.initial == "setpoint":
        return compute_setpoint(p).x_e(0.0)
    return np.asarray(scenario.initial_state, dtype=float)


@dataclass
class SimulationTrace:
    """Per-control-step records of one run. Derived metric series are computed on demand.

    omega is the nominal pulsation the metric windows use; grid_omega is the
    grid pulsation actually applied at each step.
    """

    scenario: str
    controller: str
    omega: float
    Ts: float
    t: np.ndarray
    i_abc: np.ndarray
    v_dc: np.ndarray
    i_dq: np.ndarray
    d_abc: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    grid_omega: np.ndarray
    theta_hat: np.ndarray
    omega_hat: np.ndarray
    i_sink: np.ndarray
    i_dc: np.ndarray
    v_ref: np.ndarray
    energy_residual: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.size

    @cached_property
    def thd_ia(self) -> np.ndarray:
        return thd_series(self.i_abc[:, 0], self.t, self.omega)

    @cached_property
    def hc_vdc(self) -> np.ndarray:
        return hc_series(self.v_dc, self.t, self.omega)

    def phasor_magnitude(self, channel: str, k: int) -> np.ndarray:
        return phasor_magnitude_series(self.channel(channel), self.t, k, self.omega)

    def channel(self, name: str) -> np.ndarray:
        columns = {
            "i_a": self.i_abc[:, 0], "i_b": self.i_abc[:, 1], "i_c": self.i_abc[:, 2],
            "v_dc": self.v_dc, "i_d": self.i_dq[:, 0], "i_q": self.i_dq[:, 1],
        }
        if name not in columns:
            raise ValueError(f"unknown channel {name!r}")
        return columns[name]


def _undefined_like(t: np.ndarray) -> np.ndarray:
    return np.full(t.size, np.nan)


def _one_sided_phasors(signal: np.ndarray, t: np.ndarray, omega: float, h: int) -> tuple[np.ndarray, np.ndarray] | None:
    """(|X_k| for k = 0..h over time, index of the first defined sample) or None if too short."""
    period = 2 * np.pi / omega
    if t.size < 2:
        return None
    n_window = int(round(period / (t[1] - t[0])))
    if n_window >= t.size:
        return None
    trajectory = sliding_fourier(np.asarray(signal, dtype=float), t, period, h)
    magnitudes = np.abs(trajectory.coeffs[:, 0, h:])
    return magnitudes, t.size - len(trajectory)


def thd_series(signal: np.ndarray, t: np.ndarray, omega: float, k_max: int = THD_ORDER) -> np.ndarray:
    """sqrt(sum_{k=2..k_max} |X_k|^2) / |X_1| over the trailing period; NaN where undefined."""
    out = _undefined_like(np.asarray(t))
    phasors = _one_sided_phasors(signal, t, omega, k_max)
    if phasors is None:
        return out
    magnitudes, first = phasors
    fundamental = magnitudes[:, 1]
    harmonics = np.sqrt(np.sum(magnitudes[:, 2:] ** 2, axis=1))
    full_scale = max(float(np.max(np.abs(signal))), np.finfo(float).tiny)
    defined = fundamental > UNDEFINED_FUNDAMENTAL * full_scale
    values = np.full(fundamental.size, np.nan)
    values[defined] = harmonics[defined] / fundamental[defined]
    out[first:] = values
    return out


def hc_series(signal: np.ndarray, t: np.ndarray, omega: float, k_max: int = THD_ORDER) -> np.ndarray:
    """sum_{k=1..k_max} 2 |X_k|: the ripple amplitude carried by a nominally constant signal."""
    out = _undefined_like(np.asarray(t))
    phasors = _one_sided_phasors(signal, t, omega, k_max)
    if phasors is None:
        return out
    magnitudes, first = phasors
    out[first:] = 2.0 * np.sum(magnitudes[:, 1:], axis=1)
    return out


def phasor_magnitude_series(signal: np.ndarray, t: np.ndarray, k: int, omega: float) -> np.ndarray:
    """|X_k(t)| of one channel, NaN before the first full window."""
    out = _undefined_like(np.asarray(t))
    phasors = _one_sided_phasors(signal, t, omega, abs(k))
    if phasors is None:
        return out
    magnitudes, first = phasors
    out[first:] = magnitudes[:, abs(k)]
    return out


def _advance_plant(y: np.ndarray, d: np.ndarray, e_stage: np.ndarray, sink_stage: np.ndarray,
                   dt: float, p: ConverterParams) -> np.ndarray:
    """Classical RK4 over one control period with the duty held.

    y is [i_abc, v_dc, integral of the energy rate]; e_stage (rows of e_abc)
    and sink_stage hold the inputs every dt/2 across the period.
    """
    r, inv_l, inv_c, inv_rl = p.r, 1.0 / p.L, 1.0 / p.C, 1.0 / p.R_L
    d_a, d_b, d_c = (float(value) for value in d)
    mean = (d_a + d_b + d_c) / 3.0
    cd_a, cd_b, cd_c = d_a - mean, d_b - mean, d_c - mean
    e = e_stage.tolist()
    sink = sink_stage.tolist()

    def rates(i_a, i_b, i_c, v, stage):
        e_a, e_b, e_c = e[stage]
        i_dc = sink[stage] + v * inv_rl
        return (
            (-r * i_a - cd_a * v - e_a) * inv_l,
            (-r * i_b - cd_b * v - e_b) * inv_l,
            (-r * i_c - cd_c * v - e_c) * inv_l,
            (d_a * i_a + d_b * i_b + d_c * i_c - i_dc) * inv_c,
            -r * (i_a * i_a + i_b * i_b + i_c * i_c) - (e_a * i_a + e_b * i_b + e_c * i_c) - v * i_dc,
        )

    state = [float(value) for value in y]
    half = dt / 2
    for s in range(len(sink) // 2):
        k1 = rates(*state[:4], 2 * s)
        mid = [x + half * k for x, k in zip(state, k1)]
        k2 = rates(*mid[:4], 2 * s + 1)
        mid = [x + half * k for x, k in zip(state, k2)]
        k3 = rates(*mid[:4], 2 * s + 1)
        end = [x + dt * k for x, k in zip(state, k3)]
        k4 = rates(*end[:4], 2 * s + 2)
        state = [x + dt / 6 * (a + 2 * b + 2 * c + f) for x, a, b, c, f in zip(state, k1, k2, k3, k4)]
    return np.array(state)


def run(
    scenario: Scenario,
    params: ConverterParams,
    controller,
    pll_config: PllConfig = PllConfig(),
) -> SimulationTrace:
    """Simulate one scenario against plant params with a runtime controller.

    The plant state [i_abc, v_dc] plus the integral of the energy rate is
    advanced by classical RK4 at dt; the controller runs every Ts and its duty
    is held in between. The load draws i_sink(t) + v_dc / R_L. Events act at
    the first control instant at or after their time.

    Raises:
        SimulationError: If the state becomes non-finite
    """
    p = params
    Ts, dt, substeps, n = scenario.Ts, scenario.dt, scenario.substeps, scenario.n_steps
    quantized = [
        Event(math.ceil(e.time / Ts - 1e-9) * Ts, e.action, e.value, e.frequency, e.harmonics)
        for e in scenario.events
    ]
    load = LoadProfile(p.i_sink, quantized)
    rng = np.random.default_rng(scenario.seed)

    x = initial_state(scenario, p)
    y = np.append(x, 0.0)
    theta = 0.0
    omega = p.omega
    v_ref = p.v_dc_ref
    controller.reset(theta0=0.0, omega0=omega)

    records = {
        name: [] for name in (
            "t", "x", "i_dq", "d", "z", "theta", "omega", "theta_hat", "omega_hat", "i_sink", "i_dc", "v_ref", "residual",
        )
    }
    pending = list(quantized)
    stage_offsets = np.arange(2 * substeps + 1) * (dt / 2)

    for k in range(n):
        t_k = k * Ts
        while pending and pending[0].time <= t_k + 1e-12:
            event = pending.pop(0)
            if event.action == "step_v_ref":
                v_ref += event.value
            elif event.action == "grid_frequency":
                omega = 2 * np.pi * event.value
            logger.debug("t=%.5f s: %s %g", t_k, event.action, event.value)

        x = y[:4]
        e_abc = grid_voltage(theta, p.E_rms)
        measured = x + rng.normal(0.0, scenario.noise_std, 4) if scenario.noise_std > 0 else x
        d = np.asarray(controller.step(measured.copy(), e_abc, theta, v_ref), dtype=float)
        observed = controller.observe()
        i_sink = load(t_k)

        records["t"].append(t_k)
        records["x"].append(x.copy())
        records["i_dq"].append(park(x[:3], theta))
        records["d"].append(d.copy())
        records["z"].append(np.asarray(observed["z"], dtype=float).copy())
        records["theta"].append(theta)
        records["omega"].append(omega)
        records["theta_hat"].append(observed["theta_hat"])
        records["omega_hat"].append(observed["omega_hat"])
        records["i_sink"].append(i_sink)
        records["i_dc"].append(i_sink + x[3] / p.R_L)
        records["v_ref"].append(v_ref)

        energy_before = stored_energy(y, p)
        integral_before = y[4]
        e_stage = grid_voltage(theta + omega * stage_offsets, p.E_rms).T
        y = _advance_plant(y, d, e_stage, load(t_k + stage_offsets), dt, p)
        theta = float(np.mod(theta + omega * Ts, 2 * np.pi))

        if not np.all(np.isfinite(y)):
            raise SimulationError(f"non-finite plant state at t={t_k + Ts:.6f} s", k)
        change = (stored_energy(y, p) - energy_before) - (y[4] - integral_before)
        records["residual"].append(abs(change) / max(energy_before, stored_energy(y, p), 1e-12))

    states = np.array(records["x"]).reshape(-1, 4)
    trace = SimulationTrace(
        scenario=scenario.name,
        controller=scenario.controller,
        omega=p.omega,
        Ts=Ts,
        t=np.array(records["t"], dtype=float),
        i_abc=states[:, :3],
        v_dc=states[:, 3],
        i_dq=np.array(records["i_dq"]).reshape(-1, 2),
        d_abc=np.array(records["d"]).reshape(-1, 3),
        z=np.array(records["z"]) if n else np.zeros((0, 0)),
        theta=np.array(records["theta"], dtype=float),
        grid_omega=np.array(records["omega"], dtype=float),
        theta_hat=np.array(records["theta_hat"], dtype=float),
        omega_hat=np.array(records["omega_hat"], dtype=float),
        i_sink=np.array(records["i_sink"], dtype=float),
        i_dc=np.array(records["i_dc"], dtype=float),
        v_ref=np.array(records["v_ref"], dtype=float),
        energy_residual=np.array(records["residual"], dtype=float),
        meta={"final_state": y[:4].tolist(), "saturated_steps": _saturated_steps(controller)},
    )
    logger.debug("%s/%s: %d steps, max energy residual %.2e", scenario.name, scenario.controller, n,
                 float(np.max(trace.energy_residual, initial=0.0)))
    return trace


def _saturated_steps(controller) -> int:
    state = getattr(controller, "state", None)
    return int(getattr(state, "saturated_steps", 0))


def run_continuous(
    artifact: ControllerArtifact,
    x0: np.ndarray,
    z0: np.ndarray,
    duration: float,
    dt: float = 1e-6,
    theta0: float = 0.0,
    sample_every: int = 10,
) -> dict:
    """Continuous-time forwarding loop on the nominal plant, RK4 on [x, z].

    Uses the unsaturated law with the true grid angle and a constant load at
    the operating point; returns sampled t, x, z and the Lyapunov value V.
    """
    p, sp = artifact.params, artifact.setpoint
    omega = p.omega
    q = artifact.bank_size

    def rhs(t, state):
        theta = theta0 + omega * t
        x, z = state[:4], state[4:]
        duty, z_dot = control_forwarding(x, z, theta, artifact)
        d = duty.d_abc
        e = grid_voltage(theta, p.E_rms)
        out = np.empty(4 + q)
        out[:3] = (-p.r * x[:3] - (C33 @ d) * x[3] - e) / p.L
        out[3] = (d @ x[:3] - sp.i_dc) / p.C
        out[4:] = z_dot
        return out

    state = np.concatenate([np.asarray(x0, dtype=float), np.asarray(z0, dtype=float)])
    n = int(round(duration / dt))
    samples = {"t": [], "x": [], "z": [], "V": []}
    for k in range(n + 1):
        t = k * dt
        if k % sample_every == 0 or k == n:
            theta = theta0 + omega * t
            samples["t"].append(t)
            samples["x"].append(state[:4].copy())
            samples["z"].append(state[4:].copy())
            samples["V"].append(lyapunov_value(state[:4], state[4:], theta, artifact))
        if k == n:
            break
        k1 = rhs(t, state)
        k2 = rhs(t + dt / 2, state + dt / 2 * k1)
        k3 = rhs(t + dt / 2, state + dt / 2 * k2)
        k4 = rhs(t + dt, state + dt * k3)
        state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise SimulationError("non-finite state in continuous run", k)
    return {key: np.array(value) for key, value in samples.items()}


def settling_time(trace: SimulationTrace, after: float, band: float = 1.0) -> float:
    """Time from `after` until |v_dc - v_ref| stays within band; NaN if it never settles."""
    mask = trace.t >= after
    if not mask.any():
        return float("nan")
    t = trace.t[mask]
    outside = np.abs(trace.v_dc[mask] - trace.v_ref[mask]) > band
    if not outside.any():
        return 0.0
    last = int(np.nonzero(outside)[0][-1])
    if last == t.size - 1:
        return float("nan")
    return float(t[last + 1] - after)


def summarize(trace: SimulationTrace) -> dict:
    """Steady-state metrics over the last fundamental period of the trace."""
    if len(trace) == 0:
        return {"steps": 0}
    window = max(1, int(round(2 * np.pi / trace.omega / trace.Ts)))
    tail = slice(-window, None)
    fundamental = trace.phasor_magnitude("i_a", 1)[-1]
    summary = {
        "steps": len(trace),
        "v_dc_mean": float(np.mean(trace.v_dc[tail])),
        "v_dc_error": float(np.mean(trace.v_dc[tail] - trace.v_ref[tail])),
        "i_q_mean": float(np.mean(trace.i_dq[tail, 1])),
        "i_d_mean": float(np.mean(trace.i_dq[tail, 0])),
        "thd_ia": float(trace.thd_ia[-1]),
        "hc_vdc": float(trace.hc_vdc[-1]),
        "ia2_ratio": float(trace.phasor_magnitude("i_a", 2)[-1] / fundamental),
        "ia4_ratio": float(trace.phasor_magnitude("i_a", 4)[-1] / fundamental),
        "max_energy_residual": float(np.max(trace.energy_residual)),
        "saturated_steps": int(trace.meta.get("saturated_steps", 0)),
    }
    for k in (3, 6):
        amplitude = 2 * np.hypot(trace.phasor_magnitude("i_d", k)[-1], trace.phasor_magnitude("i_q", k)[-1])
        summary[f"i_dq{k}"] = float(amplitude)
        summary[f"i_dq{k}_ratio"] = float(amplitude / max(abs(summary["i_d_mean"]), 1e-12))
    return summary


def trace_to_frame(trace: SimulationTrace) -> pd.DataFrame:
    """One row per control step with the TRACE_COLUMNS schema."""
    frame = pd.DataFrame({
        "t": trace.t,
        "i_a": trace.i_abc[:, 0],
        "i_b": trace.i_abc[:, 1],
        "i_c": trace.i_abc[:, 2],
        "v_dc": trace.v_dc,
        "i_d": trace.i_dq[:, 0],
        "i_q": trace.i_dq[:, 1],
        "d_a": trace.d_abc[:, 0],
        "d_b": trace.d_abc[:, 1],
        "d_c": trace.d_abc[:, 2],
        "theta_hat": trace.theta_hat,
        "omega_hat": trace.omega_hat,
        "i_sink": trace.i_sink,
        "i_dc": trace.i_dc,
        "thd_ia": trace.thd_ia,
        "hc_vdc": trace.hc_vdc,
    })
    return frame[list(TRACE_COLUMNS)]


def write_trace_csv(trace: SimulationTrace, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_to_frame(trace).to_csv(path, index=False, na_rep="")
    return path


def read_trace_csv(path: Path) -> pd.DataFrame:
    """Load a trace CSV, checking the column schema."""
    frame = pd.read_csv(path)
    if tuple(frame.columns) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected trace columns {list(frame.columns)}")
    return frame


def analyze_frame(frame: pd.DataFrame, f: float = 50.0) -> dict:
    """Recompute metrics from a trace CSV (the `analyze` command)."""
    t = frame["t"].to_numpy()
    if t.size < 2:
        return {"steps": int(t.size)}
    omega = 2 * np.pi * f
    window = max(1, int(round(1.0 / f / (t[1] - t[0]))))
    thd = thd_series(frame["i_a"].to_numpy(), t, omega)
    hc = hc_series(frame["v_dc"].to_numpy(), t, omega)
    return {
        "steps": int(t.size),
        "v_dc_mean": float(frame["v_dc"].tail(window).mean()),
        "i_q_mean": float(frame["i_q"].tail(window).mean()),
        "thd_ia": float(thd[-1]),
        "hc_vdc": float(hc[-1]),
    }
