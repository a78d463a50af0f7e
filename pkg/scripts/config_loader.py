#!/usr/bin/env python3
# ABOUTME: YAML loading and validation of converter parameters, scenarios and tuning overrides
# ABOUTME: Everything is checked up front so commands fail before any computation starts

from dataclasses import dataclass, replace
from pathlib import Path
import logging

import yaml

from baseline_pi import PiCascadeConfig
from controller import Tuning
from converter_model import ConverterParams
from simulation import CONTROLLER_NAMES, Scenario

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
DEFAULT_PARAMS_PATH = CONFIG_DIR / "params.yaml"
DEFAULT_SCENARIOS_PATH = CONFIG_DIR / "scenarios.yaml"

REQUIRED_PARAM_KEYS = ("r", "L", "C", "R_L", "E_rms", "f", "v_dc_ref")
# r = 0 and E_rms = 0 are valid analysis cases
NON_NEGATIVE_PARAM_KEYS = ("r", "E_rms", "i_sink")

TUNING_TYPES = {
    "alpha": float,
    "h_keep": int,
    "h_extra": int,
    "max_order": int,
    "tol": float,
    "ell": list,
    "h1": float,
    "alpha_prime": float,
    "integrator_gain": str,
    "sixth_output": str,
    "h_trunc": int,
    "sample_gain": float,
    "reference_units": bool,
}

PI_TYPES = {
    "K_P_i": float,
    "K_I_i": float,
    "K_P_v": float,
    "K_I_v": float,
    "omega_cons": float,
    "notch_enabled": bool,
    "notch_omega": float,
    "notch_zeta": float,
    "derivative_pole_factor": float,
}


class ConfigError(Exception):
    """Invalid or incomplete configuration."""

    pass


def load_yaml(path: Path) -> dict:
    """Parse a YAML mapping; missing files and non-mapping documents are ConfigErrors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return data


def _number(value, key: str, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: '{key}' must be a number, got {value!r}")
    return float(value)


def params_from_dict(data: dict, where: str = "params") -> ConverterParams:
    """ConverterParams from a mapping; the error names the offending key."""
    unknown = set(data) - set(REQUIRED_PARAM_KEYS) - {"i_sink"}
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(sorted(unknown))}")
    values = {}
    for key in REQUIRED_PARAM_KEYS:
        if key not in data:
            raise ConfigError(f"{where}: missing required key '{key}'")
    for key, raw in data.items():
        value = _number(raw, key, where)
        if key in NON_NEGATIVE_PARAM_KEYS:
            if value < 0:
                raise ConfigError(f"{where}: '{key}' must be non-negative, got {value:g}")
        elif not value > 0:
            raise ConfigError(f"{where}: '{key}' must be strictly positive, got {value:g}")
        values[key] = value
    return ConverterParams(**values)


def load_params(path: Path = DEFAULT_PARAMS_PATH) -> ConverterParams:
    """Converter parameters from a params YAML file (top level or under 'params:')."""
    data = load_yaml(path)
    if "params" in data and isinstance(data["params"], dict):
        data = data["params"]
    return params_from_dict(data, where=str(path))


def tuning_from_dict(data: dict | None, base: Tuning | None = None) -> Tuning:
    """Apply type-checked synthesis overrides on top of base (default Tuning())."""
    base = base or Tuning()
    if not data:
        return base
    overrides = {}
    for key, value in data.items():
        if key not in TUNING_TYPES:
            raise ConfigError(f"synthesis: unknown tuning key '{key}'; valid: {', '.join(TUNING_TYPES)}")
        expected = TUNING_TYPES[key]
        if value is None and key in ("h1", "alpha_prime", "sample_gain"):
            overrides[key] = None
        elif expected is float:
            overrides[key] = _number(value, key, "synthesis")
        elif expected is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"synthesis: '{key}' must be an integer, got {value!r}")
            overrides[key] = value
        elif expected is list:
            if not isinstance(value, list) or len(value) != 5:
                raise ConfigError(f"synthesis: '{key}' must be a list of five numbers")
            overrides[key] = tuple(_number(v, key, "synthesis") for v in value)
        elif not isinstance(value, expected):
            raise ConfigError(f"synthesis: '{key}' must be a {expected.__name__}, got {value!r}")
        else:
            overrides[key] = value
    try:
        return replace(base, **overrides)
    except ValueError as e:
        raise ConfigError(f"synthesis: {e}") from e


def pi_config_from_dict(data: dict | None, params: ConverterParams) -> PiCascadeConfig:
    """Bench PI tuning with type-checked overrides from a baseline_pi section."""
    overrides = {}
    for key, value in (data or {}).items():
        if key not in PI_TYPES:
            raise ConfigError(f"baseline_pi: unknown key '{key}'; valid: {', '.join(PI_TYPES)}")
        if PI_TYPES[key] is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"baseline_pi: '{key}' must be true or false")
            overrides[key] = value
        else:
            overrides[key] = _number(value, key, "baseline_pi")
    try:
        return PiCascadeConfig.default(params, **overrides)
    except ValueError as e:
        raise ConfigError(f"baseline_pi: {e}") from e


def scenarios_from_dict(data: dict, where: str = "scenarios") -> dict[str, Scenario]:
    """Named scenarios from the 'scenarios:' mapping."""
    section = data.get("scenarios")
    if not isinstance(section, dict) or not section:
        raise ConfigError(f"{where}: missing or empty 'scenarios' section")
    scenarios = {}
    for name, body in section.items():
        if not isinstance(body, dict):
            raise ConfigError(f"{where}: scenario '{name}' must be a mapping")
        try:
            scenarios[name] = Scenario.from_dict(name, body)
        except KeyError as e:
            raise ConfigError(f"{where}: scenario '{name}' is missing key {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}: scenario '{name}': {e}") from e
    return scenarios


def load_scenarios(path: Path = DEFAULT_SCENARIOS_PATH) -> tuple[dict[str, Scenario], Tuning, dict]:
    """(scenarios, synthesis tuning, baseline_pi overrides) from a scenarios file."""
    data = load_yaml(path)
    scenarios = scenarios_from_dict(data, where=str(path))
    tuning = tuning_from_dict(data.get("synthesis"))
    pi_overrides = data.get("baseline_pi") or {}
    if not isinstance(pi_overrides, dict):
        raise ConfigError(f"{path}: 'baseline_pi' must be a mapping")
    return scenarios, tuning, pi_overrides


def parse_controllers(value: str | None) -> tuple[str, ...]:
    """Comma-separated controller names, each checked against the known designs."""
    if not value:
        return ()
    names = tuple(name.strip() for name in value.split(",") if name.strip())
    for name in names:
        if name not in CONTROLLER_NAMES:
            raise ConfigError(f"unknown controller '{name}'; valid: {', '.join(CONTROLLER_NAMES)}")
    return names


@dataclass(frozen=True)
class RunConfig:
    """Fully loaded and validated inputs of one CLI command."""

    params: ConverterParams
    scenarios: dict[str, Scenario]
    tuning: Tuning
    pi_config: PiCascadeConfig
    out_dir: Path
    scenario_name: str | None = None
    controllers: tuple[str, ...] = ()
    seed: int | None = None
    params_path: Path = DEFAULT_PARAMS_PATH
    scenarios_path: Path = DEFAULT_SCENARIOS_PATH
    use_cache: bool = True
    cache_db: Path | None = None
    concurrency: int = 4

    @property
    def scenario(self) -> Scenario:
        """The selected scenario with the seed and controller overrides applied."""
        if self.scenario_name is None:
            raise ConfigError("no scenario selected")
        scenario = self.scenarios[self.scenario_name]
        if self.seed is not None:
            scenario = replace(scenario, seed=self.seed)
        if self.controllers:
            scenario = replace(scenario, controller=self.controllers[0])
        return scenario

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "params_path": str(self.params_path),
            "scenarios_path": str(self.scenarios_path),
            "scenario": self.scenario_name,
            "controllers": list(self.controllers),
            "seed": self.seed,
            "tuning": self.tuning.to_dict(),
            "out_dir": str(self.out_dir),
        }


def load_run_config(
    params_path: Path | None = None,
    scenarios_path: Path | None = None,
    scenario: str | None = None,
    controllers: str | None = None,
    out_dir: Path = Path("out"),
    seed: int | None = None,
    order: int | None = None,
    use_cache: bool = True,
    cache_db: Path | None = None,
    concurrency: int = 4,
    require_scenario: bool = False,
) -> RunConfig:
    """Load params, scenarios and overrides and check every reference.

    Raises:
        ConfigError: On any missing file, unknown name or mistyped value
    """
    params_path = Path(params_path) if params_path else DEFAULT_PARAMS_PATH
    scenarios_path = Path(scenarios_path) if scenarios_path else DEFAULT_SCENARIOS_PATH
    params = load_params(params_path)
    scenarios, tuning, pi_overrides = load_scenarios(scenarios_path)
    pi_config = pi_config_from_dict(pi_overrides, params)

    if require_scenario and scenario is None:
        raise ConfigError("a scenario name is required (--scenario)")
    if scenario is not None and scenario not in scenarios:
        raise ConfigError(f"unknown scenario '{scenario}'; valid: {', '.join(scenarios)}")
    names = parse_controllers(controllers)
    if order is not None:
        if order < 1:
            raise ConfigError(f"--order must be at least 1, got {order}")
        tuning = tuning_from_dict({"h_keep": order}, tuning)
    if seed is not None and seed < 0:
        raise ConfigError(f"--seed must be non-negative, got {seed}")
    if concurrency < 1:
        raise ConfigError(f"--concurrency must be at least 1, got {concurrency}")

    logger.debug("loaded %d scenarios from %s", len(scenarios), scenarios_path)
    return RunConfig(
        params=params,
        scenarios=scenarios,
        tuning=tuning,
        pi_config=pi_config,
        out_dir=Path(out_dir),
        scenario_name=scenario,
        controllers=names,
        seed=seed,
        params_path=params_path,
        scenarios_path=scenarios_path,
        use_cache=use_cache,
        cache_db=Path(cache_db) if cache_db else None,
        concurrency=concurrency,
    )
