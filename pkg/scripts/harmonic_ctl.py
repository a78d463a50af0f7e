#!/usr/bin/env python3
# ABOUTME: Command line front door: synthesize, simulate, spectrum, compare, analyze, robustness
# ABOUTME: Usage: uv run scripts/harmonic_ctl.py simulate --scenario fig4 --controller d3 --out out/

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import pandas as pd

from artifact_cache import CACHE_DB_PATH, get_cache_key, lookup_artifact, save_artifact
from batch_runner import run_batch_sync
from config_loader import ConfigError, RunConfig, load_run_config
from controller import ControllerArtifact, closed_loop_matrix, synthesize
from converter_model import ConverterParams, compute_setpoint, error_dynamics_matrix, perturb_params
from harmonic_core import NumericalError
from harmonic_solvers import closed_loop_spectrum, harmonic_operator
from report import render_comparison, render_synthesis_report
from simulation import (
    CONTROLLER_NAMES,
    HARMONIC_CONTROLLERS,
    Scenario,
    SimulationError,
    analyze_frame,
    build_controller,
    read_trace_csv,
    run,
    settling_time,
    summarize,
    write_trace_csv,
)

logger = logging.getLogger("harmonic_ctl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SPECTRUM_COLUMNS = ["re", "im", "damping", "boundary_flag"]
ROBUSTNESS_FACTORS = (0.6, 1.4)
ROBUSTNESS_FIELDS = ("r", "L", "C")
ROBUSTNESS_TOLERANCE = 0.02


def progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def get_artifact(name: str, config: RunConfig, model_params: ConverterParams | None = None) -> ControllerArtifact:
    """Synthesized artifact for a harmonic design, through the cache unless disabled."""
    integral, objectives = HARMONIC_CONTROLLERS[name]
    p = model_params or config.params
    db = config.cache_db or CACHE_DB_PATH
    key = get_cache_key(p, objectives, integral, config.tuning)
    if config.use_cache:
        cached = lookup_artifact(key, db)
        if cached is not None:
            logger.debug("cache hit for %s (%s)", name, key[:12])
            return cached
    artifact = synthesize(p, objectives, config.tuning, integral=integral)
    if config.use_cache:
        save_artifact(key, artifact, db)
    return artifact


def simulate_one(
    scenario: Scenario,
    config: RunConfig,
    controller_name: str,
    plant_params: ConverterParams | None = None,
    model_params: ConverterParams | None = None,
):
    """Run one scenario with one controller; returns (trace, summary).

    model_params is what the controller is designed on, plant_params what is simulated.
    """
    scenario = replace(scenario, controller=controller_name)
    plant = plant_params or config.params
    model = model_params or config.params
    artifact = get_artifact(controller_name, config, model) if controller_name in HARMONIC_CONTROLLERS else None
    controller = build_controller(
        controller_name,
        model,
        scenario.Ts,
        use_pll=scenario.pll,
        artifact=artifact,
        pi_config=config.pi_config,
        initial=scenario.initial,
    )
    trace = run(scenario, plant, controller)
    summary = summarize(trace)
    summary["controller"] = controller_name
    summary["scenario"] = scenario.name
    steps = [e.time for e in scenario.events if e.action in ("step_i_sink", "step_v_ref")]
    summary["settling_time"] = settling_time(trace, steps[0]) if steps and len(trace) else None
    return trace, summary


def _write_json(data: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=str))
    return path


def _controllers(config: RunConfig, default: tuple[str, ...]) -> tuple[str, ...]:
    return config.controllers or default


def cmd_synthesize(config: RunConfig) -> int:
    """Write artifact_<controller>.json and its HTML report for each selected design."""
    names = _controllers(config, ("d3",))
    for name in names:
        if name not in HARMONIC_CONTROLLERS:
            raise ConfigError(f"'{name}' is not a harmonic design; valid: {', '.join(HARMONIC_CONTROLLERS)}")
    for name in names:
        progress(f"🔧 Synthesizing {name}...")
        artifact = get_artifact(name, config)
        report = artifact.report
        progress(
            f"   H1={report['H1']:.4g} alpha'={report['alpha_prime'] or 0:.4g} "
            f"bank={artifact.bank_size} min damping={report['min_damping']:.3g}"
            + (" (cached)" if report.get("from_cache") else f" in {report['wall_time']:.2f} s")
        )
        diagnosis = report.get("tuning_diagnosis", {})
        if diagnosis.get("within_tolerance") is False:
            progress(f"⚠️  {diagnosis.get('explanation', '')}")
        artifact_path = _write_json(artifact.to_dict(), config.out_dir / f"artifact_{name}.json")
        print(artifact_path)
        render_synthesis_report(artifact, config.out_dir / f"synthesis_{name}.html")
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    """Write trace_<scenario>_<controller>.csv and the matching summary JSON."""
    scenario = config.scenario
    if scenario.controller not in CONTROLLER_NAMES:
        raise ConfigError(f"unknown controller '{scenario.controller}'; valid: {', '.join(CONTROLLER_NAMES)}")
    progress(f"▶️  Simulating {scenario.name} with {scenario.controller} ({scenario.n_steps:,} control steps)...")
    trace, summary = simulate_one(scenario, config, scenario.controller)
    stem = f"{scenario.name}_{scenario.controller}"
    trace_path = write_trace_csv(trace, config.out_dir / f"trace_{stem}.csv")
    summary_path = _write_json(summary, config.out_dir / f"summary_{stem}.json")
    if summary.get("steps"):
        progress(
            f"📊 v_dc mean {summary['v_dc_mean']:.2f} V (error {summary['v_dc_error']:+.3f} V), "
            f"THD(i_a) {100 * summary['thd_ia']:.2f} %, i_q mean {summary['i_q_mean']:+.3f} A"
        )
    else:
        progress("📊 Empty trace (zero duration)")
    print(trace_path)
    print(summary_path)
    return EXIT_OK


def cmd_spectrum(config: RunConfig) -> int:
    """Eigenvalues of the open loop (no --controller) or the stabilized loop of a design."""
    h = config.tuning.h_keep
    if config.controllers:
        name = config.controllers[0]
        if name not in HARMONIC_CONTROLLERS:
            raise ConfigError(f"spectrum needs a harmonic design; valid: {', '.join(HARMONIC_CONTROLLERS)}")
        matrix = closed_loop_matrix(get_artifact(name, config))
    else:
        name = "open"
        matrix = error_dynamics_matrix(config.params, compute_setpoint(config.params))
    progress(f"🔎 Spectrum of the {name} loop at order {h}...")
    spectrum = closed_loop_spectrum(harmonic_operator(matrix, h), config.params.omega)
    frame = pd.DataFrame({
        "re": spectrum.eigenvalues.real,
        "im": spectrum.eigenvalues.imag,
        "damping": spectrum.damping,
        "boundary_flag": spectrum.boundary_flag.astype(int),
    }, columns=SPECTRUM_COLUMNS)
    path = config.out_dir / f"spectrum_{name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    progress(
        f"📊 {len(frame)} eigenvalues, max real part {spectrum.max_real:.4g}, "
        f"{int(spectrum.boundary_flag.sum())} flagged as truncation-sensitive"
    )
    if spectrum.missing:
        progress(
            f"⚠️  {spectrum.missing} of {spectrum.expected} strip eigenvalues missing at order {h}; "
            "raise --order to capture them"
        )
    print(path)
    return EXIT_OK


def _run_jobs(config: RunConfig, jobs: list, label: str) -> list[dict]:
    """Run simulate_one jobs concurrently; failures become rows carrying the error."""

    def on_progress(completed: int, total: int, metadata: dict) -> None:
        progress(f"   [{completed}/{total}] {metadata['label']} done")

    progress(f"🏁 Running {len(jobs)} {label} with concurrency {config.concurrency}...")
    results = run_batch_sync(jobs, max_concurrent=config.concurrency, progress_callback=on_progress)
    rows = []
    for result, metadata, error in results:
        if error is not None:
            if not isinstance(error, (NumericalError, ValueError)):
                raise error
            progress(f"❌ {metadata['label']}: {error}")
            rows.append({"controller": metadata["label"], "error": str(error)})
        else:
            _, summary = result
            rows.append({**summary, "controller": metadata["label"]})
    if rows and all("error" in row for row in rows):
        first = next(error for _, _, error in results if error is not None)
        if isinstance(first, NumericalError):
            raise first
    return rows


def _write_table(rows: list[dict], stem: str, scenario: Scenario, config: RunConfig) -> None:
    csv_path = config.out_dir / f"{stem}.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(csv_path, index=False, na_rep="")
    json_path = _write_json({"scenario": scenario.name, "results": rows}, config.out_dir / f"{stem}.json")
    print(csv_path)
    print(json_path)
    render_comparison(rows, scenario.name, config.out_dir / f"{stem}.html")


def cmd_compare(config: RunConfig) -> int:
    """Side-by-side steady-state metrics of several controllers on one scenario."""
    scenario = config.scenario
    names = _controllers(config, ("d3", "pi_notch"))
    jobs = [
        ((simulate_one, {"scenario": scenario, "config": config, "controller_name": name}), {"label": name})
        for name in names
    ]
    rows = _run_jobs(config, jobs, f"{scenario.name} runs")
    _write_table(rows, f"comparison_{scenario.name}", scenario, config)
    return EXIT_OK


def cmd_robustness(config: RunConfig) -> int:
    """Re-synthesize on r, L, C scaled by 0.6 and 1.4 and simulate against the nominal plant."""
    scenario = config.scenario
    name = _controllers(config, ("d3",))[0]
    if name not in HARMONIC_CONTROLLERS:
        raise ConfigError(f"robustness needs a harmonic design; valid: {', '.join(HARMONIC_CONTROLLERS)}")
    jobs = []
    for field_name in ROBUSTNESS_FIELDS:
        for factor in ROBUSTNESS_FACTORS:
            model = perturb_params(config.params, {field_name: factor})
            kwargs = {
                "scenario": scenario,
                "config": config,
                "controller_name": name,
                "plant_params": config.params,
                "model_params": model,
            }
            jobs.append(((simulate_one, kwargs), {"label": f"{name} {field_name}x{factor:g}"}))
    rows = _run_jobs(config, jobs, "mismatch runs")
    for row in rows:
        if "error" in row:
            row["passed"] = False
            continue
        relative = abs(row["v_dc_error"]) / config.params.v_dc_ref
        row["v_dc_error_relative"] = relative
        row["passed"] = bool(relative < ROBUSTNESS_TOLERANCE)
    passed = sum(1 for row in rows if row["passed"])
    progress(f"{'✅' if passed == len(rows) else '⚠️ '} {passed}/{len(rows)} mismatch cases within {100 * ROBUSTNESS_TOLERANCE:g} % v_dc error")
    _write_table(rows, f"robustness_{scenario.name}", scenario, config)
    return EXIT_OK


def cmd_analyze(config: RunConfig, trace_path: Path) -> int:
    """Recompute steady-state metrics from a trace CSV and print them as JSON."""
    if not trace_path.exists():
        raise ConfigError(f"trace file not found: {trace_path}")
    try:
        frame = read_trace_csv(trace_path)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    result = analyze_frame(frame, config.params.f)
    result["trace"] = str(trace_path)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def write_failure_report(error: Exception, command: str, config: RunConfig | None, out_dir: Path) -> Path:
    """failure_report.json describing a numerical failure."""
    report = {
        "command": command,
        "error_type": type(error).__name__,
        "message": str(error),
        "failed_at": datetime.now().isoformat(),
    }
    if isinstance(error, SimulationError):
        report["record_index"] = error.index
    if config is not None:
        report["config"] = config.to_dict()
    return _write_json(report, out_dir / "failure_report.json")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", type=Path, help="Converter parameter YAML (default: config/params.yaml)")
    common.add_argument("--scenarios", type=Path, help="Scenario YAML (default: config/scenarios.yaml)")
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory (default: out/)")
    common.add_argument("--order", type=int, help="Harmonic truncation order used for synthesis and spectra")
    common.add_argument("--seed", type=int, help="Seed of the measurement noise generator")
    common.add_argument("--no-cache", action="store_true", help="Always re-synthesize")
    common.add_argument("--cache-db", type=Path, help=f"Artifact cache (default: {CACHE_DB_PATH})")
    common.add_argument("--concurrency", type=int, default=4, help="Parallel runs for compare/robustness")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging on stderr")

    parser = argparse.ArgumentParser(
        description="Harmonic forwarding control of a three-phase AC/DC converter",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synthesize", parents=[common], help="Synthesize controller artifacts")
    synth.add_argument("--controller", help="Comma-separated harmonic designs (default: d3)")

    sim = commands.add_parser("simulate", parents=[common], help="Run one scenario")
    sim.add_argument("--scenario", default="fig4", help="Scenario name (default: fig4)")
    sim.add_argument("--controller", help="Override the scenario's controller")

    spectrum_cmd = commands.add_parser("spectrum", parents=[common], help="Eigenvalue CSV of the open or stabilized loop")
    spectrum_cmd.add_argument("--controller", help="Harmonic design; omit for the open loop")

    comp = commands.add_parser("compare", parents=[common], help="Compare controllers on one scenario")
    comp.add_argument("--scenario", default="harmonic-injection", help="Scenario name (default: harmonic-injection)")
    comp.add_argument("--controller", help="Comma-separated controllers (default: d3,pi_notch)")

    robust = commands.add_parser("robustness", parents=[common], help="Model/plant mismatch study")
    robust.add_argument("--scenario", default="step", help="Scenario name (default: step)")
    robust.add_argument("--controller", help="Harmonic design (default: d3)")

    analyze = commands.add_parser("analyze", parents=[common], help="Metrics of a trace CSV")
    analyze.add_argument("trace", type=Path, help="Trace CSV written by simulate")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    config = None
    try:
        config = load_run_config(
            params_path=args.params,
            scenarios_path=args.scenarios,
            scenario=getattr(args, "scenario", None),
            controllers=getattr(args, "controller", None),
            out_dir=args.out,
            seed=args.seed,
            order=args.order,
            use_cache=not args.no_cache,
            cache_db=args.cache_db,
            concurrency=args.concurrency,
        )
        if args.command == "synthesize":
            return cmd_synthesize(config)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "spectrum":
            return cmd_spectrum(config)
        if args.command == "compare":
            return cmd_compare(config)
        if args.command == "robustness":
            return cmd_robustness(config)
        return cmd_analyze(config, args.trace)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        path = write_failure_report(e, args.command, config, args.out)
        print(f"❌ Numerical failure: {e}", file=sys.stderr)
        print(f"   Details in {path}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
